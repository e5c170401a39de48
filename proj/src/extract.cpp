#include "lgfa/extract.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "lgfa/error.hpp"
#include "lgfa/features.hpp"

namespace lgfa {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  return fields;
}

bool up_to_date(const std::filesystem::path& out, const std::filesystem::path& src) {
  std::error_code ec;
  const auto out_time = std::filesystem::last_write_time(out, ec);
  if (ec) return false;
  const auto src_time = std::filesystem::last_write_time(src, ec);
  if (ec) return false;
  return out_time >= src_time;
}

}  // namespace

std::vector<LabeledWav> read_labels_csv(const std::filesystem::path& csv_path,
                                        const std::filesystem::path& wav_dir) {
  std::ifstream is(csv_path);
  if (!is) throw IoError("labels csv " + csv_path.string() + ": cannot open");
  std::vector<LabeledWav> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "file,speaker,label") {
        throw IoError("labels csv " + csv_path.string() +
                      ": expected header 'file,speaker,label', got '" + line + "'");
      }
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw IoError("labels csv " + csv_path.string() + ":" + std::to_string(line_no) +
                    ": expected 3 fields, got " + std::to_string(fields.size()));
    }
    LabeledWav w;
    w.wav_path = wav_dir / fields[0];
    w.utterance_id = std::filesystem::path(fields[0]).stem().string();
    w.speaker = fields[1];
    w.label_name = fields[2];
    out.push_back(std::move(w));
  }
  return out;
}

ExtractOutcome extract_corpus(const std::vector<LabeledWav>& inputs,
                              const std::filesystem::path& out_dir, const ExtractOptions& opt) {
  opt.frontend.validate();
  std::filesystem::create_directories(out_dir);

  // Class table: sorted unique label names.
  std::map<std::string, int> class_index;
  for (const auto& in : inputs) class_index.emplace(in.label_name, 0);
  {
    int next = 0;
    for (auto& [name, idx] : class_index) idx = next++;
  }

  ExtractOutcome outcome;
  for (const auto& [name, idx] : class_index) outcome.manifest.classes.push_back(name);
  outcome.manifest.base_dir = out_dir;
  outcome.manifest_path = out_dir / "manifest.jsonl";

  for (const auto& in : inputs) {
    try {
      const int label = class_index.at(in.label_name);
      std::vector<std::string> feature_names;

      // Consecutive pre-existing outputs newer than the wav are reused.
      if (opt.skip_up_to_date) {
        for (int k = 0;; ++k) {
          const std::string stem = in.utterance_id + "_s" + std::to_string(k);
          const auto feat = out_dir / (stem + ".lgfa");
          const auto side = out_dir / (stem + ".json");
          if (!std::filesystem::exists(feat) || !std::filesystem::exists(side) ||
              !up_to_date(feat, in.wav_path) || !up_to_date(side, in.wav_path)) {
            if (k == 0) feature_names.clear();
            break;
          }
          feature_names.push_back(stem + ".lgfa");
        }
      }

      if (!feature_names.empty()) {
        outcome.files_skipped += static_cast<int>(feature_names.size());
      } else {
        const AudioClip clip = read_wav(in.wav_path);
        const std::vector<Spectrogram> specs = log_mel(clip, opt.frontend, in.utterance_id);
        for (std::size_t k = 0; k < specs.size(); ++k) {
          const std::string stem = in.utterance_id + "_s" + std::to_string(k);
          write_feature_file(out_dir / (stem + ".lgfa"), specs[k]);
          write_sidecar(out_dir / (stem + ".json"),
                        FeatureSidecar{in.utterance_id, in.speaker, label});
          feature_names.push_back(stem + ".lgfa");
          ++outcome.files_written;
        }
      }

      ManifestRecord rec;
      rec.utterance_id = in.utterance_id;
      rec.speaker_id = in.speaker;
      rec.label = label;
      rec.feature_paths = std::move(feature_names);
      outcome.manifest.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      outcome.failures.push_back(in.wav_path.string() + ": " + e.what());
    }
  }

  // Rewrite the manifest only when its content changed.
  {
    std::ostringstream fresh;
    {
      const auto tmp = outcome.manifest_path.string() + ".tmp";
      save_manifest(tmp, outcome.manifest);
      std::ifstream is(tmp);
      fresh << is.rdbuf();
      std::filesystem::remove(tmp);
    }
    std::string existing;
    if (std::ifstream is(outcome.manifest_path); is) {
      std::ostringstream buf;
      buf << is.rdbuf();
      existing = buf.str();
    }
    if (existing != fresh.str()) {
      std::ofstream os(outcome.manifest_path);
      os << fresh.str();
      if (!os) throw IoError("manifest " + outcome.manifest_path.string() + ": write failed");
    }
  }
  return outcome;
}

}  // namespace lgfa
