#include "lgfa/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "lgfa/error.hpp"

namespace lgfa {

std::vector<std::string> DatasetManifest::speakers() const {
  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(r.speaker_id);
  return {unique.begin(), unique.end()};
}

std::filesystem::path DatasetManifest::resolve(const std::string& feature_path) const {
  std::filesystem::path p(feature_path);
  return p.is_absolute() ? p : base_dir / p;
}

void DatasetManifest::validate() const {
  if (records.empty()) throw ConfigError("manifest: no records");
  if (classes.empty()) throw ConfigError("manifest: missing class table");
  for (const auto& r : records) {
    if (r.label < 0 || r.label >= static_cast<int>(classes.size())) {
      throw ConfigError("manifest: utterance '" + r.utterance_id + "' has label " +
                        std::to_string(r.label) + " outside the class table");
    }
    if (r.feature_paths.empty()) {
      throw ConfigError("manifest: utterance '" + r.utterance_id + "' has no features");
    }
  }
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  if (!os) throw IoError("manifest " + path.string() + ": cannot open for writing");
  os << nlohmann::json{{"classes", manifest.classes}}.dump() << "\n";
  for (const auto& r : manifest.records) {
    os << nlohmann::json{{"utterance_id", r.utterance_id},
                         {"speaker_id", r.speaker_id},
                         {"label", r.label},
                         {"feature_paths", r.feature_paths}}
              .dump()
       << "\n";
  }
  if (!os) throw IoError("manifest " + path.string() + ": write failed");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest " + path.string() + ": cannot open");
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest " + path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      if (!j.contains("classes")) {
        throw IoError("manifest " + path.string() + ": first line must carry the class table");
      }
      m.classes = j.at("classes").get<std::vector<std::string>>();
      continue;
    }
    ManifestRecord r;
    r.utterance_id = j.at("utterance_id").get<std::string>();
    r.speaker_id = j.at("speaker_id").get<std::string>();
    r.label = j.at("label").get<int>();
    r.feature_paths = j.at("feature_paths").get<std::vector<std::string>>();
    m.records.push_back(std::move(r));
  }
  return m;
}

std::vector<LosoFold> loso_split(const DatasetManifest& manifest) {
  const std::vector<std::string> speakers = manifest.speakers();
  if (speakers.size() < 2) {
    throw ConfigError("loso: need at least 2 speakers, found " +
                      std::to_string(speakers.size()));
  }
  std::vector<LosoFold> folds;
  folds.reserve(speakers.size());
  for (const auto& spk : speakers) {
    LosoFold fold;
    fold.test_speaker = spk;
    for (int i = 0; i < static_cast<int>(manifest.records.size()); ++i) {
      (manifest.records[i].speaker_id == spk ? fold.test_indices : fold.train_indices)
          .push_back(i);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace lgfa
