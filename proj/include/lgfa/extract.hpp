#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lgfa/audio.hpp"
#include "lgfa/dataset.hpp"

namespace lgfa {

struct LabeledWav {
  std::filesystem::path wav_path;
  std::string utterance_id;
  std::string speaker;
  std::string label_name;
};

// CSV columns: file,speaker,label (header row required). File paths are
// resolved against wav_dir.
std::vector<LabeledWav> read_labels_csv(const std::filesystem::path& csv_path,
                                        const std::filesystem::path& wav_dir);

struct ExtractOptions {
  FrontendConfig frontend;
  bool skip_up_to_date = true;
};

struct ExtractOutcome {
  DatasetManifest manifest;
  std::filesystem::path manifest_path;
  int files_written = 0;
  int files_skipped = 0;
  std::vector<std::string> failures;  // one message per failed input
};

// Extracts features for every input into out_dir (one .lgfa file plus one
// .json sidecar per feature block) and writes manifest.jsonl. Existing
// outputs newer than their wav are kept; the manifest is rewritten only when
// its content changes. Per-file failures are collected, not fatal.
ExtractOutcome extract_corpus(const std::vector<LabeledWav>& inputs,
                              const std::filesystem::path& out_dir, const ExtractOptions& opt);

}  // namespace lgfa
