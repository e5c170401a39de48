#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lgfa {

struct ManifestRecord {
  std::string utterance_id;
  std::string speaker_id;
  int label = -1;
  std::vector<std::string> feature_paths;  // relative to the manifest directory
};

// JSON-lines manifest: a header object carrying the class-name table, then
// one record object per utterance.
struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  // resolution root for relative feature paths

  std::vector<std::string> speakers() const;  // sorted, unique
  std::filesystem::path resolve(const std::string& feature_path) const;
  void validate() const;
};

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

// One cross-validation fold: all utterances of one speaker held out.
struct LosoFold {
  std::string test_speaker;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

// One fold per speaker, folds ordered by speaker id. Every record lands in
// exactly one test fold.
std::vector<LosoFold> loso_split(const DatasetManifest& manifest);

}  // namespace lgfa
