#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tagseg/image_io.hpp"

namespace tagseg {

enum class Split { kAttentionTrain, kFinetunePool, kEval };

const char* split_name(Split split);
std::optional<Split> split_from_name(const std::string& name);

struct ManifestRecord {
  std::string image_path;  // relative to the manifest directory
  int tag = 0;             // noisy class label, 1..K
  Split split = Split::kAttentionTrain;
  std::string truth_path;  // optional; evaluation-only
};

// What training-path operations are allowed to see: no truth reference.
struct TrainRecord {
  std::string image_path;
  int tag = 0;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::vector<TrainRecord> train_view(Split split) const;
  std::vector<ManifestRecord> split_records(Split split) const;
  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

// Tab-separated, one record per line, version-tagged first line.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// In-memory split: records plus decoded-on-demand images, index-aligned.
struct SplitData {
  std::vector<TrainRecord> records;
  std::vector<io::StoredImage> images;

  FeatureMap image(std::size_t i) const { return images[i].decode(); }
  std::size_t size() const { return records.size(); }
};

// Loads every image of a split into memory (training view, no truths).
SplitData load_split(const DatasetManifest& manifest, Split split, int threads = 0);

}  // namespace tagseg
