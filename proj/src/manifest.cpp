#include "tagseg/manifest.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "tagseg/errors.hpp"
#include "tagseg/parallel.hpp"

namespace tagseg {

namespace {
constexpr const char* kManifestVersion = "tagseg-manifest\tv1";
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kAttentionTrain: return "attention-train";
    case Split::kFinetunePool: return "finetune-pool";
    case Split::kEval: return "eval";
  }
  return "?";
}

std::optional<Split> split_from_name(const std::string& name) {
  if (name == "attention-train") return Split::kAttentionTrain;
  if (name == "finetune-pool") return Split::kFinetunePool;
  if (name == "eval") return Split::kEval;
  return std::nullopt;
}

std::vector<TrainRecord> DatasetManifest::train_view(Split split) const {
  std::vector<TrainRecord> out;
  for (const auto& rec : records) {
    if (rec.split == split) {
      out.push_back(TrainRecord{rec.image_path, rec.tag});
    }
  }
  return out;
}

std::vector<ManifestRecord> DatasetManifest::split_records(Split split) const {
  std::vector<ManifestRecord> out;
  for (const auto& rec : records) {
    if (rec.split == split) {
      out.push_back(rec);
    }
  }
  return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open manifest " + path.string());
  }
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();

  std::string line;
  if (!std::getline(in, line) || line != kManifestVersion) {
    throw parse_error("manifest missing version line '" + std::string(kManifestVersion) + "'", 0);
  }
  std::unordered_map<std::string, int> seen_split;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) {
      fields.push_back(field);
    }
    if (fields.size() < 3 || fields.size() > 4) {
      throw parse_error("manifest line " + std::to_string(line_no) + ": need 3 or 4 fields", line_no);
    }
    ManifestRecord rec;
    rec.image_path = fields[0];
    try {
      rec.tag = std::stoi(fields[1]);
    } catch (const std::exception&) {
      throw parse_error("manifest line " + std::to_string(line_no) + ": bad tag", line_no);
    }
    if (rec.tag < 1) {
      throw parse_error("manifest line " + std::to_string(line_no) + ": tag must be >= 1", line_no);
    }
    const auto split = split_from_name(fields[2]);
    if (!split) {
      throw parse_error("manifest line " + std::to_string(line_no) + ": unknown split '" + fields[2] + "'",
                        line_no);
    }
    rec.split = *split;
    if (fields.size() == 4) {
      rec.truth_path = fields[3];
    }
    auto [it, inserted] = seen_split.emplace(rec.image_path, static_cast<int>(rec.split));
    if (!inserted && it->second != static_cast<int>(rec.split)) {
      throw parse_error("manifest line " + std::to_string(line_no) + ": image '" + rec.image_path +
                            "' appears in two splits",
                        line_no);
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write manifest " + path.string());
  }
  out << kManifestVersion << "\n";
  for (const auto& rec : manifest.records) {
    out << rec.image_path << '\t' << rec.tag << '\t' << split_name(rec.split);
    if (!rec.truth_path.empty()) {
      out << '\t' << rec.truth_path;
    }
    out << "\n";
  }
}

SplitData load_split(const DatasetManifest& manifest, Split split, int threads) {
  SplitData data;
  data.records = manifest.train_view(split);
  data.images.resize(data.records.size());
  parallel_for(data.records.size(), threads, [&](std::size_t i) {
    data.images[i] = io::load_stored(manifest.resolve(data.records[i].image_path));
  });
  return data;
}

}  // namespace tagseg
