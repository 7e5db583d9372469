#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "tagseg/curation.hpp"
#include "tagseg/synth.hpp"

namespace tagseg {

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string data_dir;  // empty: synthesize a benchmark under out_dir/data
  std::string out_dir = "out";
  SynthSpec synth;

  double delta1 = 0.65;
  double delta2 = 0.5;
  double mu = 0.4;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  SegmentParams segments;

  TrainSchedule classifier_schedule;                          // defaults per TrainSchedule
  TrainSchedule segmenter_schedule;
  TrainSchedule finetune_schedule{0.002, 0.9, 16, 600, 0, 0};

  bool finetune_enabled = true;
  bool finetune_augment = false;  // fine-tune on T plus the initial pseudo set
  bool save_pseudo_masks = true;
  int threads = 0;
};

// Plain-text key = value file, '#' comments, version-tagged first line.
PipelineConfig load_config(const std::filesystem::path& path);
// Single key override (the CLI maps flags through this). Throws config_error
// on unknown keys or unparsable values.
void apply_config_entry(PipelineConfig& config, const std::string& key, const std::string& value);

struct PipelineResult {
  Network classifier;           // trained on the fully filtered data
  Network initial_segmenter;
  std::optional<Network> finetuned_segmenter;
  std::vector<CurationReport> cascade_reports;
  double input_purity = -1.0;
  double retained_purity = -1.0;
  std::size_t pseudo_count = 0;
  std::size_t finetune_set_size = 0;
  IouResult initial_eval;
  IouResult finetuned_eval;
  std::filesystem::path metrics_path;
};

// The whole system: filter cascade, attention pseudo ground truth, initial
// segmenter, gated fine-tuning set, fine-tuned segmenter, evaluation.
// Deterministic given the config; emits metrics, reports, checkpoints and
// pseudo masks under out_dir.
PipelineResult run_pipeline(const PipelineConfig& config);

// Purity of a record subset: fraction whose noisy tag matches the majority
// class of the truth mask. Evaluation-only (reads truth masks).
double tag_purity(const DatasetManifest& manifest, Split split,
                  const std::vector<std::size_t>* subset = nullptr);

}  // namespace tagseg
