#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagseg/manifest.hpp"
#include "tagseg/pseudolabel.hpp"
#include "tagseg/segments.hpp"
#include "tagseg/train.hpp"

namespace tagseg {

// The three noisy-tag filter rules, on a probability vector P (index k-1 for
// class k):
//   rule 1: drop when P(tag) <= 0.1
//   rule 2: drop when the tag is not among the top-3 classes
//   rule 3: drop when P(tag) <= 0.6
bool filter_rule_keeps(int rule, const std::vector<double>& probs, int tag);

struct FilterDecision {
  std::string image_path;
  int tag = 0;
  double p_tag = 0.0;
  int tag_rank = 0;  // 0 = most probable class
  bool kept = false;
};

struct CurationReport {
  std::string stage;
  int rule = 0;
  std::size_t input_count = 0;
  std::size_t kept_count = 0;
  std::size_t dropped_count = 0;
  std::vector<FilterDecision> decisions;
  double retained_purity = -1.0;  // filled by evaluation when truth exists
};

// Applies one rule to the active subset of a split; returns the surviving
// indices and the per-image report.
std::pair<std::vector<std::size_t>, CurationReport> filter_stage(
    const SplitData& data, const std::vector<std::size_t>& active, const Network& classifier,
    int rule, int threads = 0);

// Train -> rule 1 -> retrain -> rule 2 -> retrain -> rule 3. Every round
// reinitializes from the same seed and schedule; a stage that empties the
// manifest aborts with data_exhaustion_error.
struct CascadeResult {
  std::vector<std::size_t> kept;
  std::vector<std::vector<std::size_t>> kept_per_stage;
  std::vector<CurationReport> reports;
  Network classifier;  // third-round model
};
CascadeResult filter_cascade(const SplitData& data, int class_count,
                             const TrainSchedule& schedule, std::uint64_t seed);

// Mask of pixels where the tag channel beats every other channel (ties count
// as hits). Channel 0 is background; tag 0 is rejected.
LabelImage compute_mask(const FeatureMap& seg_probs, int tag);

// I .* M, the mask broadcast over channels.
FeatureMap apply_mask(const FeatureMap& image, const LabelImage& mask);

// Strict acceptance threshold of the fine-tuning gate.
inline bool gate_accepts(double p_tag_masked, double mu) { return p_tag_masked > mu; }

// Classifies the masked image and applies the strict threshold.
bool finetune_gate(const Network& classifier, const FeatureMap& image, const LabelImage& mask,
                   int tag, double mu);

struct FinetuneParams {
  double mu = 0.4;
  double delta1 = 0.65;
  double delta2 = 0.5;
  SegmentParams segments;
  std::uint64_t seed = 0;
  int threads = 0;
};

struct FinetuneDecision {
  std::string image_path;
  int tag = 0;
  double p_masked = 0.0;
  bool accepted = false;
};

struct FinetuneSet {
  std::vector<SegmenterSample> samples;
  std::vector<std::size_t> source_indices;
  std::vector<FinetuneDecision> decisions;
};

// For each accepted pool image, the tag-channel probability map is
// segment-smoothed and trimapped into its pseudo mask.
FinetuneSet build_finetune_set(const SplitData& pool, const Network& segmenter,
                               const Network& classifier, const FinetuneParams& params);

// Pseudo ground truth from the attention model, with ablation toggles.
enum class AttentionVariant { kForwardOnly, kBackwardOnly, kFused, kFusedSmoothed };

struct PseudoGtParams {
  AttentionVariant variant = AttentionVariant::kFusedSmoothed;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double delta1 = 0.65;
  double delta2 = 0.5;
  SegmentParams segments;
};

PseudoMask attention_pseudo_mask(const Network& classifier, const FeatureMap& image, int tag,
                                 const PseudoGtParams& params, std::uint64_t segment_seed);

}  // namespace tagseg
