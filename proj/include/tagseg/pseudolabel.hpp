#pragma once

#include "tagseg/attention.hpp"
#include "tagseg/tensor.hpp"

namespace tagseg {

// H x W label image over {0, tag, kIgnoreLabel}: the proxy ground truth.
struct PseudoMask {
  enum class Provenance { kAttention, kFineTuning };
  LabelImage labels;
  int tag = 0;
  Provenance provenance = Provenance::kAttention;
};

// Replaces each value by the mean over its segment (per channel). Segment
// codes partition the pixels, so total mass is preserved.
FeatureMap segment_mean(const FeatureMap& map, const LabelImage& segments);
AttentionMap smooth(const AttentionMap& map, const LabelImage& segments);

// Three-way split of a smoothed attention map in [0,1]: the tag above
// delta1, ignored in (delta2, delta1], background otherwise. Requires
// delta1 > delta2.
PseudoMask trimap(const AttentionMap& map, int tag, double delta1, double delta2,
                  PseudoMask::Provenance provenance = PseudoMask::Provenance::kAttention);

// Mean intersection-over-union over classes 0..K, aggregated across the
// whole set. Pixels whose ground truth is kIgnoreLabel are excluded; classes
// absent from predictions and ground truth alike contribute nothing.
struct IouResult {
  double mean = 0.0;
  std::vector<double> per_class;     // size K+1, NaN where undefined
  std::vector<bool> class_present;   // size K+1
};
IouResult mean_iou(const std::vector<LabelImage>& preds, const std::vector<LabelImage>& gts,
                   int class_count);

}  // namespace tagseg
