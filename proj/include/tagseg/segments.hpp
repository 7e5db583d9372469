#pragma once

#include <cstdint>

#include "tagseg/tensor.hpp"

namespace tagseg {

struct SegmentParams {
  int target_count = 48;
  double compactness = 0.2;  // spatial weight relative to [0,1] color distance
  int iterations = 10;
  std::uint64_t seed = 0;
};

// Unsupervised superpixels: seeded iterative clustering on (color, position)
// followed by connectivity enforcement. The result is a true partition of
// 4-connected, nonempty segments labeled 0..S-1 in scan order; S tracks
// target_count approximately. Deterministic given the seed.
LabelImage generate_segments(const FeatureMap& image, const SegmentParams& params);

// Number of distinct segment codes (assumes codes 0..S-1).
int segment_count(const LabelImage& segments);

}  // namespace tagseg
