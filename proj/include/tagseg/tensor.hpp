#pragma once

#include <cstddef>
#include <vector>

namespace tagseg {

// Pixel code excluded from losses and evaluation. Stored as 255 in mask files.
inline constexpr int kIgnoreLabel = -1;

// Dense C x H x W array of doubles, channel planes in row-major order.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, double fill = 0.0);

  double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double* plane(int c) { return values.data() + static_cast<std::size_t>(c) * height * width; }
  const double* plane(int c) const { return values.data() + static_cast<std::size_t>(c) * height * width; }

  std::size_t size() const { return values.size(); }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

// H x W integer label image. Codes are {0..K, kIgnoreLabel} for masks and
// 0..S-1 for segment maps.
struct LabelImage {
  int height = 0;
  int width = 0;
  std::vector<int> labels;

  LabelImage() = default;
  LabelImage(int h, int w, int fill = 0);

  int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const LabelImage& o) const { return height == o.height && width == o.width; }
};

// Upsamples every channel by an integer factor with bilinear interpolation.
// Output pixel centers map to (x + 0.5) / factor - 0.5 in source coordinates,
// clamped to the valid range. factor == 1 returns the input unchanged.
FeatureMap bilinear_upsample(const FeatureMap& map, int factor);

// Per-axis source taps and fractions for the upsampling above. Output sample
// o interpolates between sources i0[o] and i1[o] with weight frac[o] on i1.
struct BilinearAxis {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};
BilinearAxis bilinear_axis(int n_in, int factor);

// Indices ordering `scores` from largest to smallest; ties keep the smaller
// original index first.
std::vector<int> argsort_descending(const std::vector<double>& scores);

// Per-channel (v - min) / (max - min); constant channels become all zeros.
FeatureMap minmax_normalize(const FeatureMap& map);

}  // namespace tagseg
