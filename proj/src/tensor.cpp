#include "tagseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tagseg {

FeatureMap::FeatureMap(int c, int h, int w, double fill)
    : channels(c), height(h), width(w) {
  if (c < 1 || h < 1 || w < 1) {
    throw std::invalid_argument("FeatureMap: all dimensions must be >= 1");
  }
  values.assign(static_cast<std::size_t>(c) * h * w, fill);
}

LabelImage::LabelImage(int h, int w, int fill) : height(h), width(w) {
  if (h < 1 || w < 1) {
    throw std::invalid_argument("LabelImage: dimensions must be >= 1");
  }
  labels.assign(static_cast<std::size_t>(h) * w, fill);
}

FeatureMap bilinear_upsample(const FeatureMap& map, int factor) {
  if (factor < 1) {
    throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
  }
  if (factor == 1) {
    return map;
  }
  const int oh = map.height * factor;
  const int ow = map.width * factor;
  FeatureMap out(map.channels, oh, ow);

  const BilinearAxis ax = bilinear_axis(map.width, factor);
  const BilinearAxis ay = bilinear_axis(map.height, factor);

  for (int c = 0; c < map.channels; ++c) {
    const double* src = map.plane(c);
    double* dst = out.plane(c);
    for (int oy = 0; oy < oh; ++oy) {
      const double* r0 = src + static_cast<std::size_t>(ay.i0[oy]) * map.width;
      const double* r1 = src + static_cast<std::size_t>(ay.i1[oy]) * map.width;
      const double dy = ay.frac[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const double dx = ax.frac[ox];
        const double top = (1.0 - dx) * r0[ax.i0[ox]] + dx * r0[ax.i1[ox]];
        const double bot = (1.0 - dx) * r1[ax.i0[ox]] + dx * r1[ax.i1[ox]];
        dst[static_cast<std::size_t>(oy) * ow + ox] = (1.0 - dy) * top + dy * bot;
      }
    }
  }
  return out;
}

BilinearAxis bilinear_axis(int n_in, int factor) {
  const int n_out = n_in * factor;
  BilinearAxis axis;
  axis.i0.resize(n_out);
  axis.i1.resize(n_out);
  axis.frac.resize(n_out);
  for (int o = 0; o < n_out; ++o) {
    double s = (o + 0.5) / factor - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    const int lo = static_cast<int>(std::floor(s));
    axis.i0[o] = lo;
    axis.i1[o] = std::min(lo + 1, n_in - 1);
    axis.frac[o] = s - lo;
  }
  return axis;
}

std::vector<int> argsort_descending(const std::vector<double>& scores) {
  if (scores.empty()) {
    throw std::invalid_argument("argsort_descending: empty input");
  }
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&scores](int a, int b) { return scores[a] > scores[b]; });
  return idx;
}

FeatureMap minmax_normalize(const FeatureMap& map) {
  FeatureMap out = map;
  const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
  for (int c = 0; c < map.channels; ++c) {
    double* p = out.plane(c);
    const auto [mn_it, mx_it] = std::minmax_element(p, p + plane);
    const double mn = *mn_it;
    const double mx = *mx_it;
    if (mx == mn) {
      std::fill(p, p + plane, 0.0);
    } else {
      // True division keeps the channel extremes at exactly 0 and 1, which
      // makes repeated normalization a no-op.
      const double range = mx - mn;
      for (std::size_t i = 0; i < plane; ++i) {
        p[i] = (p[i] - mn) / range;
      }
    }
  }
  return out;
}

}  // namespace tagseg
