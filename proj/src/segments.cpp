#include "tagseg/segments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tagseg/rng.hpp"

namespace tagseg {

namespace {

constexpr int kMaxChannels = 4;

struct Center {
  double color[kMaxChannels] = {0, 0, 0, 0};
  double y = 0.0;
  double x = 0.0;
};

double color_distance_sq(const double* pixel, std::size_t plane, int channels, const Center& c) {
  double d = 0.0;
  for (int ch = 0; ch < channels; ++ch) {
    const double diff = pixel[ch * plane] - c.color[ch];
    d += diff * diff;
  }
  return d;
}

// Classic post-pass: relabel each 4-connected component in scan order and
// absorb components much smaller than the grid cell into an already-labeled
// neighbor, which keeps every final segment connected.
LabelImage enforce_connectivity(const LabelImage& raw, int min_size) {
  const int h = raw.height;
  const int w = raw.width;
  LabelImage out(h, w, -1);
  const int dy[4] = {-1, 1, 0, 0};
  const int dx[4] = {0, 0, -1, 1};
  int next_label = 0;
  std::vector<int> stack;
  std::vector<int> component;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (out.at(y, x) != -1) {
        continue;
      }
      // Adjacent label seen before this component, used if it is too small.
      int adjacent = -1;
      if (x > 0) {
        adjacent = out.at(y, x - 1);
      } else if (y > 0) {
        adjacent = out.at(y - 1, x);
      }
      component.clear();
      stack.assign(1, y * w + x);
      out.at(y, x) = next_label;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        component.push_back(p);
        const int py = p / w;
        const int px = p % w;
        for (int d = 0; d < 4; ++d) {
          const int ny = py + dy[d];
          const int nx = px + dx[d];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) {
            continue;
          }
          if (out.at(ny, nx) == -1 && raw.at(ny, nx) == raw.at(y, x)) {
            out.at(ny, nx) = next_label;
            stack.push_back(ny * w + nx);
          }
        }
      }
      if (static_cast<int>(component.size()) < min_size && adjacent >= 0) {
        for (const int p : component) {
          out.labels[p] = adjacent;
        }
      } else {
        ++next_label;
      }
    }
  }
  return out;
}

}  // namespace

LabelImage generate_segments(const FeatureMap& image, const SegmentParams& params) {
  if (params.target_count < 1) {
    throw std::invalid_argument("generate_segments: target_count must be >= 1");
  }
  if (image.channels > kMaxChannels) {
    throw std::invalid_argument("generate_segments: at most 4 channels supported");
  }
  const int h = image.height;
  const int w = image.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // Roughly square grid with nx * ny ~= target_count.
  const double aspect = static_cast<double>(w) / h;
  int ny = std::max(1, static_cast<int>(std::lround(std::sqrt(params.target_count / aspect))));
  int nx = std::max(1, static_cast<int>(std::lround(static_cast<double>(params.target_count) / ny)));
  nx = std::min(nx, w);
  ny = std::min(ny, h);

  Rng rng(derive_seed(params.seed, "segment-centers"));
  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      Center c;
      c.y = std::clamp((j + 0.5) * h / ny + rng.uniform(-0.5, 0.5), 0.0, h - 1.0);
      c.x = std::clamp((i + 0.5) * w / nx + rng.uniform(-0.5, 0.5), 0.0, w - 1.0);
      const int iy = static_cast<int>(c.y);
      const int ix = static_cast<int>(c.x);
      for (int ch = 0; ch < image.channels; ++ch) {
        c.color[ch] = image.at(ch, iy, ix);
      }
      centers.push_back(c);
    }
  }

  const double step = std::sqrt(static_cast<double>(h) * w / centers.size());
  const double spatial_scale = (params.compactness / step) * (params.compactness / step);
  const int search = std::max(2, static_cast<int>(std::ceil(2.0 * step)));

  LabelImage assignment(h, w, 0);
  std::vector<double> best_distance;
  for (int iter = 0; iter < params.iterations; ++iter) {
    best_distance.assign(static_cast<std::size_t>(h) * w,
                         std::numeric_limits<double>::infinity());
    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
      const Center& c = centers[ci];
      const int y_lo = std::max(0, static_cast<int>(c.y) - search);
      const int y_hi = std::min(h - 1, static_cast<int>(c.y) + search);
      const int x_lo = std::max(0, static_cast<int>(c.x) - search);
      const int x_hi = std::min(w - 1, static_cast<int>(c.x) + search);
      for (int y = y_lo; y <= y_hi; ++y) {
        const double* row = image.values.data() + static_cast<std::size_t>(y) * w;
        for (int x = x_lo; x <= x_hi; ++x) {
          const double dxy = (y - c.y) * (y - c.y) + (x - c.x) * (x - c.x);
          const double d =
              color_distance_sq(row + x, plane, image.channels, c) + spatial_scale * dxy;
          double& best = best_distance[static_cast<std::size_t>(y) * w + x];
          if (d < best) {
            best = d;
            assignment.at(y, x) = static_cast<int>(ci);
          }
        }
      }
    }
    // Pixels outside every search window fall back to the nearest center.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (std::isinf(best_distance[static_cast<std::size_t>(y) * w + x])) {
          const double* pixel = image.values.data() + static_cast<std::size_t>(y) * w + x;
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            const double dxy = (y - centers[ci].y) * (y - centers[ci].y) +
                               (x - centers[ci].x) * (x - centers[ci].x);
            const double d =
                color_distance_sq(pixel, plane, image.channels, centers[ci]) + spatial_scale * dxy;
            if (d < best) {
              best = d;
              assignment.at(y, x) = static_cast<int>(ci);
            }
          }
        }
      }
    }

    // Recenter on the assigned pixels; empty clusters keep their position.
    std::vector<Center> next(centers.size());
    std::vector<std::size_t> counts(centers.size(), 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int ci = assignment.at(y, x);
        next[ci].y += y;
        next[ci].x += x;
        for (int ch = 0; ch < image.channels; ++ch) {
          next[ci].color[ch] += image.at(ch, y, x);
        }
        ++counts[ci];
      }
    }
    for (std::size_t ci = 0; ci < centers.size(); ++ci) {
      if (counts[ci] == 0) {
        continue;
      }
      const double inv = 1.0 / static_cast<double>(counts[ci]);
      centers[ci].y = next[ci].y * inv;
      centers[ci].x = next[ci].x * inv;
      for (int ch = 0; ch < image.channels; ++ch) {
        centers[ci].color[ch] = next[ci].color[ch] * inv;
      }
    }
  }

  const int min_size = std::max(1, static_cast<int>(h * w / centers.size() / 4));
  return enforce_connectivity(assignment, min_size);
}

int segment_count(const LabelImage& segments) {
  int mx = -1;
  for (const int code : segments.labels) {
    mx = std::max(mx, code);
  }
  return mx + 1;
}

}  // namespace tagseg
