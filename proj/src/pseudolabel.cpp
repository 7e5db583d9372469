#include "tagseg/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tagseg/errors.hpp"

namespace tagseg {

FeatureMap segment_mean(const FeatureMap& map, const LabelImage& segments) {
  if (map.height != segments.height || map.width != segments.width) {
    throw std::invalid_argument("segment_mean: map and segments differ in size");
  }
  int count = 0;
  for (const int code : segments.labels) {
    if (code < 0) {
      throw std::invalid_argument("segment_mean: negative segment code");
    }
    count = std::max(count, code + 1);
  }
  FeatureMap out(map.channels, map.height, map.width);
  const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
  std::vector<double> sums(count);
  std::vector<std::size_t> sizes(count);
  for (int c = 0; c < map.channels; ++c) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(sizes.begin(), sizes.end(), 0);
    const double* src = map.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      sums[segments.labels[i]] += src[i];
      ++sizes[segments.labels[i]];
    }
    for (int s = 0; s < count; ++s) {
      if (sizes[s] > 0) {
        sums[s] /= static_cast<double>(sizes[s]);
      }
    }
    double* dst = out.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = sums[segments.labels[i]];
    }
  }
  return out;
}

AttentionMap smooth(const AttentionMap& map, const LabelImage& segments) {
  AttentionMap out;
  out.class_id = map.class_id;
  out.map = segment_mean(map.map, segments);
  return out;
}

PseudoMask trimap(const AttentionMap& map, int tag, double delta1, double delta2,
                  PseudoMask::Provenance provenance) {
  if (!(delta1 > delta2)) {
    throw config_error("trimap: requires delta1 > delta2");
  }
  if (tag < 1) {
    throw std::invalid_argument("trimap: tag must be a class in 1..K");
  }
  PseudoMask mask;
  mask.tag = tag;
  mask.provenance = provenance;
  mask.labels = LabelImage(map.map.height, map.map.width);
  for (std::size_t i = 0; i < map.map.values.size(); ++i) {
    const double v = map.map.values[i];
    if (v > delta1) {
      mask.labels.labels[i] = tag;
    } else if (v > delta2) {
      mask.labels.labels[i] = kIgnoreLabel;
    } else {
      mask.labels.labels[i] = 0;
    }
  }
  return mask;
}

IouResult mean_iou(const std::vector<LabelImage>& preds, const std::vector<LabelImage>& gts,
                   int class_count) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("mean_iou: prediction/ground-truth count mismatch");
  }
  const int classes = class_count + 1;  // background included
  std::vector<double> inter(classes, 0.0), pred_n(classes, 0.0), gt_n(classes, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const LabelImage& p = preds[i];
    const LabelImage& g = gts[i];
    if (!p.same_shape(g)) {
      throw std::invalid_argument("mean_iou: mask " + std::to_string(i) + " size mismatch");
    }
    for (std::size_t j = 0; j < p.labels.size(); ++j) {
      const int gv = g.labels[j];
      if (gv == kIgnoreLabel) {
        continue;
      }
      const int pv = p.labels[j];
      if (gv >= 0 && gv < classes) {
        gt_n[gv] += 1.0;
      }
      if (pv >= 0 && pv < classes) {
        pred_n[pv] += 1.0;
        if (pv == gv) {
          inter[pv] += 1.0;
        }
      }
    }
  }
  IouResult result;
  result.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
  result.class_present.assign(classes, false);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    const double uni = pred_n[c] + gt_n[c] - inter[c];
    if (uni > 0.0) {
      result.per_class[c] = inter[c] / uni;
      result.class_present[c] = true;
      sum += result.per_class[c];
      ++present;
    }
  }
  result.mean = present > 0 ? sum / present : 0.0;
  return result;
}

}  // namespace tagseg
