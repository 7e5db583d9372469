#include "tagseg/curation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tagseg/attention.hpp"
#include "tagseg/errors.hpp"
#include "tagseg/parallel.hpp"
#include "tagseg/rng.hpp"

namespace tagseg {

bool filter_rule_keeps(int rule, const std::vector<double>& probs, int tag) {
  if (tag < 1 || tag > static_cast<int>(probs.size())) {
    throw std::invalid_argument("filter_rule_keeps: tag out of range");
  }
  const double p_tag = probs[tag - 1];
  switch (rule) {
    case 1:
      return !(p_tag <= 0.1);
    case 2: {
      if (probs.size() < 3) {
        throw config_error("filter rule 2 needs at least 3 classes");
      }
      const std::vector<int> order = argsort_descending(probs);
      for (int r = 0; r < 3; ++r) {
        if (order[r] == tag - 1) {
          return true;
        }
      }
      return false;
    }
    case 3:
      return !(p_tag <= 0.6);
    default:
      throw std::invalid_argument("filter rule must be 1, 2, or 3");
  }
}

std::pair<std::vector<std::size_t>, CurationReport> filter_stage(
    const SplitData& data, const std::vector<std::size_t>& active, const Network& classifier,
    int rule, int threads) {
  if (rule == 2 && classifier.class_count < 3) {
    throw config_error("filter rule 2 needs at least 3 classes");
  }
  CurationReport report;
  report.stage = "rule" + std::to_string(rule);
  report.rule = rule;
  report.input_count = active.size();
  report.decisions.resize(active.size());

  parallel_for(active.size(), threads, [&](std::size_t i) {
    const std::size_t idx = active[i];
    const TrainRecord& rec = data.records[idx];
    const std::vector<double> probs = classify(classifier, data.image(idx));
    FilterDecision d;
    d.image_path = rec.image_path;
    d.tag = rec.tag;
    d.p_tag = probs[rec.tag - 1];
    const std::vector<int> order = argsort_descending(probs);
    d.tag_rank = static_cast<int>(std::find(order.begin(), order.end(), rec.tag - 1) -
                                  order.begin());
    d.kept = filter_rule_keeps(rule, probs, rec.tag);
    report.decisions[i] = std::move(d);
  });

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (report.decisions[i].kept) {
      kept.push_back(active[i]);
    }
  }
  report.kept_count = kept.size();
  report.dropped_count = report.input_count - report.kept_count;
  return {std::move(kept), std::move(report)};
}

namespace {

// Training view over a subset of a split.
class SubsetClassifierData : public ClassifierData {
 public:
  SubsetClassifierData(const SplitData& data, const std::vector<std::size_t>& indices)
      : data_(data), indices_(indices) {}
  std::size_t size() const override { return indices_.size(); }
  ClassifierSample sample(std::size_t i) const override {
    const std::size_t idx = indices_[i];
    return ClassifierSample{data_.image(idx), data_.records[idx].tag};
  }

 private:
  const SplitData& data_;
  const std::vector<std::size_t>& indices_;
};

}  // namespace

CascadeResult filter_cascade(const SplitData& data, int class_count,
                             const TrainSchedule& schedule, std::uint64_t seed) {
  if (data.size() == 0) {
    throw data_exhaustion_error("filter cascade started with an empty manifest");
  }
  CascadeResult result;
  result.kept.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    result.kept[i] = i;
  }
  // Every round restarts from the same initialization and schedule; only the
  // surviving data changes.
  const std::uint64_t init_seed = derive_seed(seed, "cascade-init");
  Network classifier;
  for (int rule = 1; rule <= 3; ++rule) {
    const SubsetClassifierData view(data, result.kept);
    classifier = train_classifier(make_classifier(3, class_count, init_seed), view, schedule);
    auto [kept, report] = filter_stage(data, result.kept, classifier, rule, schedule.threads);
    result.reports.push_back(std::move(report));
    if (kept.empty()) {
      throw data_exhaustion_error("filter rule " + std::to_string(rule) +
                                  " dropped every remaining image");
    }
    result.kept = std::move(kept);
    result.kept_per_stage.push_back(result.kept);
  }
  result.classifier = std::move(classifier);
  return result;
}

LabelImage compute_mask(const FeatureMap& seg_probs, int tag) {
  if (tag < 1 || tag >= seg_probs.channels) {
    throw std::invalid_argument("compute_mask: tag must be a foreground class");
  }
  LabelImage mask(seg_probs.height, seg_probs.width);
  const std::size_t plane = static_cast<std::size_t>(seg_probs.height) * seg_probs.width;
  for (std::size_t p = 0; p < plane; ++p) {
    const double p_tag = seg_probs.values[static_cast<std::size_t>(tag) * plane + p];
    double best_other = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < seg_probs.channels; ++c) {
      if (c == tag) {
        continue;
      }
      best_other = std::max(best_other, seg_probs.values[static_cast<std::size_t>(c) * plane + p]);
    }
    mask.labels[p] = p_tag >= best_other ? 1 : 0;
  }
  return mask;
}

FeatureMap apply_mask(const FeatureMap& image, const LabelImage& mask) {
  if (image.height != mask.height || image.width != mask.width) {
    throw std::invalid_argument("apply_mask: image and mask differ in size");
  }
  FeatureMap out = image;
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (int c = 0; c < image.channels; ++c) {
    double* dst = out.plane(c);
    for (std::size_t p = 0; p < plane; ++p) {
      dst[p] *= mask.labels[p];
    }
  }
  return out;
}

bool finetune_gate(const Network& classifier, const FeatureMap& image, const LabelImage& mask,
                   int tag, double mu) {
  if (mu <= 0.0 || mu >= 1.0) {
    throw config_error("finetune_gate: mu must lie in (0, 1)");
  }
  const std::vector<double> probs = classify(classifier, apply_mask(image, mask));
  return gate_accepts(probs[tag - 1], mu);
}

FinetuneSet build_finetune_set(const SplitData& pool, const Network& segmenter,
                               const Network& classifier, const FinetuneParams& params) {
  struct PerImage {
    bool accepted = false;
    double p_masked = 0.0;
    SegmenterSample sample;
  };
  std::vector<PerImage> rows(pool.size());
  parallel_for(pool.size(), params.threads, [&](std::size_t i) {
    const FeatureMap image = pool.image(i);
    const int tag = pool.records[i].tag;
    const FeatureMap probs = segment_probs(segmenter, image);
    const LabelImage mask = compute_mask(probs, tag);
    const std::vector<double> cls = classify(classifier, apply_mask(image, mask));
    rows[i].p_masked = cls[tag - 1];
    rows[i].accepted = gate_accepts(rows[i].p_masked, params.mu);
    if (!rows[i].accepted) {
      return;
    }
    // Tag-channel probabilities, segment-smoothed, then trimapped.
    AttentionMap tag_map;
    tag_map.class_id = tag;
    tag_map.map = FeatureMap(1, probs.height, probs.width);
    const std::size_t plane = static_cast<std::size_t>(probs.height) * probs.width;
    for (std::size_t p = 0; p < plane; ++p) {
      tag_map.map.values[p] = probs.values[static_cast<std::size_t>(tag) * plane + p];
    }
    SegmentParams seg = params.segments;
    seg.seed = derive_seed(params.seed, "finetune-segments", i);
    const LabelImage segments = generate_segments(image, seg);
    const PseudoMask pseudo = trimap(smooth(tag_map, segments), tag, params.delta1, params.delta2,
                                     PseudoMask::Provenance::kFineTuning);
    rows[i].sample = SegmenterSample{image, pseudo.labels};
  });

  FinetuneSet out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.decisions.push_back(FinetuneDecision{pool.records[i].image_path, pool.records[i].tag,
                                             rows[i].p_masked, rows[i].accepted});
    if (rows[i].accepted) {
      out.samples.push_back(std::move(rows[i].sample));
      out.source_indices.push_back(i);
    }
  }
  return out;
}

PseudoMask attention_pseudo_mask(const Network& classifier, const FeatureMap& image, int tag,
                                 const PseudoGtParams& params, std::uint64_t segment_seed) {
  double l1 = params.lambda1;
  double l2 = params.lambda2;
  if (params.variant == AttentionVariant::kForwardOnly) {
    l2 = 0.0;
  } else if (params.variant == AttentionVariant::kBackwardOnly) {
    l1 = 0.0;
  }
  const AttentionBundle bundle = compute_attention(classifier, image, tag, l1, l2);
  AttentionMap map = bundle.fused;
  if (params.variant == AttentionVariant::kFusedSmoothed) {
    SegmentParams seg = params.segments;
    seg.seed = segment_seed;
    map = smooth(map, generate_segments(image, seg));
  }
  return trimap(map, tag, params.delta1, params.delta2, PseudoMask::Provenance::kAttention);
}

}  // namespace tagseg
