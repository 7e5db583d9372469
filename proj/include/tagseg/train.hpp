#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tagseg/net.hpp"

namespace tagseg {

struct ClassifierSample {
  FeatureMap image;
  int label = 0;  // 1..K
};

struct SegmenterSample {
  FeatureMap image;
  LabelImage mask;  // codes {0..K, kIgnoreLabel}
};

// Thread-safe by-index sample access; implementations decode lazily.
class ClassifierData {
 public:
  virtual ~ClassifierData() = default;
  virtual std::size_t size() const = 0;
  virtual ClassifierSample sample(std::size_t i) const = 0;
};

class SegmenterData {
 public:
  virtual ~SegmenterData() = default;
  virtual std::size_t size() const = 0;
  virtual SegmenterSample sample(std::size_t i) const = 0;
};

class VectorClassifierData : public ClassifierData {
 public:
  explicit VectorClassifierData(std::vector<ClassifierSample> samples)
      : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  ClassifierSample sample(std::size_t i) const override { return samples_[i]; }

 private:
  std::vector<ClassifierSample> samples_;
};

class VectorSegmenterData : public SegmenterData {
 public:
  explicit VectorSegmenterData(std::vector<SegmenterSample> samples)
      : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  SegmenterSample sample(std::size_t i) const override { return samples_[i]; }

 private:
  std::vector<SegmenterSample> samples_;
};

// Per-parameter gradient arrays, index-aligned with net.layers.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const Network& net);
  void add(const Gradients& other);
};

// Cross-entropy -log P(label). Batch losses are sums over samples.
double classifier_loss(const Network& net, const FeatureMap& image, int label);
double classifier_batch_loss(const Network& net, const ClassifierData& data,
                             const std::vector<std::size_t>& indices);

// Masked per-pixel cross-entropy, averaged over the valid pixels of each
// image (0 when a mask is entirely ignored). Batch losses sum over images.
double segmenter_loss(const Network& net, const FeatureMap& image, const LabelImage& mask);
double segmenter_batch_loss(const Network& net, const SegmenterData& data,
                            const std::vector<std::size_t>& indices);

// Analytic gradients summed over the batch, accumulated in index order so
// results do not depend on the thread count.
Gradients classifier_gradient(const Network& net, const ClassifierData& data,
                              const std::vector<std::size_t>& indices, int threads = 1,
                              double* loss_out = nullptr);
Gradients segmenter_gradient(const Network& net, const SegmenterData& data,
                             const std::vector<std::size_t>& indices, int threads = 1,
                             double* loss_out = nullptr);

struct TrainSchedule {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 16;
  int iterations = 2000;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

struct TrainStats {
  double probe_loss_before = 0.0;
  double probe_loss_after = 0.0;
  double final_batch_loss = 0.0;
};

// SGD with momentum over uniformly sampled batches. Deterministic for a
// fixed (net, data, schedule) regardless of thread count; throws
// divergence_error when the batch loss turns non-finite.
Network train_classifier(Network net, const ClassifierData& data, const TrainSchedule& schedule,
                         TrainStats* stats = nullptr);
Network train_segmenter(Network net, const SegmenterData& data, const TrainSchedule& schedule,
                        TrainStats* stats = nullptr);

}  // namespace tagseg
