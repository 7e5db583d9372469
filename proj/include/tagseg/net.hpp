#pragma once

#include <cstdint>
#include <vector>

#include "tagseg/tensor.hpp"

namespace tagseg {

enum class LayerKind {
  kConv,
  kRelu,
  kMaxPool,
  kAvgPool,
  kGlobalAvgPool,
  kFullyConnected,
  kSoftmax,
  kPerPixelSoftmax,
  kUpsampleToInput,  // bilinear by `kernel` back to the input resolution
};

struct LayerSpec {
  LayerKind kind{};
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;  // spatial size for conv/pool; upsample factor for kUpsampleToInput
  int stride = 1;
  int pad = 0;
  std::vector<double> weights;  // conv: [oc][ic][ky][kx]; fc: [out][in]
  std::vector<double> bias;     // empty means no bias term

  bool has_params() const { return kind == LayerKind::kConv || kind == LayerKind::kFullyConnected; }
};

enum class HeadKind { kClassifier, kSegmenter };

struct Network {
  HeadKind head = HeadKind::kClassifier;
  int class_count = 0;     // K
  int input_channels = 0;
  std::vector<LayerSpec> layers;
  std::vector<int> tap_points;  // layer indices whose outputs feed backward attention

  // Classifier head is the trailing GAP -> FC -> softmax triple.
  int gap_layer() const;
  int fc_layer() const;
  // Index of the layer producing the pre-GAP feature tensor.
  int pre_gap_layer() const { return gap_layer() - 1; }
};

struct ActivationTrace {
  FeatureMap input;
  std::vector<FeatureMap> outputs;  // outputs[i] = output of layers[i]

  const FeatureMap& layer_input(int layer) const {
    return layer == 0 ? input : outputs[layer - 1];
  }
};

// Shape of a layer's output given its input; throws config_error on mismatch.
void check_layer_input(const LayerSpec& layer, const FeatureMap& in, int layer_index);

// Valid output range [lo, hi) for one kernel tap, so convolution inner loops
// run branch-free: in = out * stride - pad + tap stays inside [0, n_in).
inline void tap_range(int n_out, int n_in, int stride, int pad, int tap, int& lo, int& hi) {
  lo = 0;
  while (lo < n_out && lo * stride - pad + tap < 0) {
    ++lo;
  }
  hi = n_out;
  while (hi > lo && (hi - 1) * stride - pad + tap >= n_in) {
    --hi;
  }
}

// Full forward pass recording every intermediate activation.
ActivationTrace forward(const Network& net, const FeatureMap& image);

// Class probabilities P(k), k = 1..K at index k-1. Classifier nets only.
std::vector<double> classify(const Network& net, const FeatureMap& image);

// Per-pixel probabilities over K+1 channels at input resolution. Segmenter nets only.
FeatureMap segment_probs(const Network& net, const FeatureMap& image);

// Predicted label image: per-pixel argmax over segment_probs channels.
LabelImage segment_predict(const Network& net, const FeatureMap& image);

// Desk-scale reference nets: three conv/relu/maxpool blocks (8/16/32 channels,
// total stride 8) followed by the task head. Weights are seeded Glorot-uniform,
// biases zero. Taps sit after blocks one and two (strides 2 and 4).
Network make_classifier(int input_channels, int class_count, std::uint64_t seed);
Network make_segmenter(int input_channels, int class_count, std::uint64_t seed);

// Cumulative spatial downsampling factor at a layer's output.
int cumulative_stride(const Network& net, int layer_index);

namespace detail {
// Patch matrix for convolution-as-GEMM: row q = (ic, ky, kx), column
// p = (oy, ox); out-of-bounds taps are zero. `col` is resized to q x p.
void im2col(const FeatureMap& in, int kernel, int stride, int pad, int oh, int ow,
            std::vector<double>& col);
// Transpose scatter-add of a patch matrix back into an image gradient.
void col2im_add(const std::vector<double>& col, int kernel, int stride, int pad, int oh, int ow,
                FeatureMap& grad_in);
}  // namespace detail

}  // namespace tagseg
