#pragma once

#include "tagseg/net.hpp"

namespace tagseg {

// Per-class spatial relevance map. Values are only guaranteed nonnegative
// and in [0,1] after a normalization step (fusion normalizes).
struct AttentionMap {
  int class_id = 0;  // 1..K, the noisy tag the map was computed under
  FeatureMap map;    // 1 x H x W
};

// Top-down winner probabilities, one entry per layer the propagation crossed
// (start layer first). Entries are nonnegative; per-layer totals can only
// lose mass, never gain it.
struct ExcitationState {
  std::vector<int> layer_indices;        // network layer whose output each entry covers
  std::vector<FeatureMap> probabilities;
};

double total_mass(const FeatureMap& probs);

// Forward relevance: the FC-weighted sum of pre-GAP feature channels for
// class k, at the coarse pre-GAP resolution. May contain negative values.
AttentionMap forward_attention(const Network& net, const ActivationTrace& trace, int k);

// Top-down excitation from a one-hot start at class k, stopping once the
// state covers the output of `stop_layer` (-1 = the network input).
// Positive weight-activation products route probability; parents whose
// candidate children all carry nonpositive products drop their mass.
ExcitationState propagate_excitation(const Network& net, const ActivationTrace& trace, int k,
                                     int stop_layer);

// Excitation marginalized over channels at a tap layer: a 1 x H x W map on
// that layer's spatial grid.
AttentionMap excitation_backward(const Network& net, const ActivationTrace& trace, int k,
                                 int tap_layer);

// Multiscale fusion: each map is upsampled by its factor, min-max
// normalized, then combined as l1 * F + l2 * (B_shallow . B_deep) and
// normalized again. All three must reach the same resolution.
AttentionMap fuse(const AttentionMap& forward_map, const AttentionMap& shallow,
                  const AttentionMap& deep, double lambda1, double lambda2, int forward_factor,
                  int shallow_factor, int deep_factor);

// Everything the attention model produces for one (image, tag) pair, with
// upsample factors derived from the net's cumulative strides.
struct AttentionBundle {
  AttentionMap forward_map;  // coarse, pre-GAP grid
  AttentionMap shallow;      // first tap
  AttentionMap deep;         // second tap
  AttentionMap fused;        // input resolution, in [0,1]
};
AttentionBundle compute_attention(const Network& net, const FeatureMap& image, int tag,
                                  double lambda1, double lambda2);

}  // namespace tagseg
