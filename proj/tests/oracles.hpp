#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (gather loops, dense matrices, explicit padding) so
// they share no code path with the library.

#include <functional>
#include <vector>

#include "tagseg/net.hpp"

namespace tagseg::oracle {

// Layer-by-layer forward pass, gather style, with an explicit padded buffer
// for convolutions.
std::vector<FeatureMap> naive_forward(const Network& net, const FeatureMap& image);

// Top-down excitation that materializes every conditional probability as a
// dense (children x parents) matrix and multiplies vectors through it.
// Returns the flattened probability vector over each crossed layer's output,
// starting at the output layer.
std::vector<std::vector<double>> dense_excitation(const Network& net, const ActivationTrace& trace,
                                                  int k, int stop_layer);

// Direct evaluation of the upsampling coordinate formula per output pixel.
FeatureMap bilinear_reference(const FeatureMap& map, int factor);

// Two-pass per-segment means, one full scan per segment code.
FeatureMap segment_mean_reference(const FeatureMap& map, const LabelImage& segments);

// Stable comparison sort (descending) by repeated selection.
std::vector<int> argsort_reference(const std::vector<double>& scores);

// Central finite difference of `loss` with respect to one parameter.
double finite_difference(const Network& net, const std::function<double(const Network&)>& loss,
                         std::size_t layer, bool is_bias, std::size_t index, double h);

}  // namespace tagseg::oracle
