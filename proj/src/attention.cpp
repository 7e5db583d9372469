#include "tagseg/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "tagseg/errors.hpp"

namespace tagseg {

namespace {

// Children of one conv parent: probability proportional to w * f over the
// nonnegative-weight taps in its receptive field.
FeatureMap excite_conv(const LayerSpec& layer, const FeatureMap& in, const FeatureMap& parent) {
  FeatureMap child(in.channels, in.height, in.width);
  const int k = layer.kernel;
  for (int oy = 0; oy < parent.height; ++oy) {
    for (int ox = 0; ox < parent.width; ++ox) {
      for (int oc = 0; oc < layer.out_channels; ++oc) {
        const double p = parent.at(oc, oy, ox);
        if (p == 0.0) {
          continue;
        }
        double denom = 0.0;
        const double* w_base =
            layer.weights.data() + static_cast<std::size_t>(oc) * layer.in_channels * k * k;
        for (int ic = 0; ic < layer.in_channels; ++ic) {
          const double* w = w_base + static_cast<std::size_t>(ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * layer.stride - layer.pad + ky;
            if (iy < 0 || iy >= in.height) {
              continue;
            }
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * layer.stride - layer.pad + kx;
              if (ix < 0 || ix >= in.width) {
                continue;
              }
              const double wv = w[ky * k + kx];
              if (wv >= 0.0) {
                denom += wv * in.at(ic, iy, ix);
              }
            }
          }
        }
        if (denom <= 0.0) {
          continue;  // dead denominator: this parent's mass is dropped
        }
        const double scale = p / denom;
        for (int ic = 0; ic < layer.in_channels; ++ic) {
          const double* w = w_base + static_cast<std::size_t>(ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * layer.stride - layer.pad + ky;
            if (iy < 0 || iy >= in.height) {
              continue;
            }
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * layer.stride - layer.pad + kx;
              if (ix < 0 || ix >= in.width) {
                continue;
              }
              const double wv = w[ky * k + kx];
              if (wv >= 0.0) {
                child.at(ic, iy, ix) += scale * wv * in.at(ic, iy, ix);
              }
            }
          }
        }
      }
    }
  }
  return child;
}

FeatureMap excite_fc(const LayerSpec& layer, const FeatureMap& in, const FeatureMap& parent) {
  FeatureMap child(layer.in_channels, 1, 1);
  for (int o = 0; o < layer.out_channels; ++o) {
    const double p = parent.values[o];
    if (p == 0.0) {
      continue;
    }
    const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in_channels;
    double denom = 0.0;
    for (int i = 0; i < layer.in_channels; ++i) {
      if (w[i] >= 0.0) {
        denom += w[i] * in.values[i];
      }
    }
    if (denom <= 0.0) {
      continue;
    }
    const double scale = p / denom;
    for (int i = 0; i < layer.in_channels; ++i) {
      if (w[i] >= 0.0) {
        child.values[i] += scale * w[i] * in.values[i];
      }
    }
  }
  return child;
}

// GAP children share one uniform positive weight, so each channel's mass
// splits proportionally to the activations themselves.
FeatureMap excite_gap(const FeatureMap& in, const FeatureMap& parent) {
  FeatureMap child(in.channels, in.height, in.width);
  const std::size_t plane = static_cast<std::size_t>(in.height) * in.width;
  for (int c = 0; c < in.channels; ++c) {
    const double p = parent.values[c];
    if (p == 0.0) {
      continue;
    }
    const double* src = in.plane(c);
    double denom = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      denom += src[i];
    }
    if (denom <= 0.0) {
      continue;
    }
    double* dst = child.plane(c);
    const double scale = p / denom;
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = scale * src[i];
    }
  }
  return child;
}

FeatureMap excite_avg_pool(const LayerSpec& layer, const FeatureMap& in,
                           const FeatureMap& parent) {
  FeatureMap child(in.channels, in.height, in.width);
  for (int c = 0; c < in.channels; ++c) {
    for (int oy = 0; oy < parent.height; ++oy) {
      for (int ox = 0; ox < parent.width; ++ox) {
        const double p = parent.at(c, oy, ox);
        if (p == 0.0) {
          continue;
        }
        double denom = 0.0;
        for (int ky = 0; ky < layer.kernel; ++ky) {
          for (int kx = 0; kx < layer.kernel; ++kx) {
            denom += in.at(c, oy * layer.stride + ky, ox * layer.stride + kx);
          }
        }
        if (denom <= 0.0) {
          continue;
        }
        const double scale = p / denom;
        for (int ky = 0; ky < layer.kernel; ++ky) {
          for (int kx = 0; kx < layer.kernel; ++kx) {
            child.at(c, oy * layer.stride + ky, ox * layer.stride + kx) +=
                scale * in.at(c, oy * layer.stride + ky, ox * layer.stride + kx);
          }
        }
      }
    }
  }
  return child;
}

// Winner-take-all: a pooled output's mass goes to the largest child in its
// window, split equally across exact ties.
FeatureMap excite_max_pool(const LayerSpec& layer, const FeatureMap& in,
                           const FeatureMap& parent) {
  FeatureMap child(in.channels, in.height, in.width);
  for (int c = 0; c < in.channels; ++c) {
    for (int oy = 0; oy < parent.height; ++oy) {
      for (int ox = 0; ox < parent.width; ++ox) {
        const double p = parent.at(c, oy, ox);
        if (p == 0.0) {
          continue;
        }
        double best = -std::numeric_limits<double>::infinity();
        int tie_count = 0;
        for (int ky = 0; ky < layer.kernel; ++ky) {
          for (int kx = 0; kx < layer.kernel; ++kx) {
            const double v = in.at(c, oy * layer.stride + ky, ox * layer.stride + kx);
            if (v > best) {
              best = v;
              tie_count = 1;
            } else if (v == best) {
              ++tie_count;
            }
          }
        }
        const double share = p / tie_count;
        for (int ky = 0; ky < layer.kernel; ++ky) {
          for (int kx = 0; kx < layer.kernel; ++kx) {
            if (in.at(c, oy * layer.stride + ky, ox * layer.stride + kx) == best) {
              child.at(c, oy * layer.stride + ky, ox * layer.stride + kx) += share;
            }
          }
        }
      }
    }
  }
  return child;
}

}  // namespace

double total_mass(const FeatureMap& probs) {
  double sum = 0.0;
  for (const double v : probs.values) {
    sum += v;
  }
  return sum;
}

AttentionMap forward_attention(const Network& net, const ActivationTrace& trace, int k) {
  if (net.head != HeadKind::kClassifier) {
    throw std::invalid_argument("forward_attention: classifier-headed network required");
  }
  if (k < 1 || k > net.class_count) {
    throw std::invalid_argument("forward_attention: class out of range");
  }
  const int pre_gap = net.pre_gap_layer();
  if (pre_gap < 0 || static_cast<std::size_t>(pre_gap) >= trace.outputs.size()) {
    throw std::invalid_argument("forward_attention: trace lacks the pre-GAP entry");
  }
  const FeatureMap& features = trace.outputs[pre_gap];
  const LayerSpec& fc = net.layers[net.fc_layer()];
  if (fc.in_channels != features.channels) {
    throw std::invalid_argument("forward_attention: fc width does not match pre-GAP channels");
  }
  AttentionMap out;
  out.class_id = k;
  out.map = FeatureMap(1, features.height, features.width);
  const double* w = fc.weights.data() + static_cast<std::size_t>(k - 1) * fc.in_channels;
  const std::size_t plane = static_cast<std::size_t>(features.height) * features.width;
  for (int c = 0; c < features.channels; ++c) {
    const double wc = w[c];
    const double* src = features.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      out.map.values[i] += wc * src[i];
    }
  }
  return out;
}

ExcitationState propagate_excitation(const Network& net, const ActivationTrace& trace, int k,
                                     int stop_layer) {
  if (net.head != HeadKind::kClassifier) {
    throw std::invalid_argument("propagate_excitation: classifier-headed network required");
  }
  const int last = static_cast<int>(net.layers.size()) - 1;
  if (stop_layer < -1 || stop_layer >= last) {
    throw std::invalid_argument("propagate_excitation: tap must lie below the output layer");
  }
  if (k < 1 || k > net.class_count) {
    throw std::invalid_argument("propagate_excitation: class out of range");
  }

  ExcitationState state;
  FeatureMap prob(net.class_count, 1, 1);
  prob.values[k - 1] = 1.0;  // one-hot start at the output layer
  state.layer_indices.push_back(last);
  state.probabilities.push_back(prob);

  for (int li = last; li > stop_layer; --li) {
    const LayerSpec& layer = net.layers[li];
    const FeatureMap& in = trace.layer_input(li);
    FeatureMap next;
    switch (layer.kind) {
      case LayerKind::kSoftmax:
      case LayerKind::kRelu:
        next = prob;  // monotone elementwise maps pass probability through
        break;
      case LayerKind::kFullyConnected:
        next = excite_fc(layer, in, prob);
        break;
      case LayerKind::kGlobalAvgPool:
        next = excite_gap(in, prob);
        break;
      case LayerKind::kAvgPool:
        next = excite_avg_pool(layer, in, prob);
        break;
      case LayerKind::kMaxPool:
        next = excite_max_pool(layer, in, prob);
        break;
      case LayerKind::kConv:
        next = excite_conv(layer, in, prob);
        break;
      default:
        throw std::invalid_argument("propagate_excitation: unsupported layer kind in path");
    }
    prob = std::move(next);
    state.layer_indices.push_back(li - 1);
    state.probabilities.push_back(prob);
  }
  return state;
}

AttentionMap excitation_backward(const Network& net, const ActivationTrace& trace, int k,
                                 int tap_layer) {
  if (tap_layer < 0) {
    throw std::invalid_argument("excitation_backward: tap must be a layer index");
  }
  const ExcitationState state = propagate_excitation(net, trace, k, tap_layer);
  const FeatureMap& prob = state.probabilities.back();
  AttentionMap out;
  out.class_id = k;
  out.map = FeatureMap(1, prob.height, prob.width);
  const std::size_t plane = static_cast<std::size_t>(prob.height) * prob.width;
  for (int c = 0; c < prob.channels; ++c) {
    const double* src = prob.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      out.map.values[i] += src[i];
    }
  }
  return out;
}

AttentionMap fuse(const AttentionMap& forward_map, const AttentionMap& shallow,
                  const AttentionMap& deep, double lambda1, double lambda2, int forward_factor,
                  int shallow_factor, int deep_factor) {
  const FeatureMap f = minmax_normalize(bilinear_upsample(forward_map.map, forward_factor));
  const FeatureMap bs = minmax_normalize(bilinear_upsample(shallow.map, shallow_factor));
  const FeatureMap bd = minmax_normalize(bilinear_upsample(deep.map, deep_factor));
  if (!f.same_shape(bs) || !f.same_shape(bd)) {
    throw config_error("fuse: maps do not share a resolution after upsampling");
  }
  AttentionMap out;
  out.class_id = forward_map.class_id;
  out.map = FeatureMap(1, f.height, f.width);
  for (std::size_t i = 0; i < out.map.values.size(); ++i) {
    out.map.values[i] = lambda1 * f.values[i] + lambda2 * bs.values[i] * bd.values[i];
  }
  out.map = minmax_normalize(out.map);
  return out;
}

AttentionBundle compute_attention(const Network& net, const FeatureMap& image, int tag,
                                  double lambda1, double lambda2) {
  if (net.tap_points.size() != 2) {
    throw config_error("compute_attention: network must declare two tap points");
  }
  const ActivationTrace trace = forward(net, image);
  AttentionBundle bundle;
  bundle.forward_map = forward_attention(net, trace, tag);
  bundle.shallow = excitation_backward(net, trace, tag, net.tap_points[0]);
  bundle.deep = excitation_backward(net, trace, tag, net.tap_points[1]);
  const int f_factor = cumulative_stride(net, net.pre_gap_layer());
  const int s_factor = cumulative_stride(net, net.tap_points[0]);
  const int d_factor = cumulative_stride(net, net.tap_points[1]);
  bundle.fused = fuse(bundle.forward_map, bundle.shallow, bundle.deep, lambda1, lambda2, f_factor,
                      s_factor, d_factor);
  return bundle;
}

}  // namespace tagseg
