#include "tagseg/net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "tagseg/errors.hpp"
#include "tagseg/rng.hpp"

namespace tagseg {

namespace {

int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

void softmax_inplace(double* v, int n) {
  double mx = v[0];
  for (int i = 1; i < n; ++i) {
    mx = std::max(mx, v[i]);
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    sum += v[i];
  }
  for (int i = 0; i < n; ++i) {
    v[i] /= sum;
  }
}

FeatureMap conv_forward(const LayerSpec& layer, const FeatureMap& in) {
  const int oh = conv_out_dim(in.height, layer.kernel, layer.stride, layer.pad);
  const int ow = conv_out_dim(in.width, layer.kernel, layer.stride, layer.pad);
  FeatureMap out(layer.out_channels, oh, ow);
  thread_local std::vector<double> col;
  detail::im2col(in, layer.kernel, layer.stride, layer.pad, oh, ow, col);
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t taps =
      static_cast<std::size_t>(layer.in_channels) * layer.kernel * layer.kernel;
  for (int oc = 0; oc < layer.out_channels; ++oc) {
    double* dst = out.plane(oc);
    if (!layer.bias.empty()) {
      const double b = layer.bias[oc];
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = b;
      }
    }
    const double* w = layer.weights.data() + static_cast<std::size_t>(oc) * taps;
    for (std::size_t q = 0; q < taps; ++q) {
      const double wv = w[q];
      const double* row = col.data() + q * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] += wv * row[i];
      }
    }
  }
  return out;
}

FeatureMap max_pool_forward(const LayerSpec& layer, const FeatureMap& in) {
  const int oh = conv_out_dim(in.height, layer.kernel, layer.stride, 0);
  const int ow = conv_out_dim(in.width, layer.kernel, layer.stride, 0);
  FeatureMap out(in.channels, oh, ow);
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.plane(c);
    double* dst = out.plane(c);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        for (int ky = 0; ky < layer.kernel; ++ky) {
          const double* row = src + static_cast<std::size_t>(oy * layer.stride + ky) * in.width;
          for (int kx = 0; kx < layer.kernel; ++kx) {
            best = std::max(best, row[ox * layer.stride + kx]);
          }
        }
        dst[static_cast<std::size_t>(oy) * ow + ox] = best;
      }
    }
  }
  return out;
}

FeatureMap avg_pool_forward(const LayerSpec& layer, const FeatureMap& in) {
  const int oh = conv_out_dim(in.height, layer.kernel, layer.stride, 0);
  const int ow = conv_out_dim(in.width, layer.kernel, layer.stride, 0);
  FeatureMap out(in.channels, oh, ow);
  const double inv = 1.0 / (layer.kernel * layer.kernel);
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.plane(c);
    double* dst = out.plane(c);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double sum = 0.0;
        for (int ky = 0; ky < layer.kernel; ++ky) {
          const double* row = src + static_cast<std::size_t>(oy * layer.stride + ky) * in.width;
          for (int kx = 0; kx < layer.kernel; ++kx) {
            sum += row[ox * layer.stride + kx];
          }
        }
        dst[static_cast<std::size_t>(oy) * ow + ox] = sum * inv;
      }
    }
  }
  return out;
}

}  // namespace

void check_layer_input(const LayerSpec& layer, const FeatureMap& in, int layer_index) {
  const std::string where = "layer " + std::to_string(layer_index);
  switch (layer.kind) {
    case LayerKind::kConv:
      if (in.channels != layer.in_channels) {
        throw config_error(where + ": conv expects " + std::to_string(layer.in_channels) +
                           " channels, got " + std::to_string(in.channels));
      }
      if (conv_out_dim(in.height, layer.kernel, layer.stride, layer.pad) < 1 ||
          conv_out_dim(in.width, layer.kernel, layer.stride, layer.pad) < 1) {
        throw config_error(where + ": conv kernel larger than padded input");
      }
      if (layer.weights.size() != static_cast<std::size_t>(layer.out_channels) *
                                      layer.in_channels * layer.kernel * layer.kernel) {
        throw config_error(where + ": conv weight array has wrong size");
      }
      break;
    case LayerKind::kFullyConnected:
      if (in.height != 1 || in.width != 1 || in.channels != layer.in_channels) {
        throw config_error(where + ": fully-connected expects a " +
                           std::to_string(layer.in_channels) + "x1x1 input");
      }
      if (layer.weights.size() !=
          static_cast<std::size_t>(layer.out_channels) * layer.in_channels) {
        throw config_error(where + ": fc weight array has wrong size");
      }
      break;
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      if (in.height < layer.kernel || in.width < layer.kernel) {
        throw config_error(where + ": pool window larger than input");
      }
      break;
    case LayerKind::kSoftmax:
      if (in.height != 1 || in.width != 1) {
        throw config_error(where + ": softmax expects a vector input");
      }
      break;
    default:
      break;
  }
}

ActivationTrace forward(const Network& net, const FeatureMap& image) {
  if (image.channels != net.input_channels) {
    throw config_error("forward: image has " + std::to_string(image.channels) +
                       " channels, network expects " + std::to_string(net.input_channels));
  }
  ActivationTrace trace;
  trace.input = image;
  trace.outputs.reserve(net.layers.size());
  const FeatureMap* cur = &trace.input;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& layer = net.layers[li];
    check_layer_input(layer, *cur, static_cast<int>(li));
    FeatureMap out;
    switch (layer.kind) {
      case LayerKind::kConv:
        out = conv_forward(layer, *cur);
        break;
      case LayerKind::kRelu: {
        out = *cur;
        for (double& v : out.values) {
          v = v > 0.0 ? v : 0.0;
        }
        break;
      }
      case LayerKind::kMaxPool:
        out = max_pool_forward(layer, *cur);
        break;
      case LayerKind::kAvgPool:
        out = avg_pool_forward(layer, *cur);
        break;
      case LayerKind::kGlobalAvgPool: {
        out = FeatureMap(cur->channels, 1, 1);
        const double inv = 1.0 / (static_cast<double>(cur->height) * cur->width);
        for (int c = 0; c < cur->channels; ++c) {
          double sum = 0.0;
          const double* src = cur->plane(c);
          const std::size_t n = static_cast<std::size_t>(cur->height) * cur->width;
          for (std::size_t i = 0; i < n; ++i) {
            sum += src[i];
          }
          out.values[c] = sum * inv;
        }
        break;
      }
      case LayerKind::kFullyConnected: {
        out = FeatureMap(layer.out_channels, 1, 1);
        for (int o = 0; o < layer.out_channels; ++o) {
          double sum = layer.bias.empty() ? 0.0 : layer.bias[o];
          const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in_channels;
          for (int i = 0; i < layer.in_channels; ++i) {
            sum += w[i] * cur->values[i];
          }
          out.values[o] = sum;
        }
        break;
      }
      case LayerKind::kSoftmax: {
        out = *cur;
        softmax_inplace(out.values.data(), out.channels);
        break;
      }
      case LayerKind::kPerPixelSoftmax: {
        out = *cur;
        const std::size_t plane = static_cast<std::size_t>(out.height) * out.width;
        std::vector<double> logits(out.channels);
        for (std::size_t p = 0; p < plane; ++p) {
          for (int c = 0; c < out.channels; ++c) {
            logits[c] = out.values[static_cast<std::size_t>(c) * plane + p];
          }
          softmax_inplace(logits.data(), out.channels);
          for (int c = 0; c < out.channels; ++c) {
            out.values[static_cast<std::size_t>(c) * plane + p] = logits[c];
          }
        }
        break;
      }
      case LayerKind::kUpsampleToInput:
        out = bilinear_upsample(*cur, layer.kernel);
        if (out.height != image.height || out.width != image.width) {
          throw config_error("layer " + std::to_string(li) +
                             ": upsample does not reach the input resolution");
        }
        break;
    }
    trace.outputs.push_back(std::move(out));
    cur = &trace.outputs.back();
  }
  return trace;
}

std::vector<double> classify(const Network& net, const FeatureMap& image) {
  if (net.head != HeadKind::kClassifier) {
    throw std::invalid_argument("classify: network does not have a classifier head");
  }
  const ActivationTrace trace = forward(net, image);
  const FeatureMap& probs = trace.outputs.back();
  return std::vector<double>(probs.values.begin(), probs.values.end());
}

FeatureMap segment_probs(const Network& net, const FeatureMap& image) {
  if (net.head != HeadKind::kSegmenter) {
    throw std::invalid_argument("segment_probs: network does not have a segmenter head");
  }
  ActivationTrace trace = forward(net, image);
  return std::move(trace.outputs.back());
}

LabelImage segment_predict(const Network& net, const FeatureMap& image) {
  const FeatureMap probs = segment_probs(net, image);
  LabelImage out(probs.height, probs.width);
  const std::size_t plane = static_cast<std::size_t>(probs.height) * probs.width;
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    double best_v = probs.values[p];
    for (int c = 1; c < probs.channels; ++c) {
      const double v = probs.values[static_cast<std::size_t>(c) * plane + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.labels[p] = best;
  }
  return out;
}

int Network::gap_layer() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::kGlobalAvgPool) {
      return static_cast<int>(i);
    }
  }
  throw std::invalid_argument("network has no global-average-pool layer");
}

int Network::fc_layer() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::kFullyConnected) {
      return static_cast<int>(i);
    }
  }
  throw std::invalid_argument("network has no fully-connected layer");
}

namespace {

LayerSpec make_conv(int in_ch, int out_ch, int kernel, int stride, int pad, bool with_bias,
                    Rng& rng) {
  LayerSpec layer;
  layer.kind = LayerKind::kConv;
  layer.in_channels = in_ch;
  layer.out_channels = out_ch;
  layer.kernel = kernel;
  layer.stride = stride;
  layer.pad = pad;
  const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
  const double fan_out = static_cast<double>(out_ch) * kernel * kernel;
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  layer.weights.resize(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel);
  for (double& w : layer.weights) {
    w = rng.uniform(-a, a);
  }
  if (with_bias) {
    layer.bias.assign(out_ch, 0.0);
  }
  return layer;
}

LayerSpec make_simple(LayerKind kind, int kernel = 0, int stride = 1) {
  LayerSpec layer;
  layer.kind = kind;
  layer.kernel = kernel;
  layer.stride = stride;
  return layer;
}

LayerSpec make_fc(int in_ch, int out_ch, bool with_bias, Rng& rng) {
  LayerSpec layer;
  layer.kind = LayerKind::kFullyConnected;
  layer.in_channels = in_ch;
  layer.out_channels = out_ch;
  const double a = std::sqrt(6.0 / (in_ch + out_ch));
  layer.weights.resize(static_cast<std::size_t>(out_ch) * in_ch);
  for (double& w : layer.weights) {
    w = rng.uniform(-a, a);
  }
  if (with_bias) {
    layer.bias.assign(out_ch, 0.0);
  }
  return layer;
}

void append_trunk(Network& net, int input_channels, Rng& rng) {
  const int widths[3] = {8, 16, 32};
  int in_ch = input_channels;
  for (int block = 0; block < 3; ++block) {
    net.layers.push_back(make_conv(in_ch, widths[block], 3, 1, 1, true, rng));
    net.layers.push_back(make_simple(LayerKind::kRelu));
    net.layers.push_back(make_simple(LayerKind::kMaxPool, 2, 2));
    in_ch = widths[block];
  }
  net.tap_points = {2, 5};  // after blocks one and two
}

}  // namespace

Network make_classifier(int input_channels, int class_count, std::uint64_t seed) {
  Rng rng(seed);
  Network net;
  net.head = HeadKind::kClassifier;
  net.class_count = class_count;
  net.input_channels = input_channels;
  append_trunk(net, input_channels, rng);
  net.layers.push_back(make_simple(LayerKind::kGlobalAvgPool));
  net.layers.push_back(make_fc(32, class_count, /*with_bias=*/false, rng));
  net.layers.push_back(make_simple(LayerKind::kSoftmax));
  return net;
}

Network make_segmenter(int input_channels, int class_count, std::uint64_t seed) {
  Rng rng(seed);
  Network net;
  net.head = HeadKind::kSegmenter;
  net.class_count = class_count;
  net.input_channels = input_channels;
  append_trunk(net, input_channels, rng);
  net.layers.push_back(make_conv(32, class_count + 1, 1, 1, 0, true, rng));
  net.layers.push_back(make_simple(LayerKind::kUpsampleToInput, /*kernel=*/8));
  net.layers.push_back(make_simple(LayerKind::kPerPixelSoftmax));
  return net;
}

namespace detail {

void im2col(const FeatureMap& in, int kernel, int stride, int pad, int oh, int ow,
            std::vector<double>& col) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t taps = static_cast<std::size_t>(in.channels) * kernel * kernel;
  col.assign(taps * plane, 0.0);
  std::size_t q = 0;
  for (int ic = 0; ic < in.channels; ++ic) {
    const double* src = in.plane(ic);
    for (int ky = 0; ky < kernel; ++ky) {
      int oy_lo, oy_hi;
      tap_range(oh, in.height, stride, pad, ky, oy_lo, oy_hi);
      for (int kx = 0; kx < kernel; ++kx, ++q) {
        int ox_lo, ox_hi;
        tap_range(ow, in.width, stride, pad, kx, ox_lo, ox_hi);
        double* dst = col.data() + q * plane;
        for (int oy = oy_lo; oy < oy_hi; ++oy) {
          const double* row = src + static_cast<std::size_t>(oy * stride - pad + ky) * in.width;
          double* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (stride == 1) {
            const double* shifted = row - pad + kx;
            for (int ox = ox_lo; ox < ox_hi; ++ox) {
              drow[ox] = shifted[ox];
            }
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox) {
              drow[ox] = row[ox * stride - pad + kx];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& col, int kernel, int stride, int pad, int oh, int ow,
                FeatureMap& grad_in) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  std::size_t q = 0;
  for (int ic = 0; ic < grad_in.channels; ++ic) {
    double* dst = grad_in.plane(ic);
    for (int ky = 0; ky < kernel; ++ky) {
      int oy_lo, oy_hi;
      tap_range(oh, grad_in.height, stride, pad, ky, oy_lo, oy_hi);
      for (int kx = 0; kx < kernel; ++kx, ++q) {
        int ox_lo, ox_hi;
        tap_range(ow, grad_in.width, stride, pad, kx, ox_lo, ox_hi);
        const double* src = col.data() + q * plane;
        for (int oy = oy_lo; oy < oy_hi; ++oy) {
          double* row = dst + static_cast<std::size_t>(oy * stride - pad + ky) * grad_in.width;
          const double* srow = src + static_cast<std::size_t>(oy) * ow;
          if (stride == 1) {
            double* shifted = row - pad + kx;
            for (int ox = ox_lo; ox < ox_hi; ++ox) {
              shifted[ox] += srow[ox];
            }
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox) {
              row[ox * stride - pad + kx] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

int cumulative_stride(const Network& net, int layer_index) {
  int stride = 1;
  for (int i = 0; i <= layer_index; ++i) {
    const LayerSpec& layer = net.layers[i];
    if (layer.kind == LayerKind::kConv || layer.kind == LayerKind::kMaxPool ||
        layer.kind == LayerKind::kAvgPool) {
      stride *= layer.stride;
    }
  }
  return stride;
}

}  // namespace tagseg
