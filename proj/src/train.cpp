#include "tagseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tagseg/errors.hpp"
#include "tagseg/parallel.hpp"
#include "tagseg/rng.hpp"

namespace tagseg {

namespace {

// Gradient of a layer's output pushed to its input plus parameter gradients.
FeatureMap backward_layer(const LayerSpec& layer, const FeatureMap& in, const FeatureMap& grad_out,
                          std::vector<double>& gw, std::vector<double>& gb) {
  switch (layer.kind) {
    case LayerKind::kConv: {
      FeatureMap grad_in(in.channels, in.height, in.width);
      const int oh = grad_out.height;
      const int ow = grad_out.width;
      const std::size_t plane = static_cast<std::size_t>(oh) * ow;
      const std::size_t taps =
          static_cast<std::size_t>(layer.in_channels) * layer.kernel * layer.kernel;
      thread_local std::vector<double> col;
      thread_local std::vector<double> grad_col;
      detail::im2col(in, layer.kernel, layer.stride, layer.pad, oh, ow, col);
      grad_col.assign(taps * plane, 0.0);
      for (int oc = 0; oc < layer.out_channels; ++oc) {
        const double* gsrc = grad_out.plane(oc);
        if (!layer.bias.empty()) {
          double sum = 0.0;
#pragma omp simd reduction(+ : sum)
          for (std::size_t i = 0; i < plane; ++i) {
            sum += gsrc[i];
          }
          gb[oc] += sum;
        }
        const double* w = layer.weights.data() + static_cast<std::size_t>(oc) * taps;
        double* w_grad = gw.data() + static_cast<std::size_t>(oc) * taps;
        for (std::size_t q = 0; q < taps; ++q) {
          const double* col_row = col.data() + q * plane;
          double* gcol_row = grad_col.data() + q * plane;
          const double wv = w[q];
          double acc = 0.0;
#pragma omp simd reduction(+ : acc)
          for (std::size_t i = 0; i < plane; ++i) {
            acc += col_row[i] * gsrc[i];
            gcol_row[i] += wv * gsrc[i];
          }
          w_grad[q] += acc;
        }
      }
      detail::col2im_add(grad_col, layer.kernel, layer.stride, layer.pad, oh, ow, grad_in);
      return grad_in;
    }
    case LayerKind::kRelu: {
      FeatureMap grad_in = grad_out;
      for (std::size_t i = 0; i < grad_in.values.size(); ++i) {
        if (in.values[i] <= 0.0) {
          grad_in.values[i] = 0.0;
        }
      }
      return grad_in;
    }
    case LayerKind::kMaxPool: {
      FeatureMap grad_in(in.channels, in.height, in.width);
      for (int c = 0; c < in.channels; ++c) {
        const double* src = in.plane(c);
        const double* gsrc = grad_out.plane(c);
        double* gdst = grad_in.plane(c);
        for (int oy = 0; oy < grad_out.height; ++oy) {
          for (int ox = 0; ox < grad_out.width; ++ox) {
            int best_y = oy * layer.stride;
            int best_x = ox * layer.stride;
            double best = src[static_cast<std::size_t>(best_y) * in.width + best_x];
            for (int ky = 0; ky < layer.kernel; ++ky) {
              for (int kx = 0; kx < layer.kernel; ++kx) {
                const int iy = oy * layer.stride + ky;
                const int ix = ox * layer.stride + kx;
                const double v = src[static_cast<std::size_t>(iy) * in.width + ix];
                if (v > best) {
                  best = v;
                  best_y = iy;
                  best_x = ix;
                }
              }
            }
            gdst[static_cast<std::size_t>(best_y) * in.width + best_x] +=
                gsrc[static_cast<std::size_t>(oy) * grad_out.width + ox];
          }
        }
      }
      return grad_in;
    }
    case LayerKind::kAvgPool: {
      FeatureMap grad_in(in.channels, in.height, in.width);
      const double inv = 1.0 / (layer.kernel * layer.kernel);
      for (int c = 0; c < in.channels; ++c) {
        const double* gsrc = grad_out.plane(c);
        double* gdst = grad_in.plane(c);
        for (int oy = 0; oy < grad_out.height; ++oy) {
          for (int ox = 0; ox < grad_out.width; ++ox) {
            const double g = gsrc[static_cast<std::size_t>(oy) * grad_out.width + ox] * inv;
            for (int ky = 0; ky < layer.kernel; ++ky) {
              for (int kx = 0; kx < layer.kernel; ++kx) {
                gdst[static_cast<std::size_t>(oy * layer.stride + ky) * in.width +
                     ox * layer.stride + kx] += g;
              }
            }
          }
        }
      }
      return grad_in;
    }
    case LayerKind::kGlobalAvgPool: {
      FeatureMap grad_in(in.channels, in.height, in.width);
      const double inv = 1.0 / (static_cast<double>(in.height) * in.width);
      const std::size_t plane = static_cast<std::size_t>(in.height) * in.width;
      for (int c = 0; c < in.channels; ++c) {
        const double g = grad_out.values[c] * inv;
        double* gdst = grad_in.plane(c);
        for (std::size_t i = 0; i < plane; ++i) {
          gdst[i] = g;
        }
      }
      return grad_in;
    }
    case LayerKind::kFullyConnected: {
      FeatureMap grad_in(layer.in_channels, 1, 1);
      for (int o = 0; o < layer.out_channels; ++o) {
        const double g = grad_out.values[o];
        const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in_channels;
        double* wg = gw.data() + static_cast<std::size_t>(o) * layer.in_channels;
        for (int i = 0; i < layer.in_channels; ++i) {
          grad_in.values[i] += w[i] * g;
          wg[i] += in.values[i] * g;
        }
        if (!layer.bias.empty()) {
          gb[o] += g;
        }
      }
      return grad_in;
    }
    case LayerKind::kUpsampleToInput: {
      FeatureMap grad_in(in.channels, in.height, in.width);
      const BilinearAxis ax = bilinear_axis(in.width, layer.kernel);
      const BilinearAxis ay = bilinear_axis(in.height, layer.kernel);
      for (int c = 0; c < in.channels; ++c) {
        const double* gsrc = grad_out.plane(c);
        double* gdst = grad_in.plane(c);
        for (int oy = 0; oy < grad_out.height; ++oy) {
          const double dy = ay.frac[oy];
          for (int ox = 0; ox < grad_out.width; ++ox) {
            const double dx = ax.frac[ox];
            const double g = gsrc[static_cast<std::size_t>(oy) * grad_out.width + ox];
            gdst[static_cast<std::size_t>(ay.i0[oy]) * in.width + ax.i0[ox]] +=
                (1.0 - dy) * (1.0 - dx) * g;
            gdst[static_cast<std::size_t>(ay.i0[oy]) * in.width + ax.i1[ox]] +=
                (1.0 - dy) * dx * g;
            gdst[static_cast<std::size_t>(ay.i1[oy]) * in.width + ax.i0[ox]] +=
                dy * (1.0 - dx) * g;
            gdst[static_cast<std::size_t>(ay.i1[oy]) * in.width + ax.i1[ox]] += dy * dx * g;
          }
        }
      }
      return grad_in;
    }
    case LayerKind::kSoftmax:
    case LayerKind::kPerPixelSoftmax:
      throw std::logic_error("softmax layers are folded into the loss and never backpropagated");
  }
  throw std::logic_error("unreachable layer kind");
}

// Backpropagates grad wrt the output of `top_layer` down to the input.
void backprop_from(const Network& net, const ActivationTrace& trace, int top_layer,
                   FeatureMap grad, Gradients& grads) {
  for (int li = top_layer; li >= 0; --li) {
    grad = backward_layer(net.layers[li], trace.layer_input(li), grad, grads.weights[li],
                          grads.bias[li]);
  }
}

// Loss plus logits-gradient for one classifier sample; softmax folded.
double classifier_sample_gradient(const Network& net, const ClassifierSample& s,
                                  Gradients& grads) {
  const ActivationTrace trace = forward(net, s.image);
  const FeatureMap& probs = trace.outputs.back();
  if (s.label < 1 || s.label > net.class_count) {
    throw std::invalid_argument("classifier label out of range: " + std::to_string(s.label));
  }
  const double loss = -std::log(probs.values[s.label - 1]);
  FeatureMap grad = probs;
  grad.values[s.label - 1] -= 1.0;
  backprop_from(net, trace, static_cast<int>(net.layers.size()) - 2, std::move(grad), grads);
  return loss;
}

double segmenter_sample_gradient(const Network& net, const SegmenterSample& s, Gradients& grads) {
  const ActivationTrace trace = forward(net, s.image);
  const FeatureMap& probs = trace.outputs.back();
  if (!(s.mask.height == probs.height && s.mask.width == probs.width)) {
    throw std::invalid_argument("segmenter mask size does not match image");
  }
  const std::size_t plane = static_cast<std::size_t>(probs.height) * probs.width;
  std::size_t valid = 0;
  for (const int code : s.mask.labels) {
    if (code != kIgnoreLabel) {
      ++valid;
    }
  }
  if (valid == 0) {
    return 0.0;  // fully ignored mask contributes nothing
  }
  const double inv = 1.0 / static_cast<double>(valid);
  double loss = 0.0;
  FeatureMap grad(probs.channels, probs.height, probs.width);
  for (std::size_t p = 0; p < plane; ++p) {
    const int code = s.mask.labels[p];
    if (code == kIgnoreLabel) {
      continue;
    }
    if (code < 0 || code > net.class_count) {
      throw std::invalid_argument("segmenter mask code out of range: " + std::to_string(code));
    }
    loss -= std::log(probs.values[static_cast<std::size_t>(code) * plane + p]) * inv;
    for (int c = 0; c < probs.channels; ++c) {
      const std::size_t idx = static_cast<std::size_t>(c) * plane + p;
      grad.values[idx] = (probs.values[idx] - (c == code ? 1.0 : 0.0)) * inv;
    }
  }
  backprop_from(net, trace, static_cast<int>(net.layers.size()) - 2, std::move(grad), grads);
  return loss;
}

}  // namespace

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  g.weights.resize(net.layers.size());
  g.bias.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    g.weights[i].assign(net.layers[i].weights.size(), 0.0);
    g.bias[i].assign(net.layers[i].bias.size(), 0.0);
  }
  return g;
}

void Gradients::add(const Gradients& other) {
  for (std::size_t li = 0; li < weights.size(); ++li) {
    for (std::size_t i = 0; i < weights[li].size(); ++i) {
      weights[li][i] += other.weights[li][i];
    }
    for (std::size_t i = 0; i < bias[li].size(); ++i) {
      bias[li][i] += other.bias[li][i];
    }
  }
}

double classifier_loss(const Network& net, const FeatureMap& image, int label) {
  const ActivationTrace trace = forward(net, image);
  return -std::log(trace.outputs.back().values[label - 1]);
}

double classifier_batch_loss(const Network& net, const ClassifierData& data,
                             const std::vector<std::size_t>& indices) {
  double sum = 0.0;
  for (const std::size_t i : indices) {
    const ClassifierSample s = data.sample(i);
    sum += classifier_loss(net, s.image, s.label);
  }
  return sum;
}

double segmenter_loss(const Network& net, const FeatureMap& image, const LabelImage& mask) {
  const FeatureMap probs = segment_probs(net, image);
  const std::size_t plane = static_cast<std::size_t>(probs.height) * probs.width;
  std::size_t valid = 0;
  double loss = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    const int code = mask.labels[p];
    if (code == kIgnoreLabel) {
      continue;
    }
    ++valid;
    loss -= std::log(probs.values[static_cast<std::size_t>(code) * plane + p]);
  }
  return valid == 0 ? 0.0 : loss / static_cast<double>(valid);
}

double segmenter_batch_loss(const Network& net, const SegmenterData& data,
                            const std::vector<std::size_t>& indices) {
  double sum = 0.0;
  for (const std::size_t i : indices) {
    const SegmenterSample s = data.sample(i);
    sum += segmenter_loss(net, s.image, s.mask);
  }
  return sum;
}

namespace {

// Sums per-sample gradients in index order so the reduction is identical for
// any thread count.
template <typename SampleGradFn>
Gradients batch_gradient(const Network& net, std::size_t count, int threads,
                         SampleGradFn&& sample_grad, double* loss_out) {
  std::vector<Gradients> per_sample(count);
  std::vector<double> per_loss(count, 0.0);
  parallel_for(count, threads, [&](std::size_t i) {
    per_sample[i] = Gradients::zeros_like(net);
    per_loss[i] = sample_grad(i, per_sample[i]);
  });
  Gradients total = Gradients::zeros_like(net);
  double loss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    total.add(per_sample[i]);
    loss += per_loss[i];
  }
  if (loss_out != nullptr) {
    *loss_out = loss;
  }
  return total;
}

}  // namespace

Gradients classifier_gradient(const Network& net, const ClassifierData& data,
                              const std::vector<std::size_t>& indices, int threads,
                              double* loss_out) {
  return batch_gradient(
      net, indices.size(), threads,
      [&](std::size_t i, Gradients& g) {
        return classifier_sample_gradient(net, data.sample(indices[i]), g);
      },
      loss_out);
}

Gradients segmenter_gradient(const Network& net, const SegmenterData& data,
                             const std::vector<std::size_t>& indices, int threads,
                             double* loss_out) {
  return batch_gradient(
      net, indices.size(), threads,
      [&](std::size_t i, Gradients& g) {
        return segmenter_sample_gradient(net, data.sample(indices[i]), g);
      },
      loss_out);
}

namespace {

std::vector<std::size_t> probe_indices(std::size_t n) {
  std::vector<std::size_t> idx(std::min<std::size_t>(n, 64));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  return idx;
}

template <typename GradFn, typename LossFn>
Network sgd_loop(Network net, std::size_t data_size, const TrainSchedule& schedule,
                 GradFn&& batch_grad, LossFn&& probe_loss, TrainStats* stats) {
  if (data_size == 0) {
    throw std::invalid_argument("training requires a nonempty dataset");
  }
  const std::vector<std::size_t> probe = probe_indices(data_size);
  TrainStats local;
  local.probe_loss_before = probe_loss(net, probe);

  Gradients velocity = Gradients::zeros_like(net);
  Rng rng(derive_seed(schedule.seed, "batch-sampling"));
  std::vector<std::size_t> batch(static_cast<std::size_t>(schedule.batch_size));
  for (int iter = 0; iter < schedule.iterations; ++iter) {
    for (auto& b : batch) {
      b = static_cast<std::size_t>(rng.next_below(data_size));
    }
    double loss = 0.0;
    const Gradients grads = batch_grad(net, batch, &loss);
    if (!std::isfinite(loss)) {
      throw divergence_error("training diverged at iteration " + std::to_string(iter) +
                             " (batch loss = " + std::to_string(loss) + ")");
    }
    local.final_batch_loss = loss;
    // The learning rate applies to the batch-mean gradient; gradients
    // themselves keep the sum convention.
    const double step = schedule.learning_rate / static_cast<double>(batch.size());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      LayerSpec& layer = net.layers[li];
      for (std::size_t i = 0; i < layer.weights.size(); ++i) {
        double& v = velocity.weights[li][i];
        v = schedule.momentum * v - step * grads.weights[li][i];
        layer.weights[i] += v;
      }
      for (std::size_t i = 0; i < layer.bias.size(); ++i) {
        double& v = velocity.bias[li][i];
        v = schedule.momentum * v - step * grads.bias[li][i];
        layer.bias[i] += v;
      }
    }
  }
  local.probe_loss_after = probe_loss(net, probe);
  if (stats != nullptr) {
    *stats = local;
  }
  return net;
}

}  // namespace

Network train_classifier(Network net, const ClassifierData& data, const TrainSchedule& schedule,
                         TrainStats* stats) {
  if (net.head != HeadKind::kClassifier) {
    throw std::invalid_argument("train_classifier: network does not have a classifier head");
  }
  return sgd_loop(
      std::move(net), data.size(), schedule,
      [&](const Network& n, const std::vector<std::size_t>& idx, double* loss) {
        return classifier_gradient(n, data, idx, schedule.threads, loss);
      },
      [&](const Network& n, const std::vector<std::size_t>& idx) {
        return classifier_batch_loss(n, data, idx);
      },
      stats);
}

Network train_segmenter(Network net, const SegmenterData& data, const TrainSchedule& schedule,
                        TrainStats* stats) {
  if (net.head != HeadKind::kSegmenter) {
    throw std::invalid_argument("train_segmenter: network does not have a segmenter head");
  }
  return sgd_loop(
      std::move(net), data.size(), schedule,
      [&](const Network& n, const std::vector<std::size_t>& idx, double* loss) {
        return segmenter_gradient(n, data, idx, schedule.threads, loss);
      },
      [&](const Network& n, const std::vector<std::size_t>& idx) {
        return segmenter_batch_loss(n, data, idx);
      },
      stats);
}

}  // namespace tagseg
