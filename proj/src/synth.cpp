#include "tagseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "tagseg/errors.hpp"
#include "tagseg/image_io.hpp"
#include "tagseg/rng.hpp"

namespace tagseg {

namespace {

std::vector<ClassStyle> default_styles(int class_count) {
  using Shape = ClassStyle::Shape;
  static const std::vector<ClassStyle> kPalette = {
      {Shape::kDisk, {0.70, 0.05, 0.05}, {1.00, 0.30, 0.30}},      // red disk
      {Shape::kSquare, {0.05, 0.55, 0.05}, {0.30, 0.95, 0.30}},    // green square
      {Shape::kTriangle, {0.05, 0.05, 0.65}, {0.35, 0.35, 1.00}},  // blue triangle
      {Shape::kRing, {0.70, 0.60, 0.05}, {1.00, 0.95, 0.25}},      // yellow ring
      {Shape::kCross, {0.65, 0.05, 0.60}, {1.00, 0.35, 0.95}},     // magenta cross
      {Shape::kDisk, {0.05, 0.60, 0.60}, {0.30, 1.00, 1.00}},      // cyan disk
      {Shape::kSquare, {0.75, 0.40, 0.05}, {1.00, 0.65, 0.25}},    // orange square
      {Shape::kTriangle, {0.45, 0.45, 0.45}, {0.75, 0.75, 0.75}},  // gray triangle
  };
  if (class_count > static_cast<int>(kPalette.size())) {
    throw config_error("synth_generate: built-in palette covers at most " +
                       std::to_string(kPalette.size()) + " classes");
  }
  return {kPalette.begin(), kPalette.begin() + class_count};
}

bool inside_shape(ClassStyle::Shape shape, double dy, double dx, double radius) {
  switch (shape) {
    case ClassStyle::Shape::kDisk:
      return dy * dy + dx * dx <= radius * radius;
    case ClassStyle::Shape::kSquare:
      return std::abs(dy) <= radius * 0.85 && std::abs(dx) <= radius * 0.85;
    case ClassStyle::Shape::kTriangle: {
      // Upward triangle inscribed in the radius.
      if (dy < -radius || dy > radius * 0.8) {
        return false;
      }
      const double half_width = (dy + radius) / 1.8 * 1.1;
      return std::abs(dx) <= half_width;
    }
    case ClassStyle::Shape::kRing: {
      const double r2 = dy * dy + dx * dx;
      return r2 <= radius * radius && r2 >= radius * radius * 0.3;
    }
    case ClassStyle::Shape::kCross: {
      const double arm = radius * 0.4;
      return (std::abs(dx) <= arm && std::abs(dy) <= radius) ||
             (std::abs(dy) <= arm && std::abs(dx) <= radius);
    }
  }
  return false;
}

void draw_object(FeatureMap& image, LabelImage& truth, const ClassStyle& style, int label,
                 double cy, double cx, double radius, Rng& rng) {
  std::array<double, 3> color{};
  for (int c = 0; c < 3; ++c) {
    color[c] = rng.uniform(style.color_lo[c], style.color_hi[c]);
  }
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y_hi = std::min(image.height - 1, static_cast<int>(std::ceil(cy + radius)));
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x_hi = std::min(image.width - 1, static_cast<int>(std::ceil(cx + radius)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      if (!inside_shape(style.shape, y - cy, x - cx, radius)) {
        continue;
      }
      for (int c = 0; c < 3; ++c) {
        const double v = color[c] + rng.uniform(-0.03, 0.03);
        image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
      truth.at(y, x) = label;
    }
  }
}

struct GeneratedImage {
  FeatureMap image;
  LabelImage truth;
  int true_class = 0;
  int tag = 0;
};

GeneratedImage generate_one(const SynthSpec& spec, const std::vector<ClassStyle>& styles,
                            std::uint64_t image_seed) {
  Rng rng(image_seed);
  const int n = spec.image_size;
  GeneratedImage out;
  out.image = FeatureMap(3, n, n);
  out.truth = LabelImage(n, n, 0);

  // Textured gray background with a soft illumination gradient.
  const double base = rng.uniform(0.35, 0.55);
  const double gx = rng.uniform(-0.08, 0.08);
  const double gy = rng.uniform(-0.08, 0.08);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double shade = base + gx * (static_cast<double>(x) / n - 0.5) +
                           gy * (static_cast<double>(y) / n - 0.5);
      for (int c = 0; c < 3; ++c) {
        out.image.at(c, y, x) = std::clamp(shade + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      }
    }
  }

  out.true_class = 1 + static_cast<int>(rng.next_below(spec.class_count));

  // Optional smaller distractor of another class, drawn first so the main
  // object stays on top.
  if (spec.class_count > 1 && rng.bernoulli(spec.distractor_rate)) {
    int other = 1 + static_cast<int>(rng.next_below(spec.class_count - 1));
    if (other >= out.true_class) {
      ++other;
    }
    const double radius = rng.uniform(n * 0.08, n * 0.13);
    const double cy = rng.uniform(radius + 1, n - radius - 1);
    const double cx = rng.uniform(radius + 1, n - radius - 1);
    draw_object(out.image, out.truth, styles[other - 1], other, cy, cx, radius, rng);
  }

  const double radius = rng.uniform(n * 0.16, n * 0.28);
  const double cy = rng.uniform(radius + 1, n - radius - 1);
  const double cx = rng.uniform(radius + 1, n - radius - 1);
  draw_object(out.image, out.truth, styles[out.true_class - 1], out.true_class, cy, cx, radius,
              rng);

  out.tag = out.true_class;
  if (spec.class_count > 1 && rng.bernoulli(spec.noise_rate)) {
    int wrong = 1 + static_cast<int>(rng.next_below(spec.class_count - 1));
    if (wrong >= out.true_class) {
      ++wrong;
    }
    out.tag = wrong;
  }
  return out;
}

}  // namespace

int majority_class(const LabelImage& truth) {
  std::vector<std::size_t> counts;
  for (const int code : truth.labels) {
    if (code <= 0) {
      continue;
    }
    if (counts.size() <= static_cast<std::size_t>(code)) {
      counts.resize(code + 1, 0);
    }
    ++counts[code];
  }
  int best = 0;
  std::size_t best_n = 0;
  for (std::size_t c = 1; c < counts.size(); ++c) {
    if (counts[c] > best_n) {
      best_n = counts[c];
      best = static_cast<int>(c);
    }
  }
  return best;
}

DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.class_count < 1 || spec.image_size < 8) {
    throw config_error("synth_generate: need class_count >= 1 and image_size >= 8");
  }
  if (spec.noise_rate < 0.0 || spec.noise_rate >= 1.0) {
    throw config_error("synth_generate: noise_rate must lie in [0, 1)");
  }
  if (spec.image_format != "ppm" && spec.image_format != "png") {
    throw config_error("synth_generate: image_format must be ppm or png");
  }
  const std::vector<ClassStyle> styles =
      spec.styles.empty() ? default_styles(spec.class_count) : spec.styles;
  if (static_cast<int>(styles.size()) != spec.class_count) {
    throw config_error("synth_generate: need one style per class");
  }

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "truths");

  DatasetManifest manifest;
  manifest.base_dir = out_dir;

  const struct {
    Split split;
    const char* prefix;
    int count;
  } kSplits[] = {
      {Split::kAttentionTrain, "train", spec.train_count},
      {Split::kFinetunePool, "pool", spec.pool_count},
      {Split::kEval, "eval", spec.eval_count},
  };
  const std::string mask_ext = spec.image_format == "png" ? ".png" : ".pgm";
  const std::string image_ext = spec.image_format == "png" ? ".png" : ".ppm";
  for (const auto& part : kSplits) {
    for (int i = 0; i < part.count; ++i) {
      const std::uint64_t image_seed = derive_seed(spec.seed, part.prefix, i);
      const GeneratedImage gen = generate_one(spec, styles, image_seed);

      char name[64];
      std::snprintf(name, sizeof(name), "%s_%05d", part.prefix, i);
      ManifestRecord rec;
      rec.image_path = std::string("images/") + name + image_ext;
      rec.truth_path = std::string("truths/") + name + mask_ext;
      rec.tag = gen.tag;
      rec.split = part.split;
      io::save_image(gen.image, out_dir / rec.image_path);
      io::save_mask(gen.truth, out_dir / rec.truth_path);
      manifest.records.push_back(std::move(rec));
    }
  }
  save_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace tagseg
