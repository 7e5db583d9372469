#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tagseg/manifest.hpp"

namespace tagseg {

// One shape class of the synthetic benchmark.
struct ClassStyle {
  enum class Shape { kDisk, kSquare, kTriangle, kRing, kCross };
  Shape shape = Shape::kDisk;
  std::array<double, 3> color_lo{0.7, 0.0, 0.0};
  std::array<double, 3> color_hi{1.0, 0.3, 0.3};
};

struct SynthSpec {
  int class_count = 5;
  int image_size = 64;
  double noise_rate = 0.3;       // probability a tag mismatches the content
  double distractor_rate = 0.2;  // probability of one co-occurring off-class object
  int train_count = 2000;
  int pool_count = 500;
  int eval_count = 500;
  std::uint64_t seed = 7;
  std::string image_format = "ppm";  // or "png"
  std::vector<ClassStyle> styles;    // empty = built-in palette for class_count <= 8
};

// Writes images, full true masks, and a manifest under out_dir. Every record
// stores its truth path; training-path code only ever receives the
// truth-free view. Byte-identical outputs for identical specs.
DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

// True main-object class of a truth mask: the nonzero code covering the most
// pixels (distractors are strictly smaller by construction).
int majority_class(const LabelImage& truth);

}  // namespace tagseg
