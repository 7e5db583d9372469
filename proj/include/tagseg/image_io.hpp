#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "tagseg/tensor.hpp"

namespace tagseg::io {

// 8-bit raster image kept in encoded form; decode() scales to [0,1].
struct StoredImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved rows, like the file layout

  FeatureMap decode() const;
};

// Test hook: every file the loaders open is reported here. Used by the
// access-audit suite to prove training-path code never touches truth masks.
void set_open_observer(std::function<void(const std::string&)> observer);

// Raster files. Grayscale (1 channel) and RGB (3 channels), 8 bits per
// sample. Format by magic bytes on load (P5/P6/PNG), by extension on save
// (.pgm/.ppm/.png). Values are v/255 on load, round(v*255) on save.
StoredImage load_stored(const std::filesystem::path& path);
FeatureMap load_image(const std::filesystem::path& path);
void save_image(const FeatureMap& map, const std::filesystem::path& path);
void save_stored(const StoredImage& img, const std::filesystem::path& path);

// Label masks as 8-bit grayscale files; 255 on disk <-> kIgnoreLabel.
LabelImage load_mask(const std::filesystem::path& path);
void save_mask(const LabelImage& mask, const std::filesystem::path& path);

// Indexed-palette rendering for human inspection (classes as hues, ignored
// pixels white, background black).
void save_mask_palette(const LabelImage& mask, const std::filesystem::path& path);

// Lossless 64-bit export used by tests and the attention CLI.
void save_raw_f64(const FeatureMap& map, const std::filesystem::path& path);
FeatureMap load_raw_f64(const std::filesystem::path& path);

// Attention-map rendering: values * 255, rounded, clamped.
void save_grayscale(const FeatureMap& map, const std::filesystem::path& path);

StoredImage encode_stored(const FeatureMap& map);

}  // namespace tagseg::io
