#pragma once

#include <filesystem>

#include "tagseg/net.hpp"

namespace tagseg {

// Binary network container, little-endian, bit-exact round trip.
//
//   bytes 0..7   magic "TSEGNET1"
//   u32          head kind (0 classifier, 1 segmenter)
//   u32          class count K
//   u32          input channels
//   u32          layer count L
//   u32          tap count T, then T x u32 tap indices
//   per layer:   u32 kind, i32 in_ch, i32 out_ch, i32 kernel, i32 stride,
//                i32 pad, u64 weight count, u64 bias count,
//                weights then biases as IEEE-754 binary64
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace tagseg
