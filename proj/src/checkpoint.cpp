#include "tagseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tagseg/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

namespace tagseg {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'E', 'G', 'N', 'E', 'T', '1'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) {
    const auto pos = in.tellg();
    throw parse_error(std::string("checkpoint truncated reading ") + what,
                      pos < 0 ? 0 : static_cast<std::size_t>(pos));
  }
  return value;
}

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, net.head == HeadKind::kClassifier ? 0 : 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.class_count));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.input_channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.tap_points.size()));
  for (const int tap : net.tap_points) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tap));
  }
  for (const LayerSpec& layer : net.layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.kind));
    put<std::int32_t>(out, layer.in_channels);
    put<std::int32_t>(out, layer.out_channels);
    put<std::int32_t>(out, layer.kernel);
    put<std::int32_t>(out, layer.stride);
    put<std::int32_t>(out, layer.pad);
    put<std::uint64_t>(out, layer.weights.size());
    put<std::uint64_t>(out, layer.bias.size());
    out.write(reinterpret_cast<const char*>(layer.weights.data()),
              static_cast<std::streamsize>(layer.weights.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(layer.bias.data()),
              static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
  }
  if (!out) {
    throw std::runtime_error("short write to checkpoint " + path.string());
  }
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw parse_error("not a TSEGNET1 checkpoint: " + path.string(), 0);
  }
  Network net;
  net.head = get<std::uint32_t>(in, "head") == 0 ? HeadKind::kClassifier : HeadKind::kSegmenter;
  net.class_count = static_cast<int>(get<std::uint32_t>(in, "class count"));
  net.input_channels = static_cast<int>(get<std::uint32_t>(in, "input channels"));
  const auto layer_count = get<std::uint32_t>(in, "layer count");
  const auto tap_count = get<std::uint32_t>(in, "tap count");
  if (layer_count > 1024 || tap_count > 1024) {
    throw parse_error("implausible checkpoint header", 16);
  }
  net.tap_points.resize(tap_count);
  for (auto& tap : net.tap_points) {
    tap = static_cast<int>(get<std::uint32_t>(in, "tap index"));
  }
  net.layers.resize(layer_count);
  for (LayerSpec& layer : net.layers) {
    layer.kind = static_cast<LayerKind>(get<std::uint32_t>(in, "layer kind"));
    layer.in_channels = get<std::int32_t>(in, "in channels");
    layer.out_channels = get<std::int32_t>(in, "out channels");
    layer.kernel = get<std::int32_t>(in, "kernel");
    layer.stride = get<std::int32_t>(in, "stride");
    layer.pad = get<std::int32_t>(in, "pad");
    const auto wn = get<std::uint64_t>(in, "weight count");
    const auto bn = get<std::uint64_t>(in, "bias count");
    if (wn > (1ULL << 32) || bn > (1ULL << 32)) {
      throw parse_error("implausible parameter count", static_cast<std::size_t>(in.tellg()));
    }
    layer.weights.resize(wn);
    layer.bias.resize(bn);
    in.read(reinterpret_cast<char*>(layer.weights.data()),
            static_cast<std::streamsize>(wn * sizeof(double)));
    in.read(reinterpret_cast<char*>(layer.bias.data()),
            static_cast<std::streamsize>(bn * sizeof(double)));
    if (!in) {
      const auto pos = in.tellg();
      throw parse_error("checkpoint truncated reading parameters",
                        pos < 0 ? 0 : static_cast<std::size_t>(pos));
    }
  }
  return net;
}

}  // namespace tagseg
