#include "tagseg/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>

#include "tagseg/errors.hpp"

namespace tagseg::io {

namespace {

std::mutex g_observer_mutex;
std::function<void(const std::string&)> g_open_observer;

void notify_open(const std::filesystem::path& path) {
  std::function<void(const std::string&)> observer;
  {
    std::lock_guard<std::mutex> lock(g_observer_mutex);
    observer = g_open_observer;
  }
  if (observer) {
    observer(path.string());
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  notify_open(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::uint8_t* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) {
    throw std::runtime_error("short write to " + path.string());
  }
}

// ---- PNM (binary P5 grayscale / P6 rgb) ----

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  std::uint8_t peek() const { return bytes[pos]; }
  std::uint8_t take() { return bytes[pos++]; }
};

void skip_pnm_space(Cursor& c) {
  while (!c.eof()) {
    const std::uint8_t ch = c.peek();
    if (ch == '#') {
      while (!c.eof() && c.take() != '\n') {
      }
    } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
      c.take();
    } else {
      break;
    }
  }
}

int parse_pnm_int(Cursor& c, const char* what) {
  skip_pnm_space(c);
  if (c.eof() || c.peek() < '0' || c.peek() > '9') {
    throw parse_error(std::string("expected ") + what, c.pos);
  }
  long value = 0;
  while (!c.eof() && c.peek() >= '0' && c.peek() <= '9') {
    value = value * 10 + (c.take() - '0');
    if (value > 1'000'000) {
      throw parse_error(std::string(what) + " out of range", c.pos);
    }
  }
  return static_cast<int>(value);
}

StoredImage decode_pnm(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw parse_error("not a binary PNM file", 0);
  }
  const int channels = bytes[1] == '5' ? 1 : 3;
  c.pos = 2;
  StoredImage img;
  img.channels = channels;
  img.width = parse_pnm_int(c, "width");
  img.height = parse_pnm_int(c, "height");
  const int maxval = parse_pnm_int(c, "maxval");
  if (img.width < 1 || img.height < 1) {
    throw parse_error("bad PNM dimensions", c.pos);
  }
  if (maxval != 255) {
    throw parse_error("unsupported PNM maxval (must be 255)", c.pos);
  }
  if (c.eof()) {
    throw parse_error("missing PNM raster", c.pos);
  }
  c.take();  // single whitespace byte after maxval
  const std::size_t need =
      static_cast<std::size_t>(img.width) * img.height * channels;
  if (bytes.size() - c.pos < need) {
    throw parse_error("truncated PNM raster", bytes.size());
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + need));
  return img;
}

std::vector<std::uint8_t> encode_pnm(const StoredImage& img) {
  const std::string header = (img.channels == 1 ? "P5\n" : "P6\n") +
                             std::to_string(img.width) + " " + std::to_string(img.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

// ---- PNG (8-bit grayscale / truecolor, no interlace) ----

constexpr std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char tag[4],
                  const std::uint8_t* data, std::size_t n) {
  append_be32(out, static_cast<std::uint32_t>(n));
  const std::size_t tag_pos = out.size();
  out.insert(out.end(), tag, tag + 4);
  out.insert(out.end(), data, data + n);
  const auto crc = crc32(0, out.data() + tag_pos, static_cast<uInt>(4 + n));
  append_be32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> zlib_inflate(const std::uint8_t* data, std::size_t n,
                                       std::size_t expected, std::size_t err_offset) {
  std::vector<std::uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &out_len, data, static_cast<uLong>(n));
  if (rc != Z_OK || out_len != expected) {
    throw parse_error("corrupt PNG pixel stream", err_offset);
  }
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

StoredImage decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0) {
    throw parse_error("not a PNG file", 0);
  }
  std::size_t pos = 8;
  StoredImage img;
  std::vector<std::uint8_t> idat;
  bool saw_ihdr = false;
  bool saw_iend = false;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = read_be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) {
      throw parse_error("truncated PNG chunk", pos);
    }
    const char* tag = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* payload = bytes.data() + pos + 8;
    const std::uint32_t stored_crc = read_be32(bytes.data() + pos + 8 + len);
    const auto computed = crc32(0, bytes.data() + pos + 4, static_cast<uInt>(4 + len));
    if (stored_crc != static_cast<std::uint32_t>(computed)) {
      throw parse_error("PNG chunk CRC mismatch", pos + 8 + len);
    }
    if (std::memcmp(tag, "IHDR", 4) == 0) {
      if (len != 13) {
        throw parse_error("bad IHDR length", pos);
      }
      img.width = static_cast<int>(read_be32(payload));
      img.height = static_cast<int>(read_be32(payload + 4));
      const int bit_depth = payload[8];
      const int color_type = payload[9];
      const int interlace = payload[12];
      if (img.width < 1 || img.height < 1) {
        throw parse_error("bad PNG dimensions", pos + 8);
      }
      if (bit_depth != 8 || (color_type != 0 && color_type != 2) || interlace != 0) {
        throw parse_error("unsupported PNG variant (need 8-bit gray or rgb, no interlace)",
                          pos + 8);
      }
      img.channels = color_type == 0 ? 1 : 3;
      saw_ihdr = true;
    } else if (std::memcmp(tag, "IDAT", 4) == 0) {
      if (!saw_ihdr) {
        throw parse_error("IDAT before IHDR", pos);
      }
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(tag, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) {
    throw parse_error("incomplete PNG stream", pos);
  }

  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  const std::size_t raw_len = (stride + 1) * img.height;
  std::vector<std::uint8_t> raw = zlib_inflate(idat.data(), idat.size(), raw_len, pos);

  img.pixels.assign(stride * img.height, 0);
  const int bpp = img.channels;
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    const std::uint8_t* src = raw.data() + (stride + 1) * y + 1;
    std::uint8_t* dst = img.pixels.data() + stride * y;
    for (std::size_t x = 0; x < stride; ++x) {
      const int left = x >= static_cast<std::size_t>(bpp) ? dst[x - bpp] : 0;
      const int up = prev[x];
      const int up_left = x >= static_cast<std::size_t>(bpp) ? prev[x - bpp] : 0;
      int value = src[x];
      switch (filter) {
        case 0: break;
        case 1: value += left; break;
        case 2: value += up; break;
        case 3: value += (left + up) / 2; break;
        case 4: value += paeth(left, up, up_left); break;
        default: throw parse_error("bad PNG row filter", (stride + 1) * y);
      }
      dst[x] = static_cast<std::uint8_t>(value & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const StoredImage& img) {
  std::vector<std::uint8_t> out(kPngSignature, kPngSignature + 8);

  std::uint8_t ihdr[13];
  const std::uint32_t w = static_cast<std::uint32_t>(img.width);
  const std::uint32_t h = static_cast<std::uint32_t>(img.height);
  ihdr[0] = static_cast<std::uint8_t>(w >> 24);
  ihdr[1] = static_cast<std::uint8_t>(w >> 16);
  ihdr[2] = static_cast<std::uint8_t>(w >> 8);
  ihdr[3] = static_cast<std::uint8_t>(w);
  ihdr[4] = static_cast<std::uint8_t>(h >> 24);
  ihdr[5] = static_cast<std::uint8_t>(h >> 16);
  ihdr[6] = static_cast<std::uint8_t>(h >> 8);
  ihdr[7] = static_cast<std::uint8_t>(h);
  ihdr[8] = 8;                                        // bit depth
  ihdr[9] = img.channels == 1 ? 0 : 2;                // gray / truecolor
  ihdr[10] = 0;
  ihdr[11] = 0;
  ihdr[12] = 0;
  append_chunk(out, "IHDR", ihdr, sizeof(ihdr));

  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw[(stride + 1) * y] = 0;  // filter: none
    std::memcpy(raw.data() + (stride + 1) * y + 1, img.pixels.data() + stride * y, stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  const int rc = compress2(compressed.data(), &bound, raw.data(),
                           static_cast<uLong>(raw.size()), 6);
  if (rc != Z_OK) {
    throw std::runtime_error("PNG compression failed");
  }
  append_chunk(out, "IDAT", compressed.data(), bound);
  append_chunk(out, "IEND", nullptr, 0);
  return out;
}

bool has_extension(const std::filesystem::path& path, const char* ext) {
  return path.extension() == ext;
}

std::uint8_t quantize(double v) {
  const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

}  // namespace

void set_open_observer(std::function<void(const std::string&)> observer) {
  std::lock_guard<std::mutex> lock(g_observer_mutex);
  g_open_observer = std::move(observer);
}

FeatureMap StoredImage::decode() const {
  FeatureMap map(channels, height, width);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < channels; ++c) {
      map.values[static_cast<std::size_t>(c) * plane + i] =
          pixels[i * channels + c] / 255.0;
    }
  }
  return map;
}

StoredImage encode_stored(const FeatureMap& map) {
  if (map.channels != 1 && map.channels != 3) {
    throw std::invalid_argument("save_image: only 1- or 3-channel maps");
  }
  StoredImage img;
  img.channels = map.channels;
  img.height = map.height;
  img.width = map.width;
  const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
  img.pixels.resize(plane * map.channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < map.channels; ++c) {
      img.pixels[i * map.channels + c] =
          quantize(map.values[static_cast<std::size_t>(c) * plane + i]);
    }
  }
  return img;
}

StoredImage load_stored(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
    return decode_png(bytes);
  }
  return decode_pnm(bytes);
}

FeatureMap load_image(const std::filesystem::path& path) {
  return load_stored(path).decode();
}

void save_stored(const StoredImage& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  if (has_extension(path, ".png")) {
    bytes = encode_png(img);
  } else if (has_extension(path, ".pgm") || has_extension(path, ".ppm")) {
    if ((img.channels == 1) != has_extension(path, ".pgm")) {
      throw std::invalid_argument("channel count does not match extension: " + path.string());
    }
    bytes = encode_pnm(img);
  } else {
    throw std::invalid_argument("unsupported image extension: " + path.string());
  }
  write_file(path, bytes.data(), bytes.size());
}

void save_image(const FeatureMap& map, const std::filesystem::path& path) {
  save_stored(encode_stored(map), path);
}

LabelImage load_mask(const std::filesystem::path& path) {
  const StoredImage img = load_stored(path);
  if (img.channels != 1) {
    throw parse_error("mask file must be grayscale: " + path.string(), 0);
  }
  LabelImage mask(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    mask.labels[i] = img.pixels[i] == 255 ? kIgnoreLabel : img.pixels[i];
  }
  return mask;
}

void save_mask(const LabelImage& mask, const std::filesystem::path& path) {
  StoredImage img;
  img.channels = 1;
  img.height = mask.height;
  img.width = mask.width;
  img.pixels.resize(mask.labels.size());
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const int code = mask.labels[i];
    if (code == kIgnoreLabel) {
      img.pixels[i] = 255;
    } else if (code >= 0 && code <= 254) {
      img.pixels[i] = static_cast<std::uint8_t>(code);
    } else {
      throw std::invalid_argument("mask code out of range for 8-bit file: " +
                                  std::to_string(code));
    }
  }
  save_stored(img, path);
}

void save_mask_palette(const LabelImage& mask, const std::filesystem::path& path) {
  static constexpr std::uint8_t kPalette[][3] = {
      {0, 0, 0},      {230, 25, 75},  {60, 180, 75},  {0, 130, 200},
      {255, 225, 25}, {240, 50, 230}, {245, 130, 48}, {70, 240, 240},
      {145, 30, 180}, {210, 245, 60}, {170, 110, 40}, {128, 128, 0},
  };
  constexpr int kPaletteSize = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));
  StoredImage img;
  img.channels = 3;
  img.height = mask.height;
  img.width = mask.width;
  img.pixels.resize(mask.labels.size() * 3);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    std::uint8_t r = 255, g = 255, b = 255;  // ignored pixels render white
    const int code = mask.labels[i];
    if (code != kIgnoreLabel) {
      const auto& entry = kPalette[code % kPaletteSize];
      r = entry[0];
      g = entry[1];
      b = entry[2];
    }
    img.pixels[i * 3 + 0] = r;
    img.pixels[i * 3 + 1] = g;
    img.pixels[i * 3 + 2] = b;
  }
  save_stored(img, path);
}

void save_raw_f64(const FeatureMap& map, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  const char magic[8] = {'T', 'S', 'E', 'G', 'F', '6', '4', '\n'};
  bytes.insert(bytes.end(), magic, magic + 8);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(map.channels),
                                 static_cast<std::uint32_t>(map.height),
                                 static_cast<std::uint32_t>(map.width)};
  const auto* dim_bytes = reinterpret_cast<const std::uint8_t*>(dims);
  bytes.insert(bytes.end(), dim_bytes, dim_bytes + sizeof(dims));
  const auto* val_bytes = reinterpret_cast<const std::uint8_t*>(map.values.data());
  bytes.insert(bytes.end(), val_bytes, val_bytes + map.values.size() * sizeof(double));
  write_file(path, bytes.data(), bytes.size());
}

FeatureMap load_raw_f64(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "TSEGF64\n", 8) != 0) {
    throw parse_error("not a TSEGF64 file: " + path.string(), 0);
  }
  std::uint32_t dims[3];
  std::memcpy(dims, bytes.data() + 8, sizeof(dims));
  FeatureMap map(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                 static_cast<int>(dims[2]));
  const std::size_t need = 20 + map.values.size() * sizeof(double);
  if (bytes.size() != need) {
    throw parse_error("TSEGF64 payload size mismatch", bytes.size());
  }
  std::memcpy(map.values.data(), bytes.data() + 20, map.values.size() * sizeof(double));
  return map;
}

void save_grayscale(const FeatureMap& map, const std::filesystem::path& path) {
  if (map.channels != 1) {
    throw std::invalid_argument("save_grayscale: single-channel maps only");
  }
  save_image(map, path);
}

}  // namespace tagseg::io
