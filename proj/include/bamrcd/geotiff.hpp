#pragma once

// Minimal baseline-TIFF / GeoTIFF codec: classic (non-Big) TIFF, strips or tiles,
// uncompressed or Deflate, chunky or planar samples of any integer/float type.
// Georeferencing comes from ModelPixelScale + ModelTiepoint or ModelTransformation.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"

namespace bamrcd::tiff {

struct GeoImage {
  Image data;
  std::array<double, 6> geo_transform{0, 1, 0, 0, 0, -1};
  bool has_geo = false;
  std::optional<double> nodata;
  std::string datetime;  // TIFF DateTime tag, "YYYY:MM:DD HH:MM:SS" when present
};

namespace detail {

enum Tag : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kDateTime = 306,
  kPredictor = 317,
  kTileWidth = 322,
  kTileLength = 323,
  kTileOffsets = 324,
  kTileByteCounts = 325,
  kSampleFormat = 339,
  kModelPixelScale = 33550,
  kModelTiepoint = 33922,
  kModelTransformation = 34264,
  kGdalNodata = 42113,
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, std::string name)
      : bytes_(std::move(bytes)), name_(std::move(name)) {
    require(bytes_.size() >= 8, ErrorKind::schema, name_ + ": not a TIFF file");
    if (bytes_[0] == 'I' && bytes_[1] == 'I') little_ = true;
    else if (bytes_[0] == 'M' && bytes_[1] == 'M') little_ = false;
    else fail(ErrorKind::schema, name_ + ": not a TIFF file");
    require(u16(2) == 42, ErrorKind::schema, name_ + ": unsupported TIFF variant (BigTIFF?)");
  }

  std::uint16_t u16(std::size_t off) const {
    check(off, 2);
    return little_ ? std::uint16_t(bytes_[off] | bytes_[off + 1] << 8)
                   : std::uint16_t(bytes_[off] << 8 | bytes_[off + 1]);
  }
  std::uint32_t u32(std::size_t off) const {
    check(off, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint32_t b = bytes_[off + (little_ ? i : 3 - i)];
      v |= b << (8 * i);
    }
    return v;
  }
  std::uint64_t u64(std::size_t off) const {
    std::uint64_t lo = u32(off), hi = u32(off + 4);
    return little_ ? (hi << 32 | lo) : (lo << 32 | hi);
  }
  void check(std::size_t off, std::size_t n) const {
    require(off + n <= bytes_.size(), ErrorKind::schema, name_ + ": truncated TIFF");
  }
  const std::uint8_t* ptr(std::size_t off) const { return bytes_.data() + off; }
  bool little() const { return little_; }
  const std::string& name() const { return name_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::string name_;
  bool little_ = true;
};

struct Entry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t offset = 0;  // where the values live
};

inline std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

inline std::vector<double> read_values(const Reader& rd, const Entry& e) {
  std::vector<double> out(e.count);
  const std::size_t sz = type_size(e.type);
  for (std::uint32_t i = 0; i < e.count; ++i) {
    const std::size_t off = e.offset + i * sz;
    switch (e.type) {
      case 1: case 7: rd.check(off, 1); out[i] = *rd.ptr(off); break;
      case 6: rd.check(off, 1); out[i] = static_cast<std::int8_t>(*rd.ptr(off)); break;
      case 3: out[i] = rd.u16(off); break;
      case 8: out[i] = static_cast<std::int16_t>(rd.u16(off)); break;
      case 4: out[i] = rd.u32(off); break;
      case 9: out[i] = static_cast<std::int32_t>(rd.u32(off)); break;
      case 11: out[i] = std::bit_cast<float>(rd.u32(off)); break;
      case 12: out[i] = std::bit_cast<double>(rd.u64(off)); break;
      case 5: out[i] = double(rd.u32(off)) / std::max<std::uint32_t>(1, rd.u32(off + 4)); break;
      case 10:
        out[i] = double(static_cast<std::int32_t>(rd.u32(off))) /
                 std::max<std::int32_t>(1, static_cast<std::int32_t>(rd.u32(off + 4)));
        break;
      default: fail(ErrorKind::schema, rd.name() + ": unsupported TIFF field type");
    }
  }
  return out;
}

inline std::string read_ascii(const Reader& rd, const Entry& e) {
  rd.check(e.offset, e.count);
  std::string s(reinterpret_cast<const char*>(rd.ptr(e.offset)), e.count);
  while (!s.empty() && s.back() == '\0') s.pop_back();
  return s;
}

inline std::vector<std::uint8_t> inflate_chunk(const std::uint8_t* src, std::size_t n,
                                               std::size_t expected, const std::string& name) {
  std::vector<std::uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  int rc = uncompress(out.data(), &out_len, src, static_cast<uLong>(n));
  require(rc == Z_OK || rc == Z_BUF_ERROR, ErrorKind::schema, name + ": corrupt deflate chunk");
  out.resize(expected);
  return out;
}

inline double decode_sample(const std::uint8_t* p, int bits, int format, bool little) {
  auto load = [&](int nbytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) {
      std::uint64_t b = p[little ? i : nbytes - 1 - i];
      v |= b << (8 * i);
    }
    return v;
  };
  switch (format) {
    case 3:
      if (bits == 32) return std::bit_cast<float>(static_cast<std::uint32_t>(load(4)));
      if (bits == 64) return std::bit_cast<double>(load(8));
      break;
    case 2:
      if (bits == 8) return static_cast<std::int8_t>(load(1));
      if (bits == 16) return static_cast<std::int16_t>(load(2));
      if (bits == 32) return static_cast<std::int32_t>(load(4));
      break;
    default:
      if (bits == 8 || bits == 16 || bits == 32) return static_cast<double>(load(bits / 8));
      break;
  }
  fail(ErrorKind::schema, "unsupported TIFF sample layout");
}

}  // namespace detail

inline GeoImage decode(std::vector<std::uint8_t> bytes, const std::string& name = "<memory>") {
  using namespace detail;
  Reader rd(std::move(bytes), name);
  const std::size_t ifd = rd.u32(4);
  const std::uint16_t n_entries = rd.u16(ifd);
  std::map<std::uint16_t, Entry> tags;
  for (std::uint16_t i = 0; i < n_entries; ++i) {
    const std::size_t base = ifd + 2 + 12 * i;
    Entry e;
    const std::uint16_t tag = rd.u16(base);
    e.type = rd.u16(base + 2);
    e.count = rd.u32(base + 4);
    const std::size_t bytes_needed = type_size(e.type) * e.count;
    e.offset = bytes_needed <= 4 ? base + 8 : rd.u32(base + 8);
    tags[tag] = e;
  }
  auto scalar = [&](Tag t, double fallback) {
    auto it = tags.find(t);
    if (it == tags.end()) return fallback;
    return read_values(rd, it->second).at(0);
  };
  auto vec = [&](Tag t) {
    auto it = tags.find(t);
    return it == tags.end() ? std::vector<double>{} : read_values(rd, it->second);
  };

  const int width = static_cast<int>(scalar(kImageWidth, 0));
  const int height = static_cast<int>(scalar(kImageLength, 0));
  const int spp = static_cast<int>(scalar(kSamplesPerPixel, 1));
  const int compression = static_cast<int>(scalar(kCompression, 1));
  const int planar = static_cast<int>(scalar(kPlanarConfig, 1));
  const int predictor = static_cast<int>(scalar(kPredictor, 1));
  const int format = static_cast<int>(scalar(kSampleFormat, 1));
  auto bits_all = vec(kBitsPerSample);
  const int bits = bits_all.empty() ? 1 : static_cast<int>(bits_all[0]);
  require(width > 0 && height > 0, ErrorKind::schema, name + ": missing image dimensions");
  require(compression == 1 || compression == 8 || compression == 32946, ErrorKind::schema,
          name + ": unsupported TIFF compression " + std::to_string(compression));
  require(predictor == 1, ErrorKind::schema, name + ": TIFF predictors are not supported");
  require(bits % 8 == 0, ErrorKind::schema, name + ": sub-byte samples are not supported");
  for (double b : bits_all)
    require(static_cast<int>(b) == bits, ErrorKind::schema, name + ": mixed bit depths");

  const bool tiled = tags.count(kTileOffsets) != 0;
  const int chunk_w = tiled ? static_cast<int>(scalar(kTileWidth, 0)) : width;
  const int chunk_h = tiled ? static_cast<int>(scalar(kTileLength, 0))
                            : std::min(height, static_cast<int>(scalar(kRowsPerStrip, height)));
  require(chunk_w > 0 && chunk_h > 0, ErrorKind::schema, name + ": bad chunk geometry");
  auto offsets = vec(tiled ? kTileOffsets : kStripOffsets);
  auto counts = vec(tiled ? kTileByteCounts : kStripByteCounts);
  require(!offsets.empty() && offsets.size() == counts.size(), ErrorKind::schema,
          name + ": missing chunk offsets");

  const int across = (width + chunk_w - 1) / chunk_w;
  const int down = (height + chunk_h - 1) / chunk_h;
  const int per_plane = across * down;
  const int planes = planar == 2 ? spp : 1;
  const int samples_in_chunk = planar == 2 ? 1 : spp;
  const std::size_t bps = bits / 8;
  require(static_cast<int>(offsets.size()) >= per_plane * planes, ErrorKind::schema,
          name + ": too few chunks");

  GeoImage out;
  out.data = Image(spp, height, width);
  for (int plane = 0; plane < planes; ++plane) {
    for (int cy = 0; cy < down; ++cy) {
      for (int cx = 0; cx < across; ++cx) {
        const int idx = plane * per_plane + cy * across + cx;
        const auto off = static_cast<std::size_t>(offsets[idx]);
        const auto n = static_cast<std::size_t>(counts[idx]);
        rd.check(off, n);
        const int rows_here = tiled ? chunk_h : std::min(chunk_h, height - cy * chunk_h);
        const std::size_t expected =
            static_cast<std::size_t>(rows_here) * chunk_w * samples_in_chunk * bps;
        std::vector<std::uint8_t> buf;
        const std::uint8_t* src = rd.ptr(off);
        if (compression != 1) {
          buf = inflate_chunk(src, n, expected, name);
          src = buf.data();
        } else {
          require(n >= expected, ErrorKind::schema, name + ": short TIFF chunk");
        }
        for (int r = 0; r < rows_here; ++r) {
          const int y = cy * chunk_h + r;
          if (y >= height) break;
          for (int x0 = 0; x0 < chunk_w; ++x0) {
            const int x = cx * chunk_w + x0;
            if (x >= width) break;
            for (int s = 0; s < samples_in_chunk; ++s) {
              const std::size_t at =
                  ((static_cast<std::size_t>(r) * chunk_w + x0) * samples_in_chunk + s) * bps;
              const int band = planar == 2 ? plane : s;
              out.data.at(band, y, x) =
                  static_cast<float>(decode_sample(src + at, bits, format, rd.little()));
            }
          }
        }
      }
    }
  }

  auto transform = vec(kModelTransformation);
  auto scale = vec(kModelPixelScale);
  auto tie = vec(kModelTiepoint);
  if (transform.size() >= 16) {
    out.geo_transform = {transform[3], transform[0], transform[1],
                         transform[7], transform[4], transform[5]};
    out.has_geo = true;
  } else if (scale.size() >= 2 && tie.size() >= 6) {
    out.geo_transform = {tie[3] - tie[0] * scale[0], scale[0], 0,
                         tie[4] + tie[1] * scale[1], 0, -scale[1]};
    out.has_geo = true;
  }
  if (auto it = tags.find(kGdalNodata); it != tags.end()) {
    auto text = read_ascii(rd, it->second);
    if (!text.empty()) out.nodata = std::stod(text);
  }
  if (auto it = tags.find(kDateTime); it != tags.end()) out.datetime = read_ascii(rd, it->second);
  return out;
}

inline GeoImage read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode(std::move(bytes), path);
}

enum class SampleType { f32, u8 };

/// Little-endian, one strip per row, chunky samples.
inline std::vector<std::uint8_t> encode(const GeoImage& img, SampleType type = SampleType::f32) {
  const int c = img.data.channels(), h = img.data.rows(), w = img.data.cols();
  const std::uint16_t bits = type == SampleType::f32 ? 32 : 8;
  const std::size_t bps = bits / 8;
  const std::size_t row_bytes = static_cast<std::size_t>(w) * c * bps;

  struct Field {
    std::uint16_t tag, type;
    std::vector<std::uint8_t> payload;
    std::uint32_t count;
  };
  auto shorts = [](std::uint16_t tag, std::vector<std::uint16_t> v) {
    Field f{tag, 3, {}, static_cast<std::uint32_t>(v.size())};
    for (auto x : v) { f.payload.push_back(x & 0xff); f.payload.push_back(x >> 8); }
    return f;
  };
  auto longs = [](std::uint16_t tag, std::vector<std::uint32_t> v) {
    Field f{tag, 4, {}, static_cast<std::uint32_t>(v.size())};
    for (auto x : v)
      for (int i = 0; i < 4; ++i) f.payload.push_back((x >> (8 * i)) & 0xff);
    return f;
  };
  auto doubles = [](std::uint16_t tag, std::vector<double> v) {
    Field f{tag, 12, {}, static_cast<std::uint32_t>(v.size())};
    for (double d : v) {
      auto u = std::bit_cast<std::uint64_t>(d);
      for (int i = 0; i < 8; ++i) f.payload.push_back((u >> (8 * i)) & 0xff);
    }
    return f;
  };
  auto ascii = [](std::uint16_t tag, const std::string& s) {
    Field f{tag, 2, std::vector<std::uint8_t>(s.begin(), s.end()), 0};
    f.payload.push_back(0);
    f.count = static_cast<std::uint32_t>(f.payload.size());
    return f;
  };

  std::vector<std::uint32_t> strip_offsets(h, 0), strip_counts(h, static_cast<std::uint32_t>(row_bytes));
  std::vector<Field> fields;
  fields.push_back(longs(detail::kImageWidth, {static_cast<std::uint32_t>(w)}));
  fields.push_back(longs(detail::kImageLength, {static_cast<std::uint32_t>(h)}));
  fields.push_back(shorts(detail::kBitsPerSample, std::vector<std::uint16_t>(c, bits)));
  fields.push_back(shorts(detail::kCompression, {1}));
  fields.push_back(shorts(detail::kPhotometric, {1}));
  fields.push_back(longs(detail::kStripOffsets, strip_offsets));
  fields.push_back(shorts(detail::kSamplesPerPixel, {static_cast<std::uint16_t>(c)}));
  fields.push_back(longs(detail::kRowsPerStrip, {1}));
  fields.push_back(longs(detail::kStripByteCounts, strip_counts));
  fields.push_back(shorts(detail::kPlanarConfig, {1}));
  if (!img.datetime.empty()) fields.push_back(ascii(detail::kDateTime, img.datetime));
  fields.push_back(shorts(detail::kSampleFormat,
                          std::vector<std::uint16_t>(c, type == SampleType::f32 ? 3 : 1)));
  const auto& gt = img.geo_transform;
  if (gt[2] == 0 && gt[4] == 0) {
    fields.push_back(doubles(detail::kModelPixelScale, {gt[1], -gt[5], 0}));
    fields.push_back(doubles(detail::kModelTiepoint, {0, 0, 0, gt[0], gt[3], 0}));
  } else {
    fields.push_back(doubles(detail::kModelTransformation,
                             {gt[1], gt[2], 0, gt[0], gt[4], gt[5], 0, gt[3],
                              0, 0, 0, 0, 0, 0, 0, 1}));
  }
  if (img.nodata) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *img.nodata);
    fields.push_back(ascii(detail::kGdalNodata, buf));
  }

  // layout: header | IFD | out-of-line field payloads | pixel rows
  const std::size_t ifd_off = 8;
  const std::size_t ifd_size = 2 + fields.size() * 12 + 4;
  std::size_t extra = ifd_off + ifd_size;
  std::vector<std::size_t> field_pos(fields.size(), 0);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].payload.size() > 4) {
      field_pos[i] = extra;
      extra += fields[i].payload.size() + (fields[i].payload.size() & 1);
    }
  }
  const std::size_t pixels_off = extra;
  for (int r = 0; r < h; ++r)
    strip_offsets[r] = static_cast<std::uint32_t>(pixels_off + r * row_bytes);
  for (auto& f : fields)
    if (f.tag == detail::kStripOffsets) f = longs(detail::kStripOffsets, strip_offsets);

  std::vector<std::uint8_t> out(pixels_off + row_bytes * h, 0);
  auto put16 = [&](std::size_t at, std::uint16_t v) { out[at] = v & 0xff; out[at + 1] = v >> 8; };
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[at + i] = (v >> (8 * i)) & 0xff;
  };
  out[0] = 'I'; out[1] = 'I';
  put16(2, 42);
  put32(4, static_cast<std::uint32_t>(ifd_off));
  put16(ifd_off, static_cast<std::uint16_t>(fields.size()));
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::size_t e = ifd_off + 2 + 12 * i;
    put16(e, fields[i].tag);
    put16(e + 2, fields[i].type);
    put32(e + 4, fields[i].count);
    if (fields[i].payload.size() <= 4) {
      std::copy(fields[i].payload.begin(), fields[i].payload.end(), out.begin() + e + 8);
    } else {
      put32(e + 8, static_cast<std::uint32_t>(field_pos[i]));
      std::copy(fields[i].payload.begin(), fields[i].payload.end(), out.begin() + field_pos[i]);
    }
  }
  put32(ifd_off + 2 + 12 * fields.size(), 0);

  for (int y = 0; y < h; ++y) {
    std::size_t at = pixels_off + y * row_bytes;
    for (int x = 0; x < w; ++x) {
      for (int b = 0; b < c; ++b) {
        const float v = img.data.at(b, y, x);
        if (type == SampleType::f32) {
          const auto u = std::bit_cast<std::uint32_t>(v);
          put32(at, u);
          at += 4;
        } else {
          out[at++] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  return out;
}

inline void write(const std::string& path, const GeoImage& img, SampleType type = SampleType::f32) {
  auto bytes = encode(img, type);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "short write to " + path);
}

}  // namespace bamrcd::tiff
