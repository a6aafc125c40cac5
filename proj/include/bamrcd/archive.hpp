#pragma once

// Patch archive layout:
//   <root>/manifest.json            patch list with shapes, dates, flags and per-file CRC32
//   <root>/splits.json              the SplitManifest
//   <root>/<split>/<patch_id>.<field>.f32
// Each .f32 file: 8-byte magic "BMRCDARR", uint64 ndim, uint64 dims[ndim], then
// little-endian IEEE-754 float32 values in C order.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"
#include "bamrcd/patch.hpp"

namespace bamrcd {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr char kArrayMagic[8] = {'B', 'M', 'R', 'C', 'D', 'A', 'R', 'R'};

inline std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "short write to " + path.string());
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::string read_text_file(const fs::path& path) {
  auto b = read_file_bytes(path);
  return {b.begin(), b.end()};
}

inline std::vector<std::uint8_t> encode_array(const std::vector<std::uint64_t>& dims,
                                              const std::vector<float>& values) {
  std::vector<std::uint8_t> out(kArrayMagic, kArrayMagic + 8);
  put_u64(out, dims.size());
  for (auto d : dims) put_u64(out, d);
  out.reserve(out.size() + 4 * values.size());
  for (float v : values) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  return out;
}

struct DecodedArray {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

/// Returns false instead of throwing so callers can attach context to the failure.
inline bool decode_array(const std::vector<std::uint8_t>& bytes, DecodedArray& out) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kArrayMagic, 8) != 0) return false;
  const std::uint64_t ndim = get_u64(bytes.data() + 8);
  if (ndim > 8 || bytes.size() < 16 + 8 * ndim) return false;
  out.dims.resize(ndim);
  std::uint64_t count = 1;
  for (std::uint64_t i = 0; i < ndim; ++i) {
    out.dims[i] = get_u64(bytes.data() + 16 + 8 * i);
    count *= out.dims[i];
  }
  const std::size_t header = 16 + 8 * ndim;
  if (bytes.size() != header + 4 * count) return false;
  out.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint8_t* p = bytes.data() + header + 4 * i;
    const std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                            std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    out.values[i] = std::bit_cast<float>(u);
  }
  return true;
}

inline std::vector<std::uint64_t> dims_of(const Image& g) {
  return {static_cast<std::uint64_t>(g.channels()), static_cast<std::uint64_t>(g.rows()),
          static_cast<std::uint64_t>(g.cols())};
}

inline json manifest_to_json(const SplitManifest& m) {
  json j;
  j["seed"] = m.seed;
  json a = json::object();
  for (auto& [id, s] : m.assignments) a[id] = to_string(s);
  j["assignments"] = a;
  json c = json::object();
  for (auto& [s, n] : m.counts) c[to_string(s)] = {{"n_events", n.n_events}, {"n_patches", n.n_patches}};
  j["counts"] = c;
  return j;
}

inline SplitManifest manifest_from_json(const json& j) {
  SplitManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  for (auto& [id, s] : j.at("assignments").items())
    m.assignments[id] = split_from_string(s.get<std::string>());
  if (j.contains("counts"))
    for (auto& [s, n] : j.at("counts").items())
      m.counts[split_from_string(s)] = {n.at("n_events").get<int>(), n.at("n_patches").get<int>()};
  return m;
}

inline void write_archive(const std::vector<PatchSample>& patches, SplitManifest manifest,
                          const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  require(!ec, ErrorKind::io, "cannot create archive directory " + root.string());
  count_patches(manifest, patches);

  json list = json::array();
  for (const auto& p : patches) {
    const std::string split = to_string(manifest.split_of(p.event_id));
    fs::create_directories(root / split, ec);
    require(!ec, ErrorKind::io, "cannot create " + (root / split).string());
    json files = json::object();
    auto emit = [&](const char* field, const Image& img) {
      const std::string rel = split + "/" + p.patch_id + "." + field + ".f32";
      auto bytes = encode_array(dims_of(img), img.data());
      write_file_bytes(root / rel, bytes);
      files[field] = {{"path", rel}, {"shape", dims_of(img)}, {"crc32", crc32_of(bytes)}};
    };
    emit("hr_pre", p.hr_pre);
    emit("lr_pre", p.lr_pre);
    emit("lr_post", p.lr_post);
    emit("label_hr", mask_to_image(p.label_hr));
    emit("label_lr", p.label_lr);
    list.push_back({{"patch_id", p.patch_id},
                    {"event_id", p.event_id},
                    {"split", split},
                    {"is_positive", p.is_positive},
                    {"t1_date", p.t1_date},
                    {"t2_date", p.t2_date},
                    {"burnt_area_ha", p.burnt_area_ha},
                    {"lr_invalid_fraction", p.lr_invalid_fraction},
                    {"files", files}});
  }
  json top = {{"format", "bamrcd-archive"}, {"version", 1}, {"patches", list}};
  write_text_file(root / "manifest.json", top.dump(2) + "\n");
  write_text_file(root / "splits.json", manifest_to_json(manifest).dump(2) + "\n");
}

struct Archive {
  std::vector<PatchSample> patches;
  SplitManifest manifest;

  std::vector<PatchSample> split(Split s) const { return patches_in_split(patches, manifest, s); }
};

inline Archive read_archive(const fs::path& root) {
  json top, splits;
  try {
    top = json::parse(read_text_file(root / "manifest.json"));
    splits = json::parse(read_text_file(root / "splits.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, "corrupt archive manifest in " + root.string() + ": " + e.what());
  }
  Archive a;
  try {
    a.manifest = manifest_from_json(splits);
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, "corrupt split manifest in " + root.string() + ": " + e.what());
  }
  if (!top.contains("patches") || !top["patches"].is_array())
    fail(ErrorKind::integrity, "archive manifest in " + root.string() + " has no patch list");
  for (const auto& entry : top["patches"]) {
    PatchSample p;
    try {
      p.patch_id = entry.at("patch_id").get<std::string>();
      p.event_id = entry.at("event_id").get<std::string>();
      p.is_positive = entry.at("is_positive").get<bool>();
      p.t1_date = entry.at("t1_date").get<std::string>();
      p.t2_date = entry.at("t2_date").get<std::string>();
      p.burnt_area_ha = entry.at("burnt_area_ha").get<double>();
      p.lr_invalid_fraction = entry.at("lr_invalid_fraction").get<double>();
    } catch (const json::exception& e) {
      fail(ErrorKind::integrity, "corrupt manifest entry: " + std::string(e.what()));
    }
    auto load = [&](const char* field) {
      const auto& f = entry.at("files").at(field);
      const auto rel = f.at("path").get<std::string>();
      std::vector<std::uint8_t> bytes;
      try {
        bytes = read_file_bytes(root / rel);
      } catch (const Error&) {
        fail(ErrorKind::integrity, "missing file " + rel + " for patch " + p.patch_id);
      }
      require(crc32_of(bytes) == f.at("crc32").get<std::uint32_t>(), ErrorKind::integrity,
              "checksum mismatch in " + rel + " for patch " + p.patch_id);
      DecodedArray arr;
      require(decode_array(bytes, arr) && arr.dims.size() == 3 &&
                  arr.dims == f.at("shape").get<std::vector<std::uint64_t>>(),
              ErrorKind::integrity, "malformed array " + rel + " for patch " + p.patch_id);
      Image img(static_cast<int>(arr.dims[0]), static_cast<int>(arr.dims[1]),
                static_cast<int>(arr.dims[2]));
      img.data() = std::move(arr.values);
      return img;
    };
    auto load_checked = [&](const char* field) {
      try {
        return load(field);
      } catch (const json::exception& e) {
        fail(ErrorKind::integrity, "corrupt file entry '" + std::string(field) + "' for patch " + p.patch_id + ": " + e.what());
      }
    };
    p.hr_pre = load_checked("hr_pre");
    p.lr_pre = load_checked("lr_pre");
    p.lr_post = load_checked("lr_post");
    Image hr_label = load_checked("label_hr");
    for (float v : hr_label.data())
      require(v == 0.0f || v == 1.0f, ErrorKind::integrity,
              "non-binary HR label for patch " + p.patch_id);
    p.label_hr = image_to_mask(hr_label);
    p.label_lr = load_checked("label_lr");
    a.patches.push_back(std::move(p));
  }
  return a;
}

}  // namespace bamrcd
