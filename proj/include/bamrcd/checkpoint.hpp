#pragma once

// Checkpoint container:
//   "BMRCDCKP" | uint64 header_len | JSON header | float32 LE payload (storage arrays in order)
//   optional: "BMRCDOPT" | uint64 header_len | JSON header | float32 LE first moments, then second moments
// Each JSON header carries the CRC32 of its payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bamrcd/archive.hpp"
#include "bamrcd/error.hpp"
#include "bamrcd/model.hpp"
#include "bamrcd/nn/params.hpp"
#include "bamrcd/optim.hpp"

namespace bamrcd {

inline constexpr char kCheckpointMagic[8] = {'B', 'M', 'R', 'C', 'D', 'C', 'K', 'P'};
inline constexpr char kOptimizerMagic[8] = {'B', 'M', 'R', 'C', 'D', 'O', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  nn::Parameters<float> params;
  std::optional<AdamState<float>> optimizer;
  json metadata = json::object();
};

namespace ckpt_detail {

inline void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
  for (float f : v) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
}

inline void get_floats(const std::uint8_t* p, std::vector<float>& v) {
  for (auto& f : v) {
    const std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                            std::uint32_t(p[3]) << 24;
    f = std::bit_cast<float>(u);
    p += 4;
  }
}

inline void put_section(std::vector<std::uint8_t>& out, const char* magic, const json& header,
                        const std::vector<std::uint8_t>& payload) {
  out.insert(out.end(), magic, magic + 8);
  const std::string h = header.dump();
  put_u64(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  out.insert(out.end(), payload.begin(), payload.end());
}

struct Section {
  json header;
  std::vector<std::uint8_t> payload;
};

inline Section read_section(const std::vector<std::uint8_t>& bytes, std::size_t& pos, const char* magic,
                            const std::string& what) {
  auto bad = [&](const std::string& m) { fail(ErrorKind::integrity, what + ": " + m); };
  if (bytes.size() < pos + 16 || std::memcmp(bytes.data() + pos, magic, 8) != 0) bad("bad section magic");
  const std::uint64_t hlen = get_u64(bytes.data() + pos + 8);
  pos += 16;
  if (bytes.size() - pos < hlen) bad("truncated header");
  Section s;
  try {
    s.header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                           bytes.begin() + static_cast<std::ptrdiff_t>(pos + hlen));
  } catch (const json::exception& e) {
    bad(std::string("unreadable header: ") + e.what());
  }
  pos += hlen;
  const std::uint64_t plen = s.header.value("payload_bytes", std::uint64_t{0});
  if (bytes.size() - pos < plen) bad("truncated payload");
  s.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + plen));
  pos += plen;
  if (crc32_of(s.payload) != s.header.value("crc32", std::uint32_t{0})) bad("checksum mismatch");
  return s;
}

}  // namespace ckpt_detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  using namespace ckpt_detail;
  json h;
  h["format_version"] = kCheckpointVersion;
  h["config"] = c.config;
  h["seed"] = c.seed;
  h["step"] = c.step;
  h["metadata"] = c.metadata;
  json tensors = json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& a : c.params.storage()) {
    tensors.push_back({{"name", a.name},
                       {"shape", a.shape},
                       {"kind", nn::to_string(a.kind)},
                       {"offset", payload.size()}});
    put_floats(payload, a.value);
  }
  h["tensors"] = tensors;
  json aliases = json::object();
  for (const auto& [path, idx] : c.params.paths())
    if (path != c.params[idx].name) aliases[path] = c.params[idx].name;
  h["aliases"] = aliases;
  h["payload_bytes"] = payload.size();
  h["crc32"] = crc32_of(payload);

  std::vector<std::uint8_t> out;
  put_section(out, kCheckpointMagic, h, payload);
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    require(o.m.size() == c.params.storage_count(), ErrorKind::invalid_argument,
            "optimizer state does not match parameters");
    std::vector<std::uint8_t> op;
    for (const auto& m : o.m) put_floats(op, m);
    for (const auto& v : o.v) put_floats(op, v);
    json oh{{"step", o.step}, {"payload_bytes", op.size()}, {"crc32", crc32_of(op)}};
    put_section(out, kOptimizerMagic, oh, op);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  using namespace ckpt_detail;
  std::size_t pos = 0;
  const auto sec = read_section(bytes, pos, kCheckpointMagic, what);
  Checkpoint c;
  try {
    const auto& h = sec.header;
    if (h.at("format_version").get<int>() != kCheckpointVersion)
      fail(ErrorKind::compatibility, what + ": unsupported checkpoint version");
    c.config = h.at("config").get<ModelConfig>();
    c.seed = h.at("seed").get<std::uint64_t>();
    c.step = h.at("step").get<std::int64_t>();
    c.metadata = h.value("metadata", json::object());
    // The declared layout must be exactly what this config builds.
    c.params = BamMrcd<float>(c.config).declare();
    const auto& tensors = h.at("tensors");
    if (tensors.size() != c.params.storage_count())
      fail(ErrorKind::compatibility, what + ": tensor table does not match the model config");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& a = c.params[i];
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != a.name || t.at("shape").get<std::array<int, 4>>() != a.shape)
        fail(ErrorKind::compatibility, what + ": tensor " + t.at("name").get<std::string>() +
                                           " does not match the model config");
      const std::size_t off = t.at("offset").get<std::size_t>();
      if (off + 4 * a.size() > sec.payload.size()) fail(ErrorKind::integrity, what + ": tensor out of range");
      get_floats(sec.payload.data() + off, a.value);
    }
    const json aliases = h.value("aliases", json::object());
    for (const auto& [path, target] : aliases.items())
      if (!c.params.contains(path) || c.params.index(path) != c.params.index(target.get<std::string>()))
        fail(ErrorKind::compatibility, what + ": alias " + path + " does not match the model config");
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, what + ": malformed header: " + e.what());
  }
  if (pos < bytes.size()) {
    const auto os = read_section(bytes, pos, kOptimizerMagic, what);
    AdamState<float> st(c.params);
    st.step = os.header.value("step", std::int64_t{0});
    std::size_t need = 0;
    for (const auto& m : st.m) need += 8 * m.size();
    if (os.payload.size() != need) fail(ErrorKind::integrity, what + ": optimizer payload size mismatch");
    const std::uint8_t* p = os.payload.data();
    for (auto& m : st.m) {
      get_floats(p, m);
      p += 4 * m.size();
    }
    for (auto& v : st.v) {
      get_floats(p, v);
      p += 4 * v.size();
    }
    c.optimizer = std::move(st);
  }
  if (!c.params.all_finite()) fail(ErrorKind::integrity, what + ": non-finite parameter values");
  return c;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace bamrcd
