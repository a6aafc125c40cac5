#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"
#include "bamrcd/nn/ops.hpp"
#include "bamrcd/nn/params.hpp"
#include "bamrcd/nn/tape.hpp"
#include "bamrcd/nn/tensor.hpp"
#include "bamrcd/rng.hpp"

namespace bamrcd {

enum class SiameseMode { siamese, pseudo_siamese };

inline const char* to_string(SiameseMode m) {
  return m == SiameseMode::siamese ? "siamese" : "pseudo_siamese";
}

inline SiameseMode siamese_mode_from_string(const std::string& s) {
  if (s == "siamese") return SiameseMode::siamese;
  if (s == "pseudo_siamese" || s == "pseudo-siamese") return SiameseMode::pseudo_siamese;
  fail(ErrorKind::invalid_argument, "unknown siamese mode '" + s + "'");
}

struct ModelConfig {
  int c1 = 13;
  int c2 = 7;
  int s = 8;
  std::vector<int> widths{32, 64, 128, 256};
  SiameseMode siamese_mode = SiameseMode::pseudo_siamese;
  bool attn_lr = true;
  bool attn_hr = false;
  int se_reduction = 16;
  int hr_depth = 3;
  std::vector<int> hr_widths;  // empty: derived from widths
  int norm_groups = 8;

  /// UNet widths per level 0..hr_depth.
  std::vector<int> unet_widths() const {
    if (!hr_widths.empty()) return hr_widths;
    std::vector<int> u;
    for (int l = 0; l <= hr_depth; ++l)
      u.push_back(widths[std::min<std::size_t>(l, widths.size() - 1)]);
    return u;
  }

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::invalid_argument, "model config: " + m); };
    if (c1 < 1 || c2 < 1) bad("channel counts must be positive");
    if (widths.empty()) bad("widths must be nonempty");
    for (int w : widths)
      if (w < 1) bad("widths must be strictly positive");
    if (hr_depth < 1) bad("hr_depth must be at least 1");
    if (hr_depth > 16 || s != (1 << hr_depth))
      bad("s = " + std::to_string(s) + " must equal 2^hr_depth = " +
          std::to_string(hr_depth <= 16 ? (1 << hr_depth) : -1));
    if (se_reduction < 1) bad("se_reduction must be positive");
    if (norm_groups < 1) bad("norm_groups must be positive");
    if (!hr_widths.empty()) {
      if (static_cast<int>(hr_widths.size()) != hr_depth + 1)
        bad("hr_widths needs hr_depth + 1 entries");
      for (int w : hr_widths)
        if (w < 1) bad("hr_widths must be strictly positive");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"c1", c.c1},
                     {"c2", c.c2},
                     {"s", c.s},
                     {"widths", c.widths},
                     {"siamese_mode", to_string(c.siamese_mode)},
                     {"attn_lr", c.attn_lr},
                     {"attn_hr", c.attn_hr},
                     {"se_reduction", c.se_reduction},
                     {"hr_depth", c.hr_depth},
                     {"hr_widths", c.hr_widths},
                     {"norm_groups", c.norm_groups}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.c1 = j.value("c1", d.c1);
  c.c2 = j.value("c2", d.c2);
  c.s = j.value("s", d.s);
  c.widths = j.value("widths", d.widths);
  c.siamese_mode = siamese_mode_from_string(j.value("siamese_mode", std::string(to_string(d.siamese_mode))));
  c.attn_lr = j.value("attn_lr", d.attn_lr);
  c.attn_hr = j.value("attn_hr", d.attn_hr);
  c.se_reduction = j.value("se_reduction", d.se_reduction);
  c.hr_depth = j.value("hr_depth", d.hr_depth);
  c.hr_widths = j.value("hr_widths", d.hr_widths);
  c.norm_groups = j.value("norm_groups", d.norm_groups);
}

template <class T>
struct ModelOutputs {
  nn::Tensor<T> y_lr_logits;          // [B, 1, H/s, W/s]
  nn::Tensor<T> y_hr_logits;          // [B, 1, H, W]
  nn::Tensor<T> lr_decoder_features;  // [B, F, H/s, W/s]
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// BAM-CD change branch over the LR pair, fused into a UNet over the HR pre-fire image.
template <class T>
class BamMrcd {
 public:
  using Id = typename nn::Tape<T>::Id;

  struct Nodes {
    Id lr_logits, hr_logits, features;
  };

  explicit BamMrcd(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const ModelConfig& config() const noexcept { return cfg_; }

  /// Declares all arrays (zero-valued).
  nn::Parameters<T> declare() const {
    nn::Parameters<T> p;
    const auto& w = cfg_.widths;
    const int n = static_cast<int>(w.size());
    declare_encoder(p, "bamcd.enc_a");
    if (cfg_.siamese_mode == SiameseMode::siamese) {
      std::vector<std::string> own;
      for (const auto& [path, idx] : p.paths()) own.push_back(path);
      for (const auto& path : own) p.alias("bamcd.enc_b" + path.substr(11), path);
    } else {
      declare_encoder(p, "bamcd.enc_b");
    }
    conv_block(p, "bamcd.dec.bottom", 2 * w[n - 1], w[n - 1], cfg_.attn_lr);
    for (int k = n - 2; k >= 0; --k) {
      conv(p, "bamcd.dec.up" + std::to_string(k), w[k], w[k + 1], 3, false);
      norm(p, "bamcd.dec.up" + std::to_string(k) + ".norm", w[k]);
      conv_block(p, "bamcd.dec.block" + std::to_string(k), 3 * w[k], w[k], cfg_.attn_lr);
    }
    conv(p, "bamcd.head", 1, w[0], 1, true, nn::ParamKind::head);

    const auto u = cfg_.unet_widths();
    const int D = cfg_.hr_depth;
    conv_block(p, "unet.enc0", cfg_.c1, u[0], false);
    for (int l = 1; l <= D; ++l) {
      conv(p, "unet.down" + std::to_string(l), u[l], u[l - 1], 3, false);
      norm(p, "unet.down" + std::to_string(l) + ".norm", u[l]);
      conv_block(p, "unet.enc" + std::to_string(l), u[l], u[l], false);
    }
    conv_block(p, "unet.fuse", u[D] + w[0], u[D], cfg_.attn_hr);
    for (int l = D - 1; l >= 0; --l) {
      conv(p, "unet.up" + std::to_string(l), u[l], u[l + 1], 3, false);
      norm(p, "unet.up" + std::to_string(l) + ".norm", u[l]);
      conv_block(p, "unet.dec" + std::to_string(l), 2 * u[l], u[l], cfg_.attn_hr);
    }
    conv(p, "unet.head", 1, u[0], 1, true, nn::ParamKind::head);
    return p;
  }

  /// He-normal kernels, zero biases, unit norm scales, zero final SE layer.
  /// Each array draws from its own stream keyed on its name, so configurations that
  /// share a block get the same initial values for it.
  nn::Parameters<T> init_params(std::uint64_t seed) const {
    auto p = declare();
    for (auto& a : p.storage()) {
      const auto& name = a.name;
      auto ends_with = [&](const std::string& suf) {
        return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
      };
      if (ends_with(".gamma")) {
        std::fill(a.value.begin(), a.value.end(), T{1});
      } else if (ends_with(".beta") || ends_with(".b") || ends_with(".fc2.w")) {
        std::fill(a.value.begin(), a.value.end(), T{});
      } else {
        Rng rng(mix_seed(seed, {fnv1a(name)}));
        const double fan_in = static_cast<double>(a.shape[1]) * a.shape[2] * a.shape[3];
        const double sd = std::sqrt(2.0 / fan_in);
        for (auto& v : a.value) v = static_cast<T>(rng.normal(0.0, sd));
      }
    }
    return p;
  }

  std::size_t count_params() const { return declare().count_scalars(); }

  /// LR change branch: returns (logits, level-0 decoder features).
  std::pair<Id, Id> bamcd(nn::Binder<T>& b, Id lr_pre, Id lr_post) const {
    auto& t = b.tape();
    const auto& w = cfg_.widths;
    const int n = static_cast<int>(w.size());
    const auto& a = t.value(lr_pre);
    require(a.same_shape(t.value(lr_post)), ErrorKind::invalid_argument,
            "lr_pre and lr_post shapes differ");
    require(a.c == cfg_.c2, ErrorKind::invalid_argument,
            "LR input has " + std::to_string(a.c) + " channels, model expects " + std::to_string(cfg_.c2));
    const int m = 1 << (n - 1);
    require(a.h >= m && a.w >= m && a.h % m == 0 && a.w % m == 0, ErrorKind::invalid_argument,
            "LR input " + std::to_string(a.h) + "x" + std::to_string(a.w) + " too small or not divisible by " +
                std::to_string(m) + " for " + std::to_string(n) + " encoder stages");

    const auto fa = encoder(b, "bamcd.enc_a", lr_pre);
    const auto fb = encoder(b, "bamcd.enc_b", lr_post);
    Id x = nn::concat(t, {fa[n - 1], fb[n - 1]});
    x = conv_block(b, "bamcd.dec.bottom", x, cfg_.attn_lr);
    for (int k = n - 2; k >= 0; --k) {
      const std::string up = "bamcd.dec.up" + std::to_string(k);
      x = nn::upsample_nearest(t, x, 2);
      x = conv_norm_relu(b, up, up + ".norm", x, 1, 1);
      x = nn::concat(t, {x, fa[k], fb[k]});
      x = conv_block(b, "bamcd.dec.block" + std::to_string(k), x, cfg_.attn_lr);
    }
    const Id logits = nn::conv2d(t, x, b("bamcd.head.w"), b("bamcd.head.b"), 1, 0);
    return {logits, x};
  }

  /// HR branch; `features` must sit on the deepest UNet grid.
  Id unet(nn::Binder<T>& b, Id hr, Id features) const {
    auto& t = b.tape();
    const int D = cfg_.hr_depth;
    const auto& h = t.value(hr);
    require(h.c == cfg_.c1, ErrorKind::invalid_argument,
            "HR input has " + std::to_string(h.c) + " channels, model expects " + std::to_string(cfg_.c1));
    const int m = 1 << D;
    require(h.h % m == 0 && h.w % m == 0 && h.h >= m && h.w >= m, ErrorKind::invalid_argument,
            "HR input " + std::to_string(h.h) + "x" + std::to_string(h.w) + " not divisible by 2^hr_depth");
    const auto& f = t.value(features);
    require(f.n == h.n && f.h == h.h / m && f.w == h.w / m, ErrorKind::alignment,
            "fusion features " + std::to_string(f.h) + "x" + std::to_string(f.w) +
                " do not match the deepest HR grid " + std::to_string(h.h / m) + "x" + std::to_string(h.w / m));

    std::vector<Id> skips;
    Id x = conv_block(b, "unet.enc0", hr, false);
    skips.push_back(x);
    for (int l = 1; l <= D; ++l) {
      const std::string down = "unet.down" + std::to_string(l);
      x = conv_norm_relu(b, down, down + ".norm", x, 2, 1);
      x = conv_block(b, "unet.enc" + std::to_string(l), x, false);
      skips.push_back(x);
    }
    x = nn::concat(t, {x, features});
    x = conv_block(b, "unet.fuse", x, cfg_.attn_hr);
    for (int l = D - 1; l >= 0; --l) {
      const std::string up = "unet.up" + std::to_string(l);
      x = nn::upsample_nearest(t, x, 2);
      x = conv_norm_relu(b, up, up + ".norm", x, 1, 1);
      x = nn::concat(t, {x, skips[l]});
      x = conv_block(b, "unet.dec" + std::to_string(l), x, cfg_.attn_hr);
    }
    return nn::conv2d(t, x, b("unet.head.w"), b("unet.head.b"), 1, 0);
  }

  Nodes forward(nn::Binder<T>& b, Id hr, Id lr_pre, Id lr_post) const {
    const auto [lr, feat] = bamcd(b, lr_pre, lr_post);
    const Id out = unet(b, hr, feat);
    return {lr, out, feat};
  }

  /// Gradient-free evaluation on batched inputs.
  ModelOutputs<T> run(const nn::Parameters<T>& params, const nn::Tensor<T>& hr, const nn::Tensor<T>& lr_pre,
                      const nn::Tensor<T>& lr_post, std::vector<bool>* sign_log = nullptr,
                      const std::vector<bool>* sign_pattern = nullptr) const {
    nn::Tape<T> tape(false);
    tape.set_sign_log(sign_log);
    tape.set_sign_pattern(sign_pattern);
    nn::Binder<T> b(tape, params);
    const auto n = forward(b, tape.constant(hr), tape.constant(lr_pre), tape.constant(lr_post));
    return {tape.value(n.lr_logits), tape.value(n.hr_logits), tape.value(n.features)};
  }

 private:
  int groups(int c) const { return std::gcd(c, cfg_.norm_groups); }

  static void conv(nn::Parameters<T>& p, const std::string& path, int cout, int cin, int k, bool bias,
                   nn::ParamKind kind = nn::ParamKind::conv) {
    p.add(path + ".w", {cout, cin, k, k}, kind);
    if (bias) p.add(path + ".b", {1, cout, 1, 1}, nn::ParamKind::bias);
  }
  static void norm(nn::Parameters<T>& p, const std::string& path, int c) {
    p.add(path + ".gamma", {1, c, 1, 1}, nn::ParamKind::norm);
    p.add(path + ".beta", {1, c, 1, 1}, nn::ParamKind::norm);
  }
  void se(nn::Parameters<T>& p, const std::string& path, int c) const {
    const int r = std::max(1, c / cfg_.se_reduction);
    p.add(path + ".fc1.w", {r, c, 1, 1}, nn::ParamKind::se);
    p.add(path + ".fc1.b", {1, r, 1, 1}, nn::ParamKind::se);
    p.add(path + ".fc2.w", {c, r, 1, 1}, nn::ParamKind::se);
    p.add(path + ".fc2.b", {1, c, 1, 1}, nn::ParamKind::se);
  }
  void conv_block(nn::Parameters<T>& p, const std::string& path, int cin, int cout, bool attn) const {
    conv(p, path + ".conv1", cout, cin, 3, false);
    norm(p, path + ".norm1", cout);
    conv(p, path + ".conv2", cout, cout, 3, false);
    norm(p, path + ".norm2", cout);
    if (attn) se(p, path + ".se", cout);
  }
  void res_block(nn::Parameters<T>& p, const std::string& path, int cin, int cout) const {
    conv(p, path + ".conv1", cout, cin, 3, false);
    norm(p, path + ".norm1", cout);
    conv(p, path + ".conv2", cout, cout, 3, false);
    norm(p, path + ".norm2", cout);
    if (cin != cout) {
      conv(p, path + ".skip", cout, cin, 1, false);
      norm(p, path + ".skip.norm", cout);
    }
  }
  void declare_encoder(nn::Parameters<T>& p, const std::string& root) const {
    const auto& w = cfg_.widths;
    res_block(p, root + ".stage0.res", cfg_.c2, w[0]);
    for (std::size_t k = 1; k < w.size(); ++k) {
      const std::string st = root + ".stage" + std::to_string(k);
      conv(p, st + ".down", w[k], w[k - 1], 3, false);
      norm(p, st + ".down.norm", w[k]);
      res_block(p, st + ".res", w[k], w[k]);
    }
  }

  Id norm_node(nn::Binder<T>& b, const std::string& path, Id x) const {
    const int c = b.tape().value(x).c;
    return nn::group_norm(b.tape(), x, b(path + ".gamma"), b(path + ".beta"), groups(c));
  }
  Id conv_norm(nn::Binder<T>& b, const std::string& conv_path, const std::string& norm_path, Id x,
               int stride, int pad) const {
    const Id y = nn::conv2d(b.tape(), x, b(conv_path + ".w"), std::nullopt, stride, pad);
    return norm_node(b, norm_path, y);
  }
  Id conv_norm_relu(nn::Binder<T>& b, const std::string& conv_path, const std::string& norm_path, Id x,
                    int stride, int pad) const {
    return nn::relu(b.tape(), conv_norm(b, conv_path, norm_path, x, stride, pad));
  }
  Id se_gate(nn::Binder<T>& b, const std::string& path, Id x) const {
    auto& t = b.tape();
    Id g = nn::global_avg_pool(t, x);
    g = nn::relu(t, nn::conv2d(t, g, b(path + ".fc1.w"), b(path + ".fc1.b"), 1, 0));
    g = nn::sigmoid(t, nn::conv2d(t, g, b(path + ".fc2.w"), b(path + ".fc2.b"), 1, 0));
    return nn::scale_channels(t, x, g);
  }
  Id conv_block(nn::Binder<T>& b, const std::string& path, Id x, bool attn) const {
    x = conv_norm_relu(b, path + ".conv1", path + ".norm1", x, 1, 1);
    x = conv_norm_relu(b, path + ".conv2", path + ".norm2", x, 1, 1);
    return attn ? se_gate(b, path + ".se", x) : x;
  }
  Id res_block(nn::Binder<T>& b, const std::string& path, Id x) const {
    auto& t = b.tape();
    Id y = conv_norm_relu(b, path + ".conv1", path + ".norm1", x, 1, 1);
    y = conv_norm(b, path + ".conv2", path + ".norm2", y, 1, 1);
    const Id skip = b.params().contains(path + ".skip.w") ? conv_norm(b, path + ".skip", path + ".skip.norm", x, 1, 0) : x;
    return nn::relu(t, nn::add(t, y, skip));
  }
  std::vector<Id> encoder(nn::Binder<T>& b, const std::string& root, Id x) const {
    std::vector<Id> feats;
    x = res_block(b, root + ".stage0.res", x);
    feats.push_back(x);
    for (std::size_t k = 1; k < cfg_.widths.size(); ++k) {
      const std::string st = root + ".stage" + std::to_string(k);
      x = conv_norm_relu(b, st + ".down", st + ".down.norm", x, 2, 1);
      x = res_block(b, st + ".res", x);
      feats.push_back(x);
    }
    return feats;
  }

  ModelConfig cfg_;
};

inline std::size_t count_params(const ModelConfig& cfg) { return BamMrcd<float>(cfg).count_params(); }

/// 1 where logistic(logit) >= threshold.
template <class T>
Mask predict(const nn::Tensor<T>& logits, int sample = 0, double threshold = 0.5) {
  require(logits.c == 1, ErrorKind::invalid_argument, "predict expects single-channel logits");
  Mask m(1, logits.h, logits.w);
  const T* z = logits.sample(sample);
  for (std::size_t i = 0; i < logits.plane(); ++i)
    m.data()[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(z[i]))) >= threshold ? 1 : 0;
  return m;
}

}  // namespace bamrcd
