#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bamrcd/augment.hpp"
#include "bamrcd/checkpoint.hpp"
#include "bamrcd/loss.hpp"
#include "bamrcd/optim.hpp"
#include "bamrcd/synth.hpp"
#include "bamrcd/train.hpp"
#include "test_util.hpp"

using namespace bamrcd;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.widths = {4, 8};
  c.norm_groups = 2;
  return c;
}

std::vector<PatchSample> small_data(int n_pos = 2, int n_neg = 2, std::uint64_t seed = 5) {
  SceneSpec spec;
  spec.hr_size = 64;
  return make_dataset(n_pos, n_neg, spec, seed).patches;
}

TrainConfig quick_train(std::int64_t steps) {
  TrainConfig t;
  t.total_steps = steps;
  t.batch_size = 2;
  t.lr0 = 1e-3;
  return t;
}

Mask lr_mask(const PatchSample& p) { return image_to_mask(p.label_lr); }

}  // namespace

TEST(Bce, PerfectPredictionNearZero) { EXPECT_NEAR(bce({1.0}, {1.0 - 1e-7}), 0.0, 1e-6); }

TEST(Bce, HalfIsLogTwo) {
  EXPECT_NEAR(bce({1.0}, {0.5}), 0.6931471805599453, 1e-12);
  EXPECT_NEAR(bce({0.0}, {0.5}), 0.6931471805599453, 1e-12);
}

TEST(Bce, ClampKeepsExtremesFinite) {
  EXPECT_TRUE(std::isfinite(bce({1.0}, {0.0})));
  EXPECT_NEAR(bce({1.0}, {0.0}), -std::log(1e-7), 1e-9);
}

TEST(Bce, ShapeMismatch) {
  try {
    bce({1.0, 0.0}, {0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
}

TEST(Bce, LogitFormMatchesProbabilityForm) {
  Rng rng(3);
  nn::Tensor<double> z(1, 1, 4, 5), y(1, 1, 4, 5);
  std::vector<double> yv, pv;
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.data[i] = rng.normal(0, 2);
    y.data[i] = rng.uniform(0, 1);
    yv.push_back(y.data[i]);
    pv.push_back(1.0 / (1.0 + std::exp(-z.data[i])));
  }
  nn::Tape<double> t(false);
  const auto l = nn::bce_with_logits(t, t.constant(z), y);
  EXPECT_NEAR(t.value(l).data[0], bce(yv, pv), 1e-12);
}

TEST(CompoundLoss, UniformHalfIsTwoLogTwo) {
  ModelOutputs<double> out{nn::Tensor<double>(1, 1, 2, 2), nn::Tensor<double>(1, 1, 16, 16), {}};
  nn::Tensor<double> yh(1, 1, 16, 16), yl(1, 1, 2, 2, 1.0);
  const auto v = compound_loss(out, yh, yl);
  EXPECT_NEAR(v.L, 2 * std::log(2.0), 1e-12);
  EXPECT_EQ(v.L, v.L_lr + v.L_hr);
}

TEST(CompoundLoss, PerfectHeadsNearZero) {
  nn::Tensor<double> zl(1, 1, 2, 2, 40.0), zh(1, 1, 8, 8, -40.0);
  nn::Tensor<double> yl(1, 1, 2, 2, 1.0), yh(1, 1, 8, 8, 0.0);
  const auto v = compound_loss(ModelOutputs<double>{zl, zh, {}}, yh, yl);
  EXPECT_LT(v.L, 1e-6);
}

TEST(CompoundLoss, SumOfTermsAndWeights) {
  Rng rng(4);
  nn::Tensor<double> zl(2, 1, 2, 2), zh(2, 1, 16, 16), yl(2, 1, 2, 2), yh(2, 1, 16, 16);
  for (auto* t : {&zl, &zh})
    for (auto& v : t->data) v = rng.normal(0, 1);
  for (auto* t : {&yl, &yh})
    for (auto& v : t->data) v = rng.bernoulli(0.4);
  const ModelOutputs<double> out{zl, zh, {}};
  const auto v = compound_loss(out, yh, yl);
  EXPECT_EQ(v.L, v.L_lr + v.L_hr);
  const auto w = compound_loss(out, yh, yl, {0.5, 2.0});
  EXPECT_NEAR(w.L, 0.5 * v.L_lr + 2.0 * v.L_hr, 1e-12);
}

TEST(LinearLr, Boundaries) {
  EXPECT_EQ(linear_lr(0, 1000, 1e-4), 1e-4);
  EXPECT_EQ(linear_lr(1000, 1000, 1e-4), 0.0);
  EXPECT_DOUBLE_EQ(linear_lr(500, 1000, 1e-4), 5e-5);
  EXPECT_EQ(linear_lr(700, 1000, 1e-3, Schedule::constant), 1e-3);
  EXPECT_THROW(linear_lr(1001, 1000, 1e-4), Error);
  EXPECT_THROW(linear_lr(-1, 1000, 1e-4), Error);
}

TEST(Adam, FirstStepIsUnitStep) {
  nn::Parameters<double> p;
  p.add("x", {1, 1, 1, 1}, nn::ParamKind::conv);
  nn::Gradients<double> g(p);
  g.slots[0][0] = 1.0;
  AdamState<double> st(p);
  adam_step(p, g, st, 0.1);
  // m = 0.1, v = 0.001; bias-corrected both are 1.
  EXPECT_NEAR(p[0].value[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(st.m[0][0], 0.1, 1e-15);
  EXPECT_NEAR(st.v[0][0], 0.001, 1e-15);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ZeroGradientLeavesFreshParamsAndDecaysMoments) {
  nn::Parameters<double> p;
  p.add("x", {1, 1, 1, 2}, nn::ParamKind::conv);
  p[0].value = {0.3, -0.7};
  nn::Gradients<double> g(p);
  AdamState<double> st(p);
  adam_step(p, g, st, 0.1);
  EXPECT_EQ(p[0].value, (std::vector<double>{0.3, -0.7}));
  st.m[0] = {0.5, 0.5};
  st.v[0] = {0.2, 0.2};
  adam_step(p, g, st, 0.1);
  EXPECT_NEAR(st.m[0][0], 0.45, 1e-15);
  EXPECT_NEAR(st.v[0][0], 0.2 * 0.999, 1e-15);
}

TEST(Adam, NanGradientNamesArray) {
  nn::Parameters<float> p;
  p.add("enc.w", {1, 1, 1, 1}, nn::ParamKind::conv);
  nn::Gradients<float> g(p);
  g.slots[0][0] = std::numeric_limits<float>::quiet_NaN();
  AdamState<float> st(p);
  try {
    adam_step(p, g, st, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::training);
    EXPECT_NE(std::string(e.what()).find("enc.w"), std::string::npos);
  }
}

TEST(Adam, TiedEncoderGetsSummedGradient) {
  auto sc = small_config();
  sc.siamese_mode = SiameseMode::siamese;
  auto pc = small_config();
  const BamMrcd<double> sm(sc), pm(pc);
  auto pp = pm.init_params(3);
  for (const auto& [path, idx] : pp.paths())
    if (path.rfind("bamcd.enc_b", 0) == 0) pp[idx].value = pp.at("bamcd.enc_a" + path.substr(11)).value;
  auto sp = sm.declare();
  for (auto& a : sp.storage()) a.value = pp.at(a.name).value;

  Rng rng(5);
  nn::Tensor<double> hr(1, 13, 32, 32), a(1, 7, 4, 4), b(1, 7, 4, 4), yh(1, 1, 32, 32), yl(1, 1, 4, 4);
  for (auto* t : {&hr, &a, &b})
    for (auto& v : t->data) v = rng.uniform(0, 1);
  for (auto* t : {&yh, &yl})
    for (auto& v : t->data) v = rng.bernoulli(0.3);
  auto grads = [&](const BamMrcd<double>& m, const nn::Parameters<double>& p) {
    nn::Tape<double> t(true);
    nn::Binder<double> bind(t, p);
    const auto n = m.forward(bind, t.constant(hr), t.constant(a), t.constant(b));
    const auto l = compound_loss(t, n, yh, yl);
    t.backward(l.L);
    nn::Gradients<double> g(p);
    t.accumulate(g);
    return g;
  };
  const auto gs = grads(sm, sp), gp = grads(pm, pp);
  int checked = 0;
  for (const auto& [path, idx] : sp.paths()) {
    if (path.rfind("bamcd.enc_a", 0) != 0) continue;
    const auto& ga = gp.slots[pp.index(path)];
    const auto& gb = gp.slots[pp.index("bamcd.enc_b" + path.substr(11))];
    for (std::size_t k = 0; k < ga.size(); ++k)
      ASSERT_NEAR(gs.slots[idx][k], ga[k] + gb[k], 1e-10 + 1e-8 * std::abs(ga[k] + gb[k])) << path;
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(Augment, FlipsAreInvolutions) {
  const auto data = small_data(1, 1);
  for (const auto& p : data) {
    AugmentDraw h;
    h.hflip = true;
    AugmentDraw v;
    v.vflip = true;
    EXPECT_TRUE(patches_equal(apply_augmentation(apply_augmentation(p, h), h), p));
    EXPECT_TRUE(patches_equal(apply_augmentation(apply_augmentation(p, v), v), p));
  }
}

TEST(Augment, FlipKeepsCrossResolutionConsistency) {
  const auto p = small_data(1, 0).front();
  const int s = p.scale();
  ASSERT_EQ(downsample_label(p.label_hr, s), lr_mask(p));
  for (int k = 0; k < 3; ++k) {
    AugmentDraw d;
    d.hflip = k != 1;
    d.vflip = k != 0;
    const auto q = apply_augmentation(p, d);
    EXPECT_EQ(downsample_label(q.label_hr, s), lr_mask(q));
    EXPECT_NE(q.label_hr, p.label_hr);
  }
}

TEST(Augment, RotationKeepsShapesAndBinaryLabels) {
  const auto p = small_data(1, 0).front();
  Rng rng(7);
  AugmentationConfig cfg;
  cfg.p_rot = 1.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = augment(p, rng, cfg);
    EXPECT_TRUE(q.hr_pre.same_shape(p.hr_pre));
    EXPECT_TRUE(q.lr_pre.same_shape(p.lr_pre));
    EXPECT_TRUE(q.label_hr.same_shape(p.label_hr));
    EXPECT_TRUE(q.label_lr.same_shape(p.label_lr));
    for (auto v : q.label_hr.data()) ASSERT_TRUE(v == 0 || v == 1);
    for (auto v : q.label_lr.data()) ASSERT_TRUE(v == 0.0f || v == 1.0f);
    EXPECT_EQ(downsample_label(q.label_hr, p.scale()), lr_mask(q));
  }
}

TEST(Augment, ZeroAngleIsIdentity) {
  const auto p = small_data(1, 0).front();
  AugmentDraw d;
  d.rotate = true;
  d.angle_deg = 0.0;
  EXPECT_TRUE(patches_equal(apply_augmentation(p, d), p));
  EXPECT_EQ(rotate_bilinear(p.hr_pre, 0.0), p.hr_pre);
}

TEST(Augment, DrawRespectsProbabilitiesAndRange) {
  Rng rng(8);
  AugmentationConfig cfg;
  int h = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto d = draw_augmentation(rng, cfg);
    h += d.hflip;
    ASSERT_GE(d.angle_deg, -15.0);
    ASSERT_LE(d.angle_deg, 15.0);
  }
  EXPECT_NEAR(h / 2000.0, 0.5, 0.05);
  const auto none = AugmentationConfig::none();
  const auto d = draw_augmentation(rng, none);
  EXPECT_FALSE(d.hflip || d.vflip || d.rotate);
}

TEST(Augment, ConfigValidation) {
  AugmentationConfig c;
  c.rot_min_deg = -10;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.p_hflip = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.rot_min_deg = -95;
  c.rot_max_deg = 95;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Train, OneStepTraceAndLoadableCheckpoint) {
  test::TempDir dir;
  TrainHooks hooks;
  hooks.out_dir = dir.path;
  const auto res = train(small_config(), small_data(), quick_train(1), {}, hooks);
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_EQ(res.trace[0].step, 1);
  const auto ck = load_checkpoint(dir.path / "final.ckpt");
  EXPECT_EQ(ck.step, 1);
  EXPECT_EQ(ck.config, small_config());
  ASSERT_TRUE(ck.optimizer);
  EXPECT_EQ(ck.optimizer->step, 1);
  for (std::size_t i = 0; i < ck.params.storage_count(); ++i) EXPECT_EQ(ck.params[i].value, res.final.params[i].value);
  const auto csv = read_text_file(dir.path / "trace.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,lr,L,L_lr,L_hr,wall_ms");
}

TEST(Train, SameSeedSameTrace) {
  const auto data = small_data();
  const auto a = train(small_config(), data, quick_train(10));
  const auto b = train(small_config(), data, quick_train(10));
  ASSERT_EQ(a.trace.size(), 10u);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].L, b.trace[i].L);
    EXPECT_EQ(a.trace[i].L_lr, b.trace[i].L_lr);
    EXPECT_EQ(a.trace[i].lr, b.trace[i].lr);
  }
  EXPECT_EQ(encode_checkpoint(a.final), encode_checkpoint(b.final));
  auto t = quick_train(10);
  t.seed = 1;
  EXPECT_NE(train(small_config(), data, t).trace.back().L, a.trace.back().L);
}

TEST(Train, LossIdentityEveryStep) {
  const auto res = train(small_config(), small_data(), quick_train(5));
  for (const auto& r : res.trace) EXPECT_NEAR(r.L, r.L_lr + r.L_hr, 1e-6 * std::abs(r.L));
}

TEST(Train, ScheduleFollowsSteps) {
  const auto res = train(small_config(), small_data(), quick_train(4));
  EXPECT_EQ(res.trace[0].lr, 1e-3);
  EXPECT_DOUBLE_EQ(res.trace[2].lr, 0.5e-3);
}

TEST(Train, SiameseViewsStayTied) {
  auto cfg = small_config();
  cfg.siamese_mode = SiameseMode::siamese;
  const auto res = train(cfg, small_data(), quick_train(3));
  const auto& p = res.final.params;
  EXPECT_EQ(p.at("bamcd.enc_a.stage1.res.conv2.w").value, p.at("bamcd.enc_b.stage1.res.conv2.w").value);
}

TEST(Train, PeriodicAndBestCheckpoints) {
  test::TempDir dir;
  TrainHooks hooks;
  hooks.out_dir = dir.path;
  auto t = quick_train(4);
  t.checkpoint_every = 2;
  t.validate_every = 2;
  const auto data = small_data();
  const auto res = train(small_config(), data, t, data, hooks);
  EXPECT_TRUE(fs::exists(dir.path / "step_2.ckpt"));
  EXPECT_FALSE(fs::exists(dir.path / "step_4.ckpt"));
  EXPECT_TRUE(fs::exists(dir.path / "best.ckpt"));
  EXPECT_TRUE(res.best_val_f1.has_value());
  EXPECT_EQ(load_checkpoint(dir.path / "step_2.ckpt").step, 2);
}

TEST(Train, NonFiniteLossNamesStepAndPatch) {
  auto data = small_data(1, 0);
  data[0].hr_pre.data()[0] = std::numeric_limits<float>::infinity();
  auto t = quick_train(2);
  t.batch_size = 1;
  t.aug = AugmentationConfig::none();
  try {
    train(small_config(), data, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::training);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find(data[0].patch_id), std::string::npos) << msg;
  }
}

TEST(Train, RejectsBadConfigAndEmptyData) {
  auto t = quick_train(0);
  EXPECT_THROW(train(small_config(), small_data(), t), Error);
  try {
    train(small_config(), {}, quick_train(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
}
