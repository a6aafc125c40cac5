#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "bamrcd/archive.hpp"
#include "bamrcd/geotiff.hpp"
#include "bamrcd/metrics.hpp"
#include "bamrcd/render.hpp"
#include "bamrcd/synth.hpp"
#include "test_util.hpp"

using namespace bamrcd;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(const std::string& args, const fs::path& work, const std::string& env = "") {
  static int n = 0;
  const auto o = work / ("stdout_" + std::to_string(n) + ".txt");
  const auto e = work / ("stderr_" + std::to_string(n++) + ".txt");
  const std::string cmd = "cd '" + work.string() + "' && " + env + " '" + BAMRCD_CLI + "' " + args + " > '" +
                          o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(o);
  r.err = read_text_file(e);
  return r;
}

int lines_in(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  int n = 0;
  while (std::getline(in, l)) ++n;
  return n;
}

const char* kTiny = " --widths 4,8 --norm-groups 2 ";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto r = run("synth --out arch --n-pos 3 --n-neg 3 --hr-size 64 --seed 3 --fractions 0.5,0.25,0.25", dir.path);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  test::TempDir dir;
  fs::path arch() const { return dir.path / "arch"; }
};

}  // namespace

TEST(CliBasics, HelpAndUsageErrors) {
  test::TempDir d;
  EXPECT_EQ(run("--help", d.path).code, 0);
  EXPECT_EQ(run("train --help", d.path).code, 0);
  EXPECT_EQ(run("", d.path).code, 2);
  EXPECT_EQ(run("frobnicate", d.path).code, 2);
  EXPECT_EQ(run("synth --out x --bogus 3", d.path).code, 2);
  const auto missing = run("train --archive nowhere --out r", d.path);
  EXPECT_EQ(missing.code, 3);
  EXPECT_FALSE(missing.err.empty());
}

TEST(CliSynth, EightPatchesAndReproducible) {
  test::TempDir d;
  ASSERT_EQ(run("synth --out a --n-pos 4 --n-neg 4 --hr-size 128 --seed 7", d.path).code, 0);
  ASSERT_EQ(run("synth --out b --n-pos 4 --n-neg 4 --hr-size 128 --seed 7", d.path).code, 0);
  const auto a = read_archive(d.path / "a");
  ASSERT_EQ(a.patches.size(), 8u);
  EXPECT_TRUE(fs::exists(d.path / "a" / "resolved_config.json"));
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(d.path / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "resolved_config.json") continue;
    const auto rel = fs::relative(e.path(), d.path / "a");
    ASSERT_TRUE(fs::exists(d.path / "b" / rel)) << rel;
    EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(d.path / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 8 * 5);
}

TEST(CliSynth, SizeClassSmall) {
  test::TempDir d;
  ASSERT_EQ(run("synth --out a --n-pos 5 --n-neg 1 --hr-size 64 --size-class small --seed 2", d.path).code, 0);
  int pos = 0;
  for (const auto& p : read_archive(d.path / "a").patches) {
    const auto n = count_positive(p.label_hr);
    if (n == 0) continue;
    ++pos;
    EXPECT_EQ(size_class(n, 64, 64), SizeClass::small) << p.patch_id << " " << n;
  }
  EXPECT_EQ(pos, 5);
}

TEST(CliPrepare, ToySceneTilesFourPatchesPerEvent) {
  test::TempDir d;
  test::write_toy_scenes(d.path, 3, 512, 40.0, 256);
  const auto r = run("prepare --events events.json --out arch --seed 1", d.path);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("tiled 12 patches, filtered 0, kept 12"), std::string::npos) << r.out;
  const auto a = read_archive(d.path / "arch");
  std::map<std::string, int> per_event;
  for (const auto& p : a.patches) per_event[p.event_id]++;
  EXPECT_EQ(per_event, (std::map<std::string, int>{{"ev0", 4}, {"ev1", 4}, {"ev2", 4}}));
  for (const auto& p : a.patches) {
    EXPECT_TRUE(p.is_positive);
    EXPECT_EQ(p.hr_pre.rows(), 256);
    EXPECT_EQ(p.lr_pre.rows(), 32);
  }
  EXPECT_TRUE(fs::exists(d.path / "arch" / "resolved_config.json"));
}

TEST(CliPrepare, MinAreaDropsSmallEvent) {
  test::TempDir d;
  test::write_toy_scenes(d.path, 3, 512, 22.0);
  const auto r = run("prepare --events events.json --out small --min-area-ha 25", d.path);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& p : read_archive(d.path / "small").patches) EXPECT_FALSE(p.is_positive);
  ASSERT_EQ(run("prepare --events events.json --out kept --min-area-ha 20", d.path).code, 0);
  int pos = 0;
  for (const auto& p : read_archive(d.path / "kept").patches) pos += p.is_positive;
  EXPECT_EQ(pos, 3);
}

TEST(CliPrepare, EventDisjointSplitsAndBalancedNegatives) {
  test::TempDir d;
  test::write_toy_scenes(d.path, 6, 512, 40.0);
  ASSERT_EQ(run("prepare --events events.json --out arch --seed 4", d.path).code, 0);
  const auto a = read_archive(d.path / "arch");
  std::map<std::string, std::set<Split>> where;
  int pos = 0, neg = 0;
  for (const auto& p : a.patches) {
    where[p.event_id].insert(a.manifest.split_of(p.event_id));
    (p.is_positive ? pos : neg) += 1;
  }
  for (const auto& [e, s] : where) EXPECT_EQ(s.size(), 1u) << e;
  EXPECT_EQ(pos, 6);
  EXPECT_EQ(neg, 6);
}

TEST(CliPrepare, SchemaErrorNamesFile) {
  test::TempDir d;
  write_text_file(d.path / "events.json", R"({"events": [{"event_id": "x"}]})");
  const auto r = run("prepare --events events.json --out arch", d.path);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("events.json"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainOneStep) {
  const auto r = run("train --archive arch --out run --steps 1 --val-split none" + std::string(kTiny), dir.path);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir.path / "run" / "final.ckpt"));
  EXPECT_EQ(lines_in(dir.path / "run" / "trace.csv"), 2);
  const auto cfg = nlohmann::json::parse(read_text_file(dir.path / "run" / "resolved_config.json"));
  EXPECT_EQ(cfg["train"]["total_steps"], 1);
  EXPECT_EQ(cfg["model"]["widths"], nlohmann::json::array({4, 8}));
}

TEST_F(Cli, EvalLabelsAsPredictions) {
  const auto r = run("eval --archive arch --split all --labels-as-predictions --out ev", dir.path);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(read_text_file(dir.path / "ev" / "metrics.json"))["runs"][0];
  for (const char* k : {"precision", "recall", "f1", "iou"}) EXPECT_EQ(m[k], 1.0) << k;
  EXPECT_EQ(m["n_events_detected"], 3);
  EXPECT_TRUE(fs::exists(dir.path / "ev" / "table.txt"));
  EXPECT_TRUE(fs::exists(dir.path / "ev" / "ratios.csv"));
}

TEST_F(Cli, EvalSeveralCheckpointsAndPredict) {
  for (int s : {0, 1})
    ASSERT_EQ(run("train --archive arch --out r" + std::to_string(s) + " --steps 1 --val-split none --seed " +
                      std::to_string(s) + kTiny,
                  dir.path)
                  .code,
              0);
  const auto e = run("eval --archive arch --split test --checkpoint r0/final.ckpt --checkpoint r1/final.ckpt --out ev", dir.path);
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(read_text_file(dir.path / "ev" / "table.txt").find("±"), std::string::npos);

  const auto a = read_archive(arch());
  const auto id = a.patches.front().patch_id;
  const auto p = run("predict --archive arch --checkpoint r0/final.ckpt --out pred --split all --patch " + id, dir.path);
  ASSERT_EQ(p.code, 0) << p.err;
  const auto hr = tiff::read((dir.path / "pred" / (id + ".hr_mask.tif")).string());
  const auto lr = tiff::read((dir.path / "pred" / (id + ".lr_mask.tif")).string());
  EXPECT_EQ(hr.data.rows(), 64);
  EXPECT_EQ(lr.data.rows(), 8);
  for (float v : hr.data.data()) ASSERT_TRUE(v == 0.0f || v == 1.0f);
  int masks = 0;
  for (const auto& f : fs::directory_iterator(dir.path / "pred")) masks += f.path().extension() == ".tif";
  EXPECT_EQ(masks, 2);
}

TEST_F(Cli, EvalIncompatibleCheckpoint) {
  ASSERT_EQ(run("synth --out other --n-pos 1 --n-neg 0 --hr-size 64 --s 4", dir.path).code, 0);
  ASSERT_EQ(run("train --archive other --out r --steps 1 --val-split none" + std::string(kTiny), dir.path).code, 0);
  const auto e = run("eval --archive arch --split all --checkpoint r/final.ckpt", dir.path);
  EXPECT_EQ(e.code, 3);
  EXPECT_NE(e.err.find("compatib"), std::string::npos) << e.err;
}

TEST_F(Cli, RenderOverlays) {
  const auto r = run("render --archive arch --split all --labels-as-predictions --out vis --lr", dir.path);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = read_archive(arch());
  for (const auto& p : a.patches) {
    const auto img = read_png(dir.path / "vis" / "overlays" / (p.patch_id + ".hr.png"));
    const auto c = overlay_counts(img);
    EXPECT_EQ(c.fp + c.fn, 0u);
    EXPECT_EQ(c.tp, count_positive(p.label_hr));
    EXPECT_TRUE(fs::exists(dir.path / "vis" / "overlays" / (p.patch_id + ".lr.png")));
  }
  EXPECT_TRUE(fs::exists(dir.path / "vis" / "ratio_histogram.png"));
  EXPECT_EQ(read_text_file(dir.path / "vis" / "ratios.csv").substr(0, 26), "event_id,fp_ratio,fn_ratio");
}

TEST_F(Cli, AblateSingleSeed) {
  const auto r = run("ablate --archive arch --out abl --train-split all --eval-split all --seeds 1 --steps 1" +
                         std::string(kTiny),
                     dir.path);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = read_text_file(dir.path / "abl" / "ablation.txt");
  std::istringstream in(t);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 10u) << t;
  EXPECT_NE(lines[0].find("#Events"), std::string::npos);
  for (std::size_t i = 2; i < lines.size(); ++i) {
    EXPECT_NE(lines[i].find("1/1"), std::string::npos) << lines[i];
    EXPECT_EQ(lines[i].find("failed"), std::string::npos) << lines[i];
  }
  const auto j = nlohmann::json::parse(read_text_file(dir.path / "abl" / "ablation.json"));
  std::set<std::string> combos;
  for (const auto& row : j["rows"]) {
    combos.insert(row["siamese_mode"].get<std::string>() + (row["attn_lr"].get<bool>() ? "1" : "0") +
                  (row["attn_hr"].get<bool>() ? "1" : "0"));
    for (const auto& [k, v] : row["summary"].items()) {
      if (!v["std"].is_null()) {
        EXPECT_EQ(v["std"], 0.0) << k;
      }
    }
  }
  EXPECT_EQ(combos.size(), 8u);
}

TEST_F(Cli, ConfigFilesAndPrecedence) {
  write_text_file(dir.path / "c.toml", "[train]\nsteps = 2\nval_split = \"none\"\nwidths = [4, 8]\nnorm-groups = 2\n");
  ASSERT_EQ(run("train --archive arch --out t1 --config c.toml", dir.path).code, 0);
  EXPECT_EQ(lines_in(dir.path / "t1" / "trace.csv"), 3);
  ASSERT_EQ(run("train --config c.toml --archive arch --out t2 --steps 3", dir.path).code, 0);
  EXPECT_EQ(lines_in(dir.path / "t2" / "trace.csv"), 4);

  write_text_file(dir.path / "c.json", R"({"train": {"steps": 1, "val-split": "none", "widths": [4, 8], "norm_groups": 2}})");
  ASSERT_EQ(run("train --archive arch --out t3 --config c.json", dir.path).code, 0);
  EXPECT_EQ(lines_in(dir.path / "t3" / "trace.csv"), 2);

  write_text_file(dir.path / "bad.toml", "[train]\nstepz = 2\n");
  EXPECT_EQ(run("train --archive arch --out t4 --config bad.toml", dir.path).code, 2);
}

TEST_F(Cli, InvalidValuesAndOutputRoot) {
  EXPECT_EQ(run("train --archive arch --out bad --steps 0 --val-split none" + std::string(kTiny), dir.path).code, 2);
  EXPECT_EQ(run("train --archive arch --out bad --siamese-mode triple" + std::string(kTiny), dir.path).code, 2);
  fs::create_directories(dir.path / "root");
  const auto r = run("eval --archive arch --labels-as-predictions --out ev", dir.path,
                     "BAMRCD_OUTPUT_ROOT='" + (dir.path / "root").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir.path / "root" / "ev" / "metrics.json"));
  EXPECT_FALSE(fs::exists(dir.path / "ev"));
}

TEST_F(Cli, NumericFailureExitCode) {
  auto a = read_archive(arch());
  for (auto& p : a.patches) p.hr_pre.data()[0] = std::numeric_limits<float>::infinity();
  write_archive(a.patches, a.manifest, dir.path / "broken");
  const auto r = run("train --archive broken --out r --steps 2 --no-augment --val-split none" + std::string(kTiny), dir.path);
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
}
