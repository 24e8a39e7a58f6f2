// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "temp_dir.hpp"

namespace {

using namespace ssasc;
using ssasc::testing::TempDir;
namespace fs = std::filesystem;

constexpr const char* kTinyIni = R"([grid]
range_min = 0 0 0
range_max = 3.2 3.2 0.8
voxel_size = 0.2
[model]
class_count = 4
feature_dim = 4
fusion_dim = 3
widths_2d = 4 4 6 6
widths_3d = 3 4 4 5
[train]
epochs = 1
[synth]
object_count = 3
beams = 12
azimuth_steps = 96
sensor_height = 0.5
[data]
train_scenes = 2
val_scenes = 1
)";

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "ssasc");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

/// Output lines that are not "# " config echo.
std::vector<std::string> body_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (!line.starts_with("#")) lines.push_back(line);
    }
    return lines;
}

class Cli : public ::testing::Test {
  protected:
    TempDir dir;
    std::string config;
    void SetUp() override {
        config = (dir / "tiny.ini").string();
        std::ofstream(config) << kTinyIni;
    }
    Result synth(const fs::path& out, int count, int first = 0) {
        return run({"synth", "--config", config, "--out", out.string(), "--count", std::to_string(count), "--first",
                    std::to_string(first)});
    }
};

TEST_F(Cli, HelpAndUsageExitCodes) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({"train", "--help"}).code, 0);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"train", "--bogus"}).code, 2);
    EXPECT_EQ(run({"train", "--ablation", "half"}).code, 2);
    EXPECT_EQ(run({"synth", "--config", config, "--out", (dir / "s").string(), "--count", "0"}).code, 2);
}

TEST_F(Cli, ConfigErrorsExitThree) {
    const auto r = run({"synth", "--config", config, "--out", (dir / "s").string(), "--set", "model.nope=1"});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("model.nope"), std::string::npos);
    EXPECT_EQ(run({"synth", "--config", config, "--out", (dir / "s").string(), "--set", "model.level_count=2"}).code, 3);
}

TEST_F(Cli, SynthWritesALoadableDataset) {
    const auto root = dir / "data";
    const auto r = synth(root, 2);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(body_lines(r.out).size(), 2u);
    RunConfig c = load_config(config);
    c.finalize();
    const auto loaded = load_dataset(root, c.model.grid, c.labels, c.model.class_count);
    const auto direct = synthetic_dataset(c.synth, c.data.seed, 0, 2);
    ASSERT_EQ(loaded.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(loaded[i].grid, direct[i].grid);
        EXPECT_EQ(loaded[i].invalid, direct[i].invalid);
        EXPECT_EQ(loaded[i].point_labels, direct[i].point_labels);
        ASSERT_EQ(loaded[i].cloud.size(), direct[i].cloud.size());
        // Scans are stored as float32.
        for (std::size_t p = 0; p < direct[i].cloud.size(); ++p) {
            EXPECT_EQ(loaded[i].cloud.points[p].x, static_cast<double>(static_cast<float>(direct[i].cloud.points[p].x)));
        }
    }
}

TEST_F(Cli, EvalScoresPairedLabelFiles) {
    const auto root = dir / "data";
    ASSERT_EQ(synth(root, 2).code, 0);
    const auto voxels = (root / "voxels").string();
    const auto r = run({"eval", "--config", config, "--pred", voxels, "--truth", voxels});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto lines = body_lines(r.out);
    const auto first = nlohmann::json::parse(lines.front());
    EXPECT_EQ(first["iou"], 1.0);
    EXPECT_EQ(first["scene"], "000000");
    EXPECT_NE(r.out.find("iou 1.0"), std::string::npos);

    // Unpaired stems, empty directories and missing directories are IO errors.
    const auto other = dir / "other";
    ASSERT_EQ(synth(other, 1, 5).code, 0);
    const auto bad = run({"eval", "--config", config, "--pred", (other / "voxels").string(), "--truth", voxels});
    EXPECT_EQ(bad.code, 4);
    EXPECT_NE(bad.err.find("unpaired"), std::string::npos);
    fs::create_directories(dir / "empty");
    EXPECT_EQ(run({"eval", "--config", config, "--pred", (dir / "empty").string(), "--truth", (dir / "empty").string()})
                  .code,
              4);
    EXPECT_EQ(run({"eval", "--config", config, "--pred", (dir / "nope").string(), "--truth", voxels}).code, 4);
    EXPECT_EQ(run({"eval", "--config", config}).code, 2);
}

TEST_F(Cli, TrainInferExportRoundTrip) {
    const auto out = dir / "run";
    const auto t = run({"train", "--config", config, "--out", out.string()});
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_TRUE(fs::exists(out / "config.ini"));
    EXPECT_EQ(parse_config(ssasc::testing::read_string(out / "config.ini")).model.class_count, 4);
    std::ifstream log(out / "train_log.jsonl");
    std::string line;
    ASSERT_TRUE(std::getline(log, line));
    EXPECT_EQ(nlohmann::json::parse(line)["epoch"], 0);
    EXPECT_NE(t.out.find("# best validation epoch 0"), std::string::npos);

    const auto ckpt = (out / "final.ckpt").string();
    const auto pred = (dir / "pred.label").string();
    const auto i = run({"infer", "--config", config, "--checkpoint", ckpt, "--out", pred});
    ASSERT_EQ(i.code, 0) << i.err;
    const auto j = nlohmann::json::parse(body_lines(i.out).back());
    for (const char* key : {"points", "occupied", "latency_ms_median", "peak_rss_kib"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["runs"], 10);
    const auto grid = read_voxel_labels(pred, {16, 16, 4}, LabelMap::identity(4), 4);
    EXPECT_EQ(static_cast<std::int64_t>(grid.occupied_count()), j["occupied"].get<std::int64_t>());

    const auto txt = (dir / "pred.txt").string();
    const auto e = run({"export", "--config", config, "--grid", pred, "--out", txt, "--palette", "1:10,20,30"});
    ASSERT_EQ(e.code, 0) << e.err;
    std::ifstream in(txt);
    std::size_t n = 0;
    for (std::string l; std::getline(in, l); ++n) {
        std::istringstream fields(l);
        int x, y, z, r, g, b, label;
        ASSERT_TRUE(fields >> x >> y >> z >> r >> g >> b >> label) << l;
        EXPECT_GE(label, 1);
        if (label == 1) {
            EXPECT_EQ((std::array<int, 3>{r, g, b}), (std::array<int, 3>{10, 20, 30}));
        }
    }
    EXPECT_EQ(n, grid.occupied_count());

    // Wrong grid for the checkpoint, bad runs, corrupt checkpoint.
    EXPECT_EQ(run({"infer", "--config", config, "--checkpoint", ckpt, "--out", pred, "--set", "model.class_count=5"}).code,
              3);
    EXPECT_EQ(run({"infer", "--config", config, "--checkpoint", ckpt, "--out", pred, "--runs", "3"}).code, 2);
    const auto broken = dir / "broken.ckpt";
    std::ofstream(broken) << "not a checkpoint";
    EXPECT_EQ(run({"infer", "--config", config, "--checkpoint", broken.string(), "--out", pred}).code, 5);
    EXPECT_EQ(run({"infer", "--config", config, "--checkpoint", ckpt, "--scan", (dir / "tiny.ini").string(), "--out", pred})
                  .code,
              4);
}

TEST_F(Cli, DivergenceExitsSix) {
    const auto r = run({"train", "--config", config, "--set", "train.lr=1e300", "--set", "train.epochs=3"});
    EXPECT_EQ(r.code, 6) << r.err;
}

TEST_F(Cli, ExportGridIsXMajor) {
    SceneLabelGrid g({2, 2, 2}, 4);
    g.at(1, 0, 1) = 2;
    g.at(0, 1, 0) = 3;
    std::ostringstream out;
    EXPECT_EQ(cli::export_grid(g, cli::default_palette(), out), 2u);
    std::istringstream in(out.str());
    std::string a, b;
    std::getline(in, a);
    std::getline(in, b);
    EXPECT_TRUE(a.starts_with("0 1 0 ")) << a;
    EXPECT_TRUE(b.starts_with("1 0 1 ")) << b;
    EXPECT_THROW(cli::parse_palette("1:2,3"), std::invalid_argument);
}

TEST_F(Cli, BenchReportsKernelComparison) {
    const auto r = run({"bench", "--config", config, "--channels", "4", "--repeats", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto body = r.out.substr(r.out.find('{'));
    const auto j = nlohmann::json::parse(body);
    for (const char* key : {"asymmetric_vs_full", "mac_sweep", "conv2d", "voxelizer"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["asymmetric_vs_full"]["pair_params"], 18 * 16);
    EXPECT_EQ(j["asymmetric_vs_full"]["full_params"], 27 * 16);
    EXPECT_GT(j["mac_sweep"]["r2"].get<double>(), 0.99);
}

}  // namespace
