// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <gtest/gtest.h>

#include "ssasc/config.hpp"
#include "temp_dir.hpp"

namespace {

using namespace ssasc;

TEST(Config, DefaultsAreDeskScale) {
    auto c = parse_config("");
    c.finalize();
    EXPECT_EQ(c.model.grid.extents(), (Extents3{64, 64, 8}));
    EXPECT_EQ(c.model.class_count, 10);
    EXPECT_EQ(c.model.widths_2d, (std::array<std::int64_t, 4>{32, 64, 128, 256}));
    EXPECT_EQ(c.model.fusion_dim, 16);
    EXPECT_EQ(c.model.feature_dim, 32);
    EXPECT_EQ(c.train.lr, 0.001);
    EXPECT_EQ(c.train.lr_decay, 0.98);
    EXPECT_EQ(c.train.batch_size, 2);
    EXPECT_EQ(c.train.loss.sigma_com, 0.5);
    EXPECT_EQ(c.train.loss.sigma_seg, 0.5);
    EXPECT_EQ(c.synth.grid, c.model.grid);
    EXPECT_EQ(c.labels, LabelMap::identity(10));
}

TEST(Config, ParsesSectionsAndRoundTripsThroughIni) {
    const auto c = parse_config(R"(
[model]
class_count = 6
widths_2d = 8 16 24 32
conv_batch_norm = false
[train]
epochs = 7
augment = no
[labels]
map = 10:1 11:2 40:3
)");
    EXPECT_EQ(c.model.class_count, 6);
    EXPECT_EQ(c.model.widths_2d, (std::array<std::int64_t, 4>{8, 16, 24, 32}));
    EXPECT_FALSE(c.model.conv_batch_norm);
    EXPECT_EQ(c.train.epochs, 7);
    EXPECT_FALSE(c.train.augment);
    EXPECT_EQ(c.labels.to_train(40), 3);
    const auto again = parse_config(to_ini(c));
    EXPECT_EQ(to_ini(again), to_ini(c));
    EXPECT_EQ(again.model, c.model);
}

TEST(Config, UnknownKeysAndSectionsAreErrors) {
    EXPECT_THROW(parse_config("[model]\nclas_count = 3\n"), ConfigError);
    EXPECT_THROW(parse_config("[modle]\nclass_count = 3\n"), ConfigError);
    EXPECT_THROW(parse_config("class_count = 3\n"), ConfigError);
    EXPECT_THROW(parse_config("[model]\nclass_count = three\n"), ConfigError);
    EXPECT_THROW(parse_config("[model]\nwidths_2d = 1 2 3\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\naugment = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("[labels]\nmap = 10-1\n"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/ssasc.ini"), ConfigError);
}

TEST(Config, OverridesUseSectionDotKey) {
    RunConfig c;
    apply_override(c, "train.epochs=3");
    apply_override(c, "model.fusion_levels = 2");
    EXPECT_EQ(c.train.epochs, 3);
    EXPECT_EQ(c.model.fusion_levels, 2);
    EXPECT_THROW(apply_override(c, "epochs=3"), ConfigError);
    EXPECT_THROW(apply_override(c, "train.epoch=3"), ConfigError);
    EXPECT_THROW(apply_override(c, "train.epochs"), ConfigError);
}

TEST(Config, FinalizeValidatesAndCopiesSharedFields) {
    RunConfig c;
    c.model.grid = {{0, 0, 0}, {3.2, 3.2, 0.8}, 0.2};
    c.model.class_count = 5;
    c.finalize();
    EXPECT_EQ(c.synth.grid, c.model.grid);
    EXPECT_EQ(c.synth.class_count, 5);
    RunConfig bad;
    bad.labels = LabelMap::parse("10:12");
    EXPECT_THROW(bad.finalize(), ConfigError);
    RunConfig bad_model;
    bad_model.model.level_count = 2;
    EXPECT_THROW(bad_model.finalize(), std::invalid_argument);
}

TEST(Config, AblationPresetsSetTheFlagGrid) {
    struct Want {
        const char* name;
        bool branch, decoder, com_lvz, seg, seg_lvz;
    };
    const std::vector<Want> rows{{"2d-ce", false, false, false, false, false},
                                 {"2d-ce-lvz", false, false, true, false, false},
                                 {"full-seg-lvz", true, true, false, true, true},
                                 {"enc-only-ce", true, false, false, false, false},
                                 {"enc-only-ce-lvz", true, false, true, false, false},
                                 {"full", true, true, true, true, true}};
    ASSERT_EQ(ablation_names().size(), rows.size());
    for (const auto& w : rows) {
        RunConfig c;
        apply_ablation(c, w.name);
        EXPECT_NO_THROW(c.finalize()) << w.name;
        EXPECT_EQ(c.model.segmentation_branch, w.branch) << w.name;
        EXPECT_EQ(c.model.segmentation_decoder, w.decoder) << w.name;
        EXPECT_EQ(c.train.loss.completion_lovasz, w.com_lvz) << w.name;
        EXPECT_EQ(c.train.loss.segmentation, w.seg) << w.name;
        EXPECT_EQ(c.train.loss.segmentation_lovasz, w.seg_lvz) << w.name;
    }
    RunConfig c;
    EXPECT_THROW(apply_ablation(c, "half"), ConfigError);
}

TEST(Config, ModelTextIsCanonical) {
    ModelConfig m;
    m.class_count = 7;
    m.empty_prior = 0.75;
    const auto text = model_config_text(m);
    EXPECT_EQ(model_config_from_text(text), m);
    EXPECT_EQ(model_config_text(model_config_from_text(text)), text);
    EXPECT_THROW(model_config_from_text("[train]\nepochs = 1\n"), ConfigError);
}

TEST(Config, ShippedConfigsLoad) {
    for (const char* name : {"desk.ini", "semantickitti.ini"}) {
        const auto path = std::filesystem::path(SSASC_SOURCE_DIR) / "configs" / name;
        auto c = load_config(path);
        EXPECT_NO_THROW(c.finalize()) << name;
    }
}

}  // namespace
