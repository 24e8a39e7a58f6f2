// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssasc/kitti_io.hpp"
#include "ssasc/model.hpp"
#include "ssasc/synthetic.hpp"
#include "ssasc/trainer.hpp"

namespace ssasc {

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct DataConfig {
    /// Dataset directory; empty means synthetic scenes.
    std::string root;
    std::string val_root;
    std::int32_t train_scenes = 4;
    std::int32_t val_scenes = 2;
    std::uint64_t seed = 0;
};

/// Everything a CLI run needs. The grid and class count live in the model
/// section and are copied into the synthetic generator settings.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;
    DataConfig data;
    /// Empty means identity over 0..class_count.
    LabelMap labels;
    std::string palette;  ///< "class:r,g,b ..."; empty uses the built-in palette

    /// Copies shared fields (grid, class count) into dependent sections and
    /// validates every section.
    void finalize();
};

/// INI-style text: [section] headers and key = value lines. Starts from the
/// defaults; unknown sections or keys are errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);
/// "section.key=value".
void apply_override(RunConfig& config, const std::string& assignment);
/// Every key with its resolved value.
std::string to_ini(const RunConfig& config);

/// Named rows of the ablation grid: 2d-ce, 2d-ce-lvz, full-seg-lvz,
/// enc-only-ce, enc-only-ce-lvz, full.
const std::vector<std::string>& ablation_names();
void apply_ablation(RunConfig& config, const std::string& name);

/// Canonical [grid] + [model] text, as embedded in checkpoints.
std::string model_config_text(const ModelConfig& config);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace ssasc
