#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "balancedit/backbone/config.hpp"
#include "balancedit/backbone/pretrain.hpp"
#include "balancedit/editor/editor.hpp"
#include "balancedit/worldgen/world.hpp"
#include "json.hpp"

namespace balancedit::cli {

struct HarnessConfig {
    std::string editor = "balancedit";
    std::vector<double> alpha_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    int n_edits = 50;
    int n_sequential = 50;
    bool record_wall_time = false;
    std::string output_dir = "out";
};

// Everything a run depends on. The top-level seed is copied into every section's
// seed, so one number pins the world, the initial weights and the suite.
struct RunConfig {
    std::uint64_t seed = 0;
    worldgen::WorldConfig world;
    backbone::ModelConfig model;
    backbone::PretrainOptions pretrain;
    editor::EditorConfig editor;
    HarnessConfig harness;

    void apply_seed(std::uint64_t s);
    // Throws ErrorKind::config.
    void validate() const;
};

void to_json(nlohmann::json& j, const HarnessConfig& c);
void from_json(const nlohmann::json& j, HarnessConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Unknown keys anywhere are config errors; a missing file is a missing_artifact error.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text);

}  // namespace balancedit::cli
