#include "balancedit/cli/run_config.hpp"

#include <filesystem>

#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/json_util.hpp"
#include "balancedit/evalharness/harness.hpp"

namespace balancedit::cli {

using nlohmann::json;

void to_json(json& j, const HarnessConfig& c) {
    j = json{{"editor", c.editor},
             {"alpha_grid", c.alpha_grid},
             {"n_edits", c.n_edits},
             {"n_sequential", c.n_sequential},
             {"record_wall_time", c.record_wall_time},
             {"output_dir", c.output_dir}};
}

void from_json(const json& j, HarnessConfig& c) {
    reject_unknown_keys(j, {"editor", "alpha_grid", "n_edits", "n_sequential", "record_wall_time", "output_dir"},
                        "harness config");
    HarnessConfig d;
    c.editor = j.value("editor", d.editor);
    c.alpha_grid = j.value("alpha_grid", d.alpha_grid);
    c.n_edits = j.value("n_edits", d.n_edits);
    c.n_sequential = j.value("n_sequential", d.n_sequential);
    c.record_wall_time = j.value("record_wall_time", d.record_wall_time);
    c.output_dir = j.value("output_dir", d.output_dir);
}

namespace {

json pretrain_json(const backbone::PretrainOptions& p) {
    return {{"epochs", p.epochs},
            {"lr", p.lr},
            {"final_lr_fraction", p.final_lr_fraction},
            {"batch_size", p.batch_size},

            {"target_accuracy", p.target_accuracy}};
}

backbone::PretrainOptions pretrain_from(const json& j) {
    reject_unknown_keys(j, {"epochs", "lr", "final_lr_fraction", "batch_size", "target_accuracy"}, "pretrain config");
    backbone::PretrainOptions d, p;
    p.epochs = j.value("epochs", d.epochs);
    p.lr = j.value("lr", d.lr);
    p.final_lr_fraction = j.value("final_lr_fraction", d.final_lr_fraction);
    p.batch_size = j.value("batch_size", d.batch_size);
    p.target_accuracy = j.value("target_accuracy", d.target_accuracy);
    return p;
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
    json world = c.world, model = c.model;
    world.erase("seed");
    model.erase("seed");
    j = json{{"seed", c.seed},
             {"world", world},
             {"model", model},
             {"pretrain", pretrain_json(c.pretrain)},
             {"editor", c.editor},
             {"harness", c.harness}};
}

void from_json(const json& j, RunConfig& c) {
    reject_unknown_keys(j, {"seed", "world", "model", "pretrain", "editor", "harness"}, "run config");
    auto section = [&j](const char* name, std::initializer_list<std::string_view> forbidden) {
        json s = j.value(name, json::object());
        if (!s.is_object()) {
            fail(ErrorKind::config, std::string("section '") + name + "' must be an object");
        }
        for (std::string_view key : forbidden) {
            if (s.contains(key)) {
                fail(ErrorKind::config, std::string(name) + "." + std::string(key) + " is set by the top-level seed");
            }
        }
        return s;
    };
    RunConfig r;
    r.world = section("world", {"seed"}).get<worldgen::WorldConfig>();
    r.model = section("model", {"seed"}).get<backbone::ModelConfig>();
    r.pretrain = pretrain_from(section("pretrain", {}));
    r.editor = section("editor", {}).get<editor::EditorConfig>();
    r.harness = section("harness", {}).get<HarnessConfig>();
    r.apply_seed(j.value("seed", std::uint64_t{0}));
    c = std::move(r);
}

void RunConfig::apply_seed(std::uint64_t s) {
    seed = s;
    world.seed = s;
    model.seed = s;
    pretrain.seed = s;
}

void RunConfig::validate() const {
    world.validate();
    model.validate();
    editor.validate();
    evalharness::editor_from_string(harness.editor);
    if (world.d_img != model.d_img) {
        fail(ErrorKind::config, "world.d_img " + std::to_string(world.d_img) + " differs from model.d_img " +
                                    std::to_string(model.d_img));
    }
    pretrain.validate();
    if (harness.n_edits < 1 || harness.n_sequential < 1) {
        fail(ErrorKind::config, "harness n_edits and n_sequential must be >= 1");
    }
}

RunConfig parse_run_config(const std::string& text) {
    try {
        RunConfig c = json::parse(text).get<RunConfig>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        fail(ErrorKind::config, std::string("run config: ") + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        fail(ErrorKind::missing_artifact, "config file '" + path + "' not found");
    }
    const auto bytes = read_file_bytes(path);
    return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace balancedit::cli
