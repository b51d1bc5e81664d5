#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "balancedit/cli/commands.hpp"
#include "balancedit/common/error.hpp"

using namespace balancedit;

namespace {

struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> editor;
    std::optional<double> alpha;
    std::optional<std::string> distance;
    std::optional<std::string> negative;
    std::optional<int> sequential;
    std::optional<int> layer;
    bool timing = false;
    cli::CommandOptions options;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "run config JSON");
    cmd->add_option("--seed", f.seed, "global seed (overrides the config)");
    cmd->add_option("--out", f.out, "output directory (default: $BALANCEDIT_OUT, then harness.output_dir)");
    cmd->add_option("--editor", f.editor, "balancedit | ft | fixed_radius");
    cmd->add_option("--alpha", f.alpha, "radius interpolation in [0, 1]");
    cmd->add_option("--distance", f.distance, "euclidean | cosine");
    cmd->add_option("--negative", f.negative, "black | white | random");
    cmd->add_option("--sequential", f.sequential, "apply/evaluate the first N edits into one codebook");
    cmd->add_option("--layer", f.layer, "editable block index");
    cmd->add_flag("--timing", f.timing, "record wall time in reports");
}

// Config file, then flags on top.
cli::CommandOptions resolve(Flags& f) {
    cli::CommandOptions o = f.options;
    o.config = f.config ? cli::load_run_config(*f.config) : cli::RunConfig{};
    cli::RunConfig& c = o.config;
    if (f.seed) {
        c.apply_seed(*f.seed);
    }
    if (f.editor) {
        c.harness.editor = *f.editor;
    }
    if (f.alpha) {
        c.editor.alpha = *f.alpha;
    }
    if (f.distance) {
        c.editor.distance = codebook::distance_from_string(*f.distance);
    }
    if (f.negative) {
        c.editor.negative = editor::negative_from_string(*f.negative);
    }
    if (f.layer) {
        c.model.editable_layer = *f.layer;
    }
    if (f.timing) {
        c.harness.record_wall_time = true;
    }
    o.sequential = f.sequential;
    if (f.out) {
        o.out = *f.out;
    } else if (const char* env = std::getenv("BALANCEDIT_OUT"); env && *env) {
        o.out = env;
    } else {
        o.out = c.harness.output_dir;
    }
    c.harness.output_dir = o.out;
    c.validate();
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"balancedit: codebook model editing on a toy multimodal decoder"};
    app.require_subcommand(1);
    Flags f;

    auto* worldgen = app.add_subcommand("worldgen", "generate the world and edit suite");
    auto* pretrain = app.add_subcommand("pretrain", "train and checkpoint the backbone");
    auto* edit = app.add_subcommand("edit", "apply edits, write codebook and edit log");
    auto* eval = app.add_subcommand("eval", "score an editor on the suite");
    auto* sweep = app.add_subcommand("sweep", "alpha grid and ablations");
    auto* inspect = app.add_subcommand("inspect", "explain the routing of one query");
    for (auto* cmd : {worldgen, pretrain, edit, eval, sweep, inspect}) {
        add_common(cmd, f);
    }
    for (auto* cmd : {pretrain, edit, eval, sweep}) {
        cmd->add_option("--world", f.options.world, "world file");
    }
    for (auto* cmd : {edit, eval, sweep, inspect}) {
        cmd->add_option("--suite", f.options.suite, "suite file");
        cmd->add_option("--checkpoint", f.options.checkpoint, "model checkpoint");
    }
    for (auto* cmd : {eval, inspect}) {
        cmd->add_option("--codebook", f.options.codebook, "codebook file");
    }
    for (auto* cmd : {edit, inspect}) {
        cmd->add_option("--case", f.options.case_id, "case id");
    }
    eval->add_flag("--single", f.options.single, "edit-evaluate-reset per case");
    sweep->add_flag("--ablations", f.options.ablations, "also run the ablation matrix");
    inspect->add_option("--probe", f.options.probe, "edit | black | rephrase:N | image:N | locality:N");

    CLI11_PARSE(app, argc, argv);

    try {
        const cli::CommandOptions o = resolve(f);
        if (*worldgen) {
            return cli::cmd_worldgen(o, std::cout);
        }
        if (*pretrain) {
            return cli::cmd_pretrain(o, std::cout);
        }
        if (*edit) {
            return cli::cmd_edit(o, std::cout);
        }
        if (*eval) {
            return cli::cmd_eval(o, std::cout);
        }
        if (*sweep) {
            return cli::cmd_sweep(o, std::cout);
        }
        return cli::cmd_inspect(o, std::cout);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
