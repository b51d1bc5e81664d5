#include "balancedit/cli/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>

#include "balancedit/backbone/checkpoint.hpp"
#include "balancedit/codebook/codebook.hpp"
#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/editor/editor.hpp"
#include "balancedit/evalharness/harness.hpp"
#include "balancedit/worldgen/suite.hpp"

namespace balancedit::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using backbone::ImageFeature;
using backbone::TokenSequence;

std::string CommandOptions::world_path() const { return world.value_or((fs::path(out) / "world.jsonl").string()); }
std::string CommandOptions::suite_path() const { return suite.value_or((fs::path(out) / "suite.jsonl").string()); }
std::string CommandOptions::checkpoint_path() const {
    return checkpoint.value_or((fs::path(out) / "model.ckpt").string());
}

namespace {

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) {
        fail(ErrorKind::missing_artifact, what + " '" + path + "' not found");
    }
}

std::string out_file(const CommandOptions& o, const std::string& name) {
    fs::create_directories(o.out);
    return (fs::path(o.out) / name).string();
}

void write_config(const CommandOptions& o) { write_file_text(out_file(o, "config.json"), json(o.config).dump(2) + "\n"); }

void require_world_config(const worldgen::WorldConfig& file, const worldgen::WorldConfig& config, const std::string& path) {
    if (json(file) != json(config)) {
        fail(ErrorKind::config, "'" + path + "' was generated with a different world config or seed");
    }
}

worldgen::World load_world(const CommandOptions& o) {
    const std::string path = o.world_path();
    require_file(path, "world file");
    worldgen::World world = worldgen::read_world(path, o.config.model.vocab_size);
    require_world_config(world.config(), o.config.world, path);
    return world;
}

worldgen::EditSuite load_suite(const CommandOptions& o) {
    const std::string path = o.suite_path();
    require_file(path, "suite file");
    worldgen::EditSuite suite = worldgen::read_suite(path);
    require_world_config(suite.world_config, o.config.world, path);
    return suite;
}

backbone::BackboneModel load_model(const CommandOptions& o) {
    const std::string path = o.checkpoint_path();
    require_file(path, "checkpoint");
    backbone::BackboneModel model = backbone::load_checkpoint(path);
    json stored = model.config(), wanted = o.config.model;
    stored.erase("editable_layer");
    wanted.erase("editable_layer");
    if (stored != wanted) {
        fail(ErrorKind::config, "checkpoint '" + path + "' does not match the model config");
    }
    model.set_editable_layer(o.config.model.resolved_editable_layer());
    return model;
}

codebook::Codebook load_codebook_checked(const CommandOptions& o) {
    require_file(*o.codebook, "codebook");
    codebook::Codebook cb = codebook::load_codebook(*o.codebook);
    cb.require_distance(o.config.editor.distance);
    return cb;
}

evalharness::EvalOptions eval_options(const CommandOptions& o) {
    evalharness::EvalOptions e;
    e.editor = evalharness::editor_from_string(o.config.harness.editor);
    e.editor_config = o.config.editor;
    e.seed = o.config.seed;
    e.record_wall_time = o.config.harness.record_wall_time;
    e.config = o.config;
    return e;
}

const worldgen::EditCase& find_case(const worldgen::EditSuite& suite, const std::string& id) {
    auto it = std::find_if(suite.cases.begin(), suite.cases.end(),
                           [&id](const worldgen::EditCase& c) { return c.case_id == id; });
    if (it == suite.cases.end()) {
        fail(ErrorKind::not_found, "no case '" + id + "' in the suite");
    }
    return *it;
}

void print_summary(std::ostream& log, const std::string& label, const evalharness::MetricsReport& r) {
    log << std::fixed << std::setprecision(2) << label << " acc=" << r.acc << " t_gen=" << r.t_gen
        << " i_gen=" << r.i_gen << " loc=" << r.loc << " hm=" << r.hm;
    if (r.mean_radius) {
        log << " mean_radius=" << std::setprecision(4) << *r.mean_radius;
    }
    log << "\n";
}

void write_report(const CommandOptions& o, const std::string& stem, const evalharness::MetricsReport& r) {
    evalharness::export_report(r, out_file(o, stem + ".json"), evalharness::ExportFormat::json);
    evalharness::export_report(r, out_file(o, stem + ".csv"), evalharness::ExportFormat::csv);
}

}  // namespace

int cmd_worldgen(const CommandOptions& o, std::ostream& log) {
    o.config.validate();
    const worldgen::World world = worldgen::World::generate(o.config.world, o.config.model.vocab_size);
    const worldgen::EditSuite suite = worldgen::generate_edit_suite(world, o.config.harness.n_edits, o.config.seed);
    worldgen::write_world(world, out_file(o, "world.jsonl"));
    worldgen::write_suite(suite, out_file(o, "suite.jsonl"));
    write_config(o);
    log << "world: " << world.entities().size() << " entities, " << world.vocabulary().size << " tokens; suite: "
        << suite.cases.size() << " cases\n";
    return 0;
}

int cmd_pretrain(const CommandOptions& o, std::ostream& log) {
    o.config.validate();
    const worldgen::World world = load_world(o);
    const auto heldout = world.heldout_set();
    backbone::BackboneModel model(o.config.model);
    const auto sampler = [&world](int epoch) { return world.pretraining_set(epoch); };
    const backbone::TrainingLog tl = backbone::pretrain(model, sampler, heldout, o.config.pretrain, [&log](int e, double loss) {
        log << "epoch " << e << " loss " << std::setprecision(6) << loss << "\n";
    });
    backbone::save_checkpoint(model, out_file(o, "model.ckpt"));
    write_file_text(out_file(o, "pretrain_log.json"), json{{"epoch_loss", tl.epoch_loss},
                                                           {"heldout_accuracy", tl.heldout_accuracy},
                                                           {"reached_target", tl.reached_target},
                                                           {"config", o.config}}
                                                              .dump(2) + "\n");
    write_config(o);
    log << "held-out accuracy " << std::setprecision(4) << tl.heldout_accuracy << "\n";
    if (!tl.reached_target) {
        fail(ErrorKind::data, "held-out accuracy " + std::to_string(tl.heldout_accuracy) + " below target " +
                                  std::to_string(o.config.pretrain.target_accuracy));
    }
    return 0;
}

int cmd_edit(const CommandOptions& o, std::ostream& log) {
    o.config.validate();
    const evalharness::EvalOptions eo = eval_options(o);
    const worldgen::World world = load_world(o);
    const worldgen::EditSuite suite = load_suite(o);
    const backbone::BackboneModel model = load_model(o);

    std::vector<const worldgen::EditCase*> cases;
    if (o.case_id) {
        cases.push_back(&find_case(suite, *o.case_id));
    } else {
        const int n = o.sequential.value_or(o.config.harness.n_sequential);
        if (n < 1 || static_cast<std::size_t>(n) > suite.cases.size()) {
            fail(ErrorKind::data, "cannot apply " + std::to_string(n) + " edits from a suite of " +
                                      std::to_string(suite.cases.size()));
        }
        for (int k = 0; k < n; ++k) {
            cases.push_back(&suite.cases[static_cast<std::size_t>(k)]);
        }
    }

    std::vector<editor::EditOutcome> outcomes;
    if (eo.editor == evalharness::EditorKind::ft) {
        backbone::BackboneModel edited = model;
        for (const worldgen::EditCase* c : cases) {
            editor::FtEdit step = editor::ft_edit_baseline(evalharness::make_request(*c, world, eo.seed), edited,
                                                           eo.editor_config);
            edited = std::move(step.model);
            editor::EditOutcome out;
            out.case_id = c->case_id;
            out.iterations = step.result.iterations;
            out.final_loss = step.result.final_loss;
            out.converged = step.result.converged;
            outcomes.push_back(out);
        }
        backbone::save_checkpoint(edited, out_file(o, "model_ft.ckpt"));
    } else {
        codebook::Codebook cb(eo.editor_config.distance, eo.editor_config.alpha);
        for (const worldgen::EditCase* c : cases) {
            const editor::EditRequest req = evalharness::make_request(*c, world, eo.seed);
            outcomes.push_back(eo.editor == evalharness::EditorKind::balancedit
                                   ? editor::apply_edit(req, model, cb, eo.editor_config)
                                   : editor::fixed_radius_edit_baseline(req, model, cb, eo.editor_config));
        }
        codebook::save_codebook(cb, out_file(o, "codebook.bin"));
        evalharness::dump_keys(cb, out_file(o, "keys.csv"));
    }
    if (!eo.record_wall_time) {
        for (editor::EditOutcome& out : outcomes) {
            out.wall_time = 0.0;
        }
    }
    editor::write_edit_log(outcomes, out_file(o, "edit_log.jsonl"));
    write_config(o);

    std::size_t unreliable = 0;
    for (const editor::EditOutcome& out : outcomes) {
        log << out.case_id << " " << codebook::to_string(out.action) << " iterations=" << out.iterations
            << " converged=" << (out.converged ? "true" : "false") << " radius=" << std::setprecision(6) << out.radius
            << "\n";
        unreliable += out.converged ? 0 : 1;
    }
    log << outcomes.size() << " edits applied, " << unreliable << " flagged unreliable\n";
    return 0;
}

int cmd_eval(const CommandOptions& o, std::ostream& log) {
    o.config.validate();
    const evalharness::EvalOptions eo = eval_options(o);
    const worldgen::EditSuite suite = load_suite(o);
    const backbone::BackboneModel model = load_model(o);

    evalharness::MetricsReport report;
    std::string mode;
    if (o.codebook) {
        if (eo.editor == evalharness::EditorKind::ft) {
            fail(ErrorKind::config, "the ft editor has no codebook to evaluate");
        }
        report = evalharness::evaluate_codebook(model, load_codebook_checked(o), suite, eo);
        mode = "codebook";
    } else if (o.sequential) {
        const worldgen::World world = load_world(o);
        report = evalharness::run_sequential(model, world, suite, *o.sequential, eo).report;
        mode = "sequential";
    } else if (o.single || eo.editor == evalharness::EditorKind::ft) {
        const worldgen::World world = load_world(o);
        report = evalharness::run_eval(model, world, suite, eo);
        mode = "single";
    } else {
        fail(ErrorKind::missing_artifact, "evaluating the " + o.config.harness.editor +
                                              " editor needs --codebook (or --single / --sequential N)");
    }
    write_report(o, "report_" + report.editor + "_" + mode, report);
    write_config(o);
    print_summary(log, report.editor + " (" + mode + ")", report);
    return 0;
}

int cmd_sweep(const CommandOptions& o, std::ostream& log) {
    o.config.validate();
    const evalharness::EvalOptions eo = eval_options(o);
    const worldgen::World world = load_world(o);
    const worldgen::EditSuite suite = load_suite(o);
    const backbone::BackboneModel model = load_model(o);

    const evalharness::SweepResult sweep = evalharness::sweep_alpha(model, world, suite, o.config.harness.alpha_grid, eo);
    json reports = json::array();
    std::vector<evalharness::SummaryRow> rows;
    for (const evalharness::MetricsReport& r : sweep.reports) {
        reports.push_back(evalharness::report_to_json(r));
        rows.push_back(evalharness::summarize(r));
        std::ostringstream label;
        label << "alpha=" << r.alpha;
        print_summary(log, label.str(), r);
    }
    write_file_text(out_file(o, "sweep.json"), json{{"grid", sweep.grid}, {"reports", reports}}.dump(2) + "\n");
    write_file_text(out_file(o, "sweep.csv"), evalharness::summary_csv(rows));

    if (o.ablations) {
        json named = json::array();
        std::vector<evalharness::SummaryRow> arows;
        for (const evalharness::NamedReport& n : evalharness::run_ablations(model, world, suite, eo)) {
            named.push_back({{"name", n.name}, {"report", evalharness::report_to_json(n.report)}});
            evalharness::SummaryRow row = evalharness::summarize(n.report);
            row.editor = n.name;
            arows.push_back(row);
            print_summary(log, n.name, n.report);
        }
        write_file_text(out_file(o, "ablations.json"), named.dump(2) + "\n");
        write_file_text(out_file(o, "ablations.csv"), evalharness::summary_csv(arows));
    }
    write_config(o);
    return 0;
}

int cmd_inspect(const CommandOptions& o, std::ostream& log) {
    o.config.validate();
    if (!o.codebook) {
        fail(ErrorKind::missing_artifact, "inspect needs --codebook");
    }
    const worldgen::EditSuite suite = load_suite(o);
    const backbone::BackboneModel model = load_model(o);
    const codebook::Codebook cb = load_codebook_checked(o);

    std::string id;
    if (o.case_id) {
        id = *o.case_id;
    } else if (!cb.empty()) {
        id = cb.entries().front().meta.case_id;
    } else {
        fail(ErrorKind::config, "inspect needs --case when the codebook is empty");
    }
    const worldgen::EditCase& c = find_case(suite, id);

    ImageFeature image = c.image;
    TokenSequence prompt = c.prompt;
    const std::string probe = o.probe.value_or("edit");
    auto index = [&probe](std::size_t size) {
        const auto colon = probe.find(':');
        std::size_t k = 0;
        try {
            k = std::stoul(probe.substr(colon + 1));
        } catch (const std::exception&) {
            fail(ErrorKind::config, "bad probe '" + probe + "'");
        }
        if (k >= size) {
            fail(ErrorKind::not_found, "probe '" + probe + "' out of range (" + std::to_string(size) + " available)");
        }
        return k;
    };
    if (probe == "edit") {
    } else if (probe == "black") {
        image = ImageFeature::black(c.image.dim());
    } else if (probe.rfind("rephrase:", 0) == 0) {
        prompt = c.rephrases[index(c.rephrases.size())];
    } else if (probe.rfind("image:", 0) == 0) {
        image = c.image_probes[index(c.image_probes.size())].image;
    } else if (probe.rfind("locality:", 0) == 0) {
        const auto& p = c.locality_probes[index(c.locality_probes.size())];
        image = p.image;
        prompt = p.prompt;
    } else {
        fail(ErrorKind::config, "unknown probe '" + probe + "' (edit, black, rephrase:N, image:N, locality:N)");
    }
    const codebook::Explanation ex = codebook::explain(image, prompt, cb, model);
    log << "case=" << c.case_id << " probe=" << probe << " " << ex.to_string() << "\n";
    return 0;
}

}  // namespace balancedit::cli
