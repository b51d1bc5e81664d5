#include "balancedit/evalharness/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <numeric>
#include <sstream>

#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"

namespace balancedit::evalharness {

using nlohmann::json;

std::string_view to_string(EditorKind kind) {
    switch (kind) {
        case EditorKind::balancedit: return "balancedit";
        case EditorKind::ft: return "ft";
        case EditorKind::fixed_radius: return "fixed_radius";
    }
    return "?";
}

EditorKind editor_from_string(std::string_view name) {
    for (auto k : {EditorKind::balancedit, EditorKind::ft, EditorKind::fixed_radius}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    fail(ErrorKind::config, "unknown editor '" + std::string(name) + "'");
}

double harmonic_mean(double t_gen, double i_gen, double loc) {
    if (t_gen <= 0.0 || i_gen <= 0.0 || loc <= 0.0) {
        return 0.0;
    }
    return 3.0 / (1.0 / t_gen + 1.0 / i_gen + 1.0 / loc);
}

namespace {

struct Tally {
    std::size_t hits = 0;
    std::size_t total = 0;

    void add(bool hit) {
        hits += hit ? 1 : 0;
        ++total;
    }
    double percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total); }
};

}  // namespace

void aggregate(MetricsReport& report) {
    Tally acc, t_gen, i_gen, loc;
    double radius_sum = 0.0;
    std::size_t radius_count = 0;
    for (const CaseRecord& c : report.cases) {
        acc.add(c.reliable);
        for (bool h : c.rephrase_hits) {
            t_gen.add(h);
        }
        for (bool h : c.image_hits) {
            i_gen.add(h);
        }
        for (bool h : c.locality_hits) {
            loc.add(h);
        }
        loc.add(c.black_hit);
        if (c.radius) {
            radius_sum += *c.radius;
            ++radius_count;
        }
    }
    report.acc = acc.percent();
    report.t_gen = t_gen.percent();
    report.i_gen = i_gen.percent();
    report.loc = loc.percent();
    report.hm = harmonic_mean(report.t_gen, report.i_gen, report.loc);
    report.mean_radius.reset();
    if (radius_count > 0) {
        report.mean_radius = radius_sum / static_cast<double>(radius_count);
    }
}

editor::EditRequest make_request(const EditCase& c, const World& world, std::uint64_t seed) {
    editor::EditRequest req;
    req.case_id = c.case_id;
    req.image = c.image;
    req.prompt = c.prompt;
    req.old_answer = c.old_answer;
    req.new_answer = c.new_answer;
    req.rephrase_pool.push_back(c.anchor_rephrase);
    req.rephrase_pool.insert(req.rephrase_pool.end(), c.rephrases.begin(), c.rephrases.end());

    const worldgen::Entity& edited = world.entity(c.entity_id);
    std::vector<int> outside;
    for (const worldgen::Entity& e : world.entities()) {
        if (!world.in_scope(edited, e, c.scope)) {
            outside.push_back(e.id);
        }
    }
    if (!outside.empty()) {
        Rng rng(derive_seed(seed, fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(c.case_id.data()),
                                                     c.case_id.size()))));
        const worldgen::Entity& other = world.entity(outside[rng.uniform_index(outside.size())]);
        const worldgen::Scope kind = worldgen::kAllScopes[rng.uniform_index(worldgen::kAllScopes.size())];
        const auto& prompts = world.paraphrases(kind);
        req.unrelated = editor::QueryPair{world.sample_image(other, rng.next_u64()),
                                          prompts[rng.uniform_index(prompts.size())]};
    }
    return req;
}

CaseRecord eval_case(const Predictor& f_new, const Predictor& f_base, const EditCase& c) {
    CaseRecord r;
    r.case_id = c.case_id;
    r.scope = c.scope;
    r.reliable = f_new(c.image, c.prompt) == c.new_answer;
    for (const TokenSequence& t : c.rephrases) {
        r.rephrase_hits.push_back(f_new(c.image, t) == c.new_answer);
    }
    for (const worldgen::ImageProbe& p : c.image_probes) {
        r.image_hits.push_back(f_new(p.image, c.prompt) == c.new_answer);
    }
    for (const worldgen::LocalityProbe& p : c.locality_probes) {
        r.locality_hits.push_back(f_new(p.image, p.prompt) == f_base(p.image, p.prompt));
    }
    const ImageFeature black = ImageFeature::black(c.image.dim());
    r.black_hit = f_new(black, c.prompt) == f_base(black, c.prompt);
    return r;
}

namespace {

using Clock = std::chrono::steady_clock;

Predictor base_predictor(const BackboneModel& model) {
    return [&model](const ImageFeature& i, const TokenSequence& t) { return model.greedy_decode(i, t, nullptr); };
}

Predictor codebook_predictor(const BackboneModel& model, const codebook::Codebook& cb) {
    return [&model, &cb](const ImageFeature& i, const TokenSequence& t) { return codebook::predict(model, cb, i, t); };
}

void note_outcome(CaseRecord& r, const editor::EditOutcome& o) {
    r.iterations = o.iterations;
    r.converged = o.converged;
    r.radius = o.radius;
    r.d_pos = o.d_pos;
    r.d_neg = o.d_neg;
}

void note_outcome(CaseRecord& r, const editor::FinetuneResult& o) {
    r.iterations = o.iterations;
    r.converged = o.converged;
}

MetricsReport empty_report(const EvalOptions& options) {
    MetricsReport report;
    report.editor = to_string(options.editor);
    report.alpha = options.editor_config.alpha;
    report.config = options.config;
    return report;
}

codebook::Codebook fresh_codebook(const editor::EditorConfig& cfg) {
    return codebook::Codebook(cfg.distance, cfg.alpha);
}

void require_cases(const EditSuite& suite, std::size_t n) {
    if (suite.cases.size() < n) {
        fail(ErrorKind::data, "suite has " + std::to_string(suite.cases.size()) + " cases, need " + std::to_string(n));
    }
}

}  // namespace

MetricsReport run_eval(const BackboneModel& model, const World& world, const EditSuite& suite,
                       const EvalOptions& options) {
    options.editor_config.validate();
    MetricsReport report = empty_report(options);
    const Predictor f_base = base_predictor(model);
    const auto start = Clock::now();
    for (const EditCase& c : suite.cases) {
        const editor::EditRequest req = make_request(c, world, options.seed);
        CaseRecord record;
        if (options.editor == EditorKind::ft) {
            const editor::FtEdit edited = editor::ft_edit_baseline(req, model, options.editor_config);
            record = eval_case(base_predictor(edited.model), f_base, c);
            note_outcome(record, edited.result);
        } else {
            codebook::Codebook cb = fresh_codebook(options.editor_config);
            const editor::EditOutcome outcome =
                options.editor == EditorKind::balancedit
                    ? editor::apply_edit(req, model, cb, options.editor_config)
                    : editor::fixed_radius_edit_baseline(req, model, cb, options.editor_config);
            record = eval_case(codebook_predictor(model, cb), f_base, c);
            note_outcome(record, outcome);
        }
        report.cases.push_back(std::move(record));
    }
    if (options.record_wall_time) {
        report.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    }
    aggregate(report);
    return report;
}

SequentialReport run_sequential(const BackboneModel& model, const World& world, const EditSuite& suite, int n,
                                const EvalOptions& options) {
    options.editor_config.validate();
    if (n < 1) {
        fail(ErrorKind::config, "sequential run needs n >= 1");
    }
    const auto count = static_cast<std::size_t>(n);
    require_cases(suite, count);
    const std::span<const EditCase> cases(suite.cases.data(), count);

    SequentialReport out;
    out.report = empty_report(options);
    const Predictor f_base = base_predictor(model);
    const auto start = Clock::now();
    if (options.editor == EditorKind::ft) {
        BackboneModel edited = model;
        std::vector<editor::FinetuneResult> results;
        for (const EditCase& c : cases) {
            editor::FtEdit step = editor::ft_edit_baseline(make_request(c, world, options.seed), edited,
                                                           options.editor_config);
            edited = std::move(step.model);
            editor::EditOutcome o;
            o.case_id = c.case_id;
            o.iterations = step.result.iterations;
            o.final_loss = step.result.final_loss;
            o.converged = step.result.converged;
            out.outcomes.push_back(o);
            results.push_back(std::move(step.result));
        }
        const Predictor f_new = base_predictor(edited);
        for (std::size_t k = 0; k < count; ++k) {
            out.report.cases.push_back(eval_case(f_new, f_base, cases[k]));
            note_outcome(out.report.cases.back(), results[k]);
        }
    } else {
        codebook::Codebook cb = fresh_codebook(options.editor_config);
        for (const EditCase& c : cases) {
            const editor::EditRequest req = make_request(c, world, options.seed);
            out.outcomes.push_back(options.editor == EditorKind::balancedit
                                       ? editor::apply_edit(req, model, cb, options.editor_config)
                                       : editor::fixed_radius_edit_baseline(req, model, cb, options.editor_config));
            if (!options.record_wall_time) {
                out.outcomes.back().wall_time = 0.0;
            }
        }
        const Predictor f_new = codebook_predictor(model, cb);
        for (std::size_t k = 0; k < count; ++k) {
            out.report.cases.push_back(eval_case(f_new, f_base, cases[k]));
            note_outcome(out.report.cases.back(), out.outcomes[k]);
        }
        out.codebook_size = cb.size();
        out.codebook = std::move(cb);
    }
    if (options.record_wall_time) {
        out.report.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    }
    aggregate(out.report);
    return out;
}

MetricsReport evaluate_codebook(const BackboneModel& model, const codebook::Codebook& cb, const EditSuite& suite,
                                const EvalOptions& options) {
    MetricsReport report = empty_report(options);
    report.alpha = cb.alpha();
    const Predictor f_new = codebook_predictor(model, cb);
    const Predictor f_base = base_predictor(model);
    const auto start = Clock::now();
    for (const EditCase& c : suite.cases) {
        auto it = std::find_if(cb.entries().begin(), cb.entries().end(),
                               [&c](const codebook::CodebookEntry& e) { return e.meta.case_id == c.case_id; });
        if (it == cb.entries().end()) {
            continue;
        }
        CaseRecord record = eval_case(f_new, f_base, c);
        record.radius = it->radius;
        record.d_pos = it->meta.d_pos;
        record.d_neg = it->meta.d_neg;
        report.cases.push_back(std::move(record));
    }
    if (report.cases.empty()) {
        fail(ErrorKind::data, "codebook holds no entry for any case of this suite");
    }
    if (options.record_wall_time) {
        report.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    }
    aggregate(report);
    return report;
}

SweepResult sweep_alpha(const BackboneModel& model, const World& world, const EditSuite& suite,
                        std::span<const double> grid, const EvalOptions& options) {
    if (grid.empty()) {
        fail(ErrorKind::config, "alpha grid is empty");
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(grid[k] >= 0.0 && grid[k] <= 1.0) || (k > 0 && !(grid[k] > grid[k - 1]))) {
            fail(ErrorKind::config, "alpha grid must be strictly increasing inside [0, 1]");
        }
    }
    SweepResult out;
    out.grid.assign(grid.begin(), grid.end());
    for (double alpha : grid) {
        EvalOptions o = options;
        o.editor_config.alpha = alpha;
        out.reports.push_back(run_eval(model, world, suite, o));
    }
    return out;
}

std::vector<NamedReport> run_ablations(const BackboneModel& model, const World& world, const EditSuite& suite,
                                       const EvalOptions& options) {
    std::vector<NamedReport> out;
    out.push_back({"reference", run_eval(model, world, suite, options)});

    EvalOptions o = options;
    o.editor_config.distance = options.editor_config.distance == codebook::DistanceKind::euclidean
                                   ? codebook::DistanceKind::cosine
                                   : codebook::DistanceKind::euclidean;
    out.push_back({"distance_" + std::string(codebook::to_string(o.editor_config.distance)),
                   run_eval(model, world, suite, o)});

    for (auto neg : {editor::NegativeAnchor::black, editor::NegativeAnchor::white, editor::NegativeAnchor::random_pair}) {
        if (neg == options.editor_config.negative) {
            continue;
        }
        o = options;
        o.editor_config.negative = neg;
        out.push_back({"negative_" + std::string(editor::to_string(neg)), run_eval(model, world, suite, o)});
    }

    const int layer = model.editable_layer();
    if (layer > 0) {
        BackboneModel shifted = model;
        shifted.set_editable_layer(layer - 1);
        out.push_back({"layer_" + std::to_string(layer - 1), run_eval(shifted, world, suite, options)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Export

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_double(const json& j, const char* key) {
    const json& v = j.at(key);
    if (v.is_null()) {
        return std::nullopt;
    }
    return v.get<double>();
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, int line_no) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        fail(ErrorKind::format, "summary csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
    }
    return v;
}

}  // namespace

json report_to_json(const MetricsReport& report) {
    json cases = json::array();
    for (const CaseRecord& c : report.cases) {
        cases.push_back({{"case_id", c.case_id},
                         {"scope", worldgen::to_string(c.scope)},
                         {"reliable", c.reliable},
                         {"rephrase_hits", c.rephrase_hits},
                         {"image_hits", c.image_hits},
                         {"locality_hits", c.locality_hits},
                         {"black_hit", c.black_hit},
                         {"iterations", c.iterations},
                         {"converged", c.converged},
                         {"radius", optional_json(c.radius)},
                         {"d_pos", optional_json(c.d_pos)},
                         {"d_neg", optional_json(c.d_neg)}});
    }
    return {{"editor", report.editor},
            {"alpha", report.alpha},
            {"acc", report.acc},
            {"t_gen", report.t_gen},
            {"i_gen", report.i_gen},
            {"loc", report.loc},
            {"hm", report.hm},
            {"mean_radius", optional_json(report.mean_radius)},
            {"wall_time", report.wall_time},
            {"cases", cases},
            {"config", report.config}};
}

MetricsReport report_from_json(const json& j) {
    try {
        MetricsReport r;
        r.editor = j.at("editor").get<std::string>();
        r.alpha = j.at("alpha").get<double>();
        r.acc = j.at("acc").get<double>();
        r.t_gen = j.at("t_gen").get<double>();
        r.i_gen = j.at("i_gen").get<double>();
        r.loc = j.at("loc").get<double>();
        r.hm = j.at("hm").get<double>();
        r.mean_radius = optional_double(j, "mean_radius");
        r.wall_time = j.at("wall_time").get<double>();
        r.config = j.at("config");
        for (const json& c : j.at("cases")) {
            CaseRecord rec;
            rec.case_id = c.at("case_id").get<std::string>();
            rec.scope = worldgen::scope_from_string(c.at("scope").get<std::string>());
            rec.reliable = c.at("reliable").get<bool>();
            rec.rephrase_hits = c.at("rephrase_hits").get<std::vector<bool>>();
            rec.image_hits = c.at("image_hits").get<std::vector<bool>>();
            rec.locality_hits = c.at("locality_hits").get<std::vector<bool>>();
            rec.black_hit = c.at("black_hit").get<bool>();
            rec.iterations = c.at("iterations").get<int>();
            rec.converged = c.at("converged").get<bool>();
            rec.radius = optional_double(c, "radius");
            rec.d_pos = optional_double(c, "d_pos");
            rec.d_neg = optional_double(c, "d_neg");
            r.cases.push_back(std::move(rec));
        }
        return r;
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("report: ") + e.what());
    }
}

SummaryRow summarize(const MetricsReport& report) {
    return {report.editor, report.alpha,  report.acc,         report.t_gen,    report.i_gen,
            report.loc,    report.hm,     report.mean_radius, report.wall_time};
}

std::string summary_csv(std::span<const SummaryRow> rows) {
    std::string out(kSummaryHeader);
    out += "\n";
    for (const SummaryRow& r : rows) {
        out += r.editor;
        for (double v : {r.alpha, r.acc, r.t_gen, r.i_gen, r.loc, r.hm}) {
            out += "," + format_double(v);
        }
        out += "," + (r.mean_radius ? format_double(*r.mean_radius) : std::string());
        out += "," + format_double(r.wall_time) + "\n";
    }
    return out;
}

std::vector<SummaryRow> parse_summary_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kSummaryHeader) {
        fail(ErrorKind::format, "summary csv line 1: expected header '" + std::string(kSummaryHeader) + "'");
    }
    std::vector<SummaryRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream cell_in(line);
        std::string cell;
        while (std::getline(cell_in, cell, ',')) {
            cells.push_back(cell);
        }
        if (line.back() == ',') {
            cells.emplace_back();
        }
        if (cells.size() != 9) {
            fail(ErrorKind::format, "summary csv line " + std::to_string(line_no) + ": expected 9 columns, got " +
                                        std::to_string(cells.size()));
        }
        SummaryRow r;
        r.editor = cells[0];
        r.alpha = parse_double(cells[1], line_no);
        r.acc = parse_double(cells[2], line_no);
        r.t_gen = parse_double(cells[3], line_no);
        r.i_gen = parse_double(cells[4], line_no);
        r.loc = parse_double(cells[5], line_no);
        r.hm = parse_double(cells[6], line_no);
        if (!cells[7].empty()) {
            r.mean_radius = parse_double(cells[7], line_no);
        }
        r.wall_time = parse_double(cells[8], line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

void export_report(const MetricsReport& report, const std::string& path, ExportFormat format) {
    if (format == ExportFormat::json) {
        write_file_text(path, report_to_json(report).dump(2) + "\n");
    } else {
        const SummaryRow row = summarize(report);
        write_file_text(path, summary_csv(std::span(&row, 1)));
    }
}

std::string keys_csv(const codebook::Codebook& cb) {
    std::string out = "id";
    const std::size_t dim = cb.empty() ? 0 : cb.entries().front().key.size();
    for (std::size_t k = 0; k < dim; ++k) {
        out += ",k" + std::to_string(k);
    }
    out += "\n";
    for (const codebook::CodebookEntry& e : cb.entries()) {
        out += std::to_string(e.id);
        for (double v : e.key) {
            out += "," + format_double(v);
        }
        out += "\n";
    }
    return out;
}

void dump_keys(const codebook::Codebook& cb, const std::string& path) { write_file_text(path, keys_csv(cb)); }

}  // namespace balancedit::evalharness
