#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "balancedit/codebook/codebook.hpp"
#include "balancedit/editor/editor.hpp"
#include "balancedit/worldgen/suite.hpp"
#include "json.hpp"

namespace balancedit::evalharness {

using backbone::BackboneModel;
using backbone::ImageFeature;
using backbone::TokenSequence;
using worldgen::EditCase;
using worldgen::EditSuite;
using worldgen::World;

enum class EditorKind { balancedit, ft, fixed_radius };

std::string_view to_string(EditorKind kind);
EditorKind editor_from_string(std::string_view name);

// 3 / (1/a + 1/b + 1/c); 0 when any input is 0.
double harmonic_mean(double t_gen, double i_gen, double loc);

using Predictor = std::function<TokenSequence(const ImageFeature&, const TokenSequence&)>;

struct CaseRecord {
    std::string case_id;
    worldgen::Scope scope = worldgen::Scope::instance;
    bool reliable = false;
    std::vector<bool> rephrase_hits;
    std::vector<bool> image_hits;
    std::vector<bool> locality_hits;  // sibling probes; f_new == f_base
    bool black_hit = false;           // black image + edited prompt; f_new == f_base
    int iterations = 0;
    bool converged = false;
    std::optional<double> radius;
    std::optional<double> d_pos;
    std::optional<double> d_neg;

    friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

// Percentages over pooled {0,1} indicators. Loc pools the sibling probes and the black probe.
struct MetricsReport {
    std::string editor;
    double alpha = 0.0;
    double acc = 0.0;
    double t_gen = 0.0;
    double i_gen = 0.0;
    double loc = 0.0;
    double hm = 0.0;
    std::optional<double> mean_radius;
    double wall_time = 0.0;  // 0 unless timing was requested
    std::vector<CaseRecord> cases;
    nlohmann::json config;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Recomputes the aggregates from report.cases.
void aggregate(MetricsReport& report);

struct EvalOptions {
    EditorKind editor = EditorKind::balancedit;
    editor::EditorConfig editor_config;
    std::uint64_t seed = 0;  // picks the random negative anchors
    bool record_wall_time = false;
    nlohmann::json config;  // copied into every report
};

// Request for one case. `unrelated` is always filled: a random out-of-scope entity
// asked a random question.
editor::EditRequest make_request(const EditCase& c, const World& world, std::uint64_t seed);

// Flags for one case. Locality compares f_new with f_base, never with ground truth.
CaseRecord eval_case(const Predictor& f_new, const Predictor& f_base, const EditCase& c);

// Each case edited on a fresh codebook (or a fresh model copy for FT), scored, discarded.
MetricsReport run_eval(const BackboneModel& model, const World& world, const EditSuite& suite,
                       const EvalOptions& options);

struct SequentialReport {
    std::vector<editor::EditOutcome> outcomes;  // suite order
    MetricsReport report;                       // after all n edits
    std::size_t codebook_size = 0;
    std::optional<codebook::Codebook> codebook;  // none for FT
};

// First n cases edited in order into one codebook (or one model for FT), then scored.
SequentialReport run_sequential(const BackboneModel& model, const World& world, const EditSuite& suite, int n,
                                const EvalOptions& options);

// Scores an existing codebook on the suite cases it holds entries for (matched by case id).
MetricsReport evaluate_codebook(const BackboneModel& model, const codebook::Codebook& cb, const EditSuite& suite,
                                const EvalOptions& options);

struct SweepResult {
    std::vector<double> grid;
    std::vector<MetricsReport> reports;
};

// Throws ErrorKind::config unless the grid is strictly increasing inside [0, 1].
SweepResult sweep_alpha(const BackboneModel& model, const World& world, const EditSuite& suite,
                        std::span<const double> grid, const EvalOptions& options);

struct NamedReport {
    std::string name;
    MetricsReport report;
};

// One dimension varied at a time against `options`: distance, negative anchor, layer l-1.
std::vector<NamedReport> run_ablations(const BackboneModel& model, const World& world, const EditSuite& suite,
                                       const EvalOptions& options);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

struct SummaryRow {
    std::string editor;
    double alpha = 0.0;
    double acc = 0.0;
    double t_gen = 0.0;
    double i_gen = 0.0;
    double loc = 0.0;
    double hm = 0.0;
    std::optional<double> mean_radius;
    double wall_time = 0.0;

    friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

inline constexpr std::string_view kSummaryHeader = "editor,alpha,acc,t_gen,i_gen,loc,hm,mean_radius,wall_time";

SummaryRow summarize(const MetricsReport& report);
std::string summary_csv(std::span<const SummaryRow> rows);
std::vector<SummaryRow> parse_summary_csv(const std::string& text);

enum class ExportFormat { json, csv };
void export_report(const MetricsReport& report, const std::string& path, ExportFormat format);

// One row per entry: id, then the key components.
std::string keys_csv(const codebook::Codebook& cb);
void dump_keys(const codebook::Codebook& cb, const std::string& path);

}  // namespace balancedit::evalharness
