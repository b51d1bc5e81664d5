#include "balancedit/editor/editor.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/json_util.hpp"
#include "balancedit/numerics/adam.hpp"

namespace balancedit::editor {

using nlohmann::json;

std::string_view to_string(NegativeAnchor kind) {
    switch (kind) {
        case NegativeAnchor::black: return "black";
        case NegativeAnchor::white: return "white";
        case NegativeAnchor::random_pair: return "random";
    }
    return "?";
}

NegativeAnchor negative_from_string(std::string_view name) {
    if (name == "black") {
        return NegativeAnchor::black;
    }
    if (name == "white") {
        return NegativeAnchor::white;
    }
    if (name == "random" || name == "random_pair") {
        return NegativeAnchor::random_pair;
    }
    fail(ErrorKind::config, "unknown negative anchor '" + std::string(name) + "'");
}

void EditRequest::validate() const {
    if (new_answer.empty()) {
        fail(ErrorKind::data, "edit " + case_id + ": empty new answer");
    }
    if (new_answer == old_answer) {
        fail(ErrorKind::data, "edit " + case_id + ": new answer equals the old one");
    }
    if (rephrase_pool.empty()) {
        fail(ErrorKind::data, "edit " + case_id + ": empty rephrase pool");
    }
}

void EditorConfig::validate() const {
    if (!(lr > 0.0)) {
        fail(ErrorKind::config, "editor lr must be positive");
    }
    if (max_iters < 1) {
        fail(ErrorKind::config, "editor max_iters must be >= 1");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        fail(ErrorKind::config, "editor alpha " + std::to_string(alpha) + " outside [0, 1]");
    }
    if (!(stop_loss >= 0.0) || !(fixed_radius >= 0.0)) {
        fail(ErrorKind::config, "editor stop_loss and fixed_radius must be non-negative");
    }
}

void to_json(json& j, const EditorConfig& c) {
    j = json{{"lr", c.lr},
             {"max_iters", c.max_iters},
             {"stop_loss", c.stop_loss},
             {"alpha", c.alpha},
             {"distance", codebook::to_string(c.distance)},
             {"negative", to_string(c.negative)},
             {"fixed_radius", c.fixed_radius}};
}

void from_json(const json& j, EditorConfig& c) {
    reject_unknown_keys(j, {"lr", "max_iters", "stop_loss", "alpha", "distance", "negative", "fixed_radius"},
                        "editor config");
    EditorConfig d;
    c.lr = j.value("lr", d.lr);
    c.max_iters = j.value("max_iters", d.max_iters);
    c.stop_loss = j.value("stop_loss", d.stop_loss);
    c.alpha = j.value("alpha", d.alpha);
    c.distance = codebook::distance_from_string(j.value("distance", std::string(codebook::to_string(d.distance))));
    c.negative = negative_from_string(j.value("negative", std::string(to_string(d.negative))));
    c.fixed_radius = j.value("fixed_radius", d.fixed_radius);
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json optional_json(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(nullptr); }

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
    const json& v = j.at(key);
    if (v.is_null()) {
        return std::nullopt;
    }
    return v.get<T>();
}

codebook::InsertAction action_from_string(const std::string& s) {
    for (auto a : {codebook::InsertAction::added, codebook::InsertAction::replaced, codebook::InsertAction::warm_start}) {
        if (codebook::to_string(a) == s) {
            return a;
        }
    }
    fail(ErrorKind::format, "unknown insert action '" + s + "'");
}

}  // namespace

void to_json(json& j, const EditOutcome& o) {
    j = json{{"case_id", o.case_id},
             {"entry_id", o.entry_id},
             {"action", codebook::to_string(o.action)},
             {"warm_start_source", optional_json(o.warm_start_source)},
             {"replaced_id", optional_json(o.replaced_id)},
             {"iterations", o.iterations},
             {"final_loss", o.final_loss},
             {"converged", o.converged},
             {"d_pos", optional_json(o.d_pos)},
             {"d_neg", optional_json(o.d_neg)},
             {"radius", o.radius},
             {"wall_time", o.wall_time}};
}

void from_json(const json& j, EditOutcome& o) {
    o.case_id = j.at("case_id").get<std::string>();
    o.entry_id = j.at("entry_id").get<std::uint64_t>();
    o.action = action_from_string(j.at("action").get<std::string>());
    o.warm_start_source = optional_from<std::uint64_t>(j, "warm_start_source");
    o.replaced_id = optional_from<std::uint64_t>(j, "replaced_id");
    o.iterations = j.at("iterations").get<int>();
    o.final_loss = j.at("final_loss").get<double>();
    o.converged = j.at("converged").get<bool>();
    o.d_pos = optional_from<double>(j, "d_pos");
    o.d_neg = optional_from<double>(j, "d_neg");
    o.radius = j.at("radius").get<double>();
    o.wall_time = j.at("wall_time").get<double>();
}

Key edit_key(const BackboneModel& model, const ImageFeature& image, const TokenSequence& prompt) {
    return codebook::extract_key(model.prefix_states(image, prompt, model.editable_layer()));
}

AnchorPair build_anchors(const EditRequest& req, const BackboneModel& model, const EditorConfig& cfg) {
    if (req.rephrase_pool.empty()) {
        fail(ErrorKind::data, "edit " + req.case_id + ": empty rephrase pool");
    }
    AnchorPair a;
    a.positive = {req.image, req.rephrase_pool.front()};
    const auto dim = static_cast<std::size_t>(model.config().d_img);
    switch (cfg.negative) {
        case NegativeAnchor::black: a.negative = {ImageFeature::black(dim), req.prompt}; break;
        case NegativeAnchor::white: a.negative = {ImageFeature::white(dim), req.prompt}; break;
        case NegativeAnchor::random_pair:
            if (!req.unrelated) {
                fail(ErrorKind::data, "edit " + req.case_id + ": random negative anchor needs an unrelated pair");
            }
            a.negative = *req.unrelated;
            break;
    }
    a.edit_key = edit_key(model, req.image, req.prompt);
    a.positive_key = edit_key(model, a.positive.image, a.positive.prompt);
    a.negative_key = edit_key(model, a.negative.image, a.negative.prompt);
    a.d_pos = codebook::distance(a.positive_key, a.edit_key, cfg.distance);
    a.d_neg = codebook::distance(a.negative_key, a.edit_key, cfg.distance);
    return a;
}

FinetuneResult finetune_transformation(const EditRequest& req, const BackboneModel& model,
                                       const UpProjection& warm_start, const EditorConfig& cfg) {
    cfg.validate();
    model.check_hook_shape(warm_start);
    numerics::Parameter weight("edit.up.weight", warm_start.weight);
    numerics::Parameter bias("edit.up.bias", warm_start.bias);
    const numerics::AdamHyper hyper{.lr = cfg.lr};
    numerics::AdamState weight_state(weight, hyper);
    numerics::AdamState bias_state(bias, hyper);

    FinetuneResult r;
    UpProjection hook{weight.value, bias.value};
    UpProjection grad{weight.grad, bias.grad};
    for (;;) {
        hook.weight = weight.value;
        hook.bias = bias.value;
        backbone::AnswerLoss loss = model.answer_loss_traced(req.image, req.prompt, req.new_answer, &hook);
        if (!std::isfinite(loss.loss)) {
            fail(ErrorKind::divergence,
                 "edit " + req.case_id + ": loss became non-finite after " + std::to_string(r.iterations) + " steps");
        }
        r.final_loss = loss.loss;
        if (loss.loss < cfg.stop_loss && model.greedy_decode(req.image, req.prompt, &hook) == req.new_answer) {
            r.converged = true;
            break;
        }
        if (r.iterations == cfg.max_iters) {
            break;
        }
        grad.weight.fill(0.0);
        grad.bias.fill(0.0);
        model.backward_hook(loss.trace, loss.dlogits, grad);
        weight.grad = grad.weight;
        bias.grad = grad.bias;
        numerics::adam_step(weight, weight_state);
        numerics::adam_step(bias, bias_state);
        ++r.iterations;
    }
    r.weights = std::move(hook);
    return r;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Planned {
    Key key;
    codebook::InsertDecision decision;
    UpProjection warm_start;
};

Planned plan(const EditRequest& req, const BackboneModel& model, const Codebook& cb, const EditorConfig& cfg) {
    req.validate();
    cfg.validate();
    cb.require_distance(cfg.distance);
    Planned p;
    p.key = edit_key(model, req.image, req.prompt);
    p.decision = cb.plan_insert(p.key);
    if (p.decision.action == codebook::InsertAction::warm_start) {
        p.warm_start = cb.find(*p.decision.target_id)->transformation;
    } else {
        p.warm_start = model.editable_weights();
    }
    return p;
}

EditOutcome store(const EditRequest& req, Planned p, FinetuneResult ft, double radius, const AnchorPair* anchors,
                  double alpha, Codebook& cb, Clock::time_point start) {
    codebook::CodebookEntry entry;
    entry.key = std::move(p.key);
    entry.radius = radius;
    entry.transformation = std::move(ft.weights);
    if (p.decision.action == codebook::InsertAction::warm_start) {
        entry.parent_id = p.decision.target_id;
    }
    entry.meta.case_id = req.case_id;
    entry.meta.prompt = req.prompt;
    entry.meta.old_answer = req.old_answer;
    entry.meta.new_answer = req.new_answer;
    entry.meta.alpha = alpha;
    if (anchors) {
        entry.meta.d_pos = anchors->d_pos;
        entry.meta.d_neg = anchors->d_neg;
    }

    EditOutcome o;
    o.case_id = req.case_id;
    o.action = p.decision.action;
    o.warm_start_source = entry.parent_id;
    if (p.decision.action == codebook::InsertAction::replaced) {
        o.replaced_id = p.decision.target_id;
    }
    o.iterations = ft.iterations;
    o.final_loss = ft.final_loss;
    o.converged = ft.converged;
    o.d_pos = entry.meta.d_pos;
    o.d_neg = entry.meta.d_neg;
    o.radius = radius;
    o.entry_id = cb.insert(std::move(entry), p.decision);
    o.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    return o;
}

}  // namespace

EditOutcome apply_edit(const EditRequest& req, const BackboneModel& model, Codebook& cb, const EditorConfig& cfg) {
    const auto start = Clock::now();
    if (cb.alpha() != cfg.alpha) {
        fail(ErrorKind::config, "codebook alpha " + std::to_string(cb.alpha()) + " differs from editor alpha " +
                                    std::to_string(cfg.alpha));
    }
    Planned p = plan(req, model, cb, cfg);
    FinetuneResult ft = finetune_transformation(req, model, p.warm_start, cfg);
    const AnchorPair anchors = build_anchors(req, model, cfg);
    const double radius = codebook::estimate_radius(anchors.d_pos, anchors.d_neg, cfg.alpha);
    return store(req, std::move(p), std::move(ft), radius, &anchors, cfg.alpha, cb, start);
}

EditOutcome fixed_radius_edit_baseline(const EditRequest& req, const BackboneModel& model, Codebook& cb,
                                       const EditorConfig& cfg) {
    const auto start = Clock::now();
    Planned p = plan(req, model, cb, cfg);
    FinetuneResult ft = finetune_transformation(req, model, p.warm_start, cfg);
    return store(req, std::move(p), std::move(ft), cfg.fixed_radius, nullptr, cb.alpha(), cb, start);
}

FtEdit ft_edit_baseline(const EditRequest& req, const BackboneModel& model, const EditorConfig& cfg) {
    req.validate();
    // A hook on every position is the same function as overwriting the layer.
    FinetuneResult r = finetune_transformation(req, model, model.editable_weights(), cfg);
    FtEdit out{model, std::move(r)};
    out.model.set_editable_weights(out.result.weights);
    return out;
}

std::string edit_log_jsonl(std::span<const EditOutcome> outcomes) {
    std::string out;
    for (const EditOutcome& o : outcomes) {
        out += json(o).dump() + "\n";
    }
    return out;
}

std::vector<EditOutcome> edit_log_from_jsonl(const std::string& text) {
    std::vector<EditOutcome> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(json::parse(line).get<EditOutcome>());
        } catch (const json::exception& e) {
            fail(ErrorKind::format, "edit log line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_edit_log(std::span<const EditOutcome> outcomes, const std::string& path) {
    write_file_text(path, edit_log_jsonl(outcomes));
}

}  // namespace balancedit::editor
