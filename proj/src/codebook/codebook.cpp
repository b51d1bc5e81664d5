#include "balancedit/codebook/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "json.hpp"

namespace balancedit::codebook {

using nlohmann::json;

std::string_view to_string(DistanceKind kind) {
    return kind == DistanceKind::euclidean ? "euclidean" : "cosine";
}

DistanceKind distance_from_string(std::string_view name) {
    if (name == "euclidean") {
        return DistanceKind::euclidean;
    }
    if (name == "cosine") {
        return DistanceKind::cosine;
    }
    fail(ErrorKind::config, "unknown distance function '" + std::string(name) + "'");
}

std::string_view to_string(InsertAction action) {
    switch (action) {
        case InsertAction::added: return "added";
        case InsertAction::replaced: return "replaced";
        case InsertAction::warm_start: return "warm_start";
    }
    return "?";
}

double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
    if (a.size() != b.size()) {
        fail(ErrorKind::dimension,
             "distance between vectors of length " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    if (kind == DistanceKind::euclidean) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        return std::sqrt(s);
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        fail(ErrorKind::domain, "cosine distance is undefined for a zero vector");
    }
    const double cos = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    return 1.0 - cos;
}

Key extract_key(const numerics::Tensor& states) {
    if (states.empty() || states.rank() != 2) {
        fail(ErrorKind::data, "cannot extract a key from an empty state sequence");
    }
    Key key(states.cols(), 0.0);
    for (std::size_t r = 0; r < states.rows(); ++r) {
        auto row = states.row(r);
        for (std::size_t c = 0; c < key.size(); ++c) {
            key[c] += row[c];
        }
    }
    const double inv = 1.0 / static_cast<double>(states.rows());
    for (double& v : key) {
        v *= inv;
    }
    return key;
}

double estimate_radius(double d_pos, double d_neg, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        fail(ErrorKind::config, "alpha " + std::to_string(alpha) + " outside [0, 1]");
    }
    if (!(d_pos >= 0.0) || !(d_neg >= 0.0)) {
        fail(ErrorKind::domain, "anchor distances must be non-negative");
    }
    return alpha * d_pos + (1.0 - alpha) * d_neg;
}

Codebook::Codebook(DistanceKind kind, double alpha, double tau) : kind_(kind), alpha_(alpha), tau_(tau) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        fail(ErrorKind::config, "alpha " + std::to_string(alpha) + " outside [0, 1]");
    }
    if (!(tau >= 0.0)) {
        fail(ErrorKind::config, "conflict tolerance must be non-negative");
    }
}

const CodebookEntry* Codebook::find(std::uint64_t id) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [id](const CodebookEntry& e) { return e.id == id; });
    return it == entries_.end() ? nullptr : &*it;
}

RoutingDecision Codebook::lookup(std::span<const double> key) const {
    RoutingDecision best;
    for (const CodebookEntry& e : entries_) {
        const double d = distance(key, e.key, kind_);
        // entries_ is ordered by id, so strict < keeps the oldest on ties.
        if (!best.nearest_entry_id || d < best.distance_to_nearest) {
            best.nearest_entry_id = e.id;
            best.distance_to_nearest = d;
            best.radius_of_nearest = e.radius;
        }
    }
    best.routed = best.nearest_entry_id && best.distance_to_nearest <= best.radius_of_nearest;
    return best;
}

InsertDecision Codebook::plan_insert(std::span<const double> key) const {
    std::optional<std::uint64_t> conflict, overlap;
    double conflict_d = 0.0, overlap_d = 0.0;
    for (const CodebookEntry& e : entries_) {
        const double d = distance(key, e.key, kind_);
        if (d <= tau_ && (!conflict || d < conflict_d)) {
            conflict = e.id;
            conflict_d = d;
        }
        if (d <= e.radius && (!overlap || d < overlap_d)) {
            overlap = e.id;
            overlap_d = d;
        }
    }
    if (conflict) {
        return {InsertAction::replaced, conflict};
    }
    if (overlap) {
        return {InsertAction::warm_start, overlap};
    }
    return {InsertAction::added, std::nullopt};
}

std::uint64_t Codebook::insert(CodebookEntry candidate, const InsertDecision& decision) {
    if (!entries_.empty() && candidate.key.size() != entries_.front().key.size()) {
        fail(ErrorKind::dimension, "key of length " + std::to_string(candidate.key.size()) +
                                       " does not match codebook keys of length " +
                                       std::to_string(entries_.front().key.size()));
    }
    if (!(candidate.radius >= 0.0)) {
        fail(ErrorKind::domain, "radius must be non-negative");
    }
    if (decision.action == InsertAction::replaced) {
        remove(decision.target_id.value());
    }
    if (decision.action == InsertAction::warm_start && !candidate.parent_id) {
        candidate.parent_id = decision.target_id;
    }
    candidate.id = next_id_++;
    entries_.push_back(std::move(candidate));
    return entries_.back().id;
}

std::uint64_t Codebook::insert(CodebookEntry candidate) {
    const InsertDecision decision = plan_insert(candidate.key);
    return insert(std::move(candidate), decision);
}

void Codebook::remove(std::uint64_t id) {
    auto it = std::find_if(entries_.begin(), entries_.end(), [id](const CodebookEntry& e) { return e.id == id; });
    if (it == entries_.end()) {
        fail(ErrorKind::not_found, "no codebook entry with id " + std::to_string(id));
    }
    entries_.erase(it);
}

void Codebook::require_distance(DistanceKind kind) const {
    if (kind != kind_) {
        fail(ErrorKind::config, "codebook radii were measured with " + std::string(to_string(kind_)) +
                                    " distance; cannot use it with " + std::string(to_string(kind)));
    }
}

Route route(const numerics::Tensor& prefix_states, const Codebook& cb, const backbone::BackboneModel& model) {
    Route r;
    if (cb.empty()) {
        return r;
    }
    r.decision = cb.lookup(extract_key(prefix_states));
    if (r.decision.routed) {
        const CodebookEntry* e = cb.find(*r.decision.nearest_entry_id);
        model.check_hook_shape(e->transformation);
        r.transformation = &e->transformation;
    }
    return r;
}

TokenSequence predict(const backbone::BackboneModel& model, const Codebook& cb, const ImageFeature& image,
                      const TokenSequence& prompt, RoutingDecision* decision, int max_answer_len) {
    Route r;
    if (!cb.empty()) {
        r = route(model.prefix_states(image, prompt, model.editable_layer()), cb, model);
    }
    if (decision) {
        *decision = r.decision;
    }
    return model.greedy_decode(image, prompt, r.transformation, max_answer_len);
}

namespace {

std::string tokens_string(const TokenSequence& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.size(); ++i) {
        s += (i ? " " : "") + std::to_string(t[i]);
    }
    return s + "]";
}

}  // namespace

std::string Explanation::to_string() const {
    std::ostringstream out;
    out.precision(6);
    if (!decision.nearest_entry_id) {
        out << "no entries; base layer used; output " << tokens_string(output);
        return out.str();
    }
    out << "routed=" << (decision.routed ? "true" : "false") << " nearest_entry=" << *decision.nearest_entry_id
        << " distance=" << decision.distance_to_nearest << " radius=" << decision.radius_of_nearest
        << " margin=" << decision.margin();
    if (nearest) {
        out << " edit=" << (nearest->case_id.empty() ? "-" : nearest->case_id) << " prompt=" << tokens_string(nearest->prompt)
            << " old=" << tokens_string(nearest->old_answer) << " new=" << tokens_string(nearest->new_answer);
    }
    out << " output=" << tokens_string(output);
    return out.str();
}

Explanation explain(const ImageFeature& image, const TokenSequence& prompt, const Codebook& cb,
                    const backbone::BackboneModel& model) {
    Explanation ex;
    ex.output = predict(model, cb, image, prompt, &ex.decision);
    if (ex.decision.nearest_entry_id) {
        ex.nearest = cb.find(*ex.decision.nearest_entry_id)->meta;
    }
    return ex;
}

// ---------------------------------------------------------------------------
// File format

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<std::uint8_t> serialize_codebook(const Codebook& cb) {
    std::vector<std::uint8_t> blob;
    json entries = json::array();
    json weight_shape = nullptr, bias_shape = nullptr;
    for (const CodebookEntry& e : cb.entries()) {
        weight_shape = e.transformation.weight.shape();
        bias_shape = e.transformation.bias.shape();
        entries.push_back({{"id", e.id},
                           {"key", e.key},
                           {"radius", e.radius},
                           {"parent_id", e.parent_id ? json(*e.parent_id) : json(nullptr)},
                           {"meta",
                            {{"case_id", e.meta.case_id},
                             {"prompt", e.meta.prompt},
                             {"old_answer", e.meta.old_answer},
                             {"new_answer", e.meta.new_answer},
                             {"d_pos", optional_json(e.meta.d_pos)},
                             {"d_neg", optional_json(e.meta.d_neg)},
                             {"alpha", e.meta.alpha}}},
                           {"weights_offset", blob.size()}});
        append_f64_le(blob, e.transformation.weight.data());
        append_f64_le(blob, e.transformation.bias.data());
    }
    const json header = {{"format", "balancedit-codebook"},
                         {"format_version", kCodebookFormatVersion},
                         {"distance_fn", to_string(cb.distance_kind())},
                         {"alpha", cb.alpha()},
                         {"tau", cb.tau()},
                         {"next_id", cb.next_id()},
                         {"transformation_shape", {{"weight", weight_shape}, {"bias", bias_shape}}},
                         {"entries", entries},
                         {"blob_bytes", blob.size()}};
    const std::string text = header.dump() + "\n";
    std::vector<std::uint8_t> out(text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

Codebook deserialize_codebook(std::span<const std::uint8_t> bytes) {
    const auto [header_text, blob] = split_header(bytes, "codebook");
    try {
        const json header = json::parse(header_text);
        if (header.at("format") != "balancedit-codebook") {
            fail(ErrorKind::format, "not a codebook file");
        }
        const int version = header.at("format_version").get<int>();
        if (version != kCodebookFormatVersion) {
            fail(ErrorKind::format, "codebook format_version " + std::to_string(version) + ", expected " +
                                        std::to_string(kCodebookFormatVersion));
        }
        const std::size_t blob_bytes = header.at("blob_bytes").get<std::size_t>();
        if (blob_bytes != blob.size()) {
            fail(ErrorKind::format, "codebook blob is " + std::to_string(blob.size()) + " bytes, header says " +
                                        std::to_string(blob_bytes));
        }
        Codebook cb(distance_from_string(header.at("distance_fn").get<std::string>()), header.at("alpha").get<double>(),
                    header.at("tau").get<double>());
        cb.next_id_ = header.at("next_id").get<std::uint64_t>();
        const json& shapes = header.at("transformation_shape");
        const json& entries = header.at("entries");
        if (!entries.empty() && (shapes.at("weight").is_null() || shapes.at("bias").is_null())) {
            fail(ErrorKind::format, "codebook entries without a transformation shape");
        }
        std::uint64_t last_id = 0;
        for (const json& j : entries) {
            CodebookEntry e;
            e.id = j.at("id").get<std::uint64_t>();
            if (e.id <= last_id || e.id >= cb.next_id_) {
                fail(ErrorKind::format, "codebook entry ids must be increasing and below next_id");
            }
            last_id = e.id;
            e.key = j.at("key").get<Key>();
            e.radius = j.at("radius").get<double>();
            if (!j.at("parent_id").is_null()) {
                e.parent_id = j.at("parent_id").get<std::uint64_t>();
            }
            const json& m = j.at("meta");
            e.meta.case_id = m.at("case_id").get<std::string>();
            e.meta.prompt = m.at("prompt").get<TokenSequence>();
            e.meta.old_answer = m.at("old_answer").get<TokenSequence>();
            e.meta.new_answer = m.at("new_answer").get<TokenSequence>();
            if (!m.at("d_pos").is_null()) {
                e.meta.d_pos = m.at("d_pos").get<double>();
            }
            if (!m.at("d_neg").is_null()) {
                e.meta.d_neg = m.at("d_neg").get<double>();
            }
            e.meta.alpha = m.at("alpha").get<double>();
            const auto wshape = shapes.at("weight").get<numerics::Shape>();
            const auto bshape = shapes.at("bias").get<numerics::Shape>();
            numerics::Tensor weight(wshape);
            numerics::Tensor bias(bshape);
            const std::size_t offset = j.at("weights_offset").get<std::size_t>();
            weight = numerics::Tensor(wshape, read_f64_le(blob, offset, weight.size()));
            bias = numerics::Tensor(bshape, read_f64_le(blob, offset + weight.size() * 8, bias.size()));
            e.transformation = {std::move(weight), std::move(bias)};
            cb.entries_.push_back(std::move(e));
        }
        return cb;
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("codebook header: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::format) {
            throw;
        }
        fail(ErrorKind::format, std::string("codebook: ") + e.what());
    }
}

void save_codebook(const Codebook& cb, const std::string& path) { write_file_bytes(path, serialize_codebook(cb)); }

Codebook load_codebook(const std::string& path) { return deserialize_codebook(read_file_bytes(path)); }

}  // namespace balancedit::codebook
