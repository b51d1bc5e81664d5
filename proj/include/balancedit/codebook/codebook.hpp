#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "balancedit/backbone/model.hpp"
#include "balancedit/backbone/types.hpp"

namespace balancedit::codebook {

using backbone::ImageFeature;
using backbone::TokenSequence;
using backbone::UpProjection;
using Key = std::vector<double>;

enum class DistanceKind { euclidean, cosine };

std::string_view to_string(DistanceKind kind);
DistanceKind distance_from_string(std::string_view name);

// euclidean: ||a - b||. cosine: 1 - a·b / (|a||b|), in [0, 2]; zero vectors throw
// ErrorKind::domain. Mismatched lengths throw ErrorKind::dimension.
double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind);

// Mean over rows of the layer states feeding the editable block.
Key extract_key(const numerics::Tensor& states);

// radius = alpha * d_pos + (1 - alpha) * d_neg, so alpha = 0 puts the boundary at
// the negative anchor and alpha = 1 at the positive one.
double estimate_radius(double d_pos, double d_neg, double alpha);

struct EntryMeta {
    std::string case_id;
    TokenSequence prompt;
    TokenSequence old_answer;
    TokenSequence new_answer;
    // Absent for fixed-radius entries, which skip the anchors.
    std::optional<double> d_pos;
    std::optional<double> d_neg;
    double alpha = 0.0;

    friend bool operator==(const EntryMeta&, const EntryMeta&) = default;
};

struct CodebookEntry {
    std::uint64_t id = 0;
    Key key;
    double radius = 0.0;
    UpProjection transformation;
    std::optional<std::uint64_t> parent_id;
    EntryMeta meta;

    friend bool operator==(const CodebookEntry&, const CodebookEntry&) = default;
};

struct RoutingDecision {
    bool routed = false;
    std::optional<std::uint64_t> nearest_entry_id;
    double distance_to_nearest = 0.0;
    double radius_of_nearest = 0.0;

    // distance - radius; negative when routed.
    double margin() const { return distance_to_nearest - radius_of_nearest; }

    friend bool operator==(const RoutingDecision&, const RoutingDecision&) = default;
};

enum class InsertAction { added, replaced, warm_start };
std::string_view to_string(InsertAction action);

struct InsertDecision {
    InsertAction action = InsertAction::added;
    // replaced: the entry being discarded. warm_start: the entry to start from.
    std::optional<std::uint64_t> target_id;
};

class Codebook {
public:
    explicit Codebook(DistanceKind kind = DistanceKind::euclidean, double alpha = 0.2, double tau = 1e-6);

    DistanceKind distance_kind() const { return kind_; }
    double alpha() const { return alpha_; }
    double tau() const { return tau_; }
    std::uint64_t next_id() const { return next_id_; }

    const std::vector<CodebookEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const CodebookEntry* find(std::uint64_t id) const;

    // Nearest key wins (smallest id on ties); routed iff distance <= that entry's radius.
    RoutingDecision lookup(std::span<const double> key) const;

    // (a) some key within tau: replace it; (b) inside some entry's radius: warm start
    // from the nearest such entry; (c) otherwise a plain add from the base layer.
    InsertDecision plan_insert(std::span<const double> key) const;
    // Assigns and returns the new id; `candidate.id` is ignored.
    std::uint64_t insert(CodebookEntry candidate, const InsertDecision& decision);
    std::uint64_t insert(CodebookEntry candidate);

    // Throws ErrorKind::not_found.
    void remove(std::uint64_t id);

    // Radii only mean something under the metric they were measured with.
    void require_distance(DistanceKind kind) const;

    friend bool operator==(const Codebook&, const Codebook&) = default;

private:
    friend Codebook deserialize_codebook(std::span<const std::uint8_t> bytes);

    DistanceKind kind_;
    double alpha_;
    double tau_;
    std::uint64_t next_id_ = 1;
    std::vector<CodebookEntry> entries_;
};

struct Route {
    RoutingDecision decision;
    const UpProjection* transformation = nullptr;  // null: base layer
};

// `prefix_states`: rows of the (image, prompt) prefix entering the editable block.
Route route(const numerics::Tensor& prefix_states, const Codebook& cb, const backbone::BackboneModel& model);

// f_new(i, t): route once from the prompt prefix, then greedy-decode with that choice.
TokenSequence predict(const backbone::BackboneModel& model, const Codebook& cb, const ImageFeature& image,
                      const TokenSequence& prompt, RoutingDecision* decision = nullptr, int max_answer_len = 3);

struct Explanation {
    RoutingDecision decision;
    std::optional<EntryMeta> nearest;
    TokenSequence output;

    std::string to_string() const;
};

Explanation explain(const ImageFeature& image, const TokenSequence& prompt, const Codebook& cb,
                    const backbone::BackboneModel& model);

inline constexpr int kCodebookFormatVersion = 1;

// "<JSON header>\n<little-endian float64 blob>"; each entry's transformation lives at
// its weights_offset (weight matrix, then bias).
std::vector<std::uint8_t> serialize_codebook(const Codebook& cb);
Codebook deserialize_codebook(std::span<const std::uint8_t> bytes);
void save_codebook(const Codebook& cb, const std::string& path);
Codebook load_codebook(const std::string& path);

}  // namespace balancedit::codebook
