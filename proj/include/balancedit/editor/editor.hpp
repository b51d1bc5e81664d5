#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "balancedit/backbone/model.hpp"
#include "balancedit/codebook/codebook.hpp"
#include "json.hpp"

namespace balancedit::editor {

using backbone::BackboneModel;
using backbone::ImageFeature;
using backbone::TokenSequence;
using backbone::UpProjection;
using codebook::Codebook;
using codebook::DistanceKind;
using codebook::Key;

enum class NegativeAnchor { black, white, random_pair };

std::string_view to_string(NegativeAnchor kind);
NegativeAnchor negative_from_string(std::string_view name);

struct QueryPair {
    ImageFeature image;
    TokenSequence prompt;
};

struct EditRequest {
    std::string case_id;
    ImageFeature image;
    TokenSequence prompt;
    TokenSequence old_answer;
    TokenSequence new_answer;
    // front() is the reserved positive-anchor rephrase.
    std::vector<TokenSequence> rephrase_pool;
    // Needed only by the random_pair negative anchor.
    std::optional<QueryPair> unrelated;

    // Throws ErrorKind::data.
    void validate() const;
};

struct AnchorPair {
    QueryPair positive;
    QueryPair negative;
    Key edit_key;
    Key positive_key;
    Key negative_key;
    double d_pos = 0.0;
    double d_neg = 0.0;
};

struct EditorConfig {
    double lr = 1e-2;
    int max_iters = 100;
    double stop_loss = 0.01;
    double alpha = 0.2;
    DistanceKind distance = DistanceKind::euclidean;
    NegativeAnchor negative = NegativeAnchor::black;
    double fixed_radius = 1e-3;  // fixed-radius baseline only

    // Throws ErrorKind::config.
    void validate() const;
};

void to_json(nlohmann::json& j, const EditorConfig& c);
void from_json(const nlohmann::json& j, EditorConfig& c);

struct FinetuneResult {
    UpProjection weights;
    int iterations = 0;  // Adam steps taken
    double final_loss = 0.0;
    bool converged = false;
};

struct EditOutcome {
    std::string case_id;
    std::uint64_t entry_id = 0;
    codebook::InsertAction action = codebook::InsertAction::added;
    std::optional<std::uint64_t> warm_start_source;  // parent entry; none means base layer
    std::optional<std::uint64_t> replaced_id;
    int iterations = 0;
    double final_loss = 0.0;
    bool converged = false;  // false: flagged unreliable
    std::optional<double> d_pos;
    std::optional<double> d_neg;
    double radius = 0.0;
    double wall_time = 0.0;  // seconds
};

void to_json(nlohmann::json& j, const EditOutcome& o);
void from_json(const nlohmann::json& j, EditOutcome& o);

Key edit_key(const BackboneModel& model, const ImageFeature& image, const TokenSequence& prompt);

// Throws ErrorKind::data on an empty rephrase pool or a random_pair request without
// an unrelated pair.
AnchorPair build_anchors(const EditRequest& req, const BackboneModel& model, const EditorConfig& cfg);

// Adam on a copy of `warm_start` hooked into layer l; everything else frozen. Stops
// once the decode is the new answer and the loss is below cfg.stop_loss.
// A NaN loss throws ErrorKind::divergence.
FinetuneResult finetune_transformation(const EditRequest& req, const BackboneModel& model,
                                       const UpProjection& warm_start, const EditorConfig& cfg);

// Key, insert policy, fine-tune, anchors, radius, store. The codebook must use
// cfg.distance and cfg.alpha.
EditOutcome apply_edit(const EditRequest& req, const BackboneModel& model, Codebook& cb, const EditorConfig& cfg);

// Same pipeline with radius := cfg.fixed_radius and no anchors.
EditOutcome fixed_radius_edit_baseline(const EditRequest& req, const BackboneModel& model, Codebook& cb,
                                       const EditorConfig& cfg);

struct FtEdit {
    BackboneModel model;
    FinetuneResult result;
};

// Fine-tunes layer l of a copy of `model` in place; no codebook, no routing.
FtEdit ft_edit_baseline(const EditRequest& req, const BackboneModel& model, const EditorConfig& cfg);

// One JSON object per line.
std::string edit_log_jsonl(std::span<const EditOutcome> outcomes);
std::vector<EditOutcome> edit_log_from_jsonl(const std::string& text);
void write_edit_log(std::span<const EditOutcome> outcomes, const std::string& path);

}  // namespace balancedit::editor
