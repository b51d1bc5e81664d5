#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "balancedit/backbone/pretrain.hpp"
#include "balancedit/backbone/types.hpp"
#include "json.hpp"

namespace balancedit::worldgen {

using backbone::ImageFeature;
using backbone::TokenId;
using backbone::TokenSequence;
using backbone::TrainingExample;

// Granularity of a fact. Each scope also names the question asked about it:
// instance -> "what is this one called", breed -> "which breed", category -> "which kind".
enum class Scope { instance = 0, breed = 1, category = 2 };
inline constexpr std::array<Scope, 3> kAllScopes = {Scope::instance, Scope::breed, Scope::category};

std::string_view to_string(Scope scope);
Scope scope_from_string(std::string_view name);

struct WorldConfig {
    int n_categories = 6;
    int breeds_per_category = 3;
    int instances_per_breed = 4;
    int d_img = 16;
    double sigma_category = 3.0;
    double sigma_breed = 1.0;
    double sigma_instance = 0.3;
    int n_question_templates = 4;
    int n_paraphrases = 16;  // per question kind, templates first
    int n_fillers = 8;  // per question kind
    int words_per_kind = 4;
    int n_name_syllables = 12;
    int samples_per_entity = 32;
    std::uint64_t seed = 0;

    int n_breeds() const { return n_categories * breeds_per_category; }
    int n_entities() const { return n_breeds() * instances_per_breed; }
    // Throws ErrorKind::config.
    void validate() const;

    friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

struct Entity {
    int id = 0;
    int category = 0;
    int breed = 0;     // global breed index
    int instance = 0;  // index within the breed
    ImageFeature mean;
    TokenSequence name;
};

struct Vocabulary {
    std::array<std::vector<TokenId>, 3> fillers;  // per question kind
    std::array<std::vector<TokenId>, 3> kind_words;
    std::vector<TokenId> syllables;
    std::vector<TokenId> breeds;
    std::vector<TokenId> categories;
    int size = 0;
};

// Hierarchical fact world: category centre + breed offset + instance offset give each
// entity's image mean, so semantic closeness is embedding closeness by construction.
class World {
public:
    // Throws ErrorKind::config when the world's vocabulary does not fit `vocab_limit`.
    static World generate(const WorldConfig& config, int vocab_limit = 128);

    const WorldConfig& config() const { return config_; }
    const Vocabulary& vocabulary() const { return vocab_; }
    const std::vector<Entity>& entities() const { return entities_; }
    const Entity& entity(int id) const;

    const std::vector<TokenSequence>& paraphrases(Scope kind) const {
        return paraphrases_[static_cast<std::size_t>(kind)];
    }

    TokenSequence answer(const Entity& e, Scope kind) const;
    // Every answer this kind of question has somewhere in the world (the counterfactual pool).
    std::vector<TokenSequence> answer_vocabulary(Scope kind) const;

    // Entity mean plus isotropic Gaussian noise (sigma_instance unless overridden).
    ImageFeature sample_image(const Entity& e, std::uint64_t noise_seed,
                              std::optional<double> noise_scale = std::nullopt) const;

    bool in_scope(const Entity& edited, const Entity& other, Scope scope) const;

    // samples_per_entity triples per entity, question kinds cycled evenly. Each epoch
    // draws its own image noise and prompts.
    std::vector<TrainingExample> pretraining_set(int epoch = 0) const;
    // Fresh noise draws, disjoint from the pretraining set's.
    std::vector<TrainingExample> heldout_set(int per_entity = 9) const;
    std::vector<TrainingExample> sample_dataset(int per_entity, std::uint64_t seed) const;

private:
    WorldConfig config_;
    Vocabulary vocab_;
    std::vector<Entity> entities_;
    std::array<std::vector<TokenSequence>, 3> paraphrases_;
};

}  // namespace balancedit::worldgen
