#include "balancedit/worldgen/world.hpp"

#include <algorithm>

#include "balancedit/common/error.hpp"
#include "balancedit/common/json_util.hpp"
#include "balancedit/common/rng.hpp"

namespace balancedit::worldgen {

std::string_view to_string(Scope scope) {
    switch (scope) {
        case Scope::instance: return "instance";
        case Scope::breed: return "breed";
        case Scope::category: return "category";
    }
    return "?";
}

Scope scope_from_string(std::string_view name) {
    for (Scope s : kAllScopes) {
        if (to_string(s) == name) {
            return s;
        }
    }
    fail(ErrorKind::format, "unknown scope '" + std::string(name) + "'");
}

void WorldConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) {
            fail(ErrorKind::config, "world config: " + msg);
        }
    };
    require(n_categories >= 1 && breeds_per_category >= 1 && instances_per_breed >= 1, "all counts must be >= 1");
    require(d_img >= 1, "d_img must be >= 1");
    require(sigma_category > sigma_breed && sigma_breed > sigma_instance && sigma_instance >= 0.0,
            "noise scales must strictly decrease down the hierarchy");
    require(n_question_templates >= 1 && n_paraphrases > n_question_templates,
            "need more paraphrases than question templates");
    require(n_fillers >= 2 && words_per_kind >= 1, "need >= 2 fillers and >= 1 word per question kind");
    require(n_paraphrases <= 3 * words_per_kind * n_fillers * (n_fillers - 1),
            "not enough filler/kind-word combinations for " + std::to_string(n_paraphrases) + " paraphrases");
    require(n_name_syllables * n_name_syllables >= n_entities(),
            "n_name_syllables^2 must cover " + std::to_string(n_entities()) + " entity names");
    require(samples_per_entity >= 1, "samples_per_entity must be >= 1");
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
    j = nlohmann::json{{"n_categories", c.n_categories},
                       {"breeds_per_category", c.breeds_per_category},
                       {"instances_per_breed", c.instances_per_breed},
                       {"d_img", c.d_img},
                       {"sigma_category", c.sigma_category},
                       {"sigma_breed", c.sigma_breed},
                       {"sigma_instance", c.sigma_instance},
                       {"n_question_templates", c.n_question_templates},
                       {"n_paraphrases", c.n_paraphrases},
                       {"n_fillers", c.n_fillers},
                       {"words_per_kind", c.words_per_kind},
                       {"n_name_syllables", c.n_name_syllables},
                       {"samples_per_entity", c.samples_per_entity},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
    reject_unknown_keys(j,
                        {"n_categories", "breeds_per_category", "instances_per_breed", "d_img", "sigma_category",
                         "sigma_breed", "sigma_instance", "n_question_templates", "n_paraphrases", "n_fillers",
                         "words_per_kind", "n_name_syllables", "samples_per_entity", "seed"},
                        "world config");
    WorldConfig d;
    c.n_categories = j.value("n_categories", d.n_categories);
    c.breeds_per_category = j.value("breeds_per_category", d.breeds_per_category);
    c.instances_per_breed = j.value("instances_per_breed", d.instances_per_breed);
    c.d_img = j.value("d_img", d.d_img);
    c.sigma_category = j.value("sigma_category", d.sigma_category);
    c.sigma_breed = j.value("sigma_breed", d.sigma_breed);
    c.sigma_instance = j.value("sigma_instance", d.sigma_instance);
    c.n_question_templates = j.value("n_question_templates", d.n_question_templates);
    c.n_paraphrases = j.value("n_paraphrases", d.n_paraphrases);
    c.n_fillers = j.value("n_fillers", d.n_fillers);
    c.words_per_kind = j.value("words_per_kind", d.words_per_kind);
    c.n_name_syllables = j.value("n_name_syllables", d.n_name_syllables);
    c.samples_per_entity = j.value("samples_per_entity", d.samples_per_entity);
    c.seed = j.value("seed", d.seed);
}

namespace {

std::vector<double> gaussian(std::size_t dim, double sigma, Rng& rng) {
    std::vector<double> v(dim);
    for (double& x : v) {
        x = sigma * rng.normal();
    }
    return v;
}

enum StreamTag : std::uint64_t {
    kTagMeans = 1,
    kTagNames = 2,
    kTagParaphrases = 3,
    kTagNoise = 4,
    kTagPretrain = 5,
    kTagDataset = 6,
    kTagHeldout = 7,
};

}  // namespace

World World::generate(const WorldConfig& config, int vocab_limit) {
    config.validate();
    World w;
    w.config_ = config;

    // Vocabulary layout after the special tokens.
    TokenId next = backbone::kFirstFreeToken;
    auto take = [&next](int n) {
        std::vector<TokenId> ids(static_cast<std::size_t>(n));
        for (auto& id : ids) {
            id = next++;
        }
        return ids;
    };
    for (auto& words : w.vocab_.fillers) {
        words = take(config.n_fillers);
    }
    for (auto& words : w.vocab_.kind_words) {
        words = take(config.words_per_kind);
    }
    w.vocab_.syllables = take(config.n_name_syllables);
    w.vocab_.breeds = take(config.n_breeds());
    w.vocab_.categories = take(config.n_categories);
    w.vocab_.size = next;
    if (w.vocab_.size > vocab_limit) {
        fail(ErrorKind::config, "world needs " + std::to_string(w.vocab_.size) + " tokens but vocab_size is " +
                                    std::to_string(vocab_limit));
    }

    const auto dim = static_cast<std::size_t>(config.d_img);
    Rng means(derive_seed(config.seed, kTagMeans));
    Rng names(derive_seed(config.seed, kTagNames));
    std::vector<TokenSequence> name_pool;
    for (TokenId a : w.vocab_.syllables) {
        for (TokenId b : w.vocab_.syllables) {
            name_pool.push_back({a, b});
        }
    }
    names.shuffle(std::span(name_pool));

    int id = 0;
    for (int c = 0; c < config.n_categories; ++c) {
        const auto centre = gaussian(dim, config.sigma_category, means);
        for (int b = 0; b < config.breeds_per_category; ++b) {
            const auto breed_offset = gaussian(dim, config.sigma_breed, means);
            for (int i = 0; i < config.instances_per_breed; ++i) {
                const auto inst_offset = gaussian(dim, config.sigma_instance, means);
                Entity e;
                e.id = id;
                e.category = c;
                e.breed = c * config.breeds_per_category + b;
                e.instance = i;
                e.mean.values.resize(dim);
                for (std::size_t k = 0; k < dim; ++k) {
                    e.mean.values[k] = centre[k] + breed_offset[k] + inst_offset[k];
                }
                e.name = name_pool[static_cast<std::size_t>(id)];
                w.entities_.push_back(std::move(e));
                ++id;
            }
        }
    }

    Rng para(derive_seed(config.seed, kTagParaphrases));
    for (Scope kind : kAllScopes) {
        std::vector<TokenSequence> candidates;
        const auto& fillers = w.vocab_.fillers[static_cast<std::size_t>(kind)];
        for (TokenId word : w.vocab_.kind_words[static_cast<std::size_t>(kind)]) {
            for (TokenId f1 : fillers) {
                for (TokenId f2 : fillers) {
                    if (f1 == f2) {
                        continue;
                    }
                    candidates.push_back({word, f1, f2});
                    candidates.push_back({f1, word, f2});
                    candidates.push_back({f1, f2, word});
                }
            }
        }
        para.shuffle(std::span(candidates));
        candidates.resize(static_cast<std::size_t>(config.n_paraphrases));
        w.paraphrases_[static_cast<std::size_t>(kind)] = std::move(candidates);
    }
    return w;
}

const Entity& World::entity(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= entities_.size()) {
        fail(ErrorKind::not_found, "no entity " + std::to_string(id));
    }
    return entities_[static_cast<std::size_t>(id)];
}

TokenSequence World::answer(const Entity& e, Scope kind) const {
    switch (kind) {
        case Scope::instance: return e.name;
        case Scope::breed: return {vocab_.breeds[static_cast<std::size_t>(e.breed)]};
        case Scope::category: return {vocab_.categories[static_cast<std::size_t>(e.category)]};
    }
    return {};
}

std::vector<TokenSequence> World::answer_vocabulary(Scope kind) const {
    std::vector<TokenSequence> out;
    switch (kind) {
        case Scope::instance:
            for (const Entity& e : entities_) {
                out.push_back(e.name);
            }
            break;
        case Scope::breed:
            for (TokenId t : vocab_.breeds) {
                out.push_back({t});
            }
            break;
        case Scope::category:
            for (TokenId t : vocab_.categories) {
                out.push_back({t});
            }
            break;
    }
    return out;
}

ImageFeature World::sample_image(const Entity& e, std::uint64_t noise_seed, std::optional<double> noise_scale) const {
    const double sigma = noise_scale.value_or(config_.sigma_instance);
    ImageFeature img = e.mean;
    if (sigma == 0.0) {
        return img;
    }
    Rng rng(derive_seed(config_.seed, kTagNoise, static_cast<std::uint64_t>(e.id), noise_seed));
    for (double& v : img.values) {
        v += sigma * rng.normal();
    }
    return img;
}

bool World::in_scope(const Entity& edited, const Entity& other, Scope scope) const {
    switch (scope) {
        case Scope::instance: return edited.id == other.id;
        case Scope::breed: return edited.breed == other.breed;
        case Scope::category: return edited.category == other.category;
    }
    return false;
}

std::vector<TrainingExample> World::sample_dataset(int per_entity, std::uint64_t seed) const {
    std::vector<TrainingExample> out;
    out.reserve(entities_.size() * static_cast<std::size_t>(per_entity));
    Rng rng(derive_seed(config_.seed, kTagDataset, seed));
    for (const Entity& e : entities_) {
        for (int j = 0; j < per_entity; ++j) {
            const Scope kind = kAllScopes[static_cast<std::size_t>(j) % kAllScopes.size()];
            const auto& prompts = paraphrases(kind);
            TrainingExample ex;
            ex.image = sample_image(e, derive_seed(seed, kTagDataset, static_cast<std::uint64_t>(j)));
            ex.prompt = prompts[rng.uniform_index(prompts.size())];
            ex.answer = answer(e, kind);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<TrainingExample> World::pretraining_set(int epoch) const {
    return sample_dataset(config_.samples_per_entity, derive_seed(kTagPretrain, static_cast<std::uint64_t>(epoch)));
}

std::vector<TrainingExample> World::heldout_set(int per_entity) const { return sample_dataset(per_entity, kTagHeldout); }

}  // namespace balancedit::worldgen
