#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "balancedit/worldgen/world.hpp"

namespace balancedit::worldgen {

inline constexpr int kSuiteFormatVersion = 1;
inline constexpr int kWorldFormatVersion = 1;

struct ImageProbe {
    int entity_id = 0;
    ImageFeature image;
    friend bool operator==(const ImageProbe&, const ImageProbe&) = default;
};

struct LocalityProbe {
    int entity_id = 0;
    ImageFeature image;
    TokenSequence prompt;
    TokenSequence answer;  // ground truth; locality itself is scored against the base model
    friend bool operator==(const LocalityProbe&, const LocalityProbe&) = default;
};

// One counterfactual edit with its generality and locality probes.
struct EditCase {
    std::string case_id;
    Scope scope = Scope::instance;
    int entity_id = 0;
    ImageFeature image;
    TokenSequence prompt;
    TokenSequence old_answer;
    TokenSequence new_answer;
    // Reserved for the positive anchor; never among `rephrases`.
    TokenSequence anchor_rephrase;
    std::vector<TokenSequence> rephrases;
    std::vector<ImageProbe> image_probes;
    std::vector<LocalityProbe> locality_probes;

    friend bool operator==(const EditCase&, const EditCase&) = default;
};

struct EditSuite {
    int format_version = kSuiteFormatVersion;
    WorldConfig world_config;
    std::uint64_t seed = 0;
    std::vector<EditCase> cases;

    friend bool operator==(const EditSuite&, const EditSuite&) = default;
};

struct ScopeMix {
    double instance = 0.5;
    double breed = 0.3;
    double category = 0.2;
};

struct SuiteOptions {
    ScopeMix mix;
    int n_rephrases = 10;
    int n_image_probes = 10;
    int n_locality_probes = 5;
};

// Scope counts follow `mix` by largest remainder; edited entities are distinct.
// Locality probes are the nearest out-of-scope entities (by image mean), asked the
// edit's own question. Throws ErrorKind::generation.
EditSuite generate_edit_suite(const World& world, int n_edits, std::uint64_t seed, const SuiteOptions& options = {});

// JSONL: header line {format, format_version, world_config, seed}, then one case per line.
std::string suite_to_jsonl(const EditSuite& suite);
EditSuite suite_from_jsonl(const std::string& text);
void write_suite(const EditSuite& suite, const std::string& path);
EditSuite read_suite(const std::string& path);

// JSONL: header line, then one line per entity and per question kind's paraphrase table.
// Reading regenerates the world from the header and checks it against the file.
std::string world_to_jsonl(const World& world);
World world_from_jsonl(const std::string& text, int vocab_limit = 128);
void write_world(const World& world, const std::string& path);
World read_world(const std::string& path, int vocab_limit = 128);

}  // namespace balancedit::worldgen
