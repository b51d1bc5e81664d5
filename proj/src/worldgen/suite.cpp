#include "balancedit/worldgen/suite.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"

namespace balancedit::worldgen {

using nlohmann::json;

namespace {

double mean_distance(const Entity& a, const Entity& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.mean.values.size(); ++k) {
        const double d = a.mean.values[k] - b.mean.values[k];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<Scope> assign_scopes(int n, const ScopeMix& mix) {
    const std::array<double, 3> weights = {mix.instance, mix.breed, mix.category};
    const double total = weights[0] + weights[1] + weights[2];
    if (!(total > 0.0) || weights[0] < 0 || weights[1] < 0 || weights[2] < 0) {
        fail(ErrorKind::config, "scope mix must be non-negative with a positive sum");
    }
    std::array<int, 3> counts{};
    std::array<double, 3> remainder{};
    int assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double exact = n * weights[s] / total;
        counts[s] = static_cast<int>(std::floor(exact));
        remainder[s] = exact - counts[s];
        assigned += counts[s];
    }
    while (assigned < n) {
        // Largest remainder; earlier scope wins ties.
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s) {
            if (remainder[s] > remainder[best]) {
                best = s;
            }
        }
        ++counts[best];
        remainder[best] = -1.0;
        ++assigned;
    }
    std::vector<Scope> scopes;
    for (std::size_t s = 0; s < 3; ++s) {
        scopes.insert(scopes.end(), static_cast<std::size_t>(counts[s]), kAllScopes[s]);
    }
    return scopes;
}

enum SuiteTag : std::uint64_t { kTagOrder = 11, kTagScopes, kTagCase, kTagProbe };

}  // namespace

EditSuite generate_edit_suite(const World& world, int n_edits, std::uint64_t seed, const SuiteOptions& options) {
    const auto& entities = world.entities();
    if (n_edits < 1 || static_cast<std::size_t>(n_edits) > entities.size()) {
        fail(ErrorKind::generation, "n_edits " + std::to_string(n_edits) + " outside [1, " +
                                        std::to_string(entities.size()) + "]");
    }
    const auto needed_paraphrases = static_cast<std::size_t>(options.n_rephrases) + 2;
    if (world.paraphrases(Scope::instance).size() < needed_paraphrases) {
        fail(ErrorKind::generation, "world has " + std::to_string(world.paraphrases(Scope::instance).size()) +
                                        " paraphrases per question, suite needs " + std::to_string(needed_paraphrases));
    }

    Rng order_rng(derive_seed(seed, kTagOrder));
    std::vector<int> ids(entities.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ids[i] = static_cast<int>(i);
    }
    order_rng.shuffle(std::span(ids));

    std::vector<Scope> scopes = assign_scopes(n_edits, options.mix);
    Rng scope_rng(derive_seed(seed, kTagScopes));
    scope_rng.shuffle(std::span(scopes));

    EditSuite suite;
    suite.world_config = world.config();
    suite.seed = seed;
    for (int c = 0; c < n_edits; ++c) {
        const Entity& target = world.entity(ids[static_cast<std::size_t>(c)]);
        const Scope scope = scopes[static_cast<std::size_t>(c)];
        Rng rng(derive_seed(seed, kTagCase, static_cast<std::uint64_t>(c)));
        auto probe_seed = [&](std::uint64_t kind, std::uint64_t j) {
            return derive_seed(seed, kTagProbe, static_cast<std::uint64_t>(c), kind, j);
        };

        EditCase ec;
        ec.case_id = "case-" + std::to_string(c);
        ec.scope = scope;
        ec.entity_id = target.id;
        ec.image = world.sample_image(target, probe_seed(0, 0));

        const auto& prompts = world.paraphrases(scope);
        const std::size_t n_templates = static_cast<std::size_t>(world.config().n_question_templates);
        const std::size_t prompt_index = rng.uniform_index(n_templates);
        ec.prompt = prompts[prompt_index];
        ec.old_answer = world.answer(target, scope);

        std::vector<std::size_t> others;
        for (std::size_t p = 0; p < prompts.size(); ++p) {
            if (p != prompt_index) {
                others.push_back(p);
            }
        }
        rng.shuffle(std::span(others));
        ec.anchor_rephrase = prompts[others[0]];
        for (int r = 0; r < options.n_rephrases; ++r) {
            ec.rephrases.push_back(prompts[others[static_cast<std::size_t>(r) + 1]]);
        }

        std::vector<const Entity*> members;
        for (const Entity& e : entities) {
            if (world.in_scope(target, e, scope)) {
                members.push_back(&e);
            }
        }
        const auto self = std::find(members.begin(), members.end(), &target) - members.begin();
        for (int j = 0; j < options.n_image_probes; ++j) {
            const Entity& e = *members[(static_cast<std::size_t>(self) + 1 + static_cast<std::size_t>(j)) % members.size()];
            ec.image_probes.push_back({e.id, world.sample_image(e, probe_seed(1, static_cast<std::uint64_t>(j)))});
        }

        std::vector<const Entity*> outside;
        for (const Entity& e : entities) {
            if (!world.in_scope(target, e, scope)) {
                outside.push_back(&e);
            }
        }
        if (outside.size() < static_cast<std::size_t>(options.n_locality_probes)) {
            fail(ErrorKind::generation, ec.case_id + ": only " + std::to_string(outside.size()) +
                                            " out-of-scope entities for " + std::to_string(options.n_locality_probes) +
                                            " locality probes");
        }
        // Nearest first, but entities another edit of the same kind would change go last:
        // there f_base is not the right answer once both edits are in one codebook.
        const auto claimed = [&](const Entity* e) {
            for (int d = 0; d < n_edits; ++d) {
                if (d != c && scopes[static_cast<std::size_t>(d)] == scope &&
                    world.in_scope(world.entity(ids[static_cast<std::size_t>(d)]), *e, scope)) {
                    return true;
                }
            }
            return false;
        };
        std::stable_sort(outside.begin(), outside.end(), [&](const Entity* a, const Entity* b) {
            const bool ca = claimed(a), cb = claimed(b);
            if (ca != cb) {
                return cb;
            }
            return mean_distance(*a, target) < mean_distance(*b, target);
        });
        for (int j = 0; j < options.n_locality_probes; ++j) {
            const Entity& e = *outside[static_cast<std::size_t>(j)];
            ec.locality_probes.push_back({e.id, world.sample_image(e, probe_seed(2, static_cast<std::uint64_t>(j))),
                                          ec.prompt, world.answer(e, scope)});
        }

        std::vector<TokenSequence> pool;
        for (auto& candidate : world.answer_vocabulary(scope)) {
            // no shared token with the old answer, so a half-rewritten name is never a hit
            const bool clashes = std::any_of(candidate.begin(), candidate.end(),
                                             [&](TokenId t) {
                                                 return std::find(ec.old_answer.begin(), ec.old_answer.end(), t) !=
                                                        ec.old_answer.end();
                                             }) ||
                                 std::any_of(ec.locality_probes.begin(), ec.locality_probes.end(),
                                             [&](const LocalityProbe& p) { return p.answer == candidate; });
            if (!clashes) {
                pool.push_back(std::move(candidate));
            }
        }
        if (pool.empty()) {
            fail(ErrorKind::generation, ec.case_id + ": no counterfactual answer distinct from the locality answers");
        }
        ec.new_answer = pool[rng.uniform_index(pool.size())];
        suite.cases.push_back(std::move(ec));
    }
    return suite;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

json case_to_json(const EditCase& c) {
    json image_probes = json::array();
    for (const auto& p : c.image_probes) {
        image_probes.push_back({{"entity_id", p.entity_id}, {"image", p.image.values}});
    }
    json locality = json::array();
    for (const auto& p : c.locality_probes) {
        locality.push_back(
            {{"entity_id", p.entity_id}, {"image", p.image.values}, {"prompt", p.prompt}, {"answer", p.answer}});
    }
    return {{"case_id", c.case_id},
            {"scope", to_string(c.scope)},
            {"entity_id", c.entity_id},
            {"image", c.image.values},
            {"prompt", c.prompt},
            {"old_answer", c.old_answer},
            {"new_answer", c.new_answer},
            {"anchor_rephrase", c.anchor_rephrase},
            {"rephrases", c.rephrases},
            {"image_probes", image_probes},
            {"locality_probes", locality}};
}

EditCase case_from_json(const json& j) {
    EditCase c;
    c.case_id = j.at("case_id").get<std::string>();
    c.scope = scope_from_string(j.at("scope").get<std::string>());
    c.entity_id = j.at("entity_id").get<int>();
    c.image.values = j.at("image").get<std::vector<double>>();
    c.prompt = j.at("prompt").get<TokenSequence>();
    c.old_answer = j.at("old_answer").get<TokenSequence>();
    c.new_answer = j.at("new_answer").get<TokenSequence>();
    c.anchor_rephrase = j.at("anchor_rephrase").get<TokenSequence>();
    c.rephrases = j.at("rephrases").get<std::vector<TokenSequence>>();
    for (const auto& p : j.at("image_probes")) {
        c.image_probes.push_back({p.at("entity_id").get<int>(), {p.at("image").get<std::vector<double>>()}});
    }
    for (const auto& p : j.at("locality_probes")) {
        c.locality_probes.push_back({p.at("entity_id").get<int>(),
                                     {p.at("image").get<std::vector<double>>()},
                                     p.at("prompt").get<TokenSequence>(),
                                     p.at("answer").get<TokenSequence>()});
    }
    if (c.new_answer == c.old_answer) {
        fail(ErrorKind::format, "new_answer equals old_answer");
    }
    if (std::find(c.rephrases.begin(), c.rephrases.end(), c.anchor_rephrase) != c.rephrases.end()) {
        fail(ErrorKind::format, "anchor rephrase appears among evaluation rephrases");
    }
    return c;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    return lines;
}

std::string read_text(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

json parse_line(const std::string& line, std::size_t line_no, const char* what) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
}

}  // namespace

std::string suite_to_jsonl(const EditSuite& suite) {
    std::string out = json{{"format", "balancedit-suite"},
                           {"format_version", suite.format_version},
                           {"world_config", suite.world_config},
                           {"seed", suite.seed},
                           {"n_cases", suite.cases.size()}}
                          .dump() +
                      "\n";
    for (const auto& c : suite.cases) {
        out += case_to_json(c).dump() + "\n";
    }
    return out;
}

EditSuite suite_from_jsonl(const std::string& text) {
    const auto lines = split_lines(text);
    if (lines.empty()) {
        fail(ErrorKind::format, "suite line 1: missing header");
    }
    EditSuite suite;
    const json header = parse_line(lines[0], 1, "suite");
    std::size_t n_cases = 0;
    try {
        if (header.at("format") != "balancedit-suite") {
            fail(ErrorKind::format, "suite line 1: not a suite file");
        }
        suite.format_version = header.at("format_version").get<int>();
        if (suite.format_version != kSuiteFormatVersion) {
            fail(ErrorKind::format, "suite line 1: format_version " + std::to_string(suite.format_version) +
                                        ", expected " + std::to_string(kSuiteFormatVersion));
        }
        suite.world_config = header.at("world_config").get<WorldConfig>();
        suite.seed = header.at("seed").get<std::uint64_t>();
        n_cases = header.at("n_cases").get<std::size_t>();
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("suite line 1: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::format) {
            throw;
        }
        fail(ErrorKind::format, std::string("suite line 1: ") + e.what());
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            continue;
        }
        const json j = parse_line(lines[i], i + 1, "suite");
        try {
            suite.cases.push_back(case_from_json(j));
        } catch (const json::exception& e) {
            fail(ErrorKind::format, "suite line " + std::to_string(i + 1) + ": " + e.what());
        } catch (const Error& e) {
            fail(ErrorKind::format, "suite line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    if (suite.cases.size() != n_cases) {
        fail(ErrorKind::format, "suite has " + std::to_string(suite.cases.size()) + " cases, header says " +
                                    std::to_string(n_cases));
    }
    for (std::size_t i = 0; i < suite.cases.size(); ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            if (suite.cases[k].case_id == suite.cases[i].case_id) {
                fail(ErrorKind::format, "suite line " + std::to_string(i + 2) + ": duplicate case id '" +
                                            suite.cases[i].case_id + "'");
            }
        }
    }
    return suite;
}

void write_suite(const EditSuite& suite, const std::string& path) { write_file_text(path, suite_to_jsonl(suite)); }

EditSuite read_suite(const std::string& path) { return suite_from_jsonl(read_text(path)); }

std::string world_to_jsonl(const World& world) {
    std::string out = json{{"format", "balancedit-world"},
                           {"format_version", kWorldFormatVersion},
                           {"world_config", world.config()},
                           {"seed", world.config().seed},
                           {"vocab_used", world.vocabulary().size}}
                          .dump() +
                      "\n";
    for (const Entity& e : world.entities()) {
        out += json{{"entity", {{"id", e.id},
                                {"category", e.category},
                                {"breed", e.breed},
                                {"instance", e.instance},
                                {"mean", e.mean.values},
                                {"name", e.name}}}}
                   .dump() +
               "\n";
    }
    for (Scope kind : kAllScopes) {
        out += json{{"paraphrases", {{"kind", to_string(kind)}, {"prompts", world.paraphrases(kind)}}}}.dump() + "\n";
    }
    return out;
}

World world_from_jsonl(const std::string& text, int vocab_limit) {
    const auto lines = split_lines(text);
    if (lines.empty()) {
        fail(ErrorKind::format, "world line 1: missing header");
    }
    const json header = parse_line(lines[0], 1, "world");
    WorldConfig config;
    try {
        if (header.at("format") != "balancedit-world") {
            fail(ErrorKind::format, "world line 1: not a world file");
        }
        const int version = header.at("format_version").get<int>();
        if (version != kWorldFormatVersion) {
            fail(ErrorKind::format, "world line 1: format_version " + std::to_string(version) + ", expected " +
                                        std::to_string(kWorldFormatVersion));
        }
        config = header.at("world_config").get<WorldConfig>();
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("world line 1: ") + e.what());
    }
    World world = World::generate(config, vocab_limit);
    const std::string expected = world_to_jsonl(world);
    const auto expected_lines = split_lines(expected);
    if (expected_lines.size() != lines.size()) {
        fail(ErrorKind::format, "world file has " + std::to_string(lines.size()) + " lines, its config generates " +
                                    std::to_string(expected_lines.size()));
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (parse_line(lines[i], i + 1, "world") != json::parse(expected_lines[i])) {
            fail(ErrorKind::format, "world line " + std::to_string(i + 1) + " does not match the world its header generates");
        }
    }
    return world;
}

void write_world(const World& world, const std::string& path) { write_file_text(path, world_to_jsonl(world)); }

World read_world(const std::string& path, int vocab_limit) { return world_from_jsonl(read_text(path), vocab_limit); }

}  // namespace balancedit::worldgen
