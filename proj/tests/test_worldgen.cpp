#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "balancedit/common/error.hpp"
#include "balancedit/worldgen/suite.hpp"

using namespace balancedit;
using namespace balancedit::worldgen;

namespace {

double mean_dist(const Entity& a, const Entity& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.mean.values.size(); ++i) {
        const double d = a.mean.values[i] - b.mean.values[i];
        s += d * d;
    }
    return std::sqrt(s);
}

const World& default_world() {
    static const World w = World::generate(WorldConfig{});
    return w;
}

}  // namespace

TEST_CASE("world is deterministic per seed") {
    WorldConfig c;
    const World a = World::generate(c);
    const World b = World::generate(c);
    CHECK(world_to_jsonl(a) == world_to_jsonl(b));
    c.seed = 1;
    CHECK(world_to_jsonl(World::generate(c)) != world_to_jsonl(a));
}

TEST_CASE("world shape and vocabulary") {
    const World& w = default_world();
    CHECK(w.entities().size() == 72);
    CHECK(w.vocabulary().size <= 128);
    std::set<TokenSequence> names;
    for (const auto& e : w.entities()) {
        names.insert(e.name);
        CHECK(e.mean.dim() == 16);
    }
    CHECK(names.size() == 72);
    for (Scope s : kAllScopes) {
        CHECK(w.paraphrases(s).size() == 16);
    }
    // no prompt is shared between question kinds
    for (const auto& p : w.paraphrases(Scope::instance)) {
        CHECK(std::find(w.paraphrases(Scope::breed).begin(), w.paraphrases(Scope::breed).end(), p) ==
              w.paraphrases(Scope::breed).end());
    }
    CHECK_THROWS_AS(World::generate(WorldConfig{}, 40), Error);
    CHECK_THROWS_AS(w.entity(72), Error);
}

TEST_CASE("closeness follows the hierarchy on average") {
    const World& w = default_world();
    double same_breed = 0, same_cat = 0, other = 0;
    int nb = 0, nc = 0, no = 0;
    for (const auto& a : w.entities()) {
        for (const auto& b : w.entities()) {
            if (a.id >= b.id) {
                continue;
            }
            const double d = mean_dist(a, b);
            if (a.breed == b.breed) {
                same_breed += d, ++nb;
            } else if (a.category == b.category) {
                same_cat += d, ++nc;
            } else {
                other += d, ++no;
            }
        }
    }
    CHECK(same_breed / nb < same_cat / nc);
    CHECK(same_cat / nc < other / no);
}

TEST_CASE("answers and scope membership") {
    const World& w = default_world();
    const Entity& a = w.entity(0);
    const Entity& sib = w.entity(1);  // same breed
    CHECK(sib.breed == a.breed);
    CHECK(w.in_scope(a, sib, Scope::breed));
    CHECK(w.in_scope(a, sib, Scope::category));
    CHECK_FALSE(w.in_scope(a, sib, Scope::instance));
    CHECK(w.answer(a, Scope::breed) == w.answer(sib, Scope::breed));
    CHECK(w.answer(a, Scope::instance) != w.answer(sib, Scope::instance));
    CHECK(w.answer(a, Scope::instance) == a.name);
    CHECK(w.answer_vocabulary(Scope::category).size() == 6);
    CHECK(w.answer_vocabulary(Scope::breed).size() == 18);
}

TEST_CASE("images: noise around the mean, reproducible") {
    const World& w = default_world();
    const Entity& e = w.entity(5);
    CHECK(w.sample_image(e, 3) == w.sample_image(e, 3));
    CHECK(w.sample_image(e, 3) != w.sample_image(e, 4));
    CHECK(w.sample_image(e, 3, 0.0) == e.mean);
}

TEST_CASE("datasets cycle kinds and epochs differ") {
    const World& w = default_world();
    const auto p0 = w.pretraining_set(0);
    CHECK(p0.size() == 72u * 32u);
    const auto p1 = w.pretraining_set(1);
    CHECK(p0[0].image != p1[0].image);
    const auto held = w.heldout_set();
    CHECK(held.size() == 72u * 9u);
    for (const auto& h : held) {
        CHECK(std::none_of(p0.begin(), p0.end(), [&](const auto& t) { return t.image == h.image; }));
    }
}

TEST_CASE("edit suite invariants") {
    const World& w = default_world();
    const EditSuite suite = generate_edit_suite(w, 50, 1);
    REQUIRE(suite.cases.size() == 50);
    std::set<int> edited;
    int counts[3] = {0, 0, 0};
    for (const auto& c : suite.cases) {
        edited.insert(c.entity_id);
        ++counts[static_cast<int>(c.scope)];
        const Entity& target = w.entity(c.entity_id);
        CHECK(c.old_answer == w.answer(target, c.scope));
        CHECK(c.new_answer != c.old_answer);
        CHECK(c.rephrases.size() == 10);
        CHECK(std::find(c.rephrases.begin(), c.rephrases.end(), c.anchor_rephrase) == c.rephrases.end());
        CHECK(std::find(c.rephrases.begin(), c.rephrases.end(), c.prompt) == c.rephrases.end());
        const auto& paras = w.paraphrases(c.scope);
        CHECK(std::find(paras.begin(), paras.end(), c.prompt) != paras.end());
        CHECK(c.image_probes.size() == 10);
        for (const auto& p : c.image_probes) {
            CHECK(w.in_scope(target, w.entity(p.entity_id), c.scope));
        }
        CHECK(c.locality_probes.size() == 5);
        for (const auto& p : c.locality_probes) {
            CHECK_FALSE(w.in_scope(target, w.entity(p.entity_id), c.scope));
            CHECK(p.prompt == c.prompt);
            CHECK(p.answer != c.new_answer);
        }
    }
    CHECK(edited.size() == 50);
    CHECK(counts[0] == 25);
    CHECK(counts[1] == 15);
    CHECK(counts[2] == 10);
    CHECK(generate_edit_suite(w, 50, 1) == suite);
    CHECK(generate_edit_suite(w, 50, 2) != suite);
}

TEST_CASE("suite generation errors") {
    const World& w = default_world();
    try {
        (void)generate_edit_suite(w, 73, 1);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::generation);
    }
    CHECK_THROWS_AS(generate_edit_suite(w, 0, 1), Error);
    SuiteOptions o;
    o.n_rephrases = 15;
    CHECK_THROWS_AS(generate_edit_suite(w, 5, 1, o), Error);
}

TEST_CASE("suite and world round trip") {
    const World& w = default_world();
    const EditSuite suite = generate_edit_suite(w, 12, 3);
    const std::string text = suite_to_jsonl(suite);
    CHECK(suite_from_jsonl(text) == suite);
    CHECK(suite_to_jsonl(suite_from_jsonl(text)) == text);

    const std::string wt = world_to_jsonl(w);
    CHECK(world_to_jsonl(world_from_jsonl(wt)) == wt);

    SUBCASE("damaged files") {
        CHECK_THROWS_AS(suite_from_jsonl(""), Error);
        CHECK_THROWS_AS(suite_from_jsonl(text.substr(0, text.size() / 2)), Error);
        std::string tampered = wt;
        const auto pos = tampered.find("\"name\"");
        REQUIRE(pos != std::string::npos);
        tampered.insert(pos, "\"x\":1,");
        try {
            (void)world_from_jsonl(tampered);
            FAIL("expected a throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::format);
        }
    }
}
