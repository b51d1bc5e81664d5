#include <cmath>
#include <limits>

#include "doctest.h"
#include "balancedit/codebook/codebook.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"

using namespace balancedit;
using namespace balancedit::codebook;

namespace {

Key random_key(std::size_t dim, Rng& rng) {
    Key k(dim);
    for (double& v : k) {
        v = rng.normal();
    }
    return k;
}

UpProjection tiny_projection(double fill) {
    return {numerics::Tensor(numerics::Shape{2, 3}, fill), numerics::Tensor(numerics::Shape{3}, fill)};
}

CodebookEntry entry(Key key, double radius, double fill = 0.0) {
    CodebookEntry e;
    e.key = std::move(key);
    e.radius = radius;
    e.transformation = tiny_projection(fill);
    return e;
}

// Independent reference: plain loops, no shared helpers.
double ref_distance(const Key& a, const Key& b, DistanceKind kind) {
    double dot = 0, na = 0, nb = 0, sq = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
        sq += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return kind == DistanceKind::euclidean ? std::sqrt(sq) : 1.0 - dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("distances") {
    const Key a{3, 0}, b{0, 4};
    CHECK(distance(a, b, DistanceKind::euclidean) == doctest::Approx(5.0));
    CHECK(distance(a, b, DistanceKind::cosine) == doctest::Approx(1.0));
    CHECK(distance(a, Key{-1, 0}, DistanceKind::cosine) == doctest::Approx(2.0));
    CHECK(distance(a, Key{6, 0}, DistanceKind::cosine) == doctest::Approx(0.0));
    CHECK_THROWS_AS(distance(a, Key{1, 2, 3}, DistanceKind::euclidean), Error);
    try {
        (void)distance(a, Key{0, 0}, DistanceKind::cosine);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::domain);
    }
    CHECK(distance_from_string("cosine") == DistanceKind::cosine);
    CHECK_THROWS_AS(distance_from_string("manhattan"), Error);
}

TEST_CASE("key is the row mean") {
    const auto k = extract_key(numerics::Tensor::matrix({{1, 2}, {3, 6}}));
    CHECK(k == Key{2, 4});
}

TEST_CASE("radius interpolates between the anchors") {
    const double dp = 1.5, dn = 9.0;
    CHECK(estimate_radius(dp, dn, 0.0) == doctest::Approx(dn));
    CHECK(estimate_radius(dp, dn, 1.0) == doctest::Approx(dp));
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 10; ++i) {
        const double a = i / 10.0;
        const double r = estimate_radius(dp, dn, a);
        CHECK(r == doctest::Approx(a * dp + (1 - a) * dn));
        CHECK(r >= dp);
        CHECK(r <= dn);
        CHECK(r <= prev);
        prev = r;
    }
    CHECK_THROWS_AS(estimate_radius(dp, dn, 1.5), Error);
    CHECK_THROWS_AS(estimate_radius(-1.0, dn, 0.5), Error);
}

TEST_CASE("lookup equals a brute-force scan") {
    for (DistanceKind kind : {DistanceKind::euclidean, DistanceKind::cosine}) {
        Rng rng(kind == DistanceKind::euclidean ? 100 : 200);
        for (int inst = 0; inst < 1000; ++inst) {
            const std::size_t dim = 2 + rng.uniform_index(6);
            const std::size_t n = rng.uniform_index(9);
            Codebook cb(kind);
            std::vector<CodebookEntry> ref;
            for (std::size_t i = 0; i < n; ++i) {
                // some duplicate keys to exercise the tie rule
                Key k = (i > 0 && rng.uniform() < 0.15) ? ref[rng.uniform_index(ref.size())].key : random_key(dim, rng);
                const double rad = kind == DistanceKind::euclidean ? 3 * rng.uniform() : rng.uniform();
                // skip the insert policy: every candidate is a plain add
                const auto id = cb.insert(entry(k, rad), InsertDecision{InsertAction::added, std::nullopt});
                auto e = entry(k, rad);
                e.id = id;
                ref.push_back(e);
            }
            const Key q = random_key(dim, rng);
            const auto got = cb.lookup(q);

            std::optional<std::size_t> best;
            double best_d = 0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                const double d = ref_distance(ref[i].key, q, kind);
                if (!best || d < best_d - 1e-12) {
                    best = i;
                    best_d = d;
                }
            }
            if (!best) {
                CHECK_FALSE(got.routed);
                CHECK_FALSE(got.nearest_entry_id);
                continue;
            }
            REQUIRE(got.nearest_entry_id);
            CHECK(*got.nearest_entry_id == ref[*best].id);
            CHECK(got.distance_to_nearest == doctest::Approx(best_d).epsilon(1e-12));
            CHECK(got.routed == (best_d <= ref[*best].radius));
        }
    }
}

TEST_CASE("insert policy") {
    Codebook cb;
    CHECK(cb.plan_insert(Key{0, 0}).action == InsertAction::added);
    const auto a = cb.insert(entry({0, 0}, 1.0, 1.0));
    CHECK(a == 1);

    SUBCASE("near-identical key replaces") {
        const auto d = cb.plan_insert(Key{0, 1e-7});
        CHECK(d.action == InsertAction::replaced);
        CHECK(d.target_id == a);
        const auto b = cb.insert(entry({0, 1e-7}, 2.0, 2.0), d);
        CHECK(b == 2);
        CHECK(cb.size() == 1);
        CHECK(cb.find(a) == nullptr);
    }
    SUBCASE("inside a radius warm-starts") {
        cb.insert(entry({3, 0}, 0.5));
        const auto d = cb.plan_insert(Key{0.5, 0});
        CHECK(d.action == InsertAction::warm_start);
        CHECK(d.target_id == a);
        cb.insert(entry({0.5, 0}, 1.0), d);
        CHECK(cb.size() == 3);
        CHECK(cb.entries().back().parent_id == a);
    }
    SUBCASE("outside every radius adds") {
        CHECK(cb.plan_insert(Key{5, 5}).action == InsertAction::added);
    }
    SUBCASE("remove") {
        cb.remove(a);
        CHECK(cb.empty());
        try {
            cb.remove(a);
            FAIL("expected a throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::not_found);
        }
    }
}

TEST_CASE("remove leaves the others routing as before") {
    Codebook cb;
    const auto a = cb.insert(entry({0, 0}, 1.0));
    const auto b = cb.insert(entry({10, 0}, 1.0));
    cb.remove(a);
    const auto d = cb.lookup(Key{10.5, 0});
    CHECK(d.routed);
    CHECK(d.nearest_entry_id == b);
    CHECK_FALSE(cb.lookup(Key{0, 0}).routed);

    // insert then remove of a far entry is invisible to every query
    Rng rng(8);
    std::vector<Key> queries;
    for (int i = 0; i < 200; ++i) {
        queries.push_back(random_key(2, rng));
    }
    std::vector<RoutingDecision> before;
    for (const auto& q : queries) {
        before.push_back(cb.lookup(q));
    }
    const auto far = cb.insert(entry({100, 100}, 0.5));
    cb.remove(far);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        CHECK(cb.lookup(queries[i]) == before[i]);
    }
}

TEST_CASE("routing boundary is inclusive") {
    Codebook cb;
    cb.insert(entry({0, 0}, 1.0));
    CHECK(cb.lookup(Key{1, 0}).routed);
    CHECK_FALSE(cb.lookup(Key{1.0000001, 0}).routed);
    CHECK(cb.lookup(Key{0.5, 0}).margin() == doctest::Approx(-0.5));
    CHECK_THROWS_AS(cb.require_distance(DistanceKind::cosine), Error);
}

TEST_CASE("codebook serialization round trip") {
    Codebook cb(DistanceKind::euclidean, 0.3);
    Rng rng(5);
    for (int i = 0; i < 4; ++i) {
        auto e = entry(random_key(4, rng), 0.5 + i, 0.1 * i);
        e.meta.case_id = "case-" + std::to_string(i);
        e.meta.prompt = {4, 5};
        e.meta.old_answer = {6};
        e.meta.new_answer = {7, 8};
        if (i % 2 == 0) {
            e.meta.d_pos = 1.0;
            e.meta.d_neg = 3.0;
        }
        e.meta.alpha = 0.3;
        cb.insert(e);
    }
    cb.remove(2);
    const auto bytes = serialize_codebook(cb);
    const Codebook back = deserialize_codebook(bytes);
    CHECK(back == cb);
    CHECK(back.next_id() == 5);
    CHECK(serialize_codebook(back) == bytes);

    auto bad = bytes;
    bad.resize(bytes.size() - 3);
    try {
        (void)deserialize_codebook(bad);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::format);
    }
    std::vector<std::uint8_t> junk{'x', '\n'};
    CHECK_THROWS_AS(deserialize_codebook(junk), Error);
}

TEST_CASE("a reloaded 50-entry codebook routes identically") {
    Rng rng(21);
    Codebook cb(DistanceKind::euclidean, 0.2);
    for (int i = 0; i < 50; ++i) {
        cb.insert(entry(random_key(6, rng), 2.0 * rng.uniform(), rng.normal()), InsertDecision{});
    }
    const Codebook back = deserialize_codebook(serialize_codebook(cb));
    REQUIRE(back.size() == 50);
    for (int i = 0; i < 500; ++i) {
        const Key q = random_key(6, rng);
        CHECK(back.lookup(q) == cb.lookup(q));
    }
}
