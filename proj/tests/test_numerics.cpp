#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"
#include "balancedit/numerics/adam.hpp"
#include "balancedit/numerics/grad_check.hpp"
#include "balancedit/numerics/ops.hpp"

using namespace balancedit;
using namespace balancedit::numerics;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        v = scale * rng.normal();
    }
    return t;
}

// Plain central difference of a scalar function of one tensor, written out here so the
// op adjoints are checked against something that does not share code with grad_check.
Tensor numeric_grad(Tensor& x, const std::function<double()>& f, double h = 1e-6) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
    REQUIRE(a.same_shape(b));
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol).scale(1.0));
    }
}

// Weighted sum, so every output element gets a distinct upstream gradient.
double dot(const Tensor& y, const Tensor& w) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += y[i] * w[i];
    }
    return s;
}

}  // namespace

TEST_CASE("matmul against hand values") {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
    CHECK(matmul(a, b) == Tensor::matrix({{19, 22}, {43, 50}}));
    CHECK(matmul_nt(a, b) == Tensor::matrix({{17, 23}, {39, 53}}));
}

TEST_CASE("shape errors") {
    const Tensor a(Shape{2, 3});
    const Tensor b(Shape{2, 3});
    try {
        (void)matmul(a, b);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::dimension);
    }
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), Error);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), Error);
    CHECK_THROWS_AS(Tensor::matrix({{1, 2}, {3}}), Error);
}

TEST_CASE("op adjoints match central differences") {
    Rng rng(7);

    SUBCASE("matmul") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        const Tensor w = random_tensor({3, 2}, rng);
        Tensor da(a.shape()), db(b.shape());
        matmul_backward(a, b, w, &da, &db);
        check_close(da, numeric_grad(a, [&] { return dot(matmul(a, b), w); }), 1e-6);
        check_close(db, numeric_grad(b, [&] { return dot(matmul(a, b), w); }), 1e-6);
    }

    SUBCASE("gelu") {
        Tensor x = random_tensor({3, 5}, rng, 2.0);
        const Tensor w = random_tensor({3, 5}, rng);
        Tensor dx(x.shape());
        gelu_backward(x, w, dx);
        check_close(dx, numeric_grad(x, [&] { return dot(gelu(x), w); }), 1e-6);
    }

    SUBCASE("layernorm") {
        Tensor x = random_tensor({4, 6}, rng, 3.0);
        Tensor gain = random_tensor({6}, rng);
        Tensor shift = random_tensor({6}, rng);
        const Tensor w = random_tensor({4, 6}, rng);
        LayerNormCache cache;
        (void)layernorm(x, gain, shift, &cache);
        Tensor dx(x.shape()), dg(gain.shape()), ds(shift.shape());
        layernorm_backward(cache, gain, w, dx, &dg, &ds);
        const auto f = [&] { return dot(layernorm(x, gain, shift, nullptr), w); };
        check_close(dx, numeric_grad(x, f), 1e-5);
        check_close(dg, numeric_grad(gain, f), 1e-5);
        check_close(ds, numeric_grad(shift, f), 1e-5);
    }

    SUBCASE("causal softmax") {
        Tensor x = random_tensor({4, 4}, rng);
        const Tensor w = random_tensor({4, 4}, rng);
        const Tensor y = softmax_rows(x, true);
        Tensor dx(x.shape());
        softmax_rows_backward(y, w, dx);
        check_close(dx, numeric_grad(x, [&] { return dot(softmax_rows(x, true), w); }), 1e-6);
        // masked entries are exactly zero and rows sum to one
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 4; ++c) {
                s += y(r, c);
                if (c > r) {
                    CHECK(y(r, c) == 0.0);
                }
            }
            CHECK(s == doctest::Approx(1.0));
        }
    }

    SUBCASE("cross entropy") {
        Tensor logits = random_tensor({4, 5}, rng);
        const std::vector<std::int32_t> targets{1, 0, 4, 2};
        const std::vector<bool> mask{true, false, true, true};
        const auto res = softmax_cross_entropy(logits, targets, mask);
        CHECK(res.active_rows == 3);
        check_close(res.dlogits,
                    numeric_grad(logits, [&] { return softmax_cross_entropy(logits, targets, mask).loss; }),
                    1e-6);
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(res.dlogits(1, c) == 0.0);
        }
    }

    SUBCASE("embedding gather") {
        Tensor table = random_tensor({5, 3}, rng);
        const std::vector<std::int32_t> ids{2, 0, 2};
        const Tensor w = random_tensor({3, 3}, rng);
        Tensor dt(table.shape());
        embedding_gather_backward(ids, w, dt);
        check_close(dt, numeric_grad(table, [&] { return dot(embedding_gather(table, ids), w); }), 1e-6);
    }
}

TEST_CASE("cross entropy of uniform logits is log V") {
    const Tensor logits(Shape{2, 8});
    const std::vector<std::int32_t> t{3, 5};
    CHECK(softmax_cross_entropy(logits, t, {true, true}).loss == doctest::Approx(std::log(8.0)));
    CHECK_THROWS_AS(softmax_cross_entropy(logits, t, {false, false}), Error);
}

TEST_CASE("adam first step by hand") {
    // m = 0.1, v = 0.001; bias-corrected both are g and g², so the step is lr·g/(|g|+eps).
    Parameter p("p", Tensor::vector({0.0, 2.0}));
    AdamState st(p, AdamHyper{0.1, 0.9, 0.999, 1e-8});
    p.grad[0] = 1.0;
    p.grad[1] = -4.0;
    adam_step(p, st);
    CHECK(p.value[0] == doctest::Approx(-0.1).epsilon(1e-7));
    CHECK(p.value[1] == doctest::Approx(2.1).epsilon(1e-7));
    CHECK(p.grad[0] == 0.0);
    CHECK(st.step == 1);

    // second step, g = 1 again: m̂ = 1, v̂ = 1
    p.grad[0] = 1.0;
    adam_step(p, st);
    CHECK(p.value[0] == doctest::Approx(-0.2).epsilon(1e-7));
}

TEST_CASE("adam with a zero gradient only counts the step") {
    Parameter p("p", Tensor::vector({1.5, -0.5}));
    AdamState st(p);
    adam_step(p, st);
    CHECK(p.value == Tensor::vector({1.5, -0.5}));
    CHECK(st.step == 1);
}

TEST_CASE("adam rejects non-finite gradients untouched") {
    Parameter p("w", Tensor::vector({1.0}));
    AdamState st(p);
    p.grad[0] = std::nan("");
    try {
        adam_step(p, st);
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
        CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
    CHECK(p.value[0] == 1.0);
}

TEST_CASE("grad_check reports a correct and a wrong gradient") {
    Parameter p("x", Tensor::vector({0.3, -1.2, 2.0}));
    std::vector<Parameter*> ps{&p};
    // f = sum x³
    bool wrong = false;
    const DifferentiableFn f = [&](bool acc) {
        double s = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            const double x = p.value[i];
            s += x * x * x;
            if (acc) {
                p.grad[i] += (wrong ? 2.0 : 3.0) * x * x;
            }
        }
        return s;
    };
    const Tensor before = p.value;
    CHECK(grad_check(f, ps).max_rel_error < 1e-6);
    CHECK(p.value == before);
    wrong = true;
    const auto bad = grad_check(f, ps);
    CHECK(bad.max_rel_error > 0.3);
    CHECK(bad.worst_parameter == "x");
}

TEST_CASE("grad_check on x squared at 3") {
    Parameter p("x", Tensor::vector({3.0}));
    std::vector<Parameter*> ps{&p};
    double factor = 1.0;
    const DifferentiableFn f = [&](bool acc) {
        if (acc) {
            p.grad[0] += factor * 2 * p.value[0];
        }
        return p.value[0] * p.value[0];
    };
    const auto ok = grad_check(f, ps);
    CHECK(ok.max_rel_error < 1e-8);
    CHECK(ok.analytic == doctest::Approx(6.0));
    CHECK(ok.numeric == doctest::Approx(6.0));
    factor = 2.0;
    CHECK(grad_check(f, ps).max_rel_error == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("rng is reproducible and in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng r(1);
    double mean = 0;
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        CHECK(r.uniform_index(7) < 7);
        mean += r.normal();
    }
    CHECK(std::abs(mean / 20000) < 0.03);
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}
