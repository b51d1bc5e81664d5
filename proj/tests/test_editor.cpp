#include "doctest.h"
#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"
#include "balancedit/editor/editor.hpp"
#include "balancedit/numerics/grad_check.hpp"

using namespace balancedit;
using namespace balancedit::editor;
using backbone::ModelConfig;

namespace {

ModelConfig small_config(std::uint64_t seed) {
    ModelConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_img = 8;
    c.n_img_prefix_tokens = 2;
    c.vocab_size = 24;
    c.max_seq_len = 16;
    c.seed = seed;
    return c;
}

ImageFeature random_image(std::size_t dim, Rng& rng) {
    ImageFeature im;
    for (std::size_t i = 0; i < dim; ++i) {
        im.values.push_back(rng.normal());
    }
    return im;
}

EditRequest request(Rng& rng) {
    EditRequest r;
    r.case_id = "t";
    r.image = random_image(8, rng);
    r.prompt = {5, 6, 7};
    r.old_answer = {9};
    r.new_answer = {11, 12};
    r.rephrase_pool = {{5, 8, 7}, {6, 5, 7}};
    r.unrelated = QueryPair{random_image(8, rng), {14, 15}};
    return r;
}

}  // namespace

TEST_CASE("edit-loss gradient wrt the hooked layer, 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const BackboneModel m(small_config(seed));
        Rng rng(derive_seed(seed, 1));
        const EditRequest req = request(rng);
        const UpProjection base = m.editable_weights();
        numerics::Parameter w("w", base.weight), b("b", base.bias);
        for (double& v : w.value.data()) {
            v += 0.1 * rng.normal();
        }
        std::vector<numerics::Parameter*> ps{&w, &b};
        const numerics::DifferentiableFn f = [&](bool acc) {
            const UpProjection hook{w.value, b.value};
            if (!acc) {
                return m.answer_loss(req.image, req.prompt, req.new_answer, &hook);
            }
            auto al = m.answer_loss_traced(req.image, req.prompt, req.new_answer, &hook);
            UpProjection g{w.grad, b.grad};
            m.backward_hook(al.trace, al.dlogits, g);
            w.grad = g.weight;
            b.grad = g.bias;
            return al.loss;
        };
        const auto rep = numerics::grad_check(f, ps, 1e-5, 1e-6);
        INFO("seed ", seed, " ", rep.worst_parameter, "[", rep.worst_index, "]");
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("request validation") {
    Rng rng(1);
    EditRequest r = request(rng);
    CHECK_NOTHROW(r.validate());
    r.new_answer = r.old_answer;
    CHECK_THROWS_AS(r.validate(), Error);
    r = request(rng);
    r.rephrase_pool.clear();
    try {
        r.validate();
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
    }
}

TEST_CASE("anchors") {
    const BackboneModel m(small_config(3));
    Rng rng(2);
    EditRequest req = request(rng);
    EditorConfig cfg;
    const AnchorPair a = build_anchors(req, m, cfg);
    CHECK(a.positive.prompt == req.rephrase_pool.front());
    CHECK(a.positive.image == req.image);
    CHECK(a.negative.image == ImageFeature::black(8));
    CHECK(a.negative.prompt == req.prompt);
    CHECK(a.d_pos == doctest::Approx(codebook::distance(a.positive_key, a.edit_key, cfg.distance)));
    CHECK(a.edit_key == edit_key(m, req.image, req.prompt));

    cfg.negative = NegativeAnchor::white;
    CHECK(build_anchors(req, m, cfg).negative.image == ImageFeature::white(8));
    cfg.negative = NegativeAnchor::random_pair;
    CHECK(build_anchors(req, m, cfg).negative.prompt == TokenSequence{14, 15});
    req.unrelated.reset();
    CHECK_THROWS_AS(build_anchors(req, m, cfg), Error);

    CHECK(negative_from_string("random") == NegativeAnchor::random_pair);
    CHECK(to_string(NegativeAnchor::random_pair) == "random");
    CHECK_THROWS_AS(negative_from_string("grey"), Error);
}

TEST_CASE("fine-tuning reaches the new answer and leaves the model alone") {
    const BackboneModel m(small_config(4));
    const auto before = m.weights_hash();
    Rng rng(3);
    const EditRequest req = request(rng);
    EditorConfig cfg;
    // an untrained head keeps logits flat, so 0.01 is out of reach here
    cfg.stop_loss = 1.5;
    const FinetuneResult r = finetune_transformation(req, m, m.editable_weights(), cfg);
    CHECK(r.converged);
    CHECK(r.iterations < cfg.max_iters);
    CHECK(r.final_loss < cfg.stop_loss);
    CHECK(m.greedy_decode(req.image, req.prompt, &r.weights) == req.new_answer);
    CHECK(m.weights_hash() == before);

    cfg.stop_loss = 0.01;
    const FinetuneResult full = finetune_transformation(req, m, m.editable_weights(), cfg);
    CHECK_FALSE(full.converged);
    CHECK(full.iterations == cfg.max_iters);
    CHECK(full.final_loss < r.final_loss);

    cfg.max_iters = 1;
    const FinetuneResult short_run = finetune_transformation(req, m, m.editable_weights(), cfg);
    CHECK_FALSE(short_run.converged);
    CHECK(short_run.iterations == 1);
}

TEST_CASE("apply_edit stores one entry with the interpolated radius") {
    const BackboneModel m(small_config(5));
    Rng rng(4);
    const EditRequest req = request(rng);
    EditorConfig cfg;
    Codebook cb(cfg.distance, cfg.alpha);
    const EditOutcome o = apply_edit(req, m, cb, cfg);
    REQUIRE(cb.size() == 1);
    const auto& e = cb.entries().front();
    CHECK(o.entry_id == e.id);
    CHECK(o.action == codebook::InsertAction::added);
    REQUIRE(o.d_pos);
    CHECK(o.radius == doctest::Approx(0.2 * *o.d_pos + 0.8 * *o.d_neg));
    CHECK(e.radius == o.radius);
    CHECK(e.key == edit_key(m, req.image, req.prompt));
    CHECK(e.meta.case_id == "t");
    CHECK(codebook::predict(m, cb, req.image, req.prompt) == req.new_answer);
    // black image with the same prompt is the negative anchor; with alpha < 1 it sits outside
    CHECK(codebook::predict(m, cb, ImageFeature::black(8), req.prompt) ==
          m.greedy_decode(ImageFeature::black(8), req.prompt, nullptr));

    SUBCASE("same edit again replaces") {
        const EditOutcome again = apply_edit(req, m, cb, cfg);
        CHECK(again.action == codebook::InsertAction::replaced);
        CHECK(again.replaced_id == o.entry_id);
        CHECK(cb.size() == 1);
    }
    SUBCASE("mismatched codebook") {
        Codebook other(cfg.distance, 0.5);
        CHECK_THROWS_AS(apply_edit(req, m, other, cfg), Error);
        Codebook cosine(DistanceKind::cosine, cfg.alpha);
        CHECK_THROWS_AS(apply_edit(req, m, cosine, cfg), Error);
    }
}

TEST_CASE("baselines") {
    const BackboneModel m(small_config(6));
    Rng rng(5);
    const EditRequest req = request(rng);
    EditorConfig cfg;

    Codebook cb(cfg.distance, cfg.alpha);
    const EditOutcome o = fixed_radius_edit_baseline(req, m, cb, cfg);
    CHECK(o.radius == cfg.fixed_radius);
    CHECK_FALSE(o.d_pos);
    CHECK(codebook::predict(m, cb, req.image, req.prompt) == req.new_answer);

    const FtEdit ft = ft_edit_baseline(req, m, cfg);
    CHECK(ft.model.greedy_decode(req.image, req.prompt, nullptr) == req.new_answer);
    CHECK(ft.model.editable_weights() == ft.result.weights);
    CHECK(m.editable_weights() != ft.result.weights);
}

TEST_CASE("editor config and edit log serialization") {
    EditorConfig c;
    c.alpha = 0.4;
    c.negative = NegativeAnchor::white;
    const nlohmann::json j = c;
    const auto back = j.get<EditorConfig>();
    CHECK(back.alpha == 0.4);
    CHECK(back.negative == NegativeAnchor::white);
    nlohmann::json extra = j;
    extra["momentum"] = 0.9;
    CHECK_THROWS_AS(extra.get<EditorConfig>(), Error);
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);

    EditOutcome a;
    a.case_id = "case-0";
    a.entry_id = 3;
    a.action = codebook::InsertAction::warm_start;
    a.warm_start_source = 1;
    a.iterations = 17;
    a.final_loss = 0.004;
    a.converged = true;
    a.d_pos = 1.25;
    a.d_neg = 7.5;
    a.radius = 6.25;
    EditOutcome b;
    b.case_id = "case-1";
    const std::vector<EditOutcome> log{a, b};
    const auto text = edit_log_jsonl(log);
    const auto parsed = edit_log_from_jsonl(text);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].warm_start_source == 1u);
    CHECK(parsed[0].d_neg == 7.5);
    CHECK_FALSE(parsed[1].d_pos);
    CHECK(edit_log_jsonl(parsed) == text);
    try {
        (void)edit_log_from_jsonl(text + "{\"case_id\": 3}\n");
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::format);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}
