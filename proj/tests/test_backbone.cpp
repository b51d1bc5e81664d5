#include <vector>

#include "doctest.h"
#include "balancedit/backbone/checkpoint.hpp"
#include "balancedit/backbone/pretrain.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"
#include "balancedit/numerics/grad_check.hpp"
#include "balancedit/worldgen/world.hpp"

using namespace balancedit;
using namespace balancedit::backbone;

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

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.n_heads = 5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = ModelConfig{};
    c.editable_layer = 4;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(ModelConfig{}.resolved_editable_layer() == 3);
}

TEST_CASE("forward shapes and input errors") {
    const BackboneModel m(small_config(1));
    Rng rng(3);
    const auto img = random_image(8, rng);
    const TokenSequence text = BackboneModel::compose_text({5, 6}, {7});
    CHECK(text == TokenSequence{kBosToken, 5, 6, 7});
    const auto out = m.forward_with_hook(img, text, nullptr);
    CHECK(out.logits.rows() == 2 + text.size());
    CHECK(out.logits.cols() == 24);
    CHECK(out.hidden.layers.size() == 3);
    CHECK(m.prefix_length({5, 6}) == 2 + 1 + 2);

    CHECK_THROWS_AS(m.forward_with_hook(ImageFeature{{1.0, 2.0}}, text, nullptr), Error);
    CHECK_THROWS_AS(m.forward_with_hook(img, TokenSequence{kBosToken, 99}, nullptr), Error);
    CHECK_THROWS_AS(m.forward_with_hook(img, TokenSequence(20, 3), nullptr), Error);
    CHECK_THROWS_AS(m.answer_loss(img, {5}, {}, nullptr), Error);
}

TEST_CASE("hooking the layer's own weights changes nothing") {
    const BackboneModel m(small_config(2));
    Rng rng(4);
    const auto img = random_image(8, rng);
    const TokenSequence text{kBosToken, 4, 9, 11};
    const UpProjection same = m.editable_weights();
    CHECK(m.forward_with_hook(img, text, &same).logits == m.forward_with_hook(img, text, nullptr).logits);
    CHECK(m.greedy_decode(img, {4, 9}, &same) == m.greedy_decode(img, {4, 9}, nullptr));

    UpProjection bad = same;
    bad.bias = numerics::Tensor(numerics::Shape{3});
    CHECK_THROWS_AS(m.check_hook_shape(bad), Error);
}

TEST_CASE("a zeroed hook changes the logits") {
    const BackboneModel m(small_config(12));
    Rng rng(13);
    const auto img = random_image(8, rng);
    const TokenSequence text{kBosToken, 4, 9};
    UpProjection zero = m.editable_weights();
    zero.weight.fill(0.0);
    zero.bias.fill(0.0);
    CHECK(m.forward_with_hook(img, text, &zero).logits != m.forward_with_hook(img, text, nullptr).logits);
}

TEST_CASE("the image only reaches the prefix rows of the input") {
    const BackboneModel m(small_config(14));
    Rng rng(15);
    const TokenSequence text{kBosToken, 4, 9, 11};
    const auto a = m.embed_inputs(random_image(8, rng), text);
    const auto b = m.embed_inputs(random_image(8, rng), text);
    REQUIRE(a.rows() == 2 + text.size());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        bool same = true;
        for (std::size_t c = 0; c < a.cols(); ++c) {
            same = same && a(r, c) == b(r, c);
        }
        INFO("row ", r);
        CHECK(same == (r >= 2));
    }
}

TEST_CASE("prefix states ignore the hook and later tokens") {
    const BackboneModel m(small_config(5));
    Rng rng(6);
    const auto img = random_image(8, rng);
    const TokenSequence prompt{4, 9};
    const auto s = m.prefix_states(img, prompt, m.editable_layer());
    CHECK(s.rows() == m.prefix_length(prompt));

    // causal: appending an answer does not move the prefix rows
    UpProjection other = m.editable_weights();
    for (double& w : other.weight.data()) {
        w += 0.5;
    }
    const auto full = m.forward_with_hook(img, BackboneModel::compose_text(prompt, {13}), &other);
    const auto& entering = full.hidden.entering_block(m.editable_layer());
    for (std::size_t r = 0; r < s.rows(); ++r) {
        for (std::size_t c = 0; c < s.cols(); ++c) {
            CHECK(entering(r, c) == doctest::Approx(s(r, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("full-model backward matches finite differences") {
    BackboneModel m(small_config(8));
    Rng rng(9);
    const auto img = random_image(8, rng);
    const TokenSequence prompt{4, 9, 10};
    const TokenSequence answer{12, 13};
    std::vector<numerics::Parameter*> ps;
    for (auto& p : m.parameters()) {
        ps.push_back(&p);
    }
    const numerics::DifferentiableFn f = [&](bool acc) {
        if (!acc) {
            return m.answer_loss(img, prompt, answer, nullptr);
        }
        AnswerLoss al = m.answer_loss_traced(img, prompt, answer, nullptr);
        m.backward(al.trace, al.dlogits);
        return al.loss;
    };
    m.zero_grad();
    const auto rep = numerics::grad_check(f, ps, 1e-5, 1e-6);
    INFO(rep.worst_parameter, " ", rep.worst_index, " a=", rep.analytic, " n=", rep.numeric);
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round trip is exact") {
    BackboneModel m(small_config(11));
    m.set_editable_layer(0);
    const auto bytes = serialize_checkpoint(m);
    const BackboneModel back = deserialize_checkpoint(bytes);
    CHECK(back.config().seed == 11);
    CHECK(back.editable_layer() == 0);
    CHECK(back.weights_hash() == m.weights_hash());
    CHECK(serialize_checkpoint(back) == bytes);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        CHECK(back.parameters()[i].value == m.parameters()[i].value);
    }

    SUBCASE("corruption is a format error") {
        auto cut = bytes;
        cut.resize(cut.size() - 8);
        try {
            (void)deserialize_checkpoint(cut);
            FAIL("expected a throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::format);
        }
        std::vector<std::uint8_t> junk{'{', '}', '\n'};
        CHECK_THROWS_AS(deserialize_checkpoint(junk), Error);
    }
}

TEST_CASE("same seed, same initial weights") {
    CHECK(BackboneModel(small_config(3)).weights_hash() == BackboneModel(small_config(3)).weights_hash());
    CHECK(BackboneModel(small_config(3)).weights_hash() != BackboneModel(small_config(4)).weights_hash());
}

TEST_CASE("pretrain options are checked") {
    PretrainOptions po;
    CHECK_NOTHROW(po.validate());
    po.final_lr_fraction = 1.5;
    CHECK_THROWS_AS(po.validate(), Error);
    po = PretrainOptions{};
    po.lr = 0.0;
    CHECK_THROWS_AS(po.validate(), Error);
    po = PretrainOptions{};
    po.batch_size = 0;
    CHECK_THROWS_AS(po.validate(), Error);
}

TEST_CASE("untrained model is at chance") {
    const auto world = worldgen::World::generate(worldgen::WorldConfig{});
    BackboneModel m(ModelConfig{});
    const auto held = world.heldout_set(2);
    PretrainOptions po;
    po.epochs = 0;
    const auto log = pretrain(m, [&](int e) { return world.pretraining_set(e); }, held, po);
    CHECK(log.epoch_loss.empty());
    CHECK_FALSE(log.reached_target);
    // first answer token
    std::size_t hits = 0;
    for (const auto& ex : held) {
        const auto out = m.greedy_decode(ex.image, ex.prompt, nullptr, 1);
        hits += !out.empty() && out[0] == ex.answer[0];
    }
    CHECK(static_cast<double>(hits) / held.size() <= 2.0 / m.config().vocab_size);
}

TEST_CASE("pretraining lowers the loss") {
    const auto world = worldgen::World::generate(worldgen::WorldConfig{});
    BackboneModel m(ModelConfig{});
    PretrainOptions po;
    po.epochs = 2;
    const auto train = world.sample_dataset(2, 5);
    const auto log = pretrain(m, train, world.heldout_set(1), po);
    REQUIRE(log.epoch_loss.size() == 2);
    CHECK(log.epoch_loss[1] < log.epoch_loss[0]);
    CHECK_THROWS_AS(pretrain(m, std::span<const TrainingExample>{}, train, po), Error);
}
