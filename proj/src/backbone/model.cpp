#include "balancedit/backbone/model.hpp"

#include <algorithm>
#include <cmath>

#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/rng.hpp"

namespace balancedit::backbone {

using numerics::Parameter;
using numerics::Tensor;

namespace {

Tensor random_normal(numerics::Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        v = stddev * rng.normal();
    }
    return t;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
    Tensor out({x.rows(), width});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            out(r, c) = x(r, start + c);
        }
    }
    return out;
}

void add_into_cols(Tensor& dst, const Tensor& src, std::size_t start) {
    for (std::size_t r = 0; r < src.rows(); ++r) {
        for (std::size_t c = 0; c < src.cols(); ++c) {
            dst(r, start + c) += src(r, c);
        }
    }
}

Tensor transpose(const Tensor& x) {
    Tensor out({x.cols(), x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(c, r) = x(r, c);
        }
    }
    return out;
}

void scale_inplace(Tensor& x, double s) {
    for (double& v : x.data()) {
        v *= s;
    }
}

std::size_t argmax_row(const Tensor& x, std::size_t r) {
    auto row = x.row(r);
    return static_cast<std::size_t>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
}

}  // namespace

BackboneModel::BackboneModel(ModelConfig config) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(config_.seed, 0x6d6f64656cULL));
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const std::size_t hidden = static_cast<std::size_t>(config_.mlp_hidden());
    const std::size_t vocab = static_cast<std::size_t>(config_.vocab_size);
    const std::size_t prefix = static_cast<std::size_t>(config_.n_img_prefix_tokens);
    const double std_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double std_resid = std_d / std::sqrt(2.0 * config_.n_layers);

    params_.emplace_back("tok_emb", random_normal({vocab, d}, 1.0, rng));
    params_.emplace_back("pos_emb", random_normal({static_cast<std::size_t>(config_.max_seq_len), d}, 0.1, rng));
    params_.emplace_back("img_proj.weight",
                         random_normal({static_cast<std::size_t>(config_.d_img), prefix * d},
                                       0.5 / std::sqrt(static_cast<double>(config_.d_img)), rng));
    params_.emplace_back("img_proj.bias", Tensor({prefix * d}));
    for (int b = 0; b < config_.n_layers; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        params_.emplace_back(p + "ln1.gain", Tensor({d}, 1.0));
        params_.emplace_back(p + "ln1.shift", Tensor({d}));
        params_.emplace_back(p + "attn.q", random_normal({d, d}, std_d, rng));
        params_.emplace_back(p + "attn.k", random_normal({d, d}, std_d, rng));
        params_.emplace_back(p + "attn.v", random_normal({d, d}, std_d, rng));
        params_.emplace_back(p + "attn.o", random_normal({d, d}, std_resid, rng));
        params_.emplace_back(p + "ln2.gain", Tensor({d}, 1.0));
        params_.emplace_back(p + "ln2.shift", Tensor({d}));
        params_.emplace_back(p + "mlp.up.weight", random_normal({d, hidden}, std_d, rng));
        params_.emplace_back(p + "mlp.up.bias", Tensor({hidden}));
        params_.emplace_back(p + "mlp.down.weight",
                             random_normal({hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden) * 2.0 *
                                                                        config_.n_layers),
                                           rng));
        params_.emplace_back(p + "mlp.down.bias", Tensor({d}));
    }
    params_.emplace_back("ln_f.gain", Tensor({d}, 1.0));
    params_.emplace_back("ln_f.shift", Tensor({d}));
    params_.emplace_back("head.weight", random_normal({d, vocab}, std_d, rng));
}

void BackboneModel::set_editable_layer(int layer) {
    ModelConfig next = config_;
    next.editable_layer = layer;
    next.validate();
    config_ = next;
}

Parameter& BackboneModel::parameter(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    fail(ErrorKind::not_found, "no parameter named '" + name + "'");
}

UpProjection BackboneModel::editable_weights() const {
    const int l = editable_layer();
    return {w(block_index(l, kUpW)), w(block_index(l, kUpB))};
}

void BackboneModel::set_editable_weights(const UpProjection& weights) {
    check_hook_shape(weights);
    const int l = editable_layer();
    params_[block_index(l, kUpW)].value = weights.weight;
    params_[block_index(l, kUpB)].value = weights.bias;
}

void BackboneModel::check_hook_shape(const UpProjection& hook) const {
    const int l = editable_layer();
    if (!hook.weight.same_shape(w(block_index(l, kUpW))) || !hook.bias.same_shape(w(block_index(l, kUpB)))) {
        fail(ErrorKind::shape, "hook weights " + numerics::shape_string(hook.weight.shape()) + " + " +
                                   numerics::shape_string(hook.bias.shape()) + " do not match editable layer " +
                                   numerics::shape_string(w(block_index(l, kUpW)).shape()) + " + " +
                                   numerics::shape_string(w(block_index(l, kUpB)).shape()));
    }
}

TokenSequence BackboneModel::compose_text(const TokenSequence& prompt, const TokenSequence& answer) {
    TokenSequence text;
    text.reserve(1 + prompt.size() + answer.size());
    text.push_back(kBosToken);
    text.insert(text.end(), prompt.begin(), prompt.end());
    text.insert(text.end(), answer.begin(), answer.end());
    return text;
}

std::size_t BackboneModel::prefix_length(const TokenSequence& prompt) const {
    return static_cast<std::size_t>(config_.n_img_prefix_tokens) + 1 + prompt.size();
}

Tensor BackboneModel::embed_inputs(const ImageFeature& image, const TokenSequence& text) const {
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const std::size_t prefix = static_cast<std::size_t>(config_.n_img_prefix_tokens);
    if (image.dim() != static_cast<std::size_t>(config_.d_img)) {
        fail(ErrorKind::shape, "image feature has " + std::to_string(image.dim()) + " values, model expects " +
                                   std::to_string(config_.d_img));
    }
    if (text.size() > static_cast<std::size_t>(config_.max_text_len())) {
        fail(ErrorKind::length, "text of " + std::to_string(text.size()) + " tokens exceeds limit " +
                                    std::to_string(config_.max_text_len()));
    }
    for (TokenId id : text) {
        if (id < 0 || id >= config_.vocab_size) {
            fail(ErrorKind::length, "token id " + std::to_string(id) + " outside vocabulary");
        }
    }
    const Tensor& img_w = w(kImgW);
    const Tensor& img_b = w(kImgB);
    const Tensor& pos = w(kPosEmb);
    Tensor x({prefix + text.size(), d});
    for (std::size_t slot = 0; slot < prefix; ++slot) {
        for (std::size_t c = 0; c < d; ++c) {
            const std::size_t col = slot * d + c;
            double s = img_b[col];
            for (std::size_t k = 0; k < image.dim(); ++k) {
                s += image.values[k] * img_w(k, col);
            }
            x(slot, c) = s + pos(slot, c);
        }
    }
    const Tensor tokens = numerics::embedding_gather(w(kTokEmb), text);
    for (std::size_t r = 0; r < text.size(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            x(prefix + r, c) = tokens(r, c) + pos(prefix + r, c);
        }
    }
    return x;
}

ForwardTrace BackboneModel::forward_trace(const ImageFeature& image, const TokenSequence& text,
                                          const UpProjection* hook) const {
    if (hook) {
        check_hook_shape(*hook);
    }
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const std::size_t dh = static_cast<std::size_t>(config_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int hooked_block = editable_layer();

    ForwardTrace tr;
    tr.image = image;
    tr.text = text;
    tr.hook = hook;
    Tensor x = embed_inputs(image, text);
    tr.output.hidden.layers.push_back(x);
    tr.blocks.resize(static_cast<std::size_t>(config_.n_layers));
    for (int b = 0; b < config_.n_layers; ++b) {
        BlockTrace& bt = tr.blocks[static_cast<std::size_t>(b)];
        bt.x_in = x;
        bt.h1 = numerics::layernorm(x, w(block_index(b, kLn1Gain)), w(block_index(b, kLn1Shift)), &bt.ln1);
        bt.q = numerics::matmul(bt.h1, w(block_index(b, kWq)));
        bt.k = numerics::matmul(bt.h1, w(block_index(b, kWk)));
        bt.v = numerics::matmul(bt.h1, w(block_index(b, kWv)));
        bt.attn_out = Tensor({x.rows(), d});
        bt.attn.clear();
        for (int h = 0; h < config_.n_heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * dh;
            const Tensor qh = slice_cols(bt.q, off, dh);
            const Tensor kh = slice_cols(bt.k, off, dh);
            const Tensor vh = slice_cols(bt.v, off, dh);
            Tensor scores = numerics::matmul_nt(qh, kh);
            scale_inplace(scores, scale);
            Tensor probs = numerics::softmax_rows(scores, /*causal=*/true);
            add_into_cols(bt.attn_out, numerics::matmul(probs, vh), off);
            bt.attn.push_back(std::move(probs));
        }
        numerics::add_inplace(x, numerics::matmul(bt.attn_out, w(block_index(b, kWo))));
        bt.h2 = numerics::layernorm(x, w(block_index(b, kLn2Gain)), w(block_index(b, kLn2Shift)), &bt.ln2);
        const bool hooked = hook && b == hooked_block;
        const Tensor& up_w = hooked ? hook->weight : w(block_index(b, kUpW));
        const Tensor& up_b = hooked ? hook->bias : w(block_index(b, kUpB));
        bt.up_pre = numerics::matmul(bt.h2, up_w);
        numerics::add_row_bias(bt.up_pre, up_b);
        bt.up_act = numerics::gelu(bt.up_pre);
        Tensor down = numerics::matmul(bt.up_act, w(block_index(b, kDownW)));
        numerics::add_row_bias(down, w(block_index(b, kDownB)));
        numerics::add_inplace(x, down);
        tr.output.hidden.layers.push_back(x);
    }
    const std::size_t lnf = ln_f_gain_index();
    tr.h_f = numerics::layernorm(x, w(lnf), w(lnf + 1), &tr.ln_f);
    tr.output.logits = numerics::matmul(tr.h_f, w(lnf + 2));
    return tr;
}

ForwardOutput BackboneModel::forward_with_hook(const ImageFeature& image, const TokenSequence& text,
                                               const UpProjection* hook) const {
    return std::move(forward_trace(image, text, hook).output);
}

Tensor BackboneModel::prefix_states(const ImageFeature& image, const TokenSequence& prompt, int block) const {
    if (block < 0 || block >= config_.n_layers) {
        fail(ErrorKind::config, "block " + std::to_string(block) + " outside model");
    }
    // Causal attention: prefix rows never see later tokens, so a prefix-only pass yields
    // exactly the rows any longer pass would have.
    const ForwardTrace tr = forward_trace(image, compose_text(prompt), nullptr);
    return tr.output.hidden.entering_block(block);
}

TokenSequence BackboneModel::greedy_decode(const ImageFeature& image, const TokenSequence& prompt,
                                           const UpProjection* hook, int max_answer_len) const {
    TokenSequence answer;
    TokenSequence text = compose_text(prompt);
    for (int step = 0; step < max_answer_len; ++step) {
        if (text.size() >= static_cast<std::size_t>(config_.max_text_len())) {
            break;
        }
        const ForwardOutput out = forward_with_hook(image, text, hook);
        const auto next = static_cast<TokenId>(argmax_row(out.logits, out.logits.rows() - 1));
        if (next == kEosToken) {
            break;
        }
        answer.push_back(next);
        text.push_back(next);
    }
    return answer;
}

AnswerLoss BackboneModel::answer_loss_traced(const ImageFeature& image, const TokenSequence& prompt,
                                             const TokenSequence& answer, const UpProjection* hook) const {
    if (answer.empty()) {
        fail(ErrorKind::empty_loss, "answer loss needs a non-empty answer");
    }
    AnswerLoss result;
    result.trace = forward_trace(image, compose_text(prompt, answer), hook);
    const std::size_t rows = result.trace.output.logits.rows();
    std::vector<std::int32_t> targets(rows, kPadToken);
    std::vector<bool> mask(rows, false);
    const std::size_t first = prefix_length(prompt) - 1;
    for (std::size_t j = 0; j <= answer.size(); ++j) {
        targets[first + j] = j < answer.size() ? answer[j] : kEosToken;
        mask[first + j] = true;
    }
    auto ce = numerics::softmax_cross_entropy(result.trace.output.logits, targets, mask);
    result.loss = ce.loss;
    result.dlogits = std::move(ce.dlogits);
    return result;
}

double BackboneModel::answer_loss(const ImageFeature& image, const TokenSequence& prompt,
                                  const TokenSequence& answer, const UpProjection* hook) const {
    return answer_loss_traced(image, prompt, answer, hook).loss;
}

void BackboneModel::backward(const ForwardTrace& trace, const Tensor& dlogits) {
    std::vector<Tensor*> grads;
    grads.reserve(params_.size());
    for (auto& p : params_) {
        grads.push_back(&p.grad);
    }
    backward_impl(trace, dlogits, grads, nullptr, 0);
}

void BackboneModel::backward_hook(const ForwardTrace& trace, const Tensor& dlogits, UpProjection& hook_grad) const {
    if (!trace.hook) {
        fail(ErrorKind::shape, "backward_hook needs a trace recorded with a hook");
    }
    backward_impl(trace, dlogits, {}, &hook_grad, editable_layer());
}

void BackboneModel::backward_impl(const ForwardTrace& tr, const Tensor& dlogits, std::span<Tensor* const> grads,
                                  UpProjection* hook_grad, int stop_block) const {
    auto grad = [&](std::size_t i) -> Tensor* { return grads.empty() ? nullptr : grads[i]; };
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const std::size_t dh = static_cast<std::size_t>(config_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int hooked_block = editable_layer();
    const std::size_t rows = tr.h_f.rows();

    const std::size_t lnf = ln_f_gain_index();
    Tensor dh_f({rows, d});
    numerics::matmul_backward(tr.h_f, w(lnf + 2), dlogits, &dh_f, grad(lnf + 2));
    Tensor dx({rows, d});
    numerics::layernorm_backward(tr.ln_f, w(lnf), dh_f, dx, grad(lnf), grad(lnf + 1));

    for (int b = config_.n_layers - 1; b >= stop_block; --b) {
        const BlockTrace& bt = tr.blocks[static_cast<std::size_t>(b)];
        // x_out = x_mid + down(gelu(up(ln2(x_mid))))
        Tensor d_act(bt.up_act.shape());
        numerics::matmul_backward(bt.up_act, w(block_index(b, kDownW)), dx, &d_act, grad(block_index(b, kDownW)));
        if (Tensor* g = grad(block_index(b, kDownB))) {
            numerics::row_bias_backward(dx, *g);
        }
        Tensor d_pre(bt.up_pre.shape());
        numerics::gelu_backward(bt.up_pre, d_act, d_pre);

        const bool hooked = tr.hook && b == hooked_block;
        const Tensor& up_w = hooked ? tr.hook->weight : w(block_index(b, kUpW));
        Tensor* g_up_w = hooked ? (hook_grad ? &hook_grad->weight : nullptr) : grad(block_index(b, kUpW));
        Tensor* g_up_b = hooked ? (hook_grad ? &hook_grad->bias : nullptr) : grad(block_index(b, kUpB));
        const bool last = b == stop_block && grads.empty();
        Tensor d_h2(bt.h2.shape());
        numerics::matmul_backward(bt.h2, up_w, d_pre, last ? nullptr : &d_h2, g_up_w);
        if (g_up_b) {
            numerics::row_bias_backward(d_pre, *g_up_b);
        }
        if (last) {
            return;
        }
        Tensor dx_mid = dx;
        numerics::layernorm_backward(bt.ln2, w(block_index(b, kLn2Gain)), d_h2, dx_mid, grad(block_index(b, kLn2Gain)),
                                     grad(block_index(b, kLn2Shift)));

        // x_mid = x_in + attn(ln1(x_in)) · Wo
        Tensor d_attn_out({rows, d});
        numerics::matmul_backward(bt.attn_out, w(block_index(b, kWo)), dx_mid, &d_attn_out, grad(block_index(b, kWo)));
        Tensor dq({rows, d}), dk({rows, d}), dv({rows, d});
        for (int h = 0; h < config_.n_heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * dh;
            const Tensor qh = slice_cols(bt.q, off, dh);
            const Tensor kh = slice_cols(bt.k, off, dh);
            const Tensor vh = slice_cols(bt.v, off, dh);
            const Tensor& probs = bt.attn[static_cast<std::size_t>(h)];
            const Tensor d_out_h = slice_cols(d_attn_out, off, dh);
            Tensor d_probs(probs.shape());
            Tensor dvh(vh.shape());
            numerics::matmul_backward(probs, vh, d_out_h, &d_probs, &dvh);
            Tensor d_scores(probs.shape());
            numerics::softmax_rows_backward(probs, d_probs, d_scores);
            scale_inplace(d_scores, scale);
            add_into_cols(dq, numerics::matmul(d_scores, kh), off);
            add_into_cols(dk, numerics::matmul(transpose(d_scores), qh), off);
            add_into_cols(dv, dvh, off);
        }
        Tensor d_h1({rows, d});
        numerics::matmul_backward(bt.h1, w(block_index(b, kWq)), dq, &d_h1, grad(block_index(b, kWq)));
        numerics::matmul_backward(bt.h1, w(block_index(b, kWk)), dk, &d_h1, grad(block_index(b, kWk)));
        numerics::matmul_backward(bt.h1, w(block_index(b, kWv)), dv, &d_h1, grad(block_index(b, kWv)));
        dx = dx_mid;
        numerics::layernorm_backward(bt.ln1, w(block_index(b, kLn1Gain)), d_h1, dx, grad(block_index(b, kLn1Gain)),
                                     grad(block_index(b, kLn1Shift)));
    }
    if (grads.empty()) {
        return;
    }

    // Embeddings.
    const std::size_t prefix = static_cast<std::size_t>(config_.n_img_prefix_tokens);
    Tensor* g_pos = grad(kPosEmb);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            (*g_pos)(r, c) += dx(r, c);
        }
    }
    Tensor* g_img_w = grad(kImgW);
    Tensor* g_img_b = grad(kImgB);
    for (std::size_t slot = 0; slot < prefix; ++slot) {
        for (std::size_t c = 0; c < d; ++c) {
            const std::size_t col = slot * d + c;
            const double g = dx(slot, c);
            (*g_img_b)[col] += g;
            for (std::size_t k = 0; k < tr.image.dim(); ++k) {
                (*g_img_w)(k, col) += tr.image.values[k] * g;
            }
        }
    }
    Tensor d_tokens({tr.text.size(), d});
    for (std::size_t r = 0; r < tr.text.size(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            d_tokens(r, c) = dx(prefix + r, c);
        }
    }
    numerics::embedding_gather_backward(tr.text, d_tokens, *grad(kTokEmb));
}

std::uint64_t BackboneModel::weights_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) {
        h = fnv1a64(p.value.data(), h);
    }
    return h;
}

void BackboneModel::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

}  // namespace balancedit::backbone
