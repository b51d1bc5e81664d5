#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "balancedit/backbone/config.hpp"
#include "balancedit/backbone/types.hpp"
#include "balancedit/numerics/ops.hpp"
#include "balancedit/numerics/tensor.hpp"

namespace balancedit::backbone {

// Activations kept from a forward pass for the hand-written backward.
struct BlockTrace {
    numerics::Tensor x_in;
    numerics::LayerNormCache ln1;
    numerics::Tensor h1;
    numerics::Tensor q, k, v;
    std::vector<numerics::Tensor> attn;  // per head, T x T
    numerics::Tensor attn_out;           // heads concatenated, T x d
    numerics::LayerNormCache ln2;
    numerics::Tensor h2;
    numerics::Tensor up_pre;
    numerics::Tensor up_act;
};

struct ForwardTrace {
    ImageFeature image;
    TokenSequence text;
    const UpProjection* hook = nullptr;
    std::vector<BlockTrace> blocks;
    numerics::LayerNormCache ln_f;
    numerics::Tensor h_f;
    ForwardOutput output;
};

struct AnswerLoss {
    double loss = 0.0;
    ForwardTrace trace;
    numerics::Tensor dlogits;
};

// Decoder-only toy VLM: n_img_prefix_tokens projected image slots, then [BOS] + text.
// Pre-LN blocks (causal multi-head attention, GELU MLP), final LayerNorm, untied head.
class BackboneModel {
public:
    explicit BackboneModel(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    int editable_layer() const { return config_.resolved_editable_layer(); }
    void set_editable_layer(int layer);

    std::vector<numerics::Parameter>& parameters() { return params_; }
    const std::vector<numerics::Parameter>& parameters() const { return params_; }
    numerics::Parameter& parameter(const std::string& name);

    // The weights the codebook copies and the FT baseline overwrites.
    UpProjection editable_weights() const;
    void set_editable_weights(const UpProjection& weights);
    void check_hook_shape(const UpProjection& hook) const;

    // [BOS] + prompt + answer
    static TokenSequence compose_text(const TokenSequence& prompt, const TokenSequence& answer = {});
    // Rows of the prompt prefix (image slots, BOS, prompt tokens).
    std::size_t prefix_length(const TokenSequence& prompt) const;

    numerics::Tensor embed_inputs(const ImageFeature& image, const TokenSequence& text) const;

    ForwardOutput forward_with_hook(const ImageFeature& image, const TokenSequence& text,
                                    const UpProjection* hook) const;
    ForwardTrace forward_trace(const ImageFeature& image, const TokenSequence& text,
                               const UpProjection* hook) const;

    // States entering block `block` for the prompt prefix only; independent of any hook.
    numerics::Tensor prefix_states(const ImageFeature& image, const TokenSequence& prompt, int block) const;

    // Routing is fixed by the caller: `hook` is used for every decoding step.
    TokenSequence greedy_decode(const ImageFeature& image, const TokenSequence& prompt,
                                const UpProjection* hook, int max_answer_len = 3) const;

    // Teacher-forced cross-entropy over the answer tokens and the closing EOS.
    double answer_loss(const ImageFeature& image, const TokenSequence& prompt, const TokenSequence& answer,
                       const UpProjection* hook) const;
    AnswerLoss answer_loss_traced(const ImageFeature& image, const TokenSequence& prompt,
                                  const TokenSequence& answer, const UpProjection* hook) const;

    // Accumulates into every Parameter::grad.
    void backward(const ForwardTrace& trace, const numerics::Tensor& dlogits);
    // Accumulates only into `hook_grad`; stops at the editable block.
    void backward_hook(const ForwardTrace& trace, const numerics::Tensor& dlogits, UpProjection& hook_grad) const;

    std::uint64_t weights_hash() const;

    void zero_grad();

private:
    enum Slot : std::size_t {
        kLn1Gain,
        kLn1Shift,
        kWq,
        kWk,
        kWv,
        kWo,
        kLn2Gain,
        kLn2Shift,
        kUpW,
        kUpB,
        kDownW,
        kDownB,
        kSlotsPerBlock
    };
    static constexpr std::size_t kTokEmb = 0, kPosEmb = 1, kImgW = 2, kImgB = 3, kFirstBlock = 4;

    std::size_t block_index(int block, Slot slot) const {
        return kFirstBlock + static_cast<std::size_t>(block) * kSlotsPerBlock + slot;
    }
    std::size_t ln_f_gain_index() const { return kFirstBlock + static_cast<std::size_t>(config_.n_layers) * kSlotsPerBlock; }
    const numerics::Tensor& w(std::size_t i) const { return params_[i].value; }

    void backward_impl(const ForwardTrace& trace, const numerics::Tensor& dlogits,
                       std::span<numerics::Tensor* const> grads, UpProjection* hook_grad, int stop_block) const;

    ModelConfig config_;
    std::vector<numerics::Parameter> params_;
};

}  // namespace balancedit::backbone
