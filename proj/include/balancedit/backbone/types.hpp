#pragma once

#include <cstdint>
#include <vector>

#include "balancedit/numerics/tensor.hpp"

namespace balancedit::backbone {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kBosToken = 1;
inline constexpr TokenId kEosToken = 2;
inline constexpr TokenId kFirstFreeToken = 3;

// Toy stand-in for an encoded image.
struct ImageFeature {
    std::vector<double> values;

    static ImageFeature black(std::size_t dim) { return {std::vector<double>(dim, 0.0)}; }
    static ImageFeature white(std::size_t dim) { return {std::vector<double>(dim, 1.0)}; }

    std::size_t dim() const { return values.size(); }
    friend bool operator==(const ImageFeature&, const ImageFeature&) = default;
};

// Weights of the editable sub-layer (MLP up-projection): d_model x mlp_hidden plus bias.
struct UpProjection {
    numerics::Tensor weight;
    numerics::Tensor bias;

    friend bool operator==(const UpProjection&, const UpProjection&) = default;
};

// layers[0] is the embedding output; layers[j + 1] is the output of block j, so the
// input to block l ("layer l-1" states) is layers[l].
struct HiddenStates {
    std::vector<numerics::Tensor> layers;

    const numerics::Tensor& entering_block(int block) const { return layers.at(static_cast<std::size_t>(block)); }
};

struct ForwardOutput {
    numerics::Tensor logits;
    HiddenStates hidden;
};

}  // namespace balancedit::backbone
