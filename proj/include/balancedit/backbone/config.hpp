#pragma once

#include <cstdint>

#include "json.hpp"

namespace balancedit::backbone {

struct ModelConfig {
    int vocab_size = 128;
    int d_model = 32;
    int n_layers = 4;
    int n_heads = 4;
    int d_img = 16;
    int n_img_prefix_tokens = 4;
    int max_seq_len = 48;
    int editable_layer = -1;  // -1 selects the last block
    std::uint64_t seed = 0;

    int mlp_hidden() const { return 4 * d_model; }
    int head_dim() const { return d_model / n_heads; }
    int resolved_editable_layer() const { return editable_layer < 0 ? n_layers - 1 : editable_layer; }
    int max_text_len() const { return max_seq_len - n_img_prefix_tokens; }

    // Throws ErrorKind::config.
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace balancedit::backbone
