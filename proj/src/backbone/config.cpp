#include "balancedit/backbone/config.hpp"

#include "balancedit/backbone/types.hpp"
#include "balancedit/common/error.hpp"
#include "balancedit/common/json_util.hpp"

namespace balancedit::backbone {

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) {
            fail(ErrorKind::config, "model config: " + msg);
        }
    };
    require(vocab_size > kFirstFreeToken, "vocab_size too small");
    require(d_model > 0 && n_layers > 0 && n_heads > 0, "d_model, n_layers and n_heads must be positive");
    require(d_model % n_heads == 0, "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                        std::to_string(n_heads));
    require(d_img > 0 && n_img_prefix_tokens > 0, "d_img and n_img_prefix_tokens must be positive");
    require(max_seq_len > n_img_prefix_tokens + 1, "max_seq_len leaves no room for text");
    const int l = resolved_editable_layer();
    require(l >= 0 && l < n_layers,
            "editable_layer " + std::to_string(editable_layer) + " outside [0, " + std::to_string(n_layers) + ")");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"vocab_size", c.vocab_size},
                       {"d_model", c.d_model},
                       {"n_layers", c.n_layers},
                       {"n_heads", c.n_heads},
                       {"d_img", c.d_img},
                       {"n_img_prefix_tokens", c.n_img_prefix_tokens},
                       {"max_seq_len", c.max_seq_len},
                       {"editable_layer", c.editable_layer},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    reject_unknown_keys(j,
                        {"vocab_size", "d_model", "n_layers", "n_heads", "d_img", "n_img_prefix_tokens",
                         "max_seq_len", "editable_layer", "seed"},
                        "model config");
    ModelConfig d;
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.d_model = j.value("d_model", d.d_model);
    c.n_layers = j.value("n_layers", d.n_layers);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.d_img = j.value("d_img", d.d_img);
    c.n_img_prefix_tokens = j.value("n_img_prefix_tokens", d.n_img_prefix_tokens);
    c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
    c.editable_layer = j.value("editable_layer", d.editable_layer);
    c.seed = j.value("seed", d.seed);
}

}  // namespace balancedit::backbone
