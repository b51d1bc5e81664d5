#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "balancedit/numerics/tensor.hpp"

// Fixed op set with hand-written adjoints. Every *_backward ACCUMULATES into the
// gradient tensors it is given, so callers zero them once per step.
namespace balancedit::numerics {

// c = a · b
Tensor matmul(const Tensor& a, const Tensor& b);
// c = a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// da += dc · bᵀ, db += aᵀ · dc. Either output may be null.
void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc, Tensor* da, Tensor* db);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
// Adds `bias` (length = cols) to every row.
void add_row_bias(Tensor& x, const Tensor& bias);
// dbias += column sums of dy
void row_bias_backward(const Tensor& dy, Tensor& dbias);

// tanh-approximated GELU
Tensor gelu(const Tensor& x);
void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

struct LayerNormCache {
    Tensor normalized;           // (x - mean) * rstd
    std::vector<double> rstd;    // per row
};
inline constexpr double kLayerNormEps = 1e-5;

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift, LayerNormCache* cache);
void layernorm_backward(const LayerNormCache& cache, const Tensor& gain, const Tensor& dy, Tensor& dx,
                        Tensor* dgain, Tensor* dshift);

// Row-wise softmax. When `causal` is set, entry (i, j) with j > i is excluded.
Tensor softmax_rows(const Tensor& x, bool causal = false);
void softmax_rows_backward(const Tensor& y, const Tensor& dy, Tensor& dx);

Tensor embedding_gather(const Tensor& table, std::span<const std::int32_t> ids);
void embedding_gather_backward(std::span<const std::int32_t> ids, const Tensor& dout, Tensor& dtable);

struct CrossEntropyResult {
    double loss = 0.0;
    Tensor dlogits;  // d loss / d logits, zero on masked rows
    std::size_t active_rows = 0;
};

// Mean over unmasked rows of -log softmax(logits)[target].
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                                         const std::vector<bool>& mask);

}  // namespace balancedit::numerics
