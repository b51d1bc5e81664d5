#include "balancedit/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "balancedit/common/error.hpp"

namespace balancedit::numerics {

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        fail(ErrorKind::dimension, std::string(what) + " must be rank 2, got " + shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        fail(ErrorKind::dimension, std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                       shape_string(b.shape()));
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul lhs");
    require_matrix(b, "matmul rhs");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        fail(ErrorKind::dimension,
             "matmul: inner extents differ, " + shape_string(a.shape()) + " · " + shape_string(b.shape()));
    }
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            const double* brow = b.row(p).data();
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aip * brow[j];
            }
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt lhs");
    require_matrix(b, "matmul_nt rhs");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        fail(ErrorKind::dimension, "matmul_nt: inner extents differ, " + shape_string(a.shape()) + " · " +
                                       shape_string(b.shape()) + "ᵀ");
    }
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row(i).data();
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.row(j).data();
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += arow[p] * brow[p];
            }
            c(i, j) = s;
        }
    }
    return c;
}

void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc, Tensor* da, Tensor* db) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (dc.rows() != m || dc.cols() != n) {
        fail(ErrorKind::dimension, "matmul_backward: upstream " + shape_string(dc.shape()) + " does not match " +
                                       shape_string(a.shape()) + " · " + shape_string(b.shape()));
    }
    if (da) {
        require_same_shape(*da, a, "matmul_backward da");
        for (std::size_t i = 0; i < m; ++i) {
            const double* dcrow = dc.row(i).data();
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b.row(p).data();
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    s += dcrow[j] * brow[j];
                }
                (*da)(i, p) += s;
            }
        }
    }
    if (db) {
        require_same_shape(*db, b, "matmul_backward db");
        for (std::size_t i = 0; i < m; ++i) {
            const double* dcrow = dc.row(i).data();
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = a(i, p);
                if (aip == 0.0) {
                    continue;
                }
                double* dbrow = db->row(p).data();
                for (std::size_t j = 0; j < n; ++j) {
                    dbrow[j] += aip * dcrow[j];
                }
            }
        }
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor c = a;
    add_inplace(c, b);
    return c;
}

void add_inplace(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) {
        ad[i] += bd[i];
    }
}

void add_row_bias(Tensor& x, const Tensor& bias) {
    if (bias.size() != x.cols()) {
        fail(ErrorKind::dimension,
             "bias " + shape_string(bias.shape()) + " does not match rows of " + shape_string(x.shape()));
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] += bias[c];
        }
    }
}

void row_bias_backward(const Tensor& dy, Tensor& dbias) {
    if (dbias.size() != dy.cols()) {
        fail(ErrorKind::dimension, "bias gradient size mismatch");
    }
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        auto row = dy.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            dbias[c] += row[c];
        }
    }
}

Tensor gelu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) {
        const double u = kGeluC * (v + 0.044715 * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    return y;
}

void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    require_same_shape(x, dy, "gelu_backward");
    require_same_shape(x, dx, "gelu_backward dx");
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double u = kGeluC * (v + 0.044715 * v * v * v);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
        dx[i] += dy[i] * d;
    }
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift, LayerNormCache* cache) {
    const std::size_t n = x.cols();
    if (gain.size() != n || shift.size() != n) {
        fail(ErrorKind::dimension, "layernorm: parameter size does not match " + shape_string(x.shape()));
    }
    Tensor y(x.shape());
    Tensor normalized(x.shape());
    std::vector<double> rstd(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) {
            mean += v;
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(n);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd[r] = rs;
        for (std::size_t c = 0; c < n; ++c) {
            const double xh = (in[c] - mean) * rs;
            normalized(r, c) = xh;
            y(r, c) = xh * gain[c] + shift[c];
        }
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->rstd = std::move(rstd);
    }
    return y;
}

void layernorm_backward(const LayerNormCache& cache, const Tensor& gain, const Tensor& dy, Tensor& dx,
                        Tensor* dgain, Tensor* dshift) {
    const Tensor& xh = cache.normalized;
    require_same_shape(xh, dy, "layernorm_backward");
    const std::size_t n = xh.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < xh.rows(); ++r) {
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const double g = dy(r, c) * gain[c];
            sum_g += g;
            sum_gx += g * xh(r, c);
            if (dgain) {
                (*dgain)[c] += dy(r, c) * xh(r, c);
            }
            if (dshift) {
                (*dshift)[c] += dy(r, c);
            }
        }
        for (std::size_t c = 0; c < n; ++c) {
            const double g = dy(r, c) * gain[c];
            dx(r, c) += cache.rstd[r] * (g - inv_n * sum_g - xh(r, c) * inv_n * sum_gx);
        }
    }
}

Tensor softmax_rows(const Tensor& x, bool causal) {
    Tensor y(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const std::size_t limit = causal ? std::min(r + 1, x.cols()) : x.cols();
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < limit; ++c) {
            mx = std::max(mx, x(r, c));
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < limit; ++c) {
            const double e = std::exp(x(r, c) - mx);
            y(r, c) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < limit; ++c) {
            y(r, c) /= sum;
        }
    }
    return y;
}

void softmax_rows_backward(const Tensor& y, const Tensor& dy, Tensor& dx) {
    require_same_shape(y, dy, "softmax_backward");
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) {
            dot += y(r, c) * dy(r, c);
        }
        for (std::size_t c = 0; c < y.cols(); ++c) {
            dx(r, c) += y(r, c) * (dy(r, c) - dot);
        }
    }
}

Tensor embedding_gather(const Tensor& table, std::span<const std::int32_t> ids) {
    Tensor out({ids.size(), table.cols()});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= table.rows()) {
            fail(ErrorKind::dimension, "token id " + std::to_string(ids[r]) + " outside table of " +
                                           std::to_string(table.rows()) + " rows");
        }
        auto src = table.row(static_cast<std::size_t>(ids[r]));
        auto dst = out.row(r);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

void embedding_gather_backward(std::span<const std::int32_t> ids, const Tensor& dout, Tensor& dtable) {
    for (std::size_t r = 0; r < ids.size(); ++r) {
        auto src = dout.row(r);
        auto dst = dtable.row(static_cast<std::size_t>(ids[r]));
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] += src[c];
        }
    }
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                                         const std::vector<bool>& mask) {
    require_matrix(logits, "cross-entropy logits");
    const std::size_t n = logits.rows(), vocab = logits.cols();
    if (targets.size() != n || mask.size() != n) {
        fail(ErrorKind::dimension, "cross-entropy: " + std::to_string(targets.size()) + " targets and " +
                                       std::to_string(mask.size()) + " mask flags for " + std::to_string(n) +
                                       " rows");
    }
    CrossEntropyResult result;
    result.dlogits = Tensor(logits.shape());
    for (std::size_t r = 0; r < n; ++r) {
        if (mask[r]) {
            ++result.active_rows;
        }
    }
    if (result.active_rows == 0) {
        fail(ErrorKind::empty_loss, "cross-entropy with every row masked");
    }
    const double scale = 1.0 / static_cast<double>(result.active_rows);
    for (std::size_t r = 0; r < n; ++r) {
        if (!mask[r]) {
            continue;
        }
        const std::int32_t target = targets[r];
        if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
            fail(ErrorKind::dimension,
                 "target " + std::to_string(target) + " outside vocabulary of " + std::to_string(vocab));
        }
        auto row = logits.row(r);
        double mx = row[0];
        for (double v : row) {
            mx = std::max(mx, v);
        }
        double sum = 0.0;
        for (double v : row) {
            sum += std::exp(v - mx);
        }
        const double log_z = mx + std::log(sum);
        result.loss += (log_z - row[static_cast<std::size_t>(target)]) * scale;
        auto drow = result.dlogits.row(r);
        for (std::size_t c = 0; c < vocab; ++c) {
            drow[c] = std::exp(row[c] - log_z) * scale;
        }
        drow[static_cast<std::size_t>(target)] -= scale;
    }
    return result;
}

}  // namespace balancedit::numerics
