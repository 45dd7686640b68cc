#pragma once

#include "sparseformer/rng.hpp"
#include "sparseformer/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace sparseformer::ops {

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);         // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);      // [m,k] x [n,k]^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);  // x·w + bias (bias may be undefined)

// Pointwise
enum class Pointwise { Relu, Gelu };
Tensor apply(const Tensor& x, Pointwise fn);
inline Tensor relu(const Tensor& x) { return apply(x, Pointwise::Relu); }
inline Tensor gelu(const Tensor& x) { return apply(x, Pointwise::Gelu); }
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& x, const Tensor& bias);  // [m,n] + [n]
Tensor scale(const Tensor& x, double s);

// Reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// Normalization
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Rearrangement
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor flatten(const Tensor& x);
Tensor transpose(const Tensor& x);  // swaps the last two axes
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor broadcast_rows(const Tensor& v, std::size_t rows);  // [n] -> [rows,n]
Tensor stack_rows(std::span<const Tensor> vectors);        // k x [n] -> [k,n]
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

/// Inverted dropout; identity when rate == 0 or rng is null.
Tensor dropout(const Tensor& x, double rate, Rng* rng);

/// Per-head attention weights captured for inspection, [heads][rows*cols].
struct AttentionProbe {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::vector<double>> weights;
};

/// Multi-head scaled dot-product attention without projections:
/// q [O,D], k [L,D], v [L,D] -> [O,D]; head h uses columns [h*d, (h+1)*d).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            AttentionProbe* probe = nullptr);

/// Mean negative log-likelihood of softmax(logits) at targets (0-based).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace sparseformer::ops
