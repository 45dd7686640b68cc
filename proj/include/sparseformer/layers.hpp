#pragma once

#include "sparseformer/grad_check.hpp"
#include "sparseformer/ops.hpp"
#include "sparseformer/rng.hpp"
#include "sparseformer/tensor.hpp"

#include <string>

namespace sparseformer {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor gaussian(Shape shape, double stddev, Rng& rng);

/// Per-call options shared by every layer in one forward pass.
struct ForwardContext {
    Rng* dropout_rng = nullptr;  // null disables dropout (evaluation)
    std::vector<ops::AttentionProbe>* probes = nullptr;
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out], may be undefined

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

    Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    void collect(ParameterList& out, const std::string& prefix) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);

    Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }
    void collect(ParameterList& out, const std::string& prefix) const;
};

/// linear D->2D, gelu, linear 2D->D
struct FeedForward {
    Linear up;
    Linear down;

    FeedForward() = default;
    FeedForward(std::size_t width, Rng& rng);

    Tensor operator()(const Tensor& x) const { return down(ops::gelu(up(x))); }
    void collect(ParameterList& out, const std::string& prefix) const;
};

}  // namespace sparseformer
