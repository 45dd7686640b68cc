#include "sparseformer/layers.hpp"

#include <cmath>

namespace sparseformer {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> d(fan_in * fan_out);
    for (auto& v : d) v = rng.uniform(-bound, bound);
    return Tensor({fan_in, fan_out}, std::move(d), true);
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(d), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(xavier_uniform(in, out, rng)) {
    if (with_bias) bias = Tensor::zeros({out}, true);
}

void Linear::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t width)
    : gamma(Tensor::full({width}, 1.0, true)), beta(Tensor::zeros({width}, true)) {}

void LayerNorm::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

FeedForward::FeedForward(std::size_t width, Rng& rng) : up(width, 2 * width, rng), down(2 * width, width, rng) {}

void FeedForward::collect(ParameterList& out, const std::string& prefix) const {
    up.collect(out, prefix + ".up");
    down.collect(out, prefix + ".down");
}

}  // namespace sparseformer
