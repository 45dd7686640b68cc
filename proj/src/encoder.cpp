#include "sparseformer/encoder.hpp"

#include <algorithm>

namespace sparseformer {

std::vector<double> SeriesView::channel(std::size_t c) const {
    std::vector<double> out(length);
    for (std::size_t t = 0; t < length; ++t) out[t] = at(t, c);
    return out;
}

void EncoderConfig::validate() const {
    attention.validate();
    if (window_sizes.empty()) throw ConfigError("encoder: window_sizes must be non-empty");
    for (std::size_t i = 0; i < window_sizes.size(); ++i) {
        if (window_sizes[i] == 0) throw ConfigError("encoder: window sizes must be >= 1");
        if (i > 0 && window_sizes[i] <= window_sizes[i - 1]) {
            throw ConfigError("encoder: window_sizes must be distinct and ascending");
        }
    }
    if (intra_tokens.empty()) throw ConfigError("encoder: intra_tokens must be non-empty");
    for (std::size_t i = 0; i < intra_tokens.size(); ++i) {
        if (intra_tokens[i] == 0) throw ConfigError("encoder: intra token counts must be positive");
        if (i > 0 && intra_tokens[i] >= intra_tokens[i - 1]) {
            throw ConfigError("encoder: intra_tokens must be strictly decreasing");
        }
    }
    if (inter_tokens == 0) throw ConfigError("encoder: inter_tokens must be positive");
    if (cross_tokens == 0) throw ConfigError("encoder: cross_tokens must be positive");
    if (max_patches == 0) throw ConfigError("encoder: max_patches must be positive");
}

Tensor segment(std::span<const double> series, std::size_t window) {
    if (series.empty() || window == 0) throw DimensionError("segment: need a non-empty series and window >= 1");
    const std::size_t rows = (series.size() + window - 1) / window;
    std::vector<double> data(rows * window, 0.0);
    std::copy(series.begin(), series.end(), data.begin());
    return Tensor({rows, window}, std::move(data));
}

std::vector<double> unsegment(const Tensor& patches, std::size_t length) {
    if (length > patches.numel()) throw DimensionError("unsegment: length exceeds patch storage");
    return {patches.data().begin(), patches.data().begin() + static_cast<std::ptrdiff_t>(length)};
}

SparseformerModel::SparseformerModel(const EncoderConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t D = config_.model_dim();
    for (std::size_t window : config_.window_sizes) {
        embedders_.emplace_back(window, D, rng);
        positions_.push_back(gaussian({config_.max_patches, D}, 0.02, rng));
        std::vector<TsdaBlock> stack;
        for (std::size_t o : config_.intra_tokens) stack.emplace_back(config_.attention, o, rng);
        intra_.push_back(std::move(stack));
    }
    inter_ = TsdaBlock(config_.attention, config_.inter_tokens, rng);
    AttentionConfig cross_cfg = config_.attention;
    cross_cfg.model_dim = config_.channel_dim();
    cross_ = TsdaBlock(cross_cfg, config_.cross_tokens, rng);
    const std::size_t flat = config_.cross_tokens * config_.channel_dim();
    if (config_.head_hidden > 0) {
        head_ = Linear(flat, config_.head_hidden, rng);
        head_out_ = Linear(config_.head_hidden, D, rng);
    } else {
        head_ = Linear(flat, D, rng);
    }
}

Tensor SparseformerModel::embed_patches(const Tensor& patches, std::size_t granularity) const {
    const auto& embed = embedders_.at(granularity);
    if (patches.rank() != 2 || patches.dim(1) != embed.in_features()) {
        throw DimensionError("embed_patches: patches " + shape_str(patches.shape()) + " do not match window " +
                             std::to_string(embed.in_features()));
    }
    const std::size_t rows = patches.dim(0);
    if (rows > config_.max_patches) {
        throw ConfigError("embed_patches: " + std::to_string(rows) + " patches exceed the positional table (" +
                          std::to_string(config_.max_patches) + "); increase max_patches");
    }
    Tensor out = embed(patches);
    if (config_.positional) out = ops::add(out, ops::slice_rows(positions_[granularity], 0, rows));
    return out;
}

Tensor SparseformerModel::intra_granularity_encode(const Tensor& embedded, std::size_t granularity,
                                                   const PriorEmbedding& prior, const ForwardContext& ctx,
                                                   std::vector<std::size_t>* counts) const {
    Tensor h = embedded;
    for (const auto& block : intra_.at(granularity)) {
        h = block.forward(h, prior, ctx);
        if (counts) counts->push_back(h.dim(0));
    }
    return h;
}

Tensor SparseformerModel::inter_granularity_encode(std::span<const Tensor> intra_outputs, const PriorEmbedding& prior,
                                                   const ForwardContext& ctx) const {
    const std::size_t expected = config_.intra_tokens.back();
    for (const auto& t : intra_outputs) {
        if (t.rank() != 2 || t.dim(0) != expected || t.dim(1) != config_.model_dim()) {
            throw DimensionError("inter_granularity_encode: intra output " + shape_str(t.shape()) + " is not [" +
                                 std::to_string(expected) + "," + std::to_string(config_.model_dim()) + "]");
        }
    }
    return inter_.forward(ops::concat(intra_outputs, 0), prior, ctx);
}

Tensor SparseformerModel::encode_channel(std::span<const double> series, const PriorEmbedding& prior,
                                         const ForwardContext& ctx, StageTrace* trace) const {
    std::vector<Tensor> intra;
    intra.reserve(config_.window_sizes.size());
    for (std::size_t g = 0; g < config_.window_sizes.size(); ++g) {
        Tensor patches = segment(series, config_.window_sizes[g]);
        StageTrace::Granularity* gt = nullptr;
        if (trace) {
            trace->granularities.push_back({config_.window_sizes[g], patches.dim(0), {}});
            gt = &trace->granularities.back();
        }
        intra.push_back(
            intra_granularity_encode(embed_patches(patches, g), g, prior, ctx, gt ? &gt->intra_tokens : nullptr));
    }
    Tensor inter = inter_granularity_encode(intra, prior, ctx);
    if (trace) {
        trace->inter_input_tokens = 0;
        for (const auto& t : intra) trace->inter_input_tokens += t.dim(0);
        trace->inter_tokens = inter.dim(0);
    }
    return channel_representation(inter);
}

Tensor SparseformerModel::cross_channel_encode(std::span<const Tensor> channel_vectors, const PriorEmbedding& prior,
                                               const ForwardContext& ctx, StageTrace* trace) const {
    if (channel_vectors.empty()) throw DimensionError("cross_channel_encode: no channels");
    for (const auto& h : channel_vectors) {
        if (h.numel() != config_.channel_dim()) {
            throw DimensionError("cross_channel_encode: channel vector " + shape_str(h.shape()) +
                                 " does not have length " + std::to_string(config_.channel_dim()));
        }
    }
    Tensor channels = ops::stack_rows(channel_vectors);
    Tensor prototypes = cross_.forward(channels, prior, ctx);
    if (trace) trace->cross_tokens = prototypes.dim(0);
    Tensor out = head_(ops::flatten(prototypes).reshape({1, prototypes.numel()}));
    if (head_out_) out = (*head_out_)(ops::gelu(out));
    return ops::flatten(out);
}

Tensor SparseformerModel::encode_sample(const SeriesView& sample, const PriorEmbedding& prior,
                                        const ForwardContext& ctx, StageTrace* trace) const {
    if (sample.length == 0 || sample.channels == 0 || sample.values.size() != sample.length * sample.channels) {
        throw DimensionError("encode_sample: sample view [" + std::to_string(sample.length) + "," +
                             std::to_string(sample.channels) + "] inconsistent with " +
                             std::to_string(sample.values.size()) + " values");
    }
    std::vector<Tensor> channel_vectors;
    channel_vectors.reserve(sample.channels);
    for (std::size_t c = 0; c < sample.channels; ++c) {
        auto series = sample.channel(c);
        channel_vectors.push_back(encode_channel(series, prior, ctx, c == 0 ? trace : nullptr));
    }
    Tensor out = cross_channel_encode(channel_vectors, prior, ctx, trace);
    if (trace) {
        trace->channels = sample.channels;
        trace->channel_dim = channel_vectors.front().numel();
        trace->output_dim = out.numel();
    }
    return out;
}

ParameterList SparseformerModel::parameters() const {
    ParameterList out;
    for (std::size_t g = 0; g < embedders_.size(); ++g) {
        const std::string prefix = "encoder.granularity" + std::to_string(g);
        embedders_[g].collect(out, prefix + ".embed");
        if (config_.positional) out.push_back({prefix + ".positions", positions_[g]});
        for (std::size_t k = 0; k < intra_[g].size(); ++k) {
            intra_[g][k].collect(out, prefix + ".intra" + std::to_string(k));
        }
    }
    inter_.collect(out, "encoder.inter");
    cross_.collect(out, "encoder.cross");
    head_.collect(out, "encoder.head");
    if (head_out_) head_out_->collect(out, "encoder.head_out");
    return out;
}

}  // namespace sparseformer
