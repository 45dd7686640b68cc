#pragma once

#include "sparseformer/attention.hpp"
#include "sparseformer/errors.hpp"

#include <optional>
#include <span>
#include <vector>

namespace sparseformer {

/// Read-only view of one sample, row-major [length][channels].
struct SeriesView {
    std::span<const float> values;
    std::size_t length = 0;
    std::size_t channels = 0;

    double at(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
    std::vector<double> channel(std::size_t c) const;
};

struct EncoderConfig {
    std::vector<std::size_t> window_sizes{25, 50, 100, 150};
    std::vector<std::size_t> intra_tokens{128, 64, 32};
    std::size_t inter_tokens = 8;
    std::size_t cross_tokens = 3;
    std::size_t max_patches = 512;
    bool positional = true;
    std::size_t head_hidden = 0;  // 0: single linear head
    AttentionConfig attention;    // attention.model_dim is the latent width D

    std::size_t model_dim() const { return attention.model_dim; }
    std::size_t channel_dim() const { return inter_tokens * attention.model_dim; }
    void validate() const;
};

/// Token counts observed at each stage of one encode_sample call.
struct StageTrace {
    struct Granularity {
        std::size_t window = 0;
        std::size_t patches = 0;
        std::vector<std::size_t> intra_tokens;
    };
    std::vector<Granularity> granularities;  // per channel 0 only
    std::size_t channels = 0;
    std::size_t inter_input_tokens = 0;
    std::size_t inter_tokens = 0;
    std::size_t channel_dim = 0;
    std::size_t cross_tokens = 0;
    std::size_t output_dim = 0;
};

/// Non-overlapping windows of `window` values; the last row is zero padded.
Tensor segment(std::span<const double> series, std::size_t window);

/// Rows concatenated and truncated to `length`; inverse of segment.
std::vector<double> unsegment(const Tensor& patches, std::size_t length);

class SparseformerModel {
  public:
    SparseformerModel() = default;
    SparseformerModel(const EncoderConfig& config, Rng& rng);

    const EncoderConfig& config() const { return config_; }

    Tensor embed_patches(const Tensor& patches, std::size_t granularity) const;
    Tensor intra_granularity_encode(const Tensor& embedded, std::size_t granularity, const PriorEmbedding& prior,
                                    const ForwardContext& ctx = {}, std::vector<std::size_t>* counts = nullptr) const;
    Tensor inter_granularity_encode(std::span<const Tensor> intra_outputs, const PriorEmbedding& prior,
                                    const ForwardContext& ctx = {}) const;
    static Tensor channel_representation(const Tensor& inter_output) { return ops::flatten(inter_output); }
    Tensor encode_channel(std::span<const double> series, const PriorEmbedding& prior, const ForwardContext& ctx = {},
                          StageTrace* trace = nullptr) const;
    Tensor cross_channel_encode(std::span<const Tensor> channel_vectors, const PriorEmbedding& prior,
                                const ForwardContext& ctx = {}, StageTrace* trace = nullptr) const;

    /// [L, C] sample -> [D] embedding.
    Tensor encode_sample(const SeriesView& sample, const PriorEmbedding& prior, const ForwardContext& ctx = {},
                         StageTrace* trace = nullptr) const;

    ParameterList parameters() const;

    // Blocks are exposed for property tests.
    const TsdaBlock& intra_block(std::size_t granularity, std::size_t k) const { return intra_[granularity][k]; }
    const TsdaBlock& inter_block() const { return inter_; }
    const TsdaBlock& cross_block() const { return cross_; }

  private:
    EncoderConfig config_;
    std::vector<Linear> embedders_;          // per granularity, [S_i -> D]
    std::vector<Tensor> positions_;          // per granularity, [max_patches, D]
    std::vector<std::vector<TsdaBlock>> intra_;
    TsdaBlock inter_;
    TsdaBlock cross_;                        // width D_c
    Linear head_;
    std::optional<Linear> head_out_;
};

}  // namespace sparseformer
