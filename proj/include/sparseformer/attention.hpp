#pragma once

#include "sparseformer/layers.hpp"

#include <string>

namespace sparseformer {

struct AttentionConfig {
    std::size_t model_dim = 128;
    std::size_t num_heads = 8;
    double dropout = 0.1;
    std::size_t prior_dim = 64;  // 0 disables prior fusion

    std::size_t head_dim() const { return model_dim / num_heads; }
    void validate() const;
};

/// Fixed vector derived from a dataset description; fused into every block's queries.
struct PriorEmbedding {
    Tensor vector;  // [prior_dim], undefined when prior_dim == 0
    std::string source_text;
};

/// Token-sparse dual attention: self-attention over the L input tokens
/// followed by cross-attention from O prior-augmented learnable queries,
/// so that any input length maps to exactly O output tokens.
class TsdaBlock {
  public:
    TsdaBlock() = default;
    TsdaBlock(const AttentionConfig& config, std::size_t num_queries, Rng& rng);

    const AttentionConfig& config() const { return config_; }
    std::size_t num_queries() const { return queries_.dim(0); }

    /// Multi-head self-attention with output projection, [L,D] -> [L,D].
    Tensor self_attention(const Tensor& h, const ForwardContext& ctx = {}) const;

    /// [Q | prior broadcast] · W_f + b_f, [O,D].
    Tensor augment_queries(const PriorEmbedding& prior) const;

    /// Cross-attention from q_aug [O,D] onto h_self [L,D], [O,D].
    Tensor token_sparse_attention(const Tensor& q_aug, const Tensor& h_self, const ForwardContext& ctx = {}) const;

    /// Full block, [L,D] -> [O,D].
    Tensor forward(const Tensor& h, const PriorEmbedding& prior, const ForwardContext& ctx = {}) const;

    void collect(ParameterList& out, const std::string& prefix) const;

    // Exposed for tests that construct degenerate configurations.
    Tensor& queries() { return queries_; }
    Linear& query_fusion() { return fusion_; }
    Tensor& sparse_key() { return w_key_sparse_; }
    Tensor& sparse_value() { return w_value_sparse_; }
    Tensor& self_value() { return w_value_; }
    Tensor& self_out() { return w_out_; }

  private:
    AttentionConfig config_;
    Tensor queries_;  // [O, D]
    Linear fusion_;   // [D + D_e, D]
    Tensor w_query_, w_key_, w_value_, w_out_;
    Tensor w_key_sparse_, w_value_sparse_;
    FeedForward ffn_self_, ffn_sparse_;
    LayerNorm norm_self_attn_, norm_self_ffn_, norm_sparse_attn_, norm_sparse_ffn_;
};

}  // namespace sparseformer
