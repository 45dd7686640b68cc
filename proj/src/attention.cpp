#include "sparseformer/attention.hpp"

#include <array>

namespace sparseformer {

void AttentionConfig::validate() const {
    if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
        throw DimensionError("attention: model_dim " + std::to_string(model_dim) + " must be a positive multiple of num_heads " +
                             std::to_string(num_heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("attention: dropout must lie in [0, 1)");
}

TsdaBlock::TsdaBlock(const AttentionConfig& config, std::size_t num_queries, Rng& rng) : config_(config) {
    config_.validate();
    if (num_queries == 0) throw std::invalid_argument("TsdaBlock: num_queries must be positive");
    const std::size_t D = config_.model_dim;
    queries_ = gaussian({num_queries, D}, 0.02, rng);
    fusion_ = Linear(D + config_.prior_dim, D, rng);
    w_query_ = xavier_uniform(D, D, rng);
    w_key_ = xavier_uniform(D, D, rng);
    w_value_ = xavier_uniform(D, D, rng);
    w_out_ = xavier_uniform(D, D, rng);
    w_key_sparse_ = xavier_uniform(D, D, rng);
    w_value_sparse_ = xavier_uniform(D, D, rng);
    ffn_self_ = FeedForward(D, rng);
    ffn_sparse_ = FeedForward(D, rng);
    norm_self_attn_ = LayerNorm(D);
    norm_self_ffn_ = LayerNorm(D);
    norm_sparse_attn_ = LayerNorm(D);
    norm_sparse_ffn_ = LayerNorm(D);
}

namespace {

ops::AttentionProbe* next_probe(const ForwardContext& ctx) {
    if (!ctx.probes) return nullptr;
    ctx.probes->emplace_back();
    return &ctx.probes->back();
}

}  // namespace

Tensor TsdaBlock::self_attention(const Tensor& h, const ForwardContext& ctx) const {
    if (h.rank() != 2 || h.dim(1) != config_.model_dim) {
        throw DimensionError("self_attention: input " + shape_str(h.shape()) + " does not have width " +
                             std::to_string(config_.model_dim));
    }
    Tensor q = ops::matmul(h, w_query_);
    Tensor k = ops::matmul(h, w_key_);
    Tensor v = ops::matmul(h, w_value_);
    return ops::matmul(ops::multi_head_attention(q, k, v, config_.num_heads, next_probe(ctx)), w_out_);
}

Tensor TsdaBlock::augment_queries(const PriorEmbedding& prior) const {
    const std::size_t De = config_.prior_dim;
    if (De == 0) {
        if (prior.vector.defined()) {
            throw DimensionError("augment_queries: prior of shape " + shape_str(prior.vector.shape()) +
                                 " given but prior_dim is 0");
        }
        return fusion_(queries_);
    }
    if (!prior.vector.defined() || prior.vector.numel() != De) {
        throw DimensionError("augment_queries: prior " +
                             (prior.vector.defined() ? shape_str(prior.vector.shape()) : std::string("<none>")) +
                             " does not have configured dim " + std::to_string(De));
    }
    std::array<Tensor, 2> parts{queries_, ops::broadcast_rows(prior.vector, queries_.dim(0))};
    return fusion_(ops::concat(parts, 1));
}

Tensor TsdaBlock::token_sparse_attention(const Tensor& q_aug, const Tensor& h_self, const ForwardContext& ctx) const {
    Tensor k = ops::matmul(h_self, w_key_sparse_);
    Tensor v = ops::matmul(h_self, w_value_sparse_);
    return ops::multi_head_attention(q_aug, k, v, config_.num_heads, next_probe(ctx));
}

Tensor TsdaBlock::forward(const Tensor& h, const PriorEmbedding& prior, const ForwardContext& ctx) const {
    const double p = config_.dropout;
    Tensor x = norm_self_attn_(ops::add(h, ops::dropout(self_attention(h, ctx), p, ctx.dropout_rng)));
    Tensor h_self = norm_self_ffn_(ops::add(x, ops::dropout(ffn_self_(x), p, ctx.dropout_rng)));

    Tensor q_aug = augment_queries(prior);
    Tensor y = norm_sparse_attn_(ops::add(q_aug, ops::dropout(token_sparse_attention(q_aug, h_self, ctx), p, ctx.dropout_rng)));
    return norm_sparse_ffn_(ops::add(y, ops::dropout(ffn_sparse_(y), p, ctx.dropout_rng)));
}

void TsdaBlock::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".queries", queries_});
    fusion_.collect(out, prefix + ".query_fusion");
    out.push_back({prefix + ".self.w_query", w_query_});
    out.push_back({prefix + ".self.w_key", w_key_});
    out.push_back({prefix + ".self.w_value", w_value_});
    out.push_back({prefix + ".self.w_out", w_out_});
    out.push_back({prefix + ".sparse.w_key", w_key_sparse_});
    out.push_back({prefix + ".sparse.w_value", w_value_sparse_});
    ffn_self_.collect(out, prefix + ".self.ffn");
    ffn_sparse_.collect(out, prefix + ".sparse.ffn");
    norm_self_attn_.collect(out, prefix + ".self.norm_attn");
    norm_self_ffn_.collect(out, prefix + ".self.norm_ffn");
    norm_sparse_attn_.collect(out, prefix + ".sparse.norm_attn");
    norm_sparse_ffn_.collect(out, prefix + ".sparse.norm_ffn");
}

}  // namespace sparseformer
