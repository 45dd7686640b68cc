#pragma once

#include "sparseformer/attention.hpp"
#include "sparseformer/layers.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparseformer {

class LabelError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

class LookupError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Frozen text -> vector map. Implementations are deterministic and return
/// unit-norm vectors (or the zero vector for texts that embed to nothing).
class TextEmbeddingProvider {
  public:
    virtual ~TextEmbeddingProvider() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> embed(const std::string& text) const = 0;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Signed bag-of-words feature hashing over lowercased whitespace tokens.
std::vector<double> hashed_text_embedding(const std::string& text, std::size_t dim);

class HashedTextEmbedding final : public TextEmbeddingProvider {
  public:
    explicit HashedTextEmbedding(std::size_t dim);
    std::size_t dim() const override { return dim_; }
    std::vector<double> embed(const std::string& text) const override { return hashed_text_embedding(text, dim_); }

  private:
    std::size_t dim_;
};

/// Precomputed vectors keyed by exact text. File format: a `dim=<E>` header
/// line, then `<text>\t<E space-separated decimals>` per line.
class TableTextEmbedding final : public TextEmbeddingProvider {
  public:
    static TableTextEmbedding load(const std::filesystem::path& path);
    static void save(const std::filesystem::path& path, std::size_t dim,
                     const std::map<std::string, std::vector<double>>& rows);

    TableTextEmbedding(std::size_t dim, std::map<std::string, std::vector<double>> rows);
    std::size_t dim() const override { return dim_; }
    std::vector<double> embed(const std::string& text) const override;

  private:
    std::size_t dim_;
    std::map<std::string, std::vector<double>> rows_;
};

PriorEmbedding make_prior(const std::string& description, const TextEmbeddingProvider& provider);

/// Maps frozen text vectors into the model's latent space:
/// W_1 · ReLU(W_2 · e + b).
class LabelProjector {
  public:
    LabelProjector() = default;
    LabelProjector(std::size_t text_dim, std::size_t hidden, std::size_t model_dim, Rng& rng);

    std::size_t text_dim() const { return w2_.dim(0); }
    std::size_t model_dim() const { return w1_.dim(1); }

    /// text vectors [M, E] -> label embeddings [M, D]
    Tensor operator()(const Tensor& text_vectors) const;
    void collect(ParameterList& out, const std::string& prefix) const;

    Tensor& w1() { return w1_; }
    Tensor& w2() { return w2_; }
    Tensor& bias() { return b_; }

  private:
    Tensor w2_;  // [E, hidden]
    Tensor b_;   // [hidden]
    Tensor w1_;  // [hidden, D]
};

struct LabelEmbeddingTable {
    std::vector<std::string> texts;  // index j holds class id j+1
    Tensor vectors;                  // [M, D]

    std::size_t num_classes() const { return texts.size(); }
};

/// Provider output for each text as a constant [M, E] matrix.
Tensor embed_texts(std::span<const std::string> texts, const TextEmbeddingProvider& provider);

Tensor encode_label(const std::string& text, const TextEmbeddingProvider& provider, const LabelProjector& projector);
LabelEmbeddingTable build_label_table(std::span<const std::string> texts, const TextEmbeddingProvider& provider,
                                      const LabelProjector& projector);

Tensor similarity(const Tensor& sample, const Tensor& label);

/// Similarity logits [B, M] for a batch of sample embeddings [B, D].
Tensor similarity_logits(const Tensor& samples, const Tensor& table);

/// Mean over the batch of -log softmax_j(sim(H_X, H_j)) at the true class.
/// Class ids are 1-based.
Tensor classification_loss(const Tensor& samples, std::span<const int> class_ids, const Tensor& table);

/// argmax_j sim(H_X, H_j); ties go to the lowest class id. Returns a 1-based id.
int predict(const Tensor& sample, const Tensor& table);
int argmax_lowest(std::span<const double> scores);

}  // namespace sparseformer
