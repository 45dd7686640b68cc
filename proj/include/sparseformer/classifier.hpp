#pragma once

#include "sparseformer/config.hpp"
#include "sparseformer/data.hpp"
#include "sparseformer/encoder.hpp"
#include "sparseformer/labels.hpp"
#include "sparseformer/metrics.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace sparseformer {

/// Encoder, label projector and the two frozen text providers (class texts
/// and dataset descriptions) that together score samples against classes.
class SparseformerClassifier {
  public:
    /// Fresh parameters drawn from `config.seed`.
    explicit SparseformerClassifier(const TrainConfig& config);

    // Parameter tensors are shared handles, so copies must be explicit.
    SparseformerClassifier(const SparseformerClassifier&) = delete;
    SparseformerClassifier& operator=(const SparseformerClassifier&) = delete;
    SparseformerClassifier(SparseformerClassifier&&) = default;
    SparseformerClassifier& operator=(SparseformerClassifier&&) = default;

    SparseformerClassifier clone() const;

    const TrainConfig& config() const { return config_; }
    const SparseformerModel& encoder() const { return encoder_; }
    const LabelProjector& projector() const { return projector_; }
    const TextEmbeddingProvider& label_provider() const { return *label_provider_; }
    const TextEmbeddingProvider& prior_provider() const { return *prior_provider_; }

    PriorEmbedding prior_for(const DatasetBundle& bundle) const;

    /// Label table [M, D] for the bundle's classes (differentiable in the projector).
    Tensor label_table(const DatasetBundle& bundle) const;
    Tensor label_table(std::span<const std::string> texts) const;

    /// Sample embeddings [B, D].
    Tensor encode(const DatasetBundle& bundle, std::span<const std::size_t> indices, const PriorEmbedding& prior,
                  const ForwardContext& ctx = {}) const;

    /// Similarity logits, row-major [indices.size(), M]; no graph is recorded.
    std::vector<double> scores(const DatasetBundle& bundle, std::span<const std::size_t> indices) const;
    std::vector<double> scores(const DatasetBundle& bundle, std::span<const std::size_t> indices,
                               std::span<const std::string> label_texts) const;

    EvalResult evaluate(const DatasetBundle& bundle, Split split) const;

    ParameterList encoder_parameters() const { return encoder_.parameters(); }
    ParameterList projector_parameters() const;
    ParameterList parameters() const;

    /// Deep copy of all parameter values, and its inverse.
    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& values);

  private:
    TrainConfig config_;
    SparseformerModel encoder_;
    LabelProjector projector_;
    std::shared_ptr<const TextEmbeddingProvider> label_provider_;
    std::shared_ptr<const TextEmbeddingProvider> prior_provider_;
};

/// Container: 8-byte magic "SPFCKPT1", u64 little-endian manifest length,
/// UTF-8 JSON manifest (config echo, parameter names, shapes, offsets,
/// precision), then each parameter as raw little-endian f32 or f64.
void save_checkpoint(const std::filesystem::path& path, const SparseformerClassifier& model);
SparseformerClassifier load_checkpoint(const std::filesystem::path& path);

}  // namespace sparseformer
