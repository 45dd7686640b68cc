#pragma once

#include "sparseformer/classifier.hpp"
#include "sparseformer/grad_check.hpp"

namespace sparseformer {

/// Toy-sized config for full-model gradient checks: L=20, C=2, D=8,
/// windows {5,10}, intra tokens [6,4], 3 inter and 2 cross tokens.
TrainConfig toy_gradcheck_config(std::uint64_t seed = 0);

/// Small bundle matching toy_gradcheck_config.
DatasetBundle toy_gradcheck_bundle(std::uint64_t seed = 0);

/// Redraws every learnable query block at unit scale. At the 0.02 init the
/// pooled tokens are nearly identical, so query/key gradients downstream are
/// tiny and finite differences only measure rounding noise.
void spread_queries(SparseformerClassifier& model, Rng& rng);

/// Finite-difference check of every trainable parameter. The scalar is a
/// random linear functional of the similarity logits of `indices` (dropout
/// off), so every parameter of encoder and projector is exercised.
GradCheckReport model_grad_check(const SparseformerClassifier& model, const DatasetBundle& bundle,
                                 std::span<const std::size_t> indices, Rng& rng, double h = 1e-5);

/// toy_gradcheck_config + toy_gradcheck_bundle + spread_queries + model_grad_check.
GradCheckReport toy_model_grad_check(std::uint64_t seed = 0, double h = 1e-5);

/// Same check restricted to a single TSDA block at toy width.
GradCheckReport block_grad_check(std::uint64_t seed = 0, double h = 1e-5);

}  // namespace sparseformer
