#pragma once

#include "sparseformer/classifier.hpp"
#include "sparseformer/optim.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sparseformer {

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double val_f1 = 0.0;  // mean over bundles
    std::vector<double> val_f1_per_bundle;
};

struct RunRecord {
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<std::string> bundles;
    std::vector<double> initial_loss;  // per bundle, before the first step
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_f1 = 0.0;
    bool early_stopped = false;
    std::vector<EvalResult> test;  // per bundle, from the best checkpoint

    nlohmann::json to_json() const;
};

struct TrainHooks {
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Mean classification loss over a split without recording a graph or dropout.
double mean_loss(const SparseformerClassifier& model, const DatasetBundle& bundle, Split split);

/// Round-robin training over bundles that may differ in length, channels and
/// classes. An epoch is one pass over the bundle with the most batches;
/// smaller bundles cycle with a fresh shuffle. Every batch is scored against
/// its own bundle's label table. On return the model holds the parameters
/// of the best validation epoch.
RunRecord train_multisource(SparseformerClassifier& model, std::span<const DatasetBundle> bundles,
                            const TrainHooks& hooks = {});

RunRecord train_supervised(SparseformerClassifier& model, const DatasetBundle& bundle, const TrainHooks& hooks = {});

struct FewShotResult {
    std::size_t train_size = 0;
    std::size_t best_epoch = 0;
    std::vector<double> val_f1;
    EvalResult test;
};

/// Freezes the encoder and trains the label projector (or a fresh linear
/// head, per settings.fewshot_mode) on `shots` samples per class. Optimizer
/// and stopping settings come from `settings`.
FewShotResult fewshot_adapt(SparseformerClassifier& model, const DatasetBundle& target, std::size_t shots,
                            std::uint64_t seed, const TrainConfig& settings);

/// Scores the target test split with no parameter updates.
EvalResult zeroshot_eval(const SparseformerClassifier& model, const DatasetBundle& target);

nlohmann::json to_json(const EvalResult& result);

}  // namespace sparseformer
