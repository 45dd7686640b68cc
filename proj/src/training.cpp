#include "sparseformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace sparseformer {

using nlohmann::json;

namespace {

json metric_value(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

AdamWConfig adamw_config(const TrainConfig& c) { return AdamWConfig{c.beta1, c.beta2, c.eps, c.weight_decay}; }

void check_finite_loss(double loss, std::size_t epoch, std::size_t batch, const std::string& bundle) {
    if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                           " (" + bundle + ")");
    }
}

std::vector<int> labels_of(const DatasetBundle& bundle, std::span<const std::size_t> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(bundle.labels[i]);
    return out;
}

}  // namespace

json to_json(const EvalResult& r) {
    json per_class = json::array();
    for (const auto& c : r.per_class) {
        per_class.push_back({{"id", c.id},
                             {"support", c.support},
                             {"precision", c.precision},
                             {"recall", c.recall},
                             {"f1", c.f1},
                             {"auroc", metric_value(c.auroc)},
                             {"auprc", metric_value(c.auprc)}});
    }
    return json{{"accuracy", r.accuracy},
                {"precision_macro", r.precision_macro},
                {"recall_macro", r.recall_macro},
                {"f1_macro", r.f1_macro},
                {"auroc_macro", metric_value(r.auroc_macro)},
                {"auprc_macro", metric_value(r.auprc_macro)},
                {"per_class", per_class}};
}

json RunRecord::to_json() const {
    json epochs_json = json::array();
    for (const auto& e : epochs) {
        epochs_json.push_back({{"epoch", e.epoch},
                               {"learning_rate", e.learning_rate},
                               {"train_loss", e.train_loss},
                               {"val_f1", e.val_f1},
                               {"val_f1_per_bundle", e.val_f1_per_bundle}});
    }
    json test_json = json::array();
    for (const auto& t : test) test_json.push_back(sparseformer::to_json(t));
    return json{{"seed", seed},
                {"config", config},
                {"bundles", bundles},
                {"initial_loss", initial_loss},
                {"epochs", epochs_json},
                {"best_epoch", best_epoch},
                {"best_val_f1", best_val_f1},
                {"early_stopped", early_stopped},
                {"test", test_json}};
}

double mean_loss(const SparseformerClassifier& model, const DatasetBundle& bundle, Split split) {
    NoGradGuard no_grad;
    const auto idx = bundle.indices(split);
    if (idx.empty()) throw DataError(bundle.name + ": empty " + std::string(split_name(split)) + " split");
    const auto prior = model.prior_for(bundle);
    const Tensor table = model.label_table(bundle);
    const Tensor embeddings = model.encode(bundle, idx, prior);
    const auto ids = labels_of(bundle, idx);
    return classification_loss(embeddings, ids, table).item();
}

RunRecord train_multisource(SparseformerClassifier& model, std::span<const DatasetBundle> bundles,
                            const TrainHooks& hooks) {
    if (bundles.empty()) throw DataError("train_multisource: no bundles");
    const TrainConfig& cfg = model.config();
    PrecisionScope scope(cfg.precision);

    RunRecord record;
    record.seed = cfg.seed;
    record.config = to_json(cfg);
    std::vector<PriorEmbedding> priors;
    std::vector<std::vector<std::string>> texts;
    std::vector<std::size_t> batches_per_epoch;
    for (const auto& b : bundles) {
        b.validate();
        const std::size_t n_train = b.indices(Split::Train).size();
        if (n_train == 0) throw DataError(b.name + ": empty train split");
        if (b.indices(Split::Val).empty()) throw DataError(b.name + ": empty val split");
        record.bundles.push_back(b.name);
        priors.push_back(model.prior_for(b));
        texts.push_back(b.label_texts());
        batches_per_epoch.push_back((n_train + cfg.batch_size - 1) / cfg.batch_size);
        record.initial_loss.push_back(mean_loss(model, b, Split::Train));
    }
    const std::size_t rounds = *std::max_element(batches_per_epoch.begin(), batches_per_epoch.end());

    AdamW optimizer(model.parameters(), adamw_config(cfg));
    EarlyStopping stopper(cfg.patience);
    auto best = model.snapshot();

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        EpochRecord er;
        er.epoch = epoch;
        er.learning_rate = cosine_lr(static_cast<double>(epoch - 1), static_cast<double>(cfg.max_epochs),
                                     cfg.learning_rate, cfg.floor_rate());
        Rng dropout_rng(mix_seed(cfg.seed, 0x10000 + epoch));
        ForwardContext ctx{&dropout_rng, nullptr};

        // (bundle, cycle) -> shuffled batch list
        std::map<std::pair<std::size_t, std::size_t>, std::vector<std::vector<std::size_t>>> plans;
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t r = 0; r < rounds; ++r) {
            for (std::size_t b = 0; b < bundles.size(); ++b) {
                const std::size_t cycle = r / batches_per_epoch[b];
                auto key = std::make_pair(b, cycle);
                auto it = plans.find(key);
                if (it == plans.end()) {
                    const std::uint64_t tag = (epoch << 32) ^ (b << 16) ^ cycle;
                    it = plans.emplace(key, batches(bundles[b], Split::Train, cfg.batch_size, mix_seed(cfg.seed, tag)))
                             .first;
                }
                const auto& batch = it->second[r % batches_per_epoch[b]];

                Tensor table = model.label_table(texts[b]);
                Tensor embeddings = model.encode(bundles[b], batch, priors[b], ctx);
                const auto ids = labels_of(bundles[b], batch);
                Tensor loss = classification_loss(embeddings, ids, table);
                check_finite_loss(loss.item(), epoch, r, bundles[b].name);
                loss.backward();
                optimizer.step(er.learning_rate);
                optimizer.zero_grad();
                loss_sum += loss.item();
                ++loss_count;
            }
        }
        er.train_loss = loss_sum / static_cast<double>(loss_count);

        double f1_sum = 0.0;
        for (const auto& b : bundles) {
            const double f1 = model.evaluate(b, Split::Val).f1_macro;
            er.val_f1_per_bundle.push_back(f1);
            f1_sum += f1;
        }
        er.val_f1 = f1_sum / static_cast<double>(bundles.size());
        record.epochs.push_back(er);
        if (hooks.on_epoch) hooks.on_epoch(er);

        const bool stop = stopper.update(epoch, er.val_f1);
        if (stopper.improved()) best = model.snapshot();
        if (stop) {
            record.early_stopped = epoch < cfg.max_epochs;
            break;
        }
    }

    model.restore(best);
    record.best_epoch = stopper.best_epoch();
    record.best_val_f1 = stopper.best_score();
    for (const auto& b : bundles) {
        if (!b.indices(Split::Test).empty()) record.test.push_back(model.evaluate(b, Split::Test));
    }
    return record;
}

RunRecord train_supervised(SparseformerClassifier& model, const DatasetBundle& bundle, const TrainHooks& hooks) {
    return train_multisource(model, std::span<const DatasetBundle>(&bundle, 1), hooks);
}

namespace {

/// Frozen-backbone embeddings for one split.
struct FrozenSplit {
    Tensor embeddings;  // [n, D], constant
    std::vector<int> labels;
};

FrozenSplit freeze_split(const SparseformerClassifier& model, const DatasetBundle& bundle, Split split,
                         const PriorEmbedding& prior) {
    NoGradGuard no_grad;
    const auto idx = bundle.indices(split);
    if (idx.empty()) throw DataError(bundle.name + ": empty " + std::string(split_name(split)) + " split");
    return {model.encode(bundle, idx, prior).detach(), labels_of(bundle, idx)};
}

}  // namespace

FewShotResult fewshot_adapt(SparseformerClassifier& model, const DatasetBundle& target, std::size_t shots,
                            std::uint64_t seed, const TrainConfig& settings) {
    settings.validate();
    PrecisionScope scope(model.config().precision);
    const DatasetBundle sub = subsample_shots(target, shots, seed);
    const auto prior = model.prior_for(sub);
    const FrozenSplit train = freeze_split(model, sub, Split::Train, prior);
    const FrozenSplit val = freeze_split(model, sub, Split::Val, prior);
    const FrozenSplit test = freeze_split(model, sub, Split::Test, prior);
    const auto texts = sub.label_texts();
    const std::size_t M = sub.num_classes();

    FewShotResult result;
    result.train_size = train.labels.size();

    Rng init_rng(mix_seed(seed, 0xFE11));
    Linear head;
    ParameterList trainable;
    const bool head_mode = settings.fewshot_mode == FewShotMode::Head;
    if (head_mode) {
        head = Linear(model.encoder().config().model_dim(), M, init_rng);
        head.collect(trainable, "fewshot_head");
    } else {
        trainable = model.projector_parameters();
    }

    auto logits_for = [&](const Tensor& embeddings) {
        return head_mode ? head(embeddings) : similarity_logits(embeddings, model.label_table(texts));
    };
    auto snapshot = [&] {
        std::vector<std::vector<double>> s;
        for (const auto& p : trainable) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        return s;
    };
    auto restore = [&](const std::vector<std::vector<double>>& s) {
        for (std::size_t k = 0; k < trainable.size(); ++k) {
            auto d = trainable[k].tensor.mutable_data();
            std::copy(s[k].begin(), s[k].end(), d.begin());
        }
    };
    auto score = [&](const FrozenSplit& split) {
        NoGradGuard no_grad;
        Tensor logits = logits_for(split.embeddings);
        return evaluate_scores(split.labels, logits.data(), M);
    };

    AdamW optimizer(trainable, adamw_config(settings));
    EarlyStopping stopper(settings.patience);
    auto best = snapshot();
    for (std::size_t epoch = 1; epoch <= settings.max_epochs; ++epoch) {
        const double lr = cosine_lr(static_cast<double>(epoch - 1), static_cast<double>(settings.max_epochs),
                                    settings.learning_rate, settings.floor_rate());
        Rng order_rng(mix_seed(seed, 0xF000 + epoch));
        std::vector<std::size_t> order(train.labels.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
            const std::size_t end = std::min(order.size(), start + settings.batch_size);
            std::span<const std::size_t> rows(order.data() + start, end - start);
            std::vector<std::size_t> targets;
            for (std::size_t i : rows) targets.push_back(static_cast<std::size_t>(train.labels[i] - 1));
            Tensor loss = ops::cross_entropy(logits_for(ops::gather_rows(train.embeddings, rows)), targets);
            check_finite_loss(loss.item(), epoch, start / settings.batch_size, sub.name);
            loss.backward();
            optimizer.step(lr);
            optimizer.zero_grad();
        }
        const double f1 = score(val).f1_macro;
        result.val_f1.push_back(f1);
        const bool stop = stopper.update(epoch, f1);
        if (stopper.improved()) best = snapshot();
        if (stop) break;
    }
    restore(best);
    result.best_epoch = stopper.best_epoch();
    result.test = score(test);
    return result;
}

EvalResult zeroshot_eval(const SparseformerClassifier& model, const DatasetBundle& target) {
    PrecisionScope scope(model.config().precision);
    return model.evaluate(target, Split::Test);
}

}  // namespace sparseformer
