#include "sparseformer/diagnostics.hpp"

#include "sparseformer/ops.hpp"

namespace sparseformer {

TrainConfig toy_gradcheck_config(std::uint64_t seed) {
    TrainConfig c;
    c.seed = seed;
    c.precision = Precision::Double;
    c.encoder.window_sizes = {5, 10};
    c.encoder.intra_tokens = {6, 4};
    c.encoder.inter_tokens = 3;
    c.encoder.cross_tokens = 2;
    c.encoder.max_patches = 8;
    c.encoder.attention.model_dim = 8;
    c.encoder.attention.num_heads = 2;
    c.encoder.attention.prior_dim = 4;
    c.encoder.attention.dropout = 0.0;
    c.labels.text_dim = 8;
    c.labels.projector_hidden = 6;
    return c;
}

DatasetBundle toy_gradcheck_bundle(std::uint64_t seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.name = "toy";
    spec.length = 20;
    spec.channels = 2;
    spec.samples_per_class = 5;
    spec.noise_std = 0.3;
    // Channels carry different rhythms so channel tokens are distinct.
    spec.classes = {
        {"slow", "", {{1.0, 1.0, {0}, CueScale::Coarse}, {3.0, 1.0, {1}, CueScale::Fine}}},
        {"fast", "", {{4.0, 1.0, {0}, CueScale::Fine}, {2.0, 1.0, {1}, CueScale::Coarse}}},
        {"mixed", "", {{2.0, 1.0, {0}, CueScale::Coarse}, {5.0, 0.5, {1}, CueScale::Fine}}},
    };
    return generate_synthetic(spec);
}

void spread_queries(SparseformerClassifier& model, Rng& rng) {
    for (auto& p : model.parameters()) {
        if (!p.name.ends_with(".queries")) continue;
        for (double& v : p.tensor.mutable_data()) v = round_to_precision(rng.normal());
    }
}

GradCheckReport model_grad_check(const SparseformerClassifier& model, const DatasetBundle& bundle,
                                 std::span<const std::size_t> indices, Rng& rng, double h) {
    PrecisionScope scope(Precision::Double);
    const auto prior = model.prior_for(bundle);
    const auto texts = bundle.label_texts();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    const Tensor weights = gaussian({idx.size() * texts.size()}, 1.0, rng).detach();
    auto loss = [&] {
        Tensor logits = similarity_logits(model.encode(bundle, idx, prior), model.label_table(texts));
        return ops::dot(ops::flatten(logits), weights);
    };
    return grad_check(loss, model.parameters(), h);
}

GradCheckReport toy_model_grad_check(std::uint64_t seed, double h) {
    SparseformerClassifier model(toy_gradcheck_config(seed));
    Rng rng(mix_seed(seed, 0x6c));
    spread_queries(model, rng);
    const DatasetBundle bundle = toy_gradcheck_bundle(seed);
    const std::vector<std::size_t> idx{0, 5};
    return model_grad_check(model, bundle, idx, rng, h);
}

GradCheckReport block_grad_check(std::uint64_t seed, double h) {
    PrecisionScope scope(Precision::Double);
    Rng rng(seed);
    AttentionConfig cfg{8, 2, 0.0, 4};
    TsdaBlock block(cfg, 3, rng);
    const Tensor input = gaussian({5, 8}, 1.0, rng).detach();
    const Tensor prior_vec = gaussian({4}, 1.0, rng).detach();
    const Tensor weights = gaussian({3 * 8}, 1.0, rng).detach();
    PriorEmbedding prior{prior_vec, "toy"};
    ParameterList params;
    block.collect(params, "block");
    auto loss = [&] {
        return ops::dot(ops::flatten(block.forward(input, prior)), weights);
    };
    return grad_check(loss, params, h);
}

}  // namespace sparseformer
