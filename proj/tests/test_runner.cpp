#include "sparseformer/classifier.hpp"
#include "sparseformer/config.hpp"
#include "sparseformer/diagnostics.hpp"
#include "sparseformer/optim.hpp"
#include "sparseformer/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace sparseformer;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(std::uint64_t seed = 0) {
    TrainConfig c = toy_gradcheck_config(seed);
    c.max_epochs = 3;
    c.patience = 3;
    c.batch_size = 8;
    c.learning_rate = 3e-3;
    return c;
}

DatasetBundle small_bundle(std::uint64_t seed, std::size_t per_class = 10, std::size_t length = 20,
                           std::size_t channels = 2, std::size_t classes = 3) {
    SynthSpec s;
    s.seed = seed;
    s.name = "small" + std::to_string(seed);
    s.length = length;
    s.channels = channels;
    s.samples_per_class = per_class;
    s.noise_std = 0.2;
    const std::vector<std::pair<std::string, double>> rhythms = {{"slow", 1.0}, {"fast", 5.0}, {"medium", 3.0}};
    for (std::size_t k = 0; k < classes; ++k) {
        s.classes.push_back({rhythms[k].first, "", {{rhythms[k].second, 1.0, {}, CueScale::Coarse}}});
    }
    return generate_synthetic(s);
}

// The recurrence written out for one scalar.
struct ScalarAdamW {
    double p, m = 0, v = 0;
    int t = 0;
    void step(double g, double lr, double b1, double b2, double eps, double wd) {
        ++t;
        p -= lr * wd * p;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        p -= lr * mh / (std::sqrt(vh) + eps);
    }
};

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("sf_runner_" + name);
    fs::remove_all(p);
    return p;
}

bool same_values(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (std::memcmp(a[k].data(), b[k].data(), a[k].size() * sizeof(double)) != 0 || a[k].size() != b[k].size())
            return false;
    return true;
}

}  // namespace

TEST(AdamW, ZeroGradientNoDecay) {
    PrecisionScope scope(Precision::Double);
    std::vector<double> p = {1.5, -2.0};
    const std::vector<double> g = {0.0, 0.0};
    AdamWState s;
    adamw_step(p, g, s, 0.1, {0.9, 0.999, 1e-8, 0.0});
    EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
    EXPECT_EQ(s.m, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(s.v, (std::vector<double>{0.0, 0.0}));
}

TEST(AdamW, ZeroGradientDecoupledDecay) {
    PrecisionScope scope(Precision::Double);
    std::vector<double> p = {1.0, -4.0};
    const std::vector<double> g = {0.0, 0.0};
    AdamWState s;
    adamw_step(p, g, s, 0.1, {0.9, 0.999, 1e-8, 0.1});
    EXPECT_DOUBLE_EQ(p[0], 0.99);
    EXPECT_DOUBLE_EQ(p[1], -3.96);
}

TEST(AdamW, ScalarHandTrace) {
    PrecisionScope scope(Precision::Double);
    std::vector<double> p = {1.0};
    AdamWState s;
    ScalarAdamW ref{1.0};
    const AdamWConfig cfg;
    adamw_step(p, std::vector<double>{1.0}, s, 0.1, cfg);
    ref.step(1.0, 0.1, 0.9, 0.999, 1e-8, cfg.weight_decay);
    EXPECT_DOUBLE_EQ(p[0], ref.p);
    EXPECT_NEAR(p[0], 0.9 - 0.1 * cfg.weight_decay, 1e-6);
    EXPECT_NEAR(s.m[0], 0.1, 1e-15);
    EXPECT_NEAR(s.v[0], 0.001, 1e-15);
    for (double g : {-0.5, 2.0, 0.25, 0.0, -3.0}) {
        adamw_step(p, std::vector<double>{g}, s, 0.05, cfg);
        ref.step(g, 0.05, 0.9, 0.999, 1e-8, cfg.weight_decay);
        EXPECT_NEAR(p[0], ref.p, 1e-15);
    }
    EXPECT_EQ(s.step, 6u);
}

TEST(AdamW, NonFiniteGradientRejected) {
    PrecisionScope scope(Precision::Double);
    std::vector<double> p = {1.0, 2.0};
    AdamWState s;
    adamw_step(p, std::vector<double>{0.3, 0.1}, s, 0.1, {});
    const auto p_before = p;
    const auto s_before = s;
    EXPECT_THROW(adamw_step(p, std::vector<double>{0.1, std::nan("")}, s, 0.1, {}), NumericError);
    EXPECT_THROW(adamw_step(p, std::vector<double>{INFINITY, 0.1}, s, 0.1, {}), NumericError);
    EXPECT_EQ(p, p_before);
    EXPECT_EQ(s.m, s_before.m);
    EXPECT_EQ(s.v, s_before.v);
    EXPECT_EQ(s.step, s_before.step);
}

TEST(AdamW, SingleModeRoundsToFloat) {
    std::vector<double> p = {1.0};
    AdamWState s;
    adamw_step(p, std::vector<double>{0.0}, s, 0.1, {0.9, 0.999, 1e-8, 0.1});
    EXPECT_EQ(p[0], static_cast<double>(static_cast<float>(0.99)));
}

TEST(AdamW, OptimizerTreatsMissingGradAsZero) {
    PrecisionScope scope(Precision::Double);
    Tensor a({2}, {1.0, 1.0}, true), b({1}, {2.0}, true);
    AdamW opt({{"a", a}, {"b", b}}, {0.9, 0.999, 1e-8, 0.5});
    ops::sum(a).backward();
    opt.step(0.1);
    EXPECT_DOUBLE_EQ(b.data()[0], 2.0 * (1.0 - 0.05));
    ScalarAdamW ref{1.0};
    ref.step(1.0, 0.1, 0.9, 0.999, 1e-8, 0.5);
    EXPECT_DOUBLE_EQ(a.data()[0], ref.p);
    opt.zero_grad();
    EXPECT_FALSE(a.has_grad() && a.grad()[0] != 0.0);
}

TEST(Cosine, Examples) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 40, 1e-4, 1e-6), 1e-4);
    EXPECT_DOUBLE_EQ(cosine_lr(40, 40, 1e-4, 1e-6), 1e-6);
    EXPECT_NEAR(cosine_lr(20, 40, 1e-4, 1e-6), (1e-4 + 1e-6) / 2, 1e-18);
    double prev = INFINITY;
    for (int t = 0; t <= 40; ++t) {
        const double lr = cosine_lr(t, 40, 1e-4, 1e-6);
        EXPECT_LE(lr, prev);
        EXPECT_NEAR(lr, 1e-6 + 0.5 * (1e-4 - 1e-6) * (1 + std::cos(std::numbers::pi * t / 40)), 1e-18);
        prev = lr;
    }
}

TEST(EarlyStop, PlateauTrace) {
    EarlyStopping stop(7);
    const std::vector<double> f1 = {0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6};
    std::size_t stopped = 0;
    for (std::size_t e = 1; e <= f1.size(); ++e) {
        if (stop.update(e, f1[e - 1])) {
            stopped = e;
            break;
        }
    }
    EXPECT_EQ(stopped, 9u);
    EXPECT_EQ(stop.best_epoch(), 2u);
    EXPECT_EQ(stop.best_score(), 0.6);
}

TEST(EarlyStop, ImprovementResetsAndZeroFirstScoreCounts) {
    EarlyStopping stop(2);
    EXPECT_FALSE(stop.update(1, 0.0));
    EXPECT_TRUE(stop.improved());
    EXPECT_FALSE(stop.update(2, 0.0));
    EXPECT_FALSE(stop.update(3, 0.1));
    EXPECT_EQ(stop.best_epoch(), 3u);
    EXPECT_FALSE(stop.update(4, 0.05));
    EXPECT_TRUE(stop.update(5, 0.1));
}

TEST(Config, DefaultsAndRoundTrip) {
    const TrainConfig d;
    EXPECT_EQ(d.max_epochs, 40u);
    EXPECT_EQ(d.patience, 7u);
    EXPECT_EQ(d.batch_size, 32u);
    EXPECT_EQ(d.learning_rate, 1e-4);
    EXPECT_EQ(d.weight_decay, 1e-2);
    EXPECT_EQ(d.floor_rate(), 1e-6);
    EXPECT_EQ(d.labels.projector_hidden, 256u);
    EXPECT_EQ(d.encoder.attention.prior_dim, 64u);
    const auto c = small_config(5);
    EXPECT_EQ(to_json(train_config_from_json(to_json(c))), to_json(c));
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"max_epoch": 3})")), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"encoder": {"heads": 2}})")), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"labels": {"dim": 2}})")), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"patience": 50})")), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"learning_rate": "fast"})")), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"precision": "half"})")), ConfigError);
}

TEST(Config, SeedEnvironmentOverride) {
    const auto dir = scratch("cfg");
    fs::create_directories(dir);
    std::ofstream(dir / "c.json") << R"({"seed": 3, "max_epochs": 5, "patience": 2})";
    unsetenv("SPARSEFORMER_SEED");
    EXPECT_EQ(load_train_config(dir / "c.json").seed, 3u);
    setenv("SPARSEFORMER_SEED", "41", 1);
    const auto c = load_train_config(dir / "c.json");
    unsetenv("SPARSEFORMER_SEED");
    EXPECT_EQ(c.seed, 41u);
    EXPECT_EQ(c.max_epochs, 5u);
    fs::remove_all(dir);
}

TEST(Checkpoint, BitIdenticalScores) {
    for (Precision prec : {Precision::Double, Precision::Single}) {
        auto cfg = small_config(2);
        cfg.precision = prec;
        SparseformerClassifier model(cfg);
        const auto bundle = small_bundle(1);
        const auto dir = scratch("ckpt");
        fs::create_directories(dir);
        save_checkpoint(dir / "m.spf", model);
        const auto loaded = load_checkpoint(dir / "m.spf");
        EXPECT_TRUE(same_values(model.snapshot(), loaded.snapshot()));
        const auto idx = bundle.indices(Split::Test);
        PrecisionScope scope(prec);
        const auto a = model.scores(bundle, idx), b = loaded.scores(bundle, idx);
        ASSERT_EQ(a.size(), b.size());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
        EXPECT_EQ(to_json(loaded.config()), to_json(model.config()));
        fs::remove_all(dir);
    }
}

TEST(Checkpoint, GarbageRejected) {
    const auto dir = scratch("garbage");
    fs::create_directories(dir);
    std::ofstream(dir / "x.spf") << "NOTACKPTxxxxxxxxxxxxxxxxx";
    EXPECT_THROW(load_checkpoint(dir / "x.spf"), DataError);
    EXPECT_THROW(load_checkpoint(dir / "missing.spf"), DataError);
    fs::remove_all(dir);
}

TEST(Training, InitialLossNearLnM) {
    SparseformerClassifier model(small_config(0));
    const auto bundle = small_bundle(0);
    const double l = mean_loss(model, bundle, Split::Train);
    EXPECT_LE(std::abs(l - std::log(3.0)), 0.05 * std::log(3.0)) << l;
}

TEST(Training, DeterministicRunRecord) {
    const auto bundle = small_bundle(3);
    SparseformerClassifier a(small_config(7)), b(small_config(7));
    const auto ra = train_supervised(a, bundle);
    const auto rb = train_supervised(b, bundle);
    EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
    EXPECT_TRUE(same_values(a.snapshot(), b.snapshot()));
    ASSERT_EQ(ra.epochs.size(), 3u);
    for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_DOUBLE_EQ(ra.epochs[e].learning_rate, cosine_lr(e, 3, 3e-3, 3e-5));
        EXPECT_TRUE(std::isfinite(ra.epochs[e].train_loss));
    }
}

TEST(Training, BestEpochHoldsMaxValF1AndModelIsRestored) {
    const auto bundle = small_bundle(4);
    auto cfg = small_config(1);
    cfg.max_epochs = 5;
    SparseformerClassifier model(cfg);
    const auto rec = train_supervised(model, bundle);
    double best = -1;
    for (const auto& e : rec.epochs) best = std::max(best, e.val_f1);
    EXPECT_EQ(rec.best_val_f1, best);
    EXPECT_EQ(rec.epochs[rec.best_epoch - 1].val_f1, best);
    EXPECT_DOUBLE_EQ(model.evaluate(bundle, Split::Val).f1_macro, best);
    ASSERT_EQ(rec.test.size(), 1u);
    const auto again = model.evaluate(bundle, Split::Test);
    EXPECT_EQ(again.f1_macro, rec.test[0].f1_macro);
    EXPECT_EQ(again.auroc_macro, rec.test[0].auroc_macro);
}

TEST(Training, SingleBundleMultisourceEqualsSupervised) {
    const auto bundle = small_bundle(5);
    SparseformerClassifier a(small_config(9)), b(small_config(9));
    const auto ra = train_supervised(a, bundle);
    const std::vector<DatasetBundle> one = {bundle};
    const auto rb = train_multisource(b, one);
    EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
}

TEST(Training, HeterogeneousBundlesInOneRun) {
    const std::vector<DatasetBundle> bundles = {small_bundle(6, 10, 25, 4, 2), small_bundle(7, 10, 40, 7, 3)};
    SparseformerClassifier a(small_config(3)), b(small_config(3));
    const auto ra = train_multisource(a, bundles);
    const auto rb = train_multisource(b, bundles);
    EXPECT_EQ(ra.bundles.size(), 2u);
    EXPECT_EQ(ra.test.size(), 2u);
    EXPECT_EQ(ra.epochs[0].val_f1_per_bundle.size(), 2u);
    EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
    EXPECT_EQ(ra.test[0].per_class.size(), 2u);
    EXPECT_EQ(ra.test[1].per_class.size(), 3u);
}

TEST(Training, NonFiniteLossAborts) {
    SparseformerClassifier model(small_config(0));
    model.projector_parameters()[0].tensor.mutable_data()[0] = std::nan("");
    try {
        train_supervised(model, small_bundle(0));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
    }
}

TEST(FewShot, FiveShotsThreeClassesAndFrozenEncoder) {
    for (FewShotMode mode : {FewShotMode::Projector, FewShotMode::Head}) {
        SparseformerClassifier model(small_config(4));
        auto settings = small_config(4);
        settings.fewshot_mode = mode;
        const auto target = small_bundle(8, 10);
        ParameterList enc = model.encoder_parameters();
        std::vector<std::vector<double>> before;
        for (const auto& p : enc) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        std::vector<std::vector<double>> proj_before;
        for (const auto& p : model.projector_parameters())
            proj_before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());

        const auto r = fewshot_adapt(model, target, 5, 11, settings);
        EXPECT_EQ(r.train_size, 15u);
        EXPECT_GE(r.best_epoch, 1u);
        std::vector<std::vector<double>> after;
        for (const auto& p : enc) after.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        EXPECT_TRUE(same_values(before, after));
        std::vector<std::vector<double>> proj_after;
        for (const auto& p : model.projector_parameters())
            proj_after.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        if (mode == FewShotMode::Head) {
            EXPECT_TRUE(same_values(proj_before, proj_after));
        } else {
            EXPECT_FALSE(same_values(proj_before, proj_after));
        }
        EXPECT_EQ(r.test.per_class.size(), 3u);
    }
}

TEST(FewShot, TooFewShotsPropagates) {
    SparseformerClassifier model(small_config(4));
    EXPECT_THROW(fewshot_adapt(model, small_bundle(8, 10), 7, 0, small_config(4)), DataError);
}

TEST(ZeroShot, SourceBundleReproducesEvaluate) {
    const auto bundle = small_bundle(9);
    SparseformerClassifier model(small_config(2));
    train_supervised(model, bundle);
    const auto snap = model.snapshot();
    const auto z = zeroshot_eval(model, bundle);
    const auto e = model.evaluate(bundle, Split::Test);
    EXPECT_EQ(to_json(z).dump(), to_json(e).dump());
    EXPECT_TRUE(same_values(snap, model.snapshot()));
}
