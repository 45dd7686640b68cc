#include "sparseformer/diagnostics.hpp"
#include "sparseformer/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace sparseformer;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
}

void print_eval(const std::string& prefix, const EvalResult& r) {
    std::istringstream lines(r.report());
    for (std::string line; std::getline(lines, line);) std::cout << prefix << line << "\n";
}

std::string run_report(const RunRecord& rec) {
    std::ostringstream out;
    out << "seed=" << rec.seed << "\n";
    out << "epochs=" << rec.epochs.size() << "\n";
    out << "best_epoch=" << rec.best_epoch << "\n";
    out << "best_val_f1=" << rec.best_val_f1 << "\n";
    out << "early_stopped=" << (rec.early_stopped ? "true" : "false") << "\n";
    for (std::size_t b = 0; b < rec.bundles.size(); ++b) {
        out << rec.bundles[b] << ".initial_loss=" << rec.initial_loss[b] << "\n";
        if (b < rec.test.size()) {
            std::istringstream lines(rec.test[b].report());
            for (std::string line; std::getline(lines, line);) out << rec.bundles[b] << ".test." << line << "\n";
        }
    }
    return out.str();
}

int train(const std::string& config_path, const std::vector<std::string>& data_dirs, const std::string& out_dir) {
    const TrainConfig config = load_train_config(config_path);
    std::vector<DatasetBundle> bundles;
    for (const auto& d : data_dirs) bundles.push_back(load_bundle(d));
    SparseformerClassifier model(config);
    TrainHooks hooks;
    hooks.on_epoch = [](const EpochRecord& e) {
        std::cerr << "epoch " << e.epoch << " lr=" << e.learning_rate << " loss=" << e.train_loss
                  << " val_f1=" << e.val_f1 << "\n";
    };
    const RunRecord rec = train_multisource(model, bundles, hooks);
    fs::create_directories(out_dir);
    save_checkpoint(fs::path(out_dir) / "checkpoint.spf", model);
    write_text(fs::path(out_dir) / "run.json", rec.to_json().dump(2) + "\n");
    const std::string report = run_report(rec);
    write_text(fs::path(out_dir) / "report.txt", report);
    std::cout << report;
    return 0;
}

int eval(const std::string& checkpoint, const std::string& data, bool zeroshot) {
    const SparseformerClassifier model = load_checkpoint(checkpoint);
    const DatasetBundle bundle = load_bundle(data);
    print_eval("test.", zeroshot ? zeroshot_eval(model, bundle) : model.evaluate(bundle, Split::Test));
    return 0;
}

int fewshot(const std::string& checkpoint, const std::string& data, std::size_t shots, std::uint64_t seed,
            const std::string& config_path, const std::string& mode) {
    SparseformerClassifier model = load_checkpoint(checkpoint);
    TrainConfig settings = config_path.empty() ? model.config() : load_train_config(config_path);
    if (mode == "head") settings.fewshot_mode = FewShotMode::Head;
    else if (mode == "projector") settings.fewshot_mode = FewShotMode::Projector;
    const DatasetBundle bundle = load_bundle(data);
    const FewShotResult r = fewshot_adapt(model, bundle, shots, seed, settings);
    std::cout << "train_size=" << r.train_size << "\nbest_epoch=" << r.best_epoch << "\n";
    print_eval("test.", r.test);
    return 0;
}

int synth(const std::string& spec_path, const std::string& out_dir) {
    const SynthSpec spec = load_synth_spec(spec_path);
    const DatasetBundle bundle = generate_synthetic(spec);
    save_bundle(out_dir, bundle);
    std::cout << "name=" << bundle.name << "\ncount=" << bundle.count() << "\nlength=" << bundle.length
              << "\nchannels=" << bundle.channels << "\nclasses=" << bundle.num_classes() << "\n";
    return 0;
}

int gradcheck(bool full) {
    const auto start = std::chrono::steady_clock::now();
    GradCheckReport report;
    if (full) {
        report = toy_model_grad_check();
    } else {
        report = block_grad_check();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& e : report.entries) std::cout << e.name << "=" << e.max_rel_error << "\n";
    std::cout << "max_rel_error=" << report.max_rel_error() << "\nseconds=" << seconds << "\n";
    const bool ok = report.passed(1e-4);
    std::cout << "passed=" << (ok ? "true" : "false") << "\n";
    return ok ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparseformer time-series classifier"};
    app.require_subcommand(1);

    std::string config, out, checkpoint, data, spec, mode;
    std::vector<std::string> datas;
    std::size_t shots = 5;
    std::uint64_t seed = 0;
    bool full = false;

    auto* c_train = app.add_subcommand("train", "Supervised training on one bundle");
    c_train->add_option("--config", config)->required();
    c_train->add_option("--data", data)->required();
    c_train->add_option("--out", out)->required();

    auto* c_multi = app.add_subcommand("train-multi", "Multi-source pre-training");
    c_multi->add_option("--config", config)->required();
    c_multi->add_option("--data", datas)->required();
    c_multi->add_option("--out", out)->required();

    auto* c_eval = app.add_subcommand("eval", "Test-split metrics for a checkpoint");
    c_eval->add_option("--checkpoint", checkpoint)->required();
    c_eval->add_option("--data", data)->required();

    auto* c_few = app.add_subcommand("fewshot", "Few-shot adaptation with a frozen encoder");
    c_few->add_option("--checkpoint", checkpoint)->required();
    c_few->add_option("--data", data)->required();
    c_few->add_option("--shots", shots)->required();
    c_few->add_option("--seed", seed)->required();
    c_few->add_option("--config", config, "optimizer settings (default: checkpoint config)");
    c_few->add_option("--mode", mode, "projector or head")->check(CLI::IsMember({"projector", "head"}));

    auto* c_zero = app.add_subcommand("zeroshot", "Zero-shot evaluation via label texts");
    c_zero->add_option("--checkpoint", checkpoint)->required();
    c_zero->add_option("--data", data)->required();

    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic bundle");
    c_synth->add_option("--spec", spec)->required();
    c_synth->add_option("--out", out)->required();

    auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    c_grad->add_flag("--full", full, "whole toy model instead of one block");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*c_train) return train(config, {data}, out);
        if (*c_multi) return train(config, datas, out);
        if (*c_eval) return eval(checkpoint, data, false);
        if (*c_few) return fewshot(checkpoint, data, shots, seed, config, mode);
        if (*c_zero) return eval(checkpoint, data, true);
        if (*c_synth) return synth(spec, out);
        if (*c_grad) return gradcheck(full);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const LabelError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const LookupError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const GradCheckError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
