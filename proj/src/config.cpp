#include "sparseformer/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace sparseformer {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (patience == 0 || patience > max_epochs) throw ConfigError("patience must lie in 1..max_epochs");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (lr_floor > learning_rate) throw ConfigError("lr_floor must not exceed learning_rate");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (labels.text_dim == 0 || labels.projector_hidden == 0) throw ConfigError("label dims must be positive");
    try {
        encoder.validate();
    } catch (const DimensionError& e) {
        throw ConfigError(e.what());
    }
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown(j,
                   {"max_epochs", "patience", "batch_size", "learning_rate", "lr_floor", "weight_decay", "betas", "eps",
                    "seed", "precision", "fewshot_mode", "encoder", "labels"},
                   "config");
    TrainConfig c;
    read(j, "max_epochs", c.max_epochs, "config");
    read(j, "patience", c.patience, "config");
    read(j, "batch_size", c.batch_size, "config");
    read(j, "learning_rate", c.learning_rate, "config");
    read(j, "lr_floor", c.lr_floor, "config");
    read(j, "weight_decay", c.weight_decay, "config");
    read(j, "eps", c.eps, "config");
    read(j, "seed", c.seed, "config");
    if (j.contains("betas")) {
        std::vector<double> b;
        read(j, "betas", b, "config");
        if (b.size() != 2) throw ConfigError("config.betas: expected two values");
        c.beta1 = b[0];
        c.beta2 = b[1];
    }
    if (j.contains("precision")) {
        std::string p;
        read(j, "precision", p, "config");
        if (p == "single") c.precision = Precision::Single;
        else if (p == "double") c.precision = Precision::Double;
        else throw ConfigError("config.precision: expected 'single' or 'double', got '" + p + "'");
    }
    if (j.contains("fewshot_mode")) {
        std::string m;
        read(j, "fewshot_mode", m, "config");
        if (m == "projector") c.fewshot_mode = FewShotMode::Projector;
        else if (m == "head") c.fewshot_mode = FewShotMode::Head;
        else throw ConfigError("config.fewshot_mode: expected 'projector' or 'head', got '" + m + "'");
    }
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        const std::string w = "config.encoder";
        reject_unknown(e,
                       {"model_dim", "num_heads", "dropout", "prior_dim", "window_sizes", "intra_tokens",
                        "inter_tokens", "cross_tokens", "max_patches", "positional", "head_hidden"},
                       w);
        read(e, "model_dim", c.encoder.attention.model_dim, w);
        read(e, "num_heads", c.encoder.attention.num_heads, w);
        read(e, "dropout", c.encoder.attention.dropout, w);
        read(e, "prior_dim", c.encoder.attention.prior_dim, w);
        read(e, "window_sizes", c.encoder.window_sizes, w);
        read(e, "intra_tokens", c.encoder.intra_tokens, w);
        read(e, "inter_tokens", c.encoder.inter_tokens, w);
        read(e, "cross_tokens", c.encoder.cross_tokens, w);
        read(e, "max_patches", c.encoder.max_patches, w);
        read(e, "positional", c.encoder.positional, w);
        read(e, "head_hidden", c.encoder.head_hidden, w);
    }
    if (j.contains("labels")) {
        const json& l = j.at("labels");
        const std::string w = "config.labels";
        reject_unknown(l, {"text_dim", "projector_hidden", "label_table", "prior_table"}, w);
        read(l, "text_dim", c.labels.text_dim, w);
        read(l, "projector_hidden", c.labels.projector_hidden, w);
        read(l, "label_table", c.labels.label_table, w);
        read(l, "prior_table", c.labels.prior_table, w);
    }
    c.validate();
    return c;
}

json to_json(const TrainConfig& c) {
    return json{
        {"max_epochs", c.max_epochs},
        {"patience", c.patience},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"lr_floor", c.lr_floor},
        {"weight_decay", c.weight_decay},
        {"betas", {c.beta1, c.beta2}},
        {"eps", c.eps},
        {"seed", c.seed},
        {"precision", c.precision == Precision::Single ? "single" : "double"},
        {"fewshot_mode", c.fewshot_mode == FewShotMode::Projector ? "projector" : "head"},
        {"encoder",
         {{"model_dim", c.encoder.attention.model_dim},
          {"num_heads", c.encoder.attention.num_heads},
          {"dropout", c.encoder.attention.dropout},
          {"prior_dim", c.encoder.attention.prior_dim},
          {"window_sizes", c.encoder.window_sizes},
          {"intra_tokens", c.encoder.intra_tokens},
          {"inter_tokens", c.encoder.inter_tokens},
          {"cross_tokens", c.encoder.cross_tokens},
          {"max_patches", c.encoder.max_patches},
          {"positional", c.encoder.positional},
          {"head_hidden", c.encoder.head_hidden}}},
        {"labels",
         {{"text_dim", c.labels.text_dim},
          {"projector_hidden", c.labels.projector_hidden},
          {"label_table", c.labels.label_table},
          {"prior_table", c.labels.prior_table}}},
    };
}

namespace {

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace

TrainConfig load_train_config(const std::filesystem::path& path) {
    TrainConfig c = train_config_from_json(read_json_file(path));
    if (const char* s = std::getenv("SPARSEFORMER_SEED")) {
        try {
            c.seed = std::stoull(s);
        } catch (const std::exception&) {
            throw ConfigError(std::string("SPARSEFORMER_SEED is not an unsigned integer: '") + s + "'");
        }
    }
    return c;
}

SynthSpec synth_spec_from_json(const json& j) {
    reject_unknown(j, {"seed", "name", "description", "length", "channels", "samples_per_class", "noise_std", "classes"},
                   "synth");
    SynthSpec s;
    read(j, "seed", s.seed, "synth");
    read(j, "name", s.name, "synth");
    read(j, "description", s.description, "synth");
    read(j, "length", s.length, "synth");
    read(j, "channels", s.channels, "synth");
    read(j, "samples_per_class", s.samples_per_class, "synth");
    read(j, "noise_std", s.noise_std, "synth");
    if (!j.contains("classes") || !j.at("classes").is_array()) throw ConfigError("synth.classes: expected an array");
    for (const auto& cj : j.at("classes")) {
        reject_unknown(cj, {"name", "description", "components", "samples"}, "synth.classes[]");
        ClassRecipe r;
        read(cj, "name", r.name, "synth.classes[]");
        read(cj, "description", r.description, "synth.classes[]");
        read(cj, "samples", r.samples, "synth.classes[]");
        if (!cj.contains("components") || !cj.at("components").is_array()) {
            throw ConfigError("synth.classes[].components: expected an array");
        }
        for (const auto& pj : cj.at("components")) {
            const std::string w = "synth.classes[].components[]";
            reject_unknown(pj, {"frequency", "amplitude", "channels", "scale"}, w);
            SignalComponent comp;
            read(pj, "frequency", comp.frequency, w);
            read(pj, "amplitude", comp.amplitude, w);
            read(pj, "channels", comp.channels, w);
            std::string scale = "coarse";
            read(pj, "scale", scale, w);
            if (scale == "fine") comp.scale = CueScale::Fine;
            else if (scale == "coarse") comp.scale = CueScale::Coarse;
            else throw ConfigError(w + ".scale: expected 'fine' or 'coarse'");
            r.components.push_back(std::move(comp));
        }
        s.classes.push_back(std::move(r));
    }
    s.validate();
    return s;
}

json to_json(const SynthSpec& s) {
    json classes = json::array();
    for (const auto& r : s.classes) {
        json comps = json::array();
        for (const auto& c : r.components) {
            comps.push_back({{"frequency", c.frequency},
                             {"amplitude", c.amplitude},
                             {"channels", c.channels},
                             {"scale", c.scale == CueScale::Fine ? "fine" : "coarse"}});
        }
        json cj{{"name", r.name}, {"description", r.description}, {"components", comps}};
        if (r.samples) cj["samples"] = r.samples;
        classes.push_back(std::move(cj));
    }
    return json{{"seed", s.seed},         {"name", s.name},
                {"description", s.description}, {"length", s.length},
                {"channels", s.channels}, {"samples_per_class", s.samples_per_class},
                {"noise_std", s.noise_std}, {"classes", classes}};
}

SynthSpec load_synth_spec(const std::filesystem::path& path) { return synth_spec_from_json(read_json_file(path)); }

}  // namespace sparseformer
