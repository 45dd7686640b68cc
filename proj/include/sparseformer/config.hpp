#pragma once

#include "sparseformer/data.hpp"
#include "sparseformer/encoder.hpp"
#include "sparseformer/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace sparseformer {

struct LabelConfig {
    std::size_t text_dim = 256;
    std::size_t projector_hidden = 256;
    std::string label_table;  // optional precomputed embedding file for class texts
    std::string prior_table;  // optional precomputed embedding file for dataset descriptions
};

enum class FewShotMode { Projector, Head };

struct TrainConfig {
    std::size_t max_epochs = 40;
    std::size_t patience = 7;
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    double lr_floor = -1.0;  // negative: learning_rate / 100
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    Precision precision = Precision::Single;
    FewShotMode fewshot_mode = FewShotMode::Projector;
    EncoderConfig encoder;
    LabelConfig labels;

    double floor_rate() const { return lr_floor < 0.0 ? learning_rate / 100.0 : lr_floor; }
    void validate() const;
};

/// Unknown keys anywhere in the document raise ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);

/// Reads a JSON config file; SPARSEFORMER_SEED, when set, overrides the seed.
TrainConfig load_train_config(const std::filesystem::path& path);

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthSpec& spec);
SynthSpec load_synth_spec(const std::filesystem::path& path);

}  // namespace sparseformer
