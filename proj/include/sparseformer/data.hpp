#pragma once

#include "sparseformer/encoder.hpp"
#include "sparseformer/errors.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sparseformer {

enum class Split : std::uint8_t { Train, Val, Test };

const char* split_name(Split s);

struct ClassInfo {
    int id = 0;  // 1-based
    std::string name;
    std::string description;

    /// Text fed to the label encoder: name followed by description.
    std::string label_text() const;
};

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct DatasetBundle {
    std::string name;
    std::size_t length = 0;    // L
    std::size_t channels = 0;  // C
    std::vector<ClassInfo> classes;
    std::string description;
    std::vector<float> samples;  // row-major [N][L][C]
    std::vector<int> labels;     // [N], 1..M
    std::vector<Split> splits;   // [N]

    std::size_t count() const { return labels.size(); }
    std::size_t num_classes() const { return classes.size(); }
    SeriesView sample(std::size_t i) const;
    std::vector<std::size_t> indices(Split s) const;
    std::vector<std::string> label_texts() const;  // ordered by class id

    /// Checks every structural invariant; throws DataError.
    void validate() const;
};

/// Writes meta.json, samples.f32 and labels.i32 into `dir` (created if needed).
void save_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle);

/// Reads a bundle exactly as stored.
DatasetBundle read_bundle(const std::filesystem::path& dir);

/// Per-channel z-score statistics over the train split.
ChannelStats train_statistics(const DatasetBundle& bundle);
void apply_normalization(DatasetBundle& bundle, const ChannelStats& stats);

/// read_bundle followed by train-split z-score normalization of all splits.
DatasetBundle load_bundle(const std::filesystem::path& dir);

enum class CueScale { Fine, Coarse };

struct SignalComponent {
    double frequency = 1.0;  // cycles per sample window
    double amplitude = 1.0;
    std::vector<std::size_t> channels;  // empty: every channel
    CueScale scale = CueScale::Coarse;
};

struct ClassRecipe {
    std::string name;
    std::string description;  // generated from the components when empty
    std::vector<SignalComponent> components;
    std::size_t samples = 0;  // 0: SynthSpec::samples_per_class
};

struct SynthSpec {
    std::uint64_t seed = 0;
    std::string name = "synthetic";
    std::string description = "synthetic multichannel rhythm recordings";
    std::size_t length = 128;
    std::size_t channels = 2;
    std::size_t samples_per_class = 100;
    double noise_std = 0.1;
    std::vector<ClassRecipe> classes;

    std::size_t class_size(std::size_t k) const;
    void validate() const;
};

/// Each sample is the sum of its class's sinusoids (random phase per sample
/// and component, shared across the component's channels) plus Gaussian
/// noise. Splits are stratified 60/20/20.
DatasetBundle generate_synthetic(const SynthSpec& spec);

/// Shuffled index batches covering `split` once; the last batch may be partial.
std::vector<std::vector<std::size_t>> batches(const DatasetBundle& bundle, Split split, std::size_t batch_size,
                                              std::uint64_t seed);

/// Copy of `bundle` whose train split holds exactly `shots` samples per class.
DatasetBundle subsample_shots(const DatasetBundle& bundle, std::size_t shots, std::uint64_t seed);

}  // namespace sparseformer
