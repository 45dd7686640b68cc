#include "sparseformer/classifier.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sparseformer {

using nlohmann::json;

namespace {

std::shared_ptr<const TextEmbeddingProvider> make_provider(const std::string& table, std::size_t dim,
                                                           const char* what) {
    if (table.empty()) return std::make_shared<HashedTextEmbedding>(dim);
    auto loaded = std::make_shared<TableTextEmbedding>(TableTextEmbedding::load(table));
    if (loaded->dim() != dim) {
        throw ConfigError(std::string(what) + " table " + table + " has dim " + std::to_string(loaded->dim()) +
                          ", config expects " + std::to_string(dim));
    }
    return loaded;
}

}  // namespace

SparseformerClassifier::SparseformerClassifier(const TrainConfig& config) : config_(config) {
    config_.validate();
    PrecisionScope scope(config_.precision);
    Rng rng(config_.seed);
    encoder_ = SparseformerModel(config_.encoder, rng);
    projector_ = LabelProjector(config_.labels.text_dim, config_.labels.projector_hidden, config_.encoder.model_dim(), rng);
    label_provider_ = make_provider(config_.labels.label_table, config_.labels.text_dim, "label");
    if (config_.encoder.attention.prior_dim > 0) {
        prior_provider_ = make_provider(config_.labels.prior_table, config_.encoder.attention.prior_dim, "prior");
    }
}

SparseformerClassifier SparseformerClassifier::clone() const {
    SparseformerClassifier copy(config_);
    copy.restore(snapshot());
    return copy;
}

PriorEmbedding SparseformerClassifier::prior_for(const DatasetBundle& bundle) const {
    if (!prior_provider_) return PriorEmbedding{Tensor(), bundle.description};
    return make_prior(bundle.description, *prior_provider_);
}

Tensor SparseformerClassifier::label_table(const DatasetBundle& bundle) const {
    const auto texts = bundle.label_texts();
    return label_table(texts);
}

Tensor SparseformerClassifier::label_table(std::span<const std::string> texts) const {
    return build_label_table(texts, *label_provider_, projector_).vectors;
}

Tensor SparseformerClassifier::encode(const DatasetBundle& bundle, std::span<const std::size_t> indices,
                                      const PriorEmbedding& prior, const ForwardContext& ctx) const {
    std::vector<Tensor> rows;
    rows.reserve(indices.size());
    for (std::size_t i : indices) rows.push_back(encoder_.encode_sample(bundle.sample(i), prior, ctx));
    return ops::stack_rows(rows);
}

std::vector<double> SparseformerClassifier::scores(const DatasetBundle& bundle,
                                                   std::span<const std::size_t> indices) const {
    const auto texts = bundle.label_texts();
    return scores(bundle, indices, texts);
}

std::vector<double> SparseformerClassifier::scores(const DatasetBundle& bundle, std::span<const std::size_t> indices,
                                                   std::span<const std::string> label_texts) const {
    NoGradGuard no_grad;
    if (indices.empty()) return {};
    const PriorEmbedding prior = prior_for(bundle);
    Tensor table = label_table(label_texts);
    Tensor logits = similarity_logits(encode(bundle, indices, prior), table);
    return {logits.data().begin(), logits.data().end()};
}

EvalResult SparseformerClassifier::evaluate(const DatasetBundle& bundle, Split split) const {
    const auto idx = bundle.indices(split);
    if (idx.empty()) throw DataError(bundle.name + ": cannot evaluate empty " + std::string(split_name(split)) + " split");
    const auto s = scores(bundle, idx);
    std::vector<int> truth;
    for (std::size_t i : idx) truth.push_back(bundle.labels[i]);
    return evaluate_scores(truth, s, bundle.num_classes());
}

ParameterList SparseformerClassifier::projector_parameters() const {
    ParameterList out;
    projector_.collect(out, "projector");
    return out;
}

ParameterList SparseformerClassifier::parameters() const {
    ParameterList out = encoder_parameters();
    projector_.collect(out, "projector");
    return out;
}

std::vector<std::vector<double>> SparseformerClassifier::snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& p : parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

void SparseformerClassifier::restore(const std::vector<std::vector<double>>& values) {
    auto params = parameters();
    if (values.size() != params.size()) throw DimensionError("restore: snapshot does not match parameter list");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto dst = params[k].tensor.mutable_data();
        if (values[k].size() != dst.size()) throw DimensionError("restore: size mismatch for " + params[k].name);
        std::copy(values[k].begin(), values[k].end(), dst.begin());
    }
}

namespace {

constexpr char kMagic[8] = {'S', 'P', 'F', 'C', 'K', 'P', 'T', '1'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SparseformerClassifier& model) {
    const bool single = model.config().precision == Precision::Single;
    json manifest;
    manifest["format"] = "sparseformer-checkpoint";
    manifest["version"] = 1;
    manifest["precision"] = single ? "f32" : "f64";
    manifest["byte_order"] = "little";
    manifest["config"] = to_json(model.config());
    json entries = json::array();
    std::string payload;
    for (const auto& p : model.parameters()) {
        entries.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", payload.size()}, {"count", p.tensor.numel()}});
        for (double v : p.tensor.data()) {
            if (single) put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
            else put_le(payload, std::bit_cast<std::uint64_t>(v), 8);
        }
    }
    manifest["parameters"] = entries;
    manifest["payload_bytes"] = payload.size();

    const std::string text = manifest.dump();
    std::string header(kMagic, kMagic + 8);
    put_le(header, text.size(), 8);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

SparseformerClassifier load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw DataError(path.string() + ": not a sparseformer checkpoint");
    }
    const std::uint64_t mlen = get_le(bytes.data() + 8, 8);
    if (16 + mlen > bytes.size()) throw DataError(path.string() + ": truncated manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(mlen));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad manifest: " + e.what());
    }
    const unsigned char* payload = bytes.data() + 16 + mlen;
    const std::size_t payload_size = bytes.size() - 16 - mlen;

    TrainConfig config = train_config_from_json(manifest.at("config"));
    const std::string prec = manifest.at("precision").get<std::string>();
    if (prec != "f32" && prec != "f64") throw DataError(path.string() + ": unknown precision " + prec);
    const bool single = prec == "f32";
    const std::size_t width = single ? 4 : 8;

    SparseformerClassifier model(config);
    auto params = model.parameters();
    const auto& entries = manifest.at("parameters");
    if (entries.size() != params.size()) {
        throw DataError(path.string() + ": checkpoint holds " + std::to_string(entries.size()) +
                        " parameters, model expects " + std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& e = entries[k];
        auto& t = params[k].tensor;
        if (e.at("name").get<std::string>() != params[k].name || e.at("shape").get<Shape>() != t.shape()) {
            throw DataError(path.string() + ": parameter " + e.at("name").get<std::string>() + " does not match " +
                            params[k].name + " " + shape_str(t.shape()));
        }
        const std::size_t offset = e.at("offset").get<std::size_t>();
        const std::size_t count = e.at("count").get<std::size_t>();
        if (count != t.numel() || offset + count * width > payload_size) {
            throw DataError(path.string() + ": payload range for " + params[k].name + " is invalid");
        }
        auto dst = t.mutable_data();
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned char* p = payload + offset + i * width;
            dst[i] = single ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p, 4))))
                            : std::bit_cast<double>(get_le(p, 8));
        }
    }
    return model;
}

}  // namespace sparseformer
