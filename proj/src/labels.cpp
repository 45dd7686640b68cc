#include "sparseformer/labels.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sparseformer {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<double> hashed_text_embedding(const std::string& text, std::size_t dim) {
    if (dim == 0) throw std::invalid_argument("hashed_text_embedding: dim must be positive");
    std::vector<double> v(dim, 0.0);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        const std::uint64_t h = fnv1a64(token);
        const double sign = (h >> 63) == 0 ? 1.0 : -1.0;
        v[h % dim] += sign;
        token.clear();
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else {
            token.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return v;
}

HashedTextEmbedding::HashedTextEmbedding(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("HashedTextEmbedding: dim must be positive");
}

TableTextEmbedding::TableTextEmbedding(std::size_t dim, std::map<std::string, std::vector<double>> rows)
    : dim_(dim), rows_(std::move(rows)) {
    for (auto& [text, v] : rows_) {
        if (v.size() != dim_) {
            throw DimensionError("embedding table: entry '" + text + "' has " + std::to_string(v.size()) +
                                 " values, expected " + std::to_string(dim_));
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (norm > 0.0) {
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
        }
    }
}

std::vector<double> TableTextEmbedding::embed(const std::string& text) const {
    auto it = rows_.find(text);
    if (it == rows_.end()) throw LookupError("embedding table has no entry for text '" + text + "'");
    return it->second;
}

TableTextEmbedding TableTextEmbedding::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LookupError("cannot open embedding table " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("dim=", 0) != 0) {
        throw LookupError(path.string() + ": first line must be 'dim=<E>'");
    }
    const std::size_t dim = std::stoul(line.substr(4));
    std::map<std::string, std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) {
            throw LookupError(path.string() + ":" + std::to_string(lineno) + ": missing tab separator");
        }
        std::istringstream values(line.substr(tab + 1));
        std::vector<double> v;
        double x;
        while (values >> x) v.push_back(x);
        if (v.size() != dim) {
            throw LookupError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                              " values, got " + std::to_string(v.size()));
        }
        rows[line.substr(0, tab)] = std::move(v);
    }
    return TableTextEmbedding(dim, std::move(rows));
}

void TableTextEmbedding::save(const std::filesystem::path& path, std::size_t dim,
                              const std::map<std::string, std::vector<double>>& rows) {
    std::ofstream out(path);
    out << "dim=" << dim << "\n" << std::setprecision(17);
    for (const auto& [text, v] : rows) {
        out << text << '\t';
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
        out << "\n";
    }
}

PriorEmbedding make_prior(const std::string& description, const TextEmbeddingProvider& provider) {
    auto v = provider.embed(description);
    const std::size_t n = v.size();
    return PriorEmbedding{Tensor({n}, std::move(v)), description};
}

LabelProjector::LabelProjector(std::size_t text_dim, std::size_t hidden, std::size_t model_dim, Rng& rng)
    : w2_(xavier_uniform(text_dim, hidden, rng)),
      b_(Tensor::zeros({hidden}, true)),
      // Small output scale keeps initial similarity logits near zero.
      w1_(gaussian({hidden, model_dim}, 0.02, rng)) {}

Tensor LabelProjector::operator()(const Tensor& text_vectors) const {
    if (text_vectors.rank() != 2 || text_vectors.dim(1) != text_dim()) {
        throw DimensionError("label projector: input " + shape_str(text_vectors.shape()) + " does not have width " +
                             std::to_string(text_dim()));
    }
    return ops::matmul(ops::relu(ops::linear(text_vectors, w2_, b_)), w1_);
}

void LabelProjector::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".w2", w2_});
    out.push_back({prefix + ".b", b_});
    out.push_back({prefix + ".w1", w1_});
}

Tensor embed_texts(std::span<const std::string> texts, const TextEmbeddingProvider& provider) {
    if (texts.empty()) throw LabelError("embed_texts: no texts");
    const std::size_t E = provider.dim();
    std::vector<double> data;
    data.reserve(texts.size() * E);
    for (const auto& t : texts) {
        auto v = provider.embed(t);
        if (v.size() != E) throw DimensionError("embedding provider returned wrong dimension for '" + t + "'");
        data.insert(data.end(), v.begin(), v.end());
    }
    return Tensor({texts.size(), E}, std::move(data));
}

Tensor encode_label(const std::string& text, const TextEmbeddingProvider& provider, const LabelProjector& projector) {
    std::string one[1] = {text};
    return ops::flatten(projector(embed_texts(one, provider)));
}

LabelEmbeddingTable build_label_table(std::span<const std::string> texts, const TextEmbeddingProvider& provider,
                                      const LabelProjector& projector) {
    if (texts.size() < 2) throw LabelError("label table needs at least two classes");
    LabelEmbeddingTable table;
    table.texts.assign(texts.begin(), texts.end());
    table.vectors = projector(embed_texts(texts, provider));
    return table;
}

Tensor similarity(const Tensor& sample, const Tensor& label) {
    if (sample.numel() != label.numel()) {
        throw DimensionError("similarity: " + shape_str(sample.shape()) + " vs " + shape_str(label.shape()));
    }
    return ops::dot(sample, label);
}

Tensor similarity_logits(const Tensor& samples, const Tensor& table) {
    Tensor s = samples.rank() == 1 ? samples.reshape({1, samples.numel()}) : samples;
    return ops::matmul_nt(s, table);
}

Tensor classification_loss(const Tensor& samples, std::span<const int> class_ids, const Tensor& table) {
    const std::size_t M = table.dim(0);
    std::vector<std::size_t> targets;
    targets.reserve(class_ids.size());
    for (int id : class_ids) {
        if (id < 1 || static_cast<std::size_t>(id) > M) {
            throw LabelError("class id " + std::to_string(id) + " outside 1.." + std::to_string(M));
        }
        targets.push_back(static_cast<std::size_t>(id - 1));
    }
    return ops::cross_entropy(similarity_logits(samples, table), targets);
}

int argmax_lowest(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
        if (scores[j] > scores[best]) best = j;
    }
    return static_cast<int>(best) + 1;
}

int predict(const Tensor& sample, const Tensor& table) {
    NoGradGuard no_grad;
    Tensor logits = similarity_logits(sample, table);
    return argmax_lowest(logits.data());
}

}  // namespace sparseformer
