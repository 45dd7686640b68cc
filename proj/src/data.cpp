#include "sparseformer/data.hpp"

#include "sparseformer/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace sparseformer {

using nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

std::string ClassInfo::label_text() const { return description.empty() ? name : name + " " + description; }

SeriesView DatasetBundle::sample(std::size_t i) const {
    const std::size_t stride = length * channels;
    return SeriesView{std::span<const float>(samples).subspan(i * stride, stride), length, channels};
}

std::vector<std::size_t> DatasetBundle::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

std::vector<std::string> DatasetBundle::label_texts() const {
    std::vector<const ClassInfo*> sorted;
    for (const auto& c : classes) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::vector<std::string> out;
    for (auto* c : sorted) out.push_back(c->label_text());
    return out;
}

void DatasetBundle::validate() const {
    if (length == 0 || channels == 0) throw DataError(name + ": length and channels must be positive");
    if (classes.empty()) throw DataError(name + ": no classes");
    std::set<int> ids;
    for (const auto& c : classes) {
        if (!ids.insert(c.id).second) throw DataError(name + ": class id " + std::to_string(c.id) + " listed twice");
    }
    const int M = static_cast<int>(classes.size());
    if (*ids.begin() != 1 || *ids.rbegin() != M) throw DataError(name + ": class ids must be exactly 1..M");
    if (samples.size() != labels.size() * length * channels) {
        throw DataError(name + ": " + std::to_string(samples.size()) + " sample values do not match N*L*C = " +
                        std::to_string(labels.size()) + "*" + std::to_string(length) + "*" + std::to_string(channels));
    }
    if (splits.size() != labels.size()) throw DataError(name + ": split assignment does not cover every sample");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 1 || labels[i] > M) {
            throw DataError(name + ": label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                            " outside 1.." + std::to_string(M));
        }
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!std::isfinite(samples[i])) throw DataError(name + ": non-finite sample value at index " + std::to_string(i));
    }
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(b, 4);
}

std::uint32_t decode_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle) {
    bundle.validate();
    std::filesystem::create_directories(dir);
    json meta;
    meta["name"] = bundle.name;
    meta["length"] = bundle.length;
    meta["channels"] = bundle.channels;
    meta["dataset_description"] = bundle.description;
    meta["count"] = bundle.count();
    json classes = json::array();
    for (const auto& c : bundle.classes) classes.push_back({{"id", c.id}, {"name", c.name}, {"description", c.description}});
    meta["classes"] = classes;
    meta["splits"] = {{"train", bundle.indices(Split::Train)},
                      {"val", bundle.indices(Split::Val)},
                      {"test", bundle.indices(Split::Test)}};
    std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

    std::ofstream samples(dir / "samples.f32", std::ios::binary);
    for (float v : bundle.samples) write_u32(samples, std::bit_cast<std::uint32_t>(v));
    std::ofstream labels(dir / "labels.i32", std::ios::binary);
    for (int v : bundle.labels) write_u32(labels, static_cast<std::uint32_t>(v));
    if (!samples || !labels) throw DataError("failed writing bundle files to " + dir.string());
}

DatasetBundle read_bundle(const std::filesystem::path& dir) {
    const auto meta_path = dir / "meta.json";
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw DataError("cannot open " + meta_path.string());
    json meta;
    try {
        meta_in >> meta;
    } catch (const json::exception& e) {
        throw DataError(meta_path.string() + ": " + e.what());
    }

    DatasetBundle b;
    std::size_t count = 0;
    try {
        b.name = meta.at("name").get<std::string>();
        b.length = meta.at("length").get<std::size_t>();
        b.channels = meta.at("channels").get<std::size_t>();
        b.description = meta.at("dataset_description").get<std::string>();
        count = meta.at("count").get<std::size_t>();
        for (const auto& c : meta.at("classes")) {
            b.classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(),
                                 c.value("description", std::string())});
        }
    } catch (const json::exception& e) {
        throw DataError(meta_path.string() + ": " + e.what());
    }

    const auto samples_path = dir / "samples.f32";
    const auto raw = read_file(samples_path);
    const std::size_t expected = count * b.length * b.channels;
    if (raw.size() != expected * 4) {
        throw DataError(samples_path.string() + ": size " + std::to_string(raw.size()) + " bytes, expected " +
                        std::to_string(expected * 4) + " for [" + std::to_string(count) + "][" +
                        std::to_string(b.length) + "][" + std::to_string(b.channels) + "]");
    }
    b.samples.resize(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        b.samples[i] = std::bit_cast<float>(decode_u32(raw.data() + 4 * i));
        if (!std::isfinite(b.samples[i])) {
            throw DataError(samples_path.string() + ": non-finite value at byte offset " + std::to_string(4 * i));
        }
    }

    const auto labels_path = dir / "labels.i32";
    const auto raw_labels = read_file(labels_path);
    if (raw_labels.size() != count * 4) {
        throw DataError(labels_path.string() + ": size " + std::to_string(raw_labels.size()) + " bytes, expected " +
                        std::to_string(count * 4));
    }
    const int M = static_cast<int>(b.classes.size());
    b.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        b.labels[i] = static_cast<std::int32_t>(decode_u32(raw_labels.data() + 4 * i));
        if (b.labels[i] < 1 || b.labels[i] > M) {
            throw DataError(labels_path.string() + ": unknown class id " + std::to_string(b.labels[i]) +
                            " at byte offset " + std::to_string(4 * i));
        }
    }

    b.splits.assign(count, Split::Train);
    std::vector<int> assigned(count, 0);
    try {
        const auto& splits = meta.at("splits");
        for (Split s : {Split::Train, Split::Val, Split::Test}) {
            for (std::size_t i : splits.at(split_name(s)).get<std::vector<std::size_t>>()) {
                if (i >= count) throw DataError(meta_path.string() + ": split index " + std::to_string(i) + " out of range");
                b.splits[i] = s;
                ++assigned[i];
            }
        }
    } catch (const json::exception& e) {
        throw DataError(meta_path.string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < count; ++i) {
        if (assigned[i] != 1) {
            throw DataError(meta_path.string() + ": sample " + std::to_string(i) + " appears in " +
                            std::to_string(assigned[i]) + " splits");
        }
    }
    b.validate();
    return b;
}

ChannelStats train_statistics(const DatasetBundle& bundle) {
    const auto train = bundle.indices(Split::Train);
    if (train.empty()) throw DataError(bundle.name + ": empty train split, cannot compute normalization");
    const std::size_t C = bundle.channels, L = bundle.length;
    ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
    const double n = static_cast<double>(train.size() * L);
    for (std::size_t i : train) {
        auto x = bundle.sample(i);
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c) s.mean[c] += x.at(t, c);
    }
    for (auto& m : s.mean) m /= n;
    for (std::size_t i : train) {
        auto x = bundle.sample(i);
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c) {
                const double d = x.at(t, c) - s.mean[c];
                s.stddev[c] += d * d;
            }
    }
    for (auto& v : s.stddev) v = std::sqrt(v / n);
    return s;
}

void apply_normalization(DatasetBundle& bundle, const ChannelStats& stats) {
    const std::size_t C = bundle.channels;
    for (std::size_t k = 0; k < bundle.samples.size(); ++k) {
        const std::size_t c = k % C;
        // Constant channels are only centred.
        const double sd = stats.stddev[c] > 1e-8 ? stats.stddev[c] : 1.0;
        bundle.samples[k] = static_cast<float>((bundle.samples[k] - stats.mean[c]) / sd);
    }
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
    DatasetBundle b = read_bundle(dir);
    apply_normalization(b, train_statistics(b));
    return b;
}

std::size_t SynthSpec::class_size(std::size_t k) const {
    return classes[k].samples ? classes[k].samples : samples_per_class;
}

void SynthSpec::validate() const {
    if (length == 0 || channels == 0) throw ConfigError("synth: length and channels must be positive");
    if (samples_per_class == 0) throw ConfigError("synth: samples_per_class must be positive");
    if (noise_std < 0.0) throw ConfigError("synth: noise_std must be non-negative");
    if (classes.empty()) throw ConfigError("synth: at least one class recipe is required");
    for (const auto& c : classes) {
        if (c.components.empty()) throw ConfigError("synth: class '" + c.name + "' has no signal components");
        for (const auto& comp : c.components) {
            if (!(comp.frequency > 0.0)) throw ConfigError("synth: frequencies must be positive");
            for (auto ch : comp.channels) {
                if (ch >= channels) throw ConfigError("synth: component channel " + std::to_string(ch) + " >= channels");
            }
        }
    }
    auto key = [](const ClassRecipe& r) {
        std::ostringstream os;
        for (const auto& c : r.components) {
            os << c.frequency << ':' << c.amplitude << ':' << static_cast<int>(c.scale) << ':';
            for (auto ch : c.channels) os << ch << ',';
            os << ';';
        }
        return os.str();
    };
    for (std::size_t i = 0; i < classes.size(); ++i)
        for (std::size_t j = i + 1; j < classes.size(); ++j)
            if (key(classes[i]) == key(classes[j])) {
                throw ConfigError("synth: classes '" + classes[i].name + "' and '" + classes[j].name +
                                  "' have identical recipes");
            }
}

namespace {

std::string describe_recipe(const ClassRecipe& r) {
    std::ostringstream os;
    for (std::size_t i = 0; i < r.components.size(); ++i) {
        const auto& c = r.components[i];
        if (i) os << " with ";
        os << (c.scale == CueScale::Fine ? "fast" : "slow") << " rhythm " << c.frequency << " cycles";
    }
    return os.str();
}

}  // namespace

DatasetBundle generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    DatasetBundle b;
    b.name = spec.name;
    b.description = spec.description;
    b.length = spec.length;
    b.channels = spec.channels;
    const std::size_t M = spec.classes.size();
    std::vector<std::size_t> first(M + 1, 0);
    for (std::size_t k = 0; k < M; ++k) first[k + 1] = first[k] + spec.class_size(k);
    const std::size_t N = first[M];
    const std::size_t L = spec.length, C = spec.channels;
    for (std::size_t k = 0; k < M; ++k) {
        const auto& r = spec.classes[k];
        b.classes.push_back({static_cast<int>(k + 1), r.name.empty() ? "class" + std::to_string(k + 1) : r.name,
                             r.description.empty() ? describe_recipe(r) : r.description});
    }
    b.samples.assign(N * L * C, 0.0f);
    b.labels.resize(N);

    std::vector<double> x(L * C);
    for (std::size_t k = 0; k < M; ++k) {
        const auto& recipe = spec.classes[k];
        for (std::size_t s = 0; s < spec.class_size(k); ++s) {
            const std::size_t i = first[k] + s;
            std::fill(x.begin(), x.end(), 0.0);
            for (const auto& comp : recipe.components) {
                const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                const double w = 2.0 * std::numbers::pi * comp.frequency / static_cast<double>(L);
                for (std::size_t c = 0; c < C; ++c) {
                    if (!comp.channels.empty() &&
                        std::find(comp.channels.begin(), comp.channels.end(), c) == comp.channels.end()) {
                        continue;
                    }
                    for (std::size_t t = 0; t < L; ++t) {
                        x[t * C + c] += comp.amplitude * std::sin(w * static_cast<double>(t) + phase);
                    }
                }
            }
            if (spec.noise_std > 0.0) {
                for (auto& v : x) v += rng.normal(0.0, spec.noise_std);
            }
            std::transform(x.begin(), x.end(), b.samples.begin() + static_cast<std::ptrdiff_t>(i * L * C),
                           [](double v) { return static_cast<float>(v); });
            b.labels[i] = static_cast<int>(k + 1);
        }
    }

    // Stratified 60/20/20: each class's shuffled samples take consecutive
    // positions of a global train,train,val,train,test cycle.
    static constexpr Split cycle[5] = {Split::Train, Split::Train, Split::Val, Split::Train, Split::Test};
    b.splits.assign(N, Split::Train);
    std::size_t position = 0;
    for (std::size_t k = 0; k < M; ++k) {
        std::vector<std::size_t> members(spec.class_size(k));
        for (std::size_t s = 0; s < members.size(); ++s) members[s] = first[k] + s;
        rng.shuffle(members);
        for (std::size_t i : members) b.splits[i] = cycle[position++ % 5];
    }
    return b;
}

std::vector<std::vector<std::size_t>> batches(const DatasetBundle& bundle, Split split, std::size_t batch_size,
                                              std::uint64_t seed) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    auto idx = bundle.indices(split);
    if (idx.empty()) {
        throw DataError(bundle.name + ": cannot iterate empty " + std::string(split_name(split)) + " split");
    }
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t end = std::min(idx.size(), start + batch_size);
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start), idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

DatasetBundle subsample_shots(const DatasetBundle& bundle, std::size_t shots, std::uint64_t seed) {
    if (shots == 0) throw ConfigError("shots must be positive");
    Rng rng(seed);
    std::vector<bool> keep(bundle.count(), false);
    for (std::size_t i = 0; i < bundle.count(); ++i) keep[i] = bundle.splits[i] != Split::Train;
    for (const auto& cls : bundle.classes) {
        std::vector<std::size_t> members;
        for (std::size_t i : bundle.indices(Split::Train))
            if (bundle.labels[i] == cls.id) members.push_back(i);
        if (members.size() < shots) {
            throw DataError(bundle.name + ": class '" + cls.name + "' has " + std::to_string(members.size()) +
                            " train samples, fewer than " + std::to_string(shots) + " shots");
        }
        // Partial Fisher-Yates: the first `shots` positions are a uniform draw without replacement.
        for (std::size_t j = 0; j < shots; ++j) {
            std::size_t r = j + rng.below(members.size() - j);
            std::swap(members[j], members[r]);
            keep[members[j]] = true;
        }
    }
    DatasetBundle out;
    out.name = bundle.name;
    out.length = bundle.length;
    out.channels = bundle.channels;
    out.classes = bundle.classes;
    out.description = bundle.description;
    const std::size_t stride = bundle.length * bundle.channels;
    for (std::size_t i = 0; i < bundle.count(); ++i) {
        if (!keep[i]) continue;
        out.samples.insert(out.samples.end(), bundle.samples.begin() + static_cast<std::ptrdiff_t>(i * stride),
                           bundle.samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
        out.labels.push_back(bundle.labels[i]);
        out.splits.push_back(bundle.splits[i]);
    }
    return out;
}

}  // namespace sparseformer
