#include "sparseformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace sparseformer {

namespace {

void check_ids(std::span<const int> ids, std::size_t M, const char* what) {
    for (int id : ids) {
        if (id < 1 || static_cast<std::size_t>(id) > M) {
            throw MetricError(std::string(what) + " id " + std::to_string(id) + " outside 1.." + std::to_string(M));
        }
    }
}

void check_scores(std::span<const int> truth, std::span<const double> scores, std::size_t M) {
    if (truth.empty()) throw MetricError("ranking metric needs at least one sample");
    if (scores.size() != truth.size() * M) {
        throw MetricError("score matrix has " + std::to_string(scores.size()) + " entries, expected " +
                          std::to_string(truth.size()) + "x" + std::to_string(M));
    }
    check_ids(truth, M, "true");
    for (double s : scores) {
        if (!std::isfinite(s)) throw MetricError("non-finite score");
    }
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

ClassificationMetrics classification_metrics(std::span<const int> truth, std::span<const int> predicted,
                                             std::size_t num_classes) {
    if (truth.empty() || truth.size() != predicted.size()) {
        throw MetricError("classification_metrics: need equally sized non-empty id lists");
    }
    check_ids(truth, num_classes, "true");
    check_ids(predicted, num_classes, "predicted");
    const std::size_t M = num_classes;
    std::vector<std::size_t> tp(M, 0), fp(M, 0), fn(M, 0), support(M, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = static_cast<std::size_t>(truth[i] - 1), p = static_cast<std::size_t>(predicted[i] - 1);
        ++support[t];
        if (t == p) {
            ++tp[t];
            ++correct;
        } else {
            ++fp[p];
            ++fn[t];
        }
    }
    ClassificationMetrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    for (std::size_t k = 0; k < M; ++k) {
        ClassMetrics c;
        c.id = static_cast<int>(k + 1);
        c.support = support[k];
        const double pd = static_cast<double>(tp[k] + fp[k]);
        const double rd = static_cast<double>(tp[k] + fn[k]);
        c.precision = pd > 0 ? static_cast<double>(tp[k]) / pd : 0.0;
        c.recall = rd > 0 ? static_cast<double>(tp[k]) / rd : 0.0;
        c.f1 = c.precision + c.recall > 0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
        m.precision_macro += c.precision;
        m.recall_macro += c.recall;
        m.f1_macro += c.f1;
        m.per_class.push_back(c);
    }
    m.precision_macro /= static_cast<double>(M);
    m.recall_macro /= static_cast<double>(M);
    m.f1_macro /= static_cast<double>(M);
    return m;
}

double auroc_one_vs_rest(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes, int id) {
    check_scores(truth, scores, num_classes);
    const std::size_t N = truth.size(), col = static_cast<std::size_t>(id - 1);
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a * num_classes + col] < scores[b * num_classes + col]; });
    // Midranks (1-based) over tied groups.
    std::vector<double> rank(N);
    for (std::size_t i = 0; i < N;) {
        std::size_t j = i;
        const double v = scores[order[i] * num_classes + col];
        while (j < N && scores[order[j] * num_classes + col] == v) ++j;
        const double mid = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) rank[order[k]] = mid;
        i = j;
    }
    double pos = 0, rank_sum = 0;
    for (std::size_t i = 0; i < N; ++i) {
        if (truth[i] == id) {
            ++pos;
            rank_sum += rank[i];
        }
    }
    const double neg = static_cast<double>(N) - pos;
    if (pos == 0 || neg == 0) return kNaN;
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double average_precision_one_vs_rest(std::span<const int> truth, std::span<const double> scores,
                                     std::size_t num_classes, int id) {
    check_scores(truth, scores, num_classes);
    const std::size_t N = truth.size(), col = static_cast<std::size_t>(id - 1);
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a * num_classes + col] > scores[b * num_classes + col];
    });
    const auto positives = static_cast<double>(std::count(truth.begin(), truth.end(), id));
    if (positives == 0 || positives == static_cast<double>(N)) return kNaN;
    double hits = 0, ap = 0;
    for (std::size_t r = 0; r < N; ++r) {
        if (truth[order[r]] == id) {
            ++hits;
            ap += (hits / static_cast<double>(r + 1)) / positives;
        }
    }
    return ap;
}

namespace {

template <typename Fn>
double macro_over_defined(std::span<const int> truth, std::span<const double> scores, std::size_t M, Fn fn,
                          const char* name) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t k = 1; k <= M; ++k) {
        const double v = fn(truth, scores, M, static_cast<int>(k));
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    }
    if (n == 0) throw MetricError(std::string(name) + ": every class lacks positives or negatives");
    return sum / static_cast<double>(n);
}

}  // namespace

double auroc_macro(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes) {
    return macro_over_defined(truth, scores, num_classes, auroc_one_vs_rest, "auroc_macro");
}

double auprc_macro(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes) {
    return macro_over_defined(truth, scores, num_classes, average_precision_one_vs_rest, "auprc_macro");
}

EvalResult evaluate_scores(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes) {
    check_scores(truth, scores, num_classes);
    std::vector<int> predicted(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double* row = scores.data() + i * num_classes;
        predicted[i] = static_cast<int>(std::max_element(row, row + num_classes) - row) + 1;
    }
    auto cm = classification_metrics(truth, predicted, num_classes);
    EvalResult r;
    r.accuracy = cm.accuracy;
    r.precision_macro = cm.precision_macro;
    r.recall_macro = cm.recall_macro;
    r.f1_macro = cm.f1_macro;
    r.per_class = std::move(cm.per_class);
    for (auto& c : r.per_class) {
        c.auroc = auroc_one_vs_rest(truth, scores, num_classes, c.id);
        c.auprc = average_precision_one_vs_rest(truth, scores, num_classes, c.id);
    }
    // Ranking metrics are undefined when the split holds a single class.
    try {
        r.auroc_macro = auroc_macro(truth, scores, num_classes);
        r.auprc_macro = auprc_macro(truth, scores, num_classes);
    } catch (const MetricError&) {
        r.auroc_macro = kNaN;
        r.auprc_macro = kNaN;
    }
    return r;
}

std::string EvalResult::report() const {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "accuracy=" << accuracy << "\n"
       << "precision_macro=" << precision_macro << "\n"
       << "recall_macro=" << recall_macro << "\n"
       << "f1_macro=" << f1_macro << "\n"
       << "auroc_macro=" << auroc_macro << "\n"
       << "auprc_macro=" << auprc_macro << "\n";
    for (const auto& c : per_class) {
        os << "class" << c.id << ".support=" << c.support << "\n"
           << "class" << c.id << ".precision=" << c.precision << "\n"
           << "class" << c.id << ".recall=" << c.recall << "\n"
           << "class" << c.id << ".f1=" << c.f1 << "\n"
           << "class" << c.id << ".auroc=" << c.auroc << "\n"
           << "class" << c.id << ".auprc=" << c.auprc << "\n";
    }
    return os.str();
}

}  // namespace sparseformer
