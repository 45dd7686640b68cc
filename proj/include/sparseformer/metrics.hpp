#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparseformer {

class MetricError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct ClassMetrics {
    int id = 0;
    std::size_t support = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auroc = 0.0;  // NaN when the class is degenerate
    double auprc = 0.0;
};

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    double f1_macro = 0.0;
    std::vector<ClassMetrics> per_class;
};

struct EvalResult {
    double accuracy = 0.0;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    double f1_macro = 0.0;
    double auroc_macro = 0.0;
    double auprc_macro = 0.0;
    std::vector<ClassMetrics> per_class;

    /// key=value lines
    std::string report() const;
};

/// Ids are 1-based. Precision/recall treat 0/0 as 0 and macro averages run
/// over all M classes, absent ones included.
ClassificationMetrics classification_metrics(std::span<const int> truth, std::span<const int> predicted,
                                             std::size_t num_classes);

/// One-vs-rest AUROC for class `id` from column id-1 of a row-major [N, M]
/// score matrix, via Mann-Whitney with midranks. NaN if degenerate.
double auroc_one_vs_rest(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes, int id);

/// Step average precision; descending score, ties in input order. NaN if degenerate.
double average_precision_one_vs_rest(std::span<const int> truth, std::span<const double> scores,
                                     std::size_t num_classes, int id);

/// Macro means over non-degenerate classes; throws MetricError if none.
double auroc_macro(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes);
double auprc_macro(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes);

/// All six metrics; predictions are argmax rows of `scores` (lowest id on ties).
EvalResult evaluate_scores(std::span<const int> truth, std::span<const double> scores, std::size_t num_classes);

}  // namespace sparseformer
