#include "sparseformer/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace sparseformer {

std::size_t parameter_count(const ParameterList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
}

namespace {

double evaluate(const std::function<Tensor()>& loss, const std::string& where) {
    NoGradGuard no_grad;
    const double v = loss().item();
    if (!std::isfinite(v)) throw GradCheckError("grad_check: non-finite loss while perturbing " + where);
    return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss, ParameterList params, double h) {
    PrecisionScope scope(Precision::Double);

    for (auto& p : params) p.tensor.zero_grad();
    Tensor value = loss();
    if (!std::isfinite(value.item())) throw GradCheckError("grad_check: non-finite loss at the base point");
    value.backward();

    GradCheckReport report;
    for (auto& p : params) {
        GradCheckEntry entry;
        entry.name = p.name;
        entry.numel = p.tensor.numel();
        std::vector<double> analytic(p.tensor.numel(), 0.0);
        if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());

        auto data = p.tensor.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double up = evaluate(loss, p.name);
            data[i] = orig - h;
            const double down = evaluate(loss, p.name);
            data[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > entry.max_rel_error || i == 0) {
                entry.max_rel_error = std::max(entry.max_rel_error, rel);
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        p.tensor.zero_grad();
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace sparseformer
