#pragma once

#include "sparseformer/tensor.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparseformer {

struct NamedParameter {
    std::string name;
    Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

std::size_t parameter_count(const ParameterList& params);

class GradCheckError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct GradCheckEntry {
    std::string name;
    std::size_t numel = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error() const;
    bool passed(double tol) const { return max_rel_error() <= tol; }
};

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences (f(θ+h) − f(θ−h)) / 2h, elementwise, for every entry of every
/// listed parameter. Relative error = |a − n| / max(|a|, |n|, 1e-8).
/// Runs in double precision regardless of the current mode. `loss` must be
/// deterministic. Throws GradCheckError if the loss becomes non-finite.
GradCheckReport grad_check(const std::function<Tensor()>& loss, ParameterList params, double h = 1e-5);

}  // namespace sparseformer
