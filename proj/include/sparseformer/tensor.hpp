#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparseformer {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised on any incompatible extents. The message names the shapes involved.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class Precision { Single, Double };

/// Global run mode. In single mode every op output, leaf value and gradient is
/// rounded to the nearest 32-bit float, so stored values are exactly
/// representable as f32. Arithmetic inside an op is still carried in double.
Precision precision();
void set_precision(Precision p);
double round_to_precision(double v);

class PrecisionScope {
  public:
    explicit PrecisionScope(Precision p) : prev_(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(prev_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

  private:
    Precision prev_;
};

/// Disables graph recording for the current thread.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

    void accumulate(std::size_t i, double g);
    std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share the underlying node; use
/// clone() for a deep copy. Values are immutable once an op has consumed
/// them, except through mutable_data() on leaves (optimizer updates).
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor eye(std::size_t n);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return data()[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Reverse-mode sweep from this scalar: topologically orders the recorded
    /// graph and replays backward closures in reverse.
    void backward() const;

    Tensor clone() const;
    Tensor detach() const;
    Tensor reshape(Shape shape) const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor from_node(std::shared_ptr<detail::Node> node);

  private:
    std::shared_ptr<detail::Node> node_;
};

}  // namespace sparseformer
