#include "sparseformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sparseformer {

namespace {

Precision g_precision = Precision::Single;
thread_local bool t_grad_enabled = true;

}  // namespace

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

double round_to_precision(double v) {
    if (g_precision == Precision::Single) return static_cast<double>(static_cast<float>(v));
    return v;
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

namespace detail {

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

void Node::accumulate(std::size_t i, double g) { grad_buffer()[i] += g; }

}  // namespace detail

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
    }
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero extent");
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    if (g_precision == Precision::Single) {
        for (auto& v : node_->data) v = round_to_precision(v);
    }
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::eye(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(d));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    }
    return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return node_->data[r * shape().back() + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
    if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS; deep graphs would overflow a recursive walk.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    if (g_precision == Precision::Single) {
        for (auto* n : order) {
            for (auto& g : n->grad) g = round_to_precision(g);
        }
    }
    // Intermediate gradients are not needed after the sweep.
    for (auto* n : order) {
        if (n->backward) std::vector<double>().swap(n->grad);
    }
}

Tensor Tensor::clone() const {
    Tensor t(shape(), node_->data, node_->requires_grad);
    return t;
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
    }
    auto out = std::make_shared<detail::Node>();
    out->shape = std::move(new_shape);
    out->data = node_->data;
    if (grad_enabled() && node_->requires_grad) {
        out->requires_grad = true;
        out->parents = {node_};
        out->backward = [](detail::Node& self) {
            auto& pg = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
        };
    }
    return from_node(std::move(out));
}

}  // namespace sparseformer
