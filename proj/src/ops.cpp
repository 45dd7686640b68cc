#include "sparseformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sparseformer::ops {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Backward = std::function<void(Node&)>;

namespace {

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   Backward backward) {
    if (precision() == Precision::Single) {
        for (auto& v : data) v = round_to_precision(v);
    }
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->data = std::move(data);
    if (grad_enabled()) {
        bool any = false;
        for (auto* t : inputs) any = any || t->requires_grad();
        if (any) {
            out->requires_grad = true;
            for (auto* t : inputs) out->parents.push_back(t->node());
            out->backward = std::move(backward);
        }
    }
    return Tensor::from_node(std::move(out));
}

Tensor make_result_n(Shape shape, std::vector<double> data, std::span<const Tensor> inputs, Backward backward) {
    if (precision() == Precision::Single) {
        for (auto& v : data) v = round_to_precision(v);
    }
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->data = std::move(data);
    if (grad_enabled()) {
        bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            out->requires_grad = true;
            for (auto& t : inputs) out->parents.push_back(t.node());
            out->backward = std::move(backward);
        }
    }
    return Tensor::from_node(std::move(out));
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.rank() != r) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + " tensor, got " +
                             shape_str(t.shape()));
    }
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return cdf + x * pdf;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
        const auto& A = *self.parents[0];
        const auto& B = *self.parents[1];
        if (wants(self, 0)) gemm_nt(self.grad.data(), B.data.data(), self.parents[0]->grad_buffer().data(), m, n, k);
        if (wants(self, 1)) gemm_tn(A.data.data(), self.grad.data(), self.parents[1]->grad_buffer().data(), m, k, n);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    std::vector<double> out(m * n, 0.0);
    gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
        const auto& A = *self.parents[0];
        const auto& B = *self.parents[1];
        // ga[m,k] += g[m,n] b[n,k]; gb[n,k] += g^T[n,m] a[m,k]
        if (wants(self, 0)) gemm_nn(self.grad.data(), B.data.data(), self.parents[0]->grad_buffer().data(), m, n, k);
        if (wants(self, 1)) gemm_tn(self.grad.data(), A.data.data(), self.parents[1]->grad_buffer().data(), m, n, k);
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    Tensor y = matmul(x, w);
    return bias.defined() ? add_row(y, bias) : y;
}

Tensor apply(const Tensor& x, Pointwise fn) {
    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fn == Pointwise::Relu ? std::max(in[i], 0.0) : gelu_value(in[i]);
    }
    return make_result(x.shape(), std::move(out), {&x}, [fn](Node& self) {
        auto& p = *self.parents[0];
        auto& pg = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double d = fn == Pointwise::Relu ? (p.data[i] > 0.0 ? 1.0 : 0.0) : gelu_derivative(p.data[i]);
            pg[i] += self.grad[i] * d;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(self, k)) continue;
            auto& pg = self.parents[k]->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
        }
    });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_row");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (bias.numel() != n) {
        throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
    return make_result(x.shape(), std::move(out), {&x, &bias}, [m, n](Node& self) {
        if (wants(self, 0)) {
            auto& pg = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
        }
        if (wants(self, 1)) {
            auto& bg = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) bg[j] += self.grad[i * n + j];
        }
    });
}

Tensor scale(const Tensor& x, double s) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
    return make_result(x.shape(), std::move(out), {&x}, [s](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i] * s;
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({1}, {s}, {&x}, [](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (auto& g : pg) g += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw DimensionError("dot: lengths differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
    return make_result({1}, {s}, {&a, &b}, [](Node& self) {
        const double g = self.grad[0];
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(self, k)) continue;
            const auto& other = self.parents[1 - k]->data;
            auto& pg = self.parents[k]->grad_buffer();
            for (std::size_t i = 0; i < other.size(); ++i) pg[i] += g * other[i];
        }
    });
}

namespace {

void softmax_row(const double* in, double* out, std::size_t n) {
    double mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        z += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) softmax_row(x.data().data() + i * n, out.data() + i * n, n);
    return make_result(x.shape(), std::move(out), {&x}, [m, n](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.data.data() + i * n;
            const double* g = self.grad.data() + i * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += y[j] * g[j];
            for (std::size_t j = 0; j < n; ++j) pg[i * n + j] += y[j] * (g[j] - s);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 2, "layer_norm");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (gamma.numel() != n || beta.numel() != n) {
        throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
    }
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
    std::vector<double> xhat(m * n), out(m * n), inv_std(m);
    auto in = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += in[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = in[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (in[i * n + j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gamma.data()[j] + beta.data()[j];
        }
    }
    return make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                       [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const auto& g = self.grad;
                           const auto& gam = self.parents[1]->data;
                           if (wants(self, 1)) {
                               auto& gg = self.parents[1]->grad_buffer();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                           }
                           if (wants(self, 2)) {
                               auto& bg = self.parents[2]->grad_buffer();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j) bg[j] += g[i * n + j];
                           }
                           if (wants(self, 0)) {
                               auto& xg = self.parents[0]->grad_buffer();
                               const double inv_n = 1.0 / static_cast<double>(n);
                               for (std::size_t i = 0; i < m; ++i) {
                                   double s1 = 0.0, s2 = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double dxh = g[i * n + j] * gam[j];
                                       s1 += dxh;
                                       s2 += dxh * xhat[i * n + j];
                                   }
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double dxh = g[i * n + j] * gam[j];
                                       xg[i * n + j] +=
                                           inv_std[i] * (dxh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
                                   }
                               }
                           }
                       });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
    for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
    std::size_t total = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t a = 0; ok && a < s.size(); ++a) ok = a == axis || s[a] == first[a];
        if (!ok) {
            throw DimensionError("concat: incompatible extents " + shape_str(first) + " and " + shape_str(s) +
                                 " along axis " + std::to_string(axis));
        }
        extents.push_back(s[axis]);
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto src = parts[k].data();
        const std::size_t w = extents[k] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.data() + o * w, w, out.data() + o * total * inner + offset * inner);
        }
        offset += extents[k];
    }
    return make_result_n(std::move(out_shape), std::move(out), parts, [extents, outer, inner, total](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            const std::size_t w = extents[k] * inner;
            if (wants(self, k)) {
                auto& pg = self.parents[k]->grad_buffer();
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* g = self.grad.data() + o * total * inner + offset * inner;
                    for (std::size_t i = 0; i < w; ++i) pg[o * w + i] += g[i];
                }
            }
            offset += extents[k];
        }
    });
}

Tensor flatten(const Tensor& x) { return x.reshape({x.numel()}); }

Tensor transpose(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("transpose: need rank >= 2, got " + shape_str(x.shape()));
    Shape s = x.shape();
    const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
    const std::size_t batch = x.numel() / (r * c);
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
    return make_result(std::move(s), std::move(out), {&x}, [batch, r, c](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pg[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (x.rank() < 1 || begin >= end || end > x.dim(0)) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t row = x.numel() / x.dim(0);
    Shape s = x.shape();
    s[0] = end - begin;
    std::vector<double> out(x.data().begin() + begin * row, x.data().begin() + end * row);
    return make_result(std::move(s), std::move(out), {&x}, [begin, row](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pg[begin * row + i] += self.grad[i];
    });
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
    const std::size_t n = v.numel();
    std::vector<double> out(rows * n);
    for (std::size_t i = 0; i < rows; ++i) std::copy(v.data().begin(), v.data().end(), out.begin() + i * n);
    return make_result({rows, n}, std::move(out), {&v}, [rows, n](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < n; ++j) pg[j] += self.grad[i * n + j];
    });
}

Tensor stack_rows(std::span<const Tensor> vectors) {
    if (vectors.empty()) throw DimensionError("stack_rows: no inputs");
    std::vector<Tensor> rows;
    rows.reserve(vectors.size());
    for (const auto& v : vectors) {
        if (v.numel() != vectors[0].numel()) {
            throw DimensionError("stack_rows: inconsistent lengths " + shape_str(vectors[0].shape()) + " and " +
                                 shape_str(v.shape()));
        }
        rows.push_back(v.reshape({1, v.numel()}));
    }
    return concat(rows, 0);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
    require_rank(x, 2, "gather_rows");
    const std::size_t n = x.dim(1);
    std::vector<double> out(index.size() * n);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= x.dim(0)) throw DimensionError("gather_rows: index out of range for " + shape_str(x.shape()));
        std::copy_n(x.data().begin() + index[i] * n, n, out.begin() + i * n);
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return make_result({index.size(), n}, std::move(out), {&x}, [idx = std::move(idx), n](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) pg[idx[i] * n + j] += self.grad[i * n + j];
    });
}

Tensor dropout(const Tensor& x, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    const double keep = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = rng->uniform() < rate ? 0.0 : keep;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
    return make_result(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i] * mask[i];
    });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            AttentionProbe* probe) {
    require_rank(q, 2, "attention");
    require_rank(k, 2, "attention");
    require_rank(v, 2, "attention");
    const std::size_t O = q.dim(0), D = q.dim(1), L = k.dim(0);
    if (k.dim(1) != D || v.dim(1) != D || v.dim(0) != L) {
        throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                             ", v " + shape_str(v.shape()));
    }
    if (heads == 0 || D % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(D) + " not divisible by " +
                             std::to_string(heads) + " heads");
    }
    const std::size_t d = D / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    auto Q = q.data(), K = k.data(), V = v.data();

    // probs[h][o*L + l]
    std::vector<std::vector<double>> probs(heads, std::vector<double>(O * L));
    std::vector<double> out(O * D, 0.0);
    std::vector<double> logits(L);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * d;
        for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t l = 0; l < L; ++l) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += Q[o * D + c0 + j] * K[l * D + c0 + j];
                logits[l] = s * inv_sqrt_d;
            }
            double* p = probs[h].data() + o * L;
            softmax_row(logits.data(), p, L);
            for (std::size_t l = 0; l < L; ++l) {
                const double w = p[l];
                for (std::size_t j = 0; j < d; ++j) out[o * D + c0 + j] += w * V[l * D + c0 + j];
            }
        }
    }
    if (probe) {
        probe->rows = O;
        probe->cols = L;
        probe->weights = probs;
    }
    return make_result({O, D}, std::move(out), {&q, &k, &v},
                       [O, L, D, d, heads, inv_sqrt_d, probs = std::move(probs)](Node& self) {
                           const auto& Qd = self.parents[0]->data;
                           const auto& Kd = self.parents[1]->data;
                           const auto& Vd = self.parents[2]->data;
                           const bool gq = wants(self, 0), gk = wants(self, 1), gv = wants(self, 2);
                           double* dQ = gq ? self.parents[0]->grad_buffer().data() : nullptr;
                           double* dK = gk ? self.parents[1]->grad_buffer().data() : nullptr;
                           double* dV = gv ? self.parents[2]->grad_buffer().data() : nullptr;
                           const auto& G = self.grad;
                           std::vector<double> dp(L);
                           for (std::size_t h = 0; h < heads; ++h) {
                               const std::size_t c0 = h * d;
                               for (std::size_t o = 0; o < O; ++o) {
                                   const double* p = probs[h].data() + o * L;
                                   double s = 0.0;
                                   for (std::size_t l = 0; l < L; ++l) {
                                       double acc = 0.0;
                                       for (std::size_t j = 0; j < d; ++j) acc += G[o * D + c0 + j] * Vd[l * D + c0 + j];
                                       dp[l] = acc;
                                       s += acc * p[l];
                                       if (dV) {
                                           for (std::size_t j = 0; j < d; ++j) dV[l * D + c0 + j] += p[l] * G[o * D + c0 + j];
                                       }
                                   }
                                   for (std::size_t l = 0; l < L; ++l) {
                                       const double ds = p[l] * (dp[l] - s) * inv_sqrt_d;
                                       if (ds == 0.0) continue;
                                       for (std::size_t j = 0; j < d; ++j) {
                                           if (dQ) dQ[o * D + c0 + j] += ds * Kd[l * D + c0 + j];
                                           if (dK) dK[l * D + c0 + j] += ds * Qd[o * D + c0 + j];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t B = logits.dim(0), M = logits.dim(1);
    if (targets.size() != B) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    }
    std::vector<double> probs(B * M);
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        if (targets[i] >= M) throw std::out_of_range("cross_entropy: target out of range");
        const double* row = logits.data().data() + i * M;
        double mx = row[0];
        for (std::size_t j = 1; j < M; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < M; ++j) z += std::exp(row[j] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < M; ++j) probs[i * M + j] = std::exp(row[j] - log_z);
        loss += log_z - row[targets[i]];
    }
    loss /= static_cast<double>(B);
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return make_result({1}, {loss}, {&logits}, [B, M, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
        auto& pg = self.parents[0]->grad_buffer();
        const double g = self.grad[0] / static_cast<double>(B);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < M; ++j) {
                pg[i * M + j] += g * (probs[i * M + j] - (j == tgt[i] ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace sparseformer::ops
