#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "dlmlab/common.hpp"
#include "dlmlab/rng.hpp"

namespace dlmlab {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Toggle for the NaN/Inf hard-error scan that runs after each op and after
// each node's backward step.
inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

template <class Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // allocated on first use, same length as data
    bool requires_grad = false;
    std::string name;  // set for parameters; used in error messages

    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), Real(0));
    }
};

// Shared-node handle. Ops build a DAG of nodes; backward() walks it in
// reverse topological order.
template <class Real>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<Real>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<Real>>();
        n->shape = std::move(shape);
        n->data.assign(static_cast<size_t>(shape_numel(n->shape)), Real(0));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false) {
        require(shape_numel(shape) == static_cast<int64_t>(data.size()),
                "tensor: shape ", shape_str(shape), " does not match data length ", data.size());
        auto n = std::make_shared<TensorNode<Real>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(Real v) { return from_data({}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, Real stddev, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = static_cast<Real>(rng.normal(0.0, static_cast<double>(stddev)));
        return t;
    }

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(size_t i) const { return node_->shape.at(i); }
    size_t rank() const { return node_->shape.size(); }

    const std::vector<Real>& data() const { return node_->data; }
    std::vector<Real>& mutable_data() { return node_->data; }
    const std::vector<Real>& grad() const { return node_->grad; }
    std::vector<Real>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    const std::string& name() const { return node_->name; }
    void set_name(std::string n) { node_->name = std::move(n); }

    Real item() const {
        require(numel() == 1, "item: tensor has ", numel(), " elements");
        return node_->data[0];
    }

    void zero_grad() { node_->zero_grad(); }
    void ensure_grad() { node_->ensure_grad(); }

    std::shared_ptr<TensorNode<Real>> node() const { return node_; }

private:
    std::shared_ptr<TensorNode<Real>> node_;
};

namespace detail {

template <class Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using EMap = Eigen::Map<EMat<Real>>;
template <class Real>
using ECMap = Eigen::Map<const EMat<Real>>;

template <class Real>
void check_finite(const std::vector<Real>& v, const char* what, const std::string& name) {
    if (!finite_checks()) return;
    for (Real x : v) {
        if (!std::isfinite(static_cast<double>(x))) {
            fail("non-finite value in ", what, name.empty() ? "" : " of ", name);
        }
    }
}

template <class Real>
Tensor<Real> make_op(Shape shape, std::vector<std::shared_ptr<TensorNode<Real>>> parents,
                     const char* op_name) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(shape_numel(n->shape)), Real(0));
    for (const auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    n->parents = std::move(parents);
    n->name = op_name;
    return Tensor<Real>(std::move(n));
}

// C = alpha * op(A) * op(B) where op is optional transpose. rows/cols refer to
// the logical (post-transpose) operands.
template <class Real>
void gemm(const Real* a, int64_t am, int64_t an, bool ta, const Real* b, int64_t bm, int64_t bn,
          bool tb, Real* c, Real alpha, bool accumulate) {
    ECMap<Real> A(a, am, an);
    ECMap<Real> B(b, bm, bn);
    EMap<Real> C(c, ta ? an : am, tb ? bm : bn);
    if (!ta && !tb) {
        if (accumulate) C.noalias() += alpha * (A * B);
        else C.noalias() = alpha * (A * B);
    } else if (ta && !tb) {
        if (accumulate) C.noalias() += alpha * (A.transpose() * B);
        else C.noalias() = alpha * (A.transpose() * B);
    } else if (!ta && tb) {
        if (accumulate) C.noalias() += alpha * (A * B.transpose());
        else C.noalias() = alpha * (A * B.transpose());
    } else {
        if (accumulate) C.noalias() += alpha * (A.transpose() * B.transpose());
        else C.noalias() = alpha * (A.transpose() * B.transpose());
    }
}

}  // namespace detail

// ----------------------------- matmul -----------------------------

// 2-D matrix product with optional transposes: C = alpha * op(a) * op(b).
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool trans_a = false,
                    bool trans_b = false, Real alpha = Real(1)) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: expected rank-2 operands, got ",
            shape_str(a.shape()), " and ", shape_str(b.shape()));
    const int64_t m = trans_a ? a.dim(1) : a.dim(0);
    const int64_t k = trans_a ? a.dim(0) : a.dim(1);
    const int64_t k2 = trans_b ? b.dim(1) : b.dim(0);
    const int64_t n = trans_b ? b.dim(0) : b.dim(1);
    require(k == k2, "matmul: inner dimensions differ: ", shape_str(a.shape()),
            trans_a ? "^T" : "", " x ", shape_str(b.shape()), trans_b ? "^T" : "");

    auto out = detail::make_op<Real>({m, n}, {a.node(), b.node()}, "matmul");
    detail::gemm(a.data().data(), a.dim(0), a.dim(1), trans_a, b.data().data(), b.dim(0), b.dim(1),
                 trans_b, out.node()->data.data(), alpha, false);
    detail::check_finite(out.node()->data, "output", out.node()->name);

    auto an = a.node();
    auto bn = b.node();
    out.node()->backward_fn = [an, bn, trans_a, trans_b, alpha, m, n, k](TensorNode<Real>& self) {
        (void)k;
        // Standard GEMM adjoints, specialized per transpose combination.
        if (an->requires_grad) {
            an->ensure_grad();
            if (!trans_a) {
                // dA = dC * op(B)^T
                detail::gemm(self.grad.data(), m, n, false, bn->data.data(), bn->shape[0],
                             bn->shape[1], !trans_b, an->grad.data(), alpha, true);
            } else {
                // A used transposed: dA = (op(B) * dC^T)^T computed directly as op(B)*dC^T
                detail::gemm(bn->data.data(), bn->shape[0], bn->shape[1], trans_b,
                             self.grad.data(), m, n, true, an->grad.data(), alpha, true);
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            if (!trans_b) {
                detail::gemm(an->data.data(), an->shape[0], an->shape[1], !trans_a,
                             self.grad.data(), m, n, false, bn->grad.data(), alpha, true);
            } else {
                detail::gemm(self.grad.data(), m, n, true, an->data.data(), an->shape[0],
                             an->shape[1], trans_a, bn->grad.data(), alpha, true);
            }
        }
    };
    return out;
}

// Batched matrix product over the leading dimension: [N,m,k] x [N,k,n] -> [N,m,n].
template <class Real>
Tensor<Real> batched_matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool trans_a = false,
                            bool trans_b = false, Real alpha = Real(1)) {
    require(a.rank() == 3 && b.rank() == 3, "batched_matmul: expected rank-3 operands, got ",
            shape_str(a.shape()), " and ", shape_str(b.shape()));
    require(a.dim(0) == b.dim(0), "batched_matmul: batch dims differ: ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
    const int64_t N = a.dim(0);
    const int64_t am = a.dim(1), an = a.dim(2);
    const int64_t bm = b.dim(1), bn = b.dim(2);
    const int64_t m = trans_a ? an : am;
    const int64_t k = trans_a ? am : an;
    const int64_t k2 = trans_b ? bn : bm;
    const int64_t n = trans_b ? bm : bn;
    require(k == k2, "batched_matmul: inner dimensions differ: ", shape_str(a.shape()),
            trans_a ? "^T" : "", " x ", shape_str(b.shape()), trans_b ? "^T" : "");

    auto out = detail::make_op<Real>({N, m, n}, {a.node(), b.node()}, "batched_matmul");
    for (int64_t i = 0; i < N; ++i) {
        detail::gemm(a.data().data() + i * am * an, am, an, trans_a, b.data().data() + i * bm * bn,
                     bm, bn, trans_b, out.node()->data.data() + i * m * n, alpha, false);
    }
    detail::check_finite(out.node()->data, "output", out.node()->name);

    auto anode = a.node();
    auto bnode = b.node();
    out.node()->backward_fn = [anode, bnode, trans_a, trans_b, alpha, N, am, an, bm, bn, m,
                               n](TensorNode<Real>& self) {
        for (int64_t i = 0; i < N; ++i) {
            const Real* g = self.grad.data() + i * m * n;
            if (anode->requires_grad) {
                anode->ensure_grad();
                if (!trans_a) {
                    detail::gemm(g, m, n, false, bnode->data.data() + i * bm * bn, bm, bn, !trans_b,
                                 anode->grad.data() + i * am * an, alpha, true);
                } else {
                    detail::gemm(bnode->data.data() + i * bm * bn, bm, bn, trans_b, g, m, n, true,
                                 anode->grad.data() + i * am * an, alpha, true);
                }
            }
            if (bnode->requires_grad) {
                bnode->ensure_grad();
                if (!trans_b) {
                    detail::gemm(anode->data.data() + i * am * an, am, an, !trans_a, g, m, n, false,
                                 bnode->grad.data() + i * bm * bn, alpha, true);
                } else {
                    detail::gemm(g, m, n, true, anode->data.data() + i * am * an, am, an, trans_a,
                                 bnode->grad.data() + i * bm * bn, alpha, true);
                }
            }
        }
    };
    return out;
}

// ----------------------------- elementwise -----------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    require(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
    auto out = detail::make_op<Real>(a.shape(), {a.node(), b.node()}, "add");
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.node()->data;
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    detail::check_finite(ov, "output", out.node()->name);

    auto an = a.node();
    auto bn = b.node();
    out.node()->backward_fn = [an, bn](TensorNode<Real>& self) {
        for (auto* p : {an.get(), bn.get()}) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    };
    return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    auto out = detail::make_op<Real>(a.shape(), {a.node()}, "scale");
    const auto& av = a.data();
    auto& ov = out.node()->data;
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    detail::check_finite(ov, "output", out.node()->name);
    auto an = a.node();
    out.node()->backward_fn = [an, c](TensorNode<Real>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
    };
    return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
    auto out = detail::make_op<Real>(a.shape(), {a.node(), b.node()}, "mul");
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.node()->data;
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    detail::check_finite(ov, "output", out.node()->name);
    auto an = a.node();
    auto bn = b.node();
    out.node()->backward_fn = [an, bn](TensorNode<Real>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += bn->data[i] * self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += an->data[i] * self.grad[i];
        }
    };
    return out;
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    auto out = detail::make_op<Real>(x.shape(), {x.node()}, "gelu");
    const auto& xv = x.data();
    auto& ov = out.node()->data;
    const Real inv_sqrt2 = Real(0.7071067811865475244);
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = Real(0.5) * xv[i] * (Real(1) + std::erf(xv[i] * inv_sqrt2));
    }
    detail::check_finite(ov, "output", out.node()->name);
    auto xn = x.node();
    out.node()->backward_fn = [xn, inv_sqrt2](TensorNode<Real>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const Real inv_sqrt2pi = Real(0.3989422804014326779);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const Real v = xn->data[i];
            const Real cdf = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
            const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
            xn->grad[i] += (cdf + v * pdf) * self.grad[i];
        }
    };
    return out;
}

// ----------------------------- softmax -----------------------------

// Softmax along `axis` (negative axis counts from the end).
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis = -1) {
    const int r = static_cast<int>(x.rank());
    require(r >= 1, "softmax: scalar input");
    if (axis < 0) axis += r;
    require(axis >= 0 && axis < r, "softmax: axis ", axis, " out of range for ",
            shape_str(x.shape()));

    int64_t inner = 1, outer = 1;
    const int64_t len = x.dim(static_cast<size_t>(axis));
    for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<size_t>(i));
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(static_cast<size_t>(i));

    auto out = detail::make_op<Real>(x.shape(), {x.node()}, "softmax");
    const auto& xv = x.data();
    auto& ov = out.node()->data;
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            Real mx = xv[static_cast<size_t>(base)];
            for (int64_t j = 1; j < len; ++j)
                mx = std::max(mx, xv[static_cast<size_t>(base + j * inner)]);
            Real sum = 0;
            for (int64_t j = 0; j < len; ++j) {
                const Real e = std::exp(xv[static_cast<size_t>(base + j * inner)] - mx);
                ov[static_cast<size_t>(base + j * inner)] = e;
                sum += e;
            }
            const Real inv = Real(1) / sum;
            for (int64_t j = 0; j < len; ++j) ov[static_cast<size_t>(base + j * inner)] *= inv;
        }
    }
    detail::check_finite(ov, "output", out.node()->name);

    auto xn = x.node();
    out.node()->backward_fn = [xn, outer, inner, len](TensorNode<Real>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * len * inner + in;
                Real dot = 0;
                for (int64_t j = 0; j < len; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * inner);
                    dot += self.grad[idx] * self.data[idx];
                }
                for (int64_t j = 0; j < len; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * inner);
                    xn->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    };
    return out;
}

// ----------------------------- layer norm -----------------------------

// Normalizes the last dimension, then applies per-feature gain and bias.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps = Real(1e-5)) {
    require(x.rank() >= 1, "layer_norm: scalar input");
    const int64_t d = x.dim(x.rank() - 1);
    require(gain.rank() == 1 && gain.dim(0) == d, "layer_norm: gain shape ",
            shape_str(gain.shape()), " does not match feature dim ", d, " of ",
            shape_str(x.shape()));
    require(bias.rank() == 1 && bias.dim(0) == d, "layer_norm: bias shape ",
            shape_str(bias.shape()), " does not match feature dim ", d, " of ",
            shape_str(x.shape()));
    const int64_t rows = x.numel() / d;

    auto out = detail::make_op<Real>(x.shape(), {x.node(), gain.node(), bias.node()}, "layer_norm");
    // cache per-row mean and inverse stddev for the backward pass
    auto stats = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows * 2));
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    auto& ov = out.node()->data;
    for (int64_t rIdx = 0; rIdx < rows; ++rIdx) {
        const size_t base = static_cast<size_t>(rIdx * d);
        Real mean = 0;
        for (int64_t j = 0; j < d; ++j) mean += xv[base + static_cast<size_t>(j)];
        mean /= static_cast<Real>(d);
        Real var = 0;
        for (int64_t j = 0; j < d; ++j) {
            const Real c = xv[base + static_cast<size_t>(j)] - mean;
            var += c * c;
        }
        var /= static_cast<Real>(d);
        const Real inv_std = Real(1) / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(rIdx * 2)] = mean;
        (*stats)[static_cast<size_t>(rIdx * 2 + 1)] = inv_std;
        for (int64_t j = 0; j < d; ++j) {
            const Real nh = (xv[base + static_cast<size_t>(j)] - mean) * inv_std;
            ov[base + static_cast<size_t>(j)] = nh * gv[static_cast<size_t>(j)] + bv[static_cast<size_t>(j)];
        }
    }
    detail::check_finite(ov, "output", out.node()->name);

    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    out.node()->backward_fn = [xn, gn, bn, stats, rows, d](TensorNode<Real>& self) {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (int64_t rIdx = 0; rIdx < rows; ++rIdx) {
            const size_t base = static_cast<size_t>(rIdx * d);
            const Real mean = (*stats)[static_cast<size_t>(rIdx * 2)];
            const Real inv_std = (*stats)[static_cast<size_t>(rIdx * 2 + 1)];
            // dgain/dbias, plus the two row reductions the dx formula needs
            Real sum_dy_g = 0, sum_dy_g_nh = 0;
            for (int64_t j = 0; j < d; ++j) {
                const size_t idx = base + static_cast<size_t>(j);
                const Real nh = (xn->data[idx] - mean) * inv_std;
                const Real dy = self.grad[idx];
                if (gn->requires_grad) gn->grad[static_cast<size_t>(j)] += dy * nh;
                if (bn->requires_grad) bn->grad[static_cast<size_t>(j)] += dy;
                const Real dy_g = dy * gn->data[static_cast<size_t>(j)];
                sum_dy_g += dy_g;
                sum_dy_g_nh += dy_g * nh;
            }
            if (!xn->requires_grad) continue;
            const Real inv_d = Real(1) / static_cast<Real>(d);
            for (int64_t j = 0; j < d; ++j) {
                const size_t idx = base + static_cast<size_t>(j);
                const Real nh = (xn->data[idx] - mean) * inv_std;
                const Real dy_g = self.grad[idx] * gn->data[static_cast<size_t>(j)];
                xn->grad[idx] += inv_std * (dy_g - inv_d * sum_dy_g - nh * inv_d * sum_dy_g_nh);
            }
        }
    };
    return out;
}

// ----------------------------- embedding -----------------------------

template <class Real>
Tensor<Real> embedding_lookup(const Tensor<Real>& table, const std::vector<int>& ids) {
    require(table.rank() == 2, "embedding_lookup: table must be rank-2, got ",
            shape_str(table.shape()));
    const int64_t vocab = table.dim(0);
    const int64_t d = table.dim(1);
    for (int id : ids) {
        require(id >= 0 && id < vocab, "embedding_lookup: id ", id, " out of range [0,", vocab,
                ")");
    }
    auto out = detail::make_op<Real>({static_cast<int64_t>(ids.size()), d}, {table.node()},
                                     "embedding_lookup");
    const auto& tv = table.data();
    auto& ov = out.node()->data;
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(tv.data() + static_cast<size_t>(ids[i]) * static_cast<size_t>(d),
                    static_cast<size_t>(d), ov.data() + i * static_cast<size_t>(d));
    }
    auto tn = table.node();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    out.node()->backward_fn = [tn, ids_copy, d](TensorNode<Real>& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (size_t i = 0; i < ids_copy->size(); ++i) {
            Real* dst = tn->grad.data() + static_cast<size_t>((*ids_copy)[i]) * static_cast<size_t>(d);
            const Real* src = self.grad.data() + i * static_cast<size_t>(d);
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    };
    return out;
}

// Adds pos[i] to every row (b*seq_len + i); the learned-absolute-position path.
template <class Real>
Tensor<Real> add_positional(const Tensor<Real>& x, const Tensor<Real>& pos, int64_t batch,
                            int64_t seq_len) {
    require(x.rank() == 2 && x.dim(0) == batch * seq_len, "add_positional: x shape ",
            shape_str(x.shape()), " does not match batch ", batch, " x seq_len ", seq_len);
    require(pos.rank() == 2 && pos.dim(0) >= seq_len && pos.dim(1) == x.dim(1),
            "add_positional: positional table ", shape_str(pos.shape()), " too small for seq_len ",
            seq_len, " and dim ", x.dim(1));
    const int64_t d = x.dim(1);
    auto out = detail::make_op<Real>(x.shape(), {x.node(), pos.node()}, "add_positional");
    const auto& xv = x.data();
    const auto& pv = pos.data();
    auto& ov = out.node()->data;
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t i = 0; i < seq_len; ++i) {
            const size_t xbase = static_cast<size_t>((b * seq_len + i) * d);
            const size_t pbase = static_cast<size_t>(i * d);
            for (int64_t j = 0; j < d; ++j)
                ov[xbase + static_cast<size_t>(j)] = xv[xbase + static_cast<size_t>(j)] + pv[pbase + static_cast<size_t>(j)];
        }
    }
    auto xn = x.node();
    auto pn = pos.node();
    out.node()->backward_fn = [xn, pn, batch, seq_len, d](TensorNode<Real>& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        }
        if (pn->requires_grad) {
            pn->ensure_grad();
            for (int64_t b = 0; b < batch; ++b) {
                for (int64_t i = 0; i < seq_len; ++i) {
                    const size_t xbase = static_cast<size_t>((b * seq_len + i) * d);
                    const size_t pbase = static_cast<size_t>(i * d);
                    for (int64_t j = 0; j < d; ++j)
                        pn->grad[pbase + static_cast<size_t>(j)] += self.grad[xbase + static_cast<size_t>(j)];
                }
            }
        }
    };
    return out;
}

// ----------------------------- head split / merge -----------------------------

// [batch*seq, heads*head_dim] -> [batch*heads, seq, head_dim]
template <class Real>
Tensor<Real> split_heads(const Tensor<Real>& x, int64_t batch, int64_t seq_len, int64_t heads) {
    require(x.rank() == 2 && x.dim(0) == batch * seq_len && x.dim(1) % heads == 0,
            "split_heads: bad input ", shape_str(x.shape()), " for batch ", batch, " seq ",
            seq_len, " heads ", heads);
    const int64_t hd = x.dim(1) / heads;
    auto out = detail::make_op<Real>({batch * heads, seq_len, hd}, {x.node()}, "split_heads");
    const auto& xv = x.data();
    auto& ov = out.node()->data;
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t i = 0; i < seq_len; ++i) {
                const size_t src = static_cast<size_t>(((b * seq_len + i) * heads + h) * hd);
                const size_t dst = static_cast<size_t>((((b * heads + h) * seq_len) + i) * hd);
                std::copy_n(xv.data() + src, static_cast<size_t>(hd), ov.data() + dst);
            }
    auto xn = x.node();
    out.node()->backward_fn = [xn, batch, seq_len, heads, hd](TensorNode<Real>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t i = 0; i < seq_len; ++i) {
                    const size_t src = static_cast<size_t>(((b * seq_len + i) * heads + h) * hd);
                    const size_t dst = static_cast<size_t>((((b * heads + h) * seq_len) + i) * hd);
                    for (int64_t j = 0; j < hd; ++j)
                        xn->grad[src + static_cast<size_t>(j)] += self.grad[dst + static_cast<size_t>(j)];
                }
    };
    return out;
}

// inverse of split_heads: [batch*heads, seq, head_dim] -> [batch*seq, heads*head_dim]
template <class Real>
Tensor<Real> merge_heads(const Tensor<Real>& x, int64_t batch, int64_t seq_len, int64_t heads) {
    require(x.rank() == 3 && x.dim(0) == batch * heads && x.dim(1) == seq_len,
            "merge_heads: bad input ", shape_str(x.shape()), " for batch ", batch, " seq ",
            seq_len, " heads ", heads);
    const int64_t hd = x.dim(2);
    auto out = detail::make_op<Real>({batch * seq_len, heads * hd}, {x.node()}, "merge_heads");
    const auto& xv = x.data();
    auto& ov = out.node()->data;
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t i = 0; i < seq_len; ++i) {
                const size_t src = static_cast<size_t>((((b * heads + h) * seq_len) + i) * hd);
                const size_t dst = static_cast<size_t>(((b * seq_len + i) * heads + h) * hd);
                std::copy_n(xv.data() + src, static_cast<size_t>(hd), ov.data() + dst);
            }
    auto xn = x.node();
    out.node()->backward_fn = [xn, batch, seq_len, heads, hd](TensorNode<Real>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t i = 0; i < seq_len; ++i) {
                    const size_t src = static_cast<size_t>((((b * heads + h) * seq_len) + i) * hd);
                    const size_t dst = static_cast<size_t>(((b * seq_len + i) * heads + h) * hd);
                    for (int64_t j = 0; j < hd; ++j)
                        xn->grad[src + static_cast<size_t>(j)] += self.grad[dst + static_cast<size_t>(j)];
                }
    };
    return out;
}

// ----------------------------- attention masks -----------------------------

// Adds a large negative constant to disallowed attention scores. `scores` is
// [batch*heads, L, L]; key position j of batch row b is disallowed when
// causal && j > i, or when key_keep[b*L + j] is false. Constant shift, so the
// backward pass is identity on the kept entries.
template <class Real>
Tensor<Real> mask_attention_scores(const Tensor<Real>& scores, int64_t batch, int64_t heads,
                                   bool causal, const std::vector<char>& key_keep) {
    require(scores.rank() == 3 && scores.dim(0) == batch * heads && scores.dim(1) == scores.dim(2),
            "mask_attention_scores: bad scores shape ", shape_str(scores.shape()));
    const int64_t L = scores.dim(1);
    require(key_keep.empty() || key_keep.size() == static_cast<size_t>(batch * L),
            "mask_attention_scores: key_keep length ", key_keep.size(), " != batch*L ",
            batch * L);
    const Real neg = Real(-1e30);
    auto out = detail::make_op<Real>(scores.shape(), {scores.node()}, "mask_attention_scores");
    const auto& sv = scores.data();
    auto& ov = out.node()->data;
    std::copy(sv.begin(), sv.end(), ov.begin());
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            const size_t base = static_cast<size_t>(((b * heads + h) * L) * L);
            for (int64_t i = 0; i < L; ++i) {
                for (int64_t j = 0; j < L; ++j) {
                    const bool drop = (causal && j > i) ||
                                      (!key_keep.empty() && !key_keep[static_cast<size_t>(b * L + j)]);
                    if (drop) ov[base + static_cast<size_t>(i * L + j)] = neg;
                }
            }
        }
    }
    auto sn = scores.node();
    const bool has_keep = !key_keep.empty();
    auto keep = std::make_shared<std::vector<char>>(key_keep);
    out.node()->backward_fn = [sn, batch, heads, L, causal, has_keep, keep](TensorNode<Real>& self) {
        if (!sn->requires_grad) return;
        sn->ensure_grad();
        for (int64_t b = 0; b < batch; ++b) {
            for (int64_t h = 0; h < heads; ++h) {
                const size_t base = static_cast<size_t>(((b * heads + h) * L) * L);
                for (int64_t i = 0; i < L; ++i) {
                    for (int64_t j = 0; j < L; ++j) {
                        const bool drop = (causal && j > i) ||
                                          (has_keep && !(*keep)[static_cast<size_t>(b * L + j)]);
                        if (!drop) {
                            const size_t idx = base + static_cast<size_t>(i * L + j);
                            sn->grad[idx] += self.grad[idx];
                        }
                    }
                }
            }
        }
    };
    return out;
}

// ----------------------------- cross entropy -----------------------------

// Weighted sum of -log softmax(logits)[row, target]. Weights carry whatever
// normalization the caller wants (masking, 1/t, 1/L, 1/batch); a weight of 0
// excludes the row entirely.
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, const std::vector<int>& targets,
                           const std::vector<Real>& weights) {
    require(logits.rank() == 2, "cross_entropy: logits must be rank-2, got ",
            shape_str(logits.shape()));
    const int64_t rows = logits.dim(0);
    const int64_t v = logits.dim(1);
    require(targets.size() == static_cast<size_t>(rows), "cross_entropy: ", targets.size(),
            " targets for ", rows, " rows");
    require(weights.size() == static_cast<size_t>(rows), "cross_entropy: ", weights.size(),
            " weights for ", rows, " rows");
    for (size_t i = 0; i < targets.size(); ++i) {
        if (weights[i] != Real(0)) {
            require(targets[i] >= 0 && targets[i] < v, "cross_entropy: target ", targets[i],
                    " out of range [0,", v, ")");
        }
    }

    auto out = detail::make_op<Real>({}, {logits.node()}, "cross_entropy");
    // stash softmax rows for backward; only weighted rows are materialized
    auto probs = std::make_shared<std::vector<Real>>(logits.data().size(), Real(0));
    const auto& lv = logits.data();
    Real loss = 0;
    for (int64_t rIdx = 0; rIdx < rows; ++rIdx) {
        if (weights[static_cast<size_t>(rIdx)] == Real(0)) continue;
        const size_t base = static_cast<size_t>(rIdx * v);
        Real mx = lv[base];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, lv[base + static_cast<size_t>(j)]);
        Real sum = 0;
        for (int64_t j = 0; j < v; ++j) sum += std::exp(lv[base + static_cast<size_t>(j)] - mx);
        const Real lse = mx + std::log(sum);
        loss += weights[static_cast<size_t>(rIdx)] *
                (lse - lv[base + static_cast<size_t>(targets[static_cast<size_t>(rIdx)])]);
        const Real inv = Real(1) / sum;
        for (int64_t j = 0; j < v; ++j)
            (*probs)[base + static_cast<size_t>(j)] = std::exp(lv[base + static_cast<size_t>(j)] - mx) * inv;
    }
    out.node()->data[0] = loss;
    detail::check_finite(out.node()->data, "output", out.node()->name);

    auto ln = logits.node();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    auto w = std::make_shared<std::vector<Real>>(weights);
    out.node()->backward_fn = [ln, tgt, w, probs, rows, v](TensorNode<Real>& self) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const Real g = self.grad[0];
        for (int64_t rIdx = 0; rIdx < rows; ++rIdx) {
            const Real wr = (*w)[static_cast<size_t>(rIdx)];
            if (wr == Real(0)) continue;
            const size_t base = static_cast<size_t>(rIdx * v);
            for (int64_t j = 0; j < v; ++j) {
                Real p = (*probs)[base + static_cast<size_t>(j)];
                if (j == (*tgt)[static_cast<size_t>(rIdx)]) p -= Real(1);
                ln->grad[base + static_cast<size_t>(j)] += g * wr * p;
            }
        }
    };
    return out;
}

// ----------------------------- backward -----------------------------

// Reverse-mode sweep from a scalar loss. Parameters not reachable from the
// loss keep whatever grad they already hold (the trainer zeroes grads before
// the forward pass, so unreachable parameters end with zero grad).
template <class Real>
void backward(const Tensor<Real>& loss) {
    require(loss.numel() == 1, "backward: loss must be scalar, got ", shape_str(loss.shape()));

    // iterative post-order DFS over parents
    std::vector<TensorNode<Real>*> order;
    std::unordered_set<TensorNode<Real>*> seen;
    std::vector<std::pair<TensorNode<Real>*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<Real>* p = node->parents[next++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    auto* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<Real>* n = *it;
        if (!n->backward_fn) continue;
        n->ensure_grad();
        n->backward_fn(*n);
        if (finite_checks()) {
            for (const auto& p : n->parents) {
                if (p->requires_grad && !p->grad.empty()) {
                    detail::check_finite(p->grad, "grad", p->name);
                }
            }
        }
    }
}

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace dlmlab
