#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "co2rl/common/errors.hpp"

namespace co2rl::ndauto {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// A trainable parameter. Gradients accumulate across backward passes until
// explicitly cleared; the tape never owns parameters.
template <typename S>
struct Parameter {
    std::string name;
    Mat<S> value;
    Mat<S> grad;

    Parameter() = default;
    Parameter(std::string n, Mat<S> v)
        : name(std::move(n)), value(std::move(v)), grad(Mat<S>::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
};

template <typename S>
class Tape;

// Lightweight handle into a tape's node list.
template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;
};

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

// Reverse-mode tape over matrix-valued nodes. Columns are batch samples.
// Each op records a closure that routes the output gradient to its parents;
// backward() replays them in reverse creation order (a valid topological
// order for a tape) and adds leaf gradients into their bound parameters.
template <typename S>
class Tape {
public:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        bool has_grad = false;  // grad contents are stale until first accumulation
        Parameter<S>* param = nullptr;
        std::function<void(Tape&, const Mat<S>&)> back;  // gradient of output -> parents
    };

    Var<S> constant(Mat<S> v) { return push(std::move(v), nullptr, {}); }

    Var<S> input(Mat<S> v) { return push(std::move(v), nullptr, {}); }

    Var<S> param(Parameter<S>& p) {
        Node& n = slot();
        n.value = p.value;  // copy-assign so a rewound slot's buffer is reused
        n.param = &p;
        n.back = nullptr;
        return Var<S>{this, static_cast<int>(live_) - 1};
    }

    Var<S> scalar(S v) {
        Mat<S> m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m));
    }

    const Mat<S>& value(Var<S> v) const { return nodes_[check(v)].value; }

    const Mat<S>& grad_of(Var<S> v) const {
        Node& n = const_cast<Tape*>(this)->nodes_[static_cast<std::size_t>(check(v))];
        if (!n.has_grad) {  // untouched by backward: the gradient is zero
            n.grad.setZero(n.value.rows(), n.value.cols());
            n.has_grad = true;
        }
        return n.grad;
    }

    S scalar_value(Var<S> v) const {
        const Mat<S>& m = value(v);
        if (m.rows() != 1 || m.cols() != 1)
            throw ContractViolation("scalar_value on tensor of shape " + shape_str(m.rows(), m.cols()));
        return m(0, 0);
    }

    // Seeds d(loss)/d(loss)=1 and propagates. Node gradients are reset per
    // pass; parameter gradients accumulate across passes.
    void backward(Var<S> loss) {
        const int root = check(loss);
        const Mat<S>& lm = nodes_[root].value;
        if (lm.rows() != 1 || lm.cols() != 1)
            throw ContractViolation("backward root must be scalar, got " + shape_str(lm.rows(), lm.cols()));
        for (std::size_t i = 0; i < live_; ++i) nodes_[i].has_grad = false;
        Node& r = nodes_[static_cast<std::size_t>(root)];
        r.grad.setZero(1, 1);
        r.grad(0, 0) = S(1);
        r.has_grad = true;
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.has_grad) continue;
            if (n.back) n.back(*this, n.grad);
            if (n.param) n.param->grad += n.grad;
        }
    }

    std::size_t size() const { return live_; }

    // Rewind so the tape can host a fresh graph while keeping node buffers
    // allocated; repeated same-shape graphs then stop allocating entirely.
    void reset() { live_ = 0; }

    // --- graph construction (used by the free-function ops below) ---
    Var<S> push(Mat<S> v, Parameter<S>* p, std::function<void(Tape&, const Mat<S>&)> back) {
        Node& n = slot();
        n.value = std::move(v);
        n.param = p;
        n.back = std::move(back);
        return Var<S>{this, static_cast<int>(live_) - 1};
    }

    void add_grad(int id, const Mat<S>& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    void set_back(Var<S> v, std::function<void(Tape&, const Mat<S>&)> back) {
        nodes_[static_cast<std::size_t>(check(v))].back = std::move(back);
    }

    int check(Var<S> v) const {
        if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(live_))
            throw ContractViolation("variable does not belong to this tape");
        return v.id;
    }

private:
    Node& slot() {
        if (live_ == nodes_.size()) nodes_.emplace_back();
        Node& n = nodes_[live_++];
        n.has_grad = false;
        return n;
    }

    std::vector<Node> nodes_;
    std::size_t live_ = 0;
};

namespace detail {
template <typename S>
Tape<S>& same_tape(Var<S> a, Var<S> b) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw ContractViolation("operands come from different tapes");
    return *a.tape;
}

template <typename S>
void require_same_shape(const Mat<S>& a, const Mat<S>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                                " vs " + shape_str(b.rows(), b.cols()));
}
}  // namespace detail

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    Tape<S>& t = detail::same_tape(a, b);
    const Mat<S>& av = t.value(a);
    const Mat<S>& bv = t.value(b);
    if (av.cols() != bv.rows())
        throw ContractViolation("matmul: shape mismatch " + shape_str(av.rows(), av.cols()) + " vs " +
                                shape_str(bv.rows(), bv.cols()));
    const int ai = a.id, bi = b.id;
    return t.push(av * bv, nullptr, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g * tp.value(Var<S>{&tp, bi}).transpose());
        tp.add_grad(bi, tp.value(Var<S>{&tp, ai}).transpose() * g);
    });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    Tape<S>& t = detail::same_tape(a, b);
    detail::require_same_shape(t.value(a), t.value(b), "add");
    const int ai = a.id, bi = b.id;
    return t.push(t.value(a) + t.value(b), nullptr, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g);
        tp.add_grad(bi, g);
    });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    Tape<S>& t = detail::same_tape(a, b);
    detail::require_same_shape(t.value(a), t.value(b), "sub");
    const int ai = a.id, bi = b.id;
    return t.push(t.value(a) - t.value(b), nullptr, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g);
        tp.add_grad(bi, -g);
    });
}

// column-vector bias broadcast over the batch columns
template <typename S>
Var<S> add_colwise(Var<S> a, Var<S> bias) {
    Tape<S>& t = detail::same_tape(a, bias);
    const Mat<S>& av = t.value(a);
    const Mat<S>& bv = t.value(bias);
    if (bv.cols() != 1 || bv.rows() != av.rows())
        throw ContractViolation("add_colwise: shape mismatch " + shape_str(av.rows(), av.cols()) +
                                " vs " + shape_str(bv.rows(), bv.cols()));
    const int ai = a.id, bi = bias.id;
    Mat<S> out = av;
    out.colwise() += bv.col(0);
    return t.push(std::move(out), nullptr, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g);
        tp.add_grad(bi, g.rowwise().sum());
    });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    Tape<S>& t = detail::same_tape(a, b);
    detail::require_same_shape(t.value(a), t.value(b), "mul");
    const int ai = a.id, bi = b.id;
    return t.push(t.value(a).cwiseProduct(t.value(b)), nullptr, [ai, bi](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g.cwiseProduct(tp.value(Var<S>{&tp, bi})));
        tp.add_grad(bi, g.cwiseProduct(tp.value(Var<S>{&tp, ai})));
    });
}

template <typename S>
Var<S> neg(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    return t.push(-t.value(a), nullptr, [ai](Tape<S>& tp, const Mat<S>& g) { tp.add_grad(ai, -g); });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    return t.push(t.value(a) * c, nullptr,
                  [ai, c](Tape<S>& tp, const Mat<S>& g) { tp.add_grad(ai, g * c); });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    return t.push((t.value(a).array() + c).matrix(), nullptr,
                  [ai](Tape<S>& tp, const Mat<S>& g) { tp.add_grad(ai, g); });
}

template <typename S>
Var<S> relu(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    const Mat<S>& av = t.value(a);
    Mat<S> mask = (av.array() > S(0)).template cast<S>().matrix();
    Var<S> out = t.push(av.cwiseProduct(mask), nullptr, nullptr);
    t.set_back(out, [ai, mask](Tape<S>& tp, const Mat<S>& g) { tp.add_grad(ai, g.cwiseProduct(mask)); });
    return out;
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    Var<S> out = t.push(t.value(a).array().tanh().matrix(), nullptr, nullptr);
    const int oi = out.id;
    t.set_back(out, [ai, oi](Tape<S>& tp, const Mat<S>& g) {
        const Mat<S>& yv = tp.value(Var<S>{&tp, oi});
        tp.add_grad(ai, (g.array() * (S(1) - yv.array().square())).matrix());
    });
    return out;
}

template <typename S>
Var<S> exp_op(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    Var<S> out = t.push(t.value(a).array().exp().matrix(), nullptr, nullptr);
    const int oi = out.id;
    t.set_back(out, [ai, oi](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g.cwiseProduct(tp.value(Var<S>{&tp, oi})));
    });
    return out;
}

template <typename S>
Var<S> log_op(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    return t.push(t.value(a).array().log().matrix(), nullptr, [ai](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g.cwiseQuotient(tp.value(Var<S>{&tp, ai})));
    });
}

template <typename S>
Var<S> softplus(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    const auto x = t.value(a).array();
    // numerically stable log(1 + exp(x))
    Mat<S> y = (x.max(S(0)) + (-x.abs()).exp().log1p()).matrix();
    return t.push(std::move(y), nullptr, [ai](Tape<S>& tp, const Mat<S>& g) {
        const auto xv = tp.value(Var<S>{&tp, ai}).array();
        tp.add_grad(ai, (g.array() / (S(1) + (-xv).exp())).matrix());
    });
}

template <typename S>
Var<S> square(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    return t.push(t.value(a).array().square().matrix(), nullptr, [ai](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, (g.array() * S(2) * tp.value(Var<S>{&tp, ai}).array()).matrix());
    });
}

// hard clamp; gradient passes only strictly inside the interval
template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    const auto x = t.value(a).array();
    Mat<S> mask = ((x > lo) && (x < hi)).template cast<S>().matrix();
    Var<S> out = t.push(x.max(lo).min(hi).matrix(), nullptr, nullptr);
    t.set_back(out, [ai, mask](Tape<S>& tp, const Mat<S>& g) { tp.add_grad(ai, g.cwiseProduct(mask)); });
    return out;
}

template <typename S>
Var<S> minimum(Var<S> a, Var<S> b) {
    Tape<S>& t = detail::same_tape(a, b);
    detail::require_same_shape(t.value(a), t.value(b), "minimum");
    const auto av = t.value(a).array();
    const auto bv = t.value(b).array();
    Mat<S> wa = (av < bv).template cast<S>().matrix() +
                S(0.5) * (av == bv).template cast<S>().matrix();
    const int ai = a.id, bi = b.id;
    Var<S> out = t.push(av.min(bv).matrix(), nullptr, nullptr);
    t.set_back(out, [ai, bi, wa](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g.cwiseProduct(wa));
        tp.add_grad(bi, g.cwiseProduct((Mat<S>::Ones(wa.rows(), wa.cols()) - wa)));
    });
    return out;
}

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
    Tape<S>& t = detail::same_tape(a, b);
    const Mat<S>& av = t.value(a);
    const Mat<S>& bv = t.value(b);
    if (av.cols() != bv.cols())
        throw ContractViolation("concat_rows: shape mismatch " + shape_str(av.rows(), av.cols()) +
                                " vs " + shape_str(bv.rows(), bv.cols()));
    Mat<S> out(av.rows() + bv.rows(), av.cols());
    out.topRows(av.rows()) = av;
    out.bottomRows(bv.rows()) = bv;
    const int ai = a.id, bi = b.id;
    const Eigen::Index ra = av.rows(), rb = bv.rows();
    return t.push(std::move(out), nullptr, [ai, bi, ra, rb](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, g.topRows(ra));
        tp.add_grad(bi, g.bottomRows(rb));
    });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index r0, Eigen::Index nrows) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    const Mat<S>& av = t.value(a);
    if (r0 < 0 || nrows < 0 || r0 + nrows > av.rows())
        throw ContractViolation("slice_rows: rows [" + std::to_string(r0) + "," +
                                std::to_string(r0 + nrows) + ") out of " + std::to_string(av.rows()));
    const Eigen::Index all = av.rows();
    return t.push(av.middleRows(r0, nrows), nullptr,
                  [ai, r0, nrows, all](Tape<S>& tp, const Mat<S>& g) {
                      Mat<S> gi = Mat<S>::Zero(all, g.cols());
                      gi.middleRows(r0, nrows) = g;
                      tp.add_grad(ai, gi);
                  });
}

// per-sample matrix-vector product: column k of theta holds an (m x n) matrix
// in column-major layout, applied to column k of x
template <typename S>
Var<S> bilinear_apply(Var<S> theta, Var<S> x, Eigen::Index m, Eigen::Index n) {
    Tape<S>& t = detail::same_tape(theta, x);
    const Mat<S>& tv = t.value(theta);
    const Mat<S>& xv = t.value(x);
    if (tv.rows() != m * n || xv.rows() != n || tv.cols() != xv.cols())
        throw ContractViolation("bilinear_apply: shape mismatch " + shape_str(tv.rows(), tv.cols()) +
                                " vs " + shape_str(xv.rows(), xv.cols()) + " for " +
                                std::to_string(m) + "x" + std::to_string(n));
    const Eigen::Index batch = tv.cols();
    Mat<S> out(m, batch);
    for (Eigen::Index k = 0; k < batch; ++k)
        out.col(k) = Eigen::Map<const Mat<S>>(tv.col(k).data(), m, n) * xv.col(k);
    const int ti = theta.id, xi = x.id;
    return t.push(std::move(out), nullptr, [ti, xi, m, n](Tape<S>& tp, const Mat<S>& g) {
        const Mat<S>& tv2 = tp.value(Var<S>{&tp, ti});
        const Mat<S>& xv2 = tp.value(Var<S>{&tp, xi});
        Mat<S> gt(m * n, tv2.cols());
        Mat<S> gx(n, xv2.cols());
        for (Eigen::Index k = 0; k < tv2.cols(); ++k) {
            const Mat<S> outer = g.col(k) * xv2.col(k).transpose();  // m x n
            gt.col(k) = Eigen::Map<const Mat<S>>(outer.data(), m * n, 1);
            gx.col(k) = Eigen::Map<const Mat<S>>(tv2.col(k).data(), m, n).transpose() * g.col(k);
        }
        tp.add_grad(ti, gt);
        tp.add_grad(xi, gx);
    });
}

// 1 x batch row of column sums
template <typename S>
Var<S> colwise_sum(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    const Eigen::Index rows = t.value(a).rows();
    return t.push(t.value(a).colwise().sum(), nullptr, [ai, rows](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, Mat<S>::Ones(rows, 1) * g);
    });
}

// 1 x batch row of Euclidean column norms
template <typename S>
Var<S> colwise_l2norm(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    Mat<S> norms = t.value(a).colwise().norm();
    Var<S> out = t.push(norms, nullptr, nullptr);
    const int oi = out.id;
    t.set_back(out, [ai, oi](Tape<S>& tp, const Mat<S>& g) {
        const Mat<S>& av = tp.value(Var<S>{&tp, ai});
        const Mat<S>& nv = tp.value(Var<S>{&tp, oi});
        Mat<S> gi(av.rows(), av.cols());
        for (Eigen::Index k = 0; k < av.cols(); ++k) {
            const S nk = nv(0, k);
            gi.col(k) = nk > S(0) ? Mat<S>(av.col(k) * (g(0, k) / nk))
                                  : Mat<S>(Mat<S>::Zero(av.rows(), 1));
        }
        tp.add_grad(ai, gi);
    });
    return out;
}

template <typename S>
Var<S> sum(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    const Eigen::Index r = t.value(a).rows(), c = t.value(a).cols();
    Mat<S> out(1, 1);
    out(0, 0) = t.value(a).sum();
    return t.push(std::move(out), nullptr, [ai, r, c](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, Mat<S>::Constant(r, c, g(0, 0)));
    });
}

template <typename S>
Var<S> mean_all(Var<S> a) {
    Tape<S>& t = *a.tape;
    const int ai = t.check(a);
    const Eigen::Index r = t.value(a).rows(), c = t.value(a).cols();
    Mat<S> out(1, 1);
    out(0, 0) = t.value(a).mean();
    const S inv = S(1) / static_cast<S>(r * c);
    return t.push(std::move(out), nullptr, [ai, r, c, inv](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, Mat<S>::Constant(r, c, g(0, 0) * inv));
    });
}

// mean over all elements of the squared difference
template <typename S>
Var<S> mse(Var<S> a, Var<S> b) {
    Tape<S>& t = detail::same_tape(a, b);
    detail::require_same_shape(t.value(a), t.value(b), "mse");
    const int ai = a.id, bi = b.id;
    const Mat<S> diff = t.value(a) - t.value(b);
    const S inv = S(2) / static_cast<S>(diff.size());
    Mat<S> out(1, 1);
    out(0, 0) = diff.squaredNorm() / static_cast<S>(diff.size());
    return t.push(std::move(out), nullptr, [ai, bi, diff, inv](Tape<S>& tp, const Mat<S>& g) {
        tp.add_grad(ai, diff * (g(0, 0) * inv));
        tp.add_grad(bi, diff * (-g(0, 0) * inv));
    });
}

}  // namespace co2rl::ndauto
