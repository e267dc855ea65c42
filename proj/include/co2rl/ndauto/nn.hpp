#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "co2rl/common/io.hpp"
#include "co2rl/common/rng.hpp"
#include "co2rl/ndauto/autodiff.hpp"

namespace co2rl::ndauto {

enum class Act { identity, relu, tanh, softplus };

template <typename S>
struct DenseLayer {
    Parameter<S> weight;  // out x in
    Parameter<S> bias;    // out x 1
    Act act = Act::identity;
};

template <typename S>
Var<S> apply_activation(Var<S> x, Act act) {
    switch (act) {
        case Act::identity: return x;
        case Act::relu: return relu(x);
        case Act::tanh: return tanh_op(x);
        case Act::softplus: return softplus(x);
    }
    throw ContractViolation("unknown activation");
}

// Fully connected stack. Weights start uniform in +/-sqrt(6/(fan_in+fan_out)),
// biases at zero; draw order is fixed (row-major per weight matrix) so
// initialization is bit-reproducible for a given stream.
template <typename S>
struct Mlp {
    std::vector<DenseLayer<S>> layers;

    static Mlp create(const std::string& name, int in_dim, const std::vector<int>& hidden,
                      int out_dim, Act hidden_act, Act out_act, RngStream& rng) {
        if (in_dim <= 0 || out_dim <= 0) throw ConfigError("mlp " + name + ": dims must be positive");
        Mlp m;
        std::vector<int> dims;
        dims.push_back(in_dim);
        for (int h : hidden) {
            if (h <= 0) throw ConfigError("mlp " + name + ": dims must be positive");
            dims.push_back(h);
        }
        dims.push_back(out_dim);
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const int fan_in = dims[l], fan_out = dims[l + 1];
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            Mat<S> w(fan_out, fan_in);
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j)
                    w(i, j) = static_cast<S>((2.0 * rng.uniform01() - 1.0) * bound);
            DenseLayer<S> layer;
            const std::string tag = name + ".l" + std::to_string(l);
            layer.weight = Parameter<S>(tag + ".w", std::move(w));
            layer.bias = Parameter<S>(tag + ".b", Mat<S>::Zero(fan_out, 1));
            layer.act = (l + 2 < dims.size()) ? hidden_act : out_act;
            m.layers.push_back(std::move(layer));
        }
        return m;
    }

    Var<S> apply(Tape<S>& t, Var<S> x) const {
        Var<S> h = x;
        for (const DenseLayer<S>& l : layers) {
            // parameters are bound mutably for gradient accumulation
            auto& lw = const_cast<Parameter<S>&>(l.weight);
            auto& lb = const_cast<Parameter<S>&>(l.bias);
            h = apply_activation(add_colwise(matmul(t.param(lw), h), t.param(lb)), l.act);
        }
        return h;
    }

    // value-only evaluation, no graph
    Mat<S> forward(const Mat<S>& x) const {
        Mat<S> h = x;
        for (const DenseLayer<S>& l : layers) {
            h = (l.weight.value * h).colwise() + l.bias.value.col(0);
            switch (l.act) {
                case Act::identity: break;
                case Act::relu: h = h.cwiseMax(S(0)); break;
                case Act::tanh: h = h.array().tanh().matrix(); break;
                case Act::softplus:
                    h = (h.array().max(S(0)) + (-h.array().abs()).exp().log1p()).matrix();
                    break;
            }
        }
        return h;
    }

    std::vector<Parameter<S>*> params() {
        std::vector<Parameter<S>*> out;
        for (DenseLayer<S>& l : layers) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

    std::vector<const Parameter<S>*> params() const {
        std::vector<const Parameter<S>*> out;
        for (const DenseLayer<S>& l : layers) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

    int in_dim() const { return static_cast<int>(layers.front().weight.value.cols()); }
    int out_dim() const { return static_cast<int>(layers.back().weight.value.rows()); }
};

// Adam with bias correction. Moment buffers are keyed by position in the
// parameter list, which must stay stable across steps.
template <typename S>
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;
    std::vector<Mat<S>> m, v;

    explicit Adam(double learning_rate = 1e-3) : lr(learning_rate) {}

    void step(const std::vector<Parameter<S>*>& params) {
        if (m.empty()) {
            for (Parameter<S>* p : params) {
                m.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
                v.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
            }
        }
        if (m.size() != params.size())
            throw ContractViolation("adam: parameter list size changed between steps");
        ++step_count;
        const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
        const S corr1 = static_cast<S>(1.0 - std::pow(beta1, static_cast<double>(step_count)));
        const S corr2 = static_cast<S>(1.0 - std::pow(beta2, static_cast<double>(step_count)));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter<S>& p = *params[i];
            if (!p.grad.allFinite())
                throw TrainingError("non-finite gradient for parameter " + p.name);
            m[i] = b1 * m[i] + (S(1) - b1) * p.grad;
            v[i] = b2 * v[i] + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
            const auto mhat = (m[i] / corr1).array();
            const auto vhat = (v[i] / corr2).array();
            p.value -= (static_cast<S>(lr) * mhat / (vhat.sqrt() + static_cast<S>(eps))).matrix();
        }
    }

    static void zero_grads(const std::vector<Parameter<S>*>& params) {
        for (Parameter<S>* p : params) p->zero_grad();
    }
};

// Reparameterized diagonal Gaussian draw with its log-density. log_std is
// clamped to [-20, 2] inside. The tanh-squash Jacobian correction is applied
// by the caller on the squashed sample.
template <typename S>
struct GaussianSample {
    Var<S> sample;
    Var<S> log_prob;  // 1 x batch
};

template <typename S>
GaussianSample<S> gaussian_head(Tape<S>& t, Var<S> mean, Var<S> log_std, RngStream& rng) {
    // Copy the dimensions up front: pushing nodes below may reallocate the
    // tape's storage and invalidate references returned by value().
    const Eigen::Index rows = t.value(mean).rows();
    const Eigen::Index cols = t.value(mean).cols();
    detail::require_same_shape(t.value(mean), t.value(log_std), "gaussian_head");
    Var<S> ls = clamp(log_std, S(-20), S(2));
    Mat<S> eps(rows, cols);
    for (Eigen::Index j = 0; j < eps.cols(); ++j)
        for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, j) = static_cast<S>(rng.normal());
    Var<S> eps_v = t.constant(eps);
    Var<S> smp = add(mean, mul(exp_op(ls), eps_v));
    // log N(sample; mean, std) with sample = mean + std*eps:
    //   sum over dims of (-log_std - eps^2/2 - log(2*pi)/2)
    const S half_log_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));
    Var<S> per_dim = sub(neg(ls), t.constant(((eps.array().square() * S(0.5)) + half_log_2pi).matrix()));
    return {smp, colwise_sum(per_dim)};
}

// Binary parameter container: magic "NDA1", entry count, then per entry the
// name, rank, dims (u64 little-endian) and row-major f32 data.
template <typename S>
void save_checkpoint(const std::string& path, const std::vector<const Parameter<S>*>& params) {
    BinaryWriter w(path);
    w.bytes("NDA1", 4);
    w.u64(params.size());
    for (const Parameter<S>* p : params) {
        w.u64(p->name.size());
        w.bytes(p->name.data(), p->name.size());
        w.u64(2);
        w.u64(static_cast<std::uint64_t>(p->value.rows()));
        w.u64(static_cast<std::uint64_t>(p->value.cols()));
        for (Eigen::Index i = 0; i < p->value.rows(); ++i)
            for (Eigen::Index j = 0; j < p->value.cols(); ++j)
                w.f32(static_cast<float>(p->value(i, j)));
    }
}

template <typename S>
void load_checkpoint(const std::string& path, const std::vector<Parameter<S>*>& params) {
    BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "NDA1") throw IoError("not a parameter checkpoint: " + path);
    const std::uint64_t count = r.u64();
    struct Entry {
        std::uint64_t rows, cols;
        std::vector<float> data;
    };
    std::map<std::string, Entry> entries;
    for (std::uint64_t e = 0; e < count; ++e) {
        const std::uint64_t name_len = r.u64();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        const std::uint64_t rank = r.u64();
        if (rank != 2) throw IoError("checkpoint entry " + name + " has unsupported rank");
        Entry en;
        en.rows = r.u64();
        en.cols = r.u64();
        en.data.resize(en.rows * en.cols);
        for (float& f : en.data) f = r.f32();
        entries.emplace(std::move(name), std::move(en));
    }
    for (Parameter<S>* p : params) {
        auto it = entries.find(p->name);
        if (it == entries.end()) throw IoError("checkpoint missing parameter " + p->name);
        const Entry& en = it->second;
        if (static_cast<Eigen::Index>(en.rows) != p->value.rows() ||
            static_cast<Eigen::Index>(en.cols) != p->value.cols())
            throw IoError("checkpoint shape mismatch for " + p->name + ": file " +
                          shape_str(static_cast<Eigen::Index>(en.rows), static_cast<Eigen::Index>(en.cols)) +
                          " vs model " + shape_str(p->value.rows(), p->value.cols()));
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < p->value.rows(); ++i)
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) p->value(i, j) = static_cast<S>(en.data[k++]);
        p->zero_grad();
    }
}

}  // namespace co2rl::ndauto
