#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "co2rl/common/errors.hpp"
#include "co2rl/common/rng.hpp"
#include "co2rl/datapipe/dataset.hpp"
#include "co2rl/ndauto/autodiff.hpp"
#include "co2rl/ndauto/nn.hpp"

namespace co2rl::e2co {

using ndauto::Mat;
using ndauto::Var;

// Shape of the latent surrogate. The flattened state is [pressure; z_co2]
// (2*n_b entries, normalized), controls are [producer_bhp; injector_rate]
// (n_u entries) and observations are [q_w; q_g; p_wf] (n_y entries).
struct ModelDims {
    int n_b = 0;
    int d_z = 50;
    int n_u = 0;
    int n_y = 0;
    std::vector<int> enc_hidden{512, 256};
    int trunk_width = 200;

    int state_dim() const { return 2 * n_b; }

    // observation blocks only exist when the control/observation counts are
    // consistent with a producer/injector split
    int n_prod() const {
        if (n_y - n_u <= 0 || 2 * n_u - n_y <= 0)
            throw ContractViolation("e2co dims: n_u=" + std::to_string(n_u) + ", n_y=" +
                                    std::to_string(n_y) + " do not split into producers and injectors");
        return n_y - n_u;
    }
    int n_inj() const {
        n_prod();
        return 2 * n_u - n_y;
    }

    void validate() const {
        if (n_b <= 0 || d_z <= 0 || n_u <= 0 || n_y <= 0 || trunk_width <= 0)
            throw ConfigError("e2co dims: counts must be positive");
        for (int h : enc_hidden)
            if (h <= 0) throw ConfigError("e2co dims: hidden widths must be positive");
    }
};

struct LossWeights {
    double rec = 1.0;
    double kl = 0.01;
    double yobs = 1.0;

    void validate() const {
        if (!(rec > 0.0) || kl < 0.0 || yobs < 0.0)
            throw ConfigError("loss weights: rec must be positive, others nonnegative");
    }
};

struct LossComponents {
    double rec = 0.0;
    double kl = 0.0;
    double yobs = 0.0;

    double weighted_total(const LossWeights& w) const {
        return w.rec * rec + w.kl * kl + w.yobs * yobs;
    }
};

struct LossValue {
    double total = 0.0;
    LossComponents parts;
};

namespace detail {

inline void check_rows(const char* op, Eigen::Index got, Eigen::Index want) {
    if (got != want)
        throw ContractViolation(std::string(op) + ": expected " + std::to_string(want) +
                                " rows, got " + std::to_string(got));
}

inline void check_batch(const char* op, Eigen::Index a, Eigen::Index b) {
    if (a != b)
        throw ContractViolation(std::string(op) + ": batch size mismatch, " + std::to_string(a) +
                                " vs " + std::to_string(b));
}

}  // namespace detail

// Encoder/decoder over the flattened state plus trunk+head networks that
// produce the locally linear transition z' = A(z) z + B(z) u and output
// y = C(z) z' + D(z) u. Head outputs are reshaped column-major; there is no
// nonlinearity after the heads.
template <typename S>
struct E2coModel {
    ModelDims dims;
    datapipe::NormStats stats;
    ndauto::Mlp<S> encoder, decoder;
    ndauto::Mlp<S> trans_trunk, head_a, head_b;
    ndauto::Mlp<S> out_trunk, head_c, head_d;

    static E2coModel create(const ModelDims& dims, const datapipe::NormStats& stats,
                            std::uint64_t seed) {
        dims.validate();
        stats.validate();
        using ndauto::Act;
        using ndauto::Mlp;
        RngStream rng(seed);
        const std::vector<int> dec_hidden(dims.enc_hidden.rbegin(), dims.enc_hidden.rend());
        E2coModel m;
        m.dims = dims;
        m.stats = stats;
        m.encoder = Mlp<S>::create("enc", dims.state_dim(), dims.enc_hidden, dims.d_z,
                                   Act::relu, Act::identity, rng);
        m.decoder = Mlp<S>::create("dec", dims.d_z, dec_hidden, dims.state_dim(),
                                   Act::relu, Act::identity, rng);
        m.trans_trunk = Mlp<S>::create("trans.trunk", dims.d_z, {}, dims.trunk_width,
                                       Act::relu, Act::relu, rng);
        m.head_a = Mlp<S>::create("trans.a", dims.trunk_width, {}, dims.d_z * dims.d_z,
                                  Act::identity, Act::identity, rng);
        m.head_b = Mlp<S>::create("trans.b", dims.trunk_width, {}, dims.d_z * dims.n_u,
                                  Act::identity, Act::identity, rng);
        m.out_trunk = Mlp<S>::create("out.trunk", dims.d_z, {}, dims.trunk_width,
                                     Act::relu, Act::relu, rng);
        m.head_c = Mlp<S>::create("out.c", dims.trunk_width, {}, dims.n_y * dims.d_z,
                                  Act::identity, Act::identity, rng);
        m.head_d = Mlp<S>::create("out.d", dims.trunk_width, {}, dims.n_y * dims.n_u,
                                  Act::identity, Act::identity, rng);
        return m;
    }

    std::vector<ndauto::Parameter<S>*> params() {
        std::vector<ndauto::Parameter<S>*> out;
        for (auto* net : {&encoder, &decoder, &trans_trunk, &head_a, &head_b,
                          &out_trunk, &head_c, &head_d}) {
            auto ps = net->params();
            out.insert(out.end(), ps.begin(), ps.end());
        }
        return out;
    }

    std::vector<const ndauto::Parameter<S>*> params() const {
        std::vector<const ndauto::Parameter<S>*> out;
        for (const auto* net : {&encoder, &decoder, &trans_trunk, &head_a, &head_b,
                                &out_trunk, &head_c, &head_d}) {
            auto ps = net->params();
            out.insert(out.end(), ps.begin(), ps.end());
        }
        return out;
    }
};

// ---- value-only evaluation (columns are batch samples) ----

template <typename S>
Mat<S> encode_batch(const E2coModel<S>& m, const Mat<S>& x) {
    detail::check_rows("encode", x.rows(), m.dims.state_dim());
    return m.encoder.forward(x);
}

template <typename S>
Mat<S> decode_batch(const E2coModel<S>& m, const Mat<S>& z) {
    detail::check_rows("decode", z.rows(), m.dims.d_z);
    return m.decoder.forward(z);
}

template <typename S>
Mat<S> transition_batch(const E2coModel<S>& m, const Mat<S>& z, const Mat<S>& u) {
    const int dz = m.dims.d_z, nu = m.dims.n_u;
    detail::check_rows("transition", z.rows(), dz);
    detail::check_rows("transition", u.rows(), nu);
    detail::check_batch("transition", z.cols(), u.cols());
    const Mat<S> h = m.trans_trunk.forward(z);
    const Mat<S> ta = m.head_a.forward(h);
    const Mat<S> tb = m.head_b.forward(h);
    Mat<S> out(dz, z.cols());
    for (Eigen::Index k = 0; k < z.cols(); ++k)
        out.col(k) = Eigen::Map<const Mat<S>>(ta.col(k).data(), dz, dz) * z.col(k) +
                     Eigen::Map<const Mat<S>>(tb.col(k).data(), dz, nu) * u.col(k);
    return out;
}

template <typename S>
Mat<S> observe_batch(const E2coModel<S>& m, const Mat<S>& z_next, const Mat<S>& z_curr,
                     const Mat<S>& u) {
    const int dz = m.dims.d_z, nu = m.dims.n_u, ny = m.dims.n_y;
    detail::check_rows("observe", z_next.rows(), dz);
    detail::check_rows("observe", z_curr.rows(), dz);
    detail::check_rows("observe", u.rows(), nu);
    detail::check_batch("observe", z_next.cols(), z_curr.cols());
    detail::check_batch("observe", z_next.cols(), u.cols());
    const Mat<S> h = m.out_trunk.forward(z_curr);
    const Mat<S> tc = m.head_c.forward(h);
    const Mat<S> td = m.head_d.forward(h);
    Mat<S> out(ny, z_next.cols());
    for (Eigen::Index k = 0; k < z_next.cols(); ++k)
        out.col(k) = Eigen::Map<const Mat<S>>(tc.col(k).data(), ny, dz) * z_next.col(k) +
                     Eigen::Map<const Mat<S>>(td.col(k).data(), ny, nu) * u.col(k);
    return out;
}

// ---- graph-building versions used for training ----

template <typename S>
Var<S> encode_graph(ndauto::Tape<S>& t, const E2coModel<S>& m, Var<S> x) {
    detail::check_rows("encode", t.value(x).rows(), m.dims.state_dim());
    return m.encoder.apply(t, x);
}

template <typename S>
Var<S> decode_graph(ndauto::Tape<S>& t, const E2coModel<S>& m, Var<S> z) {
    detail::check_rows("decode", t.value(z).rows(), m.dims.d_z);
    return m.decoder.apply(t, z);
}

template <typename S>
Var<S> transition_graph(ndauto::Tape<S>& t, const E2coModel<S>& m, Var<S> z, Var<S> u) {
    const int dz = m.dims.d_z, nu = m.dims.n_u;
    detail::check_rows("transition", t.value(z).rows(), dz);
    detail::check_rows("transition", t.value(u).rows(), nu);
    detail::check_batch("transition", t.value(z).cols(), t.value(u).cols());
    Var<S> h = m.trans_trunk.apply(t, z);
    Var<S> az = ndauto::bilinear_apply(m.head_a.apply(t, h), z, dz, dz);
    Var<S> bu = ndauto::bilinear_apply(m.head_b.apply(t, h), u, dz, nu);
    return ndauto::add(az, bu);
}

template <typename S>
Var<S> observe_graph(ndauto::Tape<S>& t, const E2coModel<S>& m, Var<S> z_next, Var<S> z_curr,
                     Var<S> u) {
    const int dz = m.dims.d_z, nu = m.dims.n_u, ny = m.dims.n_y;
    detail::check_rows("observe", t.value(z_next).rows(), dz);
    detail::check_rows("observe", t.value(z_curr).rows(), dz);
    detail::check_rows("observe", t.value(u).rows(), nu);
    detail::check_batch("observe", t.value(z_next).cols(), t.value(u).cols());
    Var<S> h = m.out_trunk.apply(t, z_curr);
    Var<S> cz = ndauto::bilinear_apply(m.head_c.apply(t, h), z_next, ny, dz);
    Var<S> du = ndauto::bilinear_apply(m.head_d.apply(t, h), u, ny, nu);
    return ndauto::add(cz, du);
}

// ---- batches from dataset tuples ----

inline Eigen::VectorXd flatten_state(const simcore::StateField& x) {
    Eigen::VectorXd v(x.pressure.size() + x.z_co2.size());
    v.head(x.pressure.size()) = x.pressure.matrix();
    v.tail(x.z_co2.size()) = x.z_co2.matrix();
    return v;
}

inline simcore::StateField unflatten_state(const Eigen::VectorXd& v) {
    if (v.size() % 2 != 0) throw ContractViolation("state vector length must be even");
    const Eigen::Index n = v.size() / 2;
    simcore::StateField x;
    x.pressure = v.head(n).array();
    x.z_co2 = v.tail(n).array();
    return x;
}

inline Eigen::VectorXd flatten_control(const simcore::ControlVector& u) {
    Eigen::VectorXd v(u.producer_bhp.size() + u.injector_rate.size());
    v.head(u.producer_bhp.size()) = u.producer_bhp.matrix();
    v.tail(u.injector_rate.size()) = u.injector_rate.matrix();
    return v;
}

inline simcore::ControlVector unflatten_control(const Eigen::VectorXd& v, int n_prod, int n_inj) {
    detail::check_rows("unflatten_control", v.size(), n_prod + n_inj);
    simcore::ControlVector u;
    u.producer_bhp = v.head(n_prod).array();
    u.injector_rate = v.tail(n_inj).array();
    return u;
}

inline Eigen::VectorXd flatten_observation(const simcore::ObservationVector& y) {
    Eigen::VectorXd v(y.q_w.size() + y.q_g.size() + y.p_wf.size());
    v.head(y.q_w.size()) = y.q_w.matrix();
    v.segment(y.q_w.size(), y.q_g.size()) = y.q_g.matrix();
    v.tail(y.p_wf.size()) = y.p_wf.matrix();
    return v;
}

inline simcore::ObservationVector unflatten_observation(const Eigen::VectorXd& v, int n_prod,
                                                        int n_inj) {
    detail::check_rows("unflatten_observation", v.size(), 2 * n_prod + n_inj);
    simcore::ObservationVector y;
    y.q_w = v.head(n_prod).array();
    y.q_g = v.segment(n_prod, n_prod).array();
    y.p_wf = v.tail(n_inj).array();
    return y;
}

template <typename S>
struct Batch {
    Mat<S> x_t, u, x_next, y_next;

    Eigen::Index size() const { return x_t.cols(); }
};

template <typename S>
Batch<S> pack_batch(const datapipe::Dataset& ds, const std::vector<int>& idx) {
    if (idx.empty()) throw ContractViolation("batch must be nonempty");
    Batch<S> b;
    b.x_t.resize(2 * ds.n_cells, static_cast<Eigen::Index>(idx.size()));
    b.u.resize(ds.n_u(), static_cast<Eigen::Index>(idx.size()));
    b.x_next.resize(2 * ds.n_cells, static_cast<Eigen::Index>(idx.size()));
    b.y_next.resize(ds.n_y(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const datapipe::TransitionTuple& tp = ds.tuples.at(static_cast<std::size_t>(idx[k]));
        const auto col = static_cast<Eigen::Index>(k);
        b.x_t.col(col) = flatten_state(tp.x_t).cast<S>();
        b.u.col(col) = flatten_control(tp.u_t).cast<S>();
        b.x_next.col(col) = flatten_state(tp.x_next).cast<S>();
        b.y_next.col(col) = flatten_observation(tp.y_next).cast<S>();
    }
    return b;
}

// ---- loss ----

template <typename S>
struct LossGraph {
    Var<S> total, rec, kl, yobs;
};

// Per-sample terms: rec = |x_t - P(Q(x_t))| + |x_next - P(zhat)|,
// kl = |Q(x_t)| + |Q(x_next) - zhat|, yobs = |y_next - yhat|, all Euclidean
// norms (not squared); the batch loss is the sample mean.
template <typename S>
LossGraph<S> loss_graph(ndauto::Tape<S>& t, const E2coModel<S>& m, Var<S> x_t, Var<S> u,
                        Var<S> x_next, Var<S> y_next, const LossWeights& w) {
    w.validate();
    detail::check_rows("loss", t.value(y_next).rows(), m.dims.n_y);
    detail::check_batch("loss", t.value(x_t).cols(), t.value(x_next).cols());
    detail::check_batch("loss", t.value(x_t).cols(), t.value(y_next).cols());
    using namespace ndauto;
    Var<S> z_t = encode_graph(t, m, x_t);
    Var<S> z_next = encode_graph(t, m, x_next);
    Var<S> z_hat = transition_graph(t, m, z_t, u);
    Var<S> xhat_t = decode_graph(t, m, z_t);
    Var<S> xhat_next = decode_graph(t, m, z_hat);
    Var<S> y_hat = observe_graph(t, m, z_hat, z_t, u);
    Var<S> rec = mean_all(add(colwise_l2norm(sub(x_t, xhat_t)),
                              colwise_l2norm(sub(x_next, xhat_next))));
    Var<S> kl = mean_all(add(colwise_l2norm(z_t), colwise_l2norm(sub(z_next, z_hat))));
    Var<S> yo = mean_all(colwise_l2norm(sub(y_next, y_hat)));
    Var<S> total = add(add(scale(rec, static_cast<S>(w.rec)), scale(kl, static_cast<S>(w.kl))),
                       scale(yo, static_cast<S>(w.yobs)));
    return {total, rec, kl, yo};
}

inline void require_finite(const LossComponents& parts) {
    if (!std::isfinite(parts.rec)) throw TrainingError("reconstruction loss is not finite");
    if (!std::isfinite(parts.kl)) throw TrainingError("latent regularization loss is not finite");
    if (!std::isfinite(parts.yobs)) throw TrainingError("observation loss is not finite");
}

template <typename S>
LossValue total_loss(const E2coModel<S>& m, const Batch<S>& b, const LossWeights& w) {
    w.validate();
    detail::check_rows("loss", b.y_next.rows(), m.dims.n_y);
    detail::check_batch("loss", b.x_t.cols(), b.x_next.cols());
    detail::check_batch("loss", b.x_t.cols(), b.y_next.cols());
    const Mat<S> z_t = encode_batch(m, b.x_t);
    const Mat<S> z_next = encode_batch(m, b.x_next);
    const Mat<S> z_hat = transition_batch(m, z_t, b.u);
    const Mat<S> xhat_t = decode_batch(m, z_t);
    const Mat<S> xhat_next = decode_batch(m, z_hat);
    const Mat<S> y_hat = observe_batch(m, z_hat, z_t, b.u);
    LossComponents parts;
    parts.rec = static_cast<double>(
        ((b.x_t - xhat_t).colwise().norm() + (b.x_next - xhat_next).colwise().norm()).mean());
    parts.kl = static_cast<double>(
        (z_t.colwise().norm() + (z_next - z_hat).colwise().norm()).mean());
    parts.yobs = static_cast<double>((b.y_next - y_hat).colwise().norm().mean());
    require_finite(parts);
    return {parts.weighted_total(w), parts};
}

}  // namespace co2rl::e2co
