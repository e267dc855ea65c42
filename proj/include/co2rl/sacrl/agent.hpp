#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "co2rl/common/errors.hpp"
#include "co2rl/common/rng.hpp"
#include "co2rl/e2co/model.hpp"
#include "co2rl/econ/econ.hpp"
#include "co2rl/ndauto/autodiff.hpp"
#include "co2rl/ndauto/nn.hpp"

namespace co2rl::sacrl {

using ndauto::Mat;
using ndauto::Var;

struct SacConfig {
    double gamma_rl = 0.986;  // discount per control period
    double alpha = 0.2;       // entropy temperature, fixed
    double tau = 0.005;       // polyak mixing rate for the target critics
    int batch_size = 256;
    int replay_capacity = 100000;
    double lr = 3e-4;
    int env_steps = 20;   // per iteration; one episode of one control period each
    int grad_steps = 20;  // per iteration
    int episodes = 1000;  // iterations of the alternating loop
    double reward_scale = 1e-5;  // per dollar/day, keeps critic targets O(1)
    std::uint64_t seed = 0;
    std::vector<int> policy_hidden{256, 256};
    std::vector<int> critic_hidden{256, 256};

    void validate() const {
        if (!(gamma_rl > 0.0 && gamma_rl <= 1.0)) throw ConfigError("sac: gamma_rl must be in (0,1]");
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("sac: tau must be in (0,1]");
        if (alpha < 0.0) throw ConfigError("sac: alpha must be nonnegative");
        if (batch_size < 1 || replay_capacity < 1) throw ConfigError("sac: batch and capacity must be positive");
        if (env_steps < 1 || grad_steps < 0 || episodes < 0) throw ConfigError("sac: step counts out of range");
        if (!(lr > 0.0) || !(reward_scale > 0.0)) throw ConfigError("sac: lr and reward scale must be positive");
    }
};

// Physical control channels in flatten order ([producer_bhp; injector_rate])
// with their engineering bounds; maps the policy's [0,1] action coordinates
// onto physical units and back.
struct ActionSpace {
    int n_prod = 0;
    int n_inj = 0;
    simcore::ControlBounds bounds;

    int n_u() const { return n_prod + n_inj; }

    void validate() const {
        if (n_prod < 1 || n_inj < 0) throw ConfigError("action space: need n_prod >= 1, n_inj >= 0");
        bounds.validate();
    }

    double low(int i) const { return i < n_prod ? bounds.bhp_low : bounds.rate_low; }
    double high(int i) const { return i < n_prod ? bounds.bhp_high : bounds.rate_high; }

    simcore::ControlVector to_control(const Eigen::VectorXd& a01) const {
        if (a01.size() != n_u()) throw ContractViolation("action space: wrong action length");
        simcore::ControlVector u;
        u.producer_bhp.resize(n_prod);
        u.injector_rate.resize(n_inj);
        for (int i = 0; i < n_prod; ++i)
            u.producer_bhp[i] = bounds.bhp_low + a01[i] * (bounds.bhp_high - bounds.bhp_low);
        for (int i = 0; i < n_inj; ++i)
            u.injector_rate[i] =
                bounds.rate_low + a01[n_prod + i] * (bounds.rate_high - bounds.rate_low);
        return u;
    }

    Eigen::VectorXd to_normalized(const simcore::ControlVector& u) const {
        if (u.producer_bhp.size() != n_prod || u.injector_rate.size() != n_inj)
            throw ContractViolation("action space: wrong control shape");
        Eigen::VectorXd a(n_u());
        for (int i = 0; i < n_prod; ++i)
            a[i] = (u.producer_bhp[i] - bounds.bhp_low) / (bounds.bhp_high - bounds.bhp_low);
        for (int i = 0; i < n_inj; ++i)
            a[n_prod + i] =
                (u.injector_rate[i] - bounds.rate_low) / (bounds.rate_high - bounds.rate_low);
        return a;
    }
};

// Actor plus twin critics with their polyak-tracked targets. The policy maps
// a latent state to stacked [mean; log_std] rows; critics score [z; a] pairs
// where a is the action in [0,1] coordinates.
template <typename S>
struct SacNets {
    int d_z = 0;
    ActionSpace space;
    ndauto::Mlp<S> policy;
    ndauto::Mlp<S> q1, q2;
    ndauto::Mlp<S> q1_targ, q2_targ;

    static SacNets create(int d_z, const ActionSpace& space, const SacConfig& cfg,
                          std::uint64_t seed) {
        if (d_z < 1) throw ConfigError("sac nets: d_z must be positive");
        space.validate();
        using ndauto::Act;
        using ndauto::Mlp;
        RngStream rng(seed);
        const int n_u = space.n_u();
        SacNets n;
        n.d_z = d_z;
        n.space = space;
        n.policy = Mlp<S>::create("pi", d_z, cfg.policy_hidden, 2 * n_u, Act::relu,
                                  Act::identity, rng);
        n.q1 = Mlp<S>::create("q1", d_z + n_u, cfg.critic_hidden, 1, Act::relu, Act::identity, rng);
        n.q2 = Mlp<S>::create("q2", d_z + n_u, cfg.critic_hidden, 1, Act::relu, Act::identity, rng);
        n.q1_targ = Mlp<S>::create("q1t", d_z + n_u, cfg.critic_hidden, 1, Act::relu,
                                   Act::identity, rng);
        n.q2_targ = Mlp<S>::create("q2t", d_z + n_u, cfg.critic_hidden, 1, Act::relu,
                                   Act::identity, rng);
        copy_values(n.q1, n.q1_targ);
        copy_values(n.q2, n.q2_targ);
        return n;
    }

    static void copy_values(const ndauto::Mlp<S>& from, ndauto::Mlp<S>& to) {
        for (std::size_t l = 0; l < from.layers.size(); ++l) {
            to.layers[l].weight.value = from.layers[l].weight.value;
            to.layers[l].bias.value = from.layers[l].bias.value;
        }
    }

    std::vector<ndauto::Parameter<S>*> policy_params() { return policy.params(); }

    std::vector<ndauto::Parameter<S>*> critic_params() {
        auto out = q1.params();
        auto p2 = q2.params();
        out.insert(out.end(), p2.begin(), p2.end());
        return out;
    }

    std::vector<ndauto::Parameter<S>*> all_params() {
        std::vector<ndauto::Parameter<S>*> out;
        for (auto* net : {&policy, &q1, &q2, &q1_targ, &q2_targ}) {
            auto ps = net->params();
            out.insert(out.end(), ps.begin(), ps.end());
        }
        return out;
    }

    std::vector<const ndauto::Parameter<S>*> all_params() const {
        std::vector<const ndauto::Parameter<S>*> out;
        for (const auto* net : {&policy, &q1, &q2, &q1_targ, &q2_targ}) {
            auto ps = net->params();
            out.insert(out.end(), ps.begin(), ps.end());
        }
        return out;
    }
};

namespace detail {

inline constexpr double kLogStdLow = -20.0;
inline constexpr double kLogStdHigh = 2.0;

// log(1 - tanh(x)^2) evaluated as 2*(log 2 - x - softplus(-2x)); the direct
// form underflows once tanh saturates.
template <typename S>
Mat<S> tanh_log_jacobian(const Mat<S>& x) {
    const auto xa = x.array();
    const auto sp = (S(-2) * xa).max(S(0)) + ((S(-2) * xa).abs() * S(-1)).exp().log1p();
    return (S(2) * (S(std::numbers::ln2) - xa - sp)).matrix();
}

template <typename S>
void check_latent_rows(const char* op, const Mat<S>& z, int d_z) {
    if (z.rows() != d_z)
        throw ContractViolation(std::string(op) + ": expected " + std::to_string(d_z) +
                                " latent rows, got " + std::to_string(z.rows()));
}

}  // namespace detail

enum class ActMode { stochastic, deterministic };

struct ActResult {
    simcore::ControlVector control;  // physical units, always inside the bounds
    Eigen::VectorXd normalized;      // the same action in [0,1] coordinates
    double log_prob = 0.0;           // of the squashed sample
};

// Draws one action column per latent column; returns the [0,1] actions and
// their per-column squashed log-densities (value-only, no graph).
template <typename S>
std::pair<Mat<S>, Mat<S>> sample_actions(const ndauto::Mlp<S>& policy, const Mat<S>& z,
                                         ActMode mode, RngStream& rng) {
    const Mat<S> h = policy.forward(z);
    const Eigen::Index n_u = h.rows() / 2;
    const Mat<S> mean = h.topRows(n_u);
    const Mat<S> log_std =
        h.bottomRows(n_u).cwiseMax(S(detail::kLogStdLow)).cwiseMin(S(detail::kLogStdHigh));
    Mat<S> eps = Mat<S>::Zero(n_u, z.cols());
    if (mode == ActMode::stochastic)
        for (Eigen::Index j = 0; j < eps.cols(); ++j)
            for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, j) = static_cast<S>(rng.normal());
    const Mat<S> x = mean + log_std.array().exp().matrix().cwiseProduct(eps);
    const S half_log_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));
    const Mat<S> gauss =
        (-log_std.array() - eps.array().square() * S(0.5) - half_log_2pi).matrix();
    const Mat<S> log_prob =
        (gauss - detail::tanh_log_jacobian(x)).colwise().sum();
    Mat<S> a01 = ((x.array().tanh() + S(1)) * S(0.5)).matrix();
    return {std::move(a01), log_prob};
}

// One emitted control: reparameterized Gaussian, tanh squash, affine map to
// the physical bounds. Deterministic mode squashes the mean instead.
template <typename S>
ActResult act(const SacNets<S>& nets, const Mat<S>& z, ActMode mode, RngStream& rng) {
    detail::check_latent_rows("act", z, nets.d_z);
    if (z.cols() != 1) throw ContractViolation("act: expected a single latent column");
    auto [a01, logp] = sample_actions(nets.policy, z, mode, rng);
    ActResult r;
    r.normalized = a01.template cast<double>().col(0);
    r.control = nets.space.to_control(r.normalized);
    r.log_prob = static_cast<double>(logp(0, 0));
    return r;
}

// FIFO experience store. Entries hold latent states, the action in [0,1]
// coordinates and the scaled reward.
template <typename S>
struct ReplayRecord {
    Eigen::Matrix<S, Eigen::Dynamic, 1> z, u, z_next;
    S r = S(0);
    bool done = false;
};

template <typename S>
struct ReplayBuffer {
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ < 1) throw ConfigError("replay buffer: capacity must be positive");
    }

    void push(ReplayRecord<S> rec) {
        if (!rec.z.allFinite() || !rec.u.allFinite() || !rec.z_next.allFinite() ||
            !std::isfinite(static_cast<double>(rec.r)))
            throw ContractViolation("replay buffer: non-finite record");
        if (data_.size() < capacity_) {
            data_.push_back(std::move(rec));
        } else {
            data_[head_] = std::move(rec);
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }

    // logical index 0 is the oldest stored record
    const ReplayRecord<S>& at(std::size_t i) const {
        if (i >= data_.size()) throw ContractViolation("replay buffer: index out of range");
        return data_[(head_ + i) % data_.size()];
    }

    struct Batch {
        Mat<S> z, u, z_next;  // columns are samples
        Mat<S> r, done;       // 1 x batch
    };

    // uniform draw with replacement
    Batch sample(int batch_size, RngStream& rng) const {
        if (batch_size < 1) throw ContractViolation("replay buffer: batch size must be positive");
        if (data_.empty()) throw ContractViolation("replay buffer: cannot sample while empty");
        const auto d_z = at(0).z.size();
        const auto n_u = at(0).u.size();
        Batch b;
        b.z.resize(d_z, batch_size);
        b.u.resize(n_u, batch_size);
        b.z_next.resize(d_z, batch_size);
        b.r.resize(1, batch_size);
        b.done.resize(1, batch_size);
        for (int k = 0; k < batch_size; ++k) {
            const auto i = static_cast<std::size_t>(rng.uniform01() * static_cast<double>(data_.size()));
            const ReplayRecord<S>& rec = at(i < data_.size() ? i : data_.size() - 1);
            b.z.col(k) = rec.z;
            b.u.col(k) = rec.u;
            b.z_next.col(k) = rec.z_next;
            b.r(0, k) = rec.r;
            b.done(0, k) = rec.done ? S(1) : S(0);
        }
        return b;
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<ReplayRecord<S>> data_;
};

// Bellman targets r + gamma * (1 - done) * (min_j Q_targ,j(z', a') - alpha *
// log pi(a'|z')) with a' freshly sampled from the current policy; value-only,
// the targets are constants during differentiation.
template <typename S>
Mat<S> critic_targets(const typename ReplayBuffer<S>::Batch& b, const SacNets<S>& nets,
                      const SacConfig& cfg, RngStream& rng) {
    if (b.z.cols() == 0) throw ContractViolation("critic targets: empty batch");
    auto [a_next, logp] = sample_actions(nets.policy, b.z_next, ActMode::stochastic, rng);
    Mat<S> qin(b.z_next.rows() + a_next.rows(), b.z_next.cols());
    qin.topRows(b.z_next.rows()) = b.z_next;
    qin.bottomRows(a_next.rows()) = a_next;
    const Mat<S> tq = nets.q1_targ.forward(qin).cwiseMin(nets.q2_targ.forward(qin));
    const Mat<S> soft = tq - S(cfg.alpha) * logp;
    return b.r + S(cfg.gamma_rl) * (Mat<S>::Ones(1, b.z.cols()) - b.done).cwiseProduct(soft);
}

template <typename S>
struct CriticLosses {
    Var<S> q1_loss, q2_loss;
};

// Mean squared Bellman error per critic, on the tape.
template <typename S>
CriticLosses<S> critic_loss(ndauto::Tape<S>& t, const typename ReplayBuffer<S>::Batch& b,
                            SacNets<S>& nets, const SacConfig& cfg, RngStream& rng) {
    if (b.z.cols() == 0) throw ContractViolation("critic loss: empty batch");
    const Mat<S> target = critic_targets<S>(b, nets, cfg, rng);
    Mat<S> qin(b.z.rows() + b.u.rows(), b.z.cols());
    qin.topRows(b.z.rows()) = b.z;
    qin.bottomRows(b.u.rows()) = b.u;
    Var<S> in = t.input(qin);
    Var<S> tgt = t.constant(target);
    Var<S> l1 = mean_all(square(sub(nets.q1.apply(t, in), tgt)));
    Var<S> l2 = mean_all(square(sub(nets.q2.apply(t, in), tgt)));
    return {l1, l2};
}

template <typename S>
struct ActorLoss {
    Var<S> loss;           // -(mean min-critic score - alpha * mean log-prob)
    Var<S> mean_min_q;
    Var<S> mean_log_prob;
};

// Reparameterized policy objective; gradients flow through the sampled action
// into the policy. The critics also receive gradients on the tape — the
// caller keeps them frozen by stepping only the policy parameters.
template <typename S>
ActorLoss<S> actor_loss(ndauto::Tape<S>& t, const Mat<S>& z_batch, SacNets<S>& nets,
                        const SacConfig& cfg, RngStream& rng) {
    if (z_batch.cols() == 0) throw ContractViolation("actor loss: empty batch");
    detail::check_latent_rows("actor loss", z_batch, nets.d_z);
    const Eigen::Index n_u = nets.space.n_u();
    Var<S> zv = t.input(z_batch);
    Var<S> h = nets.policy.apply(t, zv);
    Var<S> mean = slice_rows(h, 0, n_u);
    Var<S> log_std = slice_rows(h, n_u, n_u);
    ndauto::GaussianSample<S> gs = ndauto::gaussian_head(t, mean, log_std, rng);
    Var<S> a = tanh_op(gs.sample);
    // squashed log-density: Gaussian part minus the tanh Jacobian
    Var<S> xs = gs.sample;
    Var<S> jac = colwise_sum(scale(
        sub(add_scalar(neg(xs), S(std::numbers::ln2)), softplus(scale(xs, S(-2)))), S(2)));
    Var<S> log_prob = sub(gs.log_prob, jac);
    Var<S> a01 = scale(add_scalar(a, S(1)), S(0.5));
    Var<S> qin = concat_rows(zv, a01);
    Var<S> min_q = minimum(nets.q1.apply(t, qin), nets.q2.apply(t, qin));
    Var<S> objective = sub(min_q, scale(log_prob, S(cfg.alpha)));
    ActorLoss<S> out;
    out.loss = neg(mean_all(objective));
    out.mean_min_q = mean_all(min_q);
    out.mean_log_prob = mean_all(log_prob);
    return out;
}

// target <- tau * online + (1 - tau) * target, element-wise
template <typename S>
void polyak_update(const ndauto::Mlp<S>& online, ndauto::Mlp<S>& target, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("polyak: tau must be in [0,1]");
    if (online.layers.size() != target.layers.size())
        throw ContractViolation("polyak: layer count mismatch");
    const S t = static_cast<S>(tau);
    for (std::size_t l = 0; l < online.layers.size(); ++l) {
        const auto& ow = online.layers[l].weight.value;
        const auto& ob = online.layers[l].bias.value;
        auto& tw = target.layers[l].weight.value;
        auto& tb = target.layers[l].bias.value;
        if (ow.rows() != tw.rows() || ow.cols() != tw.cols() || ob.rows() != tb.rows())
            throw ContractViolation("polyak: parameter shape mismatch");
        tw = t * ow + (S(1) - t) * tw;
        tb = t * ob + (S(1) - t) * tb;
    }
}

template <typename S>
struct EnvStep {
    Mat<S> z_next;                   // d_z x 1
    double reward = 0.0;             // scaled, what the agent trains on
    double cash_rate = 0.0;          // $/day before scaling
    simcore::ObservationVector obs;  // physical units
};

// One surrogate step: normalize the control, advance the latent, predict the
// well observations, price them. Predicted rates are floored at zero before
// pricing — the surrogate can emit slightly negative rates near the data
// boundary, which the economics reject as unphysical.
template <typename S>
EnvStep<S> latent_env_step(const e2co::E2coModel<S>& m, const Mat<S>& z,
                           const simcore::ControlVector& u, const econ::EconParams& ep,
                           double reward_scale) {
    if (!(reward_scale > 0.0)) throw ConfigError("env step: reward scale must be positive");
    detail::check_latent_rows("env step", z, m.dims.d_z);
    if (z.cols() != 1) throw ContractViolation("env step: expected a single latent column");
    const Eigen::VectorXd un = e2co::flatten_control(datapipe::normalize_control(u, m.stats));
    const Mat<S> uc = un.template cast<S>();
    EnvStep<S> step;
    step.z_next = e2co::transition_batch(m, z, uc);
    const Mat<S> yn = e2co::observe_batch(m, step.z_next, z, uc);
    simcore::ObservationVector y = e2co::unflatten_observation(
        yn.template cast<double>().col(0), m.dims.n_prod(), m.dims.n_inj());
    y = datapipe::denormalize_observation(y, m.stats);
    y.q_w = y.q_w.max(0.0);
    y.q_g = y.q_g.max(0.0);
    step.obs = y;
    const std::vector<double> inj(u.injector_rate.begin(), u.injector_rate.end());
    const std::vector<double> qw(y.q_w.begin(), y.q_w.end());
    const std::vector<double> qg(y.q_g.begin(), y.q_g.end());
    step.cash_rate = econ::reward(inj, qw, qg, ep);
    step.reward = step.cash_rate * reward_scale;
    return step;
}

}  // namespace co2rl::sacrl
