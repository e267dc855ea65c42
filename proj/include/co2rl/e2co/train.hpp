#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "co2rl/common/kvfile.hpp"
#include "co2rl/e2co/model.hpp"

namespace co2rl::e2co {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 4;
    double lr = 1e-3;
    double lr_decay = 0.5;
    int lr_decay_every = 50;
    std::uint64_t seed = 7;
    LossWeights weights;
    ModelDims dims;  // n_b/n_u/n_y are taken from the dataset

    void validate() const {
        if (epochs < 0) throw ConfigError("e2co train: epochs must be nonnegative");
        if (batch_size <= 0) throw ConfigError("e2co train: batch size must be positive");
        if (lr <= 0.0 || lr_decay <= 0.0 || lr_decay_every <= 0)
            throw ConfigError("e2co train: learning-rate settings must be positive");
        weights.validate();
    }
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_total = 0.0;
    double val_total = 0.0;
    LossComponents train_parts, val_parts;
};

template <typename S>
struct TrainResult {
    E2coModel<S> model;
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
};

// Sample-mean loss over a whole dataset, evaluated in fixed-size chunks.
template <typename S>
LossValue evaluate_dataset(const E2coModel<S>& m, const datapipe::Dataset& ds,
                           const LossWeights& w, int chunk = 256) {
    if (ds.tuples.empty()) throw ConfigError("e2co eval: empty dataset");
    if (chunk <= 0) throw ConfigError("e2co eval: chunk must be positive");
    const int n = static_cast<int>(ds.tuples.size());
    double tot = 0.0;
    LossComponents acc;
    std::vector<int> idx;
    for (int start = 0; start < n; start += chunk) {
        const int bsz = std::min(chunk, n - start);
        idx.resize(static_cast<std::size_t>(bsz));
        std::iota(idx.begin(), idx.end(), start);
        const LossValue v = total_loss(m, pack_batch<S>(ds, idx), w);
        tot += v.total * bsz;
        acc.rec += v.parts.rec * bsz;
        acc.kl += v.parts.kl * bsz;
        acc.yobs += v.parts.yobs * bsz;
    }
    return {tot / n, {acc.rec / n, acc.kl / n, acc.yobs / n}};
}

// Minibatch Adam over shuffled epochs; the learning rate is multiplied by
// lr_decay every lr_decay_every epochs. Returns the parameters that scored
// the best validation loss.
template <typename S>
TrainResult<S> train(const datapipe::Dataset& train_ds, const datapipe::Dataset& val_ds,
                     const TrainConfig& cfg_in) {
    TrainConfig cfg = cfg_in;
    cfg.dims.n_b = train_ds.n_cells;
    cfg.dims.n_u = train_ds.n_u();
    cfg.dims.n_y = train_ds.n_y();
    cfg.validate();
    cfg.dims.validate();
    if (train_ds.tuples.empty()) throw ConfigError("e2co train: empty training set");
    if (val_ds.tuples.empty()) throw ConfigError("e2co train: empty validation set");
    if (val_ds.n_cells != train_ds.n_cells || val_ds.n_u() != train_ds.n_u() ||
        val_ds.n_y() != train_ds.n_y())
        throw ConfigError("e2co train: validation set shape differs from training set");

    TrainResult<S> res;
    res.model = E2coModel<S>::create(cfg.dims, train_ds.stats, derive_seed(cfg.seed, 0));
    if (cfg.epochs == 0) return res;

    std::vector<ndauto::Parameter<S>*> params = res.model.params();
    ndauto::Adam<S> opt(cfg.lr);
    std::vector<Mat<S>> best;
    const int n = static_cast<int>(train_ds.tuples.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    ndauto::Tape<S> t;  // reused across batches so node buffers stay warm

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.lr = cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.lr_decay_every);
        RngStream shuffle_rng(cfg.seed, 1 + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order.begin(), order.end());

        double tot = 0.0;
        LossComponents acc;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n - start);
            const std::vector<int> idx(order.begin() + start, order.begin() + start + bsz);
            const Batch<S> b = pack_batch<S>(train_ds, idx);
            t.reset();
            Var<S> xt = t.input(b.x_t);
            Var<S> uu = t.input(b.u);
            Var<S> xn = t.input(b.x_next);
            Var<S> yn = t.input(b.y_next);
            const LossGraph<S> g = loss_graph(t, res.model, xt, uu, xn, yn, cfg.weights);
            const double btot = static_cast<double>(t.value(g.total)(0, 0));
            if (!std::isfinite(btot))
                throw TrainingError("training diverged at epoch " + std::to_string(epoch));
            tot += btot * bsz;
            acc.rec += static_cast<double>(t.value(g.rec)(0, 0)) * bsz;
            acc.kl += static_cast<double>(t.value(g.kl)(0, 0)) * bsz;
            acc.yobs += static_cast<double>(t.value(g.yobs)(0, 0)) * bsz;
            ndauto::Adam<S>::zero_grads(params);
            t.backward(g.total);
            opt.step(params);
        }

        EpochStats st;
        st.epoch = epoch;
        st.lr = opt.lr;
        st.train_total = tot / n;
        st.train_parts = {acc.rec / n, acc.kl / n, acc.yobs / n};
        const LossValue v = evaluate_dataset(res.model, val_ds, cfg.weights);
        st.val_total = v.total;
        st.val_parts = v.parts;
        if (!std::isfinite(st.val_total))
            throw TrainingError("training diverged at epoch " + std::to_string(epoch));
        res.history.push_back(st);

        if (st.val_total < res.best_val) {
            res.best_val = st.val_total;
            res.best_epoch = epoch;
            best.clear();
            for (const auto* p : params) best.push_back(p->value);
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = best[i];
        params[i]->zero_grad();
    }
    return res;
}

// ---- recursive latent rollout ----

template <typename S>
struct Rollout {
    Mat<S> latents;       // d_z x (steps+1)
    Mat<S> states;        // 2*n_b x (steps+1), decoded latents, normalized units
    Mat<S> observations;  // n_y x steps, normalized units
};

// z_0 = Q(normalize(x_0)); each step advances the latent with the transition
// network and never re-encodes a decoded state.
template <typename S>
Rollout<S> rollout(const E2coModel<S>& m, const simcore::StateField& x0,
                   const std::vector<simcore::ControlVector>& schedule) {
    const int steps = static_cast<int>(schedule.size());
    const Eigen::VectorXd x0n = flatten_state(datapipe::normalize_state(x0, m.stats));
    detail::check_rows("rollout", x0n.size(), m.dims.state_dim());
    Rollout<S> r;
    r.latents.resize(m.dims.d_z, steps + 1);
    r.states.resize(m.dims.state_dim(), steps + 1);
    r.observations.resize(m.dims.n_y, steps);
    Mat<S> z = encode_batch(m, Mat<S>(x0n.cast<S>()));
    r.latents.col(0) = z;
    r.states.col(0) = decode_batch(m, z);
    for (int t = 0; t < steps; ++t) {
        const Eigen::VectorXd un =
            flatten_control(datapipe::normalize_control(schedule[static_cast<std::size_t>(t)], m.stats));
        const Mat<S> u = un.cast<S>();
        const Mat<S> z1 = transition_batch(m, z, u);
        r.observations.col(t) = observe_batch(m, z1, z, u);
        z = z1;
        r.latents.col(t + 1) = z;
        r.states.col(t + 1) = decode_batch(m, z);
    }
    return r;
}

template <typename S>
simcore::StateField rollout_state(const E2coModel<S>& m, const Rollout<S>& r, int t) {
    if (t < 0 || t >= static_cast<int>(r.states.cols()))
        throw ContractViolation("rollout state index out of range");
    return datapipe::denormalize_state(
        unflatten_state(r.states.col(t).template cast<double>()), m.stats);
}

template <typename S>
simcore::ObservationVector rollout_observation(const E2coModel<S>& m, const Rollout<S>& r, int t) {
    if (t < 0 || t >= static_cast<int>(r.observations.cols()))
        throw ContractViolation("rollout observation index out of range");
    return datapipe::denormalize_observation(
        unflatten_observation(r.observations.col(t).template cast<double>(), m.dims.n_prod(),
                              m.dims.n_inj()),
        m.stats);
}

// ---- checkpointing: parameter container plus a text sidecar ----

template <typename S>
void save_model(const std::string& path, const E2coModel<S>& m,
                const std::string& dataset_fingerprint) {
    ndauto::save_checkpoint(path, m.params());
    KvTree meta;
    meta.set_int("model.d_z", m.dims.d_z);
    meta.set_int("model.n_b", m.dims.n_b);
    meta.set_int("model.n_u", m.dims.n_u);
    meta.set_int("model.n_y", m.dims.n_y);
    meta.set_int("model.trunk_width", m.dims.trunk_width);
    meta.set("model.enc_hidden", join_ints(m.dims.enc_hidden));
    meta.set_double("norm.p_min", m.stats.p_min);
    meta.set_double("norm.p_max", m.stats.p_max);
    meta.set_double("norm.z_min", m.stats.z_min);
    meta.set_double("norm.z_max", m.stats.z_max);
    meta.set_double("norm.qw_min", m.stats.qw_min);
    meta.set_double("norm.qw_max", m.stats.qw_max);
    meta.set_double("norm.qg_min", m.stats.qg_min);
    meta.set_double("norm.qg_max", m.stats.qg_max);
    meta.set("dataset.fingerprint", dataset_fingerprint);
    meta.write_file(path + ".meta");
}

template <typename S>
E2coModel<S> load_model(const std::string& path, std::string* dataset_fingerprint = nullptr) {
    const KvTree meta = KvTree::parse_file(path + ".meta");
    ModelDims d;
    d.d_z = static_cast<int>(meta.get_int("model.d_z"));
    d.n_b = static_cast<int>(meta.get_int("model.n_b"));
    d.n_u = static_cast<int>(meta.get_int("model.n_u"));
    d.n_y = static_cast<int>(meta.get_int("model.n_y"));
    d.trunk_width = static_cast<int>(meta.get_int("model.trunk_width"));
    d.enc_hidden = split_ints(meta.get_string("model.enc_hidden"));
    datapipe::NormStats s;
    s.p_min = meta.get_double("norm.p_min");
    s.p_max = meta.get_double("norm.p_max");
    s.z_min = meta.get_double("norm.z_min");
    s.z_max = meta.get_double("norm.z_max");
    s.qw_min = meta.get_double("norm.qw_min");
    s.qw_max = meta.get_double("norm.qw_max");
    s.qg_min = meta.get_double("norm.qg_min");
    s.qg_max = meta.get_double("norm.qg_max");
    E2coModel<S> m = E2coModel<S>::create(d, s, 0);
    std::vector<ndauto::Parameter<S>*> ps = m.params();
    ndauto::load_checkpoint(path, ps);
    if (dataset_fingerprint) *dataset_fingerprint = meta.get_string("dataset.fingerprint", "");
    return m;
}

}  // namespace co2rl::e2co
