#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "co2rl/common/kvfile.hpp"
#include "co2rl/datapipe/dataset.hpp"
#include "co2rl/sacrl/agent.hpp"
#include "co2rl/simcore/simulator.hpp"

namespace co2rl::sacrl {

struct EpisodeStats {
    int episode = 0;
    double cum_reward = 0.0;  // sum over steps of gamma_rl^t * scaled reward
    double npv = 0.0;         // dollars, from the surrogate's own predictions
    double critic_loss = 0.0;  // mean over the iteration's gradient steps
    double actor_loss = 0.0;
};

template <typename S>
struct SacResult {
    SacNets<S> nets;
    std::vector<EpisodeStats> curve;
};

template <typename S>
Mat<S> initial_latent(const e2co::E2coModel<S>& m, const simcore::StateField& x0) {
    const Eigen::VectorXd xn = e2co::flatten_state(datapipe::normalize_state(x0, m.stats));
    return e2co::encode_batch(m, Mat<S>(xn.template cast<S>()));
}

// Alternating environment and gradient phases: each iteration runs one
// episode of env_steps surrogate steps from the fixed initial latent, then
// grad_steps critic/actor updates with polyak target tracking. Updates wait
// until the buffer holds one full batch.
template <typename S>
SacResult<S> train_agent(const e2co::E2coModel<S>& model, const simcore::StateField& x0,
                         const econ::EconParams& ep, const simcore::ControlBounds& bounds,
                         const SacConfig& cfg) {
    cfg.validate();
    ep.validate();
    ActionSpace space{model.dims.n_prod(), model.dims.n_inj(), bounds};
    space.validate();

    SacResult<S> res;
    res.nets = SacNets<S>::create(model.dims.d_z, space, cfg, derive_seed(cfg.seed, 0));
    RngStream env_rng(cfg.seed, 1);
    RngStream batch_rng(cfg.seed, 2);
    RngStream target_rng(cfg.seed, 3);
    RngStream actor_rng(cfg.seed, 4);

    ndauto::Adam<S> critic_opt(cfg.lr);
    ndauto::Adam<S> actor_opt(cfg.lr);
    const std::vector<ndauto::Parameter<S>*> critic_params = res.nets.critic_params();
    const std::vector<ndauto::Parameter<S>*> policy_params = res.nets.policy_params();
    std::vector<ndauto::Parameter<S>*> live_params = critic_params;
    live_params.insert(live_params.end(), policy_params.begin(), policy_params.end());

    ReplayBuffer<S> buffer(static_cast<std::size_t>(cfg.replay_capacity));
    const Mat<S> z0 = initial_latent(model, x0);
    ndauto::Tape<S> tape;  // reused across gradient steps

    for (int it = 0; it < cfg.episodes; ++it) {
        EpisodeStats stats;
        stats.episode = it;
        Mat<S> z = z0;
        std::vector<double> cash(static_cast<std::size_t>(cfg.env_steps));
        double disc = 1.0;
        for (int t = 0; t < cfg.env_steps; ++t) {
            const ActResult a = act(res.nets, z, ActMode::stochastic, env_rng);
            const EnvStep<S> step = latent_env_step(model, z, a.control, ep, cfg.reward_scale);
            ReplayRecord<S> rec;
            rec.z = z.col(0);
            rec.u = a.normalized.template cast<S>();
            rec.r = static_cast<S>(step.reward);
            rec.z_next = step.z_next.col(0);
            rec.done = t + 1 == cfg.env_steps;
            buffer.push(std::move(rec));
            disc *= cfg.gamma_rl;
            stats.cum_reward += disc * step.reward;
            cash[static_cast<std::size_t>(t)] = step.cash_rate;
            z = step.z_next;
        }
        stats.npv = econ::npv(cash, ep);

        int updates = 0;
        for (int g = 0; g < cfg.grad_steps; ++g) {
            if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) break;
            const auto batch = buffer.sample(cfg.batch_size, batch_rng);

            tape.reset();
            CriticLosses<S> cl = critic_loss(tape, batch, res.nets, cfg, target_rng);
            Var<S> c_total = add(cl.q1_loss, cl.q2_loss);
            const double c_val = static_cast<double>(tape.scalar_value(c_total));
            if (!std::isfinite(c_val))
                throw TrainingError("sac: critic loss diverged at iteration " + std::to_string(it));
            ndauto::Adam<S>::zero_grads(live_params);
            tape.backward(c_total);
            critic_opt.step(critic_params);

            tape.reset();
            ActorLoss<S> al = actor_loss(tape, batch.z, res.nets, cfg, actor_rng);
            const double a_val = static_cast<double>(tape.scalar_value(al.loss));
            if (!std::isfinite(a_val))
                throw TrainingError("sac: actor loss diverged at iteration " + std::to_string(it));
            ndauto::Adam<S>::zero_grads(live_params);
            tape.backward(al.loss);
            actor_opt.step(policy_params);

            polyak_update(res.nets.q1, res.nets.q1_targ, cfg.tau);
            polyak_update(res.nets.q2, res.nets.q2_targ, cfg.tau);
            stats.critic_loss += c_val;
            stats.actor_loss += a_val;
            ++updates;
        }
        if (updates > 0) {
            stats.critic_loss /= updates;
            stats.actor_loss /= updates;
        }
        res.curve.push_back(stats);
    }
    return res;
}

// One evaluated control program with its per-period cash rates and NPV.
struct EvalEpisode {
    std::vector<simcore::ControlVector> schedule;
    std::vector<double> cash_rates;  // $/day
    double npv = 0.0;
};

// Deterministic policy rolled inside the surrogate; the NPV prices the
// surrogate's own predicted observations.
template <typename S>
EvalEpisode evaluate_on_surrogate(const SacNets<S>& nets, const e2co::E2coModel<S>& m,
                                  const simcore::StateField& x0, const econ::EconParams& ep,
                                  int n_steps) {
    if (n_steps < 1) throw ConfigError("evaluate: need at least one step");
    EvalEpisode out;
    RngStream unused(0);
    Mat<S> z = initial_latent(m, x0);
    for (int t = 0; t < n_steps; ++t) {
        const ActResult a = act(nets, z, ActMode::deterministic, unused);
        const EnvStep<S> step = latent_env_step(m, z, a.control, ep, 1.0);
        out.schedule.push_back(a.control);
        out.cash_rates.push_back(step.cash_rate);
        z = step.z_next;
    }
    out.npv = econ::npv(out.cash_rates, ep);
    return out;
}

// A fixed schedule run on the full-order simulator, priced from the true
// observations.
inline EvalEpisode evaluate_schedule_fullorder(const simcore::Simulator& sim,
                                               const std::vector<simcore::ControlVector>& schedule,
                                               const econ::EconParams& ep) {
    if (schedule.empty()) throw ConfigError("evaluate: empty schedule");
    EvalEpisode out;
    out.schedule = schedule;
    const auto episode = sim.run_episode(schedule, ep.dt_days);
    for (std::size_t t = 0; t < schedule.size(); ++t) {
        const simcore::ObservationVector& y = episode.observations[t];
        const auto& u = schedule[t];
        const std::vector<double> inj(u.injector_rate.begin(), u.injector_rate.end());
        const std::vector<double> qw(y.q_w.begin(), y.q_w.end());
        const std::vector<double> qg(y.q_g.begin(), y.q_g.end());
        out.cash_rates.push_back(econ::reward(inj, qw, qg, ep));
    }
    out.npv = econ::npv(out.cash_rates, ep);
    return out;
}

// The policy's deterministic schedule (emitted against the surrogate, which
// is the only environment the agent observes) replayed on the full-order
// simulator. Nothing is decoded; only the emitted controls cross over.
template <typename S>
EvalEpisode evaluate_on_fullorder(const SacNets<S>& nets, const e2co::E2coModel<S>& m,
                                  const simcore::Simulator& sim, const econ::EconParams& ep,
                                  int n_steps) {
    const EvalEpisode surrogate = evaluate_on_surrogate(nets, m, sim.initial_state(), ep, n_steps);
    return evaluate_schedule_fullorder(sim, surrogate.schedule, ep);
}

inline std::vector<simcore::ControlVector> midpoint_schedule(const ActionSpace& space,
                                                             int n_steps) {
    space.validate();
    if (n_steps < 1) throw ConfigError("schedule: need at least one step");
    Eigen::VectorXd mid(space.n_u());
    mid.setConstant(0.5);
    return std::vector<simcore::ControlVector>(static_cast<std::size_t>(n_steps),
                                               space.to_control(mid));
}

// NPVs of `count` independently seeded uniform-random schedules on the
// full-order simulator; episodes are independent and run on a small pool.
inline std::vector<double> random_schedule_npvs(const simcore::Simulator& sim,
                                                const econ::EconParams& ep, int count,
                                                int n_steps, std::uint64_t seed,
                                                int threads = 1) {
    if (count < 1) throw ConfigError("baseline: need at least one schedule");
    std::vector<double> npvs(static_cast<std::size_t>(count));
    std::vector<std::string> failures(static_cast<std::size_t>(count));
    const int pool_size = std::max(1, std::min(threads, count));
    auto worker = [&](int first) {
        for (int k = first; k < count; k += pool_size) {
            try {
                const auto schedule =
                    datapipe::sample_schedule(derive_seed(seed, static_cast<std::uint64_t>(k)),
                                              sim.model().bounds, n_steps, sim.num_producers(),
                                              sim.num_injectors());
                npvs[static_cast<std::size_t>(k)] =
                    evaluate_schedule_fullorder(sim, schedule, ep).npv;
            } catch (const std::exception& e) {
                failures[static_cast<std::size_t>(k)] = e.what();
            }
        }
    };
    if (pool_size == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(pool_size));
        for (int t = 0; t < pool_size; ++t) pool.emplace_back(worker, t);
        for (auto& t : pool) t.join();
    }
    for (int k = 0; k < count; ++k)
        if (!failures[static_cast<std::size_t>(k)].empty())
            throw SolverFailure("baseline schedule " + std::to_string(k) + ": " +
                                failures[static_cast<std::size_t>(k)]);
    return npvs;
}

// ---- checkpointing: parameter container plus a text sidecar ----

template <typename S>
void save_agent(const std::string& path, const SacNets<S>& nets, const SacConfig& cfg) {
    ndauto::save_checkpoint(path, nets.all_params());
    KvTree meta;
    meta.set_int("agent.d_z", nets.d_z);
    meta.set_int("agent.n_prod", nets.space.n_prod);
    meta.set_int("agent.n_inj", nets.space.n_inj);
    meta.set("agent.policy_hidden", join_ints(cfg.policy_hidden));
    meta.set("agent.critic_hidden", join_ints(cfg.critic_hidden));
    meta.set_double("bounds.bhp_low", nets.space.bounds.bhp_low);
    meta.set_double("bounds.bhp_high", nets.space.bounds.bhp_high);
    meta.set_double("bounds.rate_low", nets.space.bounds.rate_low);
    meta.set_double("bounds.rate_high", nets.space.bounds.rate_high);
    meta.write_file(path + ".meta");
}

template <typename S>
SacNets<S> load_agent(const std::string& path) {
    const KvTree meta = KvTree::parse_file(path + ".meta");
    ActionSpace space;
    space.n_prod = static_cast<int>(meta.get_int("agent.n_prod"));
    space.n_inj = static_cast<int>(meta.get_int("agent.n_inj"));
    space.bounds.bhp_low = meta.get_double("bounds.bhp_low");
    space.bounds.bhp_high = meta.get_double("bounds.bhp_high");
    space.bounds.rate_low = meta.get_double("bounds.rate_low");
    space.bounds.rate_high = meta.get_double("bounds.rate_high");
    SacConfig cfg;
    cfg.policy_hidden = split_ints(meta.get_string("agent.policy_hidden"));
    cfg.critic_hidden = split_ints(meta.get_string("agent.critic_hidden"));
    SacNets<S> nets = SacNets<S>::create(static_cast<int>(meta.get_int("agent.d_z")), space, cfg, 0);
    std::vector<ndauto::Parameter<S>*> ps = nets.all_params();
    ndauto::load_checkpoint(path, ps);
    return nets;
}

}  // namespace co2rl::sacrl
