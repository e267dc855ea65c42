#include "co2rl/datapipe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "co2rl/common/errors.hpp"
#include "co2rl/common/io.hpp"
#include "co2rl/common/kvfile.hpp"
#include "co2rl/common/rng.hpp"
#include "co2rl/common/sha256.hpp"

namespace co2rl::datapipe {

void NormStats::validate() const {
    auto band = [](double lo, double hi, const char* name) {
        if (!std::isfinite(lo) || !std::isfinite(hi))
            throw ConfigError(std::string("norm stats: non-finite ") + name + " band");
        if (!(hi > lo)) throw ConfigError(std::string("norm stats: empty ") + name + " band");
    };
    band(p_min, p_max, "pressure");
    band(z_min, z_max, "z_co2");
    band(qw_min, qw_max, "water rate");
    band(qg_min, qg_max, "gas rate");
}

std::vector<simcore::ControlVector> sample_schedule(std::uint64_t seed,
                                                    const simcore::ControlBounds& bounds,
                                                    int n_steps, int n_prod, int n_inj) {
    bounds.validate();
    if (n_steps < 1 || n_prod < 1 || n_inj < 0)
        throw ConfigError("schedule: need n_steps >= 1, n_prod >= 1, n_inj >= 0");
    RngStream rng(seed);
    std::vector<simcore::ControlVector> schedule(static_cast<std::size_t>(n_steps));
    for (auto& u : schedule) {
        u.producer_bhp.resize(n_prod);
        u.injector_rate.resize(n_inj);
        for (int k = 0; k < n_prod; ++k)
            u.producer_bhp[k] = rng.uniform(bounds.bhp_low, bounds.bhp_high);
        for (int k = 0; k < n_inj; ++k)
            u.injector_rate[k] = rng.uniform(bounds.rate_low, bounds.rate_high);
    }
    return schedule;
}

namespace {

struct RawTrajectory {
    std::vector<simcore::ControlVector> schedule;
    simcore::Simulator::EpisodeResult episode;
};

struct Extrema {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void take(const Eigen::ArrayXd& a) {
        if (a.size() == 0) return;
        lo = std::min(lo, a.minCoeff());
        hi = std::max(hi, a.maxCoeff());
    }
};

// Observed band widened by 1% of its range; a degenerate band (every sample
// identical) widens symmetrically so the stats stay invertible.
void widen(Extrema& e) {
    const double range = e.hi - e.lo;
    const double margin = range > 0.0 ? 0.01 * range : std::max(1.0, 0.01 * std::abs(e.hi));
    e.lo -= margin;
    e.hi += margin;
}

double through_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Eigen::ArrayXd quantize(const Eigen::ArrayXd& a) {
    return a.unaryExpr([](double v) { return through_f32(v); });
}

}  // namespace

Dataset generate_dataset(const simcore::Simulator& sim, const GenOptions& opt) {
    if (opt.n_traj < 1 || opt.n_steps < 1)
        throw ConfigError("dataset: need at least one trajectory and one step");
    if (!(opt.control_period_days > 0.0)) throw ConfigError("dataset: control period must be positive");

    const auto& model = sim.model();
    const int n_prod = sim.num_producers();
    const int n_inj = sim.num_injectors();
    const simcore::StateField x0 = sim.initial_state();

    // Episodes are independent given their derived seeds; run them on a small
    // pool and merge by trajectory id so the result is order-independent.
    std::vector<RawTrajectory> raw(static_cast<std::size_t>(opt.n_traj));
    std::vector<std::string> failures(static_cast<std::size_t>(opt.n_traj));
    const int threads = std::max(1, std::min(opt.threads, opt.n_traj));
    auto worker = [&](int first) {
        for (int k = first; k < opt.n_traj; k += threads) {
            try {
                RawTrajectory& r = raw[static_cast<std::size_t>(k)];
                r.schedule = sample_schedule(derive_seed(opt.seed, static_cast<std::uint64_t>(k)),
                                             model.bounds, opt.n_steps, n_prod, n_inj);
                r.episode = sim.run_episode(r.schedule, opt.control_period_days);
            } catch (const std::exception& e) {
                failures[static_cast<std::size_t>(k)] = e.what();
            }
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
        for (auto& t : pool) t.join();
    }
    for (int k = 0; k < opt.n_traj; ++k)
        if (!failures[static_cast<std::size_t>(k)].empty())
            throw SolverFailure("trajectory " + std::to_string(k) + ": " +
                                failures[static_cast<std::size_t>(k)]);

    // Normalization bands: observed extrema per family, widened by 1%, then
    // unioned with the engineering control bounds for the families a control
    // lives in (pressure for BHP, gas rate for injection).
    Extrema press, water, gas;
    press.take(x0.pressure);
    for (const RawTrajectory& r : raw) {
        for (const simcore::StateField& s : r.episode.states) press.take(s.pressure);
        for (const simcore::ObservationVector& y : r.episode.observations) {
            press.take(y.p_wf);
            water.take(y.q_w);
            gas.take(y.q_g);
        }
    }
    widen(press);
    widen(water);
    widen(gas);

    Dataset ds;
    ds.n_traj = opt.n_traj;
    ds.n_steps = opt.n_steps;
    ds.n_cells = model.grid.num_cells();
    ds.n_prod = n_prod;
    ds.n_inj = n_inj;
    ds.stats.p_min = std::min(model.bounds.bhp_low, press.lo);
    ds.stats.p_max = std::max(model.bounds.bhp_high, press.hi);
    ds.stats.qw_min = water.lo;
    ds.stats.qw_max = water.hi;
    ds.stats.qg_min = std::min(model.bounds.rate_low, gas.lo);
    ds.stats.qg_max = std::max(model.bounds.rate_high, gas.hi);
    ds.stats.validate();

    ds.tuples.reserve(static_cast<std::size_t>(opt.n_traj) * opt.n_steps);
    for (int k = 0; k < opt.n_traj; ++k) {
        const RawTrajectory& r = raw[static_cast<std::size_t>(k)];
        for (int t = 0; t < opt.n_steps; ++t) {
            TransitionTuple tup;
            tup.trajectory = k;
            tup.step = t;
            const simcore::StateField& xa = t == 0 ? x0 : r.episode.states[static_cast<std::size_t>(t - 1)];
            tup.x_t = normalize_state(xa, ds.stats);
            tup.u_t = normalize_control(r.schedule[static_cast<std::size_t>(t)], ds.stats);
            tup.x_next = normalize_state(r.episode.states[static_cast<std::size_t>(t)], ds.stats);
            tup.y_next = normalize_observation(r.episode.observations[static_cast<std::size_t>(t)], ds.stats);
            tup.x_t.pressure = quantize(tup.x_t.pressure);
            tup.x_t.z_co2 = quantize(tup.x_t.z_co2);
            tup.u_t.producer_bhp = quantize(tup.u_t.producer_bhp);
            tup.u_t.injector_rate = quantize(tup.u_t.injector_rate);
            tup.x_next.pressure = quantize(tup.x_next.pressure);
            tup.x_next.z_co2 = quantize(tup.x_next.z_co2);
            tup.y_next.q_w = quantize(tup.y_next.q_w);
            tup.y_next.q_g = quantize(tup.y_next.q_g);
            tup.y_next.p_wf = quantize(tup.y_next.p_wf);
            ds.tuples.push_back(std::move(tup));
        }
    }
    return ds;
}

double normalize_value(double v, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("normalization band is empty");
    return (v - lo) / (hi - lo);
}

double denormalize_value(double v, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("normalization band is empty");
    return lo + v * (hi - lo);
}

namespace {

Eigen::ArrayXd norm_array(const Eigen::ArrayXd& a, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("normalization band is empty");
    return (a - lo) / (hi - lo);
}

Eigen::ArrayXd denorm_array(const Eigen::ArrayXd& a, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("normalization band is empty");
    return lo + a * (hi - lo);
}

}  // namespace

simcore::StateField normalize_state(const simcore::StateField& x, const NormStats& s) {
    return {norm_array(x.pressure, s.p_min, s.p_max), norm_array(x.z_co2, s.z_min, s.z_max)};
}

simcore::StateField denormalize_state(const simcore::StateField& x, const NormStats& s) {
    return {denorm_array(x.pressure, s.p_min, s.p_max), denorm_array(x.z_co2, s.z_min, s.z_max)};
}

simcore::ControlVector normalize_control(const simcore::ControlVector& u, const NormStats& s) {
    return {norm_array(u.producer_bhp, s.p_min, s.p_max), norm_array(u.injector_rate, s.qg_min, s.qg_max)};
}

simcore::ControlVector denormalize_control(const simcore::ControlVector& u, const NormStats& s) {
    return {denorm_array(u.producer_bhp, s.p_min, s.p_max),
            denorm_array(u.injector_rate, s.qg_min, s.qg_max)};
}

simcore::ObservationVector normalize_observation(const simcore::ObservationVector& y,
                                                 const NormStats& s) {
    return {norm_array(y.q_w, s.qw_min, s.qw_max), norm_array(y.q_g, s.qg_min, s.qg_max),
            norm_array(y.p_wf, s.p_min, s.p_max)};
}

simcore::ObservationVector denormalize_observation(const simcore::ObservationVector& y,
                                                   const NormStats& s) {
    return {denorm_array(y.q_w, s.qw_min, s.qw_max), denorm_array(y.q_g, s.qg_min, s.qg_max),
            denorm_array(y.p_wf, s.p_min, s.p_max)};
}

bool in_unit_band(const TransitionTuple& t, double slack) {
    auto ok = [slack](const Eigen::ArrayXd& a) {
        return a.size() == 0 || ((a >= -slack).all() && (a <= 1.0 + slack).all());
    };
    return ok(t.x_t.pressure) && ok(t.x_t.z_co2) && ok(t.u_t.producer_bhp) &&
           ok(t.u_t.injector_rate) && ok(t.x_next.pressure) && ok(t.x_next.z_co2) &&
           ok(t.y_next.q_w) && ok(t.y_next.q_g) && ok(t.y_next.p_wf);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, int ratio_train, int ratio_test,
                                          std::uint64_t seed) {
    if (ratio_train < 0 || ratio_test < 0 || ratio_train + ratio_test == 0)
        throw ConfigError("split: ratio parts must be nonnegative and not both zero");
    if (ds.tuples.empty()) throw ConfigError("split: dataset is empty");

    // distinct trajectory ids, in first-appearance order (tuples are
    // trajectory-major so this is ascending for generated datasets)
    std::vector<int> ids;
    for (const TransitionTuple& t : ds.tuples)
        if (ids.empty() || ids.back() != t.trajectory) ids.push_back(t.trajectory);

    const auto n = static_cast<int>(ids.size());
    const double frac = static_cast<double>(ratio_train) / (ratio_train + ratio_test);
    const int n_train = static_cast<int>(std::llround(frac * n));
    if ((ratio_train > 0 && n_train == 0) || (ratio_test > 0 && n_train == n))
        throw ConfigError("split: fewer trajectories than the split granularity");

    std::vector<int> order = ids;
    RngStream rng(seed);
    rng.shuffle(order.begin(), order.end());
    std::vector<int> train_ids(order.begin(), order.begin() + n_train);
    std::sort(train_ids.begin(), train_ids.end());

    auto is_train = [&train_ids](int id) {
        return std::binary_search(train_ids.begin(), train_ids.end(), id);
    };

    Dataset train, test;
    train.n_steps = test.n_steps = ds.n_steps;
    train.n_cells = test.n_cells = ds.n_cells;
    train.n_prod = test.n_prod = ds.n_prod;
    train.n_inj = test.n_inj = ds.n_inj;
    train.stats = test.stats = ds.stats;
    train.n_traj = n_train;
    test.n_traj = n - n_train;
    for (const TransitionTuple& t : ds.tuples) (is_train(t.trajectory) ? train : test).tuples.push_back(t);
    return {std::move(train), std::move(test)};
}

namespace {

constexpr std::uint16_t kDatasetVersion = 1;

void write_array_f32(BinaryWriter& w, const Eigen::ArrayXd& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) w.f32(static_cast<float>(a[i]));
}

Eigen::ArrayXd read_array_f32(BinaryReader& r, int n) {
    Eigen::ArrayXd a(n);
    for (int i = 0; i < n; ++i) a[i] = static_cast<double>(r.f32());
    return a;
}

}  // namespace

std::string write_dataset(const std::string& path, const Dataset& ds, std::uint64_t seed,
                          const std::string& model_fingerprint) {
    if (ds.tuples.size() != static_cast<std::size_t>(ds.n_traj) * ds.n_steps)
        throw ContractViolation("dataset: tuple count does not match n_traj * n_steps");
    ds.stats.validate();
    {
        BinaryWriter w(path);
        w.bytes("E2CD", 4);
        w.u16(kDatasetVersion);
        w.u64(static_cast<std::uint64_t>(ds.n_traj));
        w.u64(static_cast<std::uint64_t>(ds.n_steps));
        w.u64(static_cast<std::uint64_t>(ds.n_cells));
        w.u64(static_cast<std::uint64_t>(ds.n_u()));
        w.u64(static_cast<std::uint64_t>(ds.n_y()));
        w.f64(ds.stats.p_min);
        w.f64(ds.stats.p_max);
        w.f64(ds.stats.z_min);
        w.f64(ds.stats.z_max);
        w.f64(ds.stats.qw_min);
        w.f64(ds.stats.qw_max);
        w.f64(ds.stats.qg_min);
        w.f64(ds.stats.qg_max);
        for (const TransitionTuple& t : ds.tuples) {
            write_array_f32(w, t.x_t.pressure);
            write_array_f32(w, t.x_t.z_co2);
            write_array_f32(w, t.u_t.producer_bhp);
            write_array_f32(w, t.u_t.injector_rate);
            write_array_f32(w, t.x_next.pressure);
            write_array_f32(w, t.x_next.z_co2);
            write_array_f32(w, t.y_next.q_w);
            write_array_f32(w, t.y_next.q_g);
            write_array_f32(w, t.y_next.p_wf);
        }
        w.close();
    }
    const std::string digest = Sha256::of_file(path);
    KvTree manifest;
    manifest.set("dataset.sha256", digest);
    manifest.set("dataset.seed", std::to_string(seed));
    manifest.set("dataset.model_fingerprint", model_fingerprint);
    manifest.write_file(path + ".manifest");
    return digest;
}

Dataset read_dataset(const std::string& path) {
    BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "E2CD") throw IoError("not a dataset container: " + path);
    const std::uint16_t version = r.u16();
    if (version != kDatasetVersion)
        throw IoError("unsupported dataset version " + std::to_string(version) + ": " + path);

    Dataset ds;
    ds.n_traj = static_cast<int>(r.u64());
    ds.n_steps = static_cast<int>(r.u64());
    ds.n_cells = static_cast<int>(r.u64());
    const int n_u = static_cast<int>(r.u64());
    const int n_y = static_cast<int>(r.u64());
    // n_u = n_prod + n_inj and n_y = 2*n_prod + n_inj determine the split
    ds.n_prod = n_y - n_u;
    ds.n_inj = 2 * n_u - n_y;
    if (ds.n_traj < 1 || ds.n_steps < 1 || ds.n_cells < 1 || ds.n_prod < 1 || ds.n_inj < 0)
        throw IoError("dataset header is inconsistent: " + path);

    ds.stats.p_min = r.f64();
    ds.stats.p_max = r.f64();
    ds.stats.z_min = r.f64();
    ds.stats.z_max = r.f64();
    ds.stats.qw_min = r.f64();
    ds.stats.qw_max = r.f64();
    ds.stats.qg_min = r.f64();
    ds.stats.qg_max = r.f64();
    ds.stats.validate();

    const std::size_t count = static_cast<std::size_t>(ds.n_traj) * ds.n_steps;
    ds.tuples.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        TransitionTuple t;
        t.trajectory = static_cast<int>(k) / ds.n_steps;
        t.step = static_cast<int>(k) % ds.n_steps;
        t.x_t.pressure = read_array_f32(r, ds.n_cells);
        t.x_t.z_co2 = read_array_f32(r, ds.n_cells);
        t.u_t.producer_bhp = read_array_f32(r, ds.n_prod);
        t.u_t.injector_rate = read_array_f32(r, ds.n_inj);
        t.x_next.pressure = read_array_f32(r, ds.n_cells);
        t.x_next.z_co2 = read_array_f32(r, ds.n_cells);
        t.y_next.q_w = read_array_f32(r, ds.n_prod);
        t.y_next.q_g = read_array_f32(r, ds.n_prod);
        t.y_next.p_wf = read_array_f32(r, ds.n_inj);
        ds.tuples.push_back(std::move(t));
    }
    if (!r.at_eof()) throw IoError("trailing bytes after dataset payload: " + path);
    return ds;
}

DatasetMeta read_dataset_manifest(const std::string& dataset_path) {
    const KvTree t = KvTree::parse_file(dataset_path + ".manifest");
    DatasetMeta meta;
    meta.sha256 = t.get_string("dataset.sha256");
    meta.seed = static_cast<std::uint64_t>(std::stoull(t.get_string("dataset.seed")));
    meta.model_fingerprint = t.get_string("dataset.model_fingerprint");
    return meta;
}

}  // namespace co2rl::datapipe
