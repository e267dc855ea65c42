#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "co2rl/simcore/simulator.hpp"

namespace co2rl::datapipe {

// Min/max normalization bands per quantity family. Pressure is shared by cell
// pressures, producer BHP controls and injector flowing pressures; the gas
// band is shared by injector rate controls and producer gas output, so a
// control normalizes identically at training and deployment time.
struct NormStats {
    double p_min = 0.0, p_max = 1.0;
    double z_min = 0.0, z_max = 1.0;  // mole fraction is already unit-scaled
    double qw_min = 0.0, qw_max = 1.0;
    double qg_min = 0.0, qg_max = 1.0;

    void validate() const;
};

// One training sample; all fields are stored normalized (and quantized to
// 32-bit floats, matching the on-disk container exactly).
struct TransitionTuple {
    simcore::StateField x_t;
    simcore::ControlVector u_t;
    simcore::StateField x_next;
    simcore::ObservationVector y_next;
    int trajectory = 0;
    int step = 0;
};

struct Dataset {
    int n_traj = 0;
    int n_steps = 0;  // tuples per trajectory
    int n_cells = 0;
    int n_prod = 0;
    int n_inj = 0;
    NormStats stats;
    std::vector<TransitionTuple> tuples;  // trajectory-major, step-major

    int n_u() const { return n_prod + n_inj; }
    int n_y() const { return 2 * n_prod + n_inj; }
    int state_dim() const { return 2 * n_cells; }
};

// Independent uniform draw per control channel per period; producer BHPs are
// drawn before injector rates within each period.
std::vector<simcore::ControlVector> sample_schedule(std::uint64_t seed,
                                                    const simcore::ControlBounds& bounds,
                                                    int n_steps, int n_prod, int n_inj);

struct GenOptions {
    int n_traj = 600;
    int n_steps = 20;
    double control_period_days = 100.0;
    std::uint64_t seed = 0;
    int threads = 1;
};

// Runs n_traj independently seeded episodes from the simulator's initial
// state, fits normalization bands over the collected data and returns the
// normalized tuples in trajectory-major order. Trajectories run concurrently
// when threads > 1; content is independent of the execution order.
Dataset generate_dataset(const simcore::Simulator& sim, const GenOptions& opt);

// Affine map of one value into/out of a family band.
double normalize_value(double v, double lo, double hi);
double denormalize_value(double v, double lo, double hi);

simcore::StateField normalize_state(const simcore::StateField& x, const NormStats& s);
simcore::StateField denormalize_state(const simcore::StateField& x, const NormStats& s);
simcore::ControlVector normalize_control(const simcore::ControlVector& u, const NormStats& s);
simcore::ControlVector denormalize_control(const simcore::ControlVector& u, const NormStats& s);
simcore::ObservationVector normalize_observation(const simcore::ObservationVector& y, const NormStats& s);
simcore::ObservationVector denormalize_observation(const simcore::ObservationVector& y, const NormStats& s);

// True when every normalized entry lies within [-slack, 1+slack]. Values
// outside the band are legal (out-of-training-range states) but worth noting.
bool in_unit_band(const TransitionTuple& t, double slack = 0.01);

// Splits whole trajectories (never tuples of one trajectory) with a seeded
// shuffle; the train side receives round(n_traj * a/(a+b)) trajectories.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, int ratio_train, int ratio_test,
                                          std::uint64_t seed);

// Binary container plus a structured-text manifest "<path>.manifest" holding
// the file's SHA-256 digest, the generation seed and the model fingerprint.
struct DatasetMeta {
    std::string sha256;
    std::uint64_t seed = 0;
    std::string model_fingerprint;
};

// Returns the digest of the written file.
std::string write_dataset(const std::string& path, const Dataset& ds, std::uint64_t seed,
                          const std::string& model_fingerprint);
Dataset read_dataset(const std::string& path);
DatasetMeta read_dataset_manifest(const std::string& dataset_path);

}  // namespace co2rl::datapipe
