#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>
#include <vector>

#include "co2rl/simcore/types.hpp"

namespace co2rl::simcore {

struct ReservoirModel {
    GridSpec grid;
    RockProps rock;
    FluidProps fluids;
    std::vector<WellSpec> wells;
    ControlBounds bounds;
    double init_pressure = 3045.0;  // psia
    double init_z = 0.0;

    void validate() const;
    std::vector<int> producer_indices() const;
    std::vector<int> injector_indices() const;
};

// Numerical knobs for the implicit-pressure / explicit-transport scheme.
// Defaults are deliberately conservative; they are not part of the model.
struct SimOptions {
    double cfl = 0.5;             // saturation sub-step CFL number
    double dp_target = 40.0;      // psi per internal pressure step (controller target)
    double dt_press_init = 0.5;   // days, first internal pressure step of each step()
    double dt_press_min = 1e-3;   // days
    double dt_press_max = 25.0;   // days
    double cg_tol = 1e-13;        // conjugate-gradient stopping tolerance
    double residual_limit = 1e-10;  // accepted relative residual of the pressure solve
    double closure_tol = 1e-12;   // volume-closure tolerance, relative to pore volume
    int closure_max_iters = 60;
    double mobility_floor = 1e-6;   // 1/cp, floor for injector p_wf back-out
    long max_substeps = 4000000;  // safety valve on explicit transport
};

// Harmonic two-point transmissibility between two cells sharing a face of the
// given area at center distance `dist`, in mD*ft (multiply by the Darcy
// constant and a mobility to get bbl/day/psi).
inline double face_transmissibility(double k_a, double k_b, double area, double dist) {
    return (2.0 * k_a * k_b / (k_a + k_b)) * area / dist;
}

class Simulator {
  public:
    explicit Simulator(ReservoirModel model, SimOptions opts = {});

    const ReservoirModel& model() const { return model_; }
    const SimOptions& options() const { return opts_; }

    StateField initial_state() const;

    struct StepResult {
        StateField state;
        ObservationVector obs;
    };

    // Advance one control period of dt_days under fixed controls. Internally
    // the period is covered by adaptive implicit-pressure steps, each followed
    // by CFL-limited explicit transport of phase moles and a per-cell volume
    // closure, so the emitted state carries exact component inventories.
    // Reported rates are period averages; p_wf is evaluated at the final state.
    StepResult step(const StateField& state, const ControlVector& u, double dt_days) const;

    struct EpisodeResult {
        std::vector<StateField> states;  // post-control state per period
        std::vector<ObservationVector> observations;
    };
    EpisodeResult run_episode(const std::vector<ControlVector>& schedule, double dt_days) const;

    struct PressureSystem {
        Eigen::SparseMatrix<double> A;
        Eigen::VectorXd rhs;
    };
    // The symmetric positive definite system of one implicit pressure step of
    // size dt_days taken from `state` (exposed for testing/diagnostics).
    PressureSystem assemble_pressure_system(const StateField& state, const ControlVector& u,
                                            double dt_days) const;

    // Total {water, CO2} inventory of a state in lbmol.
    std::array<double, 2> inventory(const StateField& state) const;

    // Fixed metering conversions between surface volumes and moles; well
    // streams are accounted with these exact factors.
    static double scf_to_lbmol_gas(double scf, const FluidProps& f) { return scf * f.B_g * f.b_g; }
    static double stb_to_lbmol_water(double stb, const FluidProps& f) {
        return stb * kFt3PerBbl * f.b_w;
    }

    double max_fractional_flow_slope() const { return fmax_; }
    int num_producers() const { return static_cast<int>(producers_.size()); }
    int num_injectors() const { return static_cast<int>(injectors_.size()); }

  private:
    struct Face {
        int a;
        int b;
        double t_geo;  // mD*ft
    };
    struct Work;

    Work make_work(const StateField& state) const;
    void check_controls(const ControlVector& u) const;
    // Solves the implicit pressure step with an active-set loop on the
    // producers: a producer whose solved cell pressure falls below its BHP is
    // removed (no backflow) and the system is re-solved until the set is
    // consistent. The final mask is written to `active`.
    Eigen::VectorXd solve_pressure(const Work& w, const ControlVector& u, double dtp,
                                   std::vector<char>& active) const;
    PressureSystem assemble_from_work(const Work& w, const ControlVector& u, double dtp,
                                      const std::vector<char>& active) const;

    ReservoirModel model_;
    SimOptions opts_;
    std::vector<Face> faces_;
    std::vector<int> producers_;  // indices into model_.wells
    std::vector<int> injectors_;
    std::vector<int> well_cell_;   // per well, flat cell index
    std::vector<double> well_wi_;  // per well, Peaceman index in mD*ft
    double fmax_ = 1.0;            // max |d f_g / d S_g|
};

}  // namespace co2rl::simcore
