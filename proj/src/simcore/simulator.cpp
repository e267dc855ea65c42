#include "co2rl/simcore/simulator.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "co2rl/common/errors.hpp"
#include "co2rl/simcore/wells.hpp"

namespace co2rl::simcore {

void ReservoirModel::validate() const {
    grid.validate();
    rock.validate(grid);
    fluids.validate();
    bounds.validate();
    if (!(init_pressure > 0)) throw ConfigError("model: initial pressure must be positive");
    if (!(init_z >= 0.0 && init_z <= 1.0)) throw ConfigError("model: initial z_co2 outside [0,1]");
    std::set<std::string> ids;
    std::set<int> cells;
    for (const auto& w : wells) {
        w.validate(grid);
        if (!ids.insert(w.id).second) throw ConfigError("duplicate well id " + w.id);
        if (!cells.insert(grid.cell_index(w.i, w.j)).second)
            throw ConfigError("well " + w.id + ": cell already hosts another well");
    }
}

std::vector<int> ReservoirModel::producer_indices() const {
    std::vector<int> out;
    for (int k = 0; k < static_cast<int>(wells.size()); ++k)
        if (wells[k].kind == WellKind::Producer) out.push_back(k);
    return out;
}

std::vector<int> ReservoirModel::injector_indices() const {
    std::vector<int> out;
    for (int k = 0; k < static_cast<int>(wells.size()); ++k)
        if (wells[k].kind == WellKind::Injector) out.push_back(k);
    return out;
}

Simulator::Simulator(ReservoirModel model, SimOptions opts)
    : model_(std::move(model)), opts_(opts) {
    model_.validate();
    if (!(opts_.cfl > 0.0 && opts_.cfl <= 1.0)) throw ConfigError("sim: cfl must be in (0,1]");
    if (!(opts_.dt_press_min > 0.0 && opts_.dt_press_min <= opts_.dt_press_init &&
          opts_.dt_press_init <= opts_.dt_press_max))
        throw ConfigError("sim: need 0 < dt_press_min <= dt_press_init <= dt_press_max");
    if (!(opts_.dp_target > 0.0)) throw ConfigError("sim: dp_target must be positive");

    const auto& g = model_.grid;
    const auto& k = model_.rock.perm;
    faces_.reserve(static_cast<std::size_t>(g.nx - 1) * g.ny + static_cast<std::size_t>(g.nx) * (g.ny - 1));
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i + 1 < g.nx; ++i) {
            const int a = g.cell_index(i, j), b = g.cell_index(i + 1, j);
            faces_.push_back({a, b, face_transmissibility(k[a], k[b], g.dy * g.dz, g.dx)});
        }
    for (int j = 0; j + 1 < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int a = g.cell_index(i, j), b = g.cell_index(i, j + 1);
            faces_.push_back({a, b, face_transmissibility(k[a], k[b], g.dx * g.dz, g.dy)});
        }

    well_cell_.resize(model_.wells.size());
    well_wi_.resize(model_.wells.size());
    for (int w = 0; w < static_cast<int>(model_.wells.size()); ++w) {
        const auto& spec = model_.wells[w];
        well_cell_[w] = g.cell_index(spec.i, spec.j);
        well_wi_[w] = peaceman_index(k[well_cell_[w]], g, spec);
    }
    producers_ = model_.producer_indices();
    injectors_ = model_.injector_indices();

    // Steepest fractional-flow slope over the saturation range (secant scan).
    const int m = 4096;
    const auto& f = model_.fluids;
    double prev = 0.0;
    fmax_ = 0.0;
    for (int s = 0; s <= m; ++s) {
        const double sg = static_cast<double>(s) / m;
        const double lg = f.gas_mobility(sg), lw = f.water_mobility(sg);
        const double fg = lg > 0.0 ? lg / (lg + lw) : 0.0;
        if (s > 0) fmax_ = std::max(fmax_, std::abs(fg - prev) * m);
        prev = fg;
    }
}

StateField Simulator::initial_state() const {
    const int n = model_.grid.num_cells();
    return {Eigen::ArrayXd::Constant(n, model_.init_pressure),
            Eigen::ArrayXd::Constant(n, model_.init_z)};
}

struct Simulator::Work {
    Eigen::ArrayXd p;   // psia
    Eigen::ArrayXd sg;  // gas saturation
    Eigen::ArrayXd mw;  // lbmol water per cell
    Eigen::ArrayXd mg;  // lbmol CO2 per cell
};

Simulator::Work Simulator::make_work(const StateField& state) const {
    state.validate();
    const int n = model_.grid.num_cells();
    if (state.pressure.size() != n) throw ContractViolation("state size does not match grid");
    Work w;
    w.p = state.pressure;
    w.sg.resize(n);
    w.mw.resize(n);
    w.mg.resize(n);
    const double v = model_.grid.cell_volume();
    const auto& f = model_.fluids;
    for (int c = 0; c < n; ++c) {
        const double sg = sat_from_z(state.z_co2[c], f);
        const double phi = model_.rock.porosity_ref *
                           (1.0 + model_.rock.rock_compressibility * (w.p[c] - f.p_ref));
        w.sg[c] = sg;
        w.mw[c] = phi * v * (1.0 - sg) * f.b_w_at(w.p[c]);
        w.mg[c] = phi * v * sg * f.b_g_at(w.p[c]);
    }
    return w;
}

std::array<double, 2> Simulator::inventory(const StateField& state) const {
    const Work w = make_work(state);
    return {w.mw.sum(), w.mg.sum()};
}

void Simulator::check_controls(const ControlVector& u) const {
    if (u.producer_bhp.size() != static_cast<Eigen::Index>(producers_.size()) ||
        u.injector_rate.size() != static_cast<Eigen::Index>(injectors_.size()))
        throw ContractViolation("control vector size does not match well counts");
    const auto& b = model_.bounds;
    const double tol_bhp = 1e-6 * std::max(1.0, b.bhp_high - b.bhp_low);
    const double tol_rate = 1e-6 * std::max(1.0, b.rate_high - b.rate_low);
    for (Eigen::Index i = 0; i < u.producer_bhp.size(); ++i)
        if (u.producer_bhp[i] < b.bhp_low - tol_bhp || u.producer_bhp[i] > b.bhp_high + tol_bhp)
            throw ContractViolation("producer BHP outside control bounds");
    for (Eigen::Index i = 0; i < u.injector_rate.size(); ++i)
        if (u.injector_rate[i] < b.rate_low - tol_rate || u.injector_rate[i] > b.rate_high + tol_rate)
            throw ContractViolation("injector rate outside control bounds");
}

namespace {

// Initial producer guess: flowing wherever the previous pressure exceeds BHP.
std::vector<char> producers_above_bhp(const Eigen::ArrayXd& p, const ControlVector& u,
                                      const std::vector<int>& producers,
                                      const std::vector<int>& well_cell) {
    std::vector<char> active(producers.size());
    for (std::size_t k = 0; k < producers.size(); ++k)
        active[k] = p[well_cell[producers[k]]] > u.producer_bhp[static_cast<Eigen::Index>(k)];
    return active;
}

}  // namespace

Simulator::PressureSystem Simulator::assemble_from_work(const Work& w, const ControlVector& u,
                                                        double dtp,
                                                        const std::vector<char>& active) const {
    const int n = model_.grid.num_cells();
    const auto& f = model_.fluids;
    const double v_bbl = model_.grid.cell_volume() / kFt3PerBbl;

    Eigen::ArrayXd lam_t(n);
    for (int c = 0; c < n; ++c) lam_t[c] = f.total_mobility(w.sg[c]);

    Eigen::VectorXd diag(n), rhs(n);
    for (int c = 0; c < n; ++c) {
        const double phi = model_.rock.porosity_ref *
                           (1.0 + model_.rock.rock_compressibility * (w.p[c] - f.p_ref));
        const double ct = model_.rock.rock_compressibility + (1.0 - w.sg[c]) * f.c_w + w.sg[c] * f.c_g;
        const double acc = phi * v_bbl * ct / dtp;
        diag[c] = acc;
        rhs[c] = acc * w.p[c];
    }

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(faces_.size() * 2 + n);
    for (const auto& face : faces_) {
        const double dp = w.p[face.a] - w.p[face.b];
        const double lam = dp > 0.0 ? lam_t[face.a] : (dp < 0.0 ? lam_t[face.b] : 0.5 * (lam_t[face.a] + lam_t[face.b]));
        const double t = kDarcyBblPerDay * face.t_geo * lam;
        diag[face.a] += t;
        diag[face.b] += t;
        trips.emplace_back(face.a, face.b, -t);
        trips.emplace_back(face.b, face.a, -t);
    }
    for (std::size_t k = 0; k < producers_.size(); ++k) {
        if (!active[k]) continue;
        const int c = well_cell_[producers_[k]];
        const double bhp = u.producer_bhp[static_cast<Eigen::Index>(k)];
        const double gcoef = kDarcyBblPerDay * well_wi_[producers_[k]] * lam_t[c];
        diag[c] += gcoef;
        rhs[c] += gcoef * bhp;
    }
    for (std::size_t k = 0; k < injectors_.size(); ++k)
        rhs[well_cell_[injectors_[k]]] +=
            u.injector_rate[static_cast<Eigen::Index>(k)] * f.B_g / kFt3PerBbl;

    for (int c = 0; c < n; ++c) trips.emplace_back(c, c, diag[c]);
    PressureSystem sys;
    sys.A.resize(n, n);
    sys.A.setFromTriplets(trips.begin(), trips.end());
    sys.A.makeCompressed();
    sys.rhs = std::move(rhs);
    return sys;
}

Simulator::PressureSystem Simulator::assemble_pressure_system(const StateField& state,
                                                              const ControlVector& u,
                                                              double dt_days) const {
    if (!(dt_days > 0.0)) throw ContractViolation("dt must be positive");
    check_controls(u);
    const Work w = make_work(state);
    return assemble_from_work(w, u, dt_days, producers_above_bhp(w.p, u, producers_, well_cell_));
}

Eigen::VectorXd Simulator::solve_pressure(const Work& w, const ControlVector& u, double dtp,
                                          std::vector<char>& active) const {
    active = producers_above_bhp(w.p, u, producers_, well_cell_);
    // Hysteresis keeps solver-level noise at an exact equilibrium from
    // toggling wells on and off forever; the volume error of a well held at
    // |p - BHP| <= eps is far below the closure tolerance.
    const double eps = 1e-7;
    const int max_passes = 2 * static_cast<int>(producers_.size()) + 2;
    Eigen::VectorXd p;
    for (int pass = 0; pass < max_passes; ++pass) {
        const PressureSystem sys = assemble_from_work(w, u, dtp, active);
        Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                                 Eigen::IncompleteCholesky<double>>
            cg;
        cg.setTolerance(opts_.cg_tol);
        cg.setMaxIterations(50 + 10 * sys.A.rows());
        cg.compute(sys.A);
        if (cg.info() != Eigen::Success) throw SolverFailure("pressure preconditioner setup failed");
        p = cg.solveWithGuess(sys.rhs, Eigen::VectorXd(w.p.matrix()));
        const double rhs_norm = sys.rhs.norm();
        if (!(rhs_norm > 0.0)) throw SolverFailure("pressure system has zero right-hand side");
        const double rel = (sys.A * p - sys.rhs).norm() / rhs_norm;
        if (!(rel <= opts_.residual_limit))
            throw SolverFailure("pressure solve residual " + std::to_string(rel) + " exceeds limit");
        if (!p.allFinite()) throw SolverFailure("pressure solve produced non-finite values");

        bool changed = false;
        for (std::size_t k = 0; k < producers_.size(); ++k) {
            const double bhp = u.producer_bhp[static_cast<Eigen::Index>(k)];
            const double pc = p[well_cell_[producers_[k]]];
            if (active[k] && pc < bhp - eps) {
                active[k] = 0;
                changed = true;
            } else if (!active[k] && pc > bhp + eps) {
                active[k] = 1;
                changed = true;
            }
        }
        if (!changed) return p;
    }
    throw SolverFailure("producer active set did not settle");
}

Simulator::StepResult Simulator::step(const StateField& state, const ControlVector& u,
                                      double dt_days) const {
    if (!(dt_days > 0.0)) throw ContractViolation("dt must be positive");
    check_controls(u);
    const auto& b = model_.bounds;
    ControlVector uc = u;
    uc.producer_bhp = uc.producer_bhp.min(b.bhp_high).max(b.bhp_low);
    uc.injector_rate = uc.injector_rate.min(b.rate_high).max(b.rate_low);

    Work w = make_work(state);
    const int n = model_.grid.num_cells();
    const auto& f = model_.fluids;
    const auto& g = model_.grid;
    const int np = static_cast<int>(producers_.size());
    const int ni = static_cast<int>(injectors_.size());
    const double v = g.cell_volume();
    const double v_bbl = v / kFt3PerBbl;

    Eigen::ArrayXd prod_w_bbl = Eigen::ArrayXd::Zero(np);
    Eigen::ArrayXd prod_g_scf = Eigen::ArrayXd::Zero(np);

    Eigen::ArrayXd lam_w(n), lam_g(n), lam_t(n), fw_cell(n);
    Eigen::ArrayXd out_vol(n), out_mw(n), out_mg(n), scale_w(n), scale_g(n);
    Eigen::ArrayXd flux(static_cast<Eigen::Index>(faces_.size()));
    Eigen::ArrayXd prod_q(np);

    long substeps = 0;
    double elapsed = 0.0;
    double dtp = std::min(opts_.dt_press_init, dt_days);
    while (elapsed < dt_days * (1.0 - 1e-12)) {
        const double dtp_eff = std::min(dtp, dt_days - elapsed);
        const Eigen::ArrayXd p_prev = w.p;
        for (int c = 0; c < n; ++c) {
            lam_w[c] = f.water_mobility(w.sg[c]);
            lam_g[c] = f.gas_mobility(w.sg[c]);
            lam_t[c] = lam_w[c] + lam_g[c];
        }
        std::vector<char> prod_active;
        const Eigen::VectorXd p_new_vec = solve_pressure(w, uc, dtp_eff, prod_active);
        const Eigen::ArrayXd p_new = p_new_vec.array();

        // Freeze the total volumetric face fluxes and producer drawdown rates
        // at exactly the values the pressure solve balanced (same mobilities,
        // same upwinding). Transport sub-steps below only re-split these
        // totals into phases by fractional flow, so the per-cell volume change
        // over the pressure step matches the solve and the closure only has to
        // absorb the storage linearization error.
        for (std::size_t fi = 0; fi < faces_.size(); ++fi) {
            const Face& face = faces_[fi];
            const double dp0 = w.p[face.a] - w.p[face.b];
            const double lam = dp0 > 0.0 ? lam_t[face.a]
                                         : (dp0 < 0.0 ? lam_t[face.b] : 0.5 * (lam_t[face.a] + lam_t[face.b]));
            flux[static_cast<Eigen::Index>(fi)] =
                kDarcyBblPerDay * face.t_geo * lam * (p_new[face.a] - p_new[face.b]);
        }
        for (int k = 0; k < np; ++k) {
            const int c = well_cell_[producers_[k]];
            const double dd = std::max(p_new[c] - uc.producer_bhp[k], 0.0);
            prod_q[k] = prod_active[static_cast<std::size_t>(k)]
                            ? kDarcyBblPerDay * well_wi_[producers_[k]] * lam_t[c] * dd
                            : 0.0;
        }

        // Explicit transport of phase moles over dtp_eff along the frozen
        // total fluxes. Streams are metered at the fixed reference molar
        // densities, so molar transport stays exactly proportional to the
        // volumetric balance; compressibility enters through storage and the
        // volume closure only.
        double tau = 0.0;
        while (tau < dtp_eff * (1.0 - 1e-12)) {
            for (int c = 0; c < n; ++c) {
                const double lw = f.water_mobility(w.sg[c]);
                const double lg = f.gas_mobility(w.sg[c]);
                fw_cell[c] = lw / (lw + lg);
            }
            out_vol.setZero();
            out_mw.setZero();
            out_mg.setZero();
            for (std::size_t fi = 0; fi < faces_.size(); ++fi) {
                const double q = flux[static_cast<Eigen::Index>(fi)];
                if (q == 0.0) continue;
                const Face& face = faces_[fi];
                const int up = q > 0.0 ? face.a : face.b;
                const double fw = fw_cell[up];
                out_vol[up] += std::abs(q);
                out_mw[up] += std::abs(q) * fw * kFt3PerBbl * f.b_w;
                out_mg[up] += std::abs(q) * (1.0 - fw) * kFt3PerBbl * f.b_g;
            }
            for (int k = 0; k < np; ++k) {
                if (prod_q[k] <= 0.0) continue;
                const int c = well_cell_[producers_[k]];
                out_vol[c] += prod_q[k];
                out_mw[c] += prod_q[k] * fw_cell[c] * kFt3PerBbl * f.b_w;
                out_mg[c] += prod_q[k] * (1.0 - fw_cell[c]) * kFt3PerBbl * f.b_g;
            }

            double dt_sub = dtp_eff - tau;
            if (fmax_ > 0.0) {
                for (int c = 0; c < n; ++c) {
                    if (out_vol[c] <= 0.0) continue;
                    const double phi = model_.rock.porosity_ref *
                                       (1.0 + model_.rock.rock_compressibility * (p_new[c] - f.p_ref));
                    dt_sub = std::min(dt_sub, opts_.cfl * phi * v_bbl / (out_vol[c] * fmax_));
                }
            }

            // Scale per-cell phase outflow so no inventory goes negative.
            for (int c = 0; c < n; ++c) {
                scale_w[c] = out_mw[c] > 0.0 ? std::min(1.0, w.mw[c] / (dt_sub * out_mw[c])) : 1.0;
                scale_g[c] = out_mg[c] > 0.0 ? std::min(1.0, w.mg[c] / (dt_sub * out_mg[c])) : 1.0;
            }

            for (std::size_t fi = 0; fi < faces_.size(); ++fi) {
                const double q = flux[static_cast<Eigen::Index>(fi)];
                if (q == 0.0) continue;
                const Face& face = faces_[fi];
                const int up = q > 0.0 ? face.a : face.b;
                const int dn = q > 0.0 ? face.b : face.a;
                const double fw = fw_cell[up];
                const double dmw = dt_sub * std::abs(q) * fw * kFt3PerBbl * f.b_w * scale_w[up];
                const double dmg = dt_sub * std::abs(q) * (1.0 - fw) * kFt3PerBbl * f.b_g * scale_g[up];
                w.mw[up] -= dmw;
                w.mw[dn] += dmw;
                w.mg[up] -= dmg;
                w.mg[dn] += dmg;
            }
            for (int k = 0; k < np; ++k) {
                if (prod_q[k] <= 0.0) continue;
                const int c = well_cell_[producers_[k]];
                const double qw = prod_q[k] * fw_cell[c];
                const double qg = prod_q[k] * (1.0 - fw_cell[c]);
                w.mw[c] -= dt_sub * qw * kFt3PerBbl * f.b_w * scale_w[c];
                w.mg[c] -= dt_sub * qg * kFt3PerBbl * f.b_g * scale_g[c];
                prod_w_bbl[k] += dt_sub * qw * scale_w[c];
                prod_g_scf[k] += dt_sub * qg * kFt3PerBbl / f.B_g * scale_g[c];
            }
            for (int k = 0; k < ni; ++k)
                w.mg[well_cell_[injectors_[k]]] += dt_sub * uc.injector_rate[k] * f.B_g * f.b_g;

            for (int c = 0; c < n; ++c) {
                w.mw[c] = std::max(w.mw[c], 0.0);
                w.mg[c] = std::max(w.mg[c], 0.0);
                const double vw = w.mw[c] / f.b_w;
                const double vg = w.mg[c] / f.b_g;
                w.sg[c] = vw + vg > 0.0 ? vg / (vw + vg) : 0.0;
            }

            tau += dt_sub;
            if (++substeps > opts_.max_substeps)
                throw SolverFailure("transport sub-step budget exhausted");
        }

        // Per-cell volume closure: find the pressure at which the phase
        // volumes implied by the inventories exactly fill the pore space.
        double dp_max = 0.0;
        for (int c = 0; c < n; ++c) {
            double p = p_new[c];
            const double tol = opts_.closure_tol * model_.rock.porosity_ref * v;
            bool done = false;
            for (int it = 0; it < opts_.closure_max_iters; ++it) {
                const double bw = f.b_w_at(p), bg = f.b_g_at(p);
                const double phi = model_.rock.porosity_ref *
                                   (1.0 + model_.rock.rock_compressibility * (p - f.p_ref));
                const double res = w.mw[c] / bw + w.mg[c] / bg - phi * v;
                if (std::abs(res) <= tol) {
                    done = true;
                    break;
                }
                const double dres = -w.mw[c] * f.b_w * f.c_w / (bw * bw) -
                                    w.mg[c] * f.b_g * f.c_g / (bg * bg) -
                                    model_.rock.porosity_ref * model_.rock.rock_compressibility * v;
                if (dres == 0.0) {
                    done = true;  // incompressible: volume mismatch cannot be closed
                    break;
                }
                p -= res / dres;
                if (!(p > 0.0)) throw SolverFailure("volume closure drove pressure nonpositive");
            }
            if (!done) throw SolverFailure("volume closure did not converge");
            const double phi = model_.rock.porosity_ref *
                               (1.0 + model_.rock.rock_compressibility * (p - f.p_ref));
            const double sg = (w.mg[c] / f.b_g_at(p)) / (phi * v);
            if (sg < -1e-9 || sg > 1.0 + 1e-9)
                throw IntegrityFailure("closure produced saturation outside [0,1]");
            w.sg[c] = std::clamp(sg, 0.0, 1.0);
            dp_max = std::max({dp_max, std::abs(p - p_prev[c]), std::abs(p - p_new[c])});
            w.p[c] = p;
        }

        elapsed += dtp_eff;
        const double factor = std::clamp(opts_.dp_target / std::max(dp_max, 1e-6), 0.5, 2.0);
        dtp = std::clamp(dtp * factor, opts_.dt_press_min, opts_.dt_press_max);
    }

    StepResult out;
    out.state.pressure = w.p;
    out.state.z_co2.resize(n);
    for (int c = 0; c < n; ++c) out.state.z_co2[c] = z_from_sat(w.sg[c], f);
    out.obs.q_w = prod_w_bbl / dt_days;
    out.obs.q_g = prod_g_scf / dt_days;
    out.obs.p_wf.resize(ni);
    for (int k = 0; k < ni; ++k) {
        const int c = well_cell_[injectors_[k]];
        const double lam = std::max(f.gas_mobility(w.sg[c]), opts_.mobility_floor);
        const double q_res = uc.injector_rate[k] * f.B_g / kFt3PerBbl;
        out.obs.p_wf[k] = w.p[c] + q_res / (kDarcyBblPerDay * well_wi_[injectors_[k]] * lam);
    }
    return out;
}

Simulator::EpisodeResult Simulator::run_episode(const std::vector<ControlVector>& schedule,
                                                double dt_days) const {
    EpisodeResult out;
    out.states.reserve(schedule.size());
    out.observations.reserve(schedule.size());
    StateField s = initial_state();
    for (std::size_t t = 0; t < schedule.size(); ++t) {
        StepResult r = step(s, schedule[t], dt_days);
        s = r.state;
        out.states.push_back(std::move(r.state));
        out.observations.push_back(std::move(r.obs));
    }
    return out;
}

}  // namespace co2rl::simcore
