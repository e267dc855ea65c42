#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "co2rl/common/errors.hpp"

namespace co2rl::simcore {

// Field-unit constants.
inline constexpr double kDarcyBblPerDay = 1.127e-3;  // bbl/day per (mD*ft*psi/cp)
inline constexpr double kFt3PerBbl = 5.615;          // also ft3 per STB

struct GridSpec {
    int nx = 64;
    int ny = 64;  // nz fixed at 1
    double dx = 65.6;  // ft
    double dy = 65.6;
    double dz = 65.6;
    double depth = 7500.0;        // ft
    double temperature = 200.0;   // F

    int num_cells() const { return nx * ny; }
    int cell_index(int i, int j) const { return j * nx + i; }
    double cell_volume() const { return dx * dy * dz; }  // ft3

    void validate() const {
        if (nx < 2 || ny < 2) throw ConfigError("grid: nx and ny must be at least 2");
        if (!(dx > 0 && dy > 0 && dz > 0)) throw ConfigError("grid: cell dimensions must be positive");
        if (!(depth > 0)) throw ConfigError("grid: depth must be positive");
    }
};

struct RockProps {
    double porosity_ref = 0.13;
    Eigen::ArrayXd perm;                   // per-cell isotropic permeability, mD
    double rock_compressibility = 4.0e-6;  // 1/psi

    void validate(const GridSpec& grid) const {
        if (!(porosity_ref > 0.0 && porosity_ref < 1.0))
            throw ConfigError("rock: porosity must be in (0,1)");
        if (perm.size() != grid.num_cells())
            throw ConfigError("rock: permeability field size does not match grid");
        if ((perm <= 0.0).any()) throw ConfigError("rock: permeability must be positive everywhere");
        if (rock_compressibility < 0.0)
            throw ConfigError("rock: compressibility must be nonnegative");
    }
};

struct FluidProps {
    double mu_w = 0.5;    // cp
    double mu_g = 0.06;
    double c_w = 3.0e-6;  // 1/psi
    double c_g = 1.0e-4;
    double rho_w_ref = 62.4;  // lb/ft3 at p_ref
    double rho_g_ref = 45.0;
    double b_w = 3.46;  // lbmol/ft3 at p_ref
    double b_g = 0.80;
    double B_g = 0.005;     // reservoir ft3 per standard ft3
    double p_ref = 3045.0;  // psia, reference for compressibility expansions

    // Corey relative permeability
    double S_wc = 0.2;
    double S_gr = 0.05;
    double n_w = 2.0;
    double n_g = 2.0;
    double krw_max = 1.0;
    double krg_max = 0.9;

    void validate() const {
        if (!(mu_w > 0 && mu_g > 0)) throw ConfigError("fluids: viscosities must be positive");
        if (!(rho_w_ref > 0 && rho_g_ref > 0)) throw ConfigError("fluids: densities must be positive");
        if (!(b_w > 0 && b_g > 0)) throw ConfigError("fluids: molar densities must be positive");
        if (!(B_g > 0)) throw ConfigError("fluids: B_g must be positive");
        if (c_w < 0 || c_g < 0) throw ConfigError("fluids: compressibilities must be nonnegative");
        if (!(S_wc >= 0 && S_gr >= 0 && S_wc + S_gr < 1.0))
            throw ConfigError("fluids: need 0 <= S_wc + S_gr < 1");
        if (n_w < 1.0 || n_g < 1.0) throw ConfigError("fluids: Corey exponents must be >= 1");
        if (!(krw_max > 0 && krw_max <= 1.0 && krg_max > 0 && krg_max <= 1.0))
            throw ConfigError("fluids: kr endpoints must be in (0,1]");
    }

    double b_w_at(double p) const { return b_w * (1.0 + c_w * (p - p_ref)); }
    double b_g_at(double p) const { return b_g * (1.0 + c_g * (p - p_ref)); }

    double krw(double s_g) const {
        const double denom = 1.0 - S_wc - S_gr;
        const double se = std::clamp((1.0 - s_g - S_wc) / denom, 0.0, 1.0);
        return krw_max * std::pow(se, n_w);
    }
    double krg(double s_g) const {
        const double denom = 1.0 - S_wc - S_gr;
        const double se = std::clamp((s_g - S_gr) / denom, 0.0, 1.0);
        return krg_max * std::pow(se, n_g);
    }
    double water_mobility(double s_g) const { return krw(s_g) / mu_w; }
    double gas_mobility(double s_g) const { return krg(s_g) / mu_g; }
    double total_mobility(double s_g) const { return water_mobility(s_g) + gas_mobility(s_g); }
};

// Overall CO2 mole fraction <-> gas saturation, at reference molar densities.
// Bijective on [0,1]; inputs outside the unit interval are a domain error.
inline double sat_from_z(double z, const FluidProps& f) {
    if (!(z >= 0.0 && z <= 1.0)) throw ContractViolation("z_co2 outside [0,1]");
    return z * f.b_w / (f.b_g * (1.0 - z) + f.b_w * z);
}

inline double z_from_sat(double s_g, const FluidProps& f) {
    if (!(s_g >= 0.0 && s_g <= 1.0)) throw ContractViolation("gas saturation outside [0,1]");
    return s_g * f.b_g / (f.b_g * s_g + f.b_w * (1.0 - s_g));
}

enum class WellKind { Injector, Producer };

struct WellSpec {
    std::string id;
    WellKind kind = WellKind::Producer;
    int i = 0;
    int j = 0;
    double radius = 0.30;  // ft
    double skin = 0.0;

    void validate(const GridSpec& grid) const {
        if (i < 0 || i >= grid.nx || j < 0 || j >= grid.ny)
            throw ConfigError("well " + id + ": cell outside grid");
        if (!(radius > 0)) throw ConfigError("well " + id + ": radius must be positive");
        if (id.empty()) throw ConfigError("well id must not be empty");
    }
};

// Per-cell state: pressure in psia and overall CO2 mole fraction.
struct StateField {
    Eigen::ArrayXd pressure;
    Eigen::ArrayXd z_co2;

    void validate() const {
        if (pressure.size() != z_co2.size()) throw ContractViolation("state: field size mismatch");
        if ((pressure <= 0.0).any()) throw ContractViolation("state: nonpositive pressure");
        if ((z_co2 < 0.0).any() || (z_co2 > 1.0).any())
            throw ContractViolation("state: z_co2 outside [0,1]");
    }
};

// Producer BHPs (psia) then injector surface gas rates (scf/day).
struct ControlVector {
    Eigen::ArrayXd producer_bhp;
    Eigen::ArrayXd injector_rate;
};

// Producer water rates (STB/day), producer gas rates (scf/day), injector
// flowing bottom-hole pressures (psia).
struct ObservationVector {
    Eigen::ArrayXd q_w;
    Eigen::ArrayXd q_g;
    Eigen::ArrayXd p_wf;
};

struct ControlBounds {
    double bhp_low = 2200.0;
    double bhp_high = 2500.0;
    double rate_low = 1.0e5;
    double rate_high = 1.0e6;

    void validate() const {
        if (!(bhp_low <= bhp_high) || !(rate_low <= rate_high))
            throw ConfigError("bounds: lower bound exceeds upper bound");
        if (bhp_low <= 0.0 || rate_low < 0.0) throw ConfigError("bounds: invalid lower bounds");
    }
};

}  // namespace co2rl::simcore
