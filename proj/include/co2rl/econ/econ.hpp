#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "co2rl/common/errors.hpp"

namespace co2rl::econ {

// Standard cubic feet of CO2 per metric ton, from the ideal-gas molar volume
// at 60 F / 14.696 psia and a molar mass of 44.01 lb/lbmol:
//   V_m = R T / p   with R = 10.7316 psia ft3 / (lbmol R), T = 519.67 R
//   scf/ton = V_m / 44.01 lb/lbmol * 2204.6226 lb/ton
inline double ideal_gas_scf_per_ton_co2() {
    const double molar_volume_scf = 10.7316 * 519.67 / 14.696;  // scf per lbmol
    return molar_volume_scf / 44.01 * 2204.6226;
}

struct EconParams {
    double r_credit = 50.0;  // $/ton CO2 stored
    double r_opr = 10.0;     // $/ton injection cost
    double r_w = 5.0;        // $/STB brine handling
    double r_co2 = 50.0;     // $/ton produced-CO2 handling
    double gamma = 0.986;    // per-period depreciation factor
    double dt_days = 100.0;  // days per period
    double scf_per_ton = ideal_gas_scf_per_ton_co2();

    void validate() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("econ: gamma must be in (0,1]");
        if (!(dt_days > 0.0)) throw ConfigError("econ: dt_days must be positive");
        if (r_credit < 0.0 || r_opr < 0.0 || r_w < 0.0 || r_co2 < 0.0)
            throw ConfigError("econ: prices must be nonnegative");
        if (!(scf_per_ton > 0.0)) throw ConfigError("econ: scf_per_ton must be positive");
    }
};

inline double gas_scf_to_ton_per_day(double scf_per_day, const EconParams& p) {
    return scf_per_day / p.scf_per_ton;
}

// Immediate cash rate in $/day for one control period: injection earns the
// storage credit net of operating cost, produced brine and produced gas are
// charged handling costs. Gas rates come in as scf/day and are priced per ton.
inline double reward(const std::vector<double>& injector_rate_scf,
                     const std::vector<double>& producer_water_stb,
                     const std::vector<double>& producer_gas_scf, const EconParams& p) {
    double r = 0.0;
    for (double q : injector_rate_scf) r += (p.r_credit - p.r_opr) * gas_scf_to_ton_per_day(q, p);
    for (double q : producer_water_stb) {
        if (q < 0.0) throw ContractViolation("econ: negative producer water rate");
        r -= p.r_w * q;
    }
    for (double q : producer_gas_scf) {
        if (q < 0.0) throw ContractViolation("econ: negative producer gas rate");
        r -= p.r_co2 * gas_scf_to_ton_per_day(q, p);
    }
    return r;
}

// NPV in dollars for per-period cash rates r_1..r_Nt ($/day):
//   NPV = sum_t gamma^t * r_t * dt,  discount exponent starting at t = 1.
inline double npv(const std::vector<double>& reward_per_day, const EconParams& p) {
    if (reward_per_day.empty()) throw ContractViolation("econ: npv needs at least one period");
    double acc = 0.0;
    double discount = 1.0;
    for (double r : reward_per_day) {
        discount *= p.gamma;
        acc += discount * r * p.dt_days;
    }
    return acc;
}

}  // namespace co2rl::econ
