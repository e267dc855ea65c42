#pragma once

#include <cmath>
#include <numbers>

#include "co2rl/common/errors.hpp"
#include "co2rl/simcore/types.hpp"

namespace co2rl::simcore {

// Peaceman well index for a vertical well in an isotropic cell, in mD*ft.
// The tuning-free square-cell equivalent radius 0.198*dx is used when the
// cell is square; otherwise the general anisotropic-form radius reduces (with
// kx = ky) to 0.28 * sqrt(dx^2 + dy^2) / 2.
inline double peaceman_index(double perm_md, const GridSpec& grid, const WellSpec& well) {
    if (!(perm_md > 0.0)) throw ConfigError("well " + well.id + ": nonpositive permeability");
    const double r_eq = grid.dx == grid.dy
                            ? 0.198 * grid.dx
                            : 0.28 * std::sqrt(grid.dx * grid.dx + grid.dy * grid.dy) / 2.0;
    if (r_eq <= well.radius)
        throw ConfigError("well " + well.id + ": equivalent radius does not exceed wellbore radius");
    const double denom = std::log(r_eq / well.radius) + well.skin;
    if (!(denom > 0.0)) throw ConfigError("well " + well.id + ": nonpositive completion denominator");
    return 2.0 * std::numbers::pi * perm_md * grid.dz / denom;
}

}  // namespace co2rl::simcore
