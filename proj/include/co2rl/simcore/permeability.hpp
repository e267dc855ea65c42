#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "co2rl/common/errors.hpp"
#include "co2rl/common/rng.hpp"
#include "co2rl/simcore/types.hpp"

namespace co2rl::simcore {

// Smoothed log-normal permeability field. White Gaussian noise is convolved
// with an isotropic Gaussian kernel; the kernel weights are renormalized per
// cell over the in-domain support so the filtered field has exactly unit
// variance everywhere (no edge damping). Then k = exp(mean_log + std_log * y).
inline Eigen::ArrayXd generate_permeability(const GridSpec& grid, std::uint64_t seed,
                                            double mean_log, double std_log,
                                            double corr_len_cells) {
    grid.validate();
    if (std_log < 0.0) throw ConfigError("permeability: std_log must be nonnegative");
    if (corr_len_cells < 0.0) throw ConfigError("permeability: correlation length must be nonnegative");

    const int nx = grid.nx, ny = grid.ny;
    const int n = grid.num_cells();

    if (std_log == 0.0) return Eigen::ArrayXd::Constant(n, std::exp(mean_log));

    RngStream rng(seed);
    Eigen::ArrayXd white(n);
    for (int c = 0; c < n; ++c) white[c] = rng.normal();

    const int radius = corr_len_cells > 0.0 ? static_cast<int>(std::ceil(3.0 * corr_len_cells)) : 0;
    Eigen::ArrayXd smooth(n);
    if (radius == 0) {
        smooth = white;
    } else {
        const double inv2l2 = 1.0 / (2.0 * corr_len_cells * corr_len_cells);
        const int w = 2 * radius + 1;
        std::vector<double> kern(static_cast<std::size_t>(w) * w);
        for (int dj = -radius; dj <= radius; ++dj)
            for (int di = -radius; di <= radius; ++di)
                kern[static_cast<std::size_t>(dj + radius) * w + (di + radius)] =
                    std::exp(-(di * di + dj * dj) * inv2l2);

        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                double num = 0.0, wsq = 0.0;
                for (int dj = -radius; dj <= radius; ++dj) {
                    const int jj = j + dj;
                    if (jj < 0 || jj >= ny) continue;
                    for (int di = -radius; di <= radius; ++di) {
                        const int ii = i + di;
                        if (ii < 0 || ii >= nx) continue;
                        const double kw = kern[static_cast<std::size_t>(dj + radius) * w + (di + radius)];
                        num += kw * white[grid.cell_index(ii, jj)];
                        wsq += kw * kw;
                    }
                }
                smooth[grid.cell_index(i, j)] = num / std::sqrt(wsq);
            }
        }
    }
    return (mean_log + std_log * smooth).exp();
}

}  // namespace co2rl::simcore
