#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "co2rl/common/kvfile.hpp"
#include "co2rl/simcore/simulator.hpp"

namespace co2rl::simcore {

// Parameters of the smoothed log-normal permeability generator, kept together
// so configuration files can describe a field without storing every cell.
struct PermGenParams {
    std::uint64_t seed = 101;
    double mean_log = 4.0943445622221004;  // ln(60 mD)
    double std_log = 0.8;
    double corr_len = 4.0;  // cells
};

// Default well pattern: producers at the four corners inset by nx/8 (ny/8)
// cells plus the grid center, injectors at the four mid-quadrant points.
// The inset scales with the grid so coarse profiles keep the same geometry.
std::vector<WellSpec> default_well_layout(const GridSpec& grid);

// Complete model with defaulted rock/fluid properties, a generated
// permeability field and the default well pattern.
ReservoirModel default_model(const GridSpec& grid, const PermGenParams& perm);

// Canonical nested key-value form. Permeability is stored inline at full
// precision, so the serialization identifies the model content exactly.
KvTree model_to_kv(const ReservoirModel& m);
ReservoirModel model_from_kv(const KvTree& t);

void write_model_file(const std::string& path, const ReservoirModel& m);
ReservoirModel read_model_file(const std::string& path);

// SHA-256 of the canonical serialization; used to tie datasets and
// checkpoints to the exact model they were produced from.
std::string model_fingerprint(const ReservoirModel& m);

}  // namespace co2rl::simcore
