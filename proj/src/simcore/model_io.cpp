#include "co2rl/simcore/model_io.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "co2rl/common/errors.hpp"
#include "co2rl/common/sha256.hpp"
#include "co2rl/simcore/permeability.hpp"

namespace co2rl::simcore {

std::vector<WellSpec> default_well_layout(const GridSpec& grid) {
    const int inset_x = std::max(1, grid.nx / 8);
    const int inset_y = std::max(1, grid.ny / 8);
    const int qx = grid.nx / 4, qy = grid.ny / 4;
    std::vector<WellSpec> wells;
    auto add = [&wells](const std::string& id, WellKind kind, int i, int j) {
        WellSpec w;
        w.id = id;
        w.kind = kind;
        w.i = i;
        w.j = j;
        wells.push_back(w);
    };
    add("P1", WellKind::Producer, inset_x, inset_y);
    add("P2", WellKind::Producer, grid.nx - 1 - inset_x, inset_y);
    add("P3", WellKind::Producer, inset_x, grid.ny - 1 - inset_y);
    add("P4", WellKind::Producer, grid.nx - 1 - inset_x, grid.ny - 1 - inset_y);
    add("P5", WellKind::Producer, grid.nx / 2, grid.ny / 2);
    add("I1", WellKind::Injector, qx, qy);
    add("I2", WellKind::Injector, grid.nx - 1 - qx, qy);
    add("I3", WellKind::Injector, qx, grid.ny - 1 - qy);
    add("I4", WellKind::Injector, grid.nx - 1 - qx, grid.ny - 1 - qy);
    return wells;
}

ReservoirModel default_model(const GridSpec& grid, const PermGenParams& perm) {
    ReservoirModel m;
    m.grid = grid;
    m.rock.perm = generate_permeability(grid, perm.seed, perm.mean_log, perm.std_log, perm.corr_len);
    m.wells = default_well_layout(grid);
    m.validate();
    return m;
}

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

KvTree model_to_kv(const ReservoirModel& m) {
    KvTree t;
    t.set_int("grid.nx", m.grid.nx);
    t.set_int("grid.ny", m.grid.ny);
    t.set_double("grid.dx", m.grid.dx);
    t.set_double("grid.dy", m.grid.dy);
    t.set_double("grid.dz", m.grid.dz);
    t.set_double("grid.depth", m.grid.depth);
    t.set_double("grid.temperature", m.grid.temperature);

    t.set_double("rock.porosity", m.rock.porosity_ref);
    t.set_double("rock.compressibility", m.rock.rock_compressibility);
    std::ostringstream perm;
    for (Eigen::Index c = 0; c < m.rock.perm.size(); ++c) {
        if (c) perm << ' ';
        perm << fmt17(m.rock.perm[c]);
    }
    t.set("rock.perm.values", perm.str());

    t.set_double("fluids.mu_w", m.fluids.mu_w);
    t.set_double("fluids.mu_g", m.fluids.mu_g);
    t.set_double("fluids.c_w", m.fluids.c_w);
    t.set_double("fluids.c_g", m.fluids.c_g);
    t.set_double("fluids.rho_w", m.fluids.rho_w_ref);
    t.set_double("fluids.rho_g", m.fluids.rho_g_ref);
    t.set_double("fluids.b_w", m.fluids.b_w);
    t.set_double("fluids.b_g", m.fluids.b_g);
    t.set_double("fluids.B_g", m.fluids.B_g);
    t.set_double("fluids.p_ref", m.fluids.p_ref);
    t.set_double("fluids.corey.s_wc", m.fluids.S_wc);
    t.set_double("fluids.corey.s_gr", m.fluids.S_gr);
    t.set_double("fluids.corey.n_w", m.fluids.n_w);
    t.set_double("fluids.corey.n_g", m.fluids.n_g);
    t.set_double("fluids.corey.krw_max", m.fluids.krw_max);
    t.set_double("fluids.corey.krg_max", m.fluids.krg_max);

    t.set_double("init.pressure", m.init_pressure);
    t.set_double("init.z_co2", m.init_z);

    t.set_double("bounds.bhp_low", m.bounds.bhp_low);
    t.set_double("bounds.bhp_high", m.bounds.bhp_high);
    t.set_double("bounds.rate_low", m.bounds.rate_low);
    t.set_double("bounds.rate_high", m.bounds.rate_high);

    for (const WellSpec& w : m.wells) {
        const std::string p = "wells." + w.id + ".";
        t.set(p + "kind", w.kind == WellKind::Producer ? "producer" : "injector");
        t.set_int(p + "i", w.i);
        t.set_int(p + "j", w.j);
        t.set_double(p + "radius", w.radius);
        t.set_double(p + "skin", w.skin);
    }
    return t;
}

ReservoirModel model_from_kv(const KvTree& t) {
    ReservoirModel m;
    m.grid.nx = static_cast<int>(t.get_int("grid.nx", m.grid.nx));
    m.grid.ny = static_cast<int>(t.get_int("grid.ny", m.grid.ny));
    m.grid.dx = t.get_double("grid.dx", m.grid.dx);
    m.grid.dy = t.get_double("grid.dy", m.grid.dy);
    m.grid.dz = t.get_double("grid.dz", m.grid.dz);
    m.grid.depth = t.get_double("grid.depth", m.grid.depth);
    m.grid.temperature = t.get_double("grid.temperature", m.grid.temperature);

    m.rock.porosity_ref = t.get_double("rock.porosity", m.rock.porosity_ref);
    m.rock.rock_compressibility = t.get_double("rock.compressibility", m.rock.rock_compressibility);
    if (t.has("rock.perm.values")) {
        std::istringstream in(t.get_string("rock.perm.values"));
        std::vector<double> vals;
        double v = 0.0;
        while (in >> v) vals.push_back(v);
        m.rock.perm = Eigen::Map<const Eigen::ArrayXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    } else {
        PermGenParams pg;
        pg.seed = static_cast<std::uint64_t>(t.get_int("rock.perm.seed", static_cast<std::int64_t>(pg.seed)));
        pg.mean_log = t.get_double("rock.perm.mean_log", pg.mean_log);
        pg.std_log = t.get_double("rock.perm.std_log", pg.std_log);
        pg.corr_len = t.get_double("rock.perm.corr_len", pg.corr_len);
        m.rock.perm = generate_permeability(m.grid, pg.seed, pg.mean_log, pg.std_log, pg.corr_len);
    }

    m.fluids.mu_w = t.get_double("fluids.mu_w", m.fluids.mu_w);
    m.fluids.mu_g = t.get_double("fluids.mu_g", m.fluids.mu_g);
    m.fluids.c_w = t.get_double("fluids.c_w", m.fluids.c_w);
    m.fluids.c_g = t.get_double("fluids.c_g", m.fluids.c_g);
    m.fluids.rho_w_ref = t.get_double("fluids.rho_w", m.fluids.rho_w_ref);
    m.fluids.rho_g_ref = t.get_double("fluids.rho_g", m.fluids.rho_g_ref);
    m.fluids.b_w = t.get_double("fluids.b_w", m.fluids.b_w);
    m.fluids.b_g = t.get_double("fluids.b_g", m.fluids.b_g);
    m.fluids.B_g = t.get_double("fluids.B_g", m.fluids.B_g);
    m.fluids.p_ref = t.get_double("fluids.p_ref", m.fluids.p_ref);
    m.fluids.S_wc = t.get_double("fluids.corey.s_wc", m.fluids.S_wc);
    m.fluids.S_gr = t.get_double("fluids.corey.s_gr", m.fluids.S_gr);
    m.fluids.n_w = t.get_double("fluids.corey.n_w", m.fluids.n_w);
    m.fluids.n_g = t.get_double("fluids.corey.n_g", m.fluids.n_g);
    m.fluids.krw_max = t.get_double("fluids.corey.krw_max", m.fluids.krw_max);
    m.fluids.krg_max = t.get_double("fluids.corey.krg_max", m.fluids.krg_max);

    m.init_pressure = t.get_double("init.pressure", m.init_pressure);
    m.init_z = t.get_double("init.z_co2", m.init_z);

    m.bounds.bhp_low = t.get_double("bounds.bhp_low", m.bounds.bhp_low);
    m.bounds.bhp_high = t.get_double("bounds.bhp_high", m.bounds.bhp_high);
    m.bounds.rate_low = t.get_double("bounds.rate_low", m.bounds.rate_low);
    m.bounds.rate_high = t.get_double("bounds.rate_high", m.bounds.rate_high);

    const std::vector<std::string> ids = t.subsections("wells");
    if (ids.empty()) {
        m.wells = default_well_layout(m.grid);
    } else {
        for (const std::string& id : ids) {
            const std::string p = "wells." + id + ".";
            WellSpec w;
            w.id = id;
            const std::string kind = t.get_string(p + "kind");
            if (kind == "producer") {
                w.kind = WellKind::Producer;
            } else if (kind == "injector") {
                w.kind = WellKind::Injector;
            } else {
                throw ConfigError("well " + id + ": unknown kind '" + kind + "'");
            }
            w.i = static_cast<int>(t.get_int(p + "i"));
            w.j = static_cast<int>(t.get_int(p + "j"));
            w.radius = t.get_double(p + "radius", w.radius);
            w.skin = t.get_double(p + "skin", w.skin);
            m.wells.push_back(w);
        }
    }

    m.validate();
    return m;
}

void write_model_file(const std::string& path, const ReservoirModel& m) {
    model_to_kv(m).write_file(path);
}

ReservoirModel read_model_file(const std::string& path) {
    return model_from_kv(KvTree::parse_file(path));
}

std::string model_fingerprint(const ReservoirModel& m) {
    return Sha256::of_string(model_to_kv(m).serialize());
}

}  // namespace co2rl::simcore
