#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "co2rl/common/errors.hpp"
#include "co2rl/common/kvfile.hpp"
#include "co2rl/common/rng.hpp"
#include "co2rl/e2co/model.hpp"
#include "co2rl/e2co/train.hpp"
#include "doctest.h"

using namespace co2rl;
namespace dp = co2rl::datapipe;
namespace sc = co2rl::simcore;
using e2co::Batch;
using e2co::E2coModel;
using e2co::LossWeights;
using e2co::ModelDims;
using ndauto::Mat;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

ModelDims tiny_dims() {
    ModelDims d;
    d.n_b = 4;
    d.d_z = 3;
    d.n_u = 2;
    d.n_y = 3;
    d.enc_hidden = {6};
    d.trunk_width = 5;
    return d;
}

E2coModel<double> tiny_model(std::uint64_t seed = 31) {
    return E2coModel<double>::create(tiny_dims(), dp::NormStats{}, seed);
}

Mat<double> random_mat(Eigen::Index rows, Eigen::Index cols, RngStream& rng, double lo = -1.0,
                       double hi = 1.0) {
    Mat<double> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
    return m;
}

Batch<double> random_batch(const ModelDims& d, Eigen::Index n, std::uint64_t seed) {
    RngStream rng(seed);
    Batch<double> b;
    b.x_t = random_mat(d.state_dim(), n, rng, 0.0, 1.0);
    b.u = random_mat(d.n_u, n, rng, 0.0, 1.0);
    b.x_next = random_mat(d.state_dim(), n, rng, 0.0, 1.0);
    b.y_next = random_mat(d.n_y, n, rng, 0.0, 1.0);
    return b;
}

// dense layer stack evaluated with explicit scalar loops, independent of the
// library's matrix kernels
Eigen::VectorXd mlp_naive(const ndauto::Mlp<double>& mlp, Eigen::VectorXd x) {
    for (const auto& layer : mlp.layers) {
        const auto& w = layer.weight.value;
        Eigen::VectorXd y(w.rows());
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            double s = layer.bias.value(i, 0);
            for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x(j);
            y(i) = s;
        }
        if (layer.act == ndauto::Act::relu)
            for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = std::max(y(i), 0.0);
        x = y;
    }
    return x;
}

// naive dense evaluation of z' = A(z) z + B(z) u with column-major reshapes
Eigen::VectorXd naive_transition(const E2coModel<double>& m, const Eigen::VectorXd& z,
                                 const Eigen::VectorXd& u) {
    const int dz = m.dims.d_z, nu = m.dims.n_u;
    const Eigen::VectorXd h = mlp_naive(m.trans_trunk, z);
    const Eigen::VectorXd ta = mlp_naive(m.head_a, h);
    const Eigen::VectorXd tb = mlp_naive(m.head_b, h);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dz);
    for (int i = 0; i < dz; ++i) {
        for (int j = 0; j < dz; ++j) out(i) += ta(j * dz + i) * z(j);
        for (int j = 0; j < nu; ++j) out(i) += tb(j * dz + i) * u(j);
    }
    return out;
}

Eigen::VectorXd naive_observe(const E2coModel<double>& m, const Eigen::VectorXd& z_next,
                              const Eigen::VectorXd& z_curr, const Eigen::VectorXd& u) {
    const int dz = m.dims.d_z, nu = m.dims.n_u, ny = m.dims.n_y;
    const Eigen::VectorXd h = mlp_naive(m.out_trunk, z_curr);
    const Eigen::VectorXd tc = mlp_naive(m.head_c, h);
    const Eigen::VectorXd td = mlp_naive(m.head_d, h);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(ny);
    for (int i = 0; i < ny; ++i) {
        for (int j = 0; j < dz; ++j) out(i) += tc(j * ny + i) * z_next(j);
        for (int j = 0; j < nu; ++j) out(i) += td(j * ny + i) * u(j);
    }
    return out;
}

void zero_net(ndauto::Mlp<double>& mlp) {
    for (auto& layer : mlp.layers) {
        layer.weight.value.setZero();
        layer.bias.value.setZero();
    }
}

// trajectories of a known linear system z' = Az + Bu observed through
// y = Cz' + Du, with the state equal to the latent (identity lift)
dp::Dataset make_linear_dataset(int n_traj, int n_steps, std::uint64_t seed) {
    Eigen::Matrix2d A;
    A << 0.92, 0.08, -0.08, 0.92;
    Eigen::Matrix2d B;
    B << 0.05, 0.0, 0.015, 0.025;
    Eigen::Matrix<double, 3, 2> C;
    C << 0.7, 0.2, 0.1, 0.9, 0.4, 0.4;
    Eigen::Matrix<double, 3, 2> D;
    D << 0.2, 0.1, 0.0, 0.3, 0.5, 0.0;

    dp::Dataset ds;
    ds.n_traj = n_traj;
    ds.n_steps = n_steps;
    ds.n_cells = 1;
    ds.n_prod = 1;
    ds.n_inj = 1;
    RngStream rng(seed);
    auto state_of = [](const Eigen::Vector2d& z) {
        sc::StateField x;
        x.pressure = Eigen::ArrayXd::Constant(1, z(0));
        x.z_co2 = Eigen::ArrayXd::Constant(1, z(1));
        return x;
    };
    for (int k = 0; k < n_traj; ++k) {
        Eigen::Vector2d z(rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7));
        for (int t = 0; t < n_steps; ++t) {
            const Eigen::Vector2d u(rng.uniform01(), rng.uniform01());
            const Eigen::Vector2d z1 = A * z + B * u;
            const Eigen::Vector3d y = C * z1 + D * u;
            dp::TransitionTuple tp;
            tp.x_t = state_of(z);
            tp.u_t.producer_bhp = Eigen::ArrayXd::Constant(1, u(0));
            tp.u_t.injector_rate = Eigen::ArrayXd::Constant(1, u(1));
            tp.x_next = state_of(z1);
            tp.y_next.q_w = Eigen::ArrayXd::Constant(1, y(0));
            tp.y_next.q_g = Eigen::ArrayXd::Constant(1, y(1));
            tp.y_next.p_wf = Eigen::ArrayXd::Constant(1, y(2));
            tp.trajectory = k;
            tp.step = t;
            ds.tuples.push_back(tp);
            z = z1;
        }
    }
    return ds;
}

std::vector<int> all_indices(const dp::Dataset& ds) {
    std::vector<int> idx(ds.tuples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return idx;
}

}  // namespace

TEST_CASE("latent dimensions, determinism, and shape errors") {
    E2coModel<double> m = tiny_model();
    RngStream rng(5);
    const Mat<double> x = random_mat(8, 3, rng, 0.0, 1.0);
    const Mat<double> z = e2co::encode_batch(m, x);
    CHECK(z.rows() == 3);
    CHECK(z.cols() == 3);
    CHECK(e2co::encode_batch(m, x) == z);
    CHECK(z.allFinite());

    const Mat<double> back = e2co::decode_batch(m, z);
    CHECK(back.rows() == 8);
    CHECK(e2co::decode_batch(m, z) == back);

    CHECK_THROWS_AS(e2co::encode_batch(m, random_mat(7, 2, rng)), ContractViolation);
    CHECK_THROWS_AS(e2co::decode_batch(m, random_mat(4, 2, rng)), ContractViolation);
    CHECK_THROWS_AS(e2co::transition_batch(m, random_mat(3, 2, rng), random_mat(1, 2, rng)),
                    ContractViolation);
    CHECK_THROWS_AS(e2co::transition_batch(m, random_mat(3, 2, rng), random_mat(2, 3, rng)),
                    ContractViolation);
    CHECK_THROWS_AS(
        e2co::observe_batch(m, random_mat(3, 2, rng), random_mat(3, 2, rng), random_mat(3, 2, rng)),
        ContractViolation);

    // declared defaults: 2*64*64 = 8192 state entries map to 50 latents
    ModelDims defaults;
    CHECK(defaults.d_z == 50);
    CHECK(defaults.enc_hidden == std::vector<int>{512, 256});
    defaults.n_b = 4096;
    defaults.n_u = 9;
    defaults.n_y = 14;
    const auto big = E2coModel<float>::create(defaults, dp::NormStats{}, 1);
    RngStream rng2(6);
    const Mat<float> xf = random_mat(8192, 1, rng2, 0.0, 1.0).cast<float>();
    CHECK(e2co::encode_batch(big, xf).rows() == 50);
    const Mat<float> zf = Mat<float>::Zero(50, 1);
    CHECK(e2co::decode_batch(big, zf).rows() == 8192);
}

TEST_CASE("transition matches a naive dense oracle and honors forced heads") {
    E2coModel<double> m = tiny_model(42);
    RngStream rng(7);
    const Mat<double> z = random_mat(3, 5, rng);
    const Mat<double> u = random_mat(2, 5, rng);

    const Mat<double> out = e2co::transition_batch(m, z, u);
    for (int k = 0; k < 5; ++k) {
        const Eigen::VectorXd want = naive_transition(m, z.col(k), u.col(k));
        CHECK((out.col(k) - want).cwiseAbs().maxCoeff() < 1e-12);
    }

    // the graph version computes the same values
    ndauto::Tape<double> t;
    auto zg = t.input(z);
    auto ug = t.input(u);
    const Mat<double> gout = t.value(e2co::transition_graph(t, m, zg, ug));
    CHECK((gout - out).cwiseAbs().maxCoeff() < 1e-14);

    // identity dynamics: trunk forced to zero, bias of the A head set to vec(I)
    zero_net(m.trans_trunk);
    zero_net(m.head_a);
    zero_net(m.head_b);
    for (int i = 0; i < 3; ++i) m.head_a.layers[0].bias.value(i * 3 + i, 0) = 1.0;
    const Mat<double> ident = e2co::transition_batch(m, z, u);
    CHECK((ident - z).cwiseAbs().maxCoeff() == 0.0);

    // affine in u for fixed z: A=0 leaves pure B(z) u
    E2coModel<double> m2 = tiny_model(43);
    zero_net(m2.head_a);
    RngStream rng2(8);
    const Mat<double> zc = random_mat(3, 1, rng2);
    const Mat<double> u1 = random_mat(2, 1, rng2);
    const Mat<double> u2 = random_mat(2, 1, rng2);
    const Mat<double> u_sum = u1 + u2;
    const Mat<double> u_zero = Mat<double>::Zero(2, 1);
    const Mat<double> lhs = e2co::transition_batch(m2, zc, u_sum);
    const Mat<double> rhs = e2co::transition_batch(m2, zc, u1) + e2co::transition_batch(m2, zc, u2) -
                            e2co::transition_batch(m2, zc, u_zero);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("observation network is bilinear in latent and control") {
    E2coModel<double> m = tiny_model(44);
    RngStream rng(9);
    const Mat<double> zn = random_mat(3, 4, rng);
    const Mat<double> zc = random_mat(3, 4, rng);
    const Mat<double> u = random_mat(2, 4, rng);

    const Mat<double> out = e2co::observe_batch(m, zn, zc, u);
    for (int k = 0; k < 4; ++k) {
        const Eigen::VectorXd want = naive_observe(m, zn.col(k), zc.col(k), u.col(k));
        CHECK((out.col(k) - want).cwiseAbs().maxCoeff() < 1e-12);
    }

    ndauto::Tape<double> t;
    auto g1 = t.input(zn);
    auto g2 = t.input(zc);
    auto g3 = t.input(u);
    const Mat<double> gout = t.value(e2co::observe_graph(t, m, g1, g2, g3));
    CHECK((gout - out).cwiseAbs().maxCoeff() < 1e-14);

    // C=0, D=I padded with a zero row: controls pass through to matching slots
    zero_net(m.out_trunk);
    zero_net(m.head_c);
    zero_net(m.head_d);
    for (int j = 0; j < 2; ++j) m.head_d.layers[0].bias.value(j * 3 + j, 0) = 1.0;
    const Mat<double> pass = e2co::observe_batch(m, zn, zc, u);
    CHECK((pass.topRows(2) - u).cwiseAbs().maxCoeff() == 0.0);
    CHECK(pass.row(2).cwiseAbs().maxCoeff() == 0.0);

    // linear in z_next for fixed z_curr and u
    E2coModel<double> m2 = tiny_model(45);
    const Mat<double> za = random_mat(3, 1, rng);
    const Mat<double> zb = random_mat(3, 1, rng);
    const Mat<double> uc = random_mat(2, 1, rng);
    const Mat<double> zfix = random_mat(3, 1, rng);
    const Mat<double> z_sum = za + zb;
    const Mat<double> z_zero = Mat<double>::Zero(3, 1);
    const Mat<double> lhs = e2co::observe_batch(m2, z_sum, zfix, uc);
    const Mat<double> rhs = e2co::observe_batch(m2, za, zfix, uc) +
                            e2co::observe_batch(m2, zb, zfix, uc) -
                            e2co::observe_batch(m2, z_zero, zfix, uc);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("loss decomposition, exact fit, and weight semantics") {
    const ModelDims d = tiny_dims();
    E2coModel<double> m = tiny_model(46);
    const Batch<double> b = random_batch(d, 4, 10);
    const LossWeights w{0.9, 0.2, 0.7};

    const e2co::LossValue v = e2co::total_loss(m, b, w);
    CHECK(v.total == doctest::Approx(v.parts.weighted_total(w)).epsilon(1e-12));
    CHECK(v.parts.rec > 0.0);
    CHECK(v.parts.kl > 0.0);
    CHECK(v.parts.yobs > 0.0);

    // the training graph evaluates to the same loss
    ndauto::Tape<double> t;
    auto xt = t.input(b.x_t);
    auto uu = t.input(b.u);
    auto xn = t.input(b.x_next);
    auto yn = t.input(b.y_next);
    const auto g = e2co::loss_graph(t, m, xt, uu, xn, yn, w);
    CHECK(t.value(g.total)(0, 0) == doctest::Approx(v.total).epsilon(1e-12));
    CHECK(t.value(g.rec)(0, 0) == doctest::Approx(v.parts.rec).epsilon(1e-12));
    CHECK(t.value(g.kl)(0, 0) == doctest::Approx(v.parts.kl).epsilon(1e-12));
    CHECK(t.value(g.yobs)(0, 0) == doctest::Approx(v.parts.yobs).epsilon(1e-12));

    // a model wired as the identity autoencoder with identity transition fits
    // a static batch exactly when the latent penalty is off
    ModelDims ide;
    ide.n_b = 1;
    ide.d_z = 2;
    ide.n_u = 1;
    ide.n_y = 1;
    ide.enc_hidden = {};
    ide.trunk_width = 2;
    E2coModel<double> pm = E2coModel<double>::create(ide, dp::NormStats{}, 3);
    zero_net(pm.encoder);
    zero_net(pm.decoder);
    zero_net(pm.trans_trunk);
    zero_net(pm.head_a);
    zero_net(pm.head_b);
    zero_net(pm.out_trunk);
    zero_net(pm.head_c);
    zero_net(pm.head_d);
    pm.encoder.layers[0].weight.value.setIdentity();
    pm.decoder.layers[0].weight.value.setIdentity();
    for (int i = 0; i < 2; ++i) pm.head_a.layers[0].bias.value(i * 2 + i, 0) = 1.0;
    Batch<double> fit;
    RngStream rng(11);
    fit.x_t = random_mat(2, 3, rng, 0.0, 1.0);
    fit.x_next = fit.x_t;  // identity transition reproduces the same state
    fit.u = random_mat(1, 3, rng, 0.0, 1.0);
    fit.y_next = Mat<double>::Zero(1, 3);
    const e2co::LossValue pv = e2co::total_loss(pm, fit, LossWeights{1.0, 0.0, 1.0});
    CHECK(pv.total == 0.0);
    CHECK(pv.parts.rec == 0.0);
    CHECK(pv.parts.yobs == 0.0);

    // weights (1,0,0): observation error is ignored
    Batch<double> b2 = b;
    b2.y_next.array() += 3.0;
    const LossWeights only_rec{1.0, 0.0, 0.0};
    CHECK(e2co::total_loss(m, b, only_rec).total == e2co::total_loss(m, b2, only_rec).total);

    // a NaN parameter surfaces as a training error naming the component
    E2coModel<double> bad = tiny_model(47);
    bad.encoder.layers[0].bias.value(0, 0) = std::nan("");
    bool threw = false;
    try {
        e2co::total_loss(bad, b, w);
    } catch (const TrainingError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("reconstruction") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("hand-computed toy loss") {
    ModelDims d;
    d.n_b = 1;
    d.d_z = 3;
    d.n_u = 1;
    d.n_y = 1;
    d.enc_hidden = {};
    d.trunk_width = 2;
    E2coModel<double> m = E2coModel<double>::create(d, dp::NormStats{}, 1);
    zero_net(m.encoder);
    zero_net(m.decoder);
    zero_net(m.trans_trunk);
    zero_net(m.head_a);
    zero_net(m.head_b);
    zero_net(m.out_trunk);
    zero_net(m.head_c);
    zero_net(m.head_d);
    m.encoder.layers[0].bias.value << 1.0, 2.0, 2.0;        // z_t = z_next = (1,2,2)
    m.trans_trunk.layers[0].bias.value << 1.0, 0.0;         // h = (1,0)
    m.head_b.layers[0].bias.value << 1.0, 1.0, 1.0;         // B = (1,1,1)^T
    m.decoder.layers[0].bias.value << 0.5, 0.5;             // xhat = (0.5,0.5)
    m.out_trunk.layers[0].bias.value << 1.0, 0.0;
    m.head_c.layers[0].bias.value << 1.0, 1.0, 1.0;         // C = (1,1,1)
    m.head_d.layers[0].bias.value << 0.5;                   // D = (0.5)

    // with u = 2: zhat = B u = (2,2,2); yhat = C zhat + D u = 6 + 1 = 7
    Batch<double> b;
    b.x_t = Mat<double>(2, 1);
    b.x_t << 1.0, 1.0;
    b.u = Mat<double>::Constant(1, 1, 2.0);
    b.x_next = Mat<double>::Zero(2, 1);
    b.y_next = Mat<double>::Constant(1, 1, 5.0);

    const e2co::LossValue v = e2co::total_loss(m, b, LossWeights{});
    // rec = |(1,1)-(.5,.5)| + |(0,0)-(.5,.5)| = 2*sqrt(0.5); kl = |(1,2,2)| +
    // |(1,2,2)-(2,2,2)| = 3 + 1; yobs = |5-7| = 2
    CHECK(v.parts.rec == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(v.parts.kl == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(v.parts.yobs == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(v.total == doctest::Approx(std::sqrt(2.0) + 0.01 * 4.0 + 2.0).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences on a tiny model") {
    const ModelDims d = tiny_dims();
    E2coModel<double> m = tiny_model(48);
    const Batch<double> b = random_batch(d, 3, 12);
    const LossWeights w{1.0, 0.3, 0.8};

    std::vector<ndauto::Parameter<double>*> params = m.params();
    ndauto::Adam<double>::zero_grads(params);
    {
        ndauto::Tape<double> t;
        auto xt = t.input(b.x_t);
        auto uu = t.input(b.u);
        auto xn = t.input(b.x_next);
        auto yn = t.input(b.y_next);
        t.backward(e2co::loss_graph(t, m, xt, uu, xn, yn, w).total);
    }

    const double h = 1e-5;
    double max_rel = 0.0;
    int checked = 0;
    for (ndauto::Parameter<double>* p : params) {
        for (Eigen::Index i = 0; i < p->value.rows(); ++i)
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                const double save = p->value(i, j);
                p->value(i, j) = save + h;
                const double fp = e2co::total_loss(m, b, w).total;
                p->value(i, j) = save - h;
                const double fm = e2co::total_loss(m, b, w).total;
                p->value(i, j) = save;
                const double fd = (fp - fm) / (2.0 * h);
                const double g = p->grad(i, j);
                const double denom = std::max({std::abs(g), std::abs(fd), 1e-6});
                max_rel = std::max(max_rel, std::abs(g - fd) / denom);
                ++checked;
            }
    }
    CHECK(checked > 300);
    CHECK(max_rel < 1e-4);
}

TEST_CASE("training fits an exactly representable linear system") {
    const dp::Dataset train_ds = make_linear_dataset(100, 10, 100);
    const dp::Dataset val_ds = make_linear_dataset(10, 10, 200);

    e2co::TrainConfig cfg;
    cfg.dims.d_z = 2;
    cfg.dims.enc_hidden = {8};
    cfg.dims.trunk_width = 4;
    cfg.epochs = 50;
    cfg.batch_size = 4;
    cfg.lr = 3e-3;
    cfg.lr_decay_every = 20;
    cfg.weights.kl = 1.0;  // latent consistency carries the transition signal here
    cfg.seed = 21;
    const auto res = e2co::train<double>(train_ds, val_ds, cfg);
    CHECK(res.history.size() == 50);
    CHECK(res.best_epoch >= 0);
    CHECK(res.history.back().val_total < res.history.front().val_total);

    // validation transition loss: the latent advanced by the learned dynamics
    // must land on the encoding of the true next state
    const Batch<double> vb = e2co::pack_batch<double>(val_ds, all_indices(val_ds));
    const Mat<double> z_t = e2co::encode_batch(res.model, vb.x_t);
    const Mat<double> z_n = e2co::encode_batch(res.model, vb.x_next);
    const Mat<double> z_hat = e2co::transition_batch(res.model, z_t, vb.u);
    const double trans_err = (z_n - z_hat).colwise().norm().mean();
    CHECK(trans_err < 1e-3);

    // encoding the mean training input stays within the observed latent range
    const Batch<double> tb = e2co::pack_batch<double>(train_ds, all_indices(train_ds));
    const Mat<double> z_train = e2co::encode_batch(res.model, tb.x_t);
    const double z_max = z_train.colwise().norm().maxCoeff();
    const Mat<double> mean_x = tb.x_t.rowwise().mean();
    const double z_mean = e2co::encode_batch(res.model, mean_x).norm();
    CHECK(std::isfinite(z_mean));
    CHECK(z_mean <= 2.0 * z_max);
}

TEST_CASE("training is deterministic, honors epochs=0, and reports divergence") {
    const dp::Dataset train_ds = make_linear_dataset(4, 10, 300);
    const dp::Dataset val_ds = make_linear_dataset(2, 10, 301);

    e2co::TrainConfig cfg;
    cfg.dims.d_z = 2;
    cfg.dims.enc_hidden = {4};
    cfg.dims.trunk_width = 4;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 77;

    const auto a = e2co::train<double>(train_ds, val_ds, cfg);
    const auto b = e2co::train<double>(train_ds, val_ds, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_total == b.history[i].train_total);
        CHECK(a.history[i].val_total == b.history[i].val_total);
        CHECK(a.history[i].train_parts.rec == b.history[i].train_parts.rec);
        CHECK(a.history[i].train_parts.kl == b.history[i].train_parts.kl);
        CHECK(a.history[i].train_parts.yobs == b.history[i].train_parts.yobs);
    }
    CHECK(a.best_epoch == b.best_epoch);

    // epochs=0 returns the seeded initialization untouched
    e2co::TrainConfig zero_cfg = cfg;
    zero_cfg.epochs = 0;
    const auto init = e2co::train<double>(train_ds, val_ds, zero_cfg);
    CHECK(init.history.empty());
    ModelDims want_dims = zero_cfg.dims;
    want_dims.n_b = train_ds.n_cells;
    want_dims.n_u = train_ds.n_u();
    want_dims.n_y = train_ds.n_y();
    const auto fresh =
        E2coModel<double>::create(want_dims, train_ds.stats, derive_seed(zero_cfg.seed, 0));
    CHECK(init.model.encoder.layers[0].weight.value == fresh.encoder.layers[0].weight.value);
    CHECK(init.model.head_c.layers[0].weight.value == fresh.head_c.layers[0].weight.value);

    // a poisoned sample aborts with the epoch index
    dp::Dataset bad = train_ds;
    bad.tuples[0].x_t.pressure(0) = std::nan("");
    bool threw = false;
    try {
        e2co::train<double>(bad, val_ds, cfg);
    } catch (const TrainingError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("rollout composes transition, observation, and decode recursively") {
    ModelDims d = tiny_dims();  // n_u=2, n_y=3: one producer, one injector
    dp::NormStats stats;
    stats.p_min = 2000.0;
    stats.p_max = 3000.0;
    stats.qw_min = 0.0;
    stats.qw_max = 100.0;
    stats.qg_min = 0.0;
    stats.qg_max = 1000.0;
    E2coModel<double> m = E2coModel<double>::create(d, stats, 51);

    sc::StateField x0;
    x0.pressure = Eigen::ArrayXd::Constant(4, 2500.0);
    x0.pressure(1) = 2600.0;
    x0.z_co2 = Eigen::ArrayXd::LinSpaced(4, 0.1, 0.4);

    std::vector<sc::ControlVector> schedule(3);
    for (int t = 0; t < 3; ++t) {
        schedule[t].producer_bhp = Eigen::ArrayXd::Constant(1, 2300.0 + 50.0 * t);
        schedule[t].injector_rate = Eigen::ArrayXd::Constant(1, 4e5 + 1e5 * t);
    }

    const auto r = e2co::rollout(m, x0, schedule);
    CHECK(r.latents.cols() == 4);
    CHECK(r.states.cols() == 4);
    CHECK(r.observations.cols() == 3);
    CHECK(r.latents.rows() == 3);
    CHECK(r.states.rows() == 8);
    CHECK(r.observations.rows() == 3);

    // manual recursion over the same primitives must agree exactly
    Mat<double> z = e2co::encode_batch(
        m, Mat<double>(e2co::flatten_state(dp::normalize_state(x0, stats))));
    CHECK(r.latents.col(0) == z);
    CHECK(r.states.col(0) == e2co::decode_batch(m, z));
    for (int t = 0; t < 3; ++t) {
        const Mat<double> u =
            e2co::flatten_control(dp::normalize_control(schedule[t], stats));
        const Mat<double> z1 = e2co::transition_batch(m, z, u);
        CHECK(r.observations.col(t) == e2co::observe_batch(m, z1, z, u));
        CHECK(r.latents.col(t + 1) == z1);
        CHECK(r.states.col(t + 1) == e2co::decode_batch(m, z1));
        z = z1;
    }

    // single-step schedule is the composition base case
    const auto r1 = e2co::rollout(m, x0, {schedule[0]});
    CHECK(r1.latents.cols() == 2);
    CHECK(r1.latents.col(1) == r.latents.col(1));
    CHECK(r1.observations.col(0) == r.observations.col(0));

    // empty schedule only encodes and decodes the initial state
    const auto r0 = e2co::rollout(m, x0, {});
    CHECK(r0.latents.cols() == 1);
    CHECK(r0.observations.cols() == 0);

    // denormalizing accessors undo the stats mapping
    const sc::StateField s0 = e2co::rollout_state(m, r, 0);
    CHECK(s0.pressure.size() == 4);
    const sc::ObservationVector o0 = e2co::rollout_observation(m, r, 0);
    CHECK(o0.q_w.size() == 1);
    CHECK(o0.q_g.size() == 1);
    CHECK(o0.p_wf.size() == 1);
    CHECK_THROWS_AS(e2co::rollout_observation(m, r, 3), ContractViolation);

    // malformed schedule surfaces as a shape violation
    std::vector<sc::ControlVector> badsched(1);
    badsched[0].producer_bhp = Eigen::ArrayXd::Constant(2, 2300.0);
    badsched[0].injector_rate = Eigen::ArrayXd::Constant(1, 4e5);
    CHECK_THROWS_AS(e2co::rollout(m, x0, badsched), ContractViolation);
}

TEST_CASE("checkpoints round-trip with their sidecar metadata") {
    ModelDims d = tiny_dims();
    dp::NormStats stats;
    stats.p_min = 2187.5;
    stats.p_max = 3012.25;
    stats.qw_min = -1.5;
    stats.qw_max = 321.0625;
    stats.qg_min = 0.0;
    stats.qg_max = 9.5e5;
    E2coModel<float> m = E2coModel<float>::create(d, stats, 99);

    const std::string path = temp_path("e2co_ckpt_test.nda");
    e2co::save_model(path, m, "feedfacedeadbeef");

    std::string fp;
    const E2coModel<float> back = e2co::load_model<float>(path, &fp);
    CHECK(fp == "feedfacedeadbeef");
    CHECK(back.dims.d_z == d.d_z);
    CHECK(back.dims.n_b == d.n_b);
    CHECK(back.dims.enc_hidden == d.enc_hidden);
    CHECK(back.stats.p_min == stats.p_min);
    CHECK(back.stats.qw_max == stats.qw_max);

    // float parameters survive the 32-bit container bit-exactly
    const auto orig_params = m.params();
    const auto back_params = back.params();
    REQUIRE(orig_params.size() == back_params.size());
    for (std::size_t i = 0; i < orig_params.size(); ++i) {
        CHECK(orig_params[i]->name == back_params[i]->name);
        CHECK(orig_params[i]->value == back_params[i]->value);
    }
    RngStream rng(3);
    const Mat<float> x = random_mat(8, 2, rng, 0.0, 1.0).cast<float>();
    CHECK(e2co::encode_batch(m, x) == e2co::encode_batch(back, x));

    // sidecar is plain structured text
    const KvTree meta = KvTree::parse_file(path + ".meta");
    CHECK(meta.get_int("model.d_z") == 3);
    CHECK(meta.get_string("model.enc_hidden") == "6");
    CHECK(meta.get_double("norm.p_min") == 2187.5);

    CHECK_THROWS_AS(e2co::load_model<float>(temp_path("no_such_ckpt.nda")), IoError);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".meta");
}
