#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "cohortforge/dwi.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/rng.hpp"

using namespace cohortforge::dwi;
using cohortforge::Rng;

namespace {

// Deterministic, roughly uniform directions on the sphere (golden spiral).
std::vector<std::array<double, 3>> sphere_directions(int n) {
    std::vector<std::array<double, 3>> dirs;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        double z = 1.0 - 2.0 * (i + 0.5) / n;
        double r = std::sqrt(1.0 - z * z);
        double phi = golden * i;
        dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
    }
    return dirs;
}

GradientScheme scheme_with_dirs(int n_dirs, double b, int n_b0 = 2) {
    GradientScheme s;
    for (int i = 0; i < n_b0; ++i) {
        s.bvals.push_back(0.0);
        s.bvecs.push_back({0, 0, 0});
    }
    for (const auto& d : sphere_directions(n_dirs)) {
        s.bvals.push_back(b);
        s.bvecs.push_back(d);
    }
    return s;
}

// Forward oracle: S_i = S0 exp(-b g' D g).
std::vector<double> forward_signals(const GradientScheme& s, const Eigen::Matrix3d& D,
                                    double s0) {
    std::vector<double> out;
    for (size_t i = 0; i < s.size(); ++i) {
        Eigen::Vector3d g(s.bvecs[i][0], s.bvecs[i][1], s.bvecs[i][2]);
        out.push_back(s0 * std::exp(-s.bvals[i] * g.dot(D * g)));
    }
    return out;
}

Eigen::Matrix3d tensor_matrix(const VoxelTensor& t) {
    Eigen::Matrix3d D;
    D << t.D[0], t.D[3], t.D[4], t.D[3], t.D[1], t.D[5], t.D[4], t.D[5], t.D[2];
    return D;
}

Eigen::Matrix3d random_spd(Rng& rng, double lo, double hi) {
    Eigen::Matrix3d A;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) A(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::Matrix3d> qr(A);
    Eigen::Matrix3d Q = qr.householderQ();
    Eigen::Vector3d evals(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
    return Q * evals.asDiagonal() * Q.transpose();
}

}  // namespace

TEST_CASE("read_bval_bvec direct parse") {
    auto s = read_bval_bvec("0 1000 1000\n", "0 1 0\n0 0 1\n0 0 0\n");
    REQUIRE(s.size() == 3);
    CHECK(s.bvals[1] == 1000.0);
    CHECK(s.bvecs[1][0] == doctest::Approx(1.0));
    CHECK(s.bvecs[2][2] == doctest::Approx(0.0));
}

TEST_CASE("read_bval_bvec count mismatch") {
    CHECK_THROWS_WITH_AS(
        read_bval_bvec("0 1000 1000 1000 1000 1000 1000 1000 1000 1000\n",
                       "0 1 0 0 0 0 0 0 0\n0 0 1 0 0 0 0 0 0\n0 0 0 1 0 0 0 0 0\n"),
        doctest::Contains("COUNT_MISMATCH"), cohortforge::Error);
}

TEST_CASE("read_bval_bvec renormalizes near-unit vectors") {
    auto s = read_bval_bvec("1000\n", "0.99\n0\n0\n");
    CHECK(s.bvecs[0][0] == doctest::Approx(1.0));
}

TEST_CASE("read_bval_bvec rejects negative b and bad norms") {
    CHECK_THROWS_WITH_AS(read_bval_bvec("-5\n", "1\n0\n0\n"),
                         doctest::Contains("NEGATIVE_BVALUE"), cohortforge::Error);
    CHECK_THROWS_WITH_AS(read_bval_bvec("1000\n", "0.1\n0\n0\n"),
                         doctest::Contains("BAD_VECTOR_NORM"), cohortforge::Error);
}

TEST_CASE("group_shells clusters by running mean") {
    auto shells = group_shells({0, 5, 995, 1000, 1005, 2000}, 50.0);
    REQUIRE(shells.size() == 3);
    CHECK(shells[0].b == doctest::Approx(2.5));
    CHECK(shells[1].b == doctest::Approx(1000.0));
    CHECK(shells[2].b == doctest::Approx(2000.0));
    CHECK(shells[1].volumes.size() == 3);
}

TEST_CASE("group_shells: {0, 1000} are two shells") {
    CHECK(group_shells({0, 1000}, 50.0).size() == 2);
}

TEST_CASE("group_shells: {900, 940, 980} form one shell at 940") {
    auto shells = group_shells({900, 940, 980}, 50.0);
    REQUIRE(shells.size() == 1);
    CHECK(shells[0].b == doctest::Approx(940.0));
}

TEST_CASE("select_shell picks nearest to 1000, ties to lower") {
    std::vector<Shell> shells;
    for (double b : {0.0, 900.0, 2000.0}) shells.push_back({b, {0}});
    CHECK(select_shell(shells, 1000.0).b == 900.0);

    std::vector<Shell> tie;
    for (double b : {0.0, 700.0, 1300.0}) tie.push_back({b, {0}});
    CHECK(select_shell(tie, 1000.0).b == 700.0);

    std::vector<Shell> only_b0 = {{0.0, {0}}};
    CHECK_THROWS_WITH_AS(select_shell(only_b0, 1000.0), doctest::Contains("NO_DWI_SHELL"),
                         cohortforge::Error);
}

TEST_CASE("shell_sufficiency counts [500, 1500] inclusive") {
    auto s12 = scheme_with_dirs(12, 1000.0);
    auto r = shell_sufficiency(s12);
    CHECK(r.sufficient);
    CHECK(r.count == 12);

    auto s11 = scheme_with_dirs(11, 1000.0);
    CHECK(!shell_sufficiency(s11).sufficient);

    auto high = scheme_with_dirs(20, 3000.0);
    auto rh = shell_sufficiency(high);
    CHECK(!rh.sufficient);
    CHECK(rh.count == 0);

    auto edge_lo = scheme_with_dirs(12, 500.0);
    CHECK(shell_sufficiency(edge_lo).sufficient);
    auto edge_hi = scheme_with_dirs(12, 1500.0);
    CHECK(shell_sufficiency(edge_hi).sufficient);
}

TEST_CASE("noiseless isotropic tensor recovered to 1e-6") {
    auto s = scheme_with_dirs(32, 1000.0);
    Eigen::Matrix3d D = 0.7e-3 * Eigen::Matrix3d::Identity();
    auto signals = forward_signals(s, D, 1000.0);
    auto t = fit_tensor_wls(signals, s, 1000.0);
    CHECK((tensor_matrix(t) - D).norm() / D.norm() < 1e-6);
    CHECK(fa(t.eigenvalues[0], t.eigenvalues[1], t.eigenvalues[2]) ==
          doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("noiseless anisotropic tensor recovered to 1e-6") {
    auto s = scheme_with_dirs(32, 1000.0);
    Eigen::Matrix3d D = Eigen::Vector3d(1.7e-3, 0.3e-3, 0.2e-3).asDiagonal();
    auto signals = forward_signals(s, D, 500.0);
    auto t = fit_tensor_wls(signals, s, 500.0);
    CHECK((tensor_matrix(t) - D).norm() / D.norm() < 1e-6);
}

TEST_CASE("five directions are rank deficient") {
    auto s = scheme_with_dirs(5, 1000.0);
    std::vector<double> signals(s.size(), 100.0);
    CHECK_THROWS_WITH_AS(fit_tensor_wls(signals, s, 100.0),
                         doctest::Contains("RANK_DEFICIENT"), cohortforge::Error);
}

TEST_CASE("ln S0 estimated as seventh unknown when no b0 exists") {
    // A single shell cannot identify S0 (the quadratic-form columns sum to a
    // constant), so the scheme needs two shells.
    GradientScheme s = scheme_with_dirs(16, 700.0, 0);
    for (const auto& d : sphere_directions(16)) {
        s.bvals.push_back(1300.0);
        s.bvecs.push_back(d);
    }
    Eigen::Matrix3d D = Eigen::Vector3d(1.2e-3, 0.8e-3, 0.5e-3).asDiagonal();
    auto signals = forward_signals(s, D, 750.0);
    auto t = fit_tensor_wls(signals, s, 0.0);
    CHECK((tensor_matrix(t) - D).norm() / D.norm() < 1e-6);
    CHECK(t.s0 == doctest::Approx(750.0).epsilon(1e-6));
}

TEST_CASE("fa closed-form values") {
    CHECK(fa(1e-3, 1e-3, 1e-3) == 0.0);
    CHECK(fa(1e-3, 0.0, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fa(1.7e-3, 0.3e-3, 0.2e-3) == doctest::Approx(0.835868).epsilon(1e-5));
    CHECK(fa(0.0, 0.0, 0.0) == 0.0);
}

TEST_CASE("md closed-form values") {
    CHECK(md(1e-3, 1e-3, 1e-3) == doctest::Approx(1e-3));
    CHECK(md(1.7e-3, 0.3e-3, 0.2e-3) == doctest::Approx(0.7333333e-3).epsilon(1e-6));
    CHECK(md(0, 0, 0) == 0.0);
}

TEST_CASE("fa stays in [0,1] for random nonnegative triples") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        double v = fa(rng.uniform(0.0, 3e-3), rng.uniform(0.0, 3e-3),
                      rng.uniform(0.0, 3e-3));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("rotation invariance of FA/MD through the full fit") {
    Rng rng(17);
    auto s = scheme_with_dirs(32, 1000.0);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::Matrix3d D = random_spd(rng, 0.1e-3, 3e-3);
        Eigen::Matrix3d R = random_spd(rng, 1.0, 1.0);  // identity eigenvalues
        Eigen::HouseholderQR<Eigen::Matrix3d> qr(R);
        Eigen::Matrix3d Q = qr.householderQ();
        Eigen::Matrix3d Drot = Q * D * Q.transpose();

        auto t1 = fit_tensor_wls(forward_signals(s, D, 800.0), s, 800.0);
        auto t2 = fit_tensor_wls(forward_signals(s, Drot, 800.0), s, 800.0);
        double fa1 = fa(t1.eigenvalues[0], t1.eigenvalues[1], t1.eigenvalues[2]);
        double fa2 = fa(t2.eigenvalues[0], t2.eigenvalues[1], t2.eigenvalues[2]);
        CHECK(fa1 == doctest::Approx(fa2).epsilon(1e-9));
        double md1 = md(t1.eigenvalues[0], t1.eigenvalues[1], t1.eigenvalues[2]);
        double md2 = md(t2.eigenvalues[0], t2.eigenvalues[1], t2.eigenvalues[2]);
        CHECK(md1 == doctest::Approx(md2).epsilon(1e-9));
    }
}

TEST_CASE("eigenvalues satisfy the eigenpair residual bound") {
    Rng rng(23);
    auto s = scheme_with_dirs(32, 1000.0);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::Matrix3d D = random_spd(rng, 0.1e-3, 3e-3);
        auto t = fit_tensor_wls(forward_signals(s, D, 900.0), s, 900.0);
        Eigen::Matrix3d Dm = tensor_matrix(t);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(Dm);
        for (int i = 0; i < 3; ++i) {
            double lambda = es.eigenvalues()(i);
            Eigen::Vector3d v = es.eigenvectors().col(i);
            CHECK((Dm * v - lambda * v).norm() <= 1e-9 * Dm.norm());
            CHECK(t.eigenvalues[2 - i] == doctest::Approx(lambda).epsilon(1e-12));
        }
    }
}

TEST_CASE("aggregate metrics: uniform values and voxel volume arithmetic") {
    Volume mask;
    mask.ndim = 3;
    mask.dims = {10, 10, 10, 1};
    mask.voxel_size = {1, 1, 1};
    mask.data.assign(1000, 1.0);
    std::vector<double> fa_map(1000, 0.5), md_map(1000, 0.7e-3);
    auto agg = aggregate_metrics(fa_map, md_map, mask, {1, 1, 1});
    CHECK(agg.mean_fa == doctest::Approx(0.5));
    CHECK(agg.ticv == doctest::Approx(1000.0));

    Volume small;
    small.ndim = 3;
    small.dims = {2, 2, 2, 1};
    small.voxel_size = {2, 2, 2};
    small.data.assign(8, 1.0);
    std::vector<double> f8(8, 0.1), m8(8, 0.1);
    CHECK(aggregate_metrics(f8, m8, small, {2, 2, 2}).ticv == doctest::Approx(64.0));

    small.data.assign(8, 0.0);
    CHECK_THROWS_WITH_AS(aggregate_metrics(f8, m8, small, {2, 2, 2}),
                         doctest::Contains("EMPTY_MASK"), cohortforge::Error);
}

TEST_CASE("session metrics on a uniform phantom recover MD") {
    auto s = scheme_with_dirs(32, 1000.0);
    Eigen::Matrix3d D = 0.7e-3 * Eigen::Matrix3d::Identity();
    auto signals = forward_signals(s, D, 1000.0);

    Volume dwi;
    dwi.ndim = 4;
    dwi.dims = {4, 4, 4, static_cast<int>(s.size())};
    dwi.voxel_size = {1.5, 1.5, 1.5};
    size_t nvox = dwi.nvox_per_volume();
    dwi.data.resize(dwi.nvox());
    for (size_t v = 0; v < s.size(); ++v)
        for (size_t i = 0; i < nvox; ++i) dwi.data[v * nvox + i] = signals[v];

    Volume mask;
    mask.ndim = 3;
    mask.dims = {4, 4, 4, 1};
    mask.voxel_size = dwi.voxel_size;
    mask.data.assign(nvox, 0.0);
    for (size_t i = 0; i < 32; ++i) mask.data[i] = 1.0;

    auto m = compute_session_metrics(dwi, s, mask);
    CHECK(m.mean_md == doctest::Approx(0.7e-3).epsilon(1e-6));
    CHECK(m.mean_fa == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(m.ticv == doctest::Approx(32 * 1.5 * 1.5 * 1.5));
    CHECK(m.shell_b == doctest::Approx(1000.0));
    CHECK(m.n_dirs_used == 32);
    CHECK(m.shell_sufficient);
}

TEST_CASE("volumes above 1500 are excluded from the fit via shell selection") {
    // 12 dirs at 1000 plus 12 at 3000: only the 1000 shell is used.
    GradientScheme s = scheme_with_dirs(12, 1000.0);
    for (const auto& d : sphere_directions(12)) {
        s.bvals.push_back(3000.0);
        s.bvecs.push_back(d);
    }
    auto shells = group_shells(s.bvals, 50.0);
    const auto& sel = select_shell(shells, 1000.0);
    CHECK(sel.b == doctest::Approx(1000.0));
    CHECK(sel.volumes.size() == 12);
}
