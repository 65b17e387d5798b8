#include <doctest.h>

#include "cohortforge/bspline.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/rng.hpp"

using namespace cohortforge;

namespace {

std::vector<double> uniform_ages(int n, Rng& rng) {
    std::vector<double> x;
    for (int i = 0; i < n; ++i) x.push_back(rng.uniform(15.0, 90.0));
    return x;
}

}  // namespace

TEST_CASE("rows sum to one inside the boundaries") {
    Rng rng(3);
    auto x = uniform_ages(200, rng);
    auto basis = BSplineBasis::from_data(x, 10);
    std::vector<double> probe = x;
    probe.push_back(basis.xmin());
    probe.push_back(basis.xmax());
    auto B = basis.evaluate(probe);
    for (Eigen::Index i = 0; i < B.rows(); ++i)
        CHECK(B.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("column count is interior knots + degree + 1") {
    Rng rng(4);
    auto x = uniform_ages(100, rng);
    auto basis = BSplineBasis::from_data(x, 5, 3);
    CHECK(basis.n_basis() == 9);
}

TEST_CASE("second-difference penalty annihilates constants and lines") {
    Rng rng(5);
    auto x = uniform_ages(100, rng);
    auto basis = BSplineBasis::from_data(x, 6);
    auto P = basis.penalty(2);
    Eigen::VectorXd c = Eigen::VectorXd::Constant(basis.n_basis(), 3.7);
    CHECK(c.dot(P * c) == doctest::Approx(0.0).epsilon(1e-12));
    Eigen::VectorXd line(basis.n_basis());
    for (int i = 0; i < basis.n_basis(); ++i) line(i) = 2.0 * i + 1.0;
    CHECK(line.dot(P * line) == doctest::Approx(0.0).epsilon(1e-10));
    // and it is positive semidefinite on random vectors
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd v(basis.n_basis());
        for (int i = 0; i < basis.n_basis(); ++i) v(i) = rng.normal();
        CHECK(v.dot(P * v) >= -1e-12);
    }
}

TEST_CASE("too few distinct x values is an error") {
    std::vector<double> x = {1.0, 1.0, 2.0, 2.0};
    CHECK_THROWS_WITH_AS(BSplineBasis::from_data(x, 5), doctest::Contains("BAD_KNOTS"),
                         Error);
}

TEST_CASE("out-of-range evaluation clamps to the boundary") {
    Rng rng(6);
    auto x = uniform_ages(100, rng);
    auto basis = BSplineBasis::from_data(x, 4);
    Eigen::RowVectorXd at_max(basis.n_basis()), beyond(basis.n_basis());
    basis.evaluate_row(basis.xmax(), at_max);
    basis.evaluate_row(basis.xmax() + 10.0, beyond);
    CHECK((at_max - beyond).norm() == 0.0);
}

TEST_CASE("quantile type-7 matches hand values") {
    CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({5}, 0.025) == doctest::Approx(5.0));
    CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == doctest::Approx(2.0));
}
