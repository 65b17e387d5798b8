#include "cohortforge/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cohortforge/error.hpp"

namespace cohortforge {

double quantile(std::vector<double> values, double p) {
    if (values.empty()) fail("EMPTY", "quantile of empty sample");
    std::sort(values.begin(), values.end());
    double h = (static_cast<double>(values.size()) - 1.0) * p;
    size_t lo = static_cast<size_t>(std::floor(h));
    size_t hi = std::min(lo + 1, values.size() - 1);
    double frac = h - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

BSplineBasis BSplineBasis::from_data(std::span<const double> x, int n_interior_knots,
                                     int degree) {
    if (n_interior_knots < 0) fail("BAD_KNOTS", "interior knot count must be >= 0");
    if (degree < 1) fail("BAD_KNOTS", "spline degree must be >= 1");
    if (x.empty()) fail("BAD_KNOTS", "no data to place knots on");

    std::set<double> distinct(x.begin(), x.end());
    if (static_cast<int>(distinct.size()) < n_interior_knots + 2)
        fail("BAD_KNOTS", "need at least " + std::to_string(n_interior_knots + 2) +
                              " distinct x values for " + std::to_string(n_interior_knots) +
                              " interior knots");

    double xmin = *distinct.begin();
    double xmax = *distinct.rbegin();
    std::vector<double> sample(x.begin(), x.end());

    std::vector<double> interior;
    for (int j = 1; j <= n_interior_knots; ++j) {
        double p = static_cast<double>(j) / static_cast<double>(n_interior_knots + 1);
        interior.push_back(quantile(sample, p));
    }
    for (size_t j = 1; j < interior.size(); ++j)
        if (!(interior[j] > interior[j - 1]))
            fail("BAD_KNOTS", "quantile knots are not strictly increasing; "
                              "reduce the knot count for this data");
    if (!interior.empty() && (!(interior.front() > xmin) || !(interior.back() < xmax)))
        fail("BAD_KNOTS", "interior knots collide with the boundary");

    std::vector<double> full;
    for (int i = 0; i <= degree; ++i) full.push_back(xmin);
    full.insert(full.end(), interior.begin(), interior.end());
    for (int i = 0; i <= degree; ++i) full.push_back(xmax);
    return from_knots(std::move(full), degree, xmin, xmax);
}

BSplineBasis BSplineBasis::from_knots(std::vector<double> full_knots, int degree,
                                      double xmin, double xmax) {
    BSplineBasis b;
    b.knots_ = std::move(full_knots);
    b.degree_ = degree;
    b.xmin_ = xmin;
    b.xmax_ = xmax;
    b.n_basis_ = static_cast<int>(b.knots_.size()) - degree - 1;
    if (b.n_basis_ < degree + 1) fail("BAD_KNOTS", "knot vector too short");
    return b;
}

void BSplineBasis::evaluate_row(double x, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const {
    row.setZero();
    x = std::clamp(x, xmin_, xmax_);

    // Knot span containing x: largest i with knots[i] <= x < knots[i+1],
    // clamped to the last nonempty span at the right boundary.
    int lo = degree_;
    int hi = static_cast<int>(knots_.size()) - degree_ - 2;
    int span = hi;
    for (int i = lo; i <= hi; ++i) {
        if (x < knots_[i + 1]) {
            span = i;
            break;
        }
    }

    // de Boor's recurrence for the degree+1 nonzero functions on the span.
    std::vector<double> N(degree_ + 1, 0.0), left(degree_ + 1, 0.0), right(degree_ + 1, 0.0);
    N[0] = 1.0;
    for (int j = 1; j <= degree_; ++j) {
        left[j] = x - knots_[span + 1 - j];
        right[j] = knots_[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            double den = right[r + 1] + left[j - r];
            double tmp = den != 0.0 ? N[r] / den : 0.0;
            N[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        N[j] = saved;
    }
    for (int j = 0; j <= degree_; ++j) row(span - degree_ + j) = N[j];
}

Eigen::MatrixXd BSplineBasis::evaluate(std::span<const double> x) const {
    Eigen::MatrixXd B(x.size(), n_basis_);
    for (size_t i = 0; i < x.size(); ++i) evaluate_row(x[i], B.row(i));
    return B;
}

Eigen::MatrixXd BSplineBasis::penalty(int order) const {
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(n_basis_, n_basis_);
    for (int k = 0; k < order; ++k) {
        int rows = static_cast<int>(D.rows());
        Eigen::MatrixXd Dk = Eigen::MatrixXd::Zero(rows - 1, rows);
        for (int i = 0; i < rows - 1; ++i) {
            Dk(i, i) = -1.0;
            Dk(i, i + 1) = 1.0;
        }
        D = Dk * D;
    }
    return D.transpose() * D;
}

}  // namespace cohortforge
