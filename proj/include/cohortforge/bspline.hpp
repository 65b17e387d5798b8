#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace cohortforge {

// Cubic B-spline basis with clamped boundary knots at min/max of the data and
// interior knots at quantiles. Rows of the basis matrix sum to 1 inside the
// boundaries. Out-of-range evaluation points are clamped to the boundary.
class BSplineBasis {
public:
    // Builds the basis from observed x values (quantile knots need data).
    static BSplineBasis from_data(std::span<const double> x, int n_interior_knots,
                                  int degree = 3);
    // Rebuilds a basis from serialized knots (prediction path).
    static BSplineBasis from_knots(std::vector<double> full_knots, int degree,
                                   double xmin, double xmax);

    int n_basis() const { return n_basis_; }
    int degree() const { return degree_; }
    double xmin() const { return xmin_; }
    double xmax() const { return xmax_; }
    const std::vector<double>& knots() const { return knots_; }

    // n x n_basis design matrix.
    Eigen::MatrixXd evaluate(std::span<const double> x) const;
    void evaluate_row(double x, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const;

    // D^T D with D the order-k difference matrix (default order 2).
    Eigen::MatrixXd penalty(int order = 2) const;

private:
    std::vector<double> knots_;  // full clamped knot vector
    int degree_ = 3;
    int n_basis_ = 0;
    double xmin_ = 0.0;
    double xmax_ = 0.0;
};

// Type-7 (linear interpolation) sample quantile of unsorted values.
double quantile(std::vector<double> values, double p);

}  // namespace cohortforge
