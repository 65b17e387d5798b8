#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "cohortforge/bspline.hpp"

namespace cohortforge::gamlss {

// Generalized Gamma in the (mu, sigma, nu) parameterization with
// theta = 1/(sigma^2 nu^2): f(y) = |nu| theta^theta z^theta exp(-theta z) /
// (Gamma(theta) y), z = (y/mu)^nu. nu = 1 recovers the Gamma distribution
// with mean mu and shape 1/sigma^2.
struct GGParams {
    double mu = 1.0;     // > 0
    double sigma = 1.0;  // > 0
    double nu = 1.0;     // != 0

    double theta() const { return 1.0 / (sigma * sigma * nu * nu); }
};

double gg_logpdf(double y, const GGParams& p);

struct GGGradient {
    double d_mu = 0.0;
    double d_sigma = 0.0;
    double d_nu = 0.0;
};

// Analytic parameter-space gradient of gg_logpdf.
GGGradient gg_gradient(double y, const GGParams& p);

// Quantile by inverting the Gamma CDF of z = (y/mu)^nu; the tail reverses
// for nu < 0. p in (0, 1).
double gg_quantile(double p, const GGParams& params);

enum class Link { log_link, identity };

// Terms entering one distribution parameter's linear predictor. A spline
// absorbs the intercept (its basis spans constants); factor columns are 0/1
// indicators. `fixed` pins the parameter to a constant instead.
struct TermSpec {
    bool spline_age = false;
    bool sex = false;
    bool group = false;
    std::optional<double> fixed;
    double lambda = 1.0;        // smoothing for the spline block
    bool select_lambda = false; // AIC grid search over the spec's grid
};

struct ModelSpec {
    TermSpec mu;
    TermSpec sigma;
    TermSpec nu;
    int n_interior_knots = 10;
    std::vector<double> lambda_grid;  // default {1e-3 .. 1e6}
    double dev_tol = 1e-4;
    int max_outer = 200;

    // mu: spline(age) + sex + group; sigma: spline(age); nu: intercept.
    static ModelSpec defaults();
    ModelSpec without_group() const;
};

struct FitRow {
    double y = 0.0;
    double age = 0.0;
    int sex = 0;    // male = 1
    int group = 0;  // case = 1
};

// One distribution parameter's fitted predictor.
struct ParamFit {
    Link link = Link::log_link;
    std::optional<double> fixed;
    bool has_spline = false;
    bool has_intercept = false;
    bool has_sex = false;
    bool has_group = false;
    std::vector<double> knots;  // full clamped knot vector for the spline
    int degree = 3;
    double age_min = 0.0;
    double age_max = 0.0;
    Eigen::VectorXd coef;
    double lambda = 0.0;
    double edf = 0.0;        // trace of the hat matrix for this predictor
    double smooth_edf = 0.0; // edf - unpenalized column count

    double predict_eta(double age, int sex, int group) const;
};

struct GamlssModel {
    ParamFit mu;
    ParamFit sigma;
    ParamFit nu;
    double deviance = 0.0;  // -2 log-likelihood
    double edf_total = 0.0;
    bool converged = false;
    int outer_iterations = 0;
    size_t n_rows = 0;
    size_t n_dropped_nonpositive = 0;
    std::vector<double> deviance_trace;  // per outer iteration, not serialized

    GGParams predict_params(double age, int sex, int group) const;
};

// Quasi-Fisher RS fit: cycle mu -> sigma -> nu, each step solving a penalized
// weighted least squares with score-based weights, with step halving so the
// global deviance never increases. Smoothing parameters flagged for selection
// are chosen by an AIC grid search before the final fit. `warm_start`
// coefficients seed matching design columns when given.
GamlssModel fit(const std::vector<FitRow>& rows, const ModelSpec& spec,
                const GamlssModel* warm_start = nullptr);

struct NestedFits {
    GamlssModel full;
    GamlssModel null;
};

// Full model plus the group-free null at the full model's selected smoothing.
// Each side is refit warm-started from the other and the better optimum kept,
// which guarantees deviance_full <= deviance_null on the shared ridge.
NestedFits fit_nested(const std::vector<FitRow>& rows, const ModelSpec& spec);

struct CentileCurves {
    std::vector<double> ages;
    std::vector<double> percentiles;          // e.g. {5, 50, 95}
    std::vector<std::vector<double>> values;  // [age][percentile]
    std::vector<bool> extrapolated;           // age outside training support
};

CentileCurves predict_centiles(const GamlssModel& model, const std::vector<double>& ages,
                               int sex, int group,
                               const std::vector<double>& percentiles = {5, 50, 95});

std::string to_json(const GamlssModel& model);
GamlssModel from_json(const std::string& json_bytes);

}  // namespace cohortforge::gamlss
