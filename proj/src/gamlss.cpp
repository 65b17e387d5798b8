#include "cohortforge/gamlss.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "cohortforge/error.hpp"
#include "cohortforge/log.hpp"

namespace cohortforge::gamlss {

using nlohmann::json;

namespace {

constexpr double kEtaMuClamp = 300.0;
constexpr double kEtaSigmaClamp = 15.0;
constexpr double kNuClamp = 8.0;
constexpr double kNuMin = 1e-3;
constexpr double kScoreCap = 1e8;
constexpr double kWeightFloor = 1e-8;

double clamp_mu_eta(double eta) { return std::clamp(eta, -kEtaMuClamp, kEtaMuClamp); }
double clamp_sigma_eta(double eta) { return std::clamp(eta, -kEtaSigmaClamp, kEtaSigmaClamp); }

double clamp_nu(double eta) {
    double nu = std::clamp(eta, -kNuClamp, kNuClamp);
    if (std::abs(nu) < kNuMin) nu = nu < 0.0 ? -kNuMin : kNuMin;
    return nu;
}

}  // namespace

double gg_logpdf(double y, const GGParams& p) {
    if (!(y > 0.0)) fail("NONPOSITIVE_Y", "generalized Gamma density needs y > 0");
    if (!std::isfinite(p.mu) || !std::isfinite(p.sigma) || !std::isfinite(p.nu) ||
        !(p.mu > 0.0) || !(p.sigma > 0.0) || p.nu == 0.0)
        fail("BAD_PARAMS", "generalized Gamma needs mu > 0, sigma > 0, nu != 0");
    double theta = p.theta();
    double u = std::log(y) - std::log(p.mu);
    double nu_u = p.nu * u;
    double z = std::exp(nu_u);
    return std::log(std::abs(p.nu)) + theta * std::log(theta) + theta * nu_u - theta * z -
           std::lgamma(theta) - std::log(y);
}

GGGradient gg_gradient(double y, const GGParams& p) {
    double theta = p.theta();
    double u = std::log(y) - std::log(p.mu);
    double z = std::exp(p.nu * u);
    double dl_dtheta = std::log(theta) + 1.0 + p.nu * u - z - boost::math::digamma(theta);
    GGGradient g;
    g.d_mu = theta * p.nu * (z - 1.0) / p.mu;
    g.d_sigma = -2.0 * theta / p.sigma * dl_dtheta;
    g.d_nu = 1.0 / p.nu - 2.0 * theta / p.nu * dl_dtheta + theta * u * (1.0 - z);
    return g;
}

double gg_quantile(double p, const GGParams& params) {
    if (!(p > 0.0) || !(p < 1.0))
        fail("PERCENTILE_RANGE", "quantile probability must be inside (0, 1)");
    double theta = params.theta();
    if (!(theta > 1e-8) || !(theta < 1e10))
        fail("BAD_PARAMS", "sigma^2 nu^2 outside the numerically invertible range",
             ErrorKind::runtime);
    double tail = params.nu > 0.0 ? p : 1.0 - p;
    double g = boost::math::gamma_p_inv(theta, tail);
    return params.mu * std::pow(g / theta, 1.0 / params.nu);
}

ModelSpec ModelSpec::defaults() {
    ModelSpec s;
    s.mu.spline_age = true;
    s.mu.sex = true;
    s.mu.group = true;
    s.mu.select_lambda = true;
    s.sigma.spline_age = true;
    s.sigma.select_lambda = true;
    // nu: intercept only
    return s;
}

ModelSpec ModelSpec::without_group() const {
    ModelSpec s = *this;
    s.mu.group = false;
    s.sigma.group = false;
    s.nu.group = false;
    return s;
}

double ParamFit::predict_eta(double age, int sex, int group) const {
    if (fixed) return *fixed;
    int c = 0;
    double eta = 0.0;
    if (has_spline) {
        BSplineBasis basis = BSplineBasis::from_knots(knots, degree, age_min, age_max);
        Eigen::RowVectorXd row(basis.n_basis());
        basis.evaluate_row(age, row);
        eta += row.dot(coef.head(basis.n_basis()));
        c = basis.n_basis();
    } else if (has_intercept) {
        eta += coef(c++);
    }
    if (has_sex) eta += coef(c++) * sex;
    if (has_group) eta += coef(c++) * group;
    return eta;
}

GGParams GamlssModel::predict_params(double age, int sex, int group) const {
    GGParams p;
    p.mu = std::exp(clamp_mu_eta(mu.predict_eta(age, sex, group)));
    p.sigma = std::exp(clamp_sigma_eta(sigma.predict_eta(age, sex, group)));
    p.nu = clamp_nu(nu.predict_eta(age, sex, group));
    return p;
}

namespace {

enum ParamIndex { kMu = 0, kSigma = 1, kNu = 2 };

struct Design {
    bool present = false;  // false when the parameter is fixed
    Eigen::MatrixXd X;
    Eigen::MatrixXd P;  // lambda-free penalty, zero outside the spline block
    int spline_cols = 0;
    int unpenalized = 0;
    bool has_spline = false, has_intercept = false, has_sex = false, has_group = false;
    std::vector<double> knots;
    int degree = 3;
    double age_min = 0.0, age_max = 0.0;
};

Design build_design(const std::vector<FitRow>& rows, const TermSpec& term, int n_knots) {
    Design d;
    if (term.fixed) return d;
    d.present = true;

    std::vector<double> ages(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) ages[i] = rows[i].age;

    int cols = 0;
    if (term.spline_age) {
        BSplineBasis basis = BSplineBasis::from_data(ages, n_knots);
        d.has_spline = true;
        d.spline_cols = basis.n_basis();
        d.knots = basis.knots();
        d.degree = basis.degree();
        d.age_min = basis.xmin();
        d.age_max = basis.xmax();
        cols += d.spline_cols;
    } else {
        d.has_intercept = true;
        cols += 1;
    }
    if (term.sex) {
        d.has_sex = true;
        cols += 1;
    }
    if (term.group) {
        d.has_group = true;
        cols += 1;
    }
    d.unpenalized = cols - d.spline_cols;

    d.X.resize(rows.size(), cols);
    int c = 0;
    if (d.has_spline) {
        BSplineBasis basis =
            BSplineBasis::from_knots(d.knots, d.degree, d.age_min, d.age_max);
        for (size_t i = 0; i < rows.size(); ++i)
            basis.evaluate_row(rows[i].age, d.X.block(i, 0, 1, d.spline_cols).row(0));
        c = d.spline_cols;
    } else {
        d.X.col(c++).setOnes();
    }
    if (d.has_sex) {
        for (size_t i = 0; i < rows.size(); ++i) d.X(i, c) = rows[i].sex;
        ++c;
    }
    if (d.has_group) {
        for (size_t i = 0; i < rows.size(); ++i) d.X(i, c) = rows[i].group;
        ++c;
    }

    d.P = Eigen::MatrixXd::Zero(cols, cols);
    if (d.has_spline) {
        BSplineBasis basis =
            BSplineBasis::from_knots(d.knots, d.degree, d.age_min, d.age_max);
        d.P.topLeftCorner(d.spline_cols, d.spline_cols) = basis.penalty(2);
    }
    return d;
}

class Fitter {
public:
    Fitter(std::vector<FitRow> rows, const ModelSpec& spec, size_t dropped,
           const GamlssModel* warm = nullptr)
        : rows_(std::move(rows)), spec_(spec), dropped_(dropped), warm_(warm) {
        n_ = rows_.size();
        // Internal response scaling keeps the PWLS well conditioned for
        // metrics spanning many orders of magnitude (MD vs TICV).
        double mean = 0.0;
        for (const auto& r : rows_) mean += r.y;
        mean /= static_cast<double>(n_);
        y_scale_ = mean;
        for (auto& r : rows_) r.y /= y_scale_;
        dev_offset_ = 2.0 * static_cast<double>(n_) * std::log(y_scale_);

        terms_[kMu] = &spec_.mu;
        terms_[kSigma] = &spec_.sigma;
        terms_[kNu] = &spec_.nu;
        for (int p = 0; p < 3; ++p)
            designs_[p] = build_design(rows_, *terms_[p], spec_.n_interior_knots);
    }

    GamlssModel run() {
        initialize();
        double dev = deviance();
        trace_.push_back(dev);
        int outer = 0;
        bool converged = false;
        for (; outer < spec_.max_outer; ++outer) {
            double dev_before = dev;
            for (int p = 0; p < 3; ++p)
                if (designs_[p].present) dev = update_parameter(p, dev);
            trace_.push_back(dev);
            if (std::abs(dev_before - dev) < spec_.dev_tol) {
                converged = true;
                ++outer;
                break;
            }
        }
        return package(dev, outer, converged);
    }

private:
    void initialize() {
        double mean = 1.0;  // after scaling
        double ss = 0.0;
        for (const auto& r : rows_) ss += (r.y - mean) * (r.y - mean);
        double sd = std::sqrt(ss / static_cast<double>(n_ - 1));
        double sigma0 = std::clamp(sd / mean, 1e-4, 1e4);

        for (int p = 0; p < 3; ++p) {
            const Design& d = designs_[p];
            if (!d.present) {
                double v = *terms_[p]->fixed;
                if (p == kMu) v /= y_scale_;  // fixed mu is in response units
                values_[p] = Eigen::VectorXd::Constant(n_, v);
                continue;
            }
            coef_[p] = Eigen::VectorXd::Zero(d.X.cols());
            double eta0 = 0.0;
            if (p == kMu) eta0 = std::log(mean);
            if (p == kSigma) eta0 = std::log(sigma0);
            if (p == kNu) eta0 = 1.0;
            // The spline basis is a partition of unity, so a constant
            // coefficient vector realizes a flat start.
            int flat_cols = d.has_spline ? d.spline_cols : 1;
            coef_[p].head(flat_cols).setConstant(eta0);
            eta_[p] = d.X * coef_[p];
            w_prev_[p] = Eigen::VectorXd::Ones(n_);
            refresh_values(p);
            overlay_warm_start(p);
        }
    }

    // Seeds matching design columns from a previously fitted model; columns
    // absent there (e.g. a group term the null model lacks) start at zero.
    void overlay_warm_start(int p) {
        if (!warm_) return;
        const ParamFit* wf = p == kMu ? &warm_->mu : p == kSigma ? &warm_->sigma : &warm_->nu;
        const Design& d = designs_[p];
        if (wf->fixed || !d.present) return;
        if (wf->has_spline != d.has_spline) return;
        if (d.has_spline && wf->knots != d.knots) return;
        int flat = d.has_spline ? d.spline_cols : 1;
        int wflat = wf->has_spline
                        ? static_cast<int>(wf->knots.size()) - wf->degree - 1
                        : (wf->has_intercept ? 1 : 0);
        if (flat != wflat || wf->coef.size() < flat) return;

        Eigen::VectorXd c = Eigen::VectorXd::Zero(d.X.cols());
        c.head(flat) = wf->coef.head(flat);
        if (p == kMu) c.head(flat).array() -= std::log(y_scale_);
        int src = flat;
        int dst = flat;
        if (d.has_sex) c(dst++) = wf->has_sex ? wf->coef(src) : 0.0;
        if (wf->has_sex) ++src;
        if (d.has_group) c(dst++) = wf->has_group ? wf->coef(src) : 0.0;
        coef_[p] = c;
        eta_[p] = d.X * coef_[p];
        refresh_values(p);
    }

    void refresh_values(int p) {
        if (!designs_[p].present) return;
        values_[p].resize(n_);
        for (size_t i = 0; i < n_; ++i) {
            double eta = eta_[p](i);
            if (p == kMu) values_[p](i) = std::exp(clamp_mu_eta(eta));
            if (p == kSigma) values_[p](i) = std::exp(clamp_sigma_eta(eta));
            if (p == kNu) values_[p](i) = clamp_nu(eta);
        }
    }

    double deviance() const {
        double ll = 0.0;
        for (size_t i = 0; i < n_; ++i) {
            GGParams params{values_[kMu](i), values_[kSigma](i), values_[kNu](i)};
            ll += gg_logpdf(rows_[i].y, params);
        }
        return -2.0 * ll;
    }

    // Link-adjusted score dl/deta for one observation.
    double score(int p, size_t i) const {
        GGParams params{values_[kMu](i), values_[kSigma](i), values_[kNu](i)};
        GGGradient g = gg_gradient(rows_[i].y, params);
        double u = 0.0;
        if (p == kMu) u = g.d_mu * params.mu;        // log link
        if (p == kSigma) u = g.d_sigma * params.sigma;
        if (p == kNu) u = g.d_nu;                    // identity link
        if (!std::isfinite(u)) u = 0.0;
        return std::clamp(u, -kScoreCap, kScoreCap);
    }

    double update_parameter(int p, double dev) {
        const Design& d = designs_[p];
        Eigen::VectorXd u(n_), w(n_);
        for (size_t i = 0; i < n_; ++i) u(i) = score(p, i);
        // Quasi-Fisher weights: squared score averaged with the previous
        // iterate's weights.
        for (size_t i = 0; i < n_; ++i)
            w(i) = std::max(0.5 * (u(i) * u(i) + w_prev_[p](i)), kWeightFloor);

        double lambda = terms_[p]->lambda;
        Eigen::MatrixXd A = d.X.transpose() * w.asDiagonal() * d.X + lambda * d.P;
        // Working response e = eta + u/w enters only as X'W e = X'W eta + X'u.
        Eigen::VectorXd rhs = d.X.transpose() * (w.asDiagonal() * eta_[p]) +
                              d.X.transpose() * u;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        if (ldlt.info() != Eigen::Success)
            fail("DEGENERATE_DESIGN", "singular penalized system", ErrorKind::runtime);
        Eigen::VectorXd target = ldlt.solve(rhs);
        if (!target.allFinite()) {
            w_prev_[p] = w;
            return dev;
        }

        // Step halving keeps the global deviance non-increasing.
        Eigen::VectorXd old_coef = coef_[p];
        Eigen::VectorXd old_eta = eta_[p];
        Eigen::VectorXd old_values = values_[p];
        double step = 1.0;
        for (int h = 0; h < 40; ++h) {
            coef_[p] = old_coef + step * (target - old_coef);
            eta_[p] = d.X * coef_[p];
            refresh_values(p);
            double dev_try = deviance();
            if (std::isfinite(dev_try) && dev_try <= dev + 1e-9) {
                w_prev_[p] = w;
                last_w_[p] = w;
                return dev_try;
            }
            step *= 0.5;
        }
        coef_[p] = old_coef;
        eta_[p] = old_eta;
        values_[p] = old_values;
        w_prev_[p] = w;
        last_w_[p] = w;
        return dev;
    }

    double param_edf(int p) {
        const Design& d = designs_[p];
        if (!d.present) return 0.0;
        Eigen::VectorXd w =
            last_w_[p].size() ? last_w_[p] : Eigen::VectorXd::Ones(n_);
        Eigen::MatrixXd XtWX = d.X.transpose() * w.asDiagonal() * d.X;
        Eigen::MatrixXd A = XtWX + terms_[p]->lambda * d.P;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        return ldlt.solve(XtWX).trace();
    }

    GamlssModel package(double dev, int outer, bool converged) {
        GamlssModel m;
        ParamFit* fits[3] = {&m.mu, &m.sigma, &m.nu};
        for (int p = 0; p < 3; ++p) {
            ParamFit& f = *fits[p];
            const Design& d = designs_[p];
            f.link = p == kNu ? Link::identity : Link::log_link;
            if (!d.present) {
                f.fixed = *terms_[p]->fixed;
                continue;
            }
            f.has_spline = d.has_spline;
            f.has_intercept = d.has_intercept;
            f.has_sex = d.has_sex;
            f.has_group = d.has_group;
            f.knots = d.knots;
            f.degree = d.degree;
            f.age_min = d.age_min;
            f.age_max = d.age_max;
            f.coef = coef_[p];
            f.lambda = terms_[p]->lambda;
            f.edf = param_edf(p);
            f.smooth_edf = d.has_spline ? std::max(f.edf - d.unpenalized, 0.0) : 0.0;
            m.edf_total += f.edf;
        }
        // Undo the internal response scaling: mu shifts by log(scale), which
        // the constant direction of the spline (or the intercept) absorbs.
        double shift = std::log(y_scale_);
        if (designs_[kMu].present) {
            int flat_cols = designs_[kMu].has_spline ? designs_[kMu].spline_cols : 1;
            m.mu.coef.head(flat_cols).array() += shift;
        }
        // A fixed mu was stored in original units and never scaled.
        m.deviance = dev + dev_offset_;
        m.converged = converged;
        m.outer_iterations = outer;
        m.n_rows = n_;
        m.n_dropped_nonpositive = dropped_;
        m.deviance_trace.reserve(trace_.size());
        for (double d : trace_) m.deviance_trace.push_back(d + dev_offset_);
        return m;
    }

    std::vector<FitRow> rows_;
    ModelSpec spec_;
    size_t dropped_ = 0;
    const GamlssModel* warm_ = nullptr;
    size_t n_ = 0;
    double y_scale_ = 1.0;
    double dev_offset_ = 0.0;
    const TermSpec* terms_[3] = {nullptr, nullptr, nullptr};
    Design designs_[3];
    Eigen::VectorXd coef_[3], eta_[3], values_[3], w_prev_[3], last_w_[3];
    std::vector<double> trace_;
};

GamlssModel fit_once(const std::vector<FitRow>& rows, const ModelSpec& spec,
                     size_t dropped, const GamlssModel* warm) {
    Fitter fitter(rows, spec, dropped, warm);
    return fitter.run();
}

}  // namespace

GamlssModel fit(const std::vector<FitRow>& rows_in, const ModelSpec& spec_in,
                const GamlssModel* warm_start) {
    std::vector<FitRow> rows;
    rows.reserve(rows_in.size());
    size_t dropped = 0;
    for (const auto& r : rows_in) {
        if (r.y > 0.0 && std::isfinite(r.y) && std::isfinite(r.age))
            rows.push_back(r);
        else
            ++dropped;
    }
    if (dropped > 0)
        logging::warn(dropped, " rows with nonpositive/nonfinite response dropped from fit");
    if (rows.size() < 20)
        fail("TOO_FEW_ROWS", "need at least 20 usable rows, got " +
                                 std::to_string(rows.size()));

    double mean = 0.0;
    for (const auto& r : rows) mean += r.y;
    mean /= static_cast<double>(rows.size());
    double ss = 0.0;
    for (const auto& r : rows) ss += (r.y - mean) * (r.y - mean);
    if (!(ss > 0.0)) fail("ZERO_VARIANCE", "response is constant");

    const TermSpec* terms[3] = {&spec_in.mu, &spec_in.sigma, &spec_in.nu};
    bool needs_sex = false, needs_group = false;
    for (const auto* t : terms) {
        if (t->fixed) continue;
        needs_sex |= t->sex;
        needs_group |= t->group;
    }
    if (needs_sex) {
        std::set<int> levels;
        for (const auto& r : rows) levels.insert(r.sex);
        if (levels.size() < 2)
            fail("DEGENERATE_DESIGN", "sex term requested but only one level present");
    }
    if (needs_group) {
        std::set<int> levels;
        for (const auto& r : rows) levels.insert(r.group);
        if (levels.size() < 2)
            fail("DEGENERATE_DESIGN", "group term requested but only one level present");
    }

    ModelSpec spec = spec_in;
    if (spec.lambda_grid.empty())
        for (int k = -3; k <= 6; ++k) spec.lambda_grid.push_back(std::pow(10.0, k));

    // Smoothing selection: one coordinate pass in mu -> sigma -> nu order,
    // minimizing AIC = deviance + 2 edf; ties keep the smaller lambda.
    TermSpec* mutable_terms[3] = {&spec.mu, &spec.sigma, &spec.nu};
    for (auto* term : mutable_terms) {
        if (!term->spline_age || !term->select_lambda || term->fixed) continue;
        double best_aic = std::numeric_limits<double>::infinity();
        double best_lambda = term->lambda;
        for (double lambda : spec.lambda_grid) {
            term->lambda = lambda;
            ModelSpec candidate = spec;
            candidate.mu.select_lambda = false;
            candidate.sigma.select_lambda = false;
            candidate.nu.select_lambda = false;
            double aic = std::numeric_limits<double>::infinity();
            try {
                GamlssModel m = fit_once(rows, candidate, dropped, warm_start);
                if (m.converged) aic = m.deviance + 2.0 * m.edf_total;
            } catch (const Error&) {
                // unusable lambda: leave aic infinite
            }
            if (aic < best_aic) {
                best_aic = aic;
                best_lambda = lambda;
            }
        }
        if (!std::isfinite(best_aic))
            fail("NO_CONVERGENCE", "no smoothing value produced a converged fit",
                 ErrorKind::runtime);
        term->lambda = best_lambda;
        term->select_lambda = false;
    }

    GamlssModel model = fit_once(rows, spec, dropped, warm_start);
    if (!model.converged)
        fail("NO_CONVERGENCE", "outer iteration cap reached", ErrorKind::runtime);
    return model;
}

NestedFits fit_nested(const std::vector<FitRow>& rows, const ModelSpec& spec) {
    GamlssModel full = fit(rows, spec);

    ModelSpec fixed = spec;
    if (!fixed.mu.fixed) {
        fixed.mu.lambda = full.mu.lambda;
        fixed.mu.select_lambda = false;
    }
    if (!fixed.sigma.fixed) {
        fixed.sigma.lambda = full.sigma.lambda;
        fixed.sigma.select_lambda = false;
    }
    if (!fixed.nu.fixed) {
        fixed.nu.lambda = full.nu.lambda;
        fixed.nu.select_lambda = false;
    }
    ModelSpec null_spec = fixed.without_group();

    GamlssModel null_model = fit(rows, null_spec);
    try {
        GamlssModel null_warm = fit(rows, null_spec, &full);
        if (null_warm.deviance < null_model.deviance) null_model = std::move(null_warm);
    } catch (const Error&) {
        // keep the cold null
    }
    try {
        GamlssModel full_warm = fit(rows, fixed, &null_model);
        if (full_warm.deviance < full.deviance) full = std::move(full_warm);
    } catch (const Error&) {
        // keep the cold full
    }
    return {std::move(full), std::move(null_model)};
}

CentileCurves predict_centiles(const GamlssModel& model, const std::vector<double>& ages,
                               int sex, int group,
                               const std::vector<double>& percentiles) {
    for (double p : percentiles)
        if (!(p > 0.0) || !(p < 100.0))
            fail("PERCENTILE_RANGE", "percentiles must lie strictly inside (0, 100)");
    CentileCurves out;
    out.ages = ages;
    out.percentiles = percentiles;
    double lo = model.mu.has_spline ? model.mu.age_min : -std::numeric_limits<double>::infinity();
    double hi = model.mu.has_spline ? model.mu.age_max : std::numeric_limits<double>::infinity();
    for (double age : ages) {
        GGParams params = model.predict_params(age, sex, group);
        std::vector<double> vals;
        vals.reserve(percentiles.size());
        for (double p : percentiles) vals.push_back(gg_quantile(p / 100.0, params));
        out.values.push_back(std::move(vals));
        out.extrapolated.push_back(age < lo || age > hi);
    }
    return out;
}

namespace {

json param_to_json(const ParamFit& f) {
    json j;
    j["link"] = f.link == Link::log_link ? "log" : "identity";
    if (f.fixed) {
        j["fixed"] = *f.fixed;
        return j;
    }
    j["has_spline"] = f.has_spline;
    j["has_intercept"] = f.has_intercept;
    j["has_sex"] = f.has_sex;
    j["has_group"] = f.has_group;
    if (f.has_spline) {
        j["knots"] = f.knots;
        j["degree"] = f.degree;
        j["age_min"] = f.age_min;
        j["age_max"] = f.age_max;
    }
    std::vector<double> coef(f.coef.data(), f.coef.data() + f.coef.size());
    j["coef"] = coef;
    j["lambda"] = f.lambda;
    j["edf"] = f.edf;
    j["smooth_edf"] = f.smooth_edf;
    return j;
}

ParamFit param_from_json(const json& j, Link link) {
    ParamFit f;
    f.link = link;
    if (j.contains("fixed")) {
        f.fixed = j["fixed"].get<double>();
        return f;
    }
    f.has_spline = j.at("has_spline").get<bool>();
    f.has_intercept = j.at("has_intercept").get<bool>();
    f.has_sex = j.at("has_sex").get<bool>();
    f.has_group = j.at("has_group").get<bool>();
    if (f.has_spline) {
        f.knots = j.at("knots").get<std::vector<double>>();
        f.degree = j.at("degree").get<int>();
        f.age_min = j.at("age_min").get<double>();
        f.age_max = j.at("age_max").get<double>();
    }
    auto coef = j.at("coef").get<std::vector<double>>();
    f.coef = Eigen::Map<Eigen::VectorXd>(coef.data(), coef.size());
    f.lambda = j.at("lambda").get<double>();
    f.edf = j.at("edf").get<double>();
    f.smooth_edf = j.at("smooth_edf").get<double>();
    return f;
}

}  // namespace

std::string to_json(const GamlssModel& model) {
    json j;
    j["mu"] = param_to_json(model.mu);
    j["sigma"] = param_to_json(model.sigma);
    j["nu"] = param_to_json(model.nu);
    j["deviance"] = model.deviance;
    j["edf_total"] = model.edf_total;
    j["converged"] = model.converged;
    j["outer_iterations"] = model.outer_iterations;
    j["n_rows"] = model.n_rows;
    j["n_dropped_nonpositive"] = model.n_dropped_nonpositive;
    return j.dump(2) + "\n";
}

GamlssModel from_json(const std::string& json_bytes) {
    json j = json::parse(json_bytes);
    GamlssModel m;
    m.mu = param_from_json(j.at("mu"), Link::log_link);
    m.sigma = param_from_json(j.at("sigma"), Link::log_link);
    m.nu = param_from_json(j.at("nu"), Link::identity);
    m.deviance = j.at("deviance").get<double>();
    m.edf_total = j.at("edf_total").get<double>();
    m.converged = j.at("converged").get<bool>();
    m.outer_iterations = j.at("outer_iterations").get<int>();
    m.n_rows = j.at("n_rows").get<size_t>();
    m.n_dropped_nonpositive = j.at("n_dropped_nonpositive").get<size_t>();
    return m;
}

}  // namespace cohortforge::gamlss
