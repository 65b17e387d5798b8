#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cohortforge/combat.hpp"
#include "cohortforge/dwi.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/gamlss.hpp"
#include "cohortforge/inference.hpp"
#include "cohortforge/qa.hpp"

namespace py = pybind11;
using namespace cohortforge;

namespace {

dwi::GradientScheme make_scheme(const std::vector<double>& bvals,
                                const std::vector<std::array<double, 3>>& bvecs) {
    if (bvals.size() != bvecs.size())
        fail("COUNT_MISMATCH", "bvals and bvecs must have the same length");
    dwi::GradientScheme s;
    s.bvals = bvals;
    s.bvecs = bvecs;
    return s;
}

// Rows x features table with NaN as the missing marker, shared by the combat
// and outlier bindings.
MetricTable make_table(const std::vector<std::vector<double>>& data,
                       const std::vector<std::string>& studies,
                       const std::vector<double>& age, const std::vector<int>& sex,
                       const std::vector<int>& group,
                       const std::vector<std::string>& features) {
    size_t n = data.size();
    if (studies.size() != n) fail("DIMS_MISMATCH", "studies must match row count");
    MetricTable t;
    t.metrics = features;
    for (size_t i = 0; i < n; ++i) {
        if (data[i].size() != features.size())
            fail("DIMS_MISMATCH", "every row must have one value per feature");
        SessionRecord r;
        r.subject_id = "row-" + std::to_string(i);
        r.session_id = "ses-1";
        r.study_id = studies[i];
        if (!age.empty()) r.age = age[i];
        if (!sex.empty()) r.sex = sex[i] ? Sex::male : Sex::female;
        if (!group.empty()) r.group = group[i] ? Group::case_ : Group::control;
        std::vector<std::optional<double>> cells;
        for (double v : data[i])
            cells.push_back(std::isnan(v) ? std::optional<double>() : std::optional<double>(v));
        t.rows.push_back(std::move(r));
        t.cells.push_back(std::move(cells));
    }
    return t;
}

std::vector<std::vector<double>> table_values(const MetricTable& t) {
    std::vector<std::vector<double>> out;
    for (const auto& row : t.cells) {
        std::vector<double> r;
        for (const auto& c : row)
            r.push_back(c ? *c : std::numeric_limits<double>::quiet_NaN());
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<gamlss::FitRow> make_rows(const std::vector<double>& y,
                                      const std::vector<double>& age,
                                      const std::vector<int>& sex,
                                      const std::vector<int>& group) {
    if (age.size() != y.size()) fail("DIMS_MISMATCH", "age must match y");
    std::vector<gamlss::FitRow> rows;
    for (size_t i = 0; i < y.size(); ++i) {
        gamlss::FitRow r;
        r.y = y[i];
        r.age = age[i];
        r.sex = sex.empty() ? 0 : sex[i];
        r.group = group.empty() ? 0 : group[i];
        rows.push_back(r);
    }
    return rows;
}

gamlss::ModelSpec make_spec(int knots, bool sex_term, bool group_term,
                            bool sigma_spline, std::optional<double> fixed_nu) {
    gamlss::ModelSpec spec;
    spec.mu.spline_age = true;
    spec.mu.sex = sex_term;
    spec.mu.group = group_term;
    spec.mu.select_lambda = true;
    spec.sigma.spline_age = sigma_spline;
    spec.sigma.select_lambda = sigma_spline;
    spec.nu.fixed = fixed_nu;
    spec.n_interior_knots = knots;
    return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "cohortforge core: tensor metrics, ComBat harmonization, GAMLSS "
              "normative curves, and the testing suite";

    py::register_exception<Error>(m, "CohortForgeError");

    // Diffusion tensor metrics.
    m.def("fa", &dwi::fa, py::arg("l1"), py::arg("l2"), py::arg("l3"),
          "Fractional anisotropy from tensor eigenvalues");
    m.def("md", &dwi::md, py::arg("l1"), py::arg("l2"), py::arg("l3"),
          "Mean diffusivity from tensor eigenvalues");
    m.def(
        "fit_tensor",
        [](const std::vector<double>& signals, const std::vector<double>& bvals,
           const std::vector<std::array<double, 3>>& bvecs, double b0_mean) {
            auto t = dwi::fit_tensor_wls(signals, make_scheme(bvals, bvecs), b0_mean);
            py::dict d;
            d["D"] = t.D;
            d["eigenvalues"] = t.eigenvalues;
            d["s0"] = t.s0;
            d["fa"] = dwi::fa(std::max(t.eigenvalues[0], 0.0), std::max(t.eigenvalues[1], 0.0),
                              std::max(t.eigenvalues[2], 0.0));
            d["md"] = dwi::md(t.eigenvalues[0], t.eigenvalues[1], t.eigenvalues[2]);
            d["clamped"] = t.any_clamped;
            return d;
        },
        py::arg("signals"), py::arg("bvals"), py::arg("bvecs"), py::arg("b0_mean") = 0.0,
        "Weighted least squares tensor fit; b0_mean <= 0 estimates ln S0");
    m.def(
        "group_shells",
        [](const std::vector<double>& bvals, double tol) {
            std::vector<std::pair<double, std::vector<int>>> out;
            for (const auto& s : dwi::group_shells(bvals, tol))
                out.emplace_back(s.b, s.volumes);
            return out;
        },
        py::arg("bvals"), py::arg("tol") = 50.0);
    m.def(
        "select_shell",
        [](const std::vector<double>& bvals, double tol, double target) {
            return dwi::select_shell(dwi::group_shells(bvals, tol), target).b;
        },
        py::arg("bvals"), py::arg("tol") = 50.0, py::arg("target") = 1000.0);
    m.def(
        "shell_sufficiency",
        [](const std::vector<double>& bvals, double lo, double hi, int min_count) {
            dwi::GradientScheme s;
            s.bvals = bvals;
            for (size_t i = 0; i < bvals.size(); ++i) s.bvecs.push_back({0, 0, 0});
            auto r = dwi::shell_sufficiency(s, lo, hi, min_count);
            return std::make_pair(r.sufficient, r.count);
        },
        py::arg("bvals"), py::arg("lo") = 500.0, py::arg("hi") = 1500.0,
        py::arg("min_count") = 12);

    // Generalized Gamma.
    m.def("gg_logpdf",
          [](double y, double mu, double sigma, double nu) {
              return gamlss::gg_logpdf(y, {mu, sigma, nu});
          },
          py::arg("y"), py::arg("mu"), py::arg("sigma"), py::arg("nu"));
    m.def("gg_quantile",
          [](double p, double mu, double sigma, double nu) {
              return gamlss::gg_quantile(p, {mu, sigma, nu});
          },
          py::arg("p"), py::arg("mu"), py::arg("sigma"), py::arg("nu"));

    // Hypothesis testing.
    m.def(
        "by_fdr",
        [](const std::vector<double>& pvals, double rate) {
            auto r = infer::by_fdr(pvals, rate);
            return std::make_pair(r.q, r.rejected);
        },
        py::arg("pvals"), py::arg("rate") = 0.05,
        "Benjamini-Yekutieli step-up; returns (q_values, rejected)");
    m.def(
        "anova_oneway",
        [](const std::vector<std::vector<double>>& groups) {
            auto r = infer::anova_oneway(groups);
            py::dict d;
            d["F"] = r.statistic;
            d["df1"] = r.df;
            d["df2"] = r.df2;
            d["p"] = r.p;
            return d;
        },
        py::arg("groups"));

    // ComBat harmonization on a rows x features matrix (NaN = missing).
    m.def(
        "combat_harmonize",
        [](const std::vector<std::vector<double>>& data,
           const std::vector<std::string>& studies, const std::vector<double>& age,
           const std::vector<int>& sex, const std::vector<int>& group,
           std::vector<std::string> features) {
            if (features.empty())
                for (size_t f = 0; data.size() && f < data[0].size(); ++f)
                    features.push_back("f" + std::to_string(f));
            MetricTable t = make_table(data, studies, age, sex, group, features);
            combat::CombatConfig cfg;
            cfg.use_age = !age.empty();
            cfg.use_sex = !sex.empty();
            cfg.use_group = !group.empty();
            auto model = combat::fit(t, features, cfg);
            auto out = combat::apply(model, t);
            return std::make_pair(table_values(out), combat::to_json(model));
        },
        py::arg("data"), py::arg("studies"), py::arg("age") = std::vector<double>{},
        py::arg("sex") = std::vector<int>{}, py::arg("group") = std::vector<int>{},
        py::arg("features") = std::vector<std::string>{},
        "Fit and apply study-as-batch harmonization; returns (harmonized, model_json)");

    // Per-study outlier rejection.
    m.def(
        "reject_outliers",
        [](const std::vector<std::vector<double>>& data,
           const std::vector<std::string>& studies, double k) {
            std::vector<std::string> features;
            for (size_t f = 0; data.size() && f < data[0].size(); ++f)
                features.push_back("f" + std::to_string(f));
            MetricTable t = make_table(data, studies, {}, {}, {}, features);
            auto [filtered, report] = qa::reject_outliers(t, k);
            return std::make_pair(table_values(filtered), report.rejected.size());
        },
        py::arg("data"), py::arg("studies"), py::arg("k") = 5.0,
        "Per-study k-SD cell rejection; returns (filtered_with_nan, n_rejected)");

    // B-spline design.
    m.def(
        "bspline_basis",
        [](const std::vector<double>& x, int n_interior_knots, int degree) {
            auto basis = BSplineBasis::from_data(x, n_interior_knots, degree);
            auto B = basis.evaluate(x);
            auto P = basis.penalty(2);
            std::vector<std::vector<double>> Bv(B.rows()), Pv(P.rows());
            for (Eigen::Index i = 0; i < B.rows(); ++i)
                for (Eigen::Index j = 0; j < B.cols(); ++j) Bv[i].push_back(B(i, j));
            for (Eigen::Index i = 0; i < P.rows(); ++i)
                for (Eigen::Index j = 0; j < P.cols(); ++j) Pv[i].push_back(P(i, j));
            return std::make_pair(Bv, Pv);
        },
        py::arg("x"), py::arg("n_interior_knots"), py::arg("degree") = 3,
        "Clamped B-spline design matrix and order-2 difference penalty");

    // GAMLSS fitting and centiles.
    m.def(
        "gamlss_fit",
        [](const std::vector<double>& y, const std::vector<double>& age,
           const std::vector<int>& sex, const std::vector<int>& group, int knots,
           bool sigma_spline, std::optional<double> fixed_nu) {
            auto rows = make_rows(y, age, sex, group);
            auto spec = make_spec(knots, !sex.empty(), !group.empty(), sigma_spline,
                                  fixed_nu);
            auto model = gamlss::fit(rows, spec);
            py::dict d;
            d["model_json"] = gamlss::to_json(model);
            d["deviance"] = model.deviance;
            d["edf_total"] = model.edf_total;
            d["converged"] = model.converged;
            return d;
        },
        py::arg("y"), py::arg("age"), py::arg("sex") = std::vector<int>{},
        py::arg("group") = std::vector<int>{}, py::arg("knots") = 10,
        py::arg("sigma_spline") = true, py::arg("fixed_nu") = std::nullopt);
    m.def(
        "gamlss_centiles",
        [](const std::string& model_json, const std::vector<double>& ages, int sex,
           int group, const std::vector<double>& percentiles) {
            auto model = gamlss::from_json(model_json);
            auto curves = gamlss::predict_centiles(model, ages, sex, group, percentiles);
            return curves.values;
        },
        py::arg("model_json"), py::arg("ages"), py::arg("sex") = 0, py::arg("group") = 0,
        py::arg("percentiles") = std::vector<double>{5, 50, 95});
    m.def(
        "lrt",
        [](const std::string& full_json, const std::string& null_json) {
            auto r = infer::lrt(gamlss::from_json(full_json), gamlss::from_json(null_json));
            py::dict d;
            d["statistic"] = r.statistic;
            d["df"] = r.df;
            d["p"] = r.p;
            return d;
        },
        py::arg("full_model_json"), py::arg("null_model_json"));

    m.attr("__version__") = "0.1.0";
}
