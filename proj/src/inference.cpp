#include "cohortforge/inference.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "cohortforge/bspline.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/rng.hpp"

namespace cohortforge::infer {

TestResult anova_oneway(const std::vector<std::vector<double>>& groups) {
    size_t k = groups.size();
    if (k < 2) fail("SINGLE_GROUP", "one-way ANOVA needs at least 2 groups");
    size_t n_total = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) fail("GROUP_TOO_SMALL", "every group needs at least 2 values");
        n_total += g.size();
    }

    double grand = 0.0;
    for (const auto& g : groups) grand = std::accumulate(g.begin(), g.end(), grand);
    grand /= static_cast<double>(n_total);

    double ssb = 0.0, ssw = 0.0;
    for (const auto& g : groups) {
        double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
        ssb += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
        for (double v : g) ssw += (v - mean) * (v - mean);
    }
    if (!(ssw > 0.0))
        fail("ZERO_VARIANCE", "zero within-group variance across all groups");

    TestResult r;
    r.df = static_cast<double>(k - 1);
    r.df2 = static_cast<double>(n_total - k);
    r.statistic = (ssb / r.df) / (ssw / r.df2);
    boost::math::fisher_f dist(r.df, r.df2);
    r.p = boost::math::cdf(boost::math::complement(dist, r.statistic));
    return r;
}

TestResult lrt(const gamlss::GamlssModel& full, const gamlss::GamlssModel& null_model) {
    if (full.n_rows != null_model.n_rows)
        fail("NOT_NESTED", "models were fit on different row counts");
    double stat = null_model.deviance - full.deviance;
    if (stat < -1e-6)
        fail("NOT_NESTED", "full model has larger deviance than the null by " +
                               std::to_string(-stat));
    double df = full.edf_total - null_model.edf_total;

    TestResult r;
    if (std::abs(stat) < 1e-9 && std::abs(df) < 1e-9) {
        // Identical models: no evidence either way.
        r.statistic = 0.0;
        r.df = 0.0;
        r.p = 1.0;
        return r;
    }
    if (!(df > 0.0))
        fail("NOT_NESTED", "full model has no more effective df than the null");
    r.statistic = std::max(stat, 0.0);
    r.df = df;
    try {
        boost::math::chi_squared dist(df);
        r.p = r.statistic > 0.0
                  ? boost::math::cdf(boost::math::complement(dist, r.statistic))
                  : 1.0;
    } catch (const std::exception& e) {
        fail("NUMERIC", std::string("chi-square tail evaluation failed: ") + e.what(),
             ErrorKind::runtime);
    }
    return r;
}

ByFdrResult by_fdr(const std::vector<double>& pvals, double rate) {
    for (double p : pvals)
        if (!(p >= 0.0) || !(p <= 1.0))
            fail("BAD_PVALUE", "p-values must lie in [0, 1]");
    const size_t m = pvals.size();
    ByFdrResult out;
    out.rate = rate;
    out.q.resize(m);
    out.rejected.resize(m);
    if (m == 0) return out;

    double cm = 0.0;
    for (size_t i = 1; i <= m; ++i) cm += 1.0 / static_cast<double>(i);

    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return pvals[a] < pvals[b]; });

    // Step-up: q_(i) = min_{j >= i} p_(j) * m * c(m) / j, capped at 1.
    std::vector<double> q_sorted(m);
    double running = std::numeric_limits<double>::infinity();
    for (size_t i = m; i-- > 0;) {
        double raw = pvals[order[i]] * static_cast<double>(m) * cm /
                     static_cast<double>(i + 1);
        running = std::min(running, raw);
        q_sorted[i] = std::min(running, 1.0);
    }
    for (size_t i = 0; i < m; ++i) {
        out.q[order[i]] = q_sorted[i];
        out.rejected[order[i]] = q_sorted[i] <= rate;
    }
    return out;
}

std::vector<double> regress_out(const std::vector<double>& y,
                                const std::vector<std::vector<double>>& covariates) {
    const size_t n = y.size();
    for (const auto& c : covariates)
        if (c.size() != n) fail("DIMS_MISMATCH", "covariate length does not match y");
    Eigen::MatrixXd X(n, covariates.size() + 1);
    X.col(0).setOnes();
    for (size_t c = 0; c < covariates.size(); ++c)
        for (size_t i = 0; i < n; ++i) X(i, c + 1) = covariates[c][i];
    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    Eigen::VectorXd beta = X.colPivHouseholderQr().solve(yv);
    Eigen::VectorXd r = yv - X * beta;
    return std::vector<double>(r.data(), r.data() + n);
}

namespace {

struct Stratum {
    std::vector<std::string> subjects;  // sorted for determinism
};

void run_chunk(int lo, int hi, const std::vector<BootstrapRow>& rows,
               const std::map<std::pair<std::string, int>, Stratum>& strata,
               const std::map<std::string, std::vector<size_t>>& rows_of_subject,
               const gamlss::ModelSpec& spec, const std::vector<double>& ages, int sex,
               int group, std::uint64_t seed,
               std::vector<std::vector<double>>& curves, std::vector<char>& failed) {
    for (int r = lo; r < hi; ++r) {
        Rng rng(seed, static_cast<std::uint64_t>(r) + 1);
        std::vector<gamlss::FitRow> sample;
        sample.reserve(rows.size());
        for (const auto& [key, stratum] : strata) {
            size_t n_subj = stratum.subjects.size();
            for (size_t s = 0; s < n_subj; ++s) {
                const std::string& subject = stratum.subjects[rng.below(n_subj)];
                for (size_t idx : rows_of_subject.at(subject))
                    sample.push_back(rows[idx].row);
            }
        }
        try {
            gamlss::GamlssModel model = gamlss::fit(sample, spec);
            std::vector<double>& curve = curves[r];
            curve.reserve(ages.size());
            for (double age : ages) {
                gamlss::GGParams params = model.predict_params(age, sex, group);
                curve.push_back(gamlss::gg_quantile(0.5, params));
            }
        } catch (const std::exception&) {
            // Non-converged or numerically degenerate refit: dropped and
            // counted against the failure ceiling.
            curves[r].clear();
            failed[r] = 1;
        }
    }
}

}  // namespace

BootstrapBands bootstrap_bands(const std::vector<BootstrapRow>& rows,
                               const gamlss::ModelSpec& spec, int B,
                               const std::vector<double>& ages, int sex, int group,
                               std::uint64_t seed, int threads) {
    if (B < 1) fail("BAD_B", "bootstrap needs B >= 1");
    if (rows.empty()) fail("NO_ROWS", "no rows to resample");

    // Strata: study x group; all sessions of a subject stay together.
    std::map<std::pair<std::string, int>, std::set<std::string>> strata_sets;
    std::map<std::string, std::vector<size_t>> rows_of_subject;
    for (size_t i = 0; i < rows.size(); ++i) {
        strata_sets[{rows[i].study_id, rows[i].row.group}].insert(rows[i].subject_id);
        rows_of_subject[rows[i].subject_id].push_back(i);
    }
    std::map<std::pair<std::string, int>, Stratum> strata;
    for (const auto& [key, subjects] : strata_sets)
        strata[key].subjects.assign(subjects.begin(), subjects.end());

    // Point estimate from the full data.
    std::vector<gamlss::FitRow> all_rows;
    all_rows.reserve(rows.size());
    for (const auto& r : rows) all_rows.push_back(r.row);
    gamlss::GamlssModel full = gamlss::fit(all_rows, spec);

    BootstrapBands out;
    out.ages = ages;
    for (double age : ages) {
        gamlss::GGParams params = full.predict_params(age, sex, group);
        out.point.push_back(gamlss::gg_quantile(0.5, params));
    }

    std::vector<std::vector<double>> curves(B);
    std::vector<char> failed(B, 0);
    threads = std::max(threads, 1);
    if (threads == 1 || B == 1) {
        run_chunk(0, B, rows, strata, rows_of_subject, spec, ages, sex, group, seed,
                  curves, failed);
    } else {
        int chunk = (B + threads - 1) / threads;
        std::vector<std::future<void>> futures;
        for (int t = 0; t < threads; ++t) {
            int lo = t * chunk;
            int hi = std::min(B, lo + chunk);
            if (lo >= hi) break;
            futures.push_back(std::async(std::launch::async, [&, lo, hi] {
                run_chunk(lo, hi, rows, strata, rows_of_subject, spec, ages, sex, group,
                          seed, curves, failed);
            }));
        }
        for (auto& f : futures) f.get();
    }

    size_t n_failed = 0;
    std::vector<const std::vector<double>*> ok;
    for (int r = 0; r < B; ++r) {
        if (failed[r])
            ++n_failed;
        else
            ok.push_back(&curves[r]);
    }
    out.n_failed = n_failed;
    out.n_replicates_used = ok.size();
    if (n_failed * 10 > static_cast<size_t>(B))
        fail("EXCESS_FAILURES", std::to_string(n_failed) + " of " + std::to_string(B) +
                                    " bootstrap replicates failed to converge",
             ErrorKind::runtime);

    for (size_t a = 0; a < ages.size(); ++a) {
        std::vector<double> at_age;
        at_age.reserve(ok.size());
        for (const auto* curve : ok) at_age.push_back((*curve)[a]);
        out.lower.push_back(quantile(at_age, 0.025));
        out.upper.push_back(quantile(at_age, 0.975));
    }
    return out;
}

}  // namespace cohortforge::infer
