#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cohortforge/gamlss.hpp"

namespace cohortforge::infer {

struct TestResult {
    std::string metric;
    double statistic = 0.0;
    double df = 0.0;       // fractional for edf-based tests
    double df2 = 0.0;      // denominator df (ANOVA only)
    double p = 1.0;
    std::optional<double> q;  // BY-adjusted, set by by_fdr
    bool rejected = false;
};

// Classic one-way F test across groups of values.
TestResult anova_oneway(const std::vector<std::vector<double>>& groups);

// Likelihood ratio test of nested GAMLSS fits on the same rows; the statistic
// is the deviance difference referred to chi-square with the edf difference.
TestResult lrt(const gamlss::GamlssModel& full, const gamlss::GamlssModel& null_model);

struct ByFdrResult {
    std::vector<double> q;       // original order
    std::vector<bool> rejected;  // q <= rate
    double rate = 0.05;
};

// Benjamini-Yekutieli step-up with the harmonic factor c(m).
ByFdrResult by_fdr(const std::vector<double>& pvals, double rate = 0.05);

// Residuals of y after ordinary least squares on covariates (intercept
// added internally). Used by the pre/post harmonization study ANOVA.
std::vector<double> regress_out(const std::vector<double>& y,
                                const std::vector<std::vector<double>>& covariates);

struct BootstrapRow {
    gamlss::FitRow row;
    std::string subject_id;
    std::string study_id;
};

struct BootstrapBands {
    std::vector<double> ages;
    std::vector<double> lower;   // 2.5th percentile of the replicate medians
    std::vector<double> upper;   // 97.5th percentile
    std::vector<double> point;   // full-data fitted median
    size_t n_replicates_used = 0;
    size_t n_failed = 0;
};

// Subject-level bootstrap of the fitted median curve, stratified by
// study x group so every replicate keeps the design balance; all sessions of
// a drawn subject travel together. Replicate r uses the deterministic
// substream (seed, r), so results do not depend on thread schedule.
BootstrapBands bootstrap_bands(const std::vector<BootstrapRow>& rows,
                               const gamlss::ModelSpec& spec, int B,
                               const std::vector<double>& ages, int sex, int group,
                               std::uint64_t seed, int threads = 1);

}  // namespace cohortforge::infer
