#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "cohortforge/cohort.hpp"

namespace cohortforge::combat {

struct CombatConfig {
    bool use_age = true;
    bool use_sex = true;
    bool use_group = true;
    double tol = 1e-6;   // EB iteration stopping rule, max absolute change
    int max_iter = 500;
};

// Per-batch empirical-Bayes site effects in standardized units.
struct BatchEffects {
    std::string batch_id;
    size_t n = 0;  // rows used in the fit
    Eigen::VectorXd gamma_hat;      // per feature, additive
    Eigen::VectorXd delta_sq_hat;   // per feature, multiplicative (variance)
    Eigen::VectorXd gamma_star;
    Eigen::VectorXd delta_sq_star;
    double gamma_bar = 0.0;   // Normal hyperprior mean
    double tau_sq = 0.0;      // Normal hyperprior variance
    double lambda_bar = 0.0;  // InverseGamma hyperprior shape
    double theta_bar = 0.0;   // InverseGamma hyperprior scale
    int iterations = 0;
    bool pooled = true;  // false when the <2-feature fallback was used
};

struct CombatModel {
    std::vector<std::string> features;
    std::vector<std::string> covariates;  // subset of {age, sex, group}
    CombatConfig config;
    Eigen::VectorXd alpha;  // grand intercept per feature
    Eigen::MatrixXd beta;   // covariates x features
    Eigen::VectorXd sigma;  // pooled residual scale per feature
    std::vector<BatchEffects> batches;
    size_t n_rows_used = 0;

    int batch_index(const std::string& batch_id) const;
};

// Fits the location/scale batch-effect model y = alpha + X beta + gamma_i +
// delta_i * eps with study as batch. Rows missing any selected feature or
// covariate are dropped (reported via warnings).
CombatModel fit(const MetricTable& table, const std::vector<std::string>& features,
                const CombatConfig& config = {},
                std::vector<std::string>* warnings = nullptr);

// Removes the fitted site effects; covariate effects are restored. Cells that
// are missing stay missing; non-model columns pass through unchanged.
MetricTable apply(const CombatModel& model, const MetricTable& table);

std::string to_json(const CombatModel& model);
CombatModel from_json(const std::string& json_bytes);

// Covariate design row shared by fit/apply: age in years, sex male=1,
// group case=1. Returns false when a selected covariate is missing.
bool covariate_row(const SessionRecord& rec, const CombatConfig& config,
                   Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out);

}  // namespace cohortforge::combat
