#include "cohortforge/combat.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "cohortforge/error.hpp"
#include "cohortforge/log.hpp"

namespace cohortforge::combat {

using nlohmann::json;

int CombatModel::batch_index(const std::string& batch_id) const {
    for (size_t i = 0; i < batches.size(); ++i)
        if (batches[i].batch_id == batch_id) return static_cast<int>(i);
    return -1;
}

bool covariate_row(const SessionRecord& rec, const CombatConfig& config,
                   Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) {
    int c = 0;
    if (config.use_age) {
        if (!rec.age) return false;
        out(c++) = *rec.age;
    }
    if (config.use_sex) {
        if (rec.sex == Sex::unknown) return false;
        out(c++) = rec.sex == Sex::male ? 1.0 : 0.0;
    }
    if (config.use_group) {
        if (rec.group == Group::unknown) return false;
        out(c++) = rec.group == Group::case_ ? 1.0 : 0.0;
    }
    return true;
}

namespace {

int n_covariates(const CombatConfig& c) {
    return (c.use_age ? 1 : 0) + (c.use_sex ? 1 : 0) + (c.use_group ? 1 : 0);
}

std::vector<std::string> covariate_names(const CombatConfig& c) {
    std::vector<std::string> names;
    if (c.use_age) names.push_back("age");
    if (c.use_sex) names.push_back("sex");
    if (c.use_group) names.push_back("group");
    return names;
}

}  // namespace

CombatModel fit(const MetricTable& table, const std::vector<std::string>& features,
                const CombatConfig& config, std::vector<std::string>* warnings) {
    table.validate();
    if (features.empty()) fail("NO_FEATURES", "no features selected for harmonization");

    std::vector<int> feature_cols;
    for (const auto& f : features) {
        int c = table.metric_index(f);
        if (c < 0) fail("UNKNOWN_FEATURE", "metric '" + f + "' is not in the table");
        feature_cols.push_back(c);
    }

    const int P = n_covariates(config);
    const int F = static_cast<int>(features.size());

    // Complete rows only: every selected feature and covariate present.
    std::vector<size_t> rows;
    Eigen::RowVectorXd xrow(P);
    size_t dropped = 0;
    for (size_t r = 0; r < table.n_rows(); ++r) {
        bool ok = covariate_row(table.rows[r], config, xrow);
        for (int c : feature_cols)
            if (!table.cells[r][c]) ok = false;
        if (ok)
            rows.push_back(r);
        else
            ++dropped;
    }
    if (dropped > 0 && warnings)
        warnings->push_back(std::to_string(dropped) +
                            " rows dropped from ComBat fit (missing feature or covariate)");

    // Batch membership, sorted by study id.
    std::set<std::string> batch_ids;
    for (size_t r : rows) batch_ids.insert(table.rows[r].study_id);
    if (batch_ids.size() < 2) fail("SINGLE_BATCH", "ComBat needs at least 2 batches");

    CombatModel model;
    model.features = features;
    model.covariates = covariate_names(config);
    model.config = config;
    std::map<std::string, int> batch_of;
    for (const auto& id : batch_ids) {
        batch_of[id] = static_cast<int>(model.batches.size());
        BatchEffects be;
        be.batch_id = id;
        model.batches.push_back(std::move(be));
    }
    const int I = static_cast<int>(model.batches.size());
    const int N = static_cast<int>(rows.size());
    model.n_rows_used = rows.size();

    Eigen::MatrixXd Y(N, F);
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(N, I + P);
    std::vector<int> batch_of_row(N);
    std::map<int, std::set<Group>> groups_in_batch;
    for (int j = 0; j < N; ++j) {
        size_t r = rows[j];
        int b = batch_of[table.rows[r].study_id];
        batch_of_row[j] = b;
        ++model.batches[b].n;
        groups_in_batch[b].insert(table.rows[r].group);
        Z(j, b) = 1.0;
        covariate_row(table.rows[r], config, Z.block(j, I, 1, P).row(0));
        for (int f = 0; f < F; ++f) Y(j, f) = *table.cells[r][feature_cols[f]];
    }
    for (const auto& be : model.batches)
        if (be.n < 2)
            fail("BATCH_TOO_SMALL", "batch '" + be.batch_id + "' has fewer than 2 rows");
    for (const auto& [b, gs] : groups_in_batch)
        if (config.use_group && gs.size() < 2) {
            std::string msg = "batch '" + model.batches[b].batch_id +
                              "' contains a single case/control group; site and group "
                              "effects are confounded there";
            logging::warn(msg);
            if (warnings) warnings->push_back(msg);
        }

    // Step 1: least squares with batch dummies plus covariates. The grand
    // intercept is the n_i/N-weighted combination of batch intercepts, which
    // realizes the sum_i (n_i/N) gamma_i = 0 constraint.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
    if (qr.rank() < I + P)
        fail("DEGENERATE_DESIGN", "batch/covariate design is rank deficient");
    Eigen::MatrixXd coef = qr.solve(Y);  // (I+P) x F
    Eigen::MatrixXd batch_coef = coef.topRows(I);
    model.beta = coef.bottomRows(P);

    Eigen::VectorXd weights(I);
    for (int i = 0; i < I; ++i)
        weights(i) = static_cast<double>(model.batches[i].n) / static_cast<double>(N);
    model.alpha = (weights.transpose() * batch_coef).transpose();

    // Step 2: pooled residual variance over all rows.
    Eigen::MatrixXd resid = Y - Z * coef;
    model.sigma.resize(F);
    for (int f = 0; f < F; ++f) {
        double s2 = resid.col(f).squaredNorm() / static_cast<double>(N);
        if (!(s2 > 0.0))
            fail("ZERO_VARIANCE", "feature '" + features[f] + "' has zero residual variance");
        model.sigma(f) = std::sqrt(s2);
    }

    // Step 3: standardize, leaving batch effects in place.
    Eigen::MatrixXd Zstd(N, F);
    for (int j = 0; j < N; ++j)
        for (int f = 0; f < F; ++f)
            Zstd(j, f) = (Y(j, f) - model.alpha(f) - Z.row(j).tail(P).dot(model.beta.col(f))) /
                         model.sigma(f);

    // Per-batch location/scale estimates in standardized units.
    for (int i = 0; i < I; ++i) {
        BatchEffects& be = model.batches[i];
        be.gamma_hat.setZero(F);
        be.delta_sq_hat.setZero(F);
        double n = static_cast<double>(be.n);
        for (int f = 0; f < F; ++f) {
            double sum = 0.0;
            for (int j = 0; j < N; ++j)
                if (batch_of_row[j] == i) sum += Zstd(j, f);
            be.gamma_hat(f) = sum / n;
            double ss = 0.0;
            for (int j = 0; j < N; ++j)
                if (batch_of_row[j] == i) {
                    double d = Zstd(j, f) - be.gamma_hat(f);
                    ss += d * d;
                }
            be.delta_sq_hat(f) = ss / (n - 1.0);
        }
    }

    // Steps 4-5: method-of-moments hyperpriors and the conditional posterior
    // mean iteration. With a single feature there is nothing to pool across,
    // so the raw estimates are used directly.
    for (int i = 0; i < I; ++i) {
        BatchEffects& be = model.batches[i];
        double n = static_cast<double>(be.n);
        if (F < 2) {
            be.pooled = false;
            be.gamma_star = be.gamma_hat;
            be.delta_sq_star = be.delta_sq_hat;
            continue;
        }
        be.gamma_bar = be.gamma_hat.mean();
        be.tau_sq = (be.gamma_hat.array() - be.gamma_bar).square().sum() /
                    static_cast<double>(F - 1);
        double m = be.delta_sq_hat.mean();
        double s2 = (be.delta_sq_hat.array() - m).square().sum() / static_cast<double>(F - 1);
        if (!(s2 > 0.0) || !(be.tau_sq > 0.0)) {
            be.pooled = false;
            be.gamma_star = be.gamma_hat;
            be.delta_sq_star = be.delta_sq_hat;
            continue;
        }
        be.lambda_bar = (2.0 * s2 + m * m) / s2;
        be.theta_bar = (m * s2 + m * m * m) / s2;

        Eigen::VectorXd g = be.gamma_hat;
        Eigen::VectorXd d2 = be.delta_sq_hat;
        Eigen::VectorXd g_new(F), d2_new(F);
        int it = 0;
        for (; it < config.max_iter; ++it) {
            for (int f = 0; f < F; ++f)
                g_new(f) = (n * be.tau_sq * be.gamma_hat(f) + d2(f) * be.gamma_bar) /
                           (n * be.tau_sq + d2(f));
            for (int f = 0; f < F; ++f) {
                double ss = 0.0;
                for (int j = 0; j < N; ++j)
                    if (batch_of_row[j] == i) {
                        double d = Zstd(j, f) - g_new(f);
                        ss += d * d;
                    }
                d2_new(f) = (be.theta_bar + 0.5 * ss) / (n / 2.0 + be.lambda_bar - 1.0);
            }
            double change = std::max((g_new - g).cwiseAbs().maxCoeff(),
                                     (d2_new - d2).cwiseAbs().maxCoeff());
            g = g_new;
            d2 = d2_new;
            if (change < config.tol) break;
        }
        if (it >= config.max_iter)
            fail("NO_CONVERGENCE", "EB iteration did not converge for batch '" +
                                       be.batch_id + "'", ErrorKind::runtime);
        be.iterations = it + 1;
        be.gamma_star = g;
        be.delta_sq_star = d2;
    }
    return model;
}

MetricTable apply(const CombatModel& model, const MetricTable& table) {
    table.validate();
    const int P = static_cast<int>(model.covariates.size());
    const int F = static_cast<int>(model.features.size());

    std::vector<int> feature_cols;
    for (const auto& f : model.features) {
        int c = table.metric_index(f);
        if (c < 0) fail("UNKNOWN_FEATURE", "metric '" + f + "' is not in the table");
        feature_cols.push_back(c);
    }

    MetricTable out = table;
    Eigen::RowVectorXd xrow(P);
    for (size_t r = 0; r < table.n_rows(); ++r) {
        const auto& rec = table.rows[r];
        int b = model.batch_index(rec.study_id);
        if (b < 0) fail("UNKNOWN_BATCH", "batch '" + rec.study_id + "' was not in the fit");
        if (!covariate_row(rec, model.config, xrow))
            fail("MISSING_COVARIATE", "row " + rec.key() + " is missing a model covariate");
        const BatchEffects& be = model.batches[b];
        for (int f = 0; f < F; ++f) {
            auto& cell = out.cells[r][feature_cols[f]];
            if (!cell) continue;  // missing stays missing
            double fitted = model.alpha(f) + xrow.dot(model.beta.col(f));
            double z = (*cell - fitted) / model.sigma(f);
            double adj = (z - be.gamma_star(f)) / std::sqrt(be.delta_sq_star(f));
            cell = model.sigma(f) * adj + fitted;
        }
    }
    return out;
}

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
    return v;
}

}  // namespace

std::string to_json(const CombatModel& model) {
    json j;
    j["features"] = model.features;
    j["covariates"] = model.covariates;
    j["tol"] = model.config.tol;
    j["max_iter"] = model.config.max_iter;
    j["alpha"] = vec_to_json(model.alpha);
    json beta = json::array();
    for (Eigen::Index r = 0; r < model.beta.rows(); ++r)
        beta.push_back(vec_to_json(model.beta.row(r).transpose()));
    j["beta"] = beta;
    j["sigma"] = vec_to_json(model.sigma);
    j["n_rows_used"] = model.n_rows_used;
    json batches = json::array();
    for (const auto& be : model.batches) {
        json b;
        b["batch_id"] = be.batch_id;
        b["n"] = be.n;
        b["gamma_hat"] = vec_to_json(be.gamma_hat);
        b["delta_sq_hat"] = vec_to_json(be.delta_sq_hat);
        b["gamma_star"] = vec_to_json(be.gamma_star);
        b["delta_sq_star"] = vec_to_json(be.delta_sq_star);
        b["gamma_bar"] = be.gamma_bar;
        b["tau_sq"] = be.tau_sq;
        b["lambda_bar"] = be.lambda_bar;
        b["theta_bar"] = be.theta_bar;
        b["iterations"] = be.iterations;
        b["pooled"] = be.pooled;
        batches.push_back(std::move(b));
    }
    j["batches"] = batches;
    return j.dump(2) + "\n";
}

CombatModel from_json(const std::string& json_bytes) {
    json j = json::parse(json_bytes);
    CombatModel model;
    model.features = j.at("features").get<std::vector<std::string>>();
    model.covariates = j.at("covariates").get<std::vector<std::string>>();
    model.config.tol = j.at("tol").get<double>();
    model.config.max_iter = j.at("max_iter").get<int>();
    model.config.use_age = false;
    model.config.use_sex = false;
    model.config.use_group = false;
    for (const auto& c : model.covariates) {
        if (c == "age") model.config.use_age = true;
        if (c == "sex") model.config.use_sex = true;
        if (c == "group") model.config.use_group = true;
    }
    model.alpha = vec_from_json(j.at("alpha"));
    const auto& beta = j.at("beta");
    model.beta.resize(beta.size(), model.alpha.size());
    for (size_t r = 0; r < beta.size(); ++r)
        model.beta.row(r) = vec_from_json(beta[r]).transpose();
    model.sigma = vec_from_json(j.at("sigma"));
    model.n_rows_used = j.at("n_rows_used").get<size_t>();
    for (const auto& b : j.at("batches")) {
        BatchEffects be;
        be.batch_id = b.at("batch_id").get<std::string>();
        be.n = b.at("n").get<size_t>();
        be.gamma_hat = vec_from_json(b.at("gamma_hat"));
        be.delta_sq_hat = vec_from_json(b.at("delta_sq_hat"));
        be.gamma_star = vec_from_json(b.at("gamma_star"));
        be.delta_sq_star = vec_from_json(b.at("delta_sq_star"));
        be.gamma_bar = b.at("gamma_bar").get<double>();
        be.tau_sq = b.at("tau_sq").get<double>();
        be.lambda_bar = b.at("lambda_bar").get<double>();
        be.theta_bar = b.at("theta_bar").get<double>();
        be.iterations = b.at("iterations").get<int>();
        be.pooled = b.at("pooled").get<bool>();
        model.batches.push_back(std::move(be));
    }
    return model;
}

}  // namespace cohortforge::combat
