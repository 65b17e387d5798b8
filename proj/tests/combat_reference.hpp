#pragma once

// Test-only module: an independent step-by-step reference for the
// location/scale empirical-Bayes harmonization, plus the fixed toy cohort the
// oracle comparisons run on. Plain scalar loops and a tiny Gaussian
// elimination, no Eigen, kept apart from the library so the two routes share
// no code.

#include <cmath>
#include <vector>

#include "cohortforge/cohort.hpp"

namespace cohortforge::testing {

// ---------------------------------------------------------------------------
// Independent step-by-step reference: plain scalar loops and a tiny Gaussian
// elimination, no Eigen, following the model equations directly. Kept apart
// from the library so the two routes share no code.
// ---------------------------------------------------------------------------

struct RefModel {
    std::vector<double> alpha;                      // per feature
    std::vector<std::vector<double>> beta;          // [cov][feature]
    std::vector<double> sigma;                      // per feature
    std::vector<std::vector<double>> gamma_star;    // [batch][feature]
    std::vector<std::vector<double>> delta_sq_star; // [batch][feature]
};

std::vector<double> gauss_solve(std::vector<std::vector<double>> A, std::vector<double> b) {
    const size_t n = A.size();
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::fabs(A[r][col]) > std::fabs(A[piv][col])) piv = r;
        std::swap(A[col], A[piv]);
        std::swap(b[col], b[piv]);
        for (size_t r = col + 1; r < n; ++r) {
            double f = A[r][col] / A[col][col];
            for (size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (size_t i = n; i-- > 0;) {
        double s = b[i];
        for (size_t c = i + 1; c < n; ++c) s -= A[i][c] * x[c];
        x[i] = s / A[i][i];
    }
    return x;
}

RefModel reference_combat(const std::vector<int>& batch_of,
                          const std::vector<std::vector<double>>& X,
                          const std::vector<std::vector<double>>& Y, int I,
                          double tol = 1e-6, int max_iter = 500) {
    const int N = static_cast<int>(Y.size());
    const int F = static_cast<int>(Y[0].size());
    const int P = X.empty() ? 0 : static_cast<int>(X[0].size());
    const int K = I + P;

    std::vector<int> n_batch(I, 0);
    for (int j = 0; j < N; ++j) ++n_batch[batch_of[j]];

    // Step 1: least squares on [batch dummies | covariates] per feature.
    auto design_cell = [&](int j, int k) -> double {
        if (k < I) return batch_of[j] == k ? 1.0 : 0.0;
        return X[j][k - I];
    };
    std::vector<std::vector<double>> XtX(K, std::vector<double>(K, 0.0));
    for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b)
            for (int j = 0; j < N; ++j) XtX[a][b] += design_cell(j, a) * design_cell(j, b);

    std::vector<std::vector<double>> coef(K, std::vector<double>(F, 0.0));
    for (int f = 0; f < F; ++f) {
        std::vector<double> Xty(K, 0.0);
        for (int a = 0; a < K; ++a)
            for (int j = 0; j < N; ++j) Xty[a] += design_cell(j, a) * Y[j][f];
        auto c = gauss_solve(XtX, Xty);
        for (int a = 0; a < K; ++a) coef[a][f] = c[a];
    }

    RefModel m;
    m.alpha.assign(F, 0.0);
    for (int f = 0; f < F; ++f)
        for (int i = 0; i < I; ++i)
            m.alpha[f] += coef[i][f] * n_batch[i] / static_cast<double>(N);
    m.beta.assign(P, std::vector<double>(F, 0.0));
    for (int p = 0; p < P; ++p) m.beta[p] = coef[I + p];

    // gamma_hat from the constrained regression, in response units.
    std::vector<std::vector<double>> gamma_hat_raw(I, std::vector<double>(F));
    for (int i = 0; i < I; ++i)
        for (int f = 0; f < F; ++f) gamma_hat_raw[i][f] = coef[i][f] - m.alpha[f];

    // Step 2: pooled residual variance over all N rows.
    m.sigma.assign(F, 0.0);
    for (int f = 0; f < F; ++f) {
        double ss = 0.0;
        for (int j = 0; j < N; ++j) {
            double fit = coef[batch_of[j]][f];
            for (int p = 0; p < P; ++p) fit += X[j][p] * m.beta[p][f];
            double r = Y[j][f] - fit;
            ss += r * r;
        }
        m.sigma[f] = std::sqrt(ss / N);
    }

    // Step 3: standardize (batch effects stay in).
    std::vector<std::vector<double>> Zs(N, std::vector<double>(F));
    for (int j = 0; j < N; ++j)
        for (int f = 0; f < F; ++f) {
            double fit = m.alpha[f];
            for (int p = 0; p < P; ++p) fit += X[j][p] * m.beta[p][f];
            Zs[j][f] = (Y[j][f] - fit) / m.sigma[f];
        }

    std::vector<std::vector<double>> gamma_hat(I, std::vector<double>(F));
    std::vector<std::vector<double>> delta_sq_hat(I, std::vector<double>(F));
    for (int i = 0; i < I; ++i)
        for (int f = 0; f < F; ++f) {
            gamma_hat[i][f] = gamma_hat_raw[i][f] / m.sigma[f];
            double mean = 0.0;
            for (int j = 0; j < N; ++j)
                if (batch_of[j] == i) mean += Zs[j][f];
            mean /= n_batch[i];
            double ss = 0.0;
            for (int j = 0; j < N; ++j)
                if (batch_of[j] == i) ss += (Zs[j][f] - mean) * (Zs[j][f] - mean);
            delta_sq_hat[i][f] = ss / (n_batch[i] - 1);
        }

    // Steps 4-5: hyperpriors and the conditional posterior iteration.
    m.gamma_star.assign(I, std::vector<double>(F));
    m.delta_sq_star.assign(I, std::vector<double>(F));
    for (int i = 0; i < I; ++i) {
        double n = n_batch[i];
        double gbar = 0.0;
        for (int f = 0; f < F; ++f) gbar += gamma_hat[i][f];
        gbar /= F;
        double tau2 = 0.0;
        for (int f = 0; f < F; ++f)
            tau2 += (gamma_hat[i][f] - gbar) * (gamma_hat[i][f] - gbar);
        tau2 /= (F - 1);
        double dmean = 0.0;
        for (int f = 0; f < F; ++f) dmean += delta_sq_hat[i][f];
        dmean /= F;
        double dvar = 0.0;
        for (int f = 0; f < F; ++f)
            dvar += (delta_sq_hat[i][f] - dmean) * (delta_sq_hat[i][f] - dmean);
        dvar /= (F - 1);
        double lambda_bar = (2.0 * dvar + dmean * dmean) / dvar;
        double theta_bar = (dmean * dvar + dmean * dmean * dmean) / dvar;

        std::vector<double> g = gamma_hat[i], d2 = delta_sq_hat[i];
        for (int it = 0; it < max_iter; ++it) {
            std::vector<double> g_new(F), d2_new(F);
            for (int f = 0; f < F; ++f)
                g_new[f] = (n * tau2 * gamma_hat[i][f] + d2[f] * gbar) / (n * tau2 + d2[f]);
            for (int f = 0; f < F; ++f) {
                double ss = 0.0;
                for (int j = 0; j < N; ++j)
                    if (batch_of[j] == i) ss += (Zs[j][f] - g_new[f]) * (Zs[j][f] - g_new[f]);
                d2_new[f] = (theta_bar + 0.5 * ss) / (n / 2.0 + lambda_bar - 1.0);
            }
            double change = 0.0;
            for (int f = 0; f < F; ++f) {
                change = std::max(change, std::fabs(g_new[f] - g[f]));
                change = std::max(change, std::fabs(d2_new[f] - d2[f]));
            }
            g = g_new;
            d2 = d2_new;
            if (change < tol) break;
        }
        m.gamma_star[i] = g;
        m.delta_sq_star[i] = d2;
    }
    return m;
}

// ---------------------------------------------------------------------------

MetricTable toy_table() {
    // 2 batches x 6 rows, 3 features, covariates age/sex/group. Fixed values.
    MetricTable t;
    t.metrics = {"f1", "f2", "f3"};
    struct RowDef {
        const char* study;
        double age;
        int sex, group;
        double y1, y2, y3;
    };
    const std::vector<RowDef> defs = {
        {"A", 25, 0, 0, 11.43, 4.01, 99.2},  {"A", 35, 1, 0, 13.02, 4.77, 104.8},
        {"A", 45, 0, 1, 15.11, 5.64, 111.9}, {"A", 55, 1, 1, 16.78, 6.09, 118.4},
        {"A", 65, 0, 0, 13.35, 5.32, 110.3}, {"A", 75, 1, 1, 18.82, 7.20, 126.1},
        {"B", 28, 1, 0, 14.95, 6.11, 115.7}, {"B", 38, 0, 1, 17.03, 7.25, 124.2},
        {"B", 48, 1, 1, 18.66, 7.83, 129.6}, {"B", 58, 0, 0, 15.41, 6.93, 121.0},
        {"B", 68, 1, 0, 17.19, 7.64, 128.8}, {"B", 78, 0, 1, 20.44, 8.93, 141.5},
    };
    int i = 0;
    for (const auto& d : defs) {
        SessionRecord r;
        r.subject_id = "sub-" + std::to_string(i++);
        r.session_id = "ses-1";
        r.study_id = d.study;
        r.age = d.age;
        r.sex = d.sex ? Sex::male : Sex::female;
        r.group = d.group ? Group::case_ : Group::control;
        t.rows.push_back(r);
        t.cells.push_back({d.y1, d.y2, d.y3});
    }
    return t;
}

}  // namespace cohortforge::testing
