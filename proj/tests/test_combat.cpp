#include <doctest.h>

#include <cmath>
#include <vector>

#include "cohortforge/combat.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/rng.hpp"
#include "combat_reference.hpp"

using namespace cohortforge;
using cohortforge::testing::RefModel;
using cohortforge::testing::reference_combat;
using cohortforge::testing::toy_table;


TEST_CASE("toy fit matches the independent step-by-step reference to 1e-8") {
    MetricTable t = toy_table();
    auto model = combat::fit(t, {"f1", "f2", "f3"});

    std::vector<int> batch_of;
    std::vector<std::vector<double>> X, Y;
    for (size_t r = 0; r < t.n_rows(); ++r) {
        batch_of.push_back(t.rows[r].study_id == "A" ? 0 : 1);
        X.push_back({*t.rows[r].age, t.rows[r].sex == Sex::male ? 1.0 : 0.0,
                     t.rows[r].group == Group::case_ ? 1.0 : 0.0});
        Y.push_back({*t.cell(r, 0), *t.cell(r, 1), *t.cell(r, 2)});
    }
    RefModel ref = reference_combat(batch_of, X, Y, 2);

    for (int f = 0; f < 3; ++f) {
        CHECK(std::fabs(model.alpha(f) - ref.alpha[f]) < 1e-8);
        CHECK(std::fabs(model.sigma(f) - ref.sigma[f]) < 1e-8);
        for (int p = 0; p < 3; ++p)
            CHECK(std::fabs(model.beta(p, f) - ref.beta[p][f]) < 1e-8);
        for (int i = 0; i < 2; ++i) {
            CHECK(std::fabs(model.batches[i].gamma_star(f) - ref.gamma_star[i][f]) < 1e-8);
            CHECK(std::fabs(model.batches[i].delta_sq_star(f) - ref.delta_sq_star[i][f]) <
                  1e-8);
        }
    }
    for (const auto& be : model.batches)
        for (int f = 0; f < 3; ++f) CHECK(be.delta_sq_star(f) > 0.0);
}

TEST_CASE("identity adjustment returns the input to 1e-12") {
    MetricTable t = toy_table();
    combat::CombatConfig cfg;
    combat::CombatModel model;
    model.features = {"f1"};
    model.covariates = {"age", "sex", "group"};
    model.config = cfg;
    model.alpha = Eigen::VectorXd::Constant(1, 5.0);
    model.beta = Eigen::MatrixXd::Zero(3, 1);
    model.sigma = Eigen::VectorXd::Constant(1, 2.0);
    for (const char* id : {"A", "B"}) {
        combat::BatchEffects be;
        be.batch_id = id;
        be.n = 6;
        be.gamma_star = Eigen::VectorXd::Zero(1);
        be.delta_sq_star = Eigen::VectorXd::Ones(1);
        be.gamma_hat = be.gamma_star;
        be.delta_sq_hat = be.delta_sq_star;
        model.batches.push_back(be);
    }
    auto out = combat::apply(model, t);
    for (size_t r = 0; r < t.n_rows(); ++r)
        CHECK(*out.cell(r, 0) == doctest::Approx(*t.cell(r, 0)).epsilon(1e-12));
}

TEST_CASE("single batch is rejected") {
    MetricTable t = toy_table();
    for (auto& r : t.rows) r.study_id = "A";
    CHECK_THROWS_WITH_AS(combat::fit(t, {"f1", "f2", "f3"}),
                         doctest::Contains("SINGLE_BATCH"), Error);
}

TEST_CASE("unknown batch at apply time is rejected") {
    MetricTable t = toy_table();
    auto model = combat::fit(t, {"f1", "f2", "f3"});
    t.rows[0].study_id = "studyX";
    CHECK_THROWS_WITH_AS(combat::apply(model, t), doctest::Contains("UNKNOWN_BATCH"),
                         Error);
}

TEST_CASE("no injected site effect: gamma* near 0, delta* near 1") {
    Rng rng(31);
    MetricTable t;
    t.metrics = {"a", "b", "c"};
    const int n_per = 400;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < n_per; ++i) {
            SessionRecord r;
            r.subject_id = "s" + std::to_string(b) + "_" + std::to_string(i);
            r.session_id = "ses-1";
            r.study_id = b ? "B" : "A";
            t.rows.push_back(r);
            t.cells.push_back({rng.normal(), rng.normal(), rng.normal()});
        }
    combat::CombatConfig cfg;
    cfg.use_age = cfg.use_sex = cfg.use_group = false;
    auto model = combat::fit(t, {"a", "b", "c"}, cfg);
    double bound = 3.0 / std::sqrt(static_cast<double>(n_per));
    for (const auto& be : model.batches)
        for (int f = 0; f < 3; ++f) {
            CHECK(std::fabs(be.gamma_star(f)) < bound);
            CHECK(std::fabs(std::sqrt(be.delta_sq_star(f)) - 1.0) < 0.2);
        }
}

TEST_CASE("pure additive offset on batch 2 maps onto batch 1") {
    Rng rng(77);
    MetricTable t;
    t.metrics = {"a", "b", "c"};
    const int n_per = 200;
    const double offset = 3.0;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < n_per; ++i) {
            SessionRecord r;
            r.subject_id = "s" + std::to_string(b) + "_" + std::to_string(i);
            r.session_id = "ses-1";
            r.study_id = b ? "B" : "A";
            t.rows.push_back(r);
            double shift = b ? offset : 0.0;
            t.cells.push_back({10 + shift + rng.normal(), 20 + shift + rng.normal(),
                               30 + shift + rng.normal()});
        }
    combat::CombatConfig cfg;
    cfg.use_age = cfg.use_sex = cfg.use_group = false;
    auto model = combat::fit(t, {"a", "b", "c"}, cfg);
    auto out = combat::apply(model, t);
    for (int f = 0; f < 3; ++f) {
        double m1 = 0, m2 = 0;
        for (int i = 0; i < n_per; ++i) {
            m1 += *out.cell(i, f);
            m2 += *out.cell(n_per + i, f);
        }
        CHECK(std::fabs(m1 / n_per - m2 / n_per) < 0.2);
    }
}

TEST_CASE("feature order permutation leaves per-feature output unchanged") {
    MetricTable t = toy_table();
    auto m1 = combat::fit(t, {"f1", "f2", "f3"});
    auto m2 = combat::fit(t, {"f3", "f1", "f2"});
    // f1 is index 0 in m1 and index 1 in m2.
    CHECK(m1.alpha(0) == doctest::Approx(m2.alpha(1)).epsilon(1e-14));
    CHECK(m1.sigma(0) == doctest::Approx(m2.sigma(1)).epsilon(1e-14));
    CHECK(m1.batches[0].gamma_star(0) ==
          doctest::Approx(m2.batches[0].gamma_star(1)).epsilon(1e-12));
}

TEST_CASE("fit and apply are deterministic") {
    MetricTable t = toy_table();
    auto m1 = combat::fit(t, {"f1", "f2", "f3"});
    auto m2 = combat::fit(t, {"f1", "f2", "f3"});
    CHECK(combat::to_json(m1) == combat::to_json(m2));
    auto o1 = combat::apply(m1, t);
    auto o2 = combat::apply(m2, t);
    CHECK(write_metric_table_csv(o1) == write_metric_table_csv(o2));
}

TEST_CASE("single-feature fallback uses direct estimates") {
    MetricTable t = toy_table();
    std::vector<std::string> warnings;
    auto model = combat::fit(t, {"f1"}, {}, &warnings);
    REQUIRE(model.batches.size() == 2);
    for (const auto& be : model.batches) {
        CHECK(!be.pooled);
        CHECK(be.gamma_star(0) == be.gamma_hat(0));
        CHECK(be.delta_sq_star(0) == be.delta_sq_hat(0));
    }
}

TEST_CASE("missing cells stay missing through apply") {
    MetricTable t = toy_table();
    auto model = combat::fit(t, {"f1", "f2", "f3"});
    t.cells[2][1] = std::nullopt;
    auto out = combat::apply(model, t);
    CHECK(!out.cell(2, 1).has_value());
    CHECK(out.cell(2, 0).has_value());
}

TEST_CASE("rows missing covariates are dropped from fit with a warning") {
    MetricTable t = toy_table();
    t.rows[0].age.reset();
    std::vector<std::string> warnings;
    auto model = combat::fit(t, {"f1", "f2", "f3"}, {}, &warnings);
    CHECK(model.n_rows_used == 11);
    REQUIRE(!warnings.empty());
    CHECK(warnings[0].find("dropped") != std::string::npos);
}

TEST_CASE("single-group batch emits a confound warning") {
    MetricTable t = toy_table();
    for (size_t r = 0; r < t.n_rows(); ++r)
        if (t.rows[r].study_id == "B") t.rows[r].group = Group::control;
    std::vector<std::string> warnings;
    combat::fit(t, {"f1", "f2", "f3"}, {}, &warnings);
    bool found = false;
    for (const auto& w : warnings)
        if (w.find("single case/control group") != std::string::npos) found = true;
    CHECK(found);
}

TEST_CASE("model JSON round-trip reproduces apply output") {
    MetricTable t = toy_table();
    auto model = combat::fit(t, {"f1", "f2", "f3"});
    auto back = combat::from_json(combat::to_json(model));
    auto o1 = combat::apply(model, t);
    auto o2 = combat::apply(back, t);
    for (size_t r = 0; r < t.n_rows(); ++r)
        for (size_t c = 0; c < 3; ++c)
            CHECK(*o1.cell(r, c) == doctest::Approx(*o2.cell(r, c)).epsilon(1e-15));
}

TEST_CASE("covariate preservation: harmonization keeps the injected group effect") {
    // Linear-model cohorts with known effects; the group coefficient fitted on
    // harmonized data should be unbiased to within 10% on average.
    const double beta_age = 0.02, beta_sex = 0.5, beta_group = 0.8;
    const std::vector<double> gamma = {0.0, 1.0, -0.7};
    const std::vector<double> delta = {1.0, 1.3, 0.8};
    double sum_beta = 0.0;
    const int reps = 100;
    for (int rep = 0; rep < reps; ++rep) {
        Rng rng(61000 + rep);
        MetricTable t;
        t.metrics = {"a", "b", "c"};
        for (int study = 0; study < 3; ++study)
            for (int i = 0; i < 80; ++i) {
                SessionRecord r;
                r.subject_id = "s" + std::to_string(study) + "_" + std::to_string(i);
                r.session_id = "ses-1";
                r.study_id = "ST" + std::to_string(study);
                r.age = rng.uniform(15.0, 90.0);
                r.sex = rng.uniform() < 0.5 ? Sex::male : Sex::female;
                r.group = rng.uniform() < 0.5 ? Group::case_ : Group::control;
                std::vector<std::optional<double>> cells;
                for (int f = 0; f < 3; ++f) {
                    double mean = 1.0 + f + beta_age * *r.age +
                                  beta_sex * (r.sex == Sex::male) +
                                  beta_group * (r.group == Group::case_);
                    cells.push_back(mean + gamma[study] + delta[study] * rng.normal());
                }
                t.rows.push_back(r);
                t.cells.push_back(cells);
            }
        auto model = combat::fit(t, {"a", "b", "c"});
        auto out = combat::apply(model, t);

        // OLS of the first harmonized feature on [1, age, sex, group].
        Eigen::MatrixXd X(t.n_rows(), 4);
        Eigen::VectorXd y(t.n_rows());
        for (size_t r = 0; r < t.n_rows(); ++r) {
            X(r, 0) = 1.0;
            X(r, 1) = *t.rows[r].age;
            X(r, 2) = t.rows[r].sex == Sex::male ? 1.0 : 0.0;
            X(r, 3) = t.rows[r].group == Group::case_ ? 1.0 : 0.0;
            y(r) = *out.cell(r, 0);
        }
        Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
        sum_beta += beta(3);
    }
    double mean_beta = sum_beta / reps;
    CHECK(std::fabs(mean_beta - beta_group) < 0.10 * beta_group);
}
