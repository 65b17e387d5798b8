#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cohortforge/pipeline.hpp"

namespace cohortforge::testing {

// Small self-contained cohort config: 3 studies, GG noise with injected site
// effects, DWI phantoms, reduced grids so the full pipeline runs in seconds.
inline std::string bundled_config_json(const std::string& out_dir,
                                       std::uint64_t seed = 4242, int bootstrap_B = 10) {
    nlohmann::json j;
    j["paths"]["output_dir"] = out_dir;
    j["paths"]["metrics_csv"] = out_dir + "/synth/metrics.csv";
    j["paths"]["dwi_root"] = out_dir + "/synth/dwi";
    nlohmann::json parts = nlohmann::json::array();
    for (const char* s : {"SITE_A", "SITE_B", "SITE_C"}) {
        nlohmann::json p;
        p["study"] = s;
        p["tsv"] = out_dir + "/synth/participants_" + std::string(s) + ".tsv";
        parts.push_back(p);
    }
    j["paths"]["participants"] = parts;

    j["qa"]["outlier_k"] = 5.0;
    j["qa"]["min_shell_dirs"] = 12;
    j["qa"]["shell_range"] = {500.0, 1500.0};
    j["qa"]["target_b"] = 1000.0;
    j["qa"]["shell_tol"] = 50.0;

    j["combat"]["enabled"] = true;
    j["combat"]["features"] = {"mean_fa", "mean_md", "ticv", "roi_hippocampus"};

    j["gamlss"]["knots"] = 4;
    j["gamlss"]["lambda_grid"] = {1.0, 100.0};
    j["gamlss"]["age_grid"] = {15.0, 90.0, 5.0};
    j["gamlss"]["metrics"] = {"mean_fa", "roi_hippocampus"};

    j["inference"]["bootstrap_B"] = bootstrap_B;
    j["inference"]["seed"] = seed;
    j["inference"]["fdr_rate"] = 0.05;

    j["synth"]["seed"] = seed;
    j["synth"]["n_studies"] = 3;
    j["synth"]["subjects_per_study"] = 36;
    j["synth"]["sessions_per_subject"] = 1;
    j["synth"]["noise"] = "gg";
    j["synth"]["missing_age_fraction"] = 0.05;
    j["synth"]["missing_sex_fraction"] = 0.04;
    nlohmann::json metrics = nlohmann::json::array();
    auto metric = [](const char* name, double base, double slope, double sex_shift,
                     double group_shift, double sigma) {
        nlohmann::json m;
        m["name"] = name;
        m["base"] = base;
        m["slope"] = slope;
        m["sex_shift"] = sex_shift;
        m["group_shift"] = group_shift;
        m["sigma"] = sigma;
        m["site_gamma"] = {0.0, 1.2, -1.0};
        m["site_delta"] = {1.0, 1.2, 0.85};
        return m;
    };
    metrics.push_back(metric("mean_fa", -0.64, -0.002, 0.02, -0.01, 0.06));
    metrics.push_back(metric("mean_md", std::log(7.2e-4), 0.0012, -0.01, 0.015, 0.05));
    metrics.push_back(metric("ticv", std::log(1.45e6), -0.0005, 0.09, 0.0, 0.07));
    metrics.push_back(metric("roi_hippocampus", std::log(4300.0), -0.003, 0.05, -0.10, 0.08));
    j["synth"]["metrics"] = metrics;
    j["synth"]["phantoms"]["count"] = 2;
    j["synth"]["phantoms"]["dims"] = {5, 5, 5};
    j["synth"]["phantoms"]["n_dirs"] = 16;
    j["synth"]["phantoms"]["eigenvalues"] = {0.7e-3, 0.7e-3, 0.7e-3};
    return j.dump(2) + "\n";
}

inline pipeline::PipelineConfig bundled_config(const std::string& out_dir,
                                               std::uint64_t seed = 4242,
                                               int bootstrap_B = 10) {
    std::filesystem::create_directories(out_dir);
    std::string path = out_dir + "/config.json";
    pipeline::write_file_atomic(path, bundled_config_json(out_dir, seed, bootstrap_B));
    return pipeline::PipelineConfig::load_file(path);
}

inline void run_full_pipeline(const pipeline::PipelineConfig& cfg) {
    pipeline::cmd_synth(cfg);
    pipeline::cmd_ingest(cfg);
    pipeline::cmd_dti(cfg);
    pipeline::cmd_qa(cfg);
    pipeline::cmd_harmonize(cfg);
    pipeline::cmd_fit(cfg);
    pipeline::cmd_test(cfg);
    pipeline::cmd_report(cfg);
}

}  // namespace cohortforge::testing
