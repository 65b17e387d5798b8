#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cohortforge/synth.hpp"

namespace cohortforge::pipeline {

// Single config document for every stage. Numeric fields are validated
// against their ranges at load time; unknown keys are rejected.
struct PipelineConfig {
    struct ParticipantsFile {
        std::string study;
        std::string tsv;
    };

    // paths
    std::vector<ParticipantsFile> participants;
    std::string metrics_csv;
    std::string dwi_root;    // empty = no DWI stage inputs
    std::string masks_root;  // defaults to dwi_root
    std::string output_dir = "out";

    // ingest
    std::map<std::string, std::map<std::string, std::string>> column_maps;
    std::map<std::string, std::string> sex_synonyms;    // token -> female|male
    std::map<std::string, std::string> group_synonyms;  // token -> case|control

    // qa
    double outlier_k = 5.0;
    int min_shell_dirs = 12;
    std::array<double, 2> shell_range = {500.0, 1500.0};
    double target_b = 1000.0;
    double shell_tol = 50.0;
    bool outliers_after_harmonization = true;

    // combat
    bool combat_enabled = true;
    std::vector<std::string> combat_features = {"mean_fa", "mean_md", "ticv"};

    // gamlss
    int knots = 10;
    std::vector<double> lambda_grid;            // empty = 10^-3 .. 10^6
    std::array<double, 3> age_grid = {15.0, 90.0, 1.0};  // start, stop, step
    std::vector<std::string> fit_metrics;       // empty = every metric column
    std::string group_term = "mu";              // "mu" or "none"

    // inference
    int bootstrap_B = 200;
    std::uint64_t seed = 20260101;
    double fdr_rate = 0.05;
    bool anova_controls_only = true;
    int threads = 1;

    // synth
    bool has_synth = false;
    synth::SyntheticCohortSpec synth_spec;

    std::string config_file;  // set by load_file, hashed into manifests

    static PipelineConfig load(const std::string& json_bytes);
    static PipelineConfig load_file(const std::string& path);
    void validate() const;
};

void cmd_synth(const PipelineConfig& config);
void cmd_ingest(const PipelineConfig& config);
void cmd_dti(const PipelineConfig& config);
void cmd_qa(const PipelineConfig& config);
void cmd_harmonize(const PipelineConfig& config);
void cmd_fit(const PipelineConfig& config);
void cmd_test(const PipelineConfig& config);
void cmd_report(const PipelineConfig& config);

// Dispatches a subcommand name, mapping Error kinds onto exit codes:
// 0 success, 1 invalid input/config, 2 runtime failure.
int run_command(const std::string& command, const PipelineConfig& config);

// Shared file helpers (atomic write = temp file + rename).
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string crc32_hex(const std::string& bytes);

}  // namespace cohortforge::pipeline

namespace cohortforge::report {

// One metric's report: median curves per group at the reference sex, the
// bootstrap band, and the LRT q-value annotation. Pure string output.
struct BandSeries {
    std::vector<double> ages;
    std::vector<double> lower, upper, point;
};

std::string centile_svg(const std::string& metric,
                        const std::map<int, BandSeries>& series_by_group, double q_value,
                        double rate);

}  // namespace cohortforge::report
