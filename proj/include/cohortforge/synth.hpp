#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cohortforge::synth {

// One synthetic metric's generating model. In "gg" noise mode the location is
// mu = exp(base + slope*age + quad*age^2 + sex_shift*sex + group_shift*group)
// with generalized Gamma noise; in "gaussian" mode the same terms act linearly
// in raw units with Normal noise. Site effects: gamma in residual-SD units
// (additive), delta multiplicative on the noise scale.
struct MetricSpec {
    std::string name;
    double base = 0.0;
    double slope = 0.0;
    double quad = 0.0;
    double sex_shift = 0.0;
    double group_shift = 0.0;
    double sigma = 0.1;
    double nu = 1.0;  // gg mode only
    std::vector<double> site_gamma;  // per study
    std::vector<double> site_delta;  // per study
};

struct PhantomSpec {
    int count = 0;  // sessions of the first study that get DWI phantoms
    std::array<int, 3> dims = {6, 6, 6};
    int n_dirs = 32;
    double b = 1000.0;
    std::array<double, 3> eigenvalues = {0.7e-3, 0.7e-3, 0.7e-3};
    double s0 = 1000.0;
    bool gzip = true;
};

struct SyntheticCohortSpec {
    int n_studies = 3;
    int subjects_per_study = 40;
    int sessions_per_subject = 1;
    std::uint64_t seed = 4242;
    std::string noise = "gg";  // "gg" or "gaussian"
    double case_fraction = 0.5;
    std::array<double, 2> age_range = {15.0, 90.0};
    double missing_age_fraction = 0.0;
    double missing_sex_fraction = 0.0;
    std::vector<MetricSpec> metrics;
    PhantomSpec phantoms;

    void validate() const;
    static SyntheticCohortSpec bundled_default();
};

struct SynthOutputs {
    std::vector<std::string> participant_files;  // one TSV per study
    std::string metrics_file;
    std::vector<std::string> dwi_files;
    std::string truth_file;
};

// Writes a fully deterministic cohort under out_dir: per-study participants
// TSVs, a metrics CSV, optional DWI phantoms built from the forward tensor
// model, and a truth JSON with everything that was injected.
SynthOutputs generate(const SyntheticCohortSpec& spec, const std::string& out_dir);

}  // namespace cohortforge::synth
