#include "cohortforge/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cohortforge/dwi.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/gamlss.hpp"
#include "cohortforge/nifti.hpp"
#include "cohortforge/rng.hpp"
#include "cohortforge/textio.hpp"

namespace cohortforge::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticCohortSpec::validate() const {
    if (n_studies < 1) fail("BAD_SYNTH_SPEC", "n_studies must be >= 1");
    if (subjects_per_study < 1) fail("BAD_SYNTH_SPEC", "subjects_per_study must be >= 1");
    if (sessions_per_subject < 1) fail("BAD_SYNTH_SPEC", "sessions_per_subject must be >= 1");
    if (noise != "gg" && noise != "gaussian")
        fail("BAD_SYNTH_SPEC", "noise must be 'gg' or 'gaussian'");
    if (!(case_fraction >= 0.0 && case_fraction <= 1.0))
        fail("BAD_SYNTH_SPEC", "case_fraction must be in [0,1]");
    if (!(age_range[0] < age_range[1]) || age_range[0] < 0.0 || age_range[1] > 130.0)
        fail("BAD_SYNTH_SPEC", "age_range must be increasing within [0,130]");
    if (metrics.empty()) fail("BAD_SYNTH_SPEC", "at least one metric is required");
    for (const auto& m : metrics) {
        if (m.name.empty()) fail("BAD_SYNTH_SPEC", "metric name must not be empty");
        if (!(m.sigma > 0.0)) fail("BAD_SYNTH_SPEC", "metric sigma must be > 0");
        if (m.nu == 0.0) fail("BAD_SYNTH_SPEC", "metric nu must be nonzero");
        if (static_cast<int>(m.site_gamma.size()) != n_studies ||
            static_cast<int>(m.site_delta.size()) != n_studies)
            fail("BAD_SYNTH_SPEC",
                 "site_gamma/site_delta must list one value per study for '" + m.name + "'");
        for (double d : m.site_delta)
            if (!(d > 0.0)) fail("BAD_SYNTH_SPEC", "site_delta values must be > 0");
    }
    if (phantoms.count > 0) {
        if (phantoms.n_dirs < 6) fail("BAD_SYNTH_SPEC", "phantoms need >= 6 directions");
        for (int d : phantoms.dims)
            if (d < 2) fail("BAD_SYNTH_SPEC", "phantom dims must be >= 2");
    }
}

SyntheticCohortSpec SyntheticCohortSpec::bundled_default() {
    SyntheticCohortSpec s;
    s.n_studies = 3;
    s.subjects_per_study = 40;
    s.sessions_per_subject = 1;
    s.seed = 4242;
    s.noise = "gg";
    s.missing_age_fraction = 0.05;
    s.missing_sex_fraction = 0.03;

    MetricSpec fa;
    fa.name = "mean_fa";
    fa.base = -0.64;
    fa.slope = -0.002;
    fa.sex_shift = 0.02;
    fa.group_shift = -0.01;
    fa.sigma = 0.06;
    fa.site_gamma = {0.0, 0.5, -0.4};
    fa.site_delta = {1.0, 1.2, 0.85};

    MetricSpec md;
    md.name = "mean_md";
    md.base = std::log(7.2e-4);
    md.slope = 0.0012;
    md.sex_shift = -0.01;
    md.group_shift = 0.015;
    md.sigma = 0.05;
    md.site_gamma = {0.0, 0.6, -0.35};
    md.site_delta = {1.0, 1.1, 0.9};

    MetricSpec ticv;
    ticv.name = "ticv";
    ticv.base = std::log(1.45e6);
    ticv.slope = -0.0005;
    ticv.sex_shift = 0.09;
    ticv.group_shift = 0.0;
    ticv.sigma = 0.07;
    ticv.site_gamma = {0.0, 0.45, -0.5};
    ticv.site_delta = {1.0, 1.15, 0.9};

    MetricSpec roi;
    roi.name = "roi_hippocampus";
    roi.base = std::log(4300.0);
    roi.slope = -0.003;
    roi.sex_shift = 0.05;
    roi.group_shift = -0.08;  // clear case effect for the report
    roi.sigma = 0.09;
    roi.site_gamma = {0.0, 0.55, -0.45};
    roi.site_delta = {1.0, 1.2, 0.8};

    s.metrics = {fa, md, ticv, roi};
    s.phantoms.count = 4;
    return s;
}

namespace {

void write_file(const std::string& path, const std::string& bytes) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) fail("IO", "cannot write " + tmp, ErrorKind::runtime);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    fs::rename(tmp, path);
}

std::vector<std::array<double, 3>> sphere_directions(int n) {
    std::vector<std::array<double, 3>> dirs;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        double z = 1.0 - 2.0 * (i + 0.5) / n;
        double r = std::sqrt(1.0 - z * z);
        double phi = golden * i;
        dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
    }
    return dirs;
}

}  // namespace

SynthOutputs generate(const SyntheticCohortSpec& spec, const std::string& out_dir) {
    spec.validate();
    SynthOutputs outputs;
    fs::create_directories(out_dir);

    json truth;
    truth["seed"] = spec.seed;
    truth["noise"] = spec.noise;
    json truth_sessions = json::array();

    std::string metrics_csv = "subject_id,session_id";
    for (const auto& m : spec.metrics) metrics_csv += "," + m.name;
    metrics_csv += '\n';

    struct PhantomTarget {
        std::string subject, session;
    };
    std::vector<PhantomTarget> phantom_targets;

    for (int study = 0; study < spec.n_studies; ++study) {
        std::string study_id = "SITE_" + std::string(1, static_cast<char>('A' + study % 26)) +
                               (study >= 26 ? std::to_string(study / 26) : "");
        std::string tsv =
            "participant_id\tsession_id\tage\tsex\tgroup\tgcs\thas_t1w\thas_dwi\n";

        for (int subj = 0; subj < spec.subjects_per_study; ++subj) {
            std::uint64_t subject_stream =
                (static_cast<std::uint64_t>(study) * 1000003ULL + subj) * 131ULL;
            Rng subj_rng(spec.seed, subject_stream);
            std::string subject_id =
                "S" + std::to_string(study) + "-sub-" + std::to_string(subj);
            double age = subj_rng.uniform(spec.age_range[0], spec.age_range[1]);
            bool male = subj_rng.uniform() < 0.5;
            bool is_case = subj_rng.uniform() < spec.case_fraction;
            bool missing_age = subj_rng.uniform() < spec.missing_age_fraction;
            bool missing_sex = subj_rng.uniform() < spec.missing_sex_fraction;
            int gcs = is_case ? 3 + static_cast<int>(subj_rng.below(13)) : 15;

            for (int sess = 0; sess < spec.sessions_per_subject; ++sess) {
                std::string session_id = "ses-" + std::to_string(sess + 1);
                bool has_phantom = study == 0 &&
                                   static_cast<int>(phantom_targets.size()) < spec.phantoms.count;
                if (has_phantom) phantom_targets.push_back({subject_id, session_id});

                tsv += subject_id + '\t' + session_id + '\t';
                tsv += missing_age ? "" : format_double(age);
                tsv += '\t';
                tsv += missing_sex ? "n/a" : (male ? "M" : "F");
                tsv += '\t';
                tsv += is_case ? "TBI" : "control";
                tsv += '\t' + std::to_string(gcs) + "\t1\t";
                tsv += has_phantom ? "1" : "0";
                tsv += '\n';

                Rng sess_rng(spec.seed, subject_stream + 7919ULL * (sess + 1));
                metrics_csv += subject_id + "," + session_id;
                json row_truth;
                row_truth["subject_id"] = subject_id;
                row_truth["study_id"] = study_id;
                row_truth["age"] = age;
                row_truth["sex"] = male ? "male" : "female";
                row_truth["group"] = is_case ? "case" : "control";
                for (const auto& m : spec.metrics) {
                    double value;
                    if (spec.noise == "gg") {
                        double eta = m.base + m.slope * age + m.quad * age * age +
                                     (male ? m.sex_shift : 0.0) +
                                     (is_case ? m.group_shift : 0.0);
                        gamlss::GGParams p{std::exp(eta), m.sigma, m.nu};
                        double y0 = gamlss::gg_quantile(sess_rng.uniform(), p);
                        // Site effects on the log scale: additive gamma in
                        // sigma units, delta stretches residuals around mu.
                        double log_resid = std::log(y0) - std::log(p.mu);
                        value = std::exp(std::log(p.mu) + m.sigma * m.site_gamma[study] +
                                         m.site_delta[study] * log_resid);
                    } else {
                        double mean = m.base + m.slope * age + m.quad * age * age +
                                      (male ? m.sex_shift : 0.0) +
                                      (is_case ? m.group_shift : 0.0);
                        double eps = sess_rng.normal();
                        value = mean + m.sigma * (m.site_gamma[study] +
                                                  m.site_delta[study] * eps);
                    }
                    metrics_csv += "," + format_double(value);
                }
                metrics_csv += '\n';
                truth_sessions.push_back(std::move(row_truth));
            }
        }
        std::string path = out_dir + "/participants_" + study_id + ".tsv";
        write_file(path, tsv);
        outputs.participant_files.push_back(path);
    }

    outputs.metrics_file = out_dir + "/metrics.csv";
    write_file(outputs.metrics_file, metrics_csv);

    // DWI phantoms from the forward tensor model.
    if (spec.phantoms.count > 0) {
        auto dirs = sphere_directions(spec.phantoms.n_dirs);
        dwi::GradientScheme scheme;
        scheme.bvals.push_back(0.0);
        scheme.bvecs.push_back({0, 0, 0});
        scheme.bvals.push_back(0.0);
        scheme.bvecs.push_back({0, 0, 0});
        for (const auto& d : dirs) {
            scheme.bvals.push_back(spec.phantoms.b);
            scheme.bvecs.push_back(d);
        }
        std::string bval, bx, by, bz;
        for (size_t i = 0; i < scheme.size(); ++i) {
            if (i) {
                bval += ' ';
                bx += ' ';
                by += ' ';
                bz += ' ';
            }
            bval += format_double(scheme.bvals[i]);
            bx += format_double(scheme.bvecs[i][0]);
            by += format_double(scheme.bvecs[i][1]);
            bz += format_double(scheme.bvecs[i][2]);
        }
        std::string bvec = bx + "\n" + by + "\n" + bz + "\n";

        const auto& ev = spec.phantoms.eigenvalues;
        std::vector<double> signals;
        for (size_t i = 0; i < scheme.size(); ++i) {
            const auto& g = scheme.bvecs[i];
            double quad = ev[0] * g[0] * g[0] + ev[1] * g[1] * g[1] + ev[2] * g[2] * g[2];
            signals.push_back(spec.phantoms.s0 * std::exp(-scheme.bvals[i] * quad));
        }

        dwi::Volume vol;
        vol.ndim = 4;
        vol.dims = {spec.phantoms.dims[0], spec.phantoms.dims[1], spec.phantoms.dims[2],
                    static_cast<int>(scheme.size())};
        vol.voxel_size = {1.0, 1.0, 1.0};
        size_t nvox = vol.nvox_per_volume();
        vol.data.resize(vol.nvox());
        for (size_t v = 0; v < scheme.size(); ++v)
            for (size_t i = 0; i < nvox; ++i) vol.data[v * nvox + i] = signals[v];

        dwi::Volume mask;
        mask.ndim = 3;
        mask.dims = {vol.dims[0], vol.dims[1], vol.dims[2], 1};
        mask.voxel_size = vol.voxel_size;
        mask.data.assign(nvox, 1.0);

        std::string dwi_bytes = dwi::write_nifti(vol, dwi::kFloat32);
        std::string mask_bytes = dwi::write_nifti(mask, dwi::kUint8);
        if (spec.phantoms.gzip) {
            dwi_bytes = dwi::gzip_compress(dwi_bytes);
            mask_bytes = dwi::gzip_compress(mask_bytes);
        }
        std::string ext = spec.phantoms.gzip ? ".nii.gz" : ".nii";
        for (const auto& target : phantom_targets) {
            std::string stem = out_dir + "/dwi/" + target.subject + "_" + target.session;
            write_file(stem + "_dwi" + ext, dwi_bytes);
            write_file(stem + "_mask" + ext, mask_bytes);
            write_file(stem + ".bval", bval + "\n");
            write_file(stem + ".bvec", bvec);
            outputs.dwi_files.push_back(stem + "_dwi" + ext);
        }
        truth["phantom_md"] = (ev[0] + ev[1] + ev[2]) / 3.0;
        truth["phantom_count"] = spec.phantoms.count;
    }

    truth["sessions"] = std::move(truth_sessions);
    outputs.truth_file = out_dir + "/synth_truth.json";
    write_file(outputs.truth_file, truth.dump(2) + "\n");
    return outputs;
}

}  // namespace cohortforge::synth
