#include "cohortforge/pipeline.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cohortforge/combat.hpp"
#include "cohortforge/dwi.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/gamlss.hpp"
#include "cohortforge/inference.hpp"
#include "cohortforge/log.hpp"
#include "cohortforge/qa.hpp"
#include "cohortforge/textio.hpp"

namespace cohortforge::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("MISSING_STAGE_INPUT", "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
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

std::string crc32_hex(const std::string& bytes) {
    uLong crc = ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
                        static_cast<uInt>(bytes.size()));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

namespace {

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail("BAD_CONFIG", where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* key : allowed)
            if (it.key() == key) ok = true;
        if (!ok) fail("BAD_CONFIG", "unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

synth::SyntheticCohortSpec parse_synth(const json& j) {
    check_keys(j, "synth",
               {"n_studies", "subjects_per_study", "sessions_per_subject", "seed", "noise",
                "case_fraction", "age_range", "missing_age_fraction",
                "missing_sex_fraction", "metrics", "phantoms"});
    synth::SyntheticCohortSpec s;
    s.n_studies = get_or(j, "n_studies", s.n_studies);
    s.subjects_per_study = get_or(j, "subjects_per_study", s.subjects_per_study);
    s.sessions_per_subject = get_or(j, "sessions_per_subject", s.sessions_per_subject);
    s.seed = get_or(j, "seed", s.seed);
    s.noise = get_or(j, "noise", s.noise);
    s.case_fraction = get_or(j, "case_fraction", s.case_fraction);
    if (j.contains("age_range"))
        s.age_range = {j["age_range"].at(0).get<double>(), j["age_range"].at(1).get<double>()};
    s.missing_age_fraction = get_or(j, "missing_age_fraction", s.missing_age_fraction);
    s.missing_sex_fraction = get_or(j, "missing_sex_fraction", s.missing_sex_fraction);
    if (j.contains("metrics")) {
        s.metrics.clear();
        for (const auto& mj : j.at("metrics")) {
            check_keys(mj, "synth.metrics[]",
                       {"name", "base", "slope", "quad", "sex_shift", "group_shift",
                        "sigma", "nu", "site_gamma", "site_delta"});
            synth::MetricSpec m;
            m.name = mj.at("name").get<std::string>();
            m.base = get_or(mj, "base", 0.0);
            m.slope = get_or(mj, "slope", 0.0);
            m.quad = get_or(mj, "quad", 0.0);
            m.sex_shift = get_or(mj, "sex_shift", 0.0);
            m.group_shift = get_or(mj, "group_shift", 0.0);
            m.sigma = get_or(mj, "sigma", 0.1);
            m.nu = get_or(mj, "nu", 1.0);
            m.site_gamma = mj.at("site_gamma").get<std::vector<double>>();
            m.site_delta = mj.at("site_delta").get<std::vector<double>>();
            s.metrics.push_back(std::move(m));
        }
    }
    if (j.contains("phantoms")) {
        const auto& pj = j.at("phantoms");
        check_keys(pj, "synth.phantoms",
                   {"count", "dims", "n_dirs", "b", "eigenvalues", "s0", "gzip"});
        s.phantoms.count = get_or(pj, "count", 0);
        if (pj.contains("dims"))
            s.phantoms.dims = {pj["dims"].at(0).get<int>(), pj["dims"].at(1).get<int>(),
                               pj["dims"].at(2).get<int>()};
        s.phantoms.n_dirs = get_or(pj, "n_dirs", 32);
        s.phantoms.b = get_or(pj, "b", 1000.0);
        if (pj.contains("eigenvalues"))
            s.phantoms.eigenvalues = {pj["eigenvalues"].at(0).get<double>(),
                                      pj["eigenvalues"].at(1).get<double>(),
                                      pj["eigenvalues"].at(2).get<double>()};
        s.phantoms.s0 = get_or(pj, "s0", 1000.0);
        s.phantoms.gzip = get_or(pj, "gzip", true);
    }
    return s;
}

}  // namespace

PipelineConfig PipelineConfig::load(const std::string& json_bytes) {
    json j;
    try {
        j = json::parse(json_bytes);
    } catch (const json::exception& e) {
        fail("BAD_CONFIG", std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "config",
               {"paths", "ingest", "qa", "combat", "gamlss", "inference", "synth"});
    PipelineConfig cfg;

    if (j.contains("paths")) {
        const auto& pj = j.at("paths");
        check_keys(pj, "paths",
                   {"participants", "metrics_csv", "dwi_root", "masks_root", "output_dir"});
        if (pj.contains("participants")) {
            for (const auto& e : pj.at("participants")) {
                check_keys(e, "paths.participants[]", {"study", "tsv"});
                ParticipantsFile f;
                f.study = e.at("study").get<std::string>();
                f.tsv = e.at("tsv").get<std::string>();
                if (f.study.empty() || f.tsv.empty())
                    fail("BAD_CONFIG", "participants entries need study and tsv");
                cfg.participants.push_back(std::move(f));
            }
        }
        cfg.metrics_csv = get_or(pj, "metrics_csv", std::string());
        cfg.dwi_root = get_or(pj, "dwi_root", std::string());
        cfg.masks_root = get_or(pj, "masks_root", std::string());
        cfg.output_dir = get_or(pj, "output_dir", cfg.output_dir);
    }
    if (cfg.masks_root.empty()) cfg.masks_root = cfg.dwi_root;

    if (j.contains("ingest")) {
        const auto& ij = j.at("ingest");
        check_keys(ij, "ingest", {"column_maps", "sex_synonyms", "group_synonyms"});
        if (ij.contains("column_maps"))
            cfg.column_maps =
                ij["column_maps"]
                    .get<std::map<std::string, std::map<std::string, std::string>>>();
        if (ij.contains("sex_synonyms"))
            cfg.sex_synonyms = ij["sex_synonyms"].get<std::map<std::string, std::string>>();
        if (ij.contains("group_synonyms"))
            cfg.group_synonyms =
                ij["group_synonyms"].get<std::map<std::string, std::string>>();
    }

    if (j.contains("qa")) {
        const auto& qj = j.at("qa");
        check_keys(qj, "qa",
                   {"outlier_k", "min_shell_dirs", "shell_range", "target_b", "shell_tol",
                    "outliers_after_harmonization"});
        cfg.outlier_k = get_or(qj, "outlier_k", cfg.outlier_k);
        cfg.min_shell_dirs = get_or(qj, "min_shell_dirs", cfg.min_shell_dirs);
        if (qj.contains("shell_range"))
            cfg.shell_range = {qj["shell_range"].at(0).get<double>(),
                               qj["shell_range"].at(1).get<double>()};
        cfg.target_b = get_or(qj, "target_b", cfg.target_b);
        cfg.shell_tol = get_or(qj, "shell_tol", cfg.shell_tol);
        cfg.outliers_after_harmonization =
            get_or(qj, "outliers_after_harmonization", cfg.outliers_after_harmonization);
    }

    if (j.contains("combat")) {
        const auto& cj = j.at("combat");
        check_keys(cj, "combat", {"enabled", "features"});
        cfg.combat_enabled = get_or(cj, "enabled", cfg.combat_enabled);
        if (cj.contains("features"))
            cfg.combat_features = cj["features"].get<std::vector<std::string>>();
    }

    if (j.contains("gamlss")) {
        const auto& gj = j.at("gamlss");
        check_keys(gj, "gamlss",
                   {"knots", "lambda_grid", "age_grid", "metrics", "group_term"});
        cfg.knots = get_or(gj, "knots", cfg.knots);
        if (gj.contains("lambda_grid"))
            cfg.lambda_grid = gj["lambda_grid"].get<std::vector<double>>();
        if (gj.contains("age_grid"))
            cfg.age_grid = {gj["age_grid"].at(0).get<double>(),
                            gj["age_grid"].at(1).get<double>(),
                            gj["age_grid"].at(2).get<double>()};
        if (gj.contains("metrics"))
            cfg.fit_metrics = gj["metrics"].get<std::vector<std::string>>();
        cfg.group_term = get_or(gj, "group_term", cfg.group_term);
    }

    if (j.contains("inference")) {
        const auto& ij = j.at("inference");
        check_keys(ij, "inference",
                   {"bootstrap_B", "seed", "fdr_rate", "anova_controls_only", "threads"});
        cfg.bootstrap_B = get_or(ij, "bootstrap_B", cfg.bootstrap_B);
        cfg.seed = get_or(ij, "seed", cfg.seed);
        cfg.fdr_rate = get_or(ij, "fdr_rate", cfg.fdr_rate);
        cfg.anova_controls_only = get_or(ij, "anova_controls_only", cfg.anova_controls_only);
        cfg.threads = get_or(ij, "threads", cfg.threads);
    }

    if (j.contains("synth")) {
        cfg.has_synth = true;
        cfg.synth_spec = parse_synth(j.at("synth"));
    }

    cfg.validate();
    return cfg;
}

PipelineConfig PipelineConfig::load_file(const std::string& path) {
    PipelineConfig cfg = load(read_file(path));
    cfg.config_file = path;
    return cfg;
}

void PipelineConfig::validate() const {
    if (!(outlier_k > 0.0)) fail("BAD_CONFIG", "qa.outlier_k must be > 0");
    if (min_shell_dirs < 1) fail("BAD_CONFIG", "qa.min_shell_dirs must be >= 1");
    if (!(shell_range[0] >= 0.0 && shell_range[0] < shell_range[1]))
        fail("BAD_CONFIG", "qa.shell_range must be increasing and nonnegative");
    if (!(target_b > 0.0)) fail("BAD_CONFIG", "qa.target_b must be > 0");
    if (!(shell_tol > 0.0)) fail("BAD_CONFIG", "qa.shell_tol must be > 0");
    if (combat_enabled && combat_features.empty())
        fail("BAD_CONFIG", "combat.features must be nonempty when combat is enabled");
    if (knots < 0) fail("BAD_CONFIG", "gamlss.knots must be >= 0");
    for (double l : lambda_grid)
        if (!(l >= 0.0)) fail("BAD_CONFIG", "gamlss.lambda_grid values must be >= 0");
    if (!(age_grid[0] < age_grid[1]) || !(age_grid[2] > 0.0))
        fail("BAD_CONFIG", "gamlss.age_grid must be [start < stop, step > 0]");
    if (group_term != "mu" && group_term != "none")
        fail("BAD_CONFIG", "gamlss.group_term must be 'mu' or 'none'");
    if (bootstrap_B < 1) fail("BAD_CONFIG", "inference.bootstrap_B must be >= 1");
    if (!(fdr_rate > 0.0 && fdr_rate < 1.0))
        fail("BAD_CONFIG", "inference.fdr_rate must be inside (0, 1)");
    if (threads < 1) fail("BAD_CONFIG", "inference.threads must be >= 1");
    if (output_dir.empty()) fail("BAD_CONFIG", "paths.output_dir must be set");
    if (has_synth) synth_spec.validate();
}

namespace {

std::string stage_dir(const PipelineConfig& cfg, const std::string& stage) {
    return cfg.output_dir + "/" + stage;
}

std::string iso_timestamp() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Run manifest: config hash, input hashes, version, timestamp. The manifest is
// the only artifact that carries a timestamp.
void write_manifest(const PipelineConfig& cfg, const std::string& stage,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    json m;
    m["stage"] = stage;
    m["version"] = "0.1.0";
    m["config_crc32"] =
        cfg.config_file.empty() ? "-" : crc32_hex(read_file(cfg.config_file));
    json in = json::object();
    for (const auto& path : inputs) in[path] = crc32_hex(read_file(path));
    m["inputs"] = in;
    m["outputs"] = outputs;
    m["timestamp_utc"] = iso_timestamp();
    write_file_atomic(stage_dir(cfg, stage) + "/manifest.json", m.dump(2) + "\n");
}

CdeNormalizer make_normalizer(const PipelineConfig& cfg) {
    CdeNormalizer norm;
    for (const auto& [token, value] : cfg.sex_synonyms) {
        if (value == "female")
            norm.add_sex_synonym(token, Sex::female);
        else if (value == "male")
            norm.add_sex_synonym(token, Sex::male);
        else
            fail("BAD_CONFIG", "sex synonym value must be female or male");
    }
    for (const auto& [token, value] : cfg.group_synonyms) {
        if (value == "case")
            norm.add_group_synonym(token, Group::case_);
        else if (value == "control")
            norm.add_group_synonym(token, Group::control);
        else
            fail("BAD_CONFIG", "group synonym value must be case or control");
    }
    return norm;
}

struct DtiRow {
    std::string subject_id, session_id, status;
    bool shell_sufficient = false;
};

std::map<std::pair<std::string, std::string>, DtiRow> read_dti_rows(const std::string& csv) {
    auto table = parse_delimited(csv, ',', "CSV");
    int subj = table.column("subject_id");
    int sess = table.column("session_id");
    int suff = table.column("shell_sufficient");
    int status = table.column("status");
    std::map<std::pair<std::string, std::string>, DtiRow> rows;
    for (const auto& r : table.rows) {
        DtiRow d;
        d.subject_id = r[subj];
        d.session_id = r[sess];
        d.status = r[status];
        d.shell_sufficient = r[suff] == "1";
        rows[{d.subject_id, d.session_id}] = d;
    }
    return rows;
}

gamlss::ModelSpec make_gamlss_spec(const PipelineConfig& cfg) {
    gamlss::ModelSpec spec;
    spec.mu.spline_age = true;
    spec.mu.sex = true;
    spec.mu.group = cfg.group_term == "mu";
    spec.mu.select_lambda = true;
    spec.sigma.spline_age = true;
    spec.sigma.select_lambda = true;
    spec.n_interior_knots = cfg.knots;
    spec.lambda_grid = cfg.lambda_grid;
    return spec;
}

std::vector<double> age_grid_points(const PipelineConfig& cfg) {
    std::vector<double> ages;
    for (double a = cfg.age_grid[0]; a <= cfg.age_grid[1] + 1e-9; a += cfg.age_grid[2])
        ages.push_back(a);
    return ages;
}

// Rows usable for one metric's model: cell present, covariates known.
std::vector<infer::BootstrapRow> metric_rows(const MetricTable& table, int col) {
    std::vector<infer::BootstrapRow> rows;
    for (size_t r = 0; r < table.n_rows(); ++r) {
        const auto& rec = table.rows[r];
        if (!table.cell(r, col) || !rec.age || rec.sex == Sex::unknown ||
            rec.group == Group::unknown)
            continue;
        infer::BootstrapRow br;
        br.subject_id = rec.subject_id;
        br.study_id = rec.study_id;
        br.row.y = *table.cell(r, col);
        br.row.age = *rec.age;
        br.row.sex = rec.sex == Sex::male ? 1 : 0;
        br.row.group = rec.group == Group::case_ ? 1 : 0;
        rows.push_back(std::move(br));
    }
    return rows;
}

std::vector<std::string> metrics_to_fit(const PipelineConfig& cfg,
                                        const MetricTable& table) {
    if (!cfg.fit_metrics.empty()) return cfg.fit_metrics;
    return table.metrics;
}

std::string model_path(const PipelineConfig& cfg, const std::string& metric,
                       bool null_model) {
    return stage_dir(cfg, "fit") + "/model_" + metric + (null_model ? "_null" : "") +
           ".json";
}

}  // namespace

void cmd_synth(const PipelineConfig& cfg) {
    if (!cfg.has_synth) fail("BAD_CONFIG", "config has no synth section");
    auto outputs = synth::generate(cfg.synth_spec, stage_dir(cfg, "synth"));
    std::vector<std::string> names = outputs.participant_files;
    names.push_back(outputs.metrics_file);
    names.push_back(outputs.truth_file);
    write_manifest(cfg, "synth", {}, names);
}

void cmd_ingest(const PipelineConfig& cfg) {
    if (cfg.participants.empty())
        fail("BAD_CONFIG", "paths.participants is empty");
    if (cfg.metrics_csv.empty()) fail("BAD_CONFIG", "paths.metrics_csv is not set");

    CdeNormalizer norm = make_normalizer(cfg);
    IngestReport report;
    std::vector<SessionRecord> records;
    std::vector<std::string> inputs;
    for (const auto& pf : cfg.participants) {
        inputs.push_back(pf.tsv);
        ColumnMap map;
        auto it = cfg.column_maps.find(pf.study);
        if (it != cfg.column_maps.end()) map.columns = it->second;
        auto batch = parse_participants(read_file(pf.tsv), pf.study, map, norm, &report);
        records.insert(records.end(), batch.begin(), batch.end());
    }
    inputs.push_back(cfg.metrics_csv);
    MetricTable table = merge_metrics(records, read_file(cfg.metrics_csv), &report);

    std::string dir = stage_dir(cfg, "ingest");
    write_file_atomic(dir + "/cohort.json", write_cohort_json(records));
    write_file_atomic(dir + "/metric_table.csv", write_metric_table_csv(table));
    json rj;
    rj["n_sessions"] = records.size();
    rj["n_table_rows"] = table.n_rows();
    rj["warnings"] = report.warnings;
    rj["dropped_metric_rows"] = report.dropped_rows;
    write_file_atomic(dir + "/report.json", rj.dump(2) + "\n");
    write_manifest(cfg, "ingest", inputs,
                   {"cohort.json", "metric_table.csv", "report.json"});
}

void cmd_dti(const PipelineConfig& cfg) {
    if (cfg.dwi_root.empty()) fail("BAD_CONFIG", "paths.dwi_root is not set");
    if (!fs::is_directory(cfg.dwi_root))
        fail("MISSING_STAGE_INPUT", "dwi root " + cfg.dwi_root + " does not exist");

    dwi::DwiConfig dcfg;
    dcfg.shell_tol = cfg.shell_tol;
    dcfg.target_b = cfg.target_b;
    dcfg.shell_lo = cfg.shell_range[0];
    dcfg.shell_hi = cfg.shell_range[1];
    dcfg.min_shell_dirs = cfg.min_shell_dirs;

    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(cfg.dwi_root))
        if (entry.path().extension() == ".bval")
            stems.push_back(entry.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty())
        fail("MISSING_STAGE_INPUT", "no .bval files under " + cfg.dwi_root);

    auto find_image = [&](const std::string& root, const std::string& base) -> std::string {
        for (const char* ext : {".nii.gz", ".nii"}) {
            std::string p = root + "/" + base + ext;
            if (fs::exists(p)) return p;
        }
        return {};
    };

    std::string csv =
        "subject_id,session_id,mean_fa,mean_md,ticv,n_mask_voxels,n_clamped_voxels,"
        "shell_b,n_dirs_used,shell_sufficient,shell_count,status\n";
    std::vector<std::string> inputs;
    for (const auto& stem : stems) {
        auto split = stem.rfind('_');
        std::string subject = split == std::string::npos ? stem : stem.substr(0, split);
        std::string session = split == std::string::npos ? "ses-1" : stem.substr(split + 1);
        std::string row = subject + "," + session + ",";
        try {
            std::string bval_path = cfg.dwi_root + "/" + stem + ".bval";
            std::string bvec_path = cfg.dwi_root + "/" + stem + ".bvec";
            std::string dwi_path = find_image(cfg.dwi_root, stem + "_dwi");
            std::string mask_path = find_image(cfg.masks_root, stem + "_mask");
            if (dwi_path.empty() || mask_path.empty())
                fail("MISSING_STAGE_INPUT", "missing image or mask for " + stem);
            inputs.push_back(bval_path);
            inputs.push_back(bvec_path);
            auto scheme = dwi::read_bval_bvec(read_file(bval_path), read_file(bvec_path));
            auto vol = dwi::read_nifti(read_file(dwi_path));
            auto mask = dwi::read_nifti(read_file(mask_path));
            auto m = dwi::compute_session_metrics(vol, scheme, mask, dcfg);
            row += format_double(m.mean_fa) + "," + format_double(m.mean_md) + "," +
                   format_double(m.ticv) + "," + std::to_string(m.n_mask_voxels) + "," +
                   std::to_string(m.n_clamped_voxels) + "," + format_double(m.shell_b) +
                   "," + std::to_string(m.n_dirs_used) + "," +
                   (m.shell_sufficient ? "1" : "0") + "," +
                   std::to_string(m.shell_count) + ",ok";
        } catch (const Error& e) {
            logging::warn("dti session ", stem, " failed: ", e.what());
            row += ",,,,,,,0,0,error:" + e.code();
        }
        csv += row + '\n';
    }
    write_file_atomic(stage_dir(cfg, "dti") + "/dti_metrics.csv", csv);
    write_manifest(cfg, "dti", inputs, {"dti_metrics.csv"});
}

void cmd_qa(const PipelineConfig& cfg) {
    std::string cohort_path = stage_dir(cfg, "ingest") + "/cohort.json";
    std::string table_path = stage_dir(cfg, "ingest") + "/metric_table.csv";
    auto records = read_cohort_json(read_file(cohort_path));
    auto table = read_metric_table_csv(read_file(table_path));

    std::vector<std::string> inputs = {cohort_path, table_path};
    std::map<std::pair<std::string, std::string>, DtiRow> dti_rows;
    std::string dti_path = stage_dir(cfg, "dti") + "/dti_metrics.csv";
    if (fs::exists(dti_path)) {
        dti_rows = read_dti_rows(read_file(dti_path));
        inputs.push_back(dti_path);
    }

    std::vector<qa::QaDecision> decisions;
    std::set<std::pair<std::string, std::string>> included;
    for (const auto& rec : records) {
        qa::QaDecision d = qa::check_inclusion(rec);
        auto it = dti_rows.find({rec.subject_id, rec.session_id});
        if (it != dti_rows.end() &&
            (it->second.status != "ok" || !it->second.shell_sufficient)) {
            d.reasons.push_back(qa::kInsufficientShell);
            d.include = false;
        }
        if (d.include) included.insert({rec.subject_id, rec.session_id});
        decisions.push_back(std::move(d));
    }

    MetricTable filtered;
    filtered.metrics = table.metrics;
    for (size_t r = 0; r < table.n_rows(); ++r)
        if (included.count({table.rows[r].subject_id, table.rows[r].session_id})) {
            filtered.rows.push_back(table.rows[r]);
            filtered.cells.push_back(table.cells[r]);
        }

    std::string dir = stage_dir(cfg, "qa");
    write_file_atomic(dir + "/qa_decisions.csv", qa::write_qa_csv(decisions));
    write_file_atomic(dir + "/qa_summary.json", qa::write_qa_summary_json(decisions));
    write_file_atomic(dir + "/qa_metric_table.csv", write_metric_table_csv(filtered));
    write_manifest(cfg, "qa", inputs,
                   {"qa_decisions.csv", "qa_summary.json", "qa_metric_table.csv"});
}

void cmd_harmonize(const PipelineConfig& cfg) {
    std::string table_path = stage_dir(cfg, "qa") + "/qa_metric_table.csv";
    MetricTable table = read_metric_table_csv(read_file(table_path));

    std::string dir = stage_dir(cfg, "harmonize");
    std::vector<std::string> outputs = {"harmonized_table.csv", "outliers.csv",
                                        "outliers.json"};
    std::vector<std::string> warnings;
    qa::OutlierReport outlier_report;

    auto run_rejection = [&](MetricTable& t) {
        auto [filtered, report] = qa::reject_outliers(t, cfg.outlier_k);
        t = std::move(filtered);
        outlier_report = std::move(report);
    };

    if (!cfg.outliers_after_harmonization) run_rejection(table);
    if (cfg.combat_enabled) {
        auto model = combat::fit(table, cfg.combat_features, {}, &warnings);
        table = combat::apply(model, table);
        write_file_atomic(dir + "/combat_model.json", combat::to_json(model));
        outputs.push_back("combat_model.json");
    }
    if (cfg.outliers_after_harmonization) run_rejection(table);

    write_file_atomic(dir + "/harmonized_table.csv", write_metric_table_csv(table));
    write_file_atomic(dir + "/outliers.csv", qa::write_outlier_csv(outlier_report));
    write_file_atomic(dir + "/outliers.json",
                      qa::write_outlier_summary_json(outlier_report));
    json wj;
    wj["warnings"] = warnings;
    write_file_atomic(dir + "/warnings.json", wj.dump(2) + "\n");
    outputs.push_back("warnings.json");
    write_manifest(cfg, "harmonize", {table_path}, outputs);
}

void cmd_fit(const PipelineConfig& cfg) {
    if (cfg.combat_enabled &&
        !fs::exists(stage_dir(cfg, "harmonize") + "/harmonized_table.csv"))
        fail("MISSING_STAGE_INPUT",
             "harmonize output not found; run the harmonize stage first");
    std::string table_path = stage_dir(cfg, "harmonize") + "/harmonized_table.csv";
    MetricTable table = read_metric_table_csv(read_file(table_path));

    std::string dir = stage_dir(cfg, "fit");
    std::vector<std::string> outputs;
    std::vector<double> ages = age_grid_points(cfg);

    std::string centiles_csv =
        "metric,age,sex,group,p5,p50,p95,extrapolated\n";
    for (const auto& metric : metrics_to_fit(cfg, table)) {
        int col = table.metric_index(metric);
        if (col < 0) fail("BAD_CONFIG", "fit metric '" + metric + "' is not in the table");
        auto rows = metric_rows(table, col);
        std::vector<gamlss::FitRow> fit_rows;
        for (const auto& br : rows) fit_rows.push_back(br.row);

        gamlss::ModelSpec spec = make_gamlss_spec(cfg);
        auto fits = gamlss::fit_nested(fit_rows, spec);
        const gamlss::GamlssModel& full = fits.full;

        write_file_atomic(model_path(cfg, metric, false), gamlss::to_json(full));
        write_file_atomic(model_path(cfg, metric, true), gamlss::to_json(fits.null));
        outputs.push_back("model_" + metric + ".json");
        outputs.push_back("model_" + metric + "_null.json");

        for (int sex = 0; sex < 2; ++sex)
            for (int group = 0; group < 2; ++group) {
                auto curves = gamlss::predict_centiles(full, ages, sex, group);
                for (size_t a = 0; a < ages.size(); ++a) {
                    centiles_csv += metric + "," + format_double(ages[a]) + "," +
                                    (sex ? "male" : "female") + "," +
                                    (group ? "case" : "control") + "," +
                                    format_double(curves.values[a][0]) + "," +
                                    format_double(curves.values[a][1]) + "," +
                                    format_double(curves.values[a][2]) + "," +
                                    (curves.extrapolated[a] ? "1" : "0") + "\n";
                }
            }
    }
    write_file_atomic(dir + "/centiles.csv", centiles_csv);
    outputs.push_back("centiles.csv");
    write_manifest(cfg, "fit", {table_path}, outputs);
}

void cmd_test(const PipelineConfig& cfg) {
    std::string harm_path = stage_dir(cfg, "harmonize") + "/harmonized_table.csv";
    std::string qa_path = stage_dir(cfg, "qa") + "/qa_metric_table.csv";
    MetricTable harmonized = read_metric_table_csv(read_file(harm_path));
    MetricTable pre = read_metric_table_csv(read_file(qa_path));

    std::string dir = stage_dir(cfg, "test");
    std::vector<std::string> inputs = {harm_path, qa_path};
    std::vector<std::string> outputs;

    auto metrics = metrics_to_fit(cfg, harmonized);

    // Likelihood ratio tests from the fitted models, BY-corrected.
    std::vector<infer::TestResult> results;
    for (const auto& metric : metrics) {
        std::string full_path = model_path(cfg, metric, false);
        std::string null_path = model_path(cfg, metric, true);
        if (!fs::exists(full_path))
            fail("MISSING_STAGE_INPUT", "fit output for '" + metric +
                                            "' not found; run the fit stage first");
        inputs.push_back(full_path);
        inputs.push_back(null_path);
        auto full = gamlss::from_json(read_file(full_path));
        auto null_model = gamlss::from_json(read_file(null_path));
        infer::TestResult r = infer::lrt(full, null_model);
        r.metric = metric;
        results.push_back(std::move(r));
    }
    std::vector<double> pvals;
    for (const auto& r : results) pvals.push_back(r.p);
    auto fdr = infer::by_fdr(pvals, cfg.fdr_rate);
    std::string lrt_csv = "metric,statistic,df,p,q,rejected\n";
    for (size_t i = 0; i < results.size(); ++i) {
        results[i].q = fdr.q[i];
        results[i].rejected = fdr.rejected[i];
        lrt_csv += results[i].metric + "," + format_double(results[i].statistic) + "," +
                   format_double(results[i].df) + "," + format_double(results[i].p) + "," +
                   format_double(fdr.q[i]) + "," + (fdr.rejected[i] ? "1" : "0") + "\n";
    }
    write_file_atomic(dir + "/lrt_results.csv", lrt_csv);
    outputs.push_back("lrt_results.csv");

    // Across-study ANOVA before and after harmonization (controls only by
    // default); the post-harmonization test runs on residuals after age/sex.
    auto anova_groups = [&](const MetricTable& t, const std::string& metric,
                            bool residualize) -> std::vector<std::vector<double>> {
        int col = t.metric_index(metric);
        if (col < 0) return {};
        std::vector<double> y, age, sex;
        std::vector<std::string> study;
        for (size_t r = 0; r < t.n_rows(); ++r) {
            const auto& rec = t.rows[r];
            if (!t.cell(r, col) || !rec.age || rec.sex == Sex::unknown) continue;
            if (cfg.anova_controls_only && rec.group != Group::control) continue;
            y.push_back(*t.cell(r, col));
            age.push_back(*rec.age);
            sex.push_back(rec.sex == Sex::male ? 1.0 : 0.0);
            study.push_back(rec.study_id);
        }
        if (residualize && y.size() > 4) y = infer::regress_out(y, {age, sex});
        std::map<std::string, std::vector<double>> by_study;
        for (size_t i = 0; i < y.size(); ++i) by_study[study[i]].push_back(y[i]);
        std::vector<std::vector<double>> groups;
        for (auto& [k, v] : by_study)
            if (v.size() >= 2) groups.push_back(std::move(v));
        return groups;
    };

    std::string anova_csv = "metric,phase,F,df1,df2,p\n";
    for (const auto& metric : metrics) {
        for (const char* phase : {"pre", "post"}) {
            const MetricTable& t = std::string(phase) == "pre" ? pre : harmonized;
            auto groups = anova_groups(t, metric, std::string(phase) == "post");
            if (groups.size() < 2) continue;
            auto r = infer::anova_oneway(groups);
            anova_csv += metric + "," + phase + "," + format_double(r.statistic) + "," +
                         format_double(r.df) + "," + format_double(r.df2) + "," +
                         format_double(r.p) + "\n";
        }
    }
    write_file_atomic(dir + "/anova.csv", anova_csv);
    outputs.push_back("anova.csv");

    // Bootstrap bands of the fitted median per metric and group, reference
    // sex female, smoothing fixed at the full model's selection.
    std::vector<double> ages = age_grid_points(cfg);
    for (size_t mi = 0; mi < metrics.size(); ++mi) {
        const auto& metric = metrics[mi];
        int col = harmonized.metric_index(metric);
        auto rows = metric_rows(harmonized, col);
        auto full = gamlss::from_json(read_file(model_path(cfg, metric, false)));
        gamlss::ModelSpec spec = make_gamlss_spec(cfg);
        spec.mu.lambda = full.mu.lambda;
        spec.sigma.lambda = full.sigma.lambda;
        spec.mu.select_lambda = false;
        spec.sigma.select_lambda = false;

        std::string band_csv = "age,group,lower,upper,point\n";
        for (int group = 0; group < 2; ++group) {
            auto bands = infer::bootstrap_bands(
                rows, spec, cfg.bootstrap_B, ages, 0, group,
                cfg.seed + 1000 * static_cast<std::uint64_t>(mi) + group, cfg.threads);
            for (size_t a = 0; a < ages.size(); ++a)
                band_csv += format_double(ages[a]) + "," +
                            (group ? "case" : "control") + "," +
                            format_double(bands.lower[a]) + "," +
                            format_double(bands.upper[a]) + "," +
                            format_double(bands.point[a]) + "\n";
        }
        write_file_atomic(dir + "/bands_" + metric + ".csv", band_csv);
        outputs.push_back("bands_" + metric + ".csv");
    }
    write_manifest(cfg, "test", inputs, outputs);
}

void cmd_report(const PipelineConfig& cfg) {
    std::string lrt_path = stage_dir(cfg, "test") + "/lrt_results.csv";
    if (!fs::exists(lrt_path))
        fail("MISSING_STAGE_INPUT", "test output not found; run the test stage first");
    auto lrt_table = parse_delimited(read_file(lrt_path), ',', "CSV");
    int mcol = lrt_table.column("metric");
    int qcol = lrt_table.column("q");

    std::string dir = stage_dir(cfg, "report");
    std::vector<std::string> inputs = {lrt_path};
    std::vector<std::string> outputs;
    json index;
    json entries = json::array();

    for (const auto& row : lrt_table.rows) {
        const std::string& metric = row[mcol];
        double q = *parse_double(row[qcol]);
        std::string band_path = stage_dir(cfg, "test") + "/bands_" + metric + ".csv";
        inputs.push_back(band_path);
        auto band_table = parse_delimited(read_file(band_path), ',', "CSV");
        int age_c = band_table.column("age");
        int group_c = band_table.column("group");
        int lo_c = band_table.column("lower");
        int up_c = band_table.column("upper");
        int pt_c = band_table.column("point");

        std::map<int, report::BandSeries> series;
        for (const auto& br : band_table.rows) {
            int g = br[group_c] == "case" ? 1 : 0;
            series[g].ages.push_back(*parse_double(br[age_c]));
            series[g].lower.push_back(*parse_double(br[lo_c]));
            series[g].upper.push_back(*parse_double(br[up_c]));
            series[g].point.push_back(*parse_double(br[pt_c]));
        }
        std::string svg = report::centile_svg(metric, series, q, cfg.fdr_rate);
        std::string name = metric + ".svg";
        write_file_atomic(dir + "/" + name, svg);
        outputs.push_back(name);
        json e;
        e["metric"] = metric;
        e["q"] = q;
        e["significant"] = q <= cfg.fdr_rate;
        e["svg"] = name;
        entries.push_back(std::move(e));
    }
    index["metrics"] = entries;
    write_file_atomic(dir + "/index.json", index.dump(2) + "\n");
    outputs.push_back("index.json");
    write_manifest(cfg, "report", inputs, outputs);
}

int run_command(const std::string& command, const PipelineConfig& config) {
    try {
        if (command == "synth")
            cmd_synth(config);
        else if (command == "ingest")
            cmd_ingest(config);
        else if (command == "dti")
            cmd_dti(config);
        else if (command == "qa")
            cmd_qa(config);
        else if (command == "harmonize")
            cmd_harmonize(config);
        else if (command == "fit")
            cmd_fit(config);
        else if (command == "test")
            cmd_test(config);
        else if (command == "report")
            cmd_report(config);
        else
            fail("BAD_COMMAND", "unknown subcommand '" + command + "'");
        return 0;
    } catch (const Error& e) {
        logging::error(command, " failed: ", e.what());
        return e.kind() == ErrorKind::invalid_input ? 1 : 2;
    } catch (const std::exception& e) {
        logging::error(command, " failed unexpectedly: ", e.what());
        return 2;
    }
}

}  // namespace cohortforge::pipeline
