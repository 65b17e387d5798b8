#include "cohortforge/cohort.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "cohortforge/error.hpp"
#include "cohortforge/log.hpp"
#include "cohortforge/textio.hpp"

namespace cohortforge {

using nlohmann::json;

std::string to_string(Sex s) {
    switch (s) {
        case Sex::female: return "female";
        case Sex::male: return "male";
        default: return "unknown";
    }
}

std::string to_string(Group g) {
    switch (g) {
        case Group::case_: return "case";
        case Group::control: return "control";
        default: return "unknown";
    }
}

int MetricTable::metric_index(const std::string& name) const {
    for (size_t i = 0; i < metrics.size(); ++i)
        if (metrics[i] == name) return static_cast<int>(i);
    return -1;
}

void MetricTable::validate() const {
    std::set<std::string> names(metrics.begin(), metrics.end());
    if (names.size() != metrics.size())
        fail("DUPLICATE_METRIC", "metric column names must be unique");
    if (cells.size() != rows.size())
        fail("TABLE_SHAPE", "cell rows do not match session rows");
    for (const auto& row : cells) {
        if (row.size() != metrics.size())
            fail("TABLE_SHAPE", "cell columns do not match metric names");
        for (const auto& c : row)
            if (c && !std::isfinite(*c))
                fail("NONFINITE_VALUE", "metric cells must be finite where present");
    }
}

const std::vector<std::string>& ColumnMap::known_cdes() {
    static const std::vector<std::string> cdes = {
        "subject_id", "session_id", "age",          "sex",        "group",
        "gcs",        "scanner_type", "scanner_id", "scanner_location",
        "race",       "ethnicity",  "has_t1w",      "has_dwi"};
    return cdes;
}

CdeNormalizer::CdeNormalizer() {
    sex_map_ = {{"f", Sex::female}, {"female", Sex::female}, {"0", Sex::female},
                {"m", Sex::male},   {"male", Sex::male},     {"1", Sex::male}};
    group_map_ = {{"case", Group::case_},      {"tbi", Group::case_}, {"1", Group::case_},
                  {"control", Group::control}, {"0", Group::control}};
}

void CdeNormalizer::add_sex_synonym(const std::string& token, Sex value) {
    sex_map_[to_lower(trim(token))] = value;
}

void CdeNormalizer::add_group_synonym(const std::string& token, Group value) {
    group_map_[to_lower(trim(token))] = value;
}

Sex CdeNormalizer::normalize_sex(const std::string& raw, bool* mapped) const {
    auto it = sex_map_.find(to_lower(trim(raw)));
    if (mapped) *mapped = it != sex_map_.end();
    return it == sex_map_.end() ? Sex::unknown : it->second;
}

Group CdeNormalizer::normalize_group(const std::string& raw, bool* mapped) const {
    auto it = group_map_.find(to_lower(trim(raw)));
    if (mapped) *mapped = it != group_map_.end();
    return it == group_map_.end() ? Group::unknown : it->second;
}

std::optional<bool> CdeNormalizer::normalize_bool(const std::string& raw) {
    std::string v = to_lower(trim(raw));
    if (v == "1" || v == "true" || v == "yes" || v == "y") return true;
    if (v == "0" || v == "false" || v == "no" || v == "n") return false;
    return std::nullopt;
}

namespace {

// Default source-column synonyms per CDE, used when the column map is silent.
const std::map<std::string, std::vector<std::string>>& default_columns() {
    static const std::map<std::string, std::vector<std::string>> cols = {
        {"subject_id", {"subject_id", "participant_id", "subject"}},
        {"session_id", {"session_id", "session"}},
        {"age", {"age", "age_years"}},
        {"sex", {"sex", "gender"}},
        {"group", {"group", "case_control", "diagnosis"}},
        {"gcs", {"gcs", "glasgow_coma_scale"}},
        {"scanner_type", {"scanner_type"}},
        {"scanner_id", {"scanner_id"}},
        {"scanner_location", {"scanner_location"}},
        {"race", {"race"}},
        {"ethnicity", {"ethnicity"}},
        {"has_t1w", {"has_t1w", "t1w"}},
        {"has_dwi", {"has_dwi", "dwi"}},
    };
    return cols;
}

int find_column(const DelimitedTable& table, const ColumnMap& map, const std::string& cde) {
    auto explicit_it = map.columns.find(cde);
    if (explicit_it != map.columns.end()) return table.column(explicit_it->second);
    for (const auto& candidate : default_columns().at(cde)) {
        int idx = table.column(candidate);
        if (idx >= 0) return idx;
    }
    return -1;
}

void warn_field(IngestReport* report, const std::string& key, const std::string& field,
                const std::string& value, const std::string& why) {
    if (!report) return;
    report->warnings.push_back(key + ": " + field + " '" + value + "' " + why);
}

}  // namespace

std::vector<SessionRecord> parse_participants(const std::string& tsv_bytes,
                                              const std::string& study_id,
                                              const ColumnMap& column_map,
                                              const CdeNormalizer& normalizer,
                                              IngestReport* report) {
    DelimitedTable tsv = parse_delimited(tsv_bytes, '\t', "TSV");
    int subject_col = find_column(tsv, column_map, "subject_id");
    if (subject_col < 0)
        fail("MISSING_SUBJECT_COLUMN", "participants TSV has no subject id column");

    std::map<std::string, int> cols;
    for (const auto& cde : ColumnMap::known_cdes()) cols[cde] = find_column(tsv, column_map, cde);

    std::vector<SessionRecord> records;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& row : tsv.rows) {
        SessionRecord rec;
        rec.study_id = study_id;
        rec.subject_id = std::string(trim(row[subject_col]));
        if (rec.subject_id.empty())
            fail("MISSING_SUBJECT_COLUMN", "row with empty subject id");
        rec.session_id = cols["session_id"] >= 0 && !is_missing_token(row[cols["session_id"]])
                             ? std::string(trim(row[cols["session_id"]]))
                             : "ses-1";
        if (!seen.insert({rec.subject_id, rec.session_id}).second)
            fail("DUPLICATE_SESSION", "duplicate (subject, session) pair " + rec.key());

        auto cell = [&](const std::string& cde) -> std::optional<std::string> {
            int c = cols[cde];
            if (c < 0 || is_missing_token(row[c])) return std::nullopt;
            return std::string(trim(row[c]));
        };

        if (auto v = cell("age")) {
            auto age = parse_double(*v);
            if (age && std::isfinite(*age) && *age >= 0.0 && *age <= 130.0)
                rec.age = *age;
            else
                warn_field(report, rec.key(), "age", *v, "is not a valid age in [0,130]; treated as missing");
        }
        if (auto v = cell("sex")) {
            bool mapped = false;
            rec.sex = normalizer.normalize_sex(*v, &mapped);
            if (!mapped) warn_field(report, rec.key(), "sex", *v, "is unmappable; treated as unknown");
        }
        if (auto v = cell("group")) {
            bool mapped = false;
            rec.group = normalizer.normalize_group(*v, &mapped);
            if (!mapped) warn_field(report, rec.key(), "group", *v, "is unmappable; treated as unknown");
        }
        if (auto v = cell("gcs")) {
            auto g = parse_long(*v);
            if (g && *g >= 3 && *g <= 15)
                rec.gcs = static_cast<int>(*g);
            else
                warn_field(report, rec.key(), "gcs", *v, "is not an integer in [3,15]; treated as missing");
        }
        rec.scanner_type = cell("scanner_type");
        rec.scanner_id = cell("scanner_id");
        rec.scanner_location = cell("scanner_location");
        rec.race = cell("race");
        rec.ethnicity = cell("ethnicity");
        if (auto v = cell("has_t1w")) {
            auto b = CdeNormalizer::normalize_bool(*v);
            if (b)
                rec.has_t1w = *b;
            else
                warn_field(report, rec.key(), "has_t1w", *v, "is not a boolean; treated as false");
        }
        if (auto v = cell("has_dwi")) {
            auto b = CdeNormalizer::normalize_bool(*v);
            if (b)
                rec.has_dwi = *b;
            else
                warn_field(report, rec.key(), "has_dwi", *v, "is not a boolean; treated as false");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

MetricTable merge_metrics(const std::vector<SessionRecord>& records,
                          const std::string& metrics_csv,
                          IngestReport* report) {
    DelimitedTable csv = parse_delimited(metrics_csv, ',', "CSV");
    int subj = csv.column("subject_id");
    int sess = csv.column("session_id");
    if (subj < 0 || sess < 0)
        fail("MALFORMED_CSV", "metrics CSV must have subject_id and session_id columns");

    std::map<std::pair<std::string, std::string>, const SessionRecord*> index;
    for (const auto& r : records) index[{r.subject_id, r.session_id}] = &r;

    MetricTable table;
    for (size_t c = 0; c < csv.header.size(); ++c)
        if (static_cast<int>(c) != subj && static_cast<int>(c) != sess)
            table.metrics.push_back(csv.header[c]);

    for (const auto& row : csv.rows) {
        auto key = std::make_pair(std::string(trim(row[subj])), std::string(trim(row[sess])));
        auto it = index.find(key);
        if (it == index.end()) {
            if (report) report->dropped_rows.push_back(key.first + "/" + key.second);
            continue;
        }
        std::vector<std::optional<double>> cells;
        for (size_t c = 0; c < csv.header.size(); ++c) {
            if (static_cast<int>(c) == subj || static_cast<int>(c) == sess) continue;
            if (is_missing_token(row[c])) {
                cells.push_back(std::nullopt);
                continue;
            }
            auto v = parse_double(row[c]);
            if (!v || !std::isfinite(*v))
                fail("MALFORMED_CSV", "metric cell '" + row[c] + "' for " + key.first + "/" +
                                          key.second + " is not a finite number");
            cells.push_back(*v);
        }
        table.rows.push_back(*it->second);
        table.cells.push_back(std::move(cells));
    }
    if (table.rows.empty()) fail("NO_MATCHING_ROWS", "metrics CSV matched no known session");
    table.validate();
    return table;
}

namespace {

const std::vector<std::string> kTableColumns = {"subject_id", "session_id", "study_id",
                                                "age",        "sex",        "group"};

}  // namespace

std::string write_metric_table_csv(const MetricTable& table) {
    std::string out;
    for (size_t i = 0; i < kTableColumns.size(); ++i) {
        if (i) out += ',';
        out += kTableColumns[i];
    }
    for (const auto& m : table.metrics) {
        out += ',';
        out += csv_escape(m, ',');
    }
    out += '\n';
    for (size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        out += csv_escape(r.subject_id, ',');
        out += ',';
        out += csv_escape(r.session_id, ',');
        out += ',';
        out += csv_escape(r.study_id, ',');
        out += ',';
        if (r.age) out += format_double(*r.age);
        out += ',';
        out += to_string(r.sex);
        out += ',';
        out += to_string(r.group);
        for (const auto& cell : table.cells[i]) {
            out += ',';
            if (cell) out += format_double(*cell);
        }
        out += '\n';
    }
    return out;
}

MetricTable read_metric_table_csv(const std::string& csv_bytes) {
    DelimitedTable csv = parse_delimited(csv_bytes, ',', "CSV");
    if (csv.header.size() < kTableColumns.size())
        fail("MALFORMED_CSV", "metric table CSV is missing demographic columns");
    for (size_t i = 0; i < kTableColumns.size(); ++i)
        if (csv.header[i] != kTableColumns[i])
            fail("MALFORMED_CSV", "metric table CSV column " + std::to_string(i) +
                                      " must be " + kTableColumns[i]);
    MetricTable table;
    table.metrics.assign(csv.header.begin() + kTableColumns.size(), csv.header.end());
    CdeNormalizer norm;
    for (const auto& row : csv.rows) {
        SessionRecord rec;
        rec.subject_id = row[0];
        rec.session_id = row[1];
        rec.study_id = row[2];
        if (!is_missing_token(row[3])) {
            auto age = parse_double(row[3]);
            if (!age) fail("MALFORMED_CSV", "bad age cell '" + row[3] + "'");
            rec.age = *age;
        }
        rec.sex = norm.normalize_sex(row[4]);
        rec.group = norm.normalize_group(row[5]);
        std::vector<std::optional<double>> cells;
        for (size_t c = kTableColumns.size(); c < row.size(); ++c) {
            if (is_missing_token(row[c])) {
                cells.push_back(std::nullopt);
            } else {
                auto v = parse_double(row[c]);
                if (!v) fail("MALFORMED_CSV", "bad metric cell '" + row[c] + "'");
                cells.push_back(*v);
            }
        }
        table.rows.push_back(std::move(rec));
        table.cells.push_back(std::move(cells));
    }
    table.validate();
    return table;
}

std::string write_cohort_json(const std::vector<SessionRecord>& records) {
    json arr = json::array();
    for (const auto& r : records) {
        json j;
        j["subject_id"] = r.subject_id;
        j["session_id"] = r.session_id;
        j["study_id"] = r.study_id;
        if (r.age) j["age"] = *r.age;
        j["sex"] = to_string(r.sex);
        j["group"] = to_string(r.group);
        if (r.gcs) j["gcs"] = *r.gcs;
        if (r.scanner_type) j["scanner_type"] = *r.scanner_type;
        if (r.scanner_id) j["scanner_id"] = *r.scanner_id;
        if (r.scanner_location) j["scanner_location"] = *r.scanner_location;
        if (r.race) j["race"] = *r.race;
        if (r.ethnicity) j["ethnicity"] = *r.ethnicity;
        j["has_t1w"] = r.has_t1w;
        j["has_dwi"] = r.has_dwi;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

std::vector<SessionRecord> read_cohort_json(const std::string& json_bytes) {
    json arr = json::parse(json_bytes);
    CdeNormalizer norm;
    std::vector<SessionRecord> records;
    for (const auto& j : arr) {
        SessionRecord r;
        r.subject_id = j.at("subject_id").get<std::string>();
        r.session_id = j.at("session_id").get<std::string>();
        r.study_id = j.at("study_id").get<std::string>();
        if (j.contains("age")) r.age = j["age"].get<double>();
        r.sex = norm.normalize_sex(j.at("sex").get<std::string>());
        r.group = norm.normalize_group(j.at("group").get<std::string>());
        if (j.contains("gcs")) r.gcs = j["gcs"].get<int>();
        if (j.contains("scanner_type")) r.scanner_type = j["scanner_type"].get<std::string>();
        if (j.contains("scanner_id")) r.scanner_id = j["scanner_id"].get<std::string>();
        if (j.contains("scanner_location"))
            r.scanner_location = j["scanner_location"].get<std::string>();
        if (j.contains("race")) r.race = j["race"].get<std::string>();
        if (j.contains("ethnicity")) r.ethnicity = j["ethnicity"].get<std::string>();
        r.has_t1w = j.at("has_t1w").get<bool>();
        r.has_dwi = j.at("has_dwi").get<bool>();
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace cohortforge
