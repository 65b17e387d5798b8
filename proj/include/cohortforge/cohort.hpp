#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cohortforge {

enum class Sex { female, male, unknown };
enum class Group { case_, control, unknown };

std::string to_string(Sex s);
std::string to_string(Group g);

// One imaging session with the common data elements recorded per study.
struct SessionRecord {
    std::string subject_id;
    std::string session_id;
    std::string study_id;
    std::optional<double> age;  // years
    Sex sex = Sex::unknown;
    Group group = Group::unknown;
    std::optional<int> gcs;  // Glasgow coma scale, 3-15
    std::optional<std::string> scanner_type;
    std::optional<std::string> scanner_id;
    std::optional<std::string> scanner_location;
    std::optional<std::string> race;       // passthrough, not analyzed
    std::optional<std::string> ethnicity;  // passthrough, not analyzed
    bool has_t1w = false;
    bool has_dwi = false;

    std::string key() const { return subject_id + "/" + session_id; }
};

// Sessions x named metrics. Missing cells are distinct from zero.
struct MetricTable {
    std::vector<SessionRecord> rows;
    std::vector<std::string> metrics;
    std::vector<std::vector<std::optional<double>>> cells;  // [row][metric]

    size_t n_rows() const { return rows.size(); }
    size_t n_metrics() const { return metrics.size(); }
    int metric_index(const std::string& name) const;
    const std::optional<double>& cell(size_t row, size_t col) const { return cells[row][col]; }
    void validate() const;
};

// Maps source column names to CDE names for one study's tables.
struct ColumnMap {
    // cde name -> source column name; unset entries use the default synonyms.
    std::map<std::string, std::string> columns;

    static const std::vector<std::string>& known_cdes();
};

// Synonym tables for sex/group codings, extensible per study.
class CdeNormalizer {
public:
    CdeNormalizer();

    void add_sex_synonym(const std::string& token, Sex value);
    void add_group_synonym(const std::string& token, Group value);

    // Unmappable tokens yield unknown; the caller records the warning.
    Sex normalize_sex(const std::string& raw, bool* mapped = nullptr) const;
    Group normalize_group(const std::string& raw, bool* mapped = nullptr) const;
    static std::optional<bool> normalize_bool(const std::string& raw);

private:
    std::map<std::string, Sex> sex_map_;
    std::map<std::string, Group> group_map_;
};

struct IngestReport {
    std::vector<std::string> warnings;
    std::vector<std::string> dropped_rows;  // metric rows with no matching session
};

// Parses a participants/sessions TSV (header row required) into records.
// Optional fields that fail to parse become absent/unknown with a warning.
std::vector<SessionRecord> parse_participants(const std::string& tsv_bytes,
                                              const std::string& study_id,
                                              const ColumnMap& column_map = {},
                                              const CdeNormalizer& normalizer = {},
                                              IngestReport* report = nullptr);

// Joins a metrics CSV (subject_id, session_id, metric...) onto known records.
// Rows with no matching record are dropped and reported.
MetricTable merge_metrics(const std::vector<SessionRecord>& records,
                          const std::string& metrics_csv,
                          IngestReport* report = nullptr);

// Canonical CSV round-trip for MetricTable (demographics + metric columns).
std::string write_metric_table_csv(const MetricTable& table);
MetricTable read_metric_table_csv(const std::string& csv_bytes);

std::string write_cohort_json(const std::vector<SessionRecord>& records);
std::vector<SessionRecord> read_cohort_json(const std::string& json_bytes);

}  // namespace cohortforge
