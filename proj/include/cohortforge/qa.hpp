#pragma once

#include <string>
#include <vector>

#include "cohortforge/cohort.hpp"

namespace cohortforge::qa {

// Machine-readable exclusion/rejection reason codes.
inline constexpr const char* kMissingAge = "MISSING_AGE";
inline constexpr const char* kMissingSex = "MISSING_SEX";
inline constexpr const char* kMissingGroup = "MISSING_GROUP";
inline constexpr const char* kNoUsableImage = "NO_USABLE_IMAGE";
inline constexpr const char* kInsufficientShell = "INSUFFICIENT_SHELL";
inline constexpr const char* kOutlier = "OUTLIER";

struct QaDecision {
    std::string subject_id;
    std::string session_id;
    std::string study_id;
    bool include = false;
    std::vector<std::string> reasons;  // nonempty iff excluded
};

struct OutlierCell {
    std::string subject_id;
    std::string session_id;
    std::string study_id;
    std::string metric;
    double value = 0.0;
    double z = 0.0;  // |value - mean| / sd
};

struct OutlierColumnStats {
    std::string study_id;
    std::string metric;
    size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;  // sample sd (n-1)
    bool skipped = false;  // fewer than 2 present values
};

struct OutlierReport {
    double k = 5.0;
    std::vector<OutlierColumnStats> columns;
    std::vector<OutlierCell> rejected;
};

// Inclusion rule: reported age, sex, and case/control status, and at least
// one usable image (T1w or DWI). Reasons enumerate every failed criterion.
QaDecision check_inclusion(const SessionRecord& record);

// Single-pass per-study rejection of cells with |value - mean| > k * sd,
// where mean/sd are the per-(study, metric) sample statistics. Rejected cells
// become missing; rows are retained. Columns with fewer than two present
// values per study are skipped.
std::pair<MetricTable, OutlierReport> reject_outliers(const MetricTable& table, double k = 5.0);

// CSV/JSON report emission (one row per decision; summary counts per reason).
std::string write_qa_csv(const std::vector<QaDecision>& decisions);
std::string write_qa_summary_json(const std::vector<QaDecision>& decisions);
std::string write_outlier_csv(const OutlierReport& report);
std::string write_outlier_summary_json(const OutlierReport& report);

}  // namespace cohortforge::qa
