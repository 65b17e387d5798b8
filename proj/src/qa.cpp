#include "cohortforge/qa.hpp"

#include <cmath>
#include <limits>
#include <map>

#include <json.hpp>

#include "cohortforge/error.hpp"
#include "cohortforge/textio.hpp"

namespace cohortforge::qa {

using nlohmann::json;

QaDecision check_inclusion(const SessionRecord& record) {
    QaDecision d;
    d.subject_id = record.subject_id;
    d.session_id = record.session_id;
    d.study_id = record.study_id;
    if (!record.age) d.reasons.push_back(kMissingAge);
    if (record.sex == Sex::unknown) d.reasons.push_back(kMissingSex);
    if (record.group == Group::unknown) d.reasons.push_back(kMissingGroup);
    if (!record.has_t1w && !record.has_dwi) d.reasons.push_back(kNoUsableImage);
    d.include = d.reasons.empty();
    return d;
}

std::pair<MetricTable, OutlierReport> reject_outliers(const MetricTable& table, double k) {
    if (!(k > 0.0)) fail("BAD_THRESHOLD", "outlier threshold k must be > 0");
    table.validate();

    MetricTable filtered = table;
    OutlierReport report;
    report.k = k;

    // Group row indices by study.
    std::map<std::string, std::vector<size_t>> by_study;
    for (size_t i = 0; i < table.rows.size(); ++i)
        by_study[table.rows[i].study_id].push_back(i);

    for (const auto& [study, rows] : by_study) {
        for (size_t c = 0; c < table.metrics.size(); ++c) {
            OutlierColumnStats stats;
            stats.study_id = study;
            stats.metric = table.metrics[c];

            double sum = 0.0;
            size_t n = 0;
            for (size_t r : rows)
                if (table.cells[r][c]) {
                    sum += *table.cells[r][c];
                    ++n;
                }
            stats.n = n;
            if (n < 2) {
                stats.skipped = true;
                report.columns.push_back(stats);
                continue;
            }
            double mean = sum / static_cast<double>(n);
            double ss = 0.0;
            for (size_t r : rows)
                if (table.cells[r][c]) {
                    double d = *table.cells[r][c] - mean;
                    ss += d * d;
                }
            double sd = std::sqrt(ss / static_cast<double>(n - 1));
            stats.mean = mean;
            stats.sd = sd;
            report.columns.push_back(stats);

            for (size_t r : rows) {
                if (!table.cells[r][c]) continue;
                double v = *table.cells[r][c];
                if (std::abs(v - mean) > k * sd) {
                    OutlierCell cell;
                    cell.subject_id = table.rows[r].subject_id;
                    cell.session_id = table.rows[r].session_id;
                    cell.study_id = study;
                    cell.metric = table.metrics[c];
                    cell.value = v;
                    cell.z = sd > 0.0 ? std::abs(v - mean) / sd
                                      : std::numeric_limits<double>::infinity();
                    report.rejected.push_back(std::move(cell));
                    filtered.cells[r][c] = std::nullopt;
                }
            }
        }
    }
    return {std::move(filtered), std::move(report)};
}

std::string write_qa_csv(const std::vector<QaDecision>& decisions) {
    std::string out = "subject_id,session_id,study_id,verdict,reasons\n";
    for (const auto& d : decisions) {
        out += csv_escape(d.subject_id, ',');
        out += ',';
        out += csv_escape(d.session_id, ',');
        out += ',';
        out += csv_escape(d.study_id, ',');
        out += ',';
        out += d.include ? "include" : "exclude";
        out += ',';
        std::string reasons;
        for (size_t i = 0; i < d.reasons.size(); ++i) {
            if (i) reasons += ';';
            reasons += d.reasons[i];
        }
        out += csv_escape(reasons, ',');
        out += '\n';
    }
    return out;
}

std::string write_qa_summary_json(const std::vector<QaDecision>& decisions) {
    size_t included = 0;
    std::map<std::string, size_t> reason_counts;
    for (const auto& d : decisions) {
        if (d.include) ++included;
        for (const auto& r : d.reasons) ++reason_counts[r];
    }
    json j;
    j["n_sessions"] = decisions.size();
    j["n_included"] = included;
    j["n_excluded"] = decisions.size() - included;
    j["reason_counts"] = reason_counts;
    return j.dump(2) + "\n";
}

std::string write_outlier_csv(const OutlierReport& report) {
    std::string out = "subject_id,session_id,study_id,metric,value,z\n";
    for (const auto& c : report.rejected) {
        out += csv_escape(c.subject_id, ',');
        out += ',';
        out += csv_escape(c.session_id, ',');
        out += ',';
        out += csv_escape(c.study_id, ',');
        out += ',';
        out += csv_escape(c.metric, ',');
        out += ',';
        out += format_double(c.value);
        out += ',';
        out += format_double(c.z);
        out += '\n';
    }
    return out;
}

std::string write_outlier_summary_json(const OutlierReport& report) {
    json cols = json::array();
    for (const auto& c : report.columns) {
        json j;
        j["study_id"] = c.study_id;
        j["metric"] = c.metric;
        j["n"] = c.n;
        j["skipped"] = c.skipped;
        if (!c.skipped) {
            j["mean"] = c.mean;
            j["sd"] = c.sd;
        }
        cols.push_back(std::move(j));
    }
    json j;
    j["k"] = report.k;
    j["n_rejected"] = report.rejected.size();
    j["columns"] = cols;
    return j.dump(2) + "\n";
}

}  // namespace cohortforge::qa
