#include <doctest.h>

#include <algorithm>

#include "cohortforge/cohort.hpp"
#include "cohortforge/error.hpp"
#include "cohortforge/rng.hpp"
#include "cohortforge/textio.hpp"

using namespace cohortforge;

TEST_CASE("parse_participants maps basic fields") {
    std::string tsv = "participant_id\tage\tsex\tgroup\nsub-01\t34.5\tF\tcontrol\n";
    auto records = parse_participants(tsv, "STUDY01");
    REQUIRE(records.size() == 1);
    CHECK(records[0].subject_id == "sub-01");
    CHECK(records[0].study_id == "STUDY01");
    REQUIRE(records[0].age.has_value());
    CHECK(*records[0].age == doctest::Approx(34.5));
    CHECK(records[0].sex == Sex::female);
    CHECK(records[0].group == Group::control);
}

TEST_CASE("empty age cell becomes absent") {
    std::string tsv = "participant_id\tage\nsub-01\t\n";
    auto records = parse_participants(tsv, "S");
    REQUIRE(records.size() == 1);
    CHECK(!records[0].age.has_value());
}

TEST_CASE("unparseable optional fields warn and stay absent") {
    std::string tsv = "participant_id\tage\tgcs\nsub-01\told\t99\n";
    IngestReport report;
    auto records = parse_participants(tsv, "S", {}, {}, &report);
    CHECK(!records[0].age.has_value());
    CHECK(!records[0].gcs.has_value());
    CHECK(report.warnings.size() == 2);
}

TEST_CASE("duplicate subject/session pair is an error") {
    std::string tsv = "participant_id\tsession_id\nsub-01\tses-1\nsub-01\tses-1\n";
    CHECK_THROWS_WITH_AS(parse_participants(tsv, "S"),
                         doctest::Contains("DUPLICATE_SESSION"), Error);
}

TEST_CASE("missing header / missing subject column") {
    CHECK_THROWS_WITH_AS(parse_participants("", "S"), doctest::Contains("MISSING_HEADER"),
                         Error);
    CHECK_THROWS_WITH_AS(parse_participants("age\tsex\n30\tF\n", "S"),
                         doctest::Contains("MISSING_SUBJECT_COLUMN"), Error);
}

TEST_CASE("column map overrides source columns") {
    std::string tsv = "SubjID\tyears\nk01\t44\n";
    ColumnMap map;
    map.columns["subject_id"] = "SubjID";
    map.columns["age"] = "years";
    auto records = parse_participants(tsv, "S", map);
    CHECK(records[0].subject_id == "k01");
    CHECK(*records[0].age == doctest::Approx(44));
}

TEST_CASE("CRLF line endings parse identically") {
    std::string tsv = "participant_id\tage\r\nsub-01\t20\r\n";
    auto records = parse_participants(tsv, "S");
    REQUIRE(records.size() == 1);
    CHECK(*records[0].age == doctest::Approx(20));
}

TEST_CASE("cde normalization synonym tables") {
    CdeNormalizer norm;
    bool mapped = false;
    CHECK(norm.normalize_sex("Male", &mapped) == Sex::male);
    CHECK(mapped);
    CHECK(norm.normalize_sex(" F ", &mapped) == Sex::female);
    CHECK(norm.normalize_group("tbi", &mapped) == Group::case_);
    CHECK(mapped);
    CHECK(norm.normalize_group("n/a", &mapped) == Group::unknown);
    CHECK(!mapped);

    norm.add_group_synonym("patient", Group::case_);
    CHECK(norm.normalize_group("PATIENT", &mapped) == Group::case_);
}

namespace {

std::vector<SessionRecord> three_records() {
    std::vector<SessionRecord> recs;
    for (int i = 1; i <= 3; ++i) {
        SessionRecord r;
        r.subject_id = "sub-0" + std::to_string(i);
        r.session_id = "ses-1";
        r.study_id = "S";
        r.age = 20.0 + i;
        r.sex = i % 2 ? Sex::female : Sex::male;
        r.group = Group::control;
        r.has_t1w = true;
        recs.push_back(r);
    }
    return recs;
}

}  // namespace

TEST_CASE("merge_metrics exact join") {
    auto recs = three_records();
    std::string csv =
        "subject_id,session_id,vol_a,vol_b\n"
        "sub-01,ses-1,1.5,2.5\n"
        "sub-02,ses-1,3.5,4.5\n"
        "sub-03,ses-1,5.5,6.5\n";
    auto table = merge_metrics(recs, csv);
    CHECK(table.n_rows() == 3);
    CHECK(table.n_metrics() == 2);
    CHECK(*table.cell(0, 0) == doctest::Approx(1.5));
    CHECK(*table.cell(2, 1) == doctest::Approx(6.5));
}

TEST_CASE("merge_metrics drops and reports unknown sessions") {
    auto recs = three_records();
    std::string csv =
        "subject_id,session_id,vol_a\n"
        "sub-01,ses-1,1\n"
        "sub-99,ses-1,2\n";
    IngestReport report;
    auto table = merge_metrics(recs, csv, &report);
    CHECK(table.n_rows() == 1);
    REQUIRE(report.dropped_rows.size() == 1);
    CHECK(report.dropped_rows[0] == "sub-99/ses-1");
}

TEST_CASE("NaN metric cell becomes missing, not zero") {
    auto recs = three_records();
    std::string csv =
        "subject_id,session_id,vol_a\n"
        "sub-01,ses-1,NaN\n"
        "sub-02,ses-1,0\n";
    auto table = merge_metrics(recs, csv);
    CHECK(!table.cell(0, 0).has_value());
    REQUIRE(table.cell(1, 0).has_value());
    CHECK(*table.cell(1, 0) == 0.0);
}

TEST_CASE("merge_metrics error cases") {
    auto recs = three_records();
    CHECK_THROWS_WITH_AS(merge_metrics(recs, "subject_id,session_id,vol\nsub-77,ses-1,1\n"),
                         doctest::Contains("NO_MATCHING_ROWS"), Error);
    CHECK_THROWS_WITH_AS(merge_metrics(recs, "subject_id,session_id,vol\nsub-01,ses-1\n"),
                         doctest::Contains("MALFORMED_CSV"), Error);
}

TEST_CASE("metric table CSV round-trip preserves cells and missingness") {
    Rng rng(7);
    MetricTable table;
    table.metrics = {"vol_a", "vol_b", "fa"};
    for (int i = 0; i < 40; ++i) {
        SessionRecord r;
        r.subject_id = "sub-" + std::to_string(i);
        r.session_id = "ses-" + std::to_string(1 + (i % 2));
        r.study_id = i < 20 ? "A" : "B";
        if (rng.uniform() < 0.9) r.age = rng.uniform(15.0, 90.0);
        r.sex = rng.uniform() < 0.5 ? Sex::female : Sex::male;
        r.group = rng.uniform() < 0.5 ? Group::case_ : Group::control;
        std::vector<std::optional<double>> cells;
        for (int c = 0; c < 3; ++c) {
            if (rng.uniform() < 0.15)
                cells.push_back(std::nullopt);
            else
                cells.push_back(rng.normal(1000.0, 250.0));
        }
        table.rows.push_back(r);
        table.cells.push_back(cells);
    }
    std::string csv = write_metric_table_csv(table);
    MetricTable back = read_metric_table_csv(csv);
    REQUIRE(back.n_rows() == table.n_rows());
    REQUIRE(back.metrics == table.metrics);
    for (size_t i = 0; i < table.n_rows(); ++i) {
        CHECK(back.rows[i].subject_id == table.rows[i].subject_id);
        CHECK(back.rows[i].study_id == table.rows[i].study_id);
        CHECK(back.rows[i].age.has_value() == table.rows[i].age.has_value());
        if (table.rows[i].age) CHECK(*back.rows[i].age == *table.rows[i].age);
        for (size_t c = 0; c < 3; ++c) {
            REQUIRE(back.cell(i, c).has_value() == table.cell(i, c).has_value());
            if (table.cell(i, c)) CHECK(*back.cell(i, c) == *table.cell(i, c));
        }
    }
}

TEST_CASE("join is order-independent modulo row order") {
    auto recs = three_records();
    std::string csv_a =
        "subject_id,session_id,vol\nsub-01,ses-1,1\nsub-02,ses-1,2\nsub-03,ses-1,3\n";
    std::string csv_b =
        "subject_id,session_id,vol\nsub-03,ses-1,3\nsub-01,ses-1,1\nsub-02,ses-1,2\n";
    auto ta = merge_metrics(recs, csv_a);
    auto tb = merge_metrics(recs, csv_b);
    auto key_value = [](const MetricTable& t) {
        std::vector<std::pair<std::string, double>> kv;
        for (size_t i = 0; i < t.n_rows(); ++i)
            kv.emplace_back(t.rows[i].key(), *t.cell(i, 0));
        std::sort(kv.begin(), kv.end());
        return kv;
    };
    CHECK(key_value(ta) == key_value(tb));
}

TEST_CASE("cohort JSON round-trip") {
    auto recs = three_records();
    recs[0].gcs = 13;
    recs[0].scanner_type = "3T";
    auto back = read_cohort_json(write_cohort_json(recs));
    REQUIRE(back.size() == recs.size());
    CHECK(back[0].gcs == recs[0].gcs);
    CHECK(back[0].scanner_type == recs[0].scanner_type);
    CHECK(back[2].sex == recs[2].sex);
}
