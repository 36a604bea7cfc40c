#include <doctest.h>

#include <map>
#include <set>

#include "cohort.hpp"
#include "test_support.hpp"

using namespace cac;
using namespace cac::cohort;

namespace {

ScanRecord scan(const std::string& pid, const std::string& study, const std::string& date,
                ScanKind kind = ScanKind::NonGated, const std::string& center = "C1") {
    ScanRecord s;
    s.patient_id = pid;
    s.study_uid = study;
    s.date = parse_date(date);
    s.kind = kind;
    s.center_id = center;
    return s;
}

std::vector<PairedStudy> pairs_over_centers(const std::vector<int>& sizes) {
    std::vector<PairedStudy> out;
    int id = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c)
        for (int i = 0; i < sizes[c]; ++i) {
            PairedStudy p;
            p.patient_id = "P" + std::to_string(id++);
            p.center_id = "C" + std::to_string(c);
            out.push_back(p);
        }
    return out;
}

PatientRecord patient(const std::string& id, const std::string& end) {
    PatientRecord p;
    p.patient_id = id;
    p.followup_end = parse_date(end);
    return p;
}

}  // namespace

TEST_CASE("pairing keeps the nearest scan within the window") {
    std::vector<ScanRecord> ng{scan("A", "ng1", "2015-01-01")};
    std::vector<GatedReference> g{{scan("A", "g1", "2015-07-20", ScanKind::Gated), 80.0},
                                  {scan("A", "g2", "2015-02-10", ScanKind::Gated), 12.0}};
    auto p = build_pairs(ng, g);
    REQUIRE(p.size() == 1);
    CHECK(p[0].gated_study_uid == "g2");
    CHECK(p[0].gap_days == 40);
    CHECK(p[0].reference_score == 12.0);

    std::vector<GatedReference> far{{scan("A", "g3", "2016-01-02", ScanKind::Gated), 1.0}};
    CHECK(build_pairs(ng, far).empty());
    std::vector<GatedReference> edge{{scan("A", "g4", "2016-01-01", ScanKind::Gated), 1.0}};
    CHECK(build_pairs(ng, edge).size() == 1);
    std::vector<GatedReference> other{{scan("B", "g5", "2015-01-02", ScanKind::Gated), 1.0}};
    CHECK(build_pairs(ng, other).empty());

    SUBCASE("ties prefer the earlier gated date") {
        std::vector<GatedReference> tie{{scan("A", "g6", "2015-01-11", ScanKind::Gated), 1.0},
                                        {scan("A", "g7", "2014-12-22", ScanKind::Gated), 2.0}};
        CHECK(build_pairs(ng, tie)[0].gated_study_uid == "g7");
    }
}

TEST_CASE("pair gaps never exceed the window") {
    Rng rng(9);
    std::vector<ScanRecord> ng;
    std::vector<GatedReference> g;
    for (int i = 0; i < 300; ++i) {
        auto pid = "P" + std::to_string(rng.below(60));
        auto d = format_date(parse_date("2012-01-01") + std::chrono::days{rng.below(2000)});
        if (rng.below(2)) ng.push_back(scan(pid, "n" + std::to_string(i), d));
        else g.push_back({scan(pid, "g" + std::to_string(i), d, ScanKind::Gated), 1.0});
    }
    auto p = build_pairs(ng, g, 365);
    std::set<std::string> seen;
    for (const auto& x : p) {
        CHECK(x.gap_days <= 365);
        CHECK(x.gap_days == std::abs(days_between(x.nongated_date, x.gated_date)));
        CHECK(seen.insert(x.patient_id).second);
    }
}

TEST_CASE("center-stratified split") {
    auto ten = pairs_over_centers({10});
    auto s = split_by_center(ten, 0.5, 1);
    CHECK(s.tune.size() == 5);
    CHECK(s.test.size() == 5);

    std::set<std::size_t> odd_sizes;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto o = split_by_center(pairs_over_centers({11}), 0.5, seed);
        CHECK(o.tune.size() + o.test.size() == 11);
        odd_sizes.insert(o.tune.size());
    }
    CHECK(odd_sizes == std::set<std::size_t>{5, 6});

    Rng rng(4);
    std::vector<int> sizes;
    int total = 0;
    while (total < 1589) {
        int n = std::min<int>(1 + static_cast<int>(rng.below(90)), 1589 - total);
        sizes.push_back(n);
        total += n;
    }
    auto pairs = pairs_over_centers(sizes);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto big = split_by_center(pairs, 0.5, seed);
        CHECK(std::min(big.tune.size(), big.test.size()) == 794);
        CHECK(std::max(big.tune.size(), big.test.size()) == 795);

        std::map<std::string, std::pair<int, int>> per_center;
        std::set<std::string> ids;
        for (const auto& p : big.tune) {
            ++per_center[p.center_id].first;
            ids.insert(p.patient_id);
        }
        for (const auto& p : big.test) {
            ++per_center[p.center_id].second;
            CHECK(ids.insert(p.patient_id).second);
        }
        CHECK(ids.size() == pairs.size());
        for (const auto& [c, n] : per_center) CHECK(std::abs(n.first - n.second) <= 1);
    }
    CHECK(split_by_center(pairs, 0.5, 3).tune.front().patient_id ==
          split_by_center(pairs, 0.5, 3).tune.front().patient_id);
}

TEST_CASE("dedup and center exclusion") {
    std::vector<ScanRecord> s{scan("A", "2", "2016-01-01"), scan("A", "1", "2017-01-01"), scan("B", "9", "2015-01-01"),
                              scan("B", "3", "2015-01-01")};
    auto d = dedup_oldest(s);
    REQUIRE(d.size() == 2);
    CHECK(d[0].study_uid == "2");
    CHECK(d[1].study_uid == "3");

    std::vector<ScanRecord> unique{scan("A", "1", "2016-01-01"), scan("B", "2", "2016-01-01")};
    CHECK(dedup_oldest(unique).size() == 2);

    std::vector<ScanRecord> c{scan("A", "1", "2016-01-01", ScanKind::Ldct, "X"), scan("B", "2", "2016-01-01", ScanKind::Ldct, "Y")};
    CHECK(exclude_training_centers(c, {}).size() == 2);
    CHECK(exclude_training_centers(c, {"X"}).size() == 1);
    CHECK(exclude_training_centers(c, {"X", "Y"}).empty());

    auto scores = testing::screening_scores({10, 10, 10, 10}, 5, 1);
    std::vector<ScanRecord> recs;
    for (const auto& j : scores) recs.push_back(scan_from_json(j));
    CHECK(recs.size() == 45);
    CHECK(dedup_oldest(recs).size() == 40);
}

TEST_CASE("dataset disjointness") {
    CHECK_NOTHROW(assert_disjoint({{"train", {"a", "b"}}, {"tune", {"c"}}, {"test", {"d"}}}));
    try {
        assert_disjoint({{"train", {"a", "b"}}, {"test", {"b"}}});
        FAIL("expected OverlappingDatasets");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::OverlappingDatasets);
    }
}

TEST_CASE("survival rows") {
    std::vector<PatientRecord> ps{patient("A", "2020-12-31"), patient("B", "2020-12-31"), patient("C", "2020-12-31")};
    ps[0].death_date = parse_date("2020-04-10");
    ps[1].followup_end = parse_date("2020-10-27");
    ps[2].mi_dates = {parse_date("2019-12-22")};
    std::vector<IndexedScore> sc{{"A", parse_date("2020-01-01"), 0},
                                 {"B", parse_date("2020-01-01"), 50},
                                 {"C", parse_date("2020-01-01"), 500}};

    auto death = make_survival_rows(ps, sc, OutcomeKind::AllCauseDeath, LipidStrata::None);
    REQUIRE(death.size() == 3);
    CHECK(death[0].duration_days == 100);
    CHECK(death[0].event);
    CHECK(death[0].group_label == "zero");
    CHECK(death[1].duration_days == 300);
    CHECK_FALSE(death[1].event);
    CHECK(death[2].group_label == "gt400");

    auto composite = make_survival_rows(ps, sc, OutcomeKind::CompositeMiCvaDeath, LipidStrata::None);
    REQUIRE(composite.size() == 2);
    for (const auto& r : composite) CHECK(r.patient_id != "C");

    ps[0].death_date = parse_date("2019-06-01");
    try {
        make_survival_rows(ps, sc, OutcomeKind::AllCauseDeath, LipidStrata::None);
        FAIL("expected NegativeDuration");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NegativeDuration);
    }
}

TEST_CASE("composite events and lipid strata") {
    std::vector<PatientRecord> ps{patient("A", "2022-01-01")};
    ps[0].stroke_dates = {parse_date("2020-03-01")};
    ps[0].death_date = parse_date("2021-01-01");
    ps[0].lipid_issue_dates = {parse_date("2020-06-01")};
    std::vector<IndexedScore> sc{{"A", parse_date("2020-01-01"), 150}};

    auto r = make_survival_rows(ps, sc, OutcomeKind::CompositeMiCvaDeath, LipidStrata::Ever);
    REQUIRE(r.size() == 1);
    CHECK(r[0].duration_days == 60);
    CHECK(r[0].group_label == "b101_400_lipid_ever_treated");
    auto before = make_survival_rows(ps, sc, OutcomeKind::CompositeMiCvaDeath, LipidStrata::BeforeEvent);
    CHECK(before[0].group_label == "b101_400_not_treated");

    ps[0].stroke_dates = {parse_date("2020-01-01")};
    auto same_day = make_survival_rows(ps, sc, OutcomeKind::CompositeMiCvaDeath, LipidStrata::None);
    REQUIRE(same_day.size() == 1);
    CHECK(same_day[0].event);
    CHECK(same_day[0].duration_days == 0);
}

TEST_CASE("assembly joins diagnoses and prescriptions") {
    std::vector<Json> pj{Json{{"patient_id", "A"}, {"center_id", "C1"}, {"sex", "M"}, {"followup_end", "2021-01-01"}}};
    std::vector<DiagnosisRecord> dx{{"A", "I21.4", parse_date("2019-01-01")},
                                    {"A", "410.9", parse_date("2019-02-01")},
                                    {"A", "I63.9", parse_date("2022-01-01")},
                                    {"A", "J45", parse_date("2019-01-01")}};
    std::vector<PrescriptionRecord> rx{{"A", "statin", parse_date("2018-01-01")}, {"A", "antibiotic", parse_date("2018-01-01")}};
    IcdCrosswalk icd = IcdCrosswalk::from_json(Json::parse(R"({"mi":{"icd10":["I21"],"icd9":["410"]},"stroke":{"icd10":["I63"]}})"));
    auto p = assemble_patients(pj, dx, rx, icd);
    REQUIRE(p.size() == 1);
    CHECK(p[0].mi_dates.size() == 2);
    CHECK(p[0].stroke_dates.empty());
    CHECK(p[0].lipid_issue_dates.size() == 1);
}

TEST_CASE("oldest report supplies the index") {
    std::vector<DatedReport> r{{"A", parse_date("2018-01-01"), "r2", 40.0},
                               {"A", parse_date("2016-01-01"), "r1", 10.4},
                               {"B", parse_date("2017-01-01"), "r3", 500.0}};
    auto s = oldest_report_scores(r);
    REQUIRE(s.size() == 2);
    CHECK(s[0].patient_id == "A");
    CHECK(s[0].rounded_score == 10);
    CHECK(format_date(s[0].index_date) == "2016-01-01");
}
