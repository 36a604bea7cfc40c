// Acceptance suite: one PASS/FAIL line per primary criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "agatston.hpp"
#include "cohort.hpp"
#include "embedded_data.hpp"
#include "pipeline.hpp"
#include "report_extraction.hpp"
#include "reports.hpp"
#include "stats.hpp"
#include "store.hpp"
#include "test_support.hpp"

using namespace cac;
namespace fs = std::filesystem;
using testing::TempDir;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [miss: " << what << "]";
        }
    }
};

int failures = 0;

void criterion(const char* name, const std::function<void(Outcome&)>& body) {
    Outcome o;
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::printf("%s %s:%s\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str());
    std::fflush(stdout);
}

double pct1(double fraction) { return std::round(fraction * 1000.0) / 10.0; }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    return out;
}

void agatston_oracle(Outcome& o) {
    Rng rng(20240601);
    agatston::ScoringConfig cfg;
    cfg.min_slice_area_mm2 = 0.0;
    const int n = 240;
    int mismatches = 0;
    double seconds = 0.0;
    for (int i = 0; i < n; ++i) {
        auto v = testing::random_volume(rng, 4, 32);
        auto m = testing::random_mask(rng, v);
        const auto t0 = std::chrono::steady_clock::now();
        const double got = agatston::score_scan(v, m, cfg).total;
        seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (got != testing::oracle_agatston(v, m)) ++mismatches;
    }
    o.detail << " " << n << " volumes, " << mismatches << " mismatches, scoring time " << seconds << " s";
    o.require(mismatches == 0, "exact agreement");
    o.require(seconds < 10.0, "runtime < 10 s");
}

void table_rows(Outcome& o) {
    int solved = 0, reproduced = 0;
    bool men_ok = false;
    for (const auto& row : testing::subgroup_table()) {
        const bool men = row.name == "Men_1";
        auto cells = testing::solve_cells(row, 0.05, 5000, men ? std::optional<std::int64_t>(749) : std::nullopt);
        if (!cells) continue;
        ++solved;
        const std::int64_t thr = std::stoll(row.name.substr(row.name.rfind('_') + 1));
        std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
        auto add = [&](std::int64_t k, std::int64_t ref, std::int64_t pred) {
            for (std::int64_t i = 0; i < k; ++i) pairs.emplace_back(ref, pred);
        };
        add(cells->tp, thr, thr + 5);
        add(cells->fp, 0, thr);
        add(cells->fn, thr, thr - 1);
        add(cells->tn, 0, 0);
        auto m = stats::threshold_metrics(pairs, thr);
        const std::optional<double> got[6]{m.accuracy, m.ppv, m.npv, m.sensitivity, m.specificity, m.f1};
        bool ok = true;
        for (int k = 0; k < 6; ++k)
            ok = ok && got[k] && std::abs(*got[k] * 100.0 - row.pct[static_cast<std::size_t>(k)]) <= 0.1;
        reproduced += ok;
        if (men)
            men_ok = ok && cells->tp == 571 && cells->fp == 25 && cells->fn == 47 && cells->tn == 106 &&
                     m.tp + m.fn == 618 && m.tp + m.fp == 596;
    }
    const auto total = testing::subgroup_table().size();
    o.detail << " " << solved << "/" << total << " rows solved, " << reproduced
             << " reproduced within 0.1 pp; Men_1 cells 571/25/47/106 " << (men_ok ? "ok" : "wrong");
    o.require(reproduced >= 6, ">= 6 rows");
    o.require(men_ok, "Men_1");
}

void agreement_fixtures(Outcome& o) {
    stats::ConfusionMatrix4 diag, half, indep;
    for (int i = 0; i < 4; ++i) diag.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 3 + i;
    half.counts[0] = {2, 1, 0, 0};
    half.counts[1] = {1, 2, 0, 0};
    const std::int64_t r[4]{1, 2, 3, 4}, c[4]{2, 1, 1, 2};
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) indep.counts[i][j] = r[i] * c[j];
    const double kd = stats::weighted_kappa(diag), kh = stats::weighted_kappa(half), ki = stats::weighted_kappa(indep);
    o.detail << " kappa diag=" << kd << " [[2,1],[1,2]]=" << kh << " indep=" << ki;
    o.require(kd == 1.0, "diagonal kappa");
    o.require(std::abs(kh - 1.0 / 3.0) <= 1e-9, "2x2 kappa");
    o.require(std::abs(ki) <= 1e-12, "independence kappa");

    // ICC from hand-evaluated mean squares: MSR = 929/60, MSC = 1/12, MSE = 0.68333...
    std::vector<std::pair<double, double>> h{{1, 2}, {3, 3}, {5, 4}, {7, 9}, {2, 2}, {8, 7}};
    const double msr = 929.0 / 60.0, msc = 1.0 / 12.0, mse = 41.0 / 60.0;
    const double icc_hand = (msr - mse) / (msr + mse + 2.0 * (msc - mse) / 6.0);
    const double icc = stats::icc_agreement(h);
    o.detail << "; icc=" << icc;
    o.require(std::abs(icc - icc_hand) <= 1e-9, "ICC hand fixture");
    std::vector<std::pair<double, double>> same{{1, 1}, {4, 4}, {9, 9}};
    o.require(std::abs(stats::icc_agreement(same) - 1.0) <= 1e-12, "ICC identity");

    std::vector<std::pair<double, double>> ba{{10, 12}, {20, 19}, {30, 35}, {40, 40}};
    auto b = stats::bland_altman(ba);
    const double sd = std::sqrt(7.0);
    o.detail << "; BA mean=" << b.mean_diff << " sd=" << b.sd_diff;
    o.require(std::abs(b.mean_diff - 1.5) <= 1e-9 && std::abs(b.sd_diff - sd) <= 1e-9 &&
                  std::abs(b.lower - (1.5 - 1.96 * sd)) <= 1e-9 && std::abs(b.upper - (1.5 + 1.96 * sd)) <= 1e-9,
              "Bland-Altman hand fixture");

    std::vector<std::pair<double, double>> lin, ex;
    for (int i = 0; i < 15; ++i) {
        lin.push_back({i, 2.0 * i});
        ex.push_back({i, std::exp(i / 2.0)});
    }
    auto cl = stats::correlations(lin), ce = stats::correlations(ex);
    o.require(std::abs(cl.pearson - 1.0) <= 1e-12 && std::abs(cl.spearman - 1.0) <= 1e-12, "linear correlations");
    o.require(std::abs(ce.spearman - 1.0) <= 1e-12 && ce.pearson < 1.0, "monotone correlations");
}

double efron_ll(const std::vector<stats::CoxSubject>& s, double b) {
    std::set<double> times;
    for (const auto& x : s)
        if (x.event) times.insert(x.time);
    double ll = 0.0;
    for (double t : times) {
        double risk = 0.0, tied = 0.0;
        int d = 0;
        for (const auto& x : s) {
            if (x.time >= t) risk += std::exp(b * x.x);
            if (x.time == t && x.event) {
                tied += std::exp(b * x.x);
                ll += b * x.x;
                ++d;
            }
        }
        for (int l = 0; l < d; ++l) ll -= std::log(risk - static_cast<double>(l) / d * tied);
    }
    return ll;
}

void km_cox(Outcome& o) {
    std::vector<stats::Observation> obs{{1, true}, {2, false}, {3, true}};
    auto km = stats::km_estimate(obs);
    o.require(std::abs(km.survival_at(1) - 2.0 / 3.0) <= 1e-15 && km.survival_at(3) == 0.0, "hand product-limit");
    std::vector<stats::Observation> cens{{1, false}, {2, false}};
    o.require(stats::km_estimate(cens).survival_at(5) == 1.0, "all censored");

    std::vector<stats::CoxSubject> six{{1, true, 1}, {2, true, 0}, {2, true, 1}, {3, false, 1}, {4, true, 0}, {5, false, 0}};
    double best = 0.0, best_ll = -INFINITY;
    for (double b = -6.0; b <= 6.0; b += 1e-4) {
        const double ll = efron_ll(six, b);
        if (ll > best_ll) {
            best_ll = ll;
            best = b;
        }
    }
    auto fit = stats::cox_fit(six);
    o.detail << " 6-subject log-HR " << fit.log_hr << " vs grid " << best;
    o.require(std::abs(fit.log_hr - best) <= 1e-3, "grid oracle");

    Rng rng(99);
    std::vector<stats::CoxSubject> s;
    for (int i = 0; i < 120; ++i) {
        const int x = static_cast<int>(rng.below(2));
        s.push_back({static_cast<double>(1 + rng.below(400 - 150 * x)), rng.below(3) != 0, x});
    }
    auto base = stats::cox_fit(s);
    auto warped = s, swapped = s;
    for (auto& x : warped) x.time = std::sqrt(x.time) * 7.0 + 1.0;
    for (auto& x : swapped) x.x = 1 - x.x;
    const double d_rank = std::abs(stats::cox_fit(warped).log_hr - base.log_hr);
    const double d_swap = std::abs(stats::cox_fit(swapped).log_hr + base.log_hr);
    o.detail << "; rank diff " << d_rank << ", swap diff " << d_swap;
    o.require(d_rank <= 1e-9, "rank invariance");
    o.require(d_swap <= 1e-9, "label swap");
}

void mortality_reconstruction(Outcome& o) {
    constexpr double step = 730.5, horizon = 3652.5;
    auto zero = testing::reconstruct_rows(testing::reference_zero_mortality(), "zero", step, horizon);
    auto high = testing::reconstruct_rows(testing::reference_gt400_mortality(), "gt400", step, horizon);
    const double f0 = 1.0 - stats::km_estimate(zero).survival_at(horizon);
    const double f4 = 1.0 - stats::km_estimate(high).survival_at(horizon);
    auto rows = zero;
    rows.insert(rows.end(), high.begin(), high.end());
    auto fit = stats::cox_two_group(rows, "zero", "gt400");
    o.detail << " event fraction zero " << pct1(f0) << "% (25.4 +/- 5), gt400 " << pct1(f4)
             << "% (60.2 +/- 5), HR " << fit.hr << " (3.49 +/- 0.35), p " << fit.p_value;
    o.require(std::abs(f0 * 100.0 - 25.4) <= 5.0, "zero-bin event fraction");
    o.require(std::abs(f4 * 100.0 - 60.2) <= 5.0, "gt400 event fraction");
    o.require(std::abs(fit.hr - 3.49) <= 0.35, "hazard ratio");
    o.require(fit.p_value < 0.005, "p < 0.005");
}

void nlp_corpus(Outcome& o) {
    const auto pack = nlp::RulePack::from_json(Json::parse(embedded::default_rules_json));
    const auto recs = read_jsonl(testing::source_dir() / "data/corpus/nlp_reports_300.jsonl");
    int correct = 0;
    for (const auto& j : recs) {
        auto r = nlp::extract_agatston(j.at("report_text").get<std::string>(), pack);
        bool ok = std::string(nlp::status_name(r.status)) == j.at("expected_status").get<std::string>();
        if (ok && r.status == nlp::Status::Extracted) ok = r.score == j.at("expected_score").get<double>();
        if (ok && r.reason) ok = std::string(nlp::reason_name(*r.reason)) == j.at("expected_reason").get<std::string>();
        correct += ok;
    }
    const double acc = recs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(recs.size());
    o.detail << " " << correct << "/" << recs.size() << " (" << pct1(acc) << "%)";
    o.require(recs.size() == 300, "300 reports");
    o.require(acc >= 0.99, ">= 99%");
}

void cohort_rules(Outcome& o) {
    Rng rng(7);
    std::vector<cohort::ScanRecord> ng;
    std::vector<cohort::GatedReference> g;
    for (int i = 0; i < 3000; ++i) {
        cohort::ScanRecord s;
        s.patient_id = "P" + std::to_string(rng.below(800));
        s.study_uid = "S" + std::to_string(i);
        s.date = parse_date("2010-01-01") + std::chrono::days{rng.below(3000)};
        s.center_id = "C" + std::to_string(rng.below(20));
        if (rng.below(2)) ng.push_back(s);
        else g.push_back({s, 1.0});
    }
    auto pairs = cohort::build_pairs(ng, g, 365);
    bool window_ok = true, nearest_ok = true;
    for (const auto& p : pairs) {
        window_ok = window_ok && p.gap_days <= 365;
        for (const auto& n : ng)
            if (n.patient_id == p.patient_id)
                for (const auto& x : g)
                    if (x.scan.patient_id == p.patient_id && std::abs(days_between(n.date, x.scan.date)) < p.gap_days)
                        nearest_ok = false;
    }
    o.require(window_ok, "pair window");
    o.require(nearest_ok, "nearest pair");

    int worst = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto sp = cohort::split_by_center(pairs, 0.5, seed);
        std::map<std::string, int> bal;
        for (const auto& p : sp.tune) ++bal[p.center_id];
        for (const auto& p : sp.test) --bal[p.center_id];
        for (const auto& [c, d] : bal) worst = std::max(worst, std::abs(d));
        if (sp.tune.size() + sp.test.size() != pairs.size()) worst = 99;
    }
    o.require(worst <= 1, "split imbalance <= 1");

    auto scr = testing::screening_scores({1669, 1726, 1566, 3091}, 5, 3);
    std::vector<cohort::ScanRecord> scans;
    std::map<std::string, std::int64_t> score;
    for (const auto& j : scr) {
        scans.push_back(cohort::scan_from_json(j));
        score[j.at("study_uid").get<std::string>()] = j.at("rounded_score").get<std::int64_t>();
    }
    auto kept = cohort::dedup_oldest(scans);
    bool oldest = true;
    for (const auto& s : kept) oldest = oldest && score.at(s.study_uid) != 5000;
    o.detail << " " << pairs.size() << " pairs, max center imbalance " << worst << ", dedup " << scans.size() << " -> "
             << kept.size();
    o.require(scans.size() == 8057 && kept.size() == 8052 && oldest, "oldest-scan dedup");

    cohort::PatientRecord p;
    p.patient_id = "A";
    p.followup_end = parse_date("2020-01-01");
    p.mi_dates = {parse_date("2018-12-22")};
    std::vector<cohort::PatientRecord> ps{p};
    std::vector<cohort::IndexedScore> sc{{"A", parse_date("2019-01-01"), 10}};
    o.require(cohort::make_survival_rows(ps, sc, cohort::OutcomeKind::CompositeMiCvaDeath, cohort::LipidStrata::None)
                  .empty(),
              "pre-index event exclusion");

    TempDir tmp;
    auto cfg = app::PipelineConfig::load(testing::write_workspace(tmp / "ws", 2024));
    store::Store a(tmp / "a"), b(tmp / "b");
    app::run_pipeline(a, cfg);
    app::run_pipeline(b, cfg);
    const auto sa = snapshot(a.reports_dir()), sb = snapshot(b.reports_dir());
    o.detail << ", rerun " << sa.size() << " report files " << (sa == sb ? "identical" : "differ");
    o.require(!sa.empty() && sa == sb, "byte-identical rerun");
}

void screening_and_gap(Outcome& o) {
    TempDir tmp;
    write_jsonl(tmp / "screening.jsonl", testing::screening_scores({1669, 1726, 1566, 3091}, 5, 11));
    auto cfg = app::PipelineConfig::from_json(Json{{"seed", 1}, {"screening", {{"scores", "screening.jsonl"}}}}, tmp.path());
    store::Store st(tmp / "store");
    app::screening_report(st, cfg, tmp / "out");
    const auto panels = Json::parse(read_file(tmp / "out/screening.json"));
    std::vector<std::string> shown;
    std::int64_t n = 0;
    for (const auto& p : panels)
        if (p.at("panel") == "full_cohort") {
            n = p.at("n").get<std::int64_t>();
            for (const auto& b : p.at("bins")) shown.push_back(b.at("percent_display").get<std::string>());
        }
    o.detail << " screening n=" << n << " bins";
    for (const auto& s : shown) o.detail << " " << s;
    o.require(n == 8052 && shown == std::vector<std::string>{"20.7", "21.4", "19.4", "38.4"}, "screening percentages");

    auto fx = testing::therapy_fixture(3091, 3007, 920, 5);
    write_jsonl(tmp / "t_scores.jsonl", fx.scores);
    write_jsonl(tmp / "t_patients.jsonl", fx.patients);
    write_jsonl(tmp / "t_rx.jsonl", fx.prescriptions);
    auto tcfg = app::PipelineConfig::from_json(
        Json{{"seed", 1},
             {"screening", {{"scores", "t_scores.jsonl"}}},
             {"cohort", {{"patients", "t_patients.jsonl"}, {"prescriptions", "t_rx.jsonl"}}}},
        tmp.path());
    app::therapy_gap(st, tcfg, tmp / "gap");
    const auto gap = Json::parse(read_file(tmp / "gap/therapy_gap.json"));
    o.detail << "; therapy gap " << gap.at("n_untreated") << "/" << gap.at("n_living_gt400") << " = "
             << gap.at("percent_display").get<std::string>() << "%";
    o.require(gap.at("n_untreated") == 920 && gap.at("n_living_gt400") == 3007 && gap.at("percent_display") == "30.6",
              "therapy gap 920/3007");
}

}  // namespace

int main() {
    criterion("agatston-oracle-equivalence", agatston_oracle);
    criterion("table-row-reconstruction", table_rows);
    criterion("kappa-icc-correlation-fixtures", agreement_fixtures);
    criterion("km-cox-oracles", km_cox);
    criterion("mortality-curve-reconstruction", mortality_reconstruction);
    criterion("nlp-corpus-accuracy", nlp_corpus);
    criterion("cohort-rules-and-rerun", cohort_rules);
    criterion("screening-and-therapy-gap", screening_and_gap);
    std::printf("%d/8 criteria passed\n", 8 - failures);
    return failures == 0 ? 0 : 1;
}
