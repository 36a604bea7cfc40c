#include "reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "error.hpp"

namespace cac::reports {

bool on_active_therapy(const cohort::PatientRecord& p, std::int64_t window_days) {
    const Date lo = p.followup_end - std::chrono::days{window_days};
    return std::any_of(p.lipid_issue_dates.begin(), p.lipid_issue_dates.end(),
                       [&](Date d) { return d >= lo && d <= p.followup_end; });
}

namespace {

DistributionPanel make_panel(std::string name, const std::vector<std::int64_t>& rounded) {
    DistributionPanel p;
    p.name = std::move(name);
    p.n = static_cast<std::int64_t>(rounded.size());
    for (auto r : rounded) ++p.counts[agatston::bin_index(agatston::bin_score(r))];
    if (p.n > 0)
        for (int i = 0; i < 4; ++i) p.percents[i] = 100.0 * static_cast<double>(p.counts[i]) / static_cast<double>(p.n);
    return p;
}

}  // namespace

std::vector<DistributionPanel> screening_report(std::span<const PatientScore> scores,
                                                const std::map<std::string, cohort::PatientRecord>* patients) {
    std::vector<std::int64_t> all, ever, never, living_on, living_off;
    for (const auto& s : scores) {
        all.push_back(s.rounded_score);
        if (!patients) continue;
        auto it = patients->find(s.patient_id);
        if (it == patients->end()) fail(ErrorCode::InvalidArgument, "no patient record for " + s.patient_id);
        const auto& p = it->second;
        (p.lipid_issue_dates.empty() ? never : ever).push_back(s.rounded_score);
        if (!p.death_date) (on_active_therapy(p) ? living_on : living_off).push_back(s.rounded_score);
    }
    std::vector<DistributionPanel> out{make_panel("full_cohort", all)};
    if (patients) {
        out.push_back(make_panel("ever_prescribed", ever));
        out.push_back(make_panel("never_prescribed", never));
        out.push_back(make_panel("living_on_therapy", living_on));
        out.push_back(make_panel("living_off_therapy", living_off));
    }
    return out;
}

TherapyGap therapy_gap_report(std::span<const PatientScore> scores,
                              const std::map<std::string, cohort::PatientRecord>& patients) {
    TherapyGap g;
    for (const auto& s : scores) {
        if (agatston::bin_score(s.rounded_score) != agatston::CacBin::Gt400) continue;
        auto it = patients.find(s.patient_id);
        if (it == patients.end()) fail(ErrorCode::InvalidArgument, "no patient record for " + s.patient_id);
        if (it->second.death_date) continue;
        ++g.n_living_gt400;
        if (!on_active_therapy(it->second)) g.untreated_patient_ids.push_back(s.patient_id);
    }
    std::sort(g.untreated_patient_ids.begin(), g.untreated_patient_ids.end());
    g.n_untreated = static_cast<std::int64_t>(g.untreated_patient_ids.size());
    if (g.n_living_gt400 > 0)
        g.proportion_untreated = static_cast<double>(g.n_untreated) / static_cast<double>(g.n_living_gt400);
    return g;
}

std::string format_percent(double pct) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", std::round(pct * 10.0) / 10.0);
    return buf;
}

Json to_json(const DistributionPanel& p) {
    Json bins = Json::array();
    for (int i = 0; i < 4; ++i)
        bins.push_back(Json{{"bin", std::string(agatston::bin_name(static_cast<agatston::CacBin>(i)))},
                            {"count", p.counts[i]},
                            {"percent", p.percents[i]},
                            {"percent_display", format_percent(p.percents[i])}});
    return Json{{"panel", p.name}, {"n", p.n}, {"bins", bins}};
}

Json to_json(const TherapyGap& g) {
    return Json{{"n_living_gt400", g.n_living_gt400},
                {"n_untreated", g.n_untreated},
                {"proportion_untreated", g.proportion_untreated ? Json(*g.proportion_untreated) : Json(nullptr)},
                {"percent_display", g.proportion_untreated ? format_percent(100.0 * *g.proportion_untreated) : "NA"},
                {"untreated_patient_ids", g.untreated_patient_ids},
                {"active_therapy_window_days", kActiveTherapyDays}};
}

}  // namespace cac::reports
