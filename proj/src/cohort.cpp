#include "cohort.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "error.hpp"

namespace cac::cohort {

namespace {

std::string opt_str(const Json& j, const char* key) {
    auto it = j.find(key);
    return (it == j.end() || it->is_null()) ? std::string{} : it->get<std::string>();
}

std::optional<Date> opt_date(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return parse_date(it->get<std::string>());
}

std::string_view kind_name(ScanKind k) {
    switch (k) {
    case ScanKind::Gated: return "gated";
    case ScanKind::NonGated: return "nongated";
    case ScanKind::Ldct: return "ldct";
    }
    return "nongated";
}

ScanKind parse_kind(const std::string& s) {
    if (s == "gated") return ScanKind::Gated;
    if (s == "nongated" || s == "non_gated") return ScanKind::NonGated;
    if (s == "ldct") return ScanKind::Ldct;
    fail(ErrorCode::Parse, "unknown scan kind '" + s + "'");
}

bool has_prefix(std::string_view code, const std::vector<std::string>& prefixes) {
    std::string c;
    for (char ch : code)
        if (ch != '.') c += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    for (const auto& p : prefixes)
        if (c.rfind(p, 0) == 0) return true;
    return false;
}

template <class F>
auto parse_record(const char* what, F&& f) {
    try {
        return f();
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, std::string(what) + " record: " + e.what());
    }
}

}  // namespace

ScanRecord scan_from_json(const Json& j) {
    return parse_record("scan", [&] {
        ScanRecord s;
        s.patient_id = j.at("patient_id").get<std::string>();
        s.study_uid = j.at("study_uid").get<std::string>();
        s.date = parse_date(j.at("date").get<std::string>());
        s.center_id = opt_str(j, "center_id");
        s.kind = parse_kind(j.value("kind", std::string("nongated")));
        s.manufacturer = opt_str(j, "manufacturer");
        if (auto it = j.find("kvp"); it != j.end() && !it->is_null()) s.kvp = it->get<double>();
        s.sex = opt_str(j, "sex");
        return s;
    });
}

Json to_json(const ScanRecord& s) {
    Json j{{"patient_id", s.patient_id}, {"study_uid", s.study_uid}, {"date", format_date(s.date)},
           {"center_id", s.center_id},   {"kind", std::string(kind_name(s.kind))},
           {"manufacturer", s.manufacturer}, {"sex", s.sex}};
    j["kvp"] = s.kvp ? Json(*s.kvp) : Json(nullptr);
    return j;
}

IcdCrosswalk IcdCrosswalk::from_json(const Json& j) {
    return parse_record("icd crosswalk", [&] {
        IcdCrosswalk c;
        c.mi_prefixes.clear();
        c.stroke_prefixes.clear();
        for (const auto& k : {"icd10", "icd9"}) {
            if (auto it = j.at("mi").find(k); it != j.at("mi").end())
                for (const auto& p : *it) c.mi_prefixes.push_back(p.get<std::string>());
            if (auto it = j.at("stroke").find(k); it != j.at("stroke").end())
                for (const auto& p : *it) c.stroke_prefixes.push_back(p.get<std::string>());
        }
        return c;
    });
}

bool IcdCrosswalk::is_mi(std::string_view code) const { return has_prefix(code, mi_prefixes); }
bool IcdCrosswalk::is_stroke(std::string_view code) const { return has_prefix(code, stroke_prefixes); }

PatientRecord patient_from_json(const Json& j) {
    return parse_record("patient", [&] {
        PatientRecord p;
        p.patient_id = j.at("patient_id").get<std::string>();
        p.center_id = opt_str(j, "center_id");
        p.sex = opt_str(j, "sex");
        p.birth_date = opt_date(j, "birth_date");
        p.death_date = opt_date(j, "death_date");
        p.followup_end = parse_date(j.at("followup_end").get<std::string>());
        return p;
    });
}

DiagnosisRecord diagnosis_from_json(const Json& j) {
    return parse_record("diagnosis", [&] {
        return DiagnosisRecord{j.at("patient_id").get<std::string>(), j.at("code").get<std::string>(),
                               parse_date(j.at("date").get<std::string>())};
    });
}

PrescriptionRecord prescription_from_json(const Json& j) {
    return parse_record("prescription", [&] {
        return PrescriptionRecord{j.at("patient_id").get<std::string>(), j.at("drug_class").get<std::string>(),
                                  parse_date(j.at("issue_date").get<std::string>())};
    });
}

std::vector<PatientRecord> assemble_patients(std::span<const Json> patients, std::span<const DiagnosisRecord> dx,
                                             std::span<const PrescriptionRecord> rx, const IcdCrosswalk& icd,
                                             const std::set<std::string>& lipid_classes) {
    std::vector<PatientRecord> out;
    std::unordered_map<std::string, std::size_t> pos;
    for (const auto& pj : patients) {
        auto p = patient_from_json(pj);
        if (p.death_date && *p.death_date > p.followup_end) p.followup_end = *p.death_date;
        if (!pos.emplace(p.patient_id, out.size()).second)
            fail(ErrorCode::InvalidArgument, "duplicate patient " + p.patient_id);
        out.push_back(std::move(p));
    }
    for (const auto& d : dx) {
        auto it = pos.find(d.patient_id);
        if (it == pos.end()) continue;
        auto& p = out[it->second];
        if (d.date > p.followup_end) continue;
        if (icd.is_mi(d.code)) p.mi_dates.push_back(d.date);
        if (icd.is_stroke(d.code)) p.stroke_dates.push_back(d.date);
    }
    for (const auto& r : rx) {
        auto it = pos.find(r.patient_id);
        if (it == pos.end() || !lipid_classes.count(r.drug_class)) continue;
        auto& p = out[it->second];
        if (r.issue_date <= p.followup_end) p.lipid_issue_dates.push_back(r.issue_date);
    }
    for (auto& p : out) {
        std::sort(p.mi_dates.begin(), p.mi_dates.end());
        std::sort(p.stroke_dates.begin(), p.stroke_dates.end());
        std::sort(p.lipid_issue_dates.begin(), p.lipid_issue_dates.end());
    }
    return out;
}

Json to_json(const PairedStudy& p) {
    Json j{{"patient_id", p.patient_id},
           {"center_id", p.center_id},
           {"nongated_study_uid", p.nongated_study_uid},
           {"gated_study_uid", p.gated_study_uid},
           {"nongated_date", format_date(p.nongated_date)},
           {"gated_date", format_date(p.gated_date)},
           {"gap_days", p.gap_days},
           {"reference_score", p.reference_score},
           {"manufacturer", p.manufacturer},
           {"sex", p.sex}};
    j["kvp"] = p.kvp ? Json(*p.kvp) : Json(nullptr);
    j["ai_score"] = p.ai_score ? agatston::to_json(*p.ai_score, false) : Json(nullptr);
    return j;
}

PairedStudy pair_from_json(const Json& j) {
    return parse_record("pair", [&] {
        PairedStudy p;
        p.patient_id = j.at("patient_id").get<std::string>();
        p.center_id = opt_str(j, "center_id");
        p.nongated_study_uid = j.at("nongated_study_uid").get<std::string>();
        p.gated_study_uid = j.at("gated_study_uid").get<std::string>();
        p.nongated_date = parse_date(j.at("nongated_date").get<std::string>());
        p.gated_date = parse_date(j.at("gated_date").get<std::string>());
        p.gap_days = j.at("gap_days").get<std::int64_t>();
        p.reference_score = j.at("reference_score").get<double>();
        p.manufacturer = opt_str(j, "manufacturer");
        p.sex = opt_str(j, "sex");
        if (auto it = j.find("kvp"); it != j.end() && !it->is_null()) p.kvp = it->get<double>();
        if (auto it = j.find("ai_score"); it != j.end() && !it->is_null()) p.ai_score = agatston::score_from_json(*it);
        return p;
    });
}

std::vector<PairedStudy> build_pairs(std::span<const ScanRecord> nongated, std::span<const GatedReference> gated,
                                     std::int64_t window_days) {
    if (window_days < 0) fail(ErrorCode::InvalidArgument, "window_days must be >= 0");
    std::map<std::string, std::vector<const GatedReference*>> gated_by_patient;
    for (const auto& g : gated) gated_by_patient[g.scan.patient_id].push_back(&g);

    std::map<std::string, PairedStudy> best;
    for (const auto& ng : nongated) {
        auto it = gated_by_patient.find(ng.patient_id);
        if (it == gated_by_patient.end()) continue;
        for (const auto* g : it->second) {
            const std::int64_t gap = std::llabs(days_between(ng.date, g->scan.date));
            if (gap > window_days) continue;
            PairedStudy cand;
            cand.patient_id = ng.patient_id;
            cand.center_id = ng.center_id;
            cand.nongated_study_uid = ng.study_uid;
            cand.gated_study_uid = g->scan.study_uid;
            cand.nongated_date = ng.date;
            cand.gated_date = g->scan.date;
            cand.gap_days = gap;
            cand.reference_score = g->reference_score;
            cand.manufacturer = ng.manufacturer;
            cand.kvp = ng.kvp;
            cand.sex = ng.sex;
            auto [bit, inserted] = best.emplace(ng.patient_id, cand);
            if (inserted) continue;
            const auto& cur = bit->second;
            auto key = [](const PairedStudy& p) {
                return std::tuple(p.gap_days, p.gated_date, p.gated_study_uid, p.nongated_study_uid);
            };
            if (key(cand) < key(cur)) bit->second = cand;
        }
    }
    std::vector<PairedStudy> out;
    out.reserve(best.size());
    for (auto& [pid, p] : best) out.push_back(std::move(p));
    return out;
}

Split split_by_center(std::span<const PairedStudy> pairs, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) fail(ErrorCode::InvalidArgument, "split ratio must lie in [0, 1]");
    std::map<std::string, std::vector<const PairedStudy*>> by_center;
    std::set<std::string> seen;
    for (const auto& p : pairs) {
        if (!seen.insert(p.patient_id).second)
            fail(ErrorCode::InvalidArgument, "patient " + p.patient_id + " appears in more than one pair");
        by_center[p.center_id].push_back(&p);
    }
    Rng rng(seed);
    // Systematic rounding of fractional shares; the seed picks the phase.
    double carry = rng.below(2) ? 0.5 : 0.0;
    Split out;
    for (auto& [center, members] : by_center) {
        std::sort(members.begin(), members.end(),
                  [](const PairedStudy* a, const PairedStudy* b) { return a->patient_id < b->patient_id; });
        rng.shuffle(members);
        const double share = ratio * static_cast<double>(members.size());
        auto k = static_cast<std::size_t>(std::floor(share + 1e-9));
        carry += share - static_cast<double>(k);
        if (carry >= 1.0 - 1e-9 && k < members.size()) {
            ++k;
            carry -= 1.0;
        }
        for (std::size_t i = 0; i < members.size(); ++i) (i < k ? out.tune : out.test).push_back(*members[i]);
    }
    auto by_patient = [](const PairedStudy& a, const PairedStudy& b) { return a.patient_id < b.patient_id; };
    std::sort(out.tune.begin(), out.tune.end(), by_patient);
    std::sort(out.test.begin(), out.test.end(), by_patient);
    return out;
}

std::vector<ScanRecord> dedup_oldest(std::span<const ScanRecord> scans) {
    std::map<std::string, const ScanRecord*> keep;
    for (const auto& s : scans) {
        auto [it, inserted] = keep.emplace(s.patient_id, &s);
        if (inserted) continue;
        const auto* cur = it->second;
        if (s.date < cur->date || (s.date == cur->date && s.study_uid < cur->study_uid)) it->second = &s;
    }
    std::vector<ScanRecord> out;
    out.reserve(keep.size());
    for (const auto& [pid, s] : keep) out.push_back(*s);
    return out;
}

std::vector<ScanRecord> exclude_training_centers(std::span<const ScanRecord> scans,
                                                 const std::set<std::string>& train_centers) {
    std::vector<ScanRecord> out;
    for (const auto& s : scans)
        if (!train_centers.count(s.center_id)) out.push_back(s);
    return out;
}

void assert_disjoint(const std::map<std::string, std::set<std::string>>& datasets) {
    for (auto a = datasets.begin(); a != datasets.end(); ++a)
        for (auto b = std::next(a); b != datasets.end(); ++b)
            for (const auto& pid : a->second)
                if (b->second.count(pid))
                    fail(ErrorCode::OverlappingDatasets,
                         "patient " + pid + " is shared by datasets " + a->first + " and " + b->first);
}

std::string_view outcome_name(OutcomeKind k) {
    return k == OutcomeKind::AllCauseDeath ? "all_cause_death" : "composite_mi_cva_death";
}

OutcomeKind parse_outcome(std::string_view s) {
    if (s == "death" || s == "all_cause_death") return OutcomeKind::AllCauseDeath;
    if (s == "composite" || s == "composite_mi_cva_death") return OutcomeKind::CompositeMiCvaDeath;
    fail(ErrorCode::InvalidArgument, "unknown outcome '" + std::string(s) + "'");
}

LipidStrata parse_strata(std::string_view s) {
    if (s == "none") return LipidStrata::None;
    if (s == "lipid-ever") return LipidStrata::Ever;
    if (s == "lipid-before-event") return LipidStrata::BeforeEvent;
    fail(ErrorCode::InvalidArgument, "unknown strata '" + std::string(s) + "'");
}

Json to_json(const SurvivalRow& r) {
    return Json{{"patient_id", r.patient_id},
                {"group_label", r.group_label},
                {"duration_days", r.duration_days},
                {"event", r.event},
                {"outcome_kind", std::string(outcome_name(r.outcome_kind))}};
}

SurvivalRow survival_row_from_json(const Json& j) {
    return parse_record("survival row", [&] {
        SurvivalRow r;
        r.patient_id = j.at("patient_id").get<std::string>();
        r.group_label = j.at("group_label").get<std::string>();
        r.duration_days = j.at("duration_days").get<std::int64_t>();
        r.event = j.at("event").get<bool>();
        r.outcome_kind = parse_outcome(j.value("outcome_kind", std::string("all_cause_death")));
        if (r.duration_days < 0) fail(ErrorCode::NegativeDuration, "negative duration for " + r.patient_id);
        return r;
    });
}

std::string group_label(CacBin bin, LipidStrata strata, bool treated) {
    std::string label(agatston::bin_name(bin));
    if (strata != LipidStrata::None) label += treated ? "_lipid_ever_treated" : "_not_treated";
    return label;
}

std::vector<SurvivalRow> make_survival_rows(std::span<const PatientRecord> patients,
                                            std::span<const IndexedScore> scores, OutcomeKind outcome,
                                            LipidStrata strata) {
    std::unordered_map<std::string, const PatientRecord*> by_id;
    for (const auto& p : patients) by_id.emplace(p.patient_id, &p);

    std::vector<SurvivalRow> rows;
    for (const auto& s : scores) {
        auto it = by_id.find(s.patient_id);
        if (it == by_id.end()) fail(ErrorCode::InvalidArgument, "no patient record for " + s.patient_id);
        const PatientRecord& p = *it->second;
        const Date index = s.index_date;

        if (p.death_date && *p.death_date < index)
            fail(ErrorCode::NegativeDuration, "patient " + p.patient_id + " died before index date");
        if (p.followup_end < index)
            fail(ErrorCode::NegativeDuration, "patient " + p.patient_id + " follow-up ends before index date");

        std::optional<Date> event_date;
        if (outcome == OutcomeKind::AllCauseDeath) {
            event_date = p.death_date;
        } else {
            auto before = [&](const std::vector<Date>& ds) {
                return std::any_of(ds.begin(), ds.end(), [&](Date d) { return d < index; });
            };
            if (before(p.mi_dates) || before(p.stroke_dates)) continue;
            std::vector<Date> candidates;
            if (!p.mi_dates.empty()) candidates.push_back(p.mi_dates.front());
            if (!p.stroke_dates.empty()) candidates.push_back(p.stroke_dates.front());
            if (p.death_date) candidates.push_back(*p.death_date);
            if (!candidates.empty()) event_date = *std::min_element(candidates.begin(), candidates.end());
        }
        if (event_date && *event_date > p.followup_end) event_date.reset();

        bool treated = false;
        if (strata == LipidStrata::Ever) {
            treated = !p.lipid_issue_dates.empty();
        } else if (strata == LipidStrata::BeforeEvent) {
            const Date limit = event_date.value_or(p.followup_end + std::chrono::days{1});
            treated = !p.lipid_issue_dates.empty() && p.lipid_issue_dates.front() < limit;
        }

        SurvivalRow r;
        r.patient_id = p.patient_id;
        r.group_label = group_label(agatston::bin_score(s.rounded_score), strata, treated);
        r.event = event_date.has_value();
        r.duration_days = days_between(index, event_date.value_or(p.followup_end));
        r.outcome_kind = outcome;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<IndexedScore> oldest_report_scores(std::span<const DatedReport> reports) {
    std::map<std::string, const DatedReport*> oldest;
    for (const auto& r : reports) {
        auto [it, inserted] = oldest.emplace(r.patient_id, &r);
        if (inserted) continue;
        const auto* cur = it->second;
        if (r.report_date < cur->report_date || (r.report_date == cur->report_date && r.report_id < cur->report_id))
            it->second = &r;
    }
    std::vector<IndexedScore> out;
    for (const auto& [pid, r] : oldest) out.push_back({pid, r->report_date, agatston::round_score(r->score)});
    return out;
}

}  // namespace cac::cohort
