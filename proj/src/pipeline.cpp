#include "pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <set>
#include <thread>

#include "embedded_data.hpp"
#include "error.hpp"
#include "reports.hpp"
#include "stats.hpp"

namespace cac::app {

namespace {

const Json kEmpty = Json::object();

template <class F>
void parallel_for(std::size_t n, F&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::min(8u, std::thread::hardware_concurrency())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    for (auto& t : pool) t.join();
}

std::string fingerprint(const Json& j) { return hex64(fnv1a64(j.dump())); }

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string fmt_opt_pct(const std::optional<double>& v) { return v ? fmt(100.0 * *v, "%.1f") : "NA"; }

std::vector<std::string> manifest_studies(const store::Store& st) {
    const Json m = st.manifest();
    if (!m.contains("studies")) fail(ErrorCode::StageFailed, "store has no ingested studies; run ingest first");
    return m.at("studies").get<std::vector<std::string>>();
}

// Store-relative when possible so summaries do not depend on where the store lives.
std::string display_path(const store::Store& st, const fs::path& p) {
    auto rel = p.lexically_normal().lexically_relative(st.root().lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

std::set<std::string> excluded_studies(const store::Store& st, std::initializer_list<const char*> stages) {
    std::set<std::string> out;
    for (const auto& e : st.exclusions())
        for (const char* s : stages)
            if (e.stage == s && !e.study_uid.empty()) out.insert(e.study_uid);
    return out;
}

ingest::SelectionPolicy policy_from(const PipelineConfig& cfg) {
    const auto& sec = cfg.section("ingest");
    if (auto p = cfg.path("ingest", "policy_file")) return ingest::SelectionPolicy::from_json(Json::parse(read_file(*p)));
    if (auto it = sec.find("policy"); it != sec.end()) return ingest::SelectionPolicy::from_json(*it);
    return {};
}

Json policy_json(const ingest::SelectionPolicy& p) {
    return Json{{"min_thickness_mm", p.min_thickness_mm},
                {"max_thickness_mm", p.max_thickness_mm},
                {"keywords", p.keywords}};
}

agatston::ScoringConfig scoring_from(const PipelineConfig& cfg) {
    if (auto p = cfg.path("scoring", "file")) return agatston::ScoringConfig::from_json(Json::parse(read_file(*p)));
    const auto& sec = cfg.section("scoring");
    return sec.empty() ? agatston::ScoringConfig{} : agatston::ScoringConfig::from_json(sec);
}

void update_fingerprint(store::Store& st, const std::string& stage, const std::string& fp) {
    Json fps = st.manifest().value("fingerprints", Json::object());
    fps[stage] = fp;
    st.set_manifest("fingerprints", fps);
}

nlp::RulePack rules_from(const PipelineConfig& cfg, std::string& fp) {
    std::string text;
    if (auto p = cfg.path("reports", "rules")) text = read_file(*p);
    else text = embedded::default_rules_json;
    const Json j = Json::parse(text);
    fp = fingerprint(j);
    return nlp::RulePack::from_json(j);
}

cohort::IcdCrosswalk icd_from(const PipelineConfig& cfg) {
    if (auto p = cfg.path("cohort", "icd_crosswalk")) return cohort::IcdCrosswalk::from_json(Json::parse(read_file(*p)));
    return cohort::IcdCrosswalk::from_json(Json::parse(embedded::icd_crosswalk_json));
}

std::vector<cohort::ScanRecord> load_scans(const PipelineConfig& cfg) {
    std::vector<cohort::ScanRecord> scans;
    for (const auto& j : read_jsonl(cfg.require_path("cohort", "scans"))) scans.push_back(cohort::scan_from_json(j));
    return scans;
}

std::map<std::string, cohort::PatientRecord> patient_map(const PipelineConfig& cfg) {
    std::map<std::string, cohort::PatientRecord> out;
    for (auto& p : load_patients(cfg)) out.emplace(p.patient_id, std::move(p));
    return out;
}

struct ScreeningEntry {
    cohort::ScanRecord scan;
    std::int64_t rounded = 0;
};

// LDCT screening cohort: oldest scan per patient outside the training centers.
std::vector<ScreeningEntry> screening_cohort(const store::Store& st, const PipelineConfig& cfg) {
    std::vector<cohort::ScanRecord> scans;
    std::map<std::string, std::int64_t> score_by_study;
    if (auto p = cfg.path("screening", "scores")) {
        for (const auto& j : read_jsonl(*p)) {
            auto s = cohort::scan_from_json(Json{{"patient_id", j.at("patient_id")},
                                                 {"study_uid", j.at("study_uid")},
                                                 {"date", j.at("date")},
                                                 {"center_id", j.value("center_id", std::string{})},
                                                 {"kind", "ldct"}});
            score_by_study[s.study_uid] = j.contains("rounded_score") ? j.at("rounded_score").get<std::int64_t>()
                                                                      : agatston::round_score(j.at("score").get<double>());
            scans.push_back(std::move(s));
        }
    } else {
        const auto scores = st.scores();
        for (auto& s : load_scans(cfg)) {
            if (s.kind != cohort::ScanKind::Ldct) continue;
            auto it = scores.find(s.study_uid);
            if (it == scores.end()) continue;
            score_by_study[s.study_uid] = it->second.score.rounded;
            scans.push_back(std::move(s));
        }
    }
    std::set<std::string> train;
    if (auto it = cfg.section("cohort").find("train_centers"); it != cfg.section("cohort").end())
        train = it->get<std::set<std::string>>();
    const auto kept = cohort::exclude_training_centers(cohort::dedup_oldest(scans), train);
    std::vector<ScreeningEntry> out;
    for (const auto& s : kept) out.push_back({s, score_by_study.at(s.study_uid)});
    return out;
}

std::string tsv_line(std::initializer_list<std::string> cells) {
    std::string out;
    bool first = true;
    for (const auto& c : cells) {
        if (!first) out += '\t';
        out += c;
        first = false;
    }
    return out + "\n";
}

template <class F>
auto run_stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::StageFailed) throw;
        fail(ErrorCode::StageFailed, std::string(name) + " stage failed (" + error_code_name(e.code()) + "): " + e.what());
    }
}

}  // namespace

PipelineConfig PipelineConfig::load(const fs::path& path) {
    Json doc;
    try {
        doc = Json::parse(read_file(path));
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, path.string() + ": " + e.what());
    }
    return from_json(std::move(doc), path.parent_path());
}

PipelineConfig PipelineConfig::from_json(Json doc, fs::path base_dir) {
    if (!doc.is_object()) fail(ErrorCode::Parse, "pipeline config must be an object");
    PipelineConfig c;
    c.seed = doc.value("seed", std::uint64_t{0});
    c.doc = std::move(doc);
    c.base_dir = std::move(base_dir);
    return c;
}

const Json& PipelineConfig::section(const char* name) const {
    auto it = doc.find(name);
    return it == doc.end() || !it->is_object() ? kEmpty : *it;
}

std::optional<fs::path> PipelineConfig::path(const char* sec, const char* key) const {
    const auto& s = section(sec);
    auto it = s.find(key);
    if (it == s.end() || !it->is_string()) return std::nullopt;
    fs::path p = it->get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
}

fs::path PipelineConfig::require_path(const char* sec, const char* key) const {
    if (auto p = path(sec, key)) return *p;
    fail(ErrorCode::InvalidArgument, std::string("config needs ") + sec + "." + key);
}

std::uint64_t stream_seed(std::uint64_t root, Stream s) { return derive_seed(root, static_cast<std::uint64_t>(s)); }

std::vector<cohort::PatientRecord> load_patients(const PipelineConfig& cfg) {
    const auto patients = read_jsonl(cfg.require_path("cohort", "patients"));
    std::vector<cohort::DiagnosisRecord> dx;
    std::vector<cohort::PrescriptionRecord> rx;
    if (auto p = cfg.path("cohort", "diagnoses"))
        for (const auto& j : read_jsonl(*p)) dx.push_back(cohort::diagnosis_from_json(j));
    if (auto p = cfg.path("cohort", "prescriptions"))
        for (const auto& j : read_jsonl(*p)) rx.push_back(cohort::prescription_from_json(j));
    std::set<std::string> classes = cohort::kDefaultLipidClasses;
    if (auto it = cfg.section("cohort").find("lipid_classes"); it != cfg.section("cohort").end())
        classes = it->get<std::set<std::string>>();
    return cohort::assemble_patients(patients, dx, rx, icd_from(cfg), classes);
}

StageResult ingest(store::Store& st, const PipelineConfig& cfg) {
    const auto input = cfg.require_path("ingest", "input");
    const auto policy = policy_from(cfg);
    const std::string policy_fp = fingerprint(policy_json(policy));
    const auto scan = ingest::parse_study_manifest(input);

    std::map<std::string, std::vector<ingest::SeriesMeta>> by_study;
    for (const auto& s : scan.series) by_study[s.study_uid].push_back(s);

    // A broken series only excludes its study when nothing else in the study
    // parsed; otherwise it is logged against no study.
    std::vector<store::Exclusion> excl;
    std::set<std::string> failed_studies;
    for (const auto& f : scan.failures) {
        const bool whole_study = !f.study_uid.empty() && !by_study.count(f.study_uid);
        if (whole_study && !failed_studies.insert(f.study_uid).second) continue;
        excl.push_back({"ingest", whole_study ? f.study_uid : "",
                        f.series_uid.empty() ? f.location.string() : f.series_uid, f.code, f.message});
    }

    const auto existing = st.series();
    std::vector<std::string> studies;
    std::size_t loaded = 0, reused = 0;
    for (const auto& [study, candidates] : by_study) {
        try {
            const auto chosen = ingest::select_series(candidates, policy);
            auto it = existing.find(study);
            if (it != existing.end() && it->second.policy_fingerprint == policy_fp &&
                it->second.meta.series_uid == chosen.series_uid && fs::exists(st.volume_dir(study) / "manifest")) {
                ++reused;
            } else {
                if (chosen.source_dir.empty())
                    fail(ErrorCode::UnreadableSource, "series " + chosen.series_uid + " has no pixel data location");
                auto vol = ingest::load_fixture_volume(chosen.source_dir);
                vol.meta = chosen;
                st.save_volume(vol);
                st.append_series(chosen, policy_fp);
                ++loaded;
            }
            studies.push_back(study);
        } catch (const Error& e) {
            excl.push_back({"ingest", study, "", e.code(), e.what()});
        }
    }
    const std::size_t n_excl = excl.size();
    st.replace_exclusions("ingest", std::move(excl));
    st.set_manifest("studies", studies);
    st.set_manifest("input_studies", by_study.size() + failed_studies.size());
    update_fingerprint(st, "ingest", policy_fp);
    StageResult r;
    r.summary = Json{{"stage", "ingest"},
                     {"input_studies", by_study.size() + failed_studies.size()},
                     {"ingested", studies.size()},
                     {"loaded", loaded},
                     {"reused", reused},
                     {"unreadable_series", scan.failures.size()},
                     {"excluded", n_excl}};
    r.exclusions = n_excl;
    return r;
}

StageResult segment(store::Store& st, const PipelineConfig& cfg, const std::optional<std::string>& study) {
    const auto& sec = cfg.section("segment");
    const std::string mode = sec.value("mode", std::string{});
    if (!mode.empty() && mode != "baseline" && mode != "runner" && mode != "masks")
        fail(ErrorCode::InvalidArgument, "segment.mode must be baseline, runner, or masks");
    Json fp_doc{{"mode", mode}};
    if (mode == "baseline") {
        fp_doc["roi"] = sec.value("roi", std::string{});
        fp_doc["hu_threshold"] = sec.value("hu_threshold", seg::kDefaultHuThreshold);
    } else if (mode == "runner") {
        fp_doc["command"] = sec.value("command", std::string{});
    } else if (mode == "masks") {
        fp_doc["mask_dir"] = cfg.require_path("segment", "mask_dir").string();
    }
    const std::string fp = fingerprint(fp_doc);

    std::vector<std::string> studies;
    if (study) studies.push_back(*study);
    else {
        const auto skip = excluded_studies(st, {"ingest"});
        for (const auto& s : manifest_studies(st))
            if (!skip.count(s)) studies.push_back(s);
    }
    const auto index = st.mask_index();

    struct Outcome {
        enum { Reused, Written, Excluded, Fatal } kind = Reused;
        std::optional<seg::CalciumMask> mask;
        ErrorCode code = ErrorCode::Ok;
        std::string message;
    };
    std::vector<Outcome> out(studies.size());
    parallel_for(studies.size(), [&](std::size_t i) {
        const auto& uid = studies[i];
        Outcome& o = out[i];
        auto it = index.find(uid);
        const bool have = fs::exists(st.mask_path(uid));
        if (have && (mode.empty() || (it != index.end() && it->second == fp))) return;
        try {
            const auto vol = st.load_volume(uid);
            if (mode == "baseline") {
                const auto roi_s = sec.value("roi", std::string{});
                const auto roi = roi_s.empty() ? seg::RoiBox::whole(vol.dims) : seg::RoiBox::parse(roi_s);
                o.mask = seg::baseline_segment(vol, roi, sec.value("hu_threshold", seg::kDefaultHuThreshold));
            } else if (mode == "runner") {
                seg::ExternalRunnerConfig rc;
                rc.command = sec.at("command").get<std::string>();
                rc.scratch_dir = st.scratch_dir() / store::safe_name(uid);
                rc.timeout = std::chrono::seconds(sec.value("timeout_s", 600));
                o.mask = seg::run_external_model(vol, rc);
            } else if (mode == "masks") {
                const auto p = cfg.require_path("segment", "mask_dir") / (store::safe_name(uid) + ".cacmask");
                if (!fs::exists(p)) {
                    o.kind = Outcome::Fatal;
                    o.message = "segment stage: no mask file " + p.string() + " for study " + uid +
                                " and no runner configured";
                    return;
                }
                o.mask = seg::load_mask(p, vol);
            } else {
                o.kind = Outcome::Fatal;
                o.message = "segment stage: study " + uid + " has no mask and no runner or baseline is configured";
                return;
            }
            o.kind = Outcome::Written;
        } catch (const Error& e) {
            o.kind = Outcome::Excluded;
            o.code = e.code();
            o.message = e.what();
        }
    });

    std::vector<store::Exclusion> excl;
    std::size_t written = 0, reused = 0;
    for (std::size_t i = 0; i < studies.size(); ++i) {
        auto& o = out[i];
        if (o.kind == Outcome::Fatal) fail(ErrorCode::StageFailed, o.message);
        if (o.kind == Outcome::Excluded) excl.push_back({"segment", studies[i], "", o.code, o.message});
        else if (o.kind == Outcome::Written) {
            st.save_mask(*o.mask, fp);
            ++written;
        } else ++reused;
    }
    const std::size_t n_excl = excl.size();
    if (!study) {
        st.replace_exclusions("segment", std::move(excl));
        if (!mode.empty()) update_fingerprint(st, "segment", fp);
    } else if (n_excl) {
        fail(out.front().code, out.front().message);
    }
    StageResult r;
    r.summary = Json{{"stage", "segment"},
                     {"mode", mode.empty() ? "existing" : mode},
                     {"studies", studies.size()},
                     {"written", written},
                     {"reused", reused},
                     {"excluded", n_excl}};
    r.exclusions = n_excl;
    return r;
}

StageResult score(store::Store& st, const PipelineConfig& cfg, const std::optional<std::string>& study,
                  const std::optional<fs::path>& mask_file) {
    const auto config = scoring_from(cfg);
    config.validate();
    const auto fp = config.fingerprint();

    if (mask_file) {
        if (!study) fail(ErrorCode::InvalidArgument, "--mask requires --volume");
        const auto vol = st.load_volume(*study);
        const auto mask = seg::load_mask(*mask_file, vol);
        st.save_mask(mask, "file:" + hex64(fnv1a64(read_file(*mask_file))));
    }

    std::vector<std::string> studies;
    if (study) studies.push_back(*study);
    else {
        const auto skip = excluded_studies(st, {"ingest", "segment"});
        for (const auto& s : manifest_studies(st))
            if (!skip.count(s)) studies.push_back(s);
    }
    const auto existing = st.scores();

    struct Outcome {
        bool reused = false;
        std::optional<agatston::ScanScore> score;
        std::string digest;
        ErrorCode code = ErrorCode::Ok;
        std::string message;
    };
    std::vector<Outcome> out(studies.size());
    for (std::size_t i = 0; i < studies.size(); ++i)
        if (!fs::exists(st.mask_path(studies[i])))
            fail(ErrorCode::StageFailed, "score stage: study " + studies[i] + " has no mask; run segment first");
    parallel_for(studies.size(), [&](std::size_t i) {
        const auto& uid = studies[i];
        auto& o = out[i];
        o.digest = st.mask_digest(uid);
        auto it = existing.find(uid);
        if (it != existing.end() && it->second.score.config_fingerprint == fp && it->second.mask_digest == o.digest) {
            o.reused = true;
            return;
        }
        try {
            const auto vol = st.load_volume(uid);
            const auto mask = st.load_mask(uid, vol);
            o.score = agatston::score_scan(vol, mask, config);
        } catch (const Error& e) {
            o.code = e.code();
            o.message = e.what();
        }
    });

    std::vector<store::Exclusion> excl;
    std::size_t computed = 0, reused = 0;
    Json last;
    for (std::size_t i = 0; i < studies.size(); ++i) {
        auto& o = out[i];
        if (o.reused) {
            ++reused;
            last = agatston::to_json(existing.at(studies[i]).score, false);
        } else if (o.score) {
            st.append_score(*o.score, o.digest);
            last = agatston::to_json(*o.score, false);
            ++computed;
        } else {
            excl.push_back({"score", studies[i], "", o.code, o.message});
        }
    }
    const std::size_t n_excl = excl.size();
    if (!study) {
        st.replace_exclusions("score", std::move(excl));
        update_fingerprint(st, "scoring", fp);
    } else if (n_excl) {
        fail(out.front().code, out.front().message);
    }
    StageResult r;
    r.summary = Json{{"stage", "score"},
                     {"studies", studies.size()},
                     {"computed", computed},
                     {"reused", reused},
                     {"excluded", n_excl},
                     {"config_fingerprint", fp}};
    if (study) r.summary["score"] = last;
    r.exclusions = n_excl;
    return r;
}

StageResult extract_reports(store::Store& st, const PipelineConfig& cfg) {
    std::string fp;
    const auto rules = rules_from(cfg, fp);
    const auto existing = st.extractions();
    std::size_t extracted = 0, rejected = 0, reused = 0;
    std::vector<nlp::AuditRow> audit;
    for (const auto& j : read_jsonl(cfg.require_path("reports", "input"))) {
        const auto rec = nlp::report_from_json(j);
        auto it = existing.find(rec.report_id);
        store::StoredExtraction e;
        if (it != existing.end() && it->second.rules_fingerprint == fp && it->second.report.report_text == rec.report_text) {
            e = it->second;
            ++reused;
        } else {
            e = {rec, nlp::extract_agatston(rec.report_text, rules), fp};
            st.append_extraction(e);
        }
        (e.result.status == nlp::Status::Extracted ? extracted : rejected) += 1;
        audit.push_back({rec.report_id, rec.report_text, e.result});
    }
    update_fingerprint(st, "rules", fp);
    StageResult r;
    r.summary = Json{{"stage", "extract-reports"},
                     {"reports", audit.size()},
                     {"extracted", extracted},
                     {"not_extractable", rejected},
                     {"reused", reused},
                     {"rules", rules.name}};
    if (auto n = cfg.section("reports").value("audit_n", 0); n > 0) {
        const auto sample = nlp::audit_sample(audit, static_cast<std::size_t>(n), stream_seed(cfg.seed, Stream::Audit));
        write_file(st.reports_dir() / "nlp_audit.tsv", nlp::audit_worksheet(sample));
        r.summary["audit_worksheet"] = display_path(st, st.reports_dir() / "nlp_audit.tsv");
    }
    return r;
}

StageResult pair(store::Store& st, const PipelineConfig& cfg) {
    const auto window = cfg.section("cohort").value("window_days", std::int64_t{365});
    const auto scans = load_scans(cfg);
    const auto scores = st.scores();
    const auto series = st.series();

    std::map<std::string, const store::StoredExtraction*> reference;
    const auto extractions = st.extractions();
    for (const auto& [id, e] : extractions) {
        if (e.result.status != nlp::Status::Extracted || e.report.study_uid.empty()) continue;
        auto& slot = reference[e.report.study_uid];
        if (!slot || std::tie(e.report.report_date, e.report.report_id) <
                         std::tie(slot->report.report_date, slot->report.report_id))
            slot = &e;
    }

    std::vector<cohort::ScanRecord> nongated;
    std::vector<cohort::GatedReference> gated;
    std::size_t unscored = 0, unreported = 0;
    for (const auto& s : scans) {
        if (s.kind == cohort::ScanKind::NonGated) {
            if (scores.count(s.study_uid)) nongated.push_back(s);
            else ++unscored;
        } else if (s.kind == cohort::ScanKind::Gated) {
            auto it = reference.find(s.study_uid);
            if (it != reference.end()) gated.push_back({s, *it->second->result.score});
            else ++unreported;
        }
    }
    auto pairs = cohort::build_pairs(nongated, gated, window);
    for (auto& p : pairs) {
        p.ai_score = scores.at(p.nongated_study_uid).score;
        p.ai_score->lesions.clear();
        if (auto it = series.find(p.nongated_study_uid); it != series.end()) {
            const auto& m = it->second.meta;
            if (!m.manufacturer.empty()) p.manufacturer = m.manufacturer;
            if (m.kvp) p.kvp = m.kvp;
            if (m.sex) p.sex = *m.sex == ingest::Sex::M ? "M" : "F";
        }
    }
    st.write_pairs(pairs);
    StageResult r;
    r.summary = Json{{"stage", "pair"},
                     {"window_days", window},
                     {"nongated_scored", nongated.size()},
                     {"nongated_unscored", unscored},
                     {"gated_with_reference", gated.size()},
                     {"gated_without_reference", unreported},
                     {"pairs", pairs.size()}};
    return r;
}

StageResult split(store::Store& st, const PipelineConfig& cfg) {
    const auto ratio = cfg.section("cohort").value("split_ratio", 0.5);
    const auto pairs = st.pairs();
    const auto sp = cohort::split_by_center(pairs, ratio, stream_seed(cfg.seed, Stream::Split));
    std::map<std::string, std::set<std::string>> sets;
    for (const auto& p : sp.tune) sets["tune"].insert(p.patient_id);
    for (const auto& p : sp.test) sets["test"].insert(p.patient_id);
    if (auto p = cfg.path("cohort", "train_patients"))
        for (const auto& j : read_jsonl(*p)) sets["train"].insert(j.at("patient_id").get<std::string>());
    cohort::assert_disjoint(sets);
    st.write_split(sp);
    StageResult r;
    r.summary = Json{{"stage", "split"}, {"ratio", ratio}, {"tune", sp.tune.size()}, {"test", sp.test.size()}};
    return r;
}

StageResult survival_rows(store::Store& st, const PipelineConfig& cfg) {
    const auto& sec = cfg.section("survival");
    const auto outcome = cohort::parse_outcome(sec.value("outcome", std::string("death")));
    const auto strata = cohort::parse_strata(sec.value("strata", std::string("none")));
    const auto source = sec.value("source", std::string("test"));
    const auto patients = load_patients(cfg);

    std::vector<cohort::IndexedScore> scores;
    if (source == "test" || source == "tune" || source == "all") {
        const auto sides = st.split();
        for (const auto& p : st.pairs()) {
            if (source != "all") {
                auto it = sides.find(p.patient_id);
                if (it == sides.end() || it->second != source) continue;
            }
            if (!p.ai_score) continue;
            scores.push_back({p.patient_id, p.nongated_date, p.ai_score->rounded});
        }
    } else if (source == "ldct") {
        for (const auto& e : screening_cohort(st, cfg)) scores.push_back({e.scan.patient_id, e.scan.date, e.rounded});
    } else if (source == "gated_reports") {
        std::vector<cohort::DatedReport> reports;
        for (const auto& [id, e] : st.extractions())
            if (e.result.status == nlp::Status::Extracted && !e.report.patient_id.empty() && !e.report.report_date.empty())
                reports.push_back({e.report.patient_id, parse_date(e.report.report_date), id, *e.result.score});
        scores = cohort::oldest_report_scores(reports);
    } else {
        fail(ErrorCode::InvalidArgument, "survival.source must be test, tune, all, ldct, or gated_reports");
    }
    const auto rows = cohort::make_survival_rows(patients, scores, outcome, strata);
    st.write_survival_rows(rows);
    StageResult r;
    r.summary = Json{{"stage", "survival-rows"},
                     {"outcome", std::string(cohort::outcome_name(outcome))},
                     {"source", source},
                     {"scored_patients", scores.size()},
                     {"rows", rows.size()},
                     {"excluded_pre_index_events", scores.size() - rows.size()}};
    return r;
}

StageResult survival(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto& sec = cfg.section("survival");
    const auto grid_kind = stats::parse_grid(sec.value("grid", std::string("yearly")));
    const auto rows = st.survival_rows();
    if (rows.empty()) fail(ErrorCode::EmptyGroup, "no survival rows; run survival-rows first");
    std::map<std::string, std::vector<cohort::SurvivalRow>> groups;
    double max_t = 0;
    for (const auto& r : rows) {
        groups[r.group_label].push_back(r);
        max_t = std::max(max_t, static_cast<double>(r.duration_days));
    }
    const auto grid = stats::make_grid(grid_kind, max_t);

    Json summary_groups = Json::array();
    for (const auto& [label, g] : groups) {
        const auto km = stats::km_estimate(std::span<const cohort::SurvivalRow>(g), grid);
        std::string curve = tsv_line({"time_days", "survival"});
        for (std::size_t i = 0; i < km.times.size(); ++i) curve += tsv_line({fmt(km.times[i], "%.0f"), fmt(km.survival[i], "%.9f")});
        write_file(out_dir / ("km_" + store::safe_name(label) + ".tsv"), curve);
        std::string table = tsv_line({"time_days", "at_risk", "events", "censored", "interval_events", "interval_censored"});
        for (const auto& t : km.table)
            table += tsv_line({fmt(t.time, "%.0f"), std::to_string(t.at_risk), std::to_string(t.events),
                               std::to_string(t.censored), std::to_string(t.interval_events),
                               std::to_string(t.interval_censored)});
        write_file(out_dir / ("at_risk_" + store::safe_name(label) + ".tsv"), table);
        std::int64_t events = 0;
        for (const auto& r : g) events += r.event ? 1 : 0;
        summary_groups.push_back(Json{{"group", label},
                                      {"n", g.size()},
                                      {"events", events},
                                      {"event_fraction_end", 1.0 - km.survival.back()}});
    }

    const std::string reference = sec.value("reference", std::string("zero"));
    Json cox = Json::array();
    if (groups.count(reference)) {
        for (const auto& [label, g] : groups) {
            if (label == reference) continue;
            Json rec{{"reference", reference}, {"group", label}};
            try {
                rec["fit"] = stats::to_json(stats::cox_two_group(rows, reference, label));
            } catch (const Error& e) {
                rec["error"] = error_code_name(e.code());
                rec["message"] = e.what();
            }
            cox.push_back(rec);
        }
    }
    write_file(out_dir / "cox.json", cox.dump(2) + "\n");
    const Json summary{{"grid", sec.value("grid", std::string("yearly"))}, {"groups", summary_groups}, {"cox", cox}};
    write_file(out_dir / "summary.json", summary.dump(2) + "\n");
    StageResult r;
    r.summary = Json{{"stage", "survival"}, {"groups", groups.size()}, {"out", display_path(st, out_dir)}};
    return r;
}

StageResult evaluate(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto& sec = cfg.section("evaluate");
    const auto side = sec.value("side", std::string("test"));
    const auto thresholds = sec.value("thresholds", std::vector<std::int64_t>{1, 100, 400});
    const auto keys = sec.value("subgroups", std::vector<std::string>{"manufacturer", "sex", "kvp"});
    const auto iterations = sec.value("bootstrap_iterations", std::size_t{1000});
    const auto level = sec.value("level", 0.95);

    const auto sides = st.split();
    std::vector<stats::EvalPair> eval;
    for (const auto& p : st.pairs()) {
        if (side != "all") {
            auto it = sides.find(p.patient_id);
            if (it == sides.end() || it->second != side) continue;
        }
        if (!p.ai_score) continue;
        eval.push_back({p.patient_id, p.reference_score, p.ai_score->total, p.manufacturer, p.kvp, p.sex});
    }
    if (eval.empty()) fail(ErrorCode::EmptyGroup, "no evaluable pairs on side '" + side + "'");

    std::vector<std::pair<std::int64_t, std::int64_t>> rounded;
    std::vector<std::pair<agatston::CacBin, agatston::CacBin>> bins;
    std::vector<std::pair<double, double>> raw;
    for (const auto& e : eval) {
        const auto rr = agatston::round_score(e.reference), pr = agatston::round_score(e.predicted);
        rounded.emplace_back(rr, pr);
        bins.emplace_back(agatston::bin_score(rr), agatston::bin_score(pr));
        raw.emplace_back(e.reference, e.predicted);
    }

    std::string metrics = tsv_line({"subgroup", "value", "threshold", "n", "tp", "fp", "fn", "tn", "Accuracy(%)",
                                    "PPV(%)", "NPV(%)", "Sensitivity(%)", "Specificity(%)", "F1(%)"});
    auto add_rows = [&](const std::string& key, const std::string& value, std::size_t n,
                        const std::map<std::int64_t, stats::ThresholdMetrics>& by) {
        for (const auto& [thr, m] : by)
            metrics += tsv_line({key, value, std::to_string(thr), std::to_string(n), std::to_string(m.tp),
                                 std::to_string(m.fp), std::to_string(m.fn), std::to_string(m.tn),
                                 fmt_opt_pct(m.accuracy), fmt_opt_pct(m.ppv), fmt_opt_pct(m.npv),
                                 fmt_opt_pct(m.sensitivity), fmt_opt_pct(m.specificity), fmt_opt_pct(m.f1)});
    };
    std::map<std::int64_t, stats::ThresholdMetrics> overall;
    for (auto t : thresholds) overall.emplace(t, stats::threshold_metrics(rounded, t));
    add_rows("all", "all", eval.size(), overall);
    const auto sub = stats::subgroup_evaluate(eval, keys, thresholds);
    for (const auto& t : sub.tables) add_rows(t.key, t.value, t.n, t.by_threshold);
    write_file(out_dir / "metrics.tsv", metrics);

    const auto cm = stats::confusion_matrix(bins);
    std::string cms = tsv_line({"reference\\predicted", "zero", "b1_100", "b101_400", "gt400"});
    for (int i = 0; i < 4; ++i)
        cms += tsv_line({std::string(agatston::bin_name(static_cast<agatston::CacBin>(i))), std::to_string(cm.counts[i][0]),
                         std::to_string(cm.counts[i][1]), std::to_string(cm.counts[i][2]),
                         std::to_string(cm.counts[i][3])});
    write_file(out_dir / "confusion.tsv", cms);

    Json agreement{{"n", eval.size()}, {"percent_agreement", 100.0 * cm.agreement()}};
    try {
        agreement["kappa"] = stats::weighted_kappa(cm);
        const auto ci = stats::kappa_ci(bins, iterations, stream_seed(cfg.seed, Stream::Bootstrap), level);
        agreement["kappa_ci"] = {ci.lo, ci.hi};
        agreement["kappa_ci_resamples"] = ci.used;
    } catch (const Error& e) {
        agreement["kappa"] = nullptr;
        agreement["kappa_note"] = error_code_name(e.code());
    }
    try {
        const auto c = stats::correlations(raw);
        agreement["pearson"] = c.pearson;
        agreement["spearman"] = c.spearman;
        agreement["icc"] = stats::icc_agreement(raw);
    } catch (const Error& e) {
        agreement["correlation_note"] = error_code_name(e.code());
    }
    const auto ba = stats::bland_altman(raw);
    agreement["bland_altman"] = {{"mean_diff", ba.mean_diff}, {"sd_diff", ba.sd_diff}, {"lower", ba.lower}, {"upper", ba.upper}};
    write_file(out_dir / "agreement.json", agreement.dump(2) + "\n");

    std::string bas = tsv_line({"mean", "diff"});
    for (const auto& p : ba.points) bas += tsv_line({fmt(p.mean), fmt(p.diff)});
    write_file(out_dir / "bland_altman.tsv", bas);

    std::string notes;
    for (const auto& n : sub.coverage_notes) notes += n + "\n";
    write_file(out_dir / "coverage.txt", notes);

    StageResult r;
    r.summary = Json{{"stage", "evaluate"}, {"side", side}, {"pairs", eval.size()}, {"out", display_path(st, out_dir)}};
    return r;
}

StageResult screening_report(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto cohort = screening_cohort(st, cfg);
    std::vector<reports::PatientScore> scores;
    for (const auto& e : cohort) scores.push_back({e.scan.patient_id, e.rounded});
    std::optional<std::map<std::string, cohort::PatientRecord>> patients;
    if (cfg.path("cohort", "patients")) patients = patient_map(cfg);
    const auto panels = reports::screening_report(scores, patients ? &*patients : nullptr);

    Json j = Json::array();
    std::string tsv = tsv_line({"panel", "n", "zero", "b1_100", "b101_400", "gt400", "zero(%)", "b1_100(%)",
                                "b101_400(%)", "gt400(%)"});
    for (const auto& p : panels) {
        j.push_back(reports::to_json(p));
        tsv += tsv_line({p.name, std::to_string(p.n), std::to_string(p.counts[0]), std::to_string(p.counts[1]),
                         std::to_string(p.counts[2]), std::to_string(p.counts[3]), reports::format_percent(p.percents[0]),
                         reports::format_percent(p.percents[1]), reports::format_percent(p.percents[2]),
                         reports::format_percent(p.percents[3])});
    }
    write_file(out_dir / "screening.json", j.dump(2) + "\n");
    write_file(out_dir / "screening.tsv", tsv);
    StageResult r;
    r.summary = Json{{"stage", "screening-report"}, {"patients", scores.size()}, {"panels", j}};
    return r;
}

StageResult therapy_gap(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto cohort = screening_cohort(st, cfg);
    std::vector<reports::PatientScore> scores;
    for (const auto& e : cohort) scores.push_back({e.scan.patient_id, e.rounded});
    const auto gap = reports::therapy_gap_report(scores, patient_map(cfg));
    const Json j = reports::to_json(gap);
    write_file(out_dir / "therapy_gap.json", j.dump(2) + "\n");
    std::string tsv = "patient_id\n";
    for (const auto& id : gap.untreated_patient_ids) tsv += id + "\n";
    write_file(out_dir / "therapy_gap_patients.tsv", tsv);
    StageResult r;
    r.summary = Json{{"stage", "therapy-gap"},
                     {"n_living_gt400", gap.n_living_gt400},
                     {"n_untreated", gap.n_untreated},
                     {"percent_display", j.at("percent_display")}};
    return r;
}

StageResult run_pipeline(store::Store& st, const PipelineConfig& cfg) {
    st.set_manifest("seed", cfg.seed);
    Json stages = Json::array();
    std::size_t excl = 0;
    auto record = [&](const StageResult& r) {
        stages.push_back(r.summary);
        excl += r.exclusions;
    };
    const auto reports_dir = st.reports_dir();

    record(run_stage("ingest", [&] { return ingest(st, cfg); }));
    record(run_stage("segment", [&] { return segment(st, cfg); }));
    record(run_stage("score", [&] { return score(st, cfg); }));
    if (cfg.path("reports", "input")) record(run_stage("extract-reports", [&] { return extract_reports(st, cfg); }));

    const bool have_cohort = cfg.path("cohort", "scans").has_value();
    const bool have_patients = cfg.path("cohort", "patients").has_value();
    if (have_cohort && cfg.path("reports", "input")) {
        record(run_stage("pair", [&] { return pair(st, cfg); }));
        record(run_stage("split", [&] { return split(st, cfg); }));
        if (!st.pairs().empty())
            record(run_stage("evaluate", [&] { return evaluate(st, cfg, reports_dir / "evaluate"); }));
        if (have_patients && !cfg.section("survival").empty()) {
            record(run_stage("survival-rows", [&] { return survival_rows(st, cfg); }));
            if (!st.survival_rows().empty())
                record(run_stage("survival", [&] { return survival(st, cfg, reports_dir / "survival"); }));
        }
    }
    if (!cfg.section("screening").empty() || have_cohort) {
        record(run_stage("screening-report", [&] { return screening_report(st, cfg, reports_dir / "screening"); }));
        if (have_patients)
            record(run_stage("therapy-gap", [&] { return therapy_gap(st, cfg, reports_dir / "therapy_gap"); }));
    }

    // Exclusion accounting over studies.
    const auto m = st.manifest();
    const auto n_input = m.value("input_studies", std::size_t{0});
    const auto scores = st.scores();
    std::size_t n_scored = 0;
    for (const auto& s : manifest_studies(st)) {
        auto it = scores.find(s);
        if (it != scores.end() && it->second.mask_digest == st.mask_digest(s)) ++n_scored;
    }
    const auto excluded = excluded_studies(st, {"ingest", "segment", "score"});
    if (n_scored + excluded.size() != n_input)
        fail(ErrorCode::Internal, "exclusion accounting mismatch: " + std::to_string(n_input) + " input studies, " +
                                      std::to_string(n_scored) + " scored, " + std::to_string(excluded.size()) +
                                      " excluded");
    const Json summary{{"seed", cfg.seed},
                       {"input_studies", n_input},
                       {"scored", n_scored},
                       {"excluded", excluded.size()},
                       {"fingerprints", m.value("fingerprints", Json::object())},
                       {"stages", stages}};
    write_file(reports_dir / "run_summary.json", summary.dump(2) + "\n");
    StageResult r;
    r.summary = summary;
    r.exclusions = excl;
    return r;
}

std::unique_ptr<review::ReviewService> open_review(store::Store& st) {
    std::vector<review::ReviewCandidate> candidates;
    for (const auto& [uid, rec] : st.scores()) {
        const auto p = st.mask_path(uid);
        if (!fs::exists(p)) continue;
        const auto mask = seg::parse_mask(read_file(p));
        candidates.push_back({uid, rec.score.rounded, mask.positive_slices()});
    }
    store::Store* sp = &st;
    return std::make_unique<review::ReviewService>(
        st.review_dir(), std::move(candidates), [sp](const std::string& uid) {
            auto vol = sp->load_volume(uid);
            auto mask = sp->load_mask(uid, vol);
            return std::pair{std::move(vol), std::move(mask)};
        });
}

}  // namespace cac::app
