#include "store.hpp"

#include <algorithm>

#include "error.hpp"

namespace cac::store {

std::string safe_name(const std::string& id) {
    if (id.empty() || id == "." || id == "..") fail(ErrorCode::InvalidArgument, "invalid identifier '" + id + "'");
    std::string out;
    for (char c : id) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
        out += ok ? c : '_';
    }
    return out;
}

Json to_json(const Exclusion& e) {
    return Json{{"stage", e.stage},
                {"study_uid", e.study_uid},
                {"detail", e.detail},
                {"code", std::string(error_code_name(e.code))},
                {"message", e.message}};
}

Exclusion exclusion_from_json(const Json& j) {
    Exclusion e;
    e.stage = j.at("stage").get<std::string>();
    e.study_uid = j.value("study_uid", std::string{});
    e.detail = j.value("detail", std::string{});
    e.code = error_code_from_name(j.value("code", std::string("Internal")));
    e.message = j.value("message", std::string{});
    return e;
}

Store::Store(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) fail(ErrorCode::Io, "cannot create store " + root_.string() + ": " + ec.message());
}

fs::path Store::volume_dir(const std::string& study_uid) const { return root_ / "volumes" / safe_name(study_uid); }

fs::path Store::mask_path(const std::string& study_uid) const {
    return root_ / "masks" / (safe_name(study_uid) + ".cacmask");
}

std::vector<Json> Store::read_records(const char* name) const {
    const auto p = root_ / name;
    if (!fs::exists(p)) return {};
    return read_jsonl(p);
}

Json Store::manifest() const {
    const auto p = root_ / "manifest.json";
    if (!fs::exists(p)) return Json{{"format", 1}};
    try {
        return Json::parse(read_file(p));
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, p.string() + ": " + e.what());
    }
}

void Store::set_manifest(const std::string& key, const Json& value) {
    Json m = manifest();
    m[key] = value;
    write_file(root_ / "manifest.json", m.dump(2) + "\n");
}

std::map<std::string, StoredSeries> Store::series() const {
    std::map<std::string, StoredSeries> out;
    for (const auto& j : read_records("series.jsonl")) {
        StoredSeries s{ingest::series_from_json(j), j.value("policy_fingerprint", std::string{})};
        out[s.meta.study_uid] = std::move(s);
    }
    return out;
}

void Store::append_series(const ingest::SeriesMeta& meta, const std::string& policy_fingerprint) {
    Json j = ingest::to_json(meta);
    j["policy_fingerprint"] = policy_fingerprint;
    append_line(root_ / "series.jsonl", j.dump());
}

ingest::CtVolume Store::load_volume(const std::string& study_uid) const {
    const auto dir = volume_dir(study_uid);
    if (!fs::exists(dir / "manifest")) fail(ErrorCode::UnknownItem, "no stored volume for study " + study_uid);
    return ingest::load_fixture_volume(dir);
}

void Store::save_volume(const ingest::CtVolume& volume) { ingest::write_fixture(volume, volume_dir(volume.meta.study_uid)); }

std::map<std::string, std::string> Store::mask_index() const {
    std::map<std::string, std::string> out;
    for (const auto& j : read_records("masks.jsonl"))
        out[j.at("study_uid").get<std::string>()] = j.at("fingerprint").get<std::string>();
    return out;
}

void Store::save_mask(const seg::CalciumMask& mask, const std::string& fingerprint) {
    seg::save_mask(mask, mask_path(mask.study_uid));
    append_line(root_ / "masks.jsonl", Json{{"study_uid", mask.study_uid}, {"fingerprint", fingerprint}}.dump());
}

seg::CalciumMask Store::load_mask(const std::string& study_uid, const ingest::CtVolume& volume) const {
    const auto p = mask_path(study_uid);
    if (!fs::exists(p)) fail(ErrorCode::UnknownItem, "no stored mask for study " + study_uid);
    return seg::load_mask(p, volume);
}

std::string Store::mask_digest(const std::string& study_uid) const {
    const auto p = mask_path(study_uid);
    if (!fs::exists(p)) return {};
    return hex64(fnv1a64(read_file(p)));
}

std::map<std::string, Store::ScoreRecord> Store::scores() const {
    std::map<std::string, ScoreRecord> out;
    for (const auto& j : read_records("scores.jsonl")) {
        ScoreRecord r{agatston::score_from_json(j), j.value("mask_digest", std::string{})};
        out[r.score.study_uid] = std::move(r);
    }
    return out;
}

void Store::append_score(const agatston::ScanScore& score, const std::string& mask_digest) {
    Json j = agatston::to_json(score, true);
    j["mask_digest"] = mask_digest;
    append_line(root_ / "scores.jsonl", j.dump());
}

std::map<std::string, StoredExtraction> Store::extractions() const {
    std::map<std::string, StoredExtraction> out;
    for (const auto& j : read_records("extractions.jsonl")) {
        StoredExtraction e;
        e.report = nlp::report_from_json(j);
        e.result = nlp::extraction_from_json(j.at("extraction"));
        e.rules_fingerprint = j.value("rules_fingerprint", std::string{});
        out[e.report.report_id] = std::move(e);
    }
    return out;
}

void Store::append_extraction(const StoredExtraction& e) {
    Json j{{"report_id", e.report.report_id},
           {"patient_id", e.report.patient_id},
           {"study_uid", e.report.study_uid},
           {"report_date", e.report.report_date},
           {"report_text", e.report.report_text},
           {"rules_fingerprint", e.rules_fingerprint},
           {"extraction", nlp::to_json(e.result)}};
    append_line(root_ / "extractions.jsonl", j.dump());
}

std::vector<cohort::PairedStudy> Store::pairs() const {
    std::vector<cohort::PairedStudy> out;
    for (const auto& j : read_records("pairs.jsonl")) out.push_back(cohort::pair_from_json(j));
    return out;
}

void Store::write_pairs(const std::vector<cohort::PairedStudy>& pairs) {
    std::vector<Json> js;
    for (const auto& p : pairs) js.push_back(cohort::to_json(p));
    write_jsonl(root_ / "pairs.jsonl", js);
}

std::map<std::string, std::string> Store::split() const {
    std::map<std::string, std::string> out;
    for (const auto& j : read_records("split.jsonl"))
        out[j.at("patient_id").get<std::string>()] = j.at("side").get<std::string>();
    return out;
}

void Store::write_split(const cohort::Split& split) {
    std::map<std::string, std::string> sides;
    for (const auto& p : split.tune) sides[p.patient_id] = "tune";
    for (const auto& p : split.test) sides[p.patient_id] = "test";
    std::vector<Json> js;
    for (const auto& [pid, side] : sides) js.push_back(Json{{"patient_id", pid}, {"side", side}});
    write_jsonl(root_ / "split.jsonl", js);
}

std::vector<cohort::SurvivalRow> Store::survival_rows() const {
    std::vector<cohort::SurvivalRow> out;
    for (const auto& j : read_records("survival_rows.jsonl")) out.push_back(cohort::survival_row_from_json(j));
    return out;
}

void Store::write_survival_rows(const std::vector<cohort::SurvivalRow>& rows) {
    std::vector<Json> js;
    for (const auto& r : rows) js.push_back(cohort::to_json(r));
    write_jsonl(root_ / "survival_rows.jsonl", js);
}

std::vector<Exclusion> Store::exclusions() const {
    std::vector<Exclusion> out;
    for (const auto& j : read_records("exclusions.jsonl")) out.push_back(exclusion_from_json(j));
    return out;
}

void Store::replace_exclusions(const std::string& stage, std::vector<Exclusion> records) {
    auto all = exclusions();
    std::erase_if(all, [&](const Exclusion& e) { return e.stage == stage; });
    for (auto& r : records) {
        r.stage = stage;
        all.push_back(std::move(r));
    }
    static const std::map<std::string, int> order{{"ingest", 0}, {"segment", 1}, {"score", 2}};
    auto rank = [](const std::string& s) {
        auto it = order.find(s);
        return it == order.end() ? 9 : it->second;
    };
    std::sort(all.begin(), all.end(), [&](const Exclusion& a, const Exclusion& b) {
        return std::tuple(rank(a.stage), a.stage, a.study_uid, a.detail) <
               std::tuple(rank(b.stage), b.stage, b.study_uid, b.detail);
    });
    std::vector<Json> js;
    for (const auto& e : all) js.push_back(to_json(e));
    write_jsonl(root_ / "exclusions.jsonl", js);
}

}  // namespace cac::store
