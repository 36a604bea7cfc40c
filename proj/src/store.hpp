#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agatston.hpp"
#include "cohort.hpp"
#include "report_extraction.hpp"
#include "volume_ingest.hpp"

namespace cac::store {

namespace fs = std::filesystem;

struct StoredSeries {
    ingest::SeriesMeta meta;
    std::string policy_fingerprint;
};

struct StoredExtraction {
    nlp::ReportRecord report;
    nlp::ExtractionResult result;
    std::string rules_fingerprint;
};

struct Exclusion {
    std::string stage;
    std::string study_uid;
    std::string detail;  // series uid or file location when known
    ErrorCode code = ErrorCode::Ok;
    std::string message;
};

Json to_json(const Exclusion& e);
Exclusion exclusion_from_json(const Json& j);

/// On-disk layout:
///   manifest.json        seed and stage fingerprints
///   series.jsonl         selected series per study (append-only, last wins)
///   volumes/<study>/     HU volume in fixture format
///   masks/<study>.cacmask, masks.jsonl (mask provenance, append-only)
///   scores.jsonl         ScanScore records (append-only)
///   extractions.jsonl    report extraction records (append-only)
///   pairs.jsonl, split.jsonl, survival_rows.jsonl   regenerated snapshots
///   exclusions.jsonl     per-stage exclusion log, rewritten per stage run
///   review/              review queues and verdict logs
///   reports/             report bundles
class Store {
public:
    explicit Store(fs::path root);

    const fs::path& root() const { return root_; }
    fs::path volume_dir(const std::string& study_uid) const;
    fs::path mask_path(const std::string& study_uid) const;
    fs::path reports_dir() const { return root_ / "reports"; }
    fs::path review_dir() const { return root_ / "review"; }
    fs::path scratch_dir() const { return root_ / "scratch"; }

    Json manifest() const;
    void set_manifest(const std::string& key, const Json& value);

    std::map<std::string, StoredSeries> series() const;
    void append_series(const ingest::SeriesMeta& meta, const std::string& policy_fingerprint);
    ingest::CtVolume load_volume(const std::string& study_uid) const;
    void save_volume(const ingest::CtVolume& volume);

    /// study -> segmentation fingerprint of the mask on disk.
    std::map<std::string, std::string> mask_index() const;
    void save_mask(const seg::CalciumMask& mask, const std::string& fingerprint);
    seg::CalciumMask load_mask(const std::string& study_uid, const ingest::CtVolume& volume) const;
    std::string mask_digest(const std::string& study_uid) const;

    struct ScoreRecord {
        agatston::ScanScore score;
        std::string mask_digest;
    };
    /// Latest record per study.
    std::map<std::string, ScoreRecord> scores() const;
    void append_score(const agatston::ScanScore& score, const std::string& mask_digest);

    std::map<std::string, StoredExtraction> extractions() const;
    void append_extraction(const StoredExtraction& e);

    std::vector<cohort::PairedStudy> pairs() const;
    void write_pairs(const std::vector<cohort::PairedStudy>& pairs);

    /// patient -> "tune" | "test"
    std::map<std::string, std::string> split() const;
    void write_split(const cohort::Split& split);

    std::vector<cohort::SurvivalRow> survival_rows() const;
    void write_survival_rows(const std::vector<cohort::SurvivalRow>& rows);

    std::vector<Exclusion> exclusions() const;
    /// Replaces the records of `stage` and keeps the file sorted.
    void replace_exclusions(const std::string& stage, std::vector<Exclusion> records);

private:
    std::vector<Json> read_records(const char* name) const;

    fs::path root_;
};

std::string safe_name(const std::string& id);

}  // namespace cac::store
