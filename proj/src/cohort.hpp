#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agatston.hpp"
#include "util.hpp"

namespace cac::cohort {

using agatston::CacBin;

enum class ScanKind { Gated, NonGated, Ldct };

struct ScanRecord {
    std::string patient_id;
    std::string study_uid;
    Date date{};
    std::string center_id;
    ScanKind kind = ScanKind::NonGated;
    std::string manufacturer;
    std::optional<double> kvp;
    std::string sex;
};

ScanRecord scan_from_json(const Json& j);
Json to_json(const ScanRecord& s);

struct PatientRecord {
    std::string patient_id;
    std::string center_id;
    std::string sex;
    std::optional<Date> birth_date;
    std::optional<Date> death_date;
    std::vector<Date> mi_dates;
    std::vector<Date> stroke_dates;
    std::vector<Date> lipid_issue_dates;
    Date followup_end{};
};

struct DiagnosisRecord {
    std::string patient_id;
    std::string code;
    Date date{};
};

struct PrescriptionRecord {
    std::string patient_id;
    std::string drug_class;
    Date issue_date{};
};

/// ICD code prefixes per outcome; loaded from a data file so ICD-9
/// cross-references can be maintained outside the code.
struct IcdCrosswalk {
    std::vector<std::string> mi_prefixes{"I21"};
    std::vector<std::string> stroke_prefixes{"I63"};

    static IcdCrosswalk from_json(const Json& j);
    bool is_mi(std::string_view code) const;
    bool is_stroke(std::string_view code) const;
};

inline const std::set<std::string> kDefaultLipidClasses{"lipid_lowering", "statin", "ezetimibe",
                                                        "pcsk9_inhibitor", "bempedoic_acid"};

/// Joins patients with diagnoses and prescriptions. Event dates after
/// followup_end are dropped; all lists come back sorted.
std::vector<PatientRecord> assemble_patients(std::span<const Json> patients, std::span<const DiagnosisRecord> dx,
                                             std::span<const PrescriptionRecord> rx, const IcdCrosswalk& icd,
                                             const std::set<std::string>& lipid_classes = kDefaultLipidClasses);

PatientRecord patient_from_json(const Json& j);
DiagnosisRecord diagnosis_from_json(const Json& j);
PrescriptionRecord prescription_from_json(const Json& j);

struct GatedReference {
    ScanRecord scan;
    double reference_score = 0.0;
};

struct PairedStudy {
    std::string patient_id;
    std::string center_id;
    std::string nongated_study_uid;
    std::string gated_study_uid;
    Date nongated_date{};
    Date gated_date{};
    std::int64_t gap_days = 0;
    double reference_score = 0.0;
    std::optional<agatston::ScanScore> ai_score;
    // Scanner/patient descriptors carried for subgroup analysis.
    std::string manufacturer;
    std::optional<double> kvp;
    std::string sex;
};

Json to_json(const PairedStudy& p);
PairedStudy pair_from_json(const Json& j);

/// Nearest non-gated/gated pair per patient within `window_days` (inclusive).
std::vector<PairedStudy> build_pairs(std::span<const ScanRecord> nongated, std::span<const GatedReference> gated,
                                     std::int64_t window_days = 365);

struct Split {
    std::vector<PairedStudy> tune;
    std::vector<PairedStudy> test;
};

/// Per-center seeded shuffle then interleaved assignment; odd remainders
/// alternate sides across centers so the overall sizes also differ by <= 1.
Split split_by_center(std::span<const PairedStudy> pairs, double ratio, std::uint64_t seed);

/// One scan per patient: earliest date, ties to the smallest study_uid.
std::vector<ScanRecord> dedup_oldest(std::span<const ScanRecord> scans);

std::vector<ScanRecord> exclude_training_centers(std::span<const ScanRecord> scans,
                                                 const std::set<std::string>& train_centers);

/// Throws OverlappingDatasets if any patient appears in two named sets.
void assert_disjoint(const std::map<std::string, std::set<std::string>>& datasets);

enum class OutcomeKind { AllCauseDeath, CompositeMiCvaDeath };
enum class LipidStrata { None, Ever, BeforeEvent };

std::string_view outcome_name(OutcomeKind k);
OutcomeKind parse_outcome(std::string_view s);
LipidStrata parse_strata(std::string_view s);

struct SurvivalRow {
    std::string patient_id;
    std::string group_label;
    std::int64_t duration_days = 0;
    bool event = false;
    OutcomeKind outcome_kind = OutcomeKind::AllCauseDeath;
};

Json to_json(const SurvivalRow& r);
SurvivalRow survival_row_from_json(const Json& j);

struct IndexedScore {
    std::string patient_id;
    Date index_date{};
    std::int64_t rounded_score = 0;
};

std::string group_label(CacBin bin, LipidStrata strata, bool treated);

/// Builds survival rows. Composite outcome drops patients with MI or stroke
/// strictly before the index date; a death before the index date is a data
/// error (NegativeDuration).
std::vector<SurvivalRow> make_survival_rows(std::span<const PatientRecord> patients,
                                            std::span<const IndexedScore> scores, OutcomeKind outcome,
                                            LipidStrata strata);

struct DatedReport {
    std::string patient_id;
    Date report_date{};
    std::string report_id;
    double score = 0.0;
};

/// Oldest report per patient supplies the reference score and index date.
std::vector<IndexedScore> oldest_report_scores(std::span<const DatedReport> reports);

}  // namespace cac::cohort
