#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cohort.hpp"

namespace cac::reports {

struct PatientScore {
    std::string patient_id;
    std::int64_t rounded_score = 0;
};

struct DistributionPanel {
    std::string name;
    std::int64_t n = 0;
    std::array<std::int64_t, 4> counts{};
    std::array<double, 4> percents{};  // 0 when n == 0
};

/// Days before followup_end within which an issued prescription counts as
/// active therapy.
inline constexpr std::int64_t kActiveTherapyDays = 365;

bool on_active_therapy(const cohort::PatientRecord& p, std::int64_t window_days = kActiveTherapyDays);

/// Full-cohort bin distribution, plus the ever / never prescribed and living
/// on / off therapy panels when patient records are supplied.
std::vector<DistributionPanel> screening_report(std::span<const PatientScore> scores,
                                                const std::map<std::string, cohort::PatientRecord>* patients);

struct TherapyGap {
    std::int64_t n_living_gt400 = 0;
    std::int64_t n_untreated = 0;
    std::optional<double> proportion_untreated;
    std::vector<std::string> untreated_patient_ids;  // sorted
};

/// Living patients in the >400 bin without active therapy at followup_end.
TherapyGap therapy_gap_report(std::span<const PatientScore> scores,
                              const std::map<std::string, cohort::PatientRecord>& patients);

Json to_json(const DistributionPanel& p);
Json to_json(const TherapyGap& g);

/// One decimal, half away from zero, as printed in the report tables.
std::string format_percent(double pct);

}  // namespace cac::reports
