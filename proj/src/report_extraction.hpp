#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "util.hpp"

namespace cac::nlp {

enum class Status { Extracted, NotExtractable };
enum class Reason { HardwareMention, NoScorePattern, AmbiguousMultiple };

std::string_view reason_name(Reason r);
std::string_view status_name(Status s);

struct MatchedSpan {
    std::size_t begin = 0;  // byte offsets into the report text, half-open
    std::size_t end = 0;
    std::string text;
};

struct ExtractionResult {
    Status status = Status::NotExtractable;
    std::optional<double> score;
    std::optional<Reason> reason;
    std::optional<MatchedSpan> matched_span;

    static ExtractionResult extracted(double score, MatchedSpan span);
    static ExtractionResult rejected(Reason reason);
};

enum class RuleAction { RejectHardware, ExcludeContext, TotalScore };

struct Rule {
    RuleAction action;
    std::string source;  // pattern as written in the pack
    std::regex regex;
};

/// Ordered pattern/action list loaded from a JSON pack. Total-score patterns
/// may use the `{NUM}` macro, which expands to a capturing number group.
struct RulePack {
    std::string name;
    std::vector<Rule> rules;
    double max_plausible = 100000.0;

    static RulePack from_json(const Json& j);
    static RulePack load(const std::filesystem::path& path);
};

/// Parses "1,234.5" / "0" / "zero". Returns nullopt for malformed text.
std::optional<double> parse_score_number(std::string_view text);

ExtractionResult extract_agatston(std::string_view report_text, const RulePack& rules);

struct ReportRecord {
    std::string report_id;
    std::string patient_id;
    std::string study_uid;
    std::string report_text;
    std::string report_date;
};

ReportRecord report_from_json(const Json& j);
Json to_json(const ExtractionResult& r);
ExtractionResult extraction_from_json(const Json& j);

struct AuditRow {
    std::string report_id;
    std::string report_text;
    ExtractionResult result;
};

/// Seeded uniform sample without replacement, in sampled order.
std::vector<AuditRow> audit_sample(std::span<const AuditRow> population, std::size_t n, std::uint64_t seed);

/// Tab-separated worksheet with a blank verdict column.
std::string audit_worksheet(std::span<const AuditRow> rows);

}  // namespace cac::nlp
