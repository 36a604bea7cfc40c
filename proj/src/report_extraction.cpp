#include "report_extraction.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "error.hpp"

namespace cac::nlp {

namespace {

// Optional sign so negative values are seen and then rejected, not skipped.
constexpr const char* kNumberGroup = R"((-?\d{1,3}(?:,\d{3})+(?:\.\d+)?|-?\d+(?:\.\d+)?|zero)\b)";

std::string expand_macros(std::string pattern) {
    const std::string macro = "{NUM}";
    for (auto pos = pattern.find(macro); pos != std::string::npos; pos = pattern.find(macro, pos))
        pattern.replace(pos, macro.size(), kNumberGroup);
    return pattern;
}

RuleAction parse_action(const std::string& s) {
    if (s == "reject_hardware") return RuleAction::RejectHardware;
    if (s == "exclude_context") return RuleAction::ExcludeContext;
    if (s == "total_score") return RuleAction::TotalScore;
    fail(ErrorCode::Parse, "rule pack: unknown action '" + s + "'");
}

// Start of the clause holding `pos`: after the nearest newline, semicolon,
// or sentence/list break (". " or ", ").
std::size_t clause_start(std::string_view text, std::size_t pos) {
    std::size_t i = pos;
    while (i > 0) {
        char c = text[i - 1];
        if (c == '\n' || c == ';') return i;
        if ((c == '.' || c == ',') && i < text.size() && (text[i] == ' ' || text[i] == '\t')) return i;
        --i;
    }
    return 0;
}

}  // namespace

std::string_view reason_name(Reason r) {
    switch (r) {
    case Reason::HardwareMention: return "hardware_mention";
    case Reason::NoScorePattern: return "no_score_pattern";
    case Reason::AmbiguousMultiple: return "ambiguous_multiple";
    }
    return "no_score_pattern";
}

std::string_view status_name(Status s) { return s == Status::Extracted ? "extracted" : "not_extractable"; }

ExtractionResult ExtractionResult::extracted(double score, MatchedSpan span) {
    ExtractionResult r;
    r.status = Status::Extracted;
    r.score = score;
    r.matched_span = std::move(span);
    return r;
}

ExtractionResult ExtractionResult::rejected(Reason reason) {
    ExtractionResult r;
    r.status = Status::NotExtractable;
    r.reason = reason;
    return r;
}

RulePack RulePack::from_json(const Json& j) {
    RulePack pack;
    try {
        pack.name = j.value("name", std::string("unnamed"));
        pack.max_plausible = j.value("max_plausible", pack.max_plausible);
        for (const auto& rj : j.at("rules")) {
            Rule r{parse_action(rj.at("action").get<std::string>()), rj.at("pattern").get<std::string>(), {}};
            auto flags = std::regex::ECMAScript | std::regex::optimize;
            if (rj.value("case_insensitive", true)) flags |= std::regex::icase;
            try {
                r.regex = std::regex(expand_macros(r.source), flags);
            } catch (const std::regex_error& e) {
                fail(ErrorCode::Parse, "rule pack: bad pattern '" + r.source + "': " + e.what());
            }
            pack.rules.push_back(std::move(r));
        }
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, std::string("rule pack: ") + e.what());
    }
    return pack;
}

RulePack RulePack::load(const std::filesystem::path& path) {
    try {
        return from_json(Json::parse(read_file(path)));
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, path.string() + ": " + e.what());
    }
}

std::optional<double> parse_score_number(std::string_view text) {
    std::string t = to_lower(trim(text));
    if (t == "zero") return 0.0;
    const auto dot = t.find('.');
    const auto int_part = t.substr(0, dot);
    if (int_part.find(',') != std::string::npos) {
        auto groups = split(int_part, ',');
        if (groups.front().empty() || groups.front().size() > 3) return std::nullopt;
        for (std::size_t i = 1; i < groups.size(); ++i)
            if (groups[i].size() != 3) return std::nullopt;
    }
    std::string digits;
    for (char c : t)
        if (c != ',') digits += c;
    if (digits.empty()) return std::nullopt;
    double v = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc{} || p != digits.data() + digits.size()) return std::nullopt;
    return v;
}

ExtractionResult extract_agatston(std::string_view report_text, const RulePack& rules) {
    const std::string text(report_text);

    for (const auto& r : rules.rules)
        if (r.action == RuleAction::RejectHardware && std::regex_search(text, r.regex))
            return ExtractionResult::rejected(Reason::HardwareMention);

    struct Candidate {
        double value;
        MatchedSpan span;
    };
    std::vector<Candidate> found;
    for (const auto& r : rules.rules) {
        if (r.action != RuleAction::TotalScore) continue;
        for (auto it = std::sregex_iterator(text.begin(), text.end(), r.regex); it != std::sregex_iterator(); ++it) {
            const auto& m = *it;
            if (m.size() < 2 || !m[1].matched) continue;
            const auto begin = static_cast<std::size_t>(m.position(0));
            const auto num_begin = static_cast<std::size_t>(m.position(1));
            const auto ctx_begin = clause_start(text, begin);
            const std::string context = text.substr(ctx_begin, num_begin - ctx_begin);
            bool excluded = false;
            for (const auto& x : rules.rules)
                if (x.action == RuleAction::ExcludeContext && std::regex_search(context, x.regex)) {
                    excluded = true;
                    break;
                }
            if (excluded) continue;
            auto value = parse_score_number(m[1].str());
            if (!value || *value < 0.0 || *value > rules.max_plausible) continue;
            found.push_back({*value, {begin, begin + static_cast<std::size_t>(m.length(0)), m.str(0)}});
        }
    }
    if (found.empty()) return ExtractionResult::rejected(Reason::NoScorePattern);
    std::sort(found.begin(), found.end(),
              [](const Candidate& a, const Candidate& b) { return a.span.begin < b.span.begin; });
    for (const auto& c : found)
        if (c.value != found.front().value) return ExtractionResult::rejected(Reason::AmbiguousMultiple);
    return ExtractionResult::extracted(found.front().value, found.front().span);
}

ReportRecord report_from_json(const Json& j) {
    try {
        return {j.at("report_id").get<std::string>(), j.value("patient_id", std::string{}),
                j.value("study_uid", std::string{}), j.at("report_text").get<std::string>(),
                j.value("report_date", std::string{})};
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, std::string("report record: ") + e.what());
    }
}

Json to_json(const ExtractionResult& r) {
    Json j{{"status", std::string(status_name(r.status))}};
    j["score"] = r.score ? Json(*r.score) : Json(nullptr);
    j["reason"] = r.reason ? Json(std::string(reason_name(*r.reason))) : Json(nullptr);
    if (r.matched_span)
        j["matched_span"] = {{"begin", r.matched_span->begin},
                             {"end", r.matched_span->end},
                             {"text", r.matched_span->text}};
    else
        j["matched_span"] = nullptr;
    return j;
}

ExtractionResult extraction_from_json(const Json& j) {
    ExtractionResult r;
    try {
        r.status = j.at("status").get<std::string>() == "extracted" ? Status::Extracted : Status::NotExtractable;
        if (auto it = j.find("score"); it != j.end() && !it->is_null()) r.score = it->get<double>();
        if (auto it = j.find("reason"); it != j.end() && !it->is_null()) {
            auto s = it->get<std::string>();
            r.reason = s == "hardware_mention"     ? Reason::HardwareMention
                       : s == "ambiguous_multiple" ? Reason::AmbiguousMultiple
                                                   : Reason::NoScorePattern;
        }
        if (auto it = j.find("matched_span"); it != j.end() && !it->is_null())
            r.matched_span = MatchedSpan{it->at("begin").get<std::size_t>(), it->at("end").get<std::size_t>(),
                                         it->at("text").get<std::string>()};
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, std::string("extraction record: ") + e.what());
    }
    return r;
}

std::vector<AuditRow> audit_sample(std::span<const AuditRow> population, std::size_t n, std::uint64_t seed) {
    if (n > population.size())
        fail(ErrorCode::SampleTooLarge, "audit sample of " + std::to_string(n) + " exceeds population of " +
                                            std::to_string(population.size()));
    std::vector<std::size_t> idx(population.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<AuditRow> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(population[idx[i]]);
    return out;
}

namespace {

std::string escape_cell(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else if (c == '\r') out += "\\r";
        else if (c == '\\') out += "\\\\";
        else out += c;
    }
    return out;
}

std::string format_score(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

std::string audit_worksheet(std::span<const AuditRow> rows) {
    std::string out = "report_id\tstatus\textracted_score\treason\tverdict\treport_text\n";
    for (const auto& r : rows) {
        out += escape_cell(r.report_id) + "\t" + std::string(status_name(r.result.status)) + "\t" +
               (r.result.score ? format_score(*r.result.score) : std::string{}) + "\t" +
               (r.result.reason ? std::string(reason_name(*r.result.reason)) : std::string{}) + "\t\t" +
               escape_cell(r.report_text) + "\n";
    }
    return out;
}

}  // namespace cac::nlp
