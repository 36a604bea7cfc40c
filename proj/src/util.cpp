#include "util.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace cac {

namespace {

int parse_int(std::string_view s, std::string_view whole) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        fail(ErrorCode::Parse, "bad date/time field in '" + std::string(whole) + "'");
    return v;
}

}  // namespace

Date parse_date(std::string_view text) {
    std::string t = trim(text);
    std::string_view s = t;
    int y, m, d;
    if (s.size() == 10 && s[4] == '-' && s[7] == '-') {
        y = parse_int(s.substr(0, 4), s);
        m = parse_int(s.substr(5, 2), s);
        d = parse_int(s.substr(8, 2), s);
    } else if (s.size() == 8) {  // DICOM DA
        y = parse_int(s.substr(0, 4), s);
        m = parse_int(s.substr(4, 2), s);
        d = parse_int(s.substr(6, 2), s);
    } else {
        fail(ErrorCode::Parse, "unrecognized date '" + t + "'");
    }
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                                    std::chrono::day{unsigned(d)}};
    if (!ymd.ok()) fail(ErrorCode::Parse, "invalid calendar date '" + t + "'");
    return Date{ymd};
}

std::string format_date(Date d) {
    std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                  unsigned(ymd.day()));
    return buf;
}

std::int64_t days_between(Date from, Date to) { return (to - from).count(); }

std::int64_t parse_timestamp(std::string_view text) {
    std::string t = trim(text);
    std::string_view s = t;
    if (s.size() < 10) fail(ErrorCode::Parse, "unrecognized timestamp '" + t + "'");
    Date day;
    std::string_view rest;
    if (s[4] == '-') {
        day = parse_date(s.substr(0, 10));
        rest = s.substr(10);
        if (!rest.empty() && (rest[0] == 'T' || rest[0] == ' ')) rest.remove_prefix(1);
    } else {
        day = parse_date(s.substr(0, 8));
        rest = s.substr(8);
    }
    int hh = 0, mm = 0, ss = 0;
    if (!rest.empty()) {
        if (rest.back() == 'Z') rest.remove_suffix(1);
        if (rest.size() == 8 && rest[2] == ':' && rest[5] == ':') {
            hh = parse_int(rest.substr(0, 2), s);
            mm = parse_int(rest.substr(3, 2), s);
            ss = parse_int(rest.substr(6, 2), s);
        } else if (rest.size() >= 6) {  // DICOM TM, fractional seconds ignored
            hh = parse_int(rest.substr(0, 2), s);
            mm = parse_int(rest.substr(2, 2), s);
            ss = parse_int(rest.substr(4, 2), s);
        } else {
            fail(ErrorCode::Parse, "unrecognized time in '" + t + "'");
        }
    }
    if (hh > 23 || mm > 59 || ss > 60) fail(ErrorCode::Parse, "time out of range in '" + t + "'");
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(day.time_since_epoch()).count();
    return secs + hh * 3600 + mm * 60 + ss;
}

std::string format_timestamp(std::int64_t seconds) {
    auto days = seconds >= 0 ? seconds / 86400 : -((-seconds + 86399) / 86400);
    auto rem = seconds - days * 86400;
    Date d{std::chrono::days{days}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "T%02d:%02d:%02d", int(rem / 3600), int(rem / 60 % 60),
                  int(rem % 60));
    return format_date(d) + buf;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

void append_line(const std::filesystem::path& path, std::string_view line) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) fail(ErrorCode::Io, "cannot append to " + path.string());
    out << line << '\n';
    out.flush();
    if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    std::vector<Json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(Json::parse(line));
        } catch (const Json::parse_error& e) {
            fail(ErrorCode::Parse,
                 path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Json> records) {
    std::string buf;
    for (const auto& r : records) {
        buf += r.dump();
        buf += '\n';
    }
    write_file(path, buf);
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) fail(ErrorCode::InvalidArgument, "Rng::below(0)");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % bound;
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    // splitmix64 finalizer over the combined input
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace cac
