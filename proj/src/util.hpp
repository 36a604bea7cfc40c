#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cac {

using Json = nlohmann::json;

// Calendar dates are day-granular; timestamps are seconds since the Unix epoch.
using Date = std::chrono::sys_days;

Date parse_date(std::string_view text);
std::string format_date(Date d);
std::int64_t days_between(Date from, Date to);

std::int64_t parse_timestamp(std::string_view text);
std::string format_timestamp(std::int64_t seconds);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);

// Newline-delimited JSON records.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const Json> records);

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

/// Deterministic random source. Engine and bounded draws are fully specified
/// so seeded results are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    /// Uniform real in [0, 1).
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// Independent substream seed derived from a root seed and a stream index.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

}  // namespace cac
