#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "volume_ingest.hpp"

namespace cac::seg {

using ingest::CtVolume;
using ingest::Dims;

struct Run {
    std::int64_t start = 0;
    std::int64_t length = 0;
    friend bool operator==(const Run&, const Run&) = default;
};

/// Binary calcium mask as runs over the flattened slice-major voxel index.
/// Runs are kept canonical: ascending, non-overlapping, non-adjacent.
struct CalciumMask {
    std::string study_uid;
    std::string series_uid;
    Dims dims;
    std::vector<Run> runs;

    std::int64_t voxel_count() const;
    bool contains(std::int64_t index) const;
    std::vector<std::uint8_t> to_bitmap() const;
    /// Distinct slice indices holding at least one mask voxel, ascending.
    std::vector<std::int64_t> positive_slices() const;

    friend bool operator==(const CalciumMask&, const CalciumMask&) = default;
};

/// Sorts and merges adjacent runs. Overlapping, empty, or out-of-range runs
/// throw MalformedRuns.
std::vector<Run> canonicalize_runs(std::vector<Run> runs, std::int64_t total);

CalciumMask mask_from_bitmap(std::span<const std::uint8_t> bitmap, Dims dims, std::string study_uid,
                             std::string series_uid);

/// Text interchange: header `CACMASK 1 <study> <series> <ns> <nr> <nc>`, then
/// one `start length` pair per line.
std::string serialize_mask(const CalciumMask& mask);
CalciumMask parse_mask(std::string_view text);

/// Validates a parsed mask against its target volume and canonicalizes it.
CalciumMask validate_mask(CalciumMask mask, const CtVolume& volume);
CalciumMask load_mask(const std::filesystem::path& path, const CtVolume& volume);
void save_mask(const CalciumMask& mask, const std::filesystem::path& path);

/// Half-open voxel box [z0, z1) x [y0, y1) x [x0, x1).
struct RoiBox {
    std::int64_t z0 = 0, y0 = 0, x0 = 0;
    std::int64_t z1 = 0, y1 = 0, x1 = 0;

    static RoiBox parse(std::string_view csv);
    static RoiBox whole(const Dims& d) { return {0, 0, 0, d.slices, d.rows, d.cols}; }
};

inline constexpr int kDefaultHuThreshold = 130;

/// Voxels inside `roi` with HU >= threshold.
CalciumMask baseline_segment(const CtVolume& volume, const RoiBox& roi,
                             int hu_threshold = kDefaultHuThreshold);

struct ExternalRunnerConfig {
    // Executed through /bin/sh. `{input}` and `{output}` are replaced by the
    // fixture directory and the expected mask path; if neither placeholder
    // appears both are appended as trailing arguments.
    std::string command;
    std::filesystem::path scratch_dir;
    std::chrono::seconds timeout{600};
};

/// Writes the volume as a fixture, runs the external model, and validates
/// the mask it writes. RunnerFailed on nonzero exit or timeout,
/// InvalidModelOutput when the mask is missing or inconsistent.
CalciumMask run_external_model(const CtVolume& volume, const ExternalRunnerConfig& runner);

}  // namespace cac::seg
