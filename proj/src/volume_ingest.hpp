#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "util.hpp"

namespace cac::ingest {

enum class Orientation { Axial, NonAxial };
enum class Sex { M, F };

struct SeriesMeta {
    std::string study_uid;
    std::string series_uid;
    std::string description;
    Orientation orientation = Orientation::Axial;
    bool contrast = false;
    double slice_thickness_mm = 0.0;
    std::int64_t acquisition_timestamp = 0;  // seconds since epoch
    std::string modality;
    std::string manufacturer;
    std::optional<double> kvp;
    std::optional<Sex> sex;
    std::string center_id;
    // Where the series was found; empty for manifest-file sources.
    std::filesystem::path source_dir;
};

Json to_json(const SeriesMeta& m);
SeriesMeta series_from_json(const Json& j);

struct Dims {
    std::int64_t slices = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;

    std::int64_t total() const { return slices * rows * cols; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

/// HU voxel grid, index order (slice, row, col). Immutable after load.
struct CtVolume {
    Dims dims;
    double row_mm = 0.0;
    double col_mm = 0.0;
    double slice_thickness_mm = 0.0;
    double slice_spacing_mm = 0.0;
    std::vector<std::int16_t> voxels;
    SeriesMeta meta;

    std::int64_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return (z * dims.rows + y) * dims.cols + x;
    }
    std::int16_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return voxels[static_cast<std::size_t>(index(z, y, x))];
    }
};

inline constexpr int kMinHu = -1024;
inline constexpr int kMaxHu = 32767;

struct SeriesFailure {
    std::string study_uid;   // empty when unreadable
    std::string series_uid;  // may be empty when the uid itself is unreadable
    std::filesystem::path location;
    ErrorCode code;
    std::string message;
};

struct ManifestScan {
    std::vector<SeriesMeta> series;
    std::vector<SeriesFailure> failures;
};

/// Reads series metadata from a directory tree (every file named `manifest`)
/// or from a newline-delimited manifest file. No filtering happens here.
/// Throws UnreadableSource when `source` itself cannot be read.
ManifestScan parse_study_manifest(const std::filesystem::path& source);

struct SelectionPolicy {
    double min_thickness_mm = 2.5;
    double max_thickness_mm = 5.0;
    // Earlier keywords rank higher.
    std::vector<std::string> keywords{"cardiac", "calcium", "lung"};

    static SelectionPolicy from_json(const Json& j);
};

bool passes_filters(const SeriesMeta& s, const SelectionPolicy& policy);

/// Picks one series per study. Throws NoEligibleSeries when nothing survives
/// the axial / non-contrast / thickness filters.
SeriesMeta select_series(std::span<const SeriesMeta> candidates, const SelectionPolicy& policy);

struct RawSlice {
    double position_mm = 0.0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    double row_mm = 0.0;
    double col_mm = 0.0;
    double slope = 1.0;
    double intercept = 0.0;
    std::vector<std::int16_t> raw;
};

/// Applies the HU rescale (raw * slope + intercept, rounded, clamped to
/// [kMinHu, kMaxHu]) and stacks slices in ascending position order.
CtVolume load_volume(const SeriesMeta& series, std::span<const RawSlice> slices,
                     std::optional<double> slice_spacing_mm = std::nullopt);

std::int16_t rescale_to_hu(std::int16_t raw, double slope, double intercept);

/// Slices of a fixture series directory (`manifest` + `voxels.i16le`).
struct FixtureSeries {
    SeriesMeta meta;
    std::vector<RawSlice> slices;  // in file order
    std::optional<double> slice_spacing_mm;
};
FixtureSeries read_fixture(const std::filesystem::path& series_dir);

CtVolume load_fixture_volume(const std::filesystem::path& series_dir);

/// Writes a volume in fixture format with identity rescale.
void write_fixture(const CtVolume& volume, const std::filesystem::path& series_dir);

}  // namespace cac::ingest
