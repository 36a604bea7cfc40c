#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "segmentation_io.hpp"

namespace cac::agatston {

using ingest::CtVolume;
using seg::CalciumMask;

enum class Connectivity { Conn26_3d, Conn8_2d };
enum class ThicknessNormalization { None, Ratio3mm };

struct ScoringConfig {
    int hu_threshold = 130;
    Connectivity connectivity = Connectivity::Conn26_3d;
    double min_slice_area_mm2 = 1.0;
    ThicknessNormalization thickness_normalization = ThicknessNormalization::None;

    void validate() const;
    Json to_json() const;
    static ScoringConfig from_json(const Json& j);
    /// Stable hash of the canonical JSON form.
    std::string fingerprint() const;
};

struct SliceEntry {
    std::int64_t slice_index = 0;
    std::int64_t voxel_count = 0;
    double area_mm2 = 0.0;
    int peak_hu = 0;
    int weight = 0;
    double slice_score = 0.0;
};

struct Lesion {
    int lesion_id = 0;
    std::vector<std::int64_t> voxel_indices;  // ascending
    std::vector<SliceEntry> per_slice;        // ascending slice index, retained entries only
};

enum class CacBin { Zero, B1_100, B101_400, Gt400 };

std::string_view bin_name(CacBin b);
CacBin parse_bin(std::string_view name);
int bin_index(CacBin b);

struct ScanScore {
    std::string study_uid;
    double total = 0.0;
    std::int64_t rounded = 0;
    CacBin bin = CacBin::Zero;
    std::vector<Lesion> lesions;
    std::string config_fingerprint;
};

/// Density weight from the peak HU of one lesion slice; 0 below 130.
int density_weight(int peak_hu);

std::vector<Lesion> extract_lesions(const CtVolume& volume, const CalciumMask& mask, const ScoringConfig& config);

ScanScore score_scan(const CtVolume& volume, const CalciumMask& mask, const ScoringConfig& config);

/// Half-up rounding used before binning and thresholding.
std::int64_t round_score(double total);

CacBin bin_score(std::int64_t rounded);
bool threshold_class(std::int64_t rounded, std::int64_t threshold);

Json to_json(const ScanScore& s, bool include_lesions = true);
ScanScore score_from_json(const Json& j);

}  // namespace cac::agatston
