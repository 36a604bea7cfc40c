#include "agatston.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "error.hpp"

namespace cac::agatston {

void ScoringConfig::validate() const {
    if (hu_threshold < 0) fail(ErrorCode::InvalidArgument, "hu_threshold must be >= 0");
    if (!(min_slice_area_mm2 >= 0.0)) fail(ErrorCode::InvalidArgument, "min_slice_area_mm2 must be >= 0");
}

Json ScoringConfig::to_json() const {
    return Json{{"hu_threshold", hu_threshold},
                {"connectivity", connectivity == Connectivity::Conn26_3d ? "conn26_3d" : "conn8_2d"},
                {"min_slice_area_mm2", min_slice_area_mm2},
                {"thickness_normalization",
                 thickness_normalization == ThicknessNormalization::None ? "none" : "ratio_3mm"}};
}

ScoringConfig ScoringConfig::from_json(const Json& j) {
    ScoringConfig c;
    try {
        c.hu_threshold = j.value("hu_threshold", c.hu_threshold);
        c.min_slice_area_mm2 = j.value("min_slice_area_mm2", c.min_slice_area_mm2);
        auto conn = j.value("connectivity", std::string("conn26_3d"));
        if (conn == "conn26_3d") c.connectivity = Connectivity::Conn26_3d;
        else if (conn == "conn8_2d") c.connectivity = Connectivity::Conn8_2d;
        else fail(ErrorCode::InvalidArgument, "unknown connectivity '" + conn + "'");
        auto norm = j.value("thickness_normalization", std::string("none"));
        if (norm == "none") c.thickness_normalization = ThicknessNormalization::None;
        else if (norm == "ratio_3mm") c.thickness_normalization = ThicknessNormalization::Ratio3mm;
        else fail(ErrorCode::InvalidArgument, "unknown thickness_normalization '" + norm + "'");
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, std::string("scoring config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string ScoringConfig::fingerprint() const { return hex64(fnv1a64(to_json().dump())); }

std::string_view bin_name(CacBin b) {
    switch (b) {
    case CacBin::Zero: return "zero";
    case CacBin::B1_100: return "b1_100";
    case CacBin::B101_400: return "b101_400";
    case CacBin::Gt400: return "gt400";
    }
    return "zero";
}

CacBin parse_bin(std::string_view name) {
    if (name == "zero" || name == "0") return CacBin::Zero;
    if (name == "b1_100" || name == "1-100") return CacBin::B1_100;
    if (name == "b101_400" || name == "101-400") return CacBin::B101_400;
    if (name == "gt400" || name == ">400") return CacBin::Gt400;
    fail(ErrorCode::InvalidArgument, "unknown CAC bin '" + std::string(name) + "'");
}

int bin_index(CacBin b) { return static_cast<int>(b); }

int density_weight(int peak_hu) {
    if (peak_hu >= 400) return 4;
    if (peak_hu >= 300) return 3;
    if (peak_hu >= 200) return 2;
    if (peak_hu >= 130) return 1;
    return 0;
}

namespace {

struct DisjointSet {
    std::vector<std::int32_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::int32_t find(std::int32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::int32_t a, std::int32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        // Smaller root wins so roots stay at the component's first voxel.
        if (b < a) std::swap(a, b);
        parent[b] = a;
    }
};

struct Offset {
    int dz, dy, dx;
};

std::vector<Offset> forward_offsets(Connectivity c) {
    std::vector<Offset> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (c == Connectivity::Conn8_2d && dz != 0) continue;
                // lexicographically positive half of the neighbourhood
                if (dz > 0 || (dz == 0 && (dy > 0 || (dy == 0 && dx > 0)))) out.push_back({dz, dy, dx});
            }
    return out;
}

double thickness_factor(const CtVolume& volume, const ScoringConfig& config) {
    return config.thickness_normalization == ThicknessNormalization::Ratio3mm ? volume.slice_thickness_mm / 3.0
                                                                              : 1.0;
}

}  // namespace

std::vector<Lesion> extract_lesions(const CtVolume& volume, const CalciumMask& mask, const ScoringConfig& config) {
    config.validate();
    if (mask.dims != volume.dims) fail(ErrorCode::DimsMismatch, "mask dims do not match volume");
    const auto& d = volume.dims;

    std::vector<std::int64_t> cand;
    for (const auto& r : mask.runs)
        for (std::int64_t i = r.start; i < r.start + r.length; ++i)
            if (volume.voxels[static_cast<std::size_t>(i)] >= config.hu_threshold) cand.push_back(i);
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

    DisjointSet ds(cand.size());
    const auto offsets = forward_offsets(config.connectivity);
    const std::int64_t plane = d.rows * d.cols;
    for (std::size_t k = 0; k < cand.size(); ++k) {
        const std::int64_t idx = cand[k];
        const std::int64_t z = idx / plane, y = (idx / d.cols) % d.rows, x = idx % d.cols;
        for (const auto& o : offsets) {
            const std::int64_t nz = z + o.dz, ny = y + o.dy, nx = x + o.dx;
            if (nz < 0 || nz >= d.slices || ny < 0 || ny >= d.rows || nx < 0 || nx >= d.cols) continue;
            const std::int64_t nidx = volume.index(nz, ny, nx);
            auto it = std::lower_bound(cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), nidx);
            if (it != cand.end() && *it == nidx)
                ds.unite(static_cast<std::int32_t>(k), static_cast<std::int32_t>(it - cand.begin()));
        }
    }

    // Components in order of their minimum index (= their root position).
    std::map<std::int32_t, std::vector<std::int64_t>> comps;
    for (std::size_t k = 0; k < cand.size(); ++k) comps[ds.find(static_cast<std::int32_t>(k))].push_back(cand[k]);

    const double pixel_area = volume.row_mm * volume.col_mm;
    const double factor = thickness_factor(volume, config);
    std::vector<Lesion> lesions;
    for (auto& [root, voxels] : comps) {
        std::map<std::int64_t, std::pair<std::int64_t, int>> slices;  // slice -> (count, peak)
        for (auto idx : voxels) {
            auto& s = slices.try_emplace(idx / plane, 0, std::numeric_limits<int>::min()).first->second;
            ++s.first;
            s.second = std::max<int>(s.second, volume.voxels[static_cast<std::size_t>(idx)]);
        }
        Lesion lesion;
        for (const auto& [z, cp] : slices) {
            SliceEntry e;
            e.slice_index = z;
            e.voxel_count = cp.first;
            e.area_mm2 = static_cast<double>(cp.first) * pixel_area;
            e.peak_hu = cp.second;
            e.weight = density_weight(e.peak_hu);
            if (e.area_mm2 < config.min_slice_area_mm2 || e.weight == 0) continue;
            e.slice_score = static_cast<double>(e.voxel_count * e.weight) * pixel_area * factor;
            lesion.per_slice.push_back(e);
        }
        if (lesion.per_slice.empty()) continue;
        lesion.voxel_indices = std::move(voxels);
        lesion.lesion_id = static_cast<int>(lesions.size()) + 1;
        lesions.push_back(std::move(lesion));
    }
    return lesions;
}

std::int64_t round_score(double total) { return static_cast<std::int64_t>(std::floor(total + 0.5)); }

CacBin bin_score(std::int64_t rounded) {
    if (rounded < 0) fail(ErrorCode::InvalidArgument, "rounded score must be >= 0");
    if (rounded == 0) return CacBin::Zero;
    if (rounded <= 100) return CacBin::B1_100;
    if (rounded <= 400) return CacBin::B101_400;
    return CacBin::Gt400;
}

bool threshold_class(std::int64_t rounded, std::int64_t threshold) {
    if (threshold <= 0) fail(ErrorCode::InvalidArgument, "threshold must be positive");
    return rounded >= threshold;
}

ScanScore score_scan(const CtVolume& volume, const CalciumMask& mask, const ScoringConfig& config) {
    ScanScore s;
    s.study_uid = volume.meta.study_uid;
    s.lesions = extract_lesions(volume, mask, config);
    s.config_fingerprint = config.fingerprint();
    // Integer accumulation keeps the total independent of summation order.
    std::int64_t weighted_voxels = 0;
    for (const auto& l : s.lesions)
        for (const auto& e : l.per_slice) weighted_voxels += e.voxel_count * e.weight;
    s.total = static_cast<double>(weighted_voxels) * (volume.row_mm * volume.col_mm) * thickness_factor(volume, config);
    s.rounded = round_score(s.total);
    s.bin = bin_score(s.rounded);
    return s;
}

Json to_json(const ScanScore& s, bool include_lesions) {
    Json j{{"study_uid", s.study_uid},
           {"total", s.total},
           {"rounded", s.rounded},
           {"bin", std::string(bin_name(s.bin))},
           {"config_fingerprint", s.config_fingerprint}};
    if (include_lesions) {
        Json ls = Json::array();
        for (const auto& l : s.lesions) {
            Json per = Json::array();
            for (const auto& e : l.per_slice)
                per.push_back({{"slice_index", e.slice_index},
                               {"voxel_count", e.voxel_count},
                               {"area_mm2", e.area_mm2},
                               {"peak_hu", e.peak_hu},
                               {"weight", e.weight},
                               {"slice_score", e.slice_score}});
            ls.push_back({{"lesion_id", l.lesion_id},
                          {"voxel_count", static_cast<std::int64_t>(l.voxel_indices.size())},
                          {"per_slice", per}});
        }
        j["lesions"] = ls;
    }
    return j;
}

ScanScore score_from_json(const Json& j) {
    ScanScore s;
    try {
        s.study_uid = j.at("study_uid").get<std::string>();
        s.total = j.at("total").get<double>();
        s.rounded = j.at("rounded").get<std::int64_t>();
        s.bin = parse_bin(j.at("bin").get<std::string>());
        s.config_fingerprint = j.value("config_fingerprint", std::string{});
        if (auto it = j.find("lesions"); it != j.end()) {
            for (const auto& lj : *it) {
                Lesion l;
                l.lesion_id = lj.at("lesion_id").get<int>();
                for (const auto& ej : lj.at("per_slice")) {
                    SliceEntry e;
                    e.slice_index = ej.at("slice_index").get<std::int64_t>();
                    e.voxel_count = ej.at("voxel_count").get<std::int64_t>();
                    e.area_mm2 = ej.at("area_mm2").get<double>();
                    e.peak_hu = ej.at("peak_hu").get<int>();
                    e.weight = ej.at("weight").get<int>();
                    e.slice_score = ej.at("slice_score").get<double>();
                    l.per_slice.push_back(e);
                }
                s.lesions.push_back(std::move(l));
            }
        }
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, std::string("score record: ") + e.what());
    }
    return s;
}

}  // namespace cac::agatston
