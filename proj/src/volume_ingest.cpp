#include "volume_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "error.hpp"

namespace cac::ingest {

namespace fs = std::filesystem;

namespace {

std::string orientation_name(Orientation o) { return o == Orientation::Axial ? "axial" : "non_axial"; }

Orientation parse_orientation(const std::string& s) {
    auto v = to_lower(s);
    if (v == "axial") return Orientation::Axial;
    if (v == "non_axial" || v == "sagittal" || v == "coronal" || v == "oblique")
        return Orientation::NonAxial;
    fail(ErrorCode::Parse, "unknown orientation '" + s + "'");
}

const Json& require(const Json& j, const char* key, const std::string& who) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null())
        fail(ErrorCode::MissingMandatoryTag, "series " + who + " lacks mandatory tag '" + key + "'");
    return *it;
}

std::string opt_string(const Json& j, const char* key) {
    auto it = j.find(key);
    return (it == j.end() || it->is_null()) ? std::string{} : it->get<std::string>();
}

}  // namespace

Json to_json(const SeriesMeta& m) {
    Json j{{"study_uid", m.study_uid},
           {"series_uid", m.series_uid},
           {"description", m.description},
           {"orientation", orientation_name(m.orientation)},
           {"contrast", m.contrast},
           {"slice_thickness_mm", m.slice_thickness_mm},
           {"acquisition_timestamp", format_timestamp(m.acquisition_timestamp)},
           {"modality", m.modality},
           {"manufacturer", m.manufacturer},
           {"center_id", m.center_id}};
    j["kvp"] = m.kvp ? Json(*m.kvp) : Json(nullptr);
    j["sex"] = m.sex ? Json(*m.sex == Sex::M ? "M" : "F") : Json(nullptr);
    return j;
}

SeriesMeta series_from_json(const Json& j) {
    SeriesMeta m;
    m.study_uid = opt_string(j, "study_uid");
    m.series_uid = opt_string(j, "series_uid");
    const std::string who = m.series_uid.empty() ? std::string("<unknown>") : m.series_uid;
    if (m.study_uid.empty())
        fail(ErrorCode::MissingMandatoryTag, "series " + who + " lacks mandatory tag 'study_uid'");
    if (m.series_uid.empty())
        fail(ErrorCode::MissingMandatoryTag, "series in study " + m.study_uid + " lacks mandatory tag 'series_uid'");
    try {
        m.orientation = parse_orientation(require(j, "orientation", who).get<std::string>());
        m.slice_thickness_mm = require(j, "slice_thickness_mm", who).get<double>();
        m.acquisition_timestamp =
            parse_timestamp(require(j, "acquisition_timestamp", who).get<std::string>());
        m.description = opt_string(j, "description");
        m.contrast = j.value("contrast", false);
        m.modality = opt_string(j, "modality");
        m.manufacturer = opt_string(j, "manufacturer");
        m.center_id = opt_string(j, "center_id");
        if (auto it = j.find("kvp"); it != j.end() && !it->is_null()) m.kvp = it->get<double>();
        if (auto it = j.find("sex"); it != j.end() && !it->is_null()) {
            auto s = it->get<std::string>();
            if (s == "M") m.sex = Sex::M;
            else if (s == "F") m.sex = Sex::F;
            else fail(ErrorCode::Parse, "series " + who + ": unknown sex '" + s + "'");
        }
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, "series " + who + ": " + e.what());
    }
    if (!(m.slice_thickness_mm > 0.0))
        fail(ErrorCode::Parse, "series " + who + ": slice_thickness_mm must be positive");
    if (m.kvp && !(*m.kvp > 0.0)) fail(ErrorCode::Parse, "series " + who + ": kvp must be positive");
    return m;
}

ManifestScan parse_study_manifest(const fs::path& source) {
    ManifestScan scan;
    std::error_code ec;
    if (!fs::exists(source, ec)) fail(ErrorCode::UnreadableSource, "no such source: " + source.string());

    std::set<std::pair<std::string, std::string>> seen;
    auto accept = [&](const Json& j, const fs::path& loc, const fs::path& dir) {
        try {
            SeriesMeta m = series_from_json(j);
            m.source_dir = dir;
            if (!seen.emplace(m.study_uid, m.series_uid).second)
                fail(ErrorCode::Parse, "duplicate series " + m.series_uid + " in study " + m.study_uid);
            scan.series.push_back(std::move(m));
        } catch (const Error& e) {
            auto field = [&](const char* key) {
                auto it = j.is_object() ? j.find(key) : j.end();
                return it != j.end() && it->is_string() ? it->get<std::string>() : std::string{};
            };
            scan.failures.push_back({field("study_uid"), field("series_uid"), loc, e.code(), e.what()});
        }
    };

    if (fs::is_directory(source, ec)) {
        std::vector<fs::path> manifests;
        for (auto it = fs::recursive_directory_iterator(source, ec); !ec && it != fs::end(it);
             it.increment(ec)) {
            if (it->is_regular_file() && it->path().filename() == "manifest")
                manifests.push_back(it->path());
        }
        if (ec) fail(ErrorCode::UnreadableSource, "cannot walk " + source.string() + ": " + ec.message());
        std::sort(manifests.begin(), manifests.end());
        for (const auto& mp : manifests) {
            Json j;
            try {
                j = Json::parse(read_file(mp));
            } catch (const std::exception& e) {
                scan.failures.push_back({"", "", mp, ErrorCode::UnreadableSource, e.what()});
                continue;
            }
            accept(j, mp, mp.parent_path());
        }
        return scan;
    }

    std::vector<Json> lines;
    try {
        lines = read_jsonl(source);
    } catch (const Error& e) {
        fail(ErrorCode::UnreadableSource, e.what());
    }
    for (const auto& j : lines) {
        fs::path dir;
        if (auto it = j.find("dir"); it != j.end() && it->is_string())
            dir = source.parent_path() / it->get<std::string>();
        accept(j, source, dir);
    }
    return scan;
}

SelectionPolicy SelectionPolicy::from_json(const Json& j) {
    SelectionPolicy p;
    p.min_thickness_mm = j.value("min_thickness_mm", p.min_thickness_mm);
    p.max_thickness_mm = j.value("max_thickness_mm", p.max_thickness_mm);
    if (auto it = j.find("keywords"); it != j.end()) {
        p.keywords.clear();
        for (const auto& k : *it) p.keywords.push_back(to_lower(k.get<std::string>()));
    }
    if (p.min_thickness_mm > p.max_thickness_mm)
        fail(ErrorCode::InvalidArgument, "selection policy: min thickness exceeds max");
    return p;
}

bool passes_filters(const SeriesMeta& s, const SelectionPolicy& policy) {
    return s.orientation == Orientation::Axial && !s.contrast &&
           s.slice_thickness_mm >= policy.min_thickness_mm &&
           s.slice_thickness_mm <= policy.max_thickness_mm;
}

namespace {

std::size_t keyword_rank(const SeriesMeta& s, const SelectionPolicy& policy) {
    const auto desc = to_lower(s.description);
    for (std::size_t i = 0; i < policy.keywords.size(); ++i)
        if (desc.find(policy.keywords[i]) != std::string::npos) return i;
    return policy.keywords.size();
}

}  // namespace

SeriesMeta select_series(std::span<const SeriesMeta> candidates, const SelectionPolicy& policy) {
    if (candidates.empty()) fail(ErrorCode::NoEligibleSeries, "study has no series");
    const auto& study = candidates.front().study_uid;
    for (const auto& c : candidates)
        if (c.study_uid != study)
            fail(ErrorCode::InvalidArgument, "select_series: candidates span studies " + study +
                                                 " and " + c.study_uid);

    std::vector<const SeriesMeta*> survivors;
    for (const auto& c : candidates)
        if (passes_filters(c, policy)) survivors.push_back(&c);
    if (survivors.empty())
        fail(ErrorCode::NoEligibleSeries, "study " + study + ": no axial non-contrast series with thickness in [" +
                                              std::to_string(policy.min_thickness_mm) + ", " +
                                              std::to_string(policy.max_thickness_mm) + "] mm");

    std::size_t best_rank = policy.keywords.size();
    for (auto* s : survivors) best_rank = std::min(best_rank, keyword_rank(*s, policy));

    // Repeated protocols (identical description) keep the latest acquisition.
    std::map<std::string, const SeriesMeta*> by_protocol;
    for (auto* s : survivors) {
        if (keyword_rank(*s, policy) != best_rank) continue;
        auto [it, inserted] = by_protocol.emplace(s->description, s);
        if (inserted) continue;
        const SeriesMeta* cur = it->second;
        if (s->acquisition_timestamp > cur->acquisition_timestamp ||
            (s->acquisition_timestamp == cur->acquisition_timestamp && s->series_uid < cur->series_uid))
            it->second = s;
    }

    const SeriesMeta* chosen = nullptr;
    for (auto& [desc, s] : by_protocol)
        if (!chosen || s->series_uid < chosen->series_uid) chosen = s;
    return *chosen;
}

std::int16_t rescale_to_hu(std::int16_t raw, double slope, double intercept) {
    double hu = std::round(static_cast<double>(raw) * slope + intercept);
    hu = std::clamp(hu, static_cast<double>(kMinHu), static_cast<double>(kMaxHu));
    return static_cast<std::int16_t>(hu);
}

CtVolume load_volume(const SeriesMeta& series, std::span<const RawSlice> slices,
                     std::optional<double> slice_spacing_mm) {
    const std::string who = "series " + series.series_uid;
    if (slices.empty()) fail(ErrorCode::InconsistentGeometry, who + ": no slices");
    const RawSlice& first = slices.front();
    if (first.rows <= 0 || first.cols <= 0 || !(first.row_mm > 0) || !(first.col_mm > 0))
        fail(ErrorCode::InconsistentGeometry, who + ": non-positive slice geometry");
    for (const auto& s : slices) {
        if (s.rows != first.rows || s.cols != first.cols ||
            std::abs(s.row_mm - first.row_mm) > 1e-6 || std::abs(s.col_mm - first.col_mm) > 1e-6)
            fail(ErrorCode::InconsistentGeometry, who + ": slices disagree on rows/cols/spacing");
        if (static_cast<std::int64_t>(s.raw.size()) != s.rows * s.cols)
            fail(ErrorCode::InconsistentGeometry, who + ": slice pixel count does not match rows x cols");
    }

    std::vector<std::size_t> order(slices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return slices[a].position_mm < slices[b].position_mm;
    });

    double spacing = 0.0;
    if (slice_spacing_mm) {
        spacing = *slice_spacing_mm;
    } else if (order.size() > 1) {
        std::vector<double> diffs;
        for (std::size_t i = 1; i < order.size(); ++i)
            diffs.push_back(slices[order[i]].position_mm - slices[order[i - 1]].position_mm);
        std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
        spacing = diffs[diffs.size() / 2];
    } else {
        spacing = series.slice_thickness_mm;
    }
    if (!(spacing > 0)) fail(ErrorCode::InconsistentGeometry, who + ": non-positive slice spacing");

    for (std::size_t i = 1; i < order.size(); ++i) {
        double gap = slices[order[i]].position_mm - slices[order[i - 1]].position_mm;
        if (gap <= 1e-6) fail(ErrorCode::InconsistentGeometry, who + ": duplicate slice position");
        if (gap > 1.5 * spacing)
            fail(ErrorCode::MissingSlices, who + ": gap of " + std::to_string(gap) +
                                               " mm between slices exceeds 1.5 x spacing");
    }

    CtVolume vol;
    vol.dims = {static_cast<std::int64_t>(slices.size()), first.rows, first.cols};
    vol.row_mm = first.row_mm;
    vol.col_mm = first.col_mm;
    vol.slice_thickness_mm = series.slice_thickness_mm;
    vol.slice_spacing_mm = spacing;
    vol.meta = series;
    vol.voxels.reserve(static_cast<std::size_t>(vol.dims.total()));
    for (std::size_t idx : order) {
        const auto& s = slices[idx];
        for (auto raw : s.raw) vol.voxels.push_back(rescale_to_hu(raw, s.slope, s.intercept));
    }
    return vol;
}

FixtureSeries read_fixture(const fs::path& series_dir) {
    Json j;
    try {
        j = Json::parse(read_file(series_dir / "manifest"));
    } catch (const Error& e) {
        fail(ErrorCode::UnreadableSource, e.what());
    } catch (const Json::exception& e) {
        fail(ErrorCode::UnreadableSource, (series_dir / "manifest").string() + ": " + e.what());
    }
    FixtureSeries fx;
    fx.meta = series_from_json(j);
    fx.meta.source_dir = series_dir;
    const std::string who = "series " + fx.meta.series_uid;
    std::int64_t ns = 0, nr = 0, nc = 0;
    double row_mm = 0, col_mm = 0, slope = 1, intercept = 0;
    std::vector<double> positions;
    try {
        ns = require(j, "n_slices", fx.meta.series_uid).get<std::int64_t>();
        nr = require(j, "n_rows", fx.meta.series_uid).get<std::int64_t>();
        nc = require(j, "n_cols", fx.meta.series_uid).get<std::int64_t>();
        auto ps = require(j, "pixel_spacing_mm", fx.meta.series_uid);
        if (!ps.is_array() || ps.size() != 2) fail(ErrorCode::Parse, who + ": pixel_spacing_mm must be [row, col]");
        row_mm = ps[0].get<double>();
        col_mm = ps[1].get<double>();
        slope = j.value("rescale_slope", 1.0);
        intercept = j.value("rescale_intercept", 0.0);
        if (auto it = j.find("slice_spacing_mm"); it != j.end() && !it->is_null())
            fx.slice_spacing_mm = it->get<double>();
        if (auto it = j.find("slice_positions_mm"); it != j.end() && !it->is_null())
            positions = it->get<std::vector<double>>();
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, who + ": " + e.what());
    }
    if (ns <= 0 || nr <= 0 || nc <= 0) fail(ErrorCode::InconsistentGeometry, who + ": non-positive dims");
    if (!positions.empty() && static_cast<std::int64_t>(positions.size()) != ns)
        fail(ErrorCode::InconsistentGeometry, who + ": slice_positions_mm length differs from n_slices");

    std::string bytes;
    try {
        bytes = read_file(series_dir / "voxels.i16le");
    } catch (const Error& e) {
        fail(ErrorCode::UnreadableSource, e.what());
    }
    const std::int64_t per_slice = nr * nc;
    if (static_cast<std::int64_t>(bytes.size()) != ns * per_slice * 2)
        fail(ErrorCode::InconsistentGeometry, who + ": voxels.i16le holds " + std::to_string(bytes.size()) +
                                                  " bytes, expected " + std::to_string(ns * per_slice * 2));

    const double step = fx.slice_spacing_mm.value_or(fx.meta.slice_thickness_mm);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    fx.slices.resize(static_cast<std::size_t>(ns));
    for (std::int64_t z = 0; z < ns; ++z) {
        RawSlice& s = fx.slices[static_cast<std::size_t>(z)];
        s.position_mm = positions.empty() ? static_cast<double>(z) * step : positions[static_cast<std::size_t>(z)];
        s.rows = nr;
        s.cols = nc;
        s.row_mm = row_mm;
        s.col_mm = col_mm;
        s.slope = slope;
        s.intercept = intercept;
        s.raw.resize(static_cast<std::size_t>(per_slice));
        for (std::int64_t i = 0; i < per_slice; ++i) {
            const auto off = static_cast<std::size_t>((z * per_slice + i) * 2);
            auto u = static_cast<std::uint16_t>(p[off] | (p[off + 1] << 8));
            s.raw[static_cast<std::size_t>(i)] = static_cast<std::int16_t>(u);
        }
    }
    return fx;
}

CtVolume load_fixture_volume(const fs::path& series_dir) {
    auto fx = read_fixture(series_dir);
    return load_volume(fx.meta, fx.slices, fx.slice_spacing_mm);
}

void write_fixture(const CtVolume& volume, const fs::path& series_dir) {
    Json j = to_json(volume.meta);
    j["n_slices"] = volume.dims.slices;
    j["n_rows"] = volume.dims.rows;
    j["n_cols"] = volume.dims.cols;
    j["pixel_spacing_mm"] = {volume.row_mm, volume.col_mm};
    j["slice_spacing_mm"] = volume.slice_spacing_mm;
    j["rescale_slope"] = 1.0;
    j["rescale_intercept"] = 0.0;
    write_file(series_dir / "manifest", j.dump(2) + "\n");

    std::string bytes(volume.voxels.size() * 2, '\0');
    for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
        auto u = static_cast<std::uint16_t>(volume.voxels[i]);
        bytes[2 * i] = static_cast<char>(u & 0xff);
        bytes[2 * i + 1] = static_cast<char>(u >> 8);
    }
    write_file(series_dir / "voxels.i16le", bytes);
}

}  // namespace cac::ingest
