#include <doctest.h>

#include "agatston.hpp"
#include "segmentation_io.hpp"
#include "test_support.hpp"

using namespace cac;
using namespace cac::agatston;

namespace {

struct Scene {
    ingest::CtVolume v;
    std::vector<std::uint8_t> bits;

    Scene(ingest::Dims d, double mm) : v(testing::make_volume(d, mm, mm, 3.0, -50)), bits(v.voxels.size(), 0) {}
    void put(std::int64_t z, std::int64_t y, std::int64_t x, int hu) {
        auto i = static_cast<std::size_t>(v.index(z, y, x));
        v.voxels[i] = static_cast<std::int16_t>(hu);
        bits[i] = 1;
    }
    seg::CalciumMask mask() const { return seg::mask_from_bitmap(bits, v.dims, v.meta.study_uid, v.meta.series_uid); }
    ScanScore score(ScoringConfig c = {}) const { return score_scan(v, mask(), c); }
};

ScoringConfig no_min_area() {
    ScoringConfig c;
    c.min_slice_area_mm2 = 0.0;
    return c;
}

}  // namespace

TEST_CASE("density weights") {
    CHECK(density_weight(129) == 0);
    CHECK(density_weight(130) == 1);
    CHECK(density_weight(199) == 1);
    CHECK(density_weight(200) == 2);
    CHECK(density_weight(299) == 2);
    CHECK(density_weight(300) == 3);
    CHECK(density_weight(399) == 3);
    CHECK(density_weight(400) == 4);
    CHECK(density_weight(2000) == 4);
}

TEST_CASE("single-lesion scores") {
    SUBCASE("five voxels at 250 HU") {
        Scene s({1, 8, 8}, 1.0);
        for (int x = 1; x <= 5; ++x) s.put(0, 3, x, 250);
        auto r = s.score();
        CHECK(r.total == 10.0);
        CHECK(r.rounded == 10);
        CHECK(r.bin == CacBin::B1_100);
        REQUIRE(r.lesions.size() == 1);
        CHECK(r.lesions[0].per_slice[0].peak_hu == 250);
    }
    SUBCASE("peak sets the weight") {
        Scene s({1, 8, 8}, 1.0);
        for (int x = 1; x <= 5; ++x) s.put(0, 3, x, x == 3 ? 405 : 150);
        CHECK(s.score().total == 20.0);
    }
    SUBCASE("sub-millimetre lesion dropped") {
        Scene s({1, 8, 8}, 0.5);
        for (int x = 1; x <= 3; ++x) s.put(0, 3, x, 600);
        auto r = s.score();
        CHECK(r.total == 0.0);
        CHECK(r.bin == CacBin::Zero);
        CHECK(s.score(no_min_area()).total == doctest::Approx(3.0));
    }
    SUBCASE("masked voxels below threshold are ignored") {
        Scene s({1, 8, 8}, 1.0);
        for (int x = 1; x <= 5; ++x) s.put(0, 3, x, 100);
        CHECK(s.score().total == 0.0);
    }
    SUBCASE("unmasked bright voxels are ignored") {
        Scene s({1, 8, 8}, 1.0);
        s.v.voxels[5] = 900;
        CHECK(s.score(no_min_area()).total == 0.0);
    }
}

TEST_CASE("lesion separation and connectivity") {
    Scene s({2, 10, 10}, 1.0);
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y) s.put(0, y, x, 210);
    for (int x = 6; x < 9; ++x) s.put(0, 8, x, 450);
    auto r = s.score();
    CHECK(r.lesions.size() == 2);
    CHECK(r.total == 4 * 2 + 3 * 4);

    Scene d({2, 6, 6}, 1.0);
    d.put(0, 1, 1, 300);
    d.put(1, 2, 2, 300);
    ScoringConfig three = no_min_area();
    CHECK(d.score(three).lesions.size() == 1);
    ScoringConfig two = three;
    two.connectivity = Connectivity::Conn8_2d;
    CHECK(d.score(two).lesions.size() == 2);
    CHECK(d.score(two).total == d.score(three).total);
}

TEST_CASE("thickness normalization") {
    Scene s({1, 8, 8}, 1.0);
    s.v.slice_thickness_mm = 1.5;
    for (int x = 1; x <= 4; ++x) s.put(0, 3, x, 250);
    ScoringConfig c;
    CHECK(s.score(c).total == 8.0);
    c.thickness_normalization = ThicknessNormalization::Ratio3mm;
    CHECK(s.score(c).total == doctest::Approx(4.0));
}

TEST_CASE("rounding, bins and thresholds") {
    CHECK(round_score(100.4) == 100);
    CHECK(round_score(100.5) == 101);
    CHECK(round_score(0.49) == 0);
    CHECK(bin_score(0) == CacBin::Zero);
    CHECK(bin_score(1) == CacBin::B1_100);
    CHECK(bin_score(100) == CacBin::B1_100);
    CHECK(bin_score(101) == CacBin::B101_400);
    CHECK(bin_score(400) == CacBin::B101_400);
    CHECK(bin_score(401) == CacBin::Gt400);
    CHECK(threshold_class(round_score(99.5), 100));
    CHECK_FALSE(threshold_class(99, 100));
    CHECK(threshold_class(400, 400));
    CHECK_THROWS_AS(threshold_class(5, 0), Error);
    CHECK_THROWS_AS(bin_score(-1), Error);
    for (auto b : {CacBin::Zero, CacBin::B1_100, CacBin::B101_400, CacBin::Gt400}) CHECK(parse_bin(bin_name(b)) == b);
}

TEST_CASE("scores agree with the flood-fill oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 60; ++trial) {
        auto v = testing::random_volume(rng, 3, 14);
        auto m = testing::random_mask(rng, v);
        auto c = no_min_area();
        CHECK(score_scan(v, m, c).total == testing::oracle_agatston(v, m));
        c.connectivity = Connectivity::Conn8_2d;
        CHECK(score_scan(v, m, c).total == testing::oracle_agatston(v, m, 130, false));
    }
}

TEST_CASE("score properties") {
    Rng rng(202);
    for (int trial = 0; trial < 40; ++trial) {
        auto v = testing::random_volume(rng, 4, 12);
        auto m = testing::random_mask(rng, v);
        const auto c = no_min_area();
        const double base = score_scan(v, m, c).total;

        auto bits = m.to_bitmap();
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (!bits[i] && rng.below(5) == 0) bits[i] = 1;
        auto grown = seg::mask_from_bitmap(bits, v.dims, m.study_uid, m.series_uid);
        CHECK(score_scan(v, grown, c).total >= base);

        const int k = 2 + static_cast<int>(rng.below(3));
        auto scaled = v;
        scaled.row_mm *= k;
        scaled.col_mm *= k;
        CHECK(score_scan(scaled, m, c).total == doctest::Approx(base * k * k).epsilon(1e-12));

        ingest::CtVolume shifted = testing::make_volume({v.dims.slices + 1, v.dims.rows + 2, v.dims.cols + 3}, v.row_mm,
                                                        v.col_mm, v.slice_thickness_mm, -50, v.meta.study_uid);
        std::vector<std::uint8_t> sbits(shifted.voxels.size(), 0);
        auto orig = m.to_bitmap();
        for (std::int64_t z = 0; z < v.dims.slices; ++z)
            for (std::int64_t y = 0; y < v.dims.rows; ++y)
                for (std::int64_t x = 0; x < v.dims.cols; ++x) {
                    auto to = static_cast<std::size_t>(shifted.index(z + 1, y + 2, x + 3));
                    auto from = static_cast<std::size_t>(v.index(z, y, x));
                    shifted.voxels[to] = v.voxels[from];
                    sbits[to] = orig[from];
                }
        auto sm = seg::mask_from_bitmap(sbits, shifted.dims, shifted.meta.study_uid, shifted.meta.series_uid);
        CHECK(score_scan(shifted, sm, c).total == base);
    }
}

TEST_CASE("score json round-trip and config fingerprint") {
    Scene s({1, 8, 8}, 1.0);
    for (int x = 1; x <= 5; ++x) s.put(0, 3, x, 250);
    auto r = s.score();
    auto back = score_from_json(to_json(r));
    CHECK(back.total == r.total);
    CHECK(back.rounded == r.rounded);
    CHECK(back.bin == r.bin);
    CHECK(back.lesions.size() == r.lesions.size());

    ScoringConfig a, b;
    CHECK(a.fingerprint() == b.fingerprint());
    b.hu_threshold = 131;
    CHECK(a.fingerprint() != b.fingerprint());
    CHECK(ScoringConfig::from_json(a.to_json()).fingerprint() == a.fingerprint());
    CHECK_THROWS_AS(ScoringConfig::from_json(Json{{"connectivity", "conn4"}}), Error);
}
