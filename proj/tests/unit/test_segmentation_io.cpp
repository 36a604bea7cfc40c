#include <doctest.h>

#include "segmentation_io.hpp"
#include "test_support.hpp"

using namespace cac;
using namespace cac::seg;
using cac::testing::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Ok;
}

CalciumMask mask_for(const CtVolume& v, std::vector<Run> runs) {
    return {v.meta.study_uid, v.meta.series_uid, v.dims, std::move(runs)};
}

}  // namespace

TEST_CASE("mask loading against a volume") {
    auto v = testing::make_volume({4, 8, 8}, 0.5, 0.5, 3.0);

    SUBCASE("empty run list is a valid empty mask") {
        auto m = validate_mask(mask_for(v, {}), v);
        CHECK(m.voxel_count() == 0);
        CHECK(m.positive_slices().empty());
    }
    SUBCASE("adjacent runs merge") {
        auto m = validate_mask(mask_for(v, {{2, 3}, {0, 2}}), v);
        REQUIRE(m.runs.size() == 1);
        CHECK(m.runs[0] == Run{0, 5});
        CHECK(m.voxel_count() == 5);
    }
    SUBCASE("dimension mismatch") {
        auto m = mask_for(v, {});
        m.dims = {4, 8, 9};
        CHECK(code_of([&] { validate_mask(m, v); }) == ErrorCode::DimsMismatch);
    }
    SUBCASE("uid mismatch") {
        auto m = mask_for(v, {});
        m.series_uid = "other";
        CHECK(code_of([&] { validate_mask(m, v); }) == ErrorCode::UidMismatch);
    }
    SUBCASE("malformed runs") {
        CHECK(code_of([&] { validate_mask(mask_for(v, {{0, 4}, {2, 3}}), v); }) == ErrorCode::MalformedRuns);
        CHECK(code_of([&] { validate_mask(mask_for(v, {{250, 10}}), v); }) == ErrorCode::MalformedRuns);
        CHECK(code_of([&] { validate_mask(mask_for(v, {{3, 0}}), v); }) == ErrorCode::MalformedRuns);
        CHECK(code_of([&] { validate_mask(mask_for(v, {{-1, 2}}), v); }) == ErrorCode::MalformedRuns);
        CHECK(code_of([&] { parse_mask("CACMASK 1 a b 1 1 1\n0\n"); }) == ErrorCode::MalformedRuns);
        CHECK(code_of([&] { parse_mask(""); }) == ErrorCode::MalformedRuns);
    }
}

TEST_CASE("mask serialization round-trips and canonicalization is idempotent") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        auto v = testing::random_volume(rng, 2, 10);
        auto m = testing::random_mask(rng, v);
        auto text = serialize_mask(m);
        auto back = parse_mask(text);
        CHECK(back == m);
        CHECK(canonicalize_runs(m.runs, v.dims.total()) == m.runs);
        auto bits = m.to_bitmap();
        CHECK(mask_from_bitmap(bits, v.dims, v.meta.study_uid, v.meta.series_uid) == m);
        std::int64_t count = 0;
        for (std::size_t i = 0; i < bits.size(); ++i) {
            count += bits[i];
            if (i % 7 == 0) CHECK(m.contains(static_cast<std::int64_t>(i)) == (bits[i] != 0));
        }
        CHECK(count == m.voxel_count());

        std::vector<Run> split;
        for (const auto& r : m.runs)
            for (std::int64_t k = 0; k < r.length; ++k) split.push_back({r.start + k, 1});
        rng.shuffle(split);
        CHECK(canonicalize_runs(split, v.dims.total()) == m.runs);
    }
}

TEST_CASE("mask file save and load") {
    TempDir tmp;
    auto v = testing::make_volume({2, 3, 3}, 0.5, 0.5, 3.0);
    auto m = mask_for(v, {{1, 2}, {9, 4}});
    save_mask(m, tmp / "m.cacmask");
    CHECK(load_mask(tmp / "m.cacmask", v) == m);
    auto other = testing::make_volume({2, 3, 3}, 0.5, 0.5, 3.0, -50, "9.9");
    CHECK(code_of([&] { load_mask(tmp / "m.cacmask", other); }) == ErrorCode::UidMismatch);
    CHECK(code_of([&] { load_mask(tmp / "none", v); }) != ErrorCode::Ok);
}

TEST_CASE("baseline threshold segmentation") {
    auto v = testing::make_volume({3, 6, 6}, 0.5, 0.5, 3.0, -1000);
    CHECK(baseline_segment(v, RoiBox::whole(v.dims)).voxel_count() == 0);

    v.voxels[static_cast<std::size_t>(v.index(1, 2, 3))] = 130;
    auto one = baseline_segment(v, RoiBox::whole(v.dims));
    CHECK(one.voxel_count() == 1);
    CHECK(one.contains(v.index(1, 2, 3)));
    CHECK(baseline_segment(v, RoiBox::whole(v.dims), 131).voxel_count() == 0);

    v.voxels[static_cast<std::size_t>(v.index(0, 0, 0))] = 500;
    CHECK(baseline_segment(v, {1, 0, 0, 3, 6, 6}).voxel_count() == 1);
    CHECK(baseline_segment(v, {0, 0, 0, 1, 1, 1}).voxel_count() == 1);
    CHECK(code_of([&] { baseline_segment(v, {0, 0, 0, 4, 6, 6}); }) == ErrorCode::RoiOutOfBounds);
    CHECK(code_of([&] { baseline_segment(v, {2, 0, 0, 1, 6, 6}); }) == ErrorCode::RoiOutOfBounds);

    auto roi = RoiBox::parse("0, 1, 2, 3, 4, 5");
    CHECK(roi.y0 == 1);
    CHECK(roi.x1 == 5);
    CHECK(code_of([&] { RoiBox::parse("1,2,3"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("baseline mask shrinks as the threshold rises") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        auto v = testing::random_volume(rng, 3, 12);
        std::int64_t prev = baseline_segment(v, RoiBox::whole(v.dims), 100).voxel_count();
        for (int thr = 130; thr <= 600; thr += 70) {
            auto m = baseline_segment(v, RoiBox::whole(v.dims), thr);
            CHECK(m.voxel_count() <= prev);
            prev = m.voxel_count();
        }
    }
}

TEST_CASE("external model runner") {
    TempDir tmp;
    auto v = testing::make_volume({2, 4, 4}, 0.5, 0.5, 3.0);
    auto expected = mask_for(v, {{3, 4}});
    save_mask(expected, tmp / "expected.cacmask");

    ExternalRunnerConfig cfg;
    cfg.scratch_dir = tmp / "scratch";
    cfg.timeout = std::chrono::seconds(20);

    SUBCASE("mask copied from a precomputed file") {
        cfg.command = "test -f {input}/manifest && cp " + (tmp / "expected.cacmask").string() + " {output}";
        CHECK(run_external_model(v, cfg) == expected);
    }
    SUBCASE("nonzero exit keeps the output") {
        cfg.command = "echo model exploded >&2; exit 3";
        try {
            run_external_model(v, cfg);
            FAIL("expected RunnerFailed");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::RunnerFailed);
            CHECK(std::string(e.what()).find("model exploded") != std::string::npos);
        }
    }
    SUBCASE("wrong dimensions") {
        auto bad = expected;
        bad.dims = {2, 4, 5};
        save_mask(bad, tmp / "bad.cacmask");
        cfg.command = "cp " + (tmp / "bad.cacmask").string() + " {output}";
        CHECK(code_of([&] { run_external_model(v, cfg); }) == ErrorCode::InvalidModelOutput);
    }
    SUBCASE("no output") {
        cfg.command = "true";
        CHECK(code_of([&] { run_external_model(v, cfg); }) == ErrorCode::InvalidModelOutput);
    }
    SUBCASE("timeout") {
        cfg.command = "sleep 30";
        cfg.timeout = std::chrono::seconds(1);
        CHECK(code_of([&] { run_external_model(v, cfg); }) == ErrorCode::RunnerFailed);
    }
}
