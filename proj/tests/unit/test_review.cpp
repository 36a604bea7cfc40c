#include <doctest.h>

#include <mutex>
#include <set>
#include <thread>

#include "png.hpp"
#include "review.hpp"
#include "segmentation_io.hpp"
#include "test_support.hpp"

using namespace cac;
using namespace cac::review;
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

std::vector<ReviewCandidate> candidates(int n) {
    std::vector<ReviewCandidate> out;
    for (int i = 0; i < n; ++i) {
        ReviewCandidate c;
        c.study_uid = "S" + std::to_string(1000 + i);
        c.ai_score = (i * 37) % 1200;
        if (i % 9 != 0) c.positive_slices = {i % 4, i % 4 + 1};
        out.push_back(c);
    }
    return out;
}

std::pair<ingest::CtVolume, seg::CalciumMask> study(const std::string& uid) {
    auto v = testing::make_volume({4, 6, 8}, 0.5, 0.5, 3.0, 0, uid);
    v.voxels[static_cast<std::size_t>(v.index(1, 2, 3))] = 500;
    std::vector<std::uint8_t> bits(v.voxels.size(), 0);
    bits[static_cast<std::size_t>(v.index(1, 2, 3))] = 1;
    return {v, seg::mask_from_bitmap(bits, v.dims, v.meta.study_uid, v.meta.series_uid)};
}

ReviewFilter bins(std::set<agatston::CacBin> b) {
    ReviewFilter f;
    f.bins = std::move(b);
    return f;
}

}  // namespace

TEST_CASE("review sampling") {
    auto c = candidates(200);
    auto f = bins({agatston::CacBin::Gt400});
    auto a = sample_for_review(c, f, 20, 4);
    auto b = sample_for_review(c, f, 20, 4);
    REQUIRE(a.size() == 20);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].study_uid == b[i].study_uid);
        CHECK(a[i].ai_score > 400);
        CHECK_FALSE(a[i].positive_slice_indices.empty());
        ids.insert(a[i].study_uid);
    }
    CHECK(ids.size() == 20);

    ReviewFilter r = ReviewFilter::from_json(Json::parse(R"({"range":[133,400]})"));
    for (const auto& it : sample_for_review(c, r, 30, 1)) {
        CHECK(it.ai_score >= 133);
        CHECK(it.ai_score <= 400);
    }
    CHECK(code_of([&] { sample_for_review(c, r, 10000, 1); }) == ErrorCode::SampleTooLarge);
    CHECK(code_of([] { ReviewFilter::from_json(Json::object()); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { ReviewFilter::from_json(Json::parse(R"({"range":[5,1]})")); }) == ErrorCode::InvalidArgument);
    CHECK(ReviewFilter::from_json(f.to_json()).bins == f.bins);
}

TEST_CASE("queue assignment and verdicts") {
    TempDir tmp;
    ReviewService svc(tmp / "state", candidates(120), study);
    auto q = svc.create_queue(bins({agatston::CacBin::Gt400}), 8, 2);
    CHECK(svc.create_queue(bins({agatston::CacBin::Gt400}), 8, 2) == q);
    CHECK(svc.create_queue(bins({agatston::CacBin::Gt400}), 8, 3) != q);

    auto first = svc.next_item(q, "alice");
    CHECK(svc.next_item(q, "alice").item_id == first.item_id);
    auto second = svc.next_item(q, "bob");
    CHECK(second.item_id != first.item_id);

    CHECK(code_of([&] { svc.post_verdict(first.item_id, "bob", Verdict::Correct); }) == ErrorCode::NotAssigned);
    CHECK(code_of([&] { svc.post_verdict("nope", "alice", Verdict::Correct); }) == ErrorCode::UnknownItem);
    svc.post_verdict(first.item_id, "alice", Verdict::Correct);
    CHECK(code_of([&] { svc.post_verdict(first.item_id, "alice", Verdict::Incorrect); }) ==
          ErrorCode::AlreadyVerdicted);
    svc.post_verdict(second.item_id, "bob", Verdict::Uncertain);

    auto s = svc.summary(q);
    CHECK(s.n_reviewed == 2);
    CHECK(s.n_correct == 1);
    CHECK(s.n_uncertain == 1);
    CHECK(*s.proportion_correct == 0.5);

    svc.post_correction(second.item_id, "bob", Verdict::Correct);
    CHECK(svc.summary(q).n_correct == 2);
    CHECK(code_of([&] { svc.post_correction(second.item_id, "alice", Verdict::Correct); }) ==
          ErrorCode::NotAssigned);

    auto replayed = replay_summary(tmp / "state/verdicts.jsonl", q);
    CHECK(replayed.n_correct == 2);
    CHECK(replayed.n_reviewed == 2);

    ReviewService reopened(tmp / "state", candidates(120), study);
    CHECK(reopened.summary(q).n_correct == 2);
    CHECK(reopened.next_item(q, "alice").item_id != first.item_id);

    for (int i = 0; i < 10; ++i) {
        try {
            auto it = reopened.next_item(q, "r" + std::to_string(i));
            reopened.post_verdict(it.item_id, "r" + std::to_string(i), Verdict::Correct);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::QueueEmpty);
        }
    }
    // alice still holds one unverdicted item
    CHECK(reopened.summary(q).n_reviewed == 7);
}

TEST_CASE("concurrent reviewers get distinct items") {
    TempDir tmp;
    ReviewService svc(tmp / "state", candidates(300), study);
    auto q = svc.create_queue(bins({agatston::CacBin::B1_100, agatston::CacBin::B101_400, agatston::CacBin::Gt400}),
                              120, 9);
    std::mutex mu;
    std::set<std::string> seen;
    int dupes = 0, empty = 0;
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&, t] {
            for (int k = 0; k < 20; ++k) {
                const std::string who = "t" + std::to_string(t) + "_" + std::to_string(k);
                try {
                    auto it = svc.next_item(q, who);
                    svc.post_verdict(it.item_id, who, Verdict::Correct);
                    std::lock_guard lock(mu);
                    if (!seen.insert(it.item_id).second) ++dupes;
                } catch (const Error& e) {
                    std::lock_guard lock(mu);
                    if (e.code() == ErrorCode::QueueEmpty) ++empty;
                }
            }
        });
    for (auto& th : threads) th.join();
    CHECK(dupes == 0);
    CHECK(seen.size() == 120);
    CHECK(empty == 40);
    CHECK(svc.summary(q).n_correct == 120);
    CHECK(replay_summary(tmp / "state/verdicts.jsonl", q).n_correct == 120);
}

TEST_CASE("slice rendering") {
    Window w;
    CHECK(window_gray(-1000, w) == 0);
    CHECK(window_gray(2000, w) == 255);
    CHECK(window_gray(90, w) == 128);
    CHECK(window_gray(static_cast<int>(90 - 375), w) == 0);

    auto [v, m] = study("X");
    auto plain = render_slice(v, m, 1, w, false);
    CHECK(plain.width == 8);
    CHECK(plain.height == 6);
    const auto* p = plain.at(2, 3);
    CHECK(p[0] == p[1]);
    auto over = render_slice(v, m, 1, w, true);
    const auto* o = over.at(2, 3);
    CHECK(o[0] > o[1]);
    CHECK(o[1] == o[2]);
    CHECK(over.at(0, 0)[0] == plain.at(0, 0)[0]);
    CHECK(code_of([&] { render_slice(v, m, 4, w, false); }) == ErrorCode::SliceOutOfRange);
    CHECK(code_of([&] { render_slice(v, m, -1, w, false); }) == ErrorCode::SliceOutOfRange);

    auto png_bytes = png::encode(over);
    CHECK(png_bytes.substr(1, 3) == "PNG");
    auto back = png::decode(png_bytes);
    CHECK(back.width == over.width);
    CHECK(back.pixels == over.pixels);

    TempDir tmp;
    ReviewService svc(tmp / "state", candidates(10), study);
    CHECK(svc.render("S1001", 1, w, true).pixels == render_slice(study("S1001").first, study("S1001").second, 1, w, true).pixels);
}
