#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agatston.hpp"
#include "png.hpp"
#include "util.hpp"

namespace cac::review {

using agatston::CacBin;

enum class Verdict { Correct, Uncertain, Incorrect };
std::string_view verdict_name(Verdict v);
Verdict parse_verdict(std::string_view s);

/// A scored, mask-positive study eligible for review.
struct ReviewCandidate {
    std::string study_uid;
    std::int64_t ai_score = 0;
    std::vector<std::int64_t> positive_slices;
};

struct ReviewFilter {
    std::set<CacBin> bins;
    std::optional<std::pair<std::int64_t, std::int64_t>> range;  // inclusive

    bool matches(std::int64_t rounded) const;
    Json to_json() const;
    static ReviewFilter from_json(const Json& j);
};

struct ReviewItem {
    std::string item_id;
    std::string study_uid;
    std::vector<std::int64_t> positive_slice_indices;
    std::int64_t ai_score = 0;
    CacBin bin = CacBin::Zero;
    std::optional<std::string> assigned_reviewer;
    std::optional<Verdict> verdict;
    std::optional<std::int64_t> verdict_time;
};

Json to_json(const ReviewItem& item);

/// Seeded sample without replacement of mask-positive candidates matching
/// the filter, in randomized order. Throws SampleTooLarge.
std::vector<ReviewItem> sample_for_review(std::span<const ReviewCandidate> candidates, const ReviewFilter& filter,
                                          std::size_t n, std::uint64_t seed);

struct ReviewSummary {
    std::int64_t n_reviewed = 0;
    std::int64_t n_correct = 0;
    std::int64_t n_uncertain = 0;
    std::int64_t n_incorrect = 0;
    std::optional<double> proportion_correct;
};

Json to_json(const ReviewSummary& s);

struct Window {
    double center = 90.0;
    double width = 750.0;
};

/// Linear window to [0, 255]; masked pixels blended toward red at 0.4 when
/// `overlay` is set.
png::RgbImage render_slice(const ingest::CtVolume& volume, const seg::CalciumMask& mask, std::int64_t slice_index,
                           Window window, bool overlay);

std::uint8_t window_gray(int hu, Window window);

using StudyLoader = std::function<std::pair<ingest::CtVolume, seg::CalciumMask>(const std::string& study_uid)>;

/// Queue state lives under `state_dir`: one JSON file per queue plus
/// append-only assignment and verdict logs, replayed on construction.
class ReviewService {
public:
    ReviewService(std::filesystem::path state_dir, std::vector<ReviewCandidate> candidates, StudyLoader loader);

    /// Returns the queue id. Re-posting identical parameters returns the
    /// existing queue.
    std::string create_queue(const ReviewFilter& filter, std::size_t n, std::uint64_t seed);

    /// The reviewer's outstanding item if any, otherwise the first free one.
    ReviewItem next_item(const std::string& queue_id, const std::string& reviewer_id);

    void post_verdict(const std::string& item_id, const std::string& reviewer_id, Verdict verdict);
    /// Appends a correction for an item this reviewer already verdicted.
    void post_correction(const std::string& item_id, const std::string& reviewer_id, Verdict verdict);

    ReviewSummary summary(const std::string& queue_id) const;
    std::vector<ReviewItem> items(const std::string& queue_id) const;
    std::vector<std::string> queue_ids() const;

    png::RgbImage render(const std::string& study_uid, std::int64_t slice_index, Window window, bool overlay);

    const std::filesystem::path& state_dir() const { return dir_; }

private:
    struct Queue {
        std::string id;
        std::vector<ReviewItem> items;
    };

    ReviewItem& item_ref(const std::string& item_id);
    void load_state();
    void write_verdict(const std::string& item_id, const std::string& reviewer_id, Verdict verdict,
                       bool correction);

    std::filesystem::path dir_;
    std::vector<ReviewCandidate> candidates_;
    StudyLoader loader_;

    mutable std::shared_mutex mu_;
    std::map<std::string, Queue> queues_;
    std::map<std::string, std::pair<std::string, std::size_t>> item_index_;  // item -> (queue, position)

    std::mutex cache_mu_;
    std::map<std::string, std::shared_ptr<const std::pair<ingest::CtVolume, seg::CalciumMask>>> cache_;
};

/// Rebuilds a summary purely from a verdict log file.
ReviewSummary replay_summary(const std::filesystem::path& verdict_log, const std::string& queue_id);

}  // namespace cac::review
