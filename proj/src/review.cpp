#include "review.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "error.hpp"

namespace cac::review {

namespace fs = std::filesystem;

namespace {

std::int64_t now_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

std::string_view verdict_name(Verdict v) {
    switch (v) {
    case Verdict::Correct: return "correct";
    case Verdict::Uncertain: return "uncertain";
    case Verdict::Incorrect: return "incorrect";
    }
    return "incorrect";
}

Verdict parse_verdict(std::string_view s) {
    if (s == "correct") return Verdict::Correct;
    if (s == "uncertain") return Verdict::Uncertain;
    if (s == "incorrect") return Verdict::Incorrect;
    fail(ErrorCode::InvalidArgument, "unknown verdict '" + std::string(s) + "'");
}

bool ReviewFilter::matches(std::int64_t rounded) const {
    if (range) return rounded >= range->first && rounded <= range->second;
    return bins.count(agatston::bin_score(rounded)) > 0;
}

Json ReviewFilter::to_json() const {
    if (range) return Json{{"range", {range->first, range->second}}};
    Json b = Json::array();
    for (auto bin : bins) b.push_back(std::string(agatston::bin_name(bin)));
    return Json{{"bins", b}};
}

ReviewFilter ReviewFilter::from_json(const Json& j) {
    ReviewFilter f;
    try {
        if (auto it = j.find("range"); it != j.end() && !it->is_null()) {
            if (!it->is_array() || it->size() != 2) fail(ErrorCode::InvalidArgument, "range must be [lo, hi]");
            f.range = std::pair((*it)[0].get<std::int64_t>(), (*it)[1].get<std::int64_t>());
            if (f.range->first > f.range->second) fail(ErrorCode::InvalidArgument, "range lo > hi");
        } else if (auto bt = j.find("bins"); bt != j.end()) {
            for (const auto& b : *bt) f.bins.insert(agatston::parse_bin(b.get<std::string>()));
        }
    } catch (const Json::exception& e) {
        fail(ErrorCode::Parse, std::string("review filter: ") + e.what());
    }
    if (!f.range && f.bins.empty()) fail(ErrorCode::InvalidArgument, "review filter needs bins or range");
    return f;
}

Json to_json(const ReviewItem& item) {
    Json j{{"item_id", item.item_id},
           {"study_uid", item.study_uid},
           {"positive_slice_indices", item.positive_slice_indices},
           {"ai_score", item.ai_score},
           {"bin", std::string(agatston::bin_name(item.bin))}};
    j["assigned_reviewer"] = item.assigned_reviewer ? Json(*item.assigned_reviewer) : Json(nullptr);
    j["verdict"] = item.verdict ? Json(std::string(verdict_name(*item.verdict))) : Json(nullptr);
    j["verdict_time"] = item.verdict_time ? Json(format_timestamp(*item.verdict_time)) : Json(nullptr);
    return j;
}

Json to_json(const ReviewSummary& s) {
    return Json{{"n_reviewed", s.n_reviewed},
                {"n_correct", s.n_correct},
                {"n_uncertain", s.n_uncertain},
                {"n_incorrect", s.n_incorrect},
                {"proportion_correct", s.proportion_correct ? Json(*s.proportion_correct) : Json(nullptr)}};
}

std::vector<ReviewItem> sample_for_review(std::span<const ReviewCandidate> candidates, const ReviewFilter& filter,
                                          std::size_t n, std::uint64_t seed) {
    std::vector<const ReviewCandidate*> pool;
    for (const auto& c : candidates)
        if (!c.positive_slices.empty() && filter.matches(c.ai_score)) pool.push_back(&c);
    if (n > pool.size())
        fail(ErrorCode::SampleTooLarge,
             "requested " + std::to_string(n) + " items from a pool of " + std::to_string(pool.size()));
    std::sort(pool.begin(), pool.end(),
              [](const ReviewCandidate* a, const ReviewCandidate* b) { return a->study_uid < b->study_uid; });
    Rng rng(seed);
    rng.shuffle(pool);
    std::vector<ReviewItem> items;
    items.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ReviewItem it;
        it.study_uid = pool[i]->study_uid;
        it.positive_slice_indices = pool[i]->positive_slices;
        it.ai_score = pool[i]->ai_score;
        it.bin = agatston::bin_score(it.ai_score);
        items.push_back(std::move(it));
    }
    return items;
}

std::uint8_t window_gray(int hu, Window window) {
    const double lo = window.center - window.width / 2.0;
    const double v = std::round((hu - lo) / window.width * 255.0);
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

png::RgbImage render_slice(const ingest::CtVolume& volume, const seg::CalciumMask& mask, std::int64_t slice_index,
                           Window window, bool overlay) {
    const auto& d = volume.dims;
    if (slice_index < 0 || slice_index >= d.slices)
        fail(ErrorCode::SliceOutOfRange, "slice " + std::to_string(slice_index) + " outside [0, " +
                                             std::to_string(d.slices) + ")");
    if (!(window.width > 0.0)) fail(ErrorCode::InvalidArgument, "window width must be positive");
    png::RgbImage img{d.cols, d.rows, std::vector<std::uint8_t>(static_cast<std::size_t>(d.rows * d.cols * 3))};
    std::vector<std::uint8_t> slice_mask;
    if (overlay) {
        slice_mask.assign(static_cast<std::size_t>(d.rows * d.cols), 0);
        const auto base = slice_index * d.rows * d.cols;
        const auto end = base + d.rows * d.cols;
        for (const auto& r : mask.runs) {
            const auto a = std::max(r.start, base), b = std::min(r.start + r.length, end);
            for (auto i = a; i < b; ++i) slice_mask[static_cast<std::size_t>(i - base)] = 1;
        }
    }
    constexpr double alpha = 0.4;
    for (std::int64_t y = 0; y < d.rows; ++y)
        for (std::int64_t x = 0; x < d.cols; ++x) {
            const auto g = window_gray(volume.at(slice_index, y, x), window);
            auto* px = img.at(y, x);
            px[0] = px[1] = px[2] = g;
            if (overlay && slice_mask[static_cast<std::size_t>(y * d.cols + x)]) {
                px[0] = static_cast<std::uint8_t>(std::lround((1 - alpha) * g + alpha * 255.0));
                px[1] = px[2] = static_cast<std::uint8_t>(std::lround((1 - alpha) * g));
            }
        }
    return img;
}

ReviewService::ReviewService(fs::path state_dir, std::vector<ReviewCandidate> candidates, StudyLoader loader)
    : dir_(std::move(state_dir)), candidates_(std::move(candidates)), loader_(std::move(loader)) {
    fs::create_directories(dir_ / "queues");
    load_state();
}

void ReviewService::load_state() {
    for (const auto& entry : fs::directory_iterator(dir_ / "queues")) {
        if (entry.path().extension() != ".json") continue;
        const Json j = Json::parse(read_file(entry.path()));
        Queue q;
        q.id = j.at("queue_id").get<std::string>();
        for (const auto& ij : j.at("items")) {
            ReviewItem it;
            it.item_id = ij.at("item_id").get<std::string>();
            it.study_uid = ij.at("study_uid").get<std::string>();
            it.positive_slice_indices = ij.at("positive_slice_indices").get<std::vector<std::int64_t>>();
            it.ai_score = ij.at("ai_score").get<std::int64_t>();
            it.bin = agatston::bin_score(it.ai_score);
            item_index_[it.item_id] = {q.id, q.items.size()};
            q.items.push_back(std::move(it));
        }
        queues_[q.id] = std::move(q);
    }
    const auto assignments = dir_ / "assignments.jsonl";
    if (fs::exists(assignments))
        for (const auto& a : read_jsonl(assignments)) {
            auto& it = item_ref(a.at("item_id").get<std::string>());
            it.assigned_reviewer = a.at("reviewer_id").get<std::string>();
        }
    const auto verdicts = dir_ / "verdicts.jsonl";
    if (fs::exists(verdicts))
        for (const auto& v : read_jsonl(verdicts)) {
            auto& it = item_ref(v.at("item_id").get<std::string>());
            it.verdict = parse_verdict(v.at("verdict").get<std::string>());
            it.verdict_time = parse_timestamp(v.at("time").get<std::string>());
        }
}

ReviewItem& ReviewService::item_ref(const std::string& item_id) {
    auto it = item_index_.find(item_id);
    if (it == item_index_.end()) fail(ErrorCode::UnknownItem, "unknown item " + item_id);
    return queues_.at(it->second.first).items[it->second.second];
}

std::string ReviewService::create_queue(const ReviewFilter& filter, std::size_t n, std::uint64_t seed) {
    const Json params{{"filter", filter.to_json()}, {"n", n}, {"seed", seed}};
    const std::string id = "q" + hex64(fnv1a64(params.dump())).substr(0, 12);
    {
        std::shared_lock lock(mu_);
        if (queues_.count(id)) return id;
    }
    auto items = sample_for_review(candidates_, filter, n, seed);
    std::unique_lock lock(mu_);
    if (queues_.count(id)) return id;
    Queue q{id, std::move(items)};
    Json j{{"queue_id", id}, {"params", params}, {"items", Json::array()}};
    for (std::size_t i = 0; i < q.items.size(); ++i) {
        auto& it = q.items[i];
        it.item_id = id + "-" + std::to_string(i);
        item_index_[it.item_id] = {id, i};
        j["items"].push_back(Json{{"item_id", it.item_id},
                                  {"study_uid", it.study_uid},
                                  {"positive_slice_indices", it.positive_slice_indices},
                                  {"ai_score", it.ai_score}});
    }
    write_file(dir_ / "queues" / (id + ".json"), j.dump(1) + "\n");
    queues_[id] = std::move(q);
    return id;
}

ReviewItem ReviewService::next_item(const std::string& queue_id, const std::string& reviewer_id) {
    if (reviewer_id.empty()) fail(ErrorCode::InvalidArgument, "reviewer id required");
    std::unique_lock lock(mu_);
    auto qit = queues_.find(queue_id);
    if (qit == queues_.end()) fail(ErrorCode::UnknownItem, "unknown queue " + queue_id);
    auto& items = qit->second.items;
    for (auto& it : items)
        if (!it.verdict && it.assigned_reviewer == reviewer_id) return it;
    for (auto& it : items) {
        if (it.verdict || it.assigned_reviewer) continue;
        it.assigned_reviewer = reviewer_id;
        append_line(dir_ / "assignments.jsonl",
                    Json{{"queue_id", queue_id},
                         {"item_id", it.item_id},
                         {"reviewer_id", reviewer_id},
                         {"time", format_timestamp(now_seconds())}}
                        .dump());
        return it;
    }
    fail(ErrorCode::QueueEmpty, "no unassigned items left in " + queue_id);
}

void ReviewService::write_verdict(const std::string& item_id, const std::string& reviewer_id, Verdict verdict,
                                  bool correction) {
    auto& it = item_ref(item_id);
    const auto t = now_seconds();
    append_line(dir_ / "verdicts.jsonl", Json{{"queue_id", item_index_.at(item_id).first},
                                              {"item_id", item_id},
                                              {"reviewer_id", reviewer_id},
                                              {"verdict", std::string(verdict_name(verdict))},
                                              {"correction", correction},
                                              {"time", format_timestamp(t)}}
                                             .dump());
    it.verdict = verdict;
    it.verdict_time = t;
}

void ReviewService::post_verdict(const std::string& item_id, const std::string& reviewer_id, Verdict verdict) {
    std::unique_lock lock(mu_);
    auto& it = item_ref(item_id);
    if (it.verdict) fail(ErrorCode::AlreadyVerdicted, "item " + item_id + " already has a verdict");
    if (it.assigned_reviewer != reviewer_id)
        fail(ErrorCode::NotAssigned, "item " + item_id + " is not assigned to " + reviewer_id);
    write_verdict(item_id, reviewer_id, verdict, false);
}

void ReviewService::post_correction(const std::string& item_id, const std::string& reviewer_id, Verdict verdict) {
    std::unique_lock lock(mu_);
    auto& it = item_ref(item_id);
    if (it.assigned_reviewer != reviewer_id)
        fail(ErrorCode::NotAssigned, "item " + item_id + " is not assigned to " + reviewer_id);
    if (!it.verdict) fail(ErrorCode::InvalidArgument, "item " + item_id + " has no verdict to correct");
    write_verdict(item_id, reviewer_id, verdict, true);
}

namespace {

void tally(ReviewSummary& s, Verdict v) {
    ++s.n_reviewed;
    if (v == Verdict::Correct) ++s.n_correct;
    else if (v == Verdict::Uncertain) ++s.n_uncertain;
    else ++s.n_incorrect;
}

void finish(ReviewSummary& s) {
    if (s.n_reviewed > 0) s.proportion_correct = static_cast<double>(s.n_correct) / static_cast<double>(s.n_reviewed);
}

}  // namespace

ReviewSummary ReviewService::summary(const std::string& queue_id) const {
    std::shared_lock lock(mu_);
    auto qit = queues_.find(queue_id);
    if (qit == queues_.end()) fail(ErrorCode::UnknownItem, "unknown queue " + queue_id);
    ReviewSummary s;
    for (const auto& it : qit->second.items)
        if (it.verdict) tally(s, *it.verdict);
    finish(s);
    return s;
}

std::vector<ReviewItem> ReviewService::items(const std::string& queue_id) const {
    std::shared_lock lock(mu_);
    auto qit = queues_.find(queue_id);
    if (qit == queues_.end()) fail(ErrorCode::UnknownItem, "unknown queue " + queue_id);
    return qit->second.items;
}

std::vector<std::string> ReviewService::queue_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, q] : queues_) ids.push_back(id);
    return ids;
}

png::RgbImage ReviewService::render(const std::string& study_uid, std::int64_t slice_index, Window window,
                                    bool overlay) {
    std::shared_ptr<const std::pair<ingest::CtVolume, seg::CalciumMask>> study;
    {
        std::lock_guard lock(cache_mu_);
        if (auto it = cache_.find(study_uid); it != cache_.end()) study = it->second;
    }
    if (!study) {
        if (std::none_of(candidates_.begin(), candidates_.end(),
                         [&](const ReviewCandidate& c) { return c.study_uid == study_uid; }))
            fail(ErrorCode::UnknownItem, "unknown study " + study_uid);
        study = std::make_shared<const std::pair<ingest::CtVolume, seg::CalciumMask>>(loader_(study_uid));
        std::lock_guard lock(cache_mu_);
        if (cache_.size() > 64) cache_.clear();
        cache_[study_uid] = study;
    }
    return render_slice(study->first, study->second, slice_index, window, overlay);
}

ReviewSummary replay_summary(const fs::path& verdict_log, const std::string& queue_id) {
    std::map<std::string, Verdict> last;
    if (fs::exists(verdict_log))
        for (const auto& v : read_jsonl(verdict_log))
            if (v.at("queue_id").get<std::string>() == queue_id)
                last[v.at("item_id").get<std::string>()] = parse_verdict(v.at("verdict").get<std::string>());
    ReviewSummary s;
    for (const auto& [id, v] : last) tally(s, v);
    finish(s);
    return s;
}

}  // namespace cac::review
