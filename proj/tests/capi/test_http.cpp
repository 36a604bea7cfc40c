#include <doctest.h>

#include <cac/cac.h>
#include <httplib.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "capi_fixture.hpp"

using namespace capi_fixture;

namespace {

struct Server {
    cac_review_server* handle = nullptr;
    int port = 0;

    explicit Server(const fs::path& store) {
        REQUIRE(cac_review_server_open(store.c_str(), &handle) == CAC_OK);
        REQUIRE(cac_review_server_start(handle, "127.0.0.1", 0, &port) == CAC_OK);
    }
    ~Server() {
        cac_review_server_stop(handle);
        cac_review_server_free(handle);
    }
};

fs::path scored_store(const TempDir& tmp, int n_high, int n_low) {
    const auto cfg_path = write_review_workspace(tmp / "ws", n_high, n_low);
    const auto cfg = Json::parse(read_text(cfg_path)).dump();
    const auto store = tmp / "store";
    std::vector<char> buf(1 << 16);
    size_t needed = 0;
    REQUIRE(cac_run_stage("run", store.c_str(), cfg.c_str(), (tmp / "ws").c_str(), 7, "{}", buf.data(), buf.size(),
                          &needed, nullptr) == CAC_OK);
    return store;
}

}  // namespace

TEST_CASE("scripted review of 531 high-score studies") {
    TempDir tmp;
    const auto store = scored_store(tmp, 560, 40);
    Server srv(store);
    httplib::Client admin("127.0.0.1", srv.port);

    auto too_many = admin.Post("/api/queue", R"({"bins":["gt400"],"n":561,"seed":11})", "application/json");
    REQUIRE(too_many);
    CHECK(too_many->status == 422);

    auto created = admin.Post("/api/queue", R"({"bins":["gt400"],"n":531,"seed":11})", "application/json");
    REQUIRE(created);
    REQUIRE(created->status == 201);
    const std::string q = Json::parse(created->body)["queue_id"];
    auto again = admin.Post("/api/queue", R"({"bins":["gt400"],"n":531,"seed":11})", "application/json");
    CHECK(Json::parse(again->body)["queue_id"] == q);

    std::atomic<int> non_correct{0};
    std::atomic<int> outside_slices{0}, bad_png{0}, errors{0};
    std::mutex mu;
    std::set<std::string> seen;
    std::vector<std::thread> reviewers;
    for (int r = 0; r < 4; ++r)
        reviewers.emplace_back([&, r] {
            httplib::Client cli("127.0.0.1", srv.port);
            const std::string who = "cardiologist" + std::to_string(r);
            while (true) {
                auto next = cli.Get("/api/queue/" + q + "/next?reviewer=" + who);
                if (!next || next->status == 409) break;
                if (next->status != 200) {
                    ++errors;
                    break;
                }
                auto item = Json::parse(next->body);
                const auto slices = item["positive_slice_indices"].get<std::vector<int64_t>>();
                if (slices.empty() || item["ai_score"].get<int64_t>() <= 400) ++outside_slices;
                for (auto idx : slices) {
                    auto png = cli.Get("/api/slice/" + item["study_uid"].get<std::string>() + "/" + std::to_string(idx));
                    if (!png || png->status != 200 || png->body.substr(1, 3) != "PNG") ++bad_png;
                }
                std::string verdict = "correct";
                const int k = non_correct.fetch_add(1);
                if (k < 4) verdict = k == 0 ? "incorrect" : "uncertain";
                else non_correct.fetch_sub(1);
                Json body{{"item_id", item["item_id"]}, {"reviewer_id", who}, {"verdict", verdict}};
                auto posted = cli.Post("/api/verdict", body.dump(), "application/json");
                if (!posted || posted->status != 200) ++errors;
                std::lock_guard lock(mu);
                seen.insert(item["item_id"].get<std::string>());
            }
        });
    for (auto& t : reviewers) t.join();

    CHECK(errors == 0);
    CHECK(outside_slices == 0);
    CHECK(bad_png == 0);
    CHECK(seen.size() == 531);

    auto sum = admin.Get("/api/summary/" + q);
    REQUIRE(sum);
    auto s = Json::parse(sum->body);
    CHECK(s["n_reviewed"] == 531);
    CHECK(s["n_correct"] == 527);
    CHECK(s["n_correct"].get<int>() + s["n_uncertain"].get<int>() + s["n_incorrect"].get<int>() == 531);
    CHECK(std::round(s["proportion_correct"].get<double>() * 1000) / 10 == 99.2);

    auto items = Json::parse(admin.Get("/api/queue/" + q + "/items")->body);
    REQUIRE(items.size() == 531);
    const auto first = items[0];
    Json dup{{"item_id", first["item_id"]}, {"reviewer_id", first["assigned_reviewer"]}, {"verdict", "correct"}};
    CHECK(admin.Post("/api/verdict", dup.dump(), "application/json")->status == 409);
    Json correction = dup;
    correction["correction"] = true;
    CHECK(admin.Post("/api/verdict", correction.dump(), "application/json")->status == 200);
}

TEST_CASE("review API error mapping") {
    TempDir tmp;
    const auto store = scored_store(tmp, 3, 3);
    Server srv(store);
    httplib::Client cli("127.0.0.1", srv.port);

    auto created = cli.Post("/api/queue", R"({"range":[1,100],"n":3,"seed":1})", "application/json");
    REQUIRE(created->status == 201);
    const std::string q = Json::parse(created->body)["queue_id"];

    CHECK(cli.Get("/api/queue/" + q + "/next")->status == 400);
    CHECK(cli.Get("/api/queue/nope/next?reviewer=a")->status == 404);
    auto item = Json::parse(cli.Get("/api/queue/" + q + "/next?reviewer=a")->body);
    CHECK(item["ai_score"].get<int>() <= 100);
    const std::string study = item["study_uid"];

    CHECK(cli.Get("/api/slice/" + study + "/7")->status == 404);
    CHECK(cli.Get("/api/slice/" + study + "/0?ww=0")->status == 400);
    auto plain = cli.Get("/api/slice/" + study + "/0?overlay=0&wc=40&ww=400");
    auto over = cli.Get("/api/slice/" + study + "/0?wc=40&ww=400");
    REQUIRE(plain->status == 200);
    CHECK(plain->get_header_value("Content-Type") == "image/png");
    CHECK(plain->body != over->body);

    Json v{{"item_id", item["item_id"]}, {"reviewer_id", "b"}, {"verdict", "correct"}};
    CHECK(cli.Post("/api/verdict", v.dump(), "application/json")->status == 403);
    v["verdict"] = "maybe";
    v["reviewer_id"] = "a";
    CHECK(cli.Post("/api/verdict", v.dump(), "application/json")->status == 400);
    CHECK(cli.Post("/api/verdict", "{oops", "application/json")->status == 400);
    v["item_id"] = "missing";
    v["verdict"] = "correct";
    CHECK(cli.Post("/api/verdict", v.dump(), "application/json")->status == 404);

    auto empty = Json::parse(cli.Get("/api/summary/" + q)->body);
    CHECK(empty["n_reviewed"] == 0);
    CHECK(empty["proportion_correct"].is_null());
}
