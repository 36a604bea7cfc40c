#include <cac/cac.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Globals {
    std::string store;
    std::optional<std::uint64_t> seed;
    std::string config;
};

std::string abs_path(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return Json::parse(ss.str());
}

// Sections a pipeline config may carry; a --config file with none of them is
// taken to be a bare scoring config.
bool looks_like_pipeline(const Json& j) {
    for (const char* k : {"ingest", "segment", "scoring", "reports", "cohort", "evaluate", "survival", "screening", "seed"})
        if (j.contains(k)) return true;
    return false;
}

struct Invocation {
    std::string stage;
    Json config = Json::object();
    Json options = Json::object();
    std::string store;
};

int report_failure(cac_status st) {
    std::cerr << "error: " << cac_status_name(st) << ": " << cac_last_error() << "\n";
    return 1;
}

int run(const Globals& g, Invocation inv) {
    Json cfg = Json::object();
    std::string base = fs::current_path().string();
    if (!g.config.empty()) {
        Json file = load_json_file(g.config);
        base = fs::absolute(g.config).parent_path().string();
        cfg = looks_like_pipeline(file) ? file : Json{{"scoring", file}};
    }
    cfg.merge_patch(inv.config);
    std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    if (g.seed) seed = *g.seed;
    const std::string store = inv.store.empty() ? g.store : inv.store;
    if (store.empty()) {
        std::cerr << "error: --store is required\n";
        return 1;
    }
    const std::string cfg_text = cfg.dump();
    const std::string opt_text = inv.options.dump();
    std::vector<char> buf(1 << 20);
    size_t needed = 0, excl = 0;
    cac_status st = cac_run_stage(inv.stage.c_str(), store.c_str(), cfg_text.c_str(), base.c_str(), seed,
                                  opt_text.c_str(), buf.data(), buf.size(), &needed, &excl);
    if (st == CAC_BUFFER_TOO_SMALL) {
        buf.resize(needed);
        // Stages are idempotent, so rerunning with a larger buffer is safe.
        st = cac_run_stage(inv.stage.c_str(), store.c_str(), cfg_text.c_str(), base.c_str(), seed, opt_text.c_str(),
                           buf.data(), buf.size(), &needed, &excl);
    }
    if (st != CAC_OK) return report_failure(st);
    std::cout << buf.data() << "\n";
    return excl > 0 ? 2 : 0;
}

void set_path(Json& j, const char* section, const char* key, const std::string& value) {
    if (!value.empty()) j[section][key] = abs_path(value);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Opportunistic coronary calcium toolkit"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--store", g.store, "Store directory")->type_name("DIR");
    auto* seed_opt = app.add_option("--seed", seed_value, "Root seed for splits, sampling and bootstrap");
    app.add_option("--config", g.config, "Pipeline configuration (JSON)")->type_name("FILE");

    Invocation inv;
    std::string s1, s2, s3, s4, s5;
    bool flag = false;
    int num = 0;
    double real = 0;
    std::int64_t window = 365;

    auto* ingest = app.add_subcommand("ingest", "Select one series per study and store its HU volume");
    ingest->add_option("--input", s1, "Study directory tree or manifest file")->required();
    ingest->add_option("--out", s2, "Store directory (alias of --store)");
    ingest->add_option("--policy", s3, "Selection policy (JSON)");
    ingest->callback([&] {
        inv.stage = "ingest";
        set_path(inv.config, "ingest", "input", s1);
        set_path(inv.config, "ingest", "policy_file", s3);
        if (!s2.empty()) inv.store = s2;
    });

    auto* segment = app.add_subcommand("segment", "Produce calcium masks");
    segment->add_option("--volume", s1, "Study uid (all ingested studies when omitted)");
    auto* baseline = segment->add_flag("--baseline", flag, "Threshold segmenter inside an ROI box");
    segment->add_option("--roi", s2, "z0,y0,x0,z1,y1,x1 (half-open)");
    int hu_threshold = 130;
    segment->add_option("--hu-threshold", hu_threshold, "Baseline HU threshold (default 130)");
    auto* runner = segment->add_option("--runner", s3, "External model command ({input} {output} placeholders)");
    segment->add_option("--mask-dir", s4, "Directory of <study>.cacmask files");
    int timeout_s = 600;
    segment->add_option("--timeout", timeout_s, "Runner timeout in seconds (default 600)");
    baseline->excludes(runner);
    segment->callback([&] {
        inv.stage = "segment";
        if (flag) {
            inv.config["segment"] = Json{{"mode", "baseline"}, {"hu_threshold", hu_threshold}};
            if (!s2.empty()) inv.config["segment"]["roi"] = s2;
        } else if (!s3.empty()) {
            inv.config["segment"] = Json{{"mode", "runner"}, {"command", s3}, {"timeout_s", timeout_s}};
        } else if (!s4.empty()) {
            inv.config["segment"] = Json{{"mode", "masks"}};
            set_path(inv.config, "segment", "mask_dir", s4);
        }
        if (!s1.empty()) inv.options["study"] = s1;
    });

    auto* score = app.add_subcommand("score", "Agatston scoring of stored volumes and masks");
    score->add_option("--volume", s1, "Study uid (all when omitted)");
    score->add_option("--mask", s2, "Mask file to attach to the study before scoring");
    score->callback([&] {
        inv.stage = "score";
        if (!s1.empty()) inv.options["study"] = s1;
        if (!s2.empty()) inv.options["mask"] = abs_path(s2);
    });

    auto* extract = app.add_subcommand("extract-reports", "Extract reference scores from report text");
    extract->add_option("--in", s1, "Report records (JSONL)")->required();
    extract->add_option("--rules", s2, "Rule pack (JSON); built-in pack when omitted");
    extract->add_option("--out", s3, "Store directory (alias of --store)");
    int audit_n = 0;
    extract->add_option("--audit", audit_n, "Write an audit worksheet of N sampled reports");
    extract->callback([&] {
        inv.stage = "extract-reports";
        set_path(inv.config, "reports", "input", s1);
        set_path(inv.config, "reports", "rules", s2);
        if (audit_n > 0) inv.config["reports"]["audit_n"] = audit_n;
        if (!s3.empty()) inv.store = s3;
    });

    auto* pair = app.add_subcommand("pair", "Nearest gated/non-gated pair per patient");
    auto* window_opt = pair->add_option("--window-days", window, "Pairing window in days (inclusive)");
    pair->add_option("--scans", s1, "Scan records (JSONL)");
    pair->callback([&] {
        inv.stage = "pair";
        if (window_opt->count()) inv.config["cohort"]["window_days"] = window;
        set_path(inv.config, "cohort", "scans", s1);
    });

    auto* split = app.add_subcommand("split", "Center-stratified tune/test split");
    auto* ratio_opt = split->add_option("--ratio", real, "Tune fraction (default 0.5)");
    split->callback([&] {
        inv.stage = "split";
        if (ratio_opt->count()) inv.config["cohort"]["split_ratio"] = real;
    });

    auto* rows = app.add_subcommand("survival-rows", "Build survival rows");
    rows->add_option("--outcome", s1, "death|composite (default death)");
    rows->add_option("--strata", s2, "none|lipid-ever|lipid-before-event (default none)");
    rows->add_option("--source", s3, "test|tune|all|ldct|gated_reports (default test)");
    rows->add_option("--patients", s4, "Patient records (JSONL)");
    rows->callback([&] {
        inv.stage = "survival-rows";
        if (!s1.empty()) inv.config["survival"]["outcome"] = s1;
        if (!s2.empty()) inv.config["survival"]["strata"] = s2;
        if (!s3.empty()) inv.config["survival"]["source"] = s3;
        set_path(inv.config, "cohort", "patients", s4);
    });

    auto* surv = app.add_subcommand("survival", "Kaplan-Meier curves, at-risk tables and Cox fits");
    surv->add_option("--rows", s1, "Store holding survival rows (alias of --store)");
    surv->add_option("--grid", s2, "yearly|monthly (default yearly)");
    surv->add_option("--out", s3, "Output directory");
    surv->add_option("--reference", s4, "Reference group label (default zero)");
    surv->callback([&] {
        inv.stage = "survival";
        if (!s2.empty()) inv.config["survival"]["grid"] = s2;
        if (!s4.empty()) inv.config["survival"]["reference"] = s4;
        if (!s1.empty()) inv.store = s1;
        if (!s3.empty()) inv.options["out"] = abs_path(s3);
    });

    auto* eval = app.add_subcommand("evaluate", "Agreement and threshold metrics on paired studies");
    eval->add_option("--pairs", s1, "Store holding pairs (alias of --store)");
    eval->add_option("--thresholds", s2, "Comma-separated thresholds (default 1,100,400)");
    eval->add_option("--subgroups", s3, "Comma-separated subgroup keys (default manufacturer,sex,kvp)");
    eval->add_option("--out", s4, "Output directory");
    eval->add_option("--side", s5, "test|tune|all (default test)");
    auto* iter_opt = eval->add_option("--iterations", num, "Bootstrap iterations (default 1000)");
    eval->callback([&] {
        inv.stage = "evaluate";
        std::vector<std::int64_t> thr;
        std::stringstream ts(s2);
        for (std::string t; std::getline(ts, t, ',');)
            if (!t.empty()) thr.push_back(std::stoll(t));
        std::vector<std::string> keys;
        std::stringstream ks(s3);
        for (std::string k; std::getline(ks, k, ',');)
            if (!k.empty()) keys.push_back(k);
        auto& ev = inv.config["evaluate"];
        ev = Json::object();
        if (!thr.empty()) ev["thresholds"] = thr;
        if (!keys.empty()) ev["subgroups"] = keys;
        if (!s5.empty()) ev["side"] = s5;
        if (iter_opt->count()) ev["bootstrap_iterations"] = num;
        if (!s1.empty()) inv.store = s1;
        if (!s4.empty()) inv.options["out"] = abs_path(s4);
    });

    auto* screen = app.add_subcommand("screening-report", "Bin distribution of a screening cohort");
    screen->add_option("--scores", s1, "Screening score records (JSONL)");
    screen->add_option("--out", s2, "Output directory");
    screen->callback([&] {
        inv.stage = "screening-report";
        set_path(inv.config, "screening", "scores", s1);
        if (!s2.empty()) inv.options["out"] = abs_path(s2);
    });

    auto* gap = app.add_subcommand("therapy-gap", "Living >400 patients without active lipid therapy");
    gap->add_option("--scores", s1, "Screening score records (JSONL)");
    gap->add_option("--patients", s3, "Patient records (JSONL)");
    gap->add_option("--prescriptions", s4, "Prescription records (JSONL)");
    gap->add_option("--out", s2, "Output directory");
    gap->callback([&] {
        inv.stage = "therapy-gap";
        set_path(inv.config, "screening", "scores", s1);
        set_path(inv.config, "cohort", "patients", s3);
        set_path(inv.config, "cohort", "prescriptions", s4);
        if (!s2.empty()) inv.options["out"] = abs_path(s2);
    });

    auto* review = app.add_subcommand("review", "Cardiologist review service");
    review->require_subcommand(1);
    auto* serve = review->add_subcommand("serve", "Serve the review HTTP API");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--store", g.store, "Store directory");
    serve->add_option("--host", host, "Bind address")->default_val("127.0.0.1");
    serve->add_option("--port", port, "Port")->default_val(8080);
    serve->callback([&] { inv.stage = "review-serve"; });

    app.add_subcommand("run", "Run every configured stage")->callback([&] { inv.stage = "run"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    if (seed_opt->count()) g.seed = seed_value;

    try {
        if (inv.stage == "review-serve") {
            if (g.store.empty()) {
                std::cerr << "error: --store is required\n";
                return 1;
            }
            cac_review_server* srv = nullptr;
            if (auto st = cac_review_server_open(g.store.c_str(), &srv); st != CAC_OK) return report_failure(st);
            std::cerr << "serving review API on http://" << host << ":" << port << "\n";
            auto st = cac_review_server_listen(srv, host.c_str(), port);
            cac_review_server_free(srv);
            return st == CAC_OK ? 0 : report_failure(st);
        }
        return run(g, std::move(inv));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
