#include "cac/cac.h"

#include <cstring>
#include <memory>
#include <string>

#include "agatston.hpp"
#include "embedded_data.hpp"
#include "error.hpp"
#include "pipeline.hpp"
#include "report_extraction.hpp"
#include "review_http.hpp"
#include "segmentation_io.hpp"
#include "stats.hpp"

struct cac_volume {
    cac::ingest::CtVolume v;
};
struct cac_mask {
    cac::seg::CalciumMask m;
};
struct cac_score {
    cac::agatston::ScanScore s;
};
struct cac_review_server {
    std::unique_ptr<cac::store::Store> store;
    std::unique_ptr<cac::review::ReviewService> service;
    std::unique_ptr<cac::review::HttpServer> http;
};

namespace {

thread_local std::string g_last_error;

cac_status set_error(cac_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

template <class F>
cac_status guard(F&& f) {
    try {
        g_last_error.clear();
        return f();
    } catch (const cac::Error& e) {
        return set_error(static_cast<cac_status>(e.code()), e.what());
    } catch (const cac::Json::exception& e) {
        return set_error(CAC_PARSE, e.what());
    } catch (const std::bad_alloc&) {
        return set_error(CAC_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return set_error(CAC_INTERNAL, e.what());
    }
}

cac_status write_text(const std::string& text, char* buf, size_t cap, size_t* needed) {
    if (needed) *needed = text.size() + 1;
    if (!buf || cap < text.size() + 1) return set_error(CAC_BUFFER_TOO_SMALL, "output buffer too small");
    std::memcpy(buf, text.c_str(), text.size() + 1);
    return CAC_OK;
}

#define CAC_REQUIRE(cond)                                                  \
    do {                                                                   \
        if (!(cond)) return set_error(CAC_INVALID_ARGUMENT, "null argument: " #cond); \
    } while (0)

const cac::nlp::RulePack& default_pack() {
    static const cac::nlp::RulePack pack = cac::nlp::RulePack::from_json(cac::Json::parse(cac::embedded::default_rules_json));
    return pack;
}

}  // namespace

extern "C" {

const char* cac_last_error(void) { return g_last_error.c_str(); }

const char* cac_status_name(cac_status status) {
    if (status == CAC_BUFFER_TOO_SMALL) return "BufferTooSmall";
    return cac::error_code_name(static_cast<cac::ErrorCode>(status));
}

const char* cac_version(void) { return "1.0.0"; }

cac_status cac_volume_load(const char* series_dir, cac_volume** out) {
    CAC_REQUIRE(series_dir && out);
    return guard([&] {
        *out = new cac_volume{cac::ingest::load_fixture_volume(series_dir)};
        return CAC_OK;
    });
}

void cac_volume_free(cac_volume* v) { delete v; }

cac_status cac_volume_dims(const cac_volume* v, int64_t* slices, int64_t* rows, int64_t* cols) {
    CAC_REQUIRE(v);
    if (slices) *slices = v->v.dims.slices;
    if (rows) *rows = v->v.dims.rows;
    if (cols) *cols = v->v.dims.cols;
    return CAC_OK;
}

cac_status cac_volume_hu(const cac_volume* v, int64_t z, int64_t y, int64_t x, int16_t* out) {
    CAC_REQUIRE(v && out);
    const auto& d = v->v.dims;
    if (z < 0 || y < 0 || x < 0 || z >= d.slices || y >= d.rows || x >= d.cols)
        return set_error(CAC_INVALID_ARGUMENT, "voxel index out of range");
    *out = v->v.at(z, y, x);
    return CAC_OK;
}

cac_status cac_mask_load(const char* path, const cac_volume* v, cac_mask** out) {
    CAC_REQUIRE(path && v && out);
    return guard([&] {
        *out = new cac_mask{cac::seg::load_mask(path, v->v)};
        return CAC_OK;
    });
}

cac_status cac_mask_baseline(const cac_volume* v, const char* roi, int hu_threshold, cac_mask** out) {
    CAC_REQUIRE(v && out);
    return guard([&] {
        const auto box = roi ? cac::seg::RoiBox::parse(roi) : cac::seg::RoiBox::whole(v->v.dims);
        *out = new cac_mask{cac::seg::baseline_segment(v->v, box, hu_threshold)};
        return CAC_OK;
    });
}

cac_status cac_mask_run_external(const cac_volume* v, const char* command, const char* scratch_dir,
                                 int timeout_seconds, cac_mask** out) {
    CAC_REQUIRE(v && command && scratch_dir && out);
    return guard([&] {
        cac::seg::ExternalRunnerConfig rc{command, scratch_dir, std::chrono::seconds(timeout_seconds > 0 ? timeout_seconds : 600)};
        *out = new cac_mask{cac::seg::run_external_model(v->v, rc)};
        return CAC_OK;
    });
}

cac_status cac_mask_save(const cac_mask* m, const char* path) {
    CAC_REQUIRE(m && path);
    return guard([&] {
        cac::seg::save_mask(m->m, path);
        return CAC_OK;
    });
}

cac_status cac_mask_voxel_count(const cac_mask* m, int64_t* out) {
    CAC_REQUIRE(m && out);
    *out = m->m.voxel_count();
    return CAC_OK;
}

void cac_mask_free(cac_mask* m) { delete m; }

cac_status cac_score_compute(const cac_volume* v, const cac_mask* m, const char* config_json, cac_score** out) {
    CAC_REQUIRE(v && m && out);
    return guard([&] {
        const auto cfg = config_json ? cac::agatston::ScoringConfig::from_json(cac::Json::parse(config_json))
                                     : cac::agatston::ScoringConfig{};
        *out = new cac_score{cac::agatston::score_scan(v->v, m->m, cfg)};
        return CAC_OK;
    });
}

cac_status cac_score_total(const cac_score* s, double* total) {
    CAC_REQUIRE(s && total);
    *total = s->s.total;
    return CAC_OK;
}

cac_status cac_score_rounded(const cac_score* s, int64_t* rounded) {
    CAC_REQUIRE(s && rounded);
    *rounded = s->s.rounded;
    return CAC_OK;
}

cac_status cac_score_bin(const cac_score* s, int* bin) {
    CAC_REQUIRE(s && bin);
    *bin = cac::agatston::bin_index(s->s.bin);
    return CAC_OK;
}

cac_status cac_score_json(const cac_score* s, int include_lesions, char* buf, size_t cap, size_t* needed) {
    CAC_REQUIRE(s);
    return guard([&] { return write_text(cac::agatston::to_json(s->s, include_lesions != 0).dump(), buf, cap, needed); });
}

void cac_score_free(cac_score* s) { delete s; }

int cac_bin_of(int64_t rounded) { return cac::agatston::bin_index(cac::agatston::bin_score(rounded)); }

int64_t cac_round_score(double total) { return cac::agatston::round_score(total); }

int cac_threshold_class(int64_t rounded, int64_t threshold) {
    return cac::agatston::threshold_class(rounded, threshold) ? 1 : 0;
}

cac_status cac_extract_agatston(const char* report_text, const char* rules_json, char* buf, size_t cap,
                                size_t* needed) {
    CAC_REQUIRE(report_text);
    return guard([&] {
        std::optional<cac::nlp::RulePack> custom;
        if (rules_json) custom = cac::nlp::RulePack::from_json(cac::Json::parse(rules_json));
        const auto r = cac::nlp::extract_agatston(report_text, custom ? *custom : default_pack());
        return write_text(cac::nlp::to_json(r).dump(), buf, cap, needed);
    });
}

cac_status cac_weighted_kappa(const int64_t counts[16], double* kappa) {
    CAC_REQUIRE(counts && kappa);
    return guard([&] {
        cac::stats::ConfusionMatrix4 m;
        for (int i = 0; i < 16; ++i) {
            if (counts[i] < 0) cac::fail(cac::ErrorCode::InvalidArgument, "negative count");
            m.counts[i / 4][i % 4] = counts[i];
        }
        *kappa = cac::stats::weighted_kappa(m);
        return CAC_OK;
    });
}

cac_status cac_run_stage(const char* stage, const char* store_dir, const char* config_json, const char* base_dir,
                         uint64_t seed, const char* options_json, char* buf, size_t cap, size_t* needed,
                         size_t* exclusions) {
    CAC_REQUIRE(stage && store_dir);
    return guard([&] {
        namespace app = cac::app;
        cac::Json doc = config_json && *config_json ? cac::Json::parse(config_json) : cac::Json::object();
        auto cfg = app::PipelineConfig::from_json(std::move(doc), base_dir ? base_dir : ".");
        cfg.seed = seed;
        const cac::Json opts = options_json && *options_json ? cac::Json::parse(options_json) : cac::Json::object();
        std::optional<std::string> study;
        if (opts.contains("study")) study = opts.at("study").get<std::string>();
        std::optional<std::filesystem::path> mask;
        if (opts.contains("mask")) mask = opts.at("mask").get<std::string>();
        cac::store::Store st(store_dir);
        auto out_dir = [&](const char* fallback) {
            return opts.contains("out") ? std::filesystem::path(opts.at("out").get<std::string>())
                                        : st.reports_dir() / fallback;
        };

        const std::string s = stage;
        app::StageResult r;
        if (s == "ingest") r = app::ingest(st, cfg);
        else if (s == "segment") r = app::segment(st, cfg, study);
        else if (s == "score") r = app::score(st, cfg, study, mask);
        else if (s == "extract-reports") r = app::extract_reports(st, cfg);
        else if (s == "pair") r = app::pair(st, cfg);
        else if (s == "split") r = app::split(st, cfg);
        else if (s == "survival-rows") r = app::survival_rows(st, cfg);
        else if (s == "survival") r = app::survival(st, cfg, out_dir("survival"));
        else if (s == "evaluate") r = app::evaluate(st, cfg, out_dir("evaluate"));
        else if (s == "screening-report") r = app::screening_report(st, cfg, out_dir("screening"));
        else if (s == "therapy-gap") r = app::therapy_gap(st, cfg, out_dir("therapy_gap"));
        else if (s == "run") r = app::run_pipeline(st, cfg);
        else cac::fail(cac::ErrorCode::InvalidArgument, "unknown stage '" + s + "'");
        if (exclusions) *exclusions = r.exclusions;
        return write_text(r.summary.dump(2), buf, cap, needed);
    });
}

cac_status cac_review_server_open(const char* store_dir, cac_review_server** out) {
    CAC_REQUIRE(store_dir && out);
    return guard([&] {
        auto srv = std::make_unique<cac_review_server>();
        srv->store = std::make_unique<cac::store::Store>(store_dir);
        srv->service = cac::app::open_review(*srv->store);
        srv->http = std::make_unique<cac::review::HttpServer>(*srv->service);
        *out = srv.release();
        return CAC_OK;
    });
}

cac_status cac_review_server_start(cac_review_server* s, const char* host, int port, int* bound_port) {
    CAC_REQUIRE(s && host);
    return guard([&] {
        const int p = s->http->start(host, port);
        if (bound_port) *bound_port = p;
        return CAC_OK;
    });
}

cac_status cac_review_server_listen(cac_review_server* s, const char* host, int port) {
    CAC_REQUIRE(s && host);
    return guard([&] {
        s->http->listen(host, port);
        return CAC_OK;
    });
}

cac_status cac_review_server_stop(cac_review_server* s) {
    CAC_REQUIRE(s);
    return guard([&] {
        s->http->stop();
        return CAC_OK;
    });
}

void cac_review_server_free(cac_review_server* s) {
    if (!s) return;
    try {
        s->http->stop();
    } catch (...) {
    }
    delete s;
}

}  // extern "C"
