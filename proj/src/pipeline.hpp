#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "review.hpp"
#include "store.hpp"

namespace cac::app {

namespace fs = std::filesystem;

/// Pipeline configuration document. Relative paths resolve against the
/// directory holding the config file.
struct PipelineConfig {
    Json doc = Json::object();
    fs::path base_dir;
    std::uint64_t seed = 0;

    static PipelineConfig load(const fs::path& path);
    static PipelineConfig from_json(Json doc, fs::path base_dir);

    const Json& section(const char* name) const;
    std::optional<fs::path> path(const char* section, const char* key) const;
    fs::path require_path(const char* section, const char* key) const;
};

// Substreams of the root seed.
enum class Stream : std::uint64_t { Split = 1, Bootstrap = 2, Audit = 3, Review = 4 };
std::uint64_t stream_seed(std::uint64_t root, Stream s);

struct StageResult {
    Json summary = Json::object();
    std::size_t exclusions = 0;
};

StageResult ingest(store::Store& st, const PipelineConfig& cfg);
StageResult segment(store::Store& st, const PipelineConfig& cfg, const std::optional<std::string>& study = {});
StageResult score(store::Store& st, const PipelineConfig& cfg, const std::optional<std::string>& study = {},
                  const std::optional<fs::path>& mask_file = {});
StageResult extract_reports(store::Store& st, const PipelineConfig& cfg);
StageResult pair(store::Store& st, const PipelineConfig& cfg);
StageResult split(store::Store& st, const PipelineConfig& cfg);
StageResult survival_rows(store::Store& st, const PipelineConfig& cfg);
StageResult survival(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir);
StageResult evaluate(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir);
StageResult screening_report(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir);
StageResult therapy_gap(store::Store& st, const PipelineConfig& cfg, const fs::path& out_dir);

/// Every configured stage in order. Per-study failures land in the
/// exclusion log; anything else aborts with StageFailed naming the stage.
StageResult run_pipeline(store::Store& st, const PipelineConfig& cfg);

/// Review service over the scored, mask-positive studies of a store.
std::unique_ptr<review::ReviewService> open_review(store::Store& st);

std::vector<cohort::PatientRecord> load_patients(const PipelineConfig& cfg);

}  // namespace cac::app
