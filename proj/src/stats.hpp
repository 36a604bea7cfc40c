#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agatston.hpp"
#include "cohort.hpp"
#include "util.hpp"

namespace cac::stats {

using agatston::CacBin;

struct Observation {
    double time = 0.0;
    bool event = false;
};

struct AtRiskRow {
    double time = 0.0;
    std::int64_t at_risk = 0;           // subjects with duration >= time
    std::int64_t events = 0;            // cumulative events with duration <= time
    std::int64_t censored = 0;          // cumulative censorings with duration <= time
    std::int64_t interval_events = 0;   // events in [time, next grid time)
    std::int64_t interval_censored = 0; // censorings in [time, next grid time)
};

struct KmCurve {
    std::vector<double> times;     // 0 followed by distinct event times
    std::vector<double> survival;  // S just after each time
    std::vector<AtRiskRow> table;
    std::int64_t n = 0;

    double survival_at(double t) const;
};

/// Product-limit estimate; censorings tied with an event time stay in that
/// event's risk set.
KmCurve km_estimate(std::span<const Observation> obs, std::span<const double> grid = {});
KmCurve km_estimate(std::span<const cohort::SurvivalRow> rows, std::span<const double> grid = {});

enum class GridKind { Yearly, Monthly };
GridKind parse_grid(std::string_view s);
/// Day offsets round(k * 365.25) or round(k * 30.4375) up to max_days.
std::vector<double> make_grid(GridKind kind, double max_days);

struct CoxSubject {
    double time = 0.0;
    bool event = false;
    int x = 0;
};

struct CoxFit {
    double log_hr = 0.0;
    double hr = 1.0;
    double se = 0.0;
    double wald_z = 0.0;
    double p_value = 1.0;
    bool converged = false;
    int iterations = 0;
    // Monotone likelihood: log_hr is +/-inf and se/z/p are NaN.
    bool separation = false;
    double log_likelihood = 0.0;
};

/// Efron partial log-likelihood and its first two derivatives.
struct EfronTerms {
    double ll = 0.0;
    double score = 0.0;
    double info = 0.0;  // negative second derivative
};
EfronTerms efron_terms(std::span<const CoxSubject> subjects, double beta);

CoxFit cox_fit(std::span<const CoxSubject> subjects);

/// Builds x = 1 for rows whose label differs from `reference`.
CoxFit cox_two_group(std::span<const cohort::SurvivalRow> rows, const std::string& reference,
                     const std::string& other);

struct ConfusionMatrix4 {
    std::array<std::array<std::int64_t, 4>, 4> counts{};

    std::int64_t total() const;
    std::int64_t trace() const;
    double agreement() const;
};

ConfusionMatrix4 confusion_matrix(std::span<const std::pair<CacBin, CacBin>> pairs);

double weighted_kappa(const ConfusionMatrix4& m);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t used = 0;  // resamples where the statistic was defined
};

/// Percentile bootstrap over `n` resampling units. The statistic gets the
/// resampled indices and may return nullopt when undefined; those resamples
/// are skipped.
Interval bootstrap_ci(std::size_t n, const std::function<std::optional<double>(std::span<const std::size_t>)>& statistic,
                      std::size_t iterations, std::uint64_t seed, double level = 0.95);

Interval kappa_ci(std::span<const std::pair<CacBin, CacBin>> pairs, std::size_t iterations, std::uint64_t seed,
                  double level = 0.95);

/// Linear-interpolation quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double q);

double icc_agreement(std::span<const std::pair<double, double>> pairs);

struct Correlations {
    double pearson = 0.0;
    double spearman = 0.0;
};
Correlations correlations(std::span<const std::pair<double, double>> pairs);
std::vector<double> average_ranks(std::span<const double> v);

struct ThresholdMetrics {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::optional<double> accuracy, ppv, npv, sensitivity, specificity, f1;
};

ThresholdMetrics metrics_from_cells(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn);
/// Reference (first) is truth; both sides are dichotomised at `threshold`.
ThresholdMetrics threshold_metrics(std::span<const std::pair<std::int64_t, std::int64_t>> pairs,
                                   std::int64_t threshold);

struct BlandAltmanPoint {
    double mean = 0.0;
    double diff = 0.0;
};

struct BlandAltman {
    double mean_diff = 0.0;
    double sd_diff = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::vector<BlandAltmanPoint> points;
};

BlandAltman bland_altman(std::span<const std::pair<double, double>> pairs);

struct EvalPair {
    std::string id;
    double reference = 0.0;
    double predicted = 0.0;
    std::string manufacturer;
    std::optional<double> kvp;
    std::string sex;
};

struct SubgroupTable {
    std::string key;
    std::string value;
    std::size_t n = 0;
    std::map<std::int64_t, ThresholdMetrics> by_threshold;
};

struct SubgroupReport {
    std::vector<SubgroupTable> tables;
    std::vector<std::string> coverage_notes;
};

SubgroupReport subgroup_evaluate(std::span<const EvalPair> pairs, std::span<const std::string> keys,
                                 std::span<const std::int64_t> thresholds);

Json to_json(const ThresholdMetrics& m);
Json to_json(const CoxFit& f);

}  // namespace cac::stats
