#include "stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "error.hpp"

namespace cac::stats {

double KmCurve::survival_at(double t) const {
    double s = 1.0;
    for (std::size_t i = 0; i < times.size() && times[i] <= t; ++i) s = survival[i];
    return s;
}

KmCurve km_estimate(std::span<const Observation> obs, std::span<const double> grid) {
    if (obs.empty()) fail(ErrorCode::EmptyGroup, "km_estimate: no subjects");
    std::vector<Observation> sorted(obs.begin(), obs.end());
    for (const auto& o : sorted)
        if (!(o.time >= 0.0)) fail(ErrorCode::NegativeDuration, "km_estimate: negative duration");
    std::sort(sorted.begin(), sorted.end(), [](const Observation& a, const Observation& b) { return a.time < b.time; });

    KmCurve c;
    c.n = static_cast<std::int64_t>(sorted.size());
    c.times.push_back(0.0);
    c.survival.push_back(1.0);
    double s = 1.0;
    std::size_t at_risk = sorted.size();
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i, d = 0;
        while (j < sorted.size() && sorted[j].time == sorted[i].time) d += sorted[j++].event ? 1 : 0;
        if (d > 0) {
            s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
            if (sorted[i].time == 0.0) c.survival.back() = s;
            else {
                c.times.push_back(sorted[i].time);
                c.survival.push_back(s);
            }
        }
        at_risk -= j - i;
        i = j;
    }

    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double t = grid[g];
        const double next = g + 1 < grid.size() ? grid[g + 1] : std::numeric_limits<double>::infinity();
        AtRiskRow r;
        r.time = t;
        for (const auto& o : sorted) {
            if (o.time >= t) ++r.at_risk;
            if (o.time <= t) (o.event ? r.events : r.censored) += 1;
            if (o.time >= t && o.time < next) (o.event ? r.interval_events : r.interval_censored) += 1;
        }
        c.table.push_back(r);
    }
    return c;
}

KmCurve km_estimate(std::span<const cohort::SurvivalRow> rows, std::span<const double> grid) {
    std::vector<Observation> obs;
    obs.reserve(rows.size());
    for (const auto& r : rows) obs.push_back({static_cast<double>(r.duration_days), r.event});
    return km_estimate(obs, grid);
}

GridKind parse_grid(std::string_view s) {
    if (s == "yearly") return GridKind::Yearly;
    if (s == "monthly") return GridKind::Monthly;
    fail(ErrorCode::InvalidArgument, "unknown grid '" + std::string(s) + "'");
}

std::vector<double> make_grid(GridKind kind, double max_days) {
    const double step = kind == GridKind::Yearly ? 365.25 : 30.4375;
    std::vector<double> g;
    for (int k = 0;; ++k) {
        double t = std::round(k * step);
        if (t > max_days && k > 0) break;
        g.push_back(t);
    }
    return g;
}

EfronTerms efron_terms(std::span<const CoxSubject> subjects, double beta) {
    std::vector<const CoxSubject*> s;
    s.reserve(subjects.size());
    for (const auto& x : subjects) s.push_back(&x);
    std::sort(s.begin(), s.end(), [](const CoxSubject* a, const CoxSubject* b) { return a->time > b->time; });

    // Walk from the latest time backwards, accumulating the risk set.
    EfronTerms t;
    double s0 = 0.0, s1 = 0.0;
    const double e1 = std::exp(beta);
    for (std::size_t i = 0; i < s.size();) {
        std::size_t j = i;
        double t0 = 0.0, t1 = 0.0, xsum = 0.0;
        std::size_t d = 0;
        while (j < s.size() && s[j]->time == s[i]->time) {
            const double w = s[j]->x ? e1 : 1.0;
            s0 += w;
            s1 += s[j]->x * w;
            if (s[j]->event) {
                ++d;
                t0 += w;
                t1 += s[j]->x * w;
                xsum += s[j]->x;
            }
            ++j;
        }
        if (d > 0) {
            t.ll += beta * xsum;
            t.score += xsum;
            for (std::size_t l = 0; l < d; ++l) {
                const double f = static_cast<double>(l) / static_cast<double>(d);
                const double a = s0 - f * t0;
                const double b = s1 - f * t1;  // x^2 == x for a binary covariate
                t.ll -= std::log(a);
                t.score -= b / a;
                t.info += b / a - (b / a) * (b / a);
            }
        }
        i = j;
    }
    return t;
}

namespace {

// Monotone likelihood in direction `sign` when every event's covariate is
// extreme within its risk set.
bool monotone(std::span<const CoxSubject> subjects, int sign) {
    for (const auto& e : subjects) {
        if (!e.event) continue;
        const int want = sign > 0 ? 1 : 0;
        if (e.x == want) continue;
        for (const auto& r : subjects)
            if (r.time >= e.time && r.x == want) return false;
    }
    return true;
}

}  // namespace

CoxFit cox_fit(std::span<const CoxSubject> subjects) {
    if (std::none_of(subjects.begin(), subjects.end(), [](const CoxSubject& s) { return s.event; }))
        fail(ErrorCode::NoEvents, "cox: no events");
    bool has0 = false, has1 = false;
    for (const auto& s : subjects) (s.x ? has1 : has0) = true;
    if (!has0 || !has1) fail(ErrorCode::EmptyGroup, "cox: need two non-empty groups");

    CoxFit fit;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int sign : {1, -1}) {
        if (monotone(subjects, sign)) {
            fit.separation = true;
            fit.log_hr = sign * std::numeric_limits<double>::infinity();
            fit.hr = sign > 0 ? std::numeric_limits<double>::infinity() : 0.0;
            fit.se = fit.wald_z = fit.p_value = nan;
            fit.converged = false;
            return fit;
        }
    }

    double beta = 0.0;
    EfronTerms cur = efron_terms(subjects, beta);
    for (int it = 1; it <= 50; ++it) {
        fit.iterations = it;
        if (!(cur.info > 0.0)) break;
        double step = cur.score / cur.info;
        double nb = beta + step;
        EfronTerms nxt = efron_terms(subjects, nb);
        for (int h = 0; h < 40 && !(nxt.ll >= cur.ll); ++h) {
            step /= 2.0;
            nb = beta + step;
            nxt = efron_terms(subjects, nb);
        }
        const double dll = nxt.ll - cur.ll;
        beta = nb;
        cur = nxt;
        if (std::abs(dll) < 1e-9) {
            fit.converged = true;
            break;
        }
    }
    // Polish: Newton is quadratic here, so a few plain steps reach machine precision.
    for (int k = 0; fit.converged && k < 5 && cur.info > 0.0; ++k) {
        const double step = cur.score / cur.info;
        if (std::abs(step) < 1e-15) break;
        EfronTerms nxt = efron_terms(subjects, beta + step);
        if (nxt.ll < cur.ll - 1e-12) break;
        beta += step;
        cur = nxt;
    }
    fit.log_hr = beta;
    fit.hr = std::exp(beta);
    fit.log_likelihood = cur.ll;
    fit.se = 1.0 / std::sqrt(cur.info);
    fit.wald_z = beta / fit.se;
    fit.p_value = std::erfc(std::abs(fit.wald_z) / std::sqrt(2.0));
    return fit;
}

CoxFit cox_two_group(std::span<const cohort::SurvivalRow> rows, const std::string& reference,
                     const std::string& other) {
    std::vector<CoxSubject> subjects;
    for (const auto& r : rows) {
        if (r.group_label == reference) subjects.push_back({static_cast<double>(r.duration_days), r.event, 0});
        else if (r.group_label == other) subjects.push_back({static_cast<double>(r.duration_days), r.event, 1});
    }
    return cox_fit(subjects);
}

std::int64_t ConfusionMatrix4::total() const {
    std::int64_t t = 0;
    for (const auto& row : counts)
        for (auto v : row) t += v;
    return t;
}

std::int64_t ConfusionMatrix4::trace() const {
    std::int64_t t = 0;
    for (int i = 0; i < 4; ++i) t += counts[i][i];
    return t;
}

double ConfusionMatrix4::agreement() const {
    const auto n = total();
    if (n == 0) fail(ErrorCode::UndefinedMetric, "agreement of an empty matrix");
    return static_cast<double>(trace()) / static_cast<double>(n);
}

ConfusionMatrix4 confusion_matrix(std::span<const std::pair<CacBin, CacBin>> pairs) {
    if (pairs.empty()) fail(ErrorCode::InvalidArgument, "confusion_matrix: no pairs");
    ConfusionMatrix4 m;
    for (const auto& [ref, pred] : pairs) ++m.counts[agatston::bin_index(ref)][agatston::bin_index(pred)];
    return m;
}

double weighted_kappa(const ConfusionMatrix4& m) {
    const auto n = m.total();
    if (n <= 0) fail(ErrorCode::InvalidArgument, "weighted_kappa: empty matrix");
    std::array<double, 4> rows{}, cols{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            rows[i] += static_cast<double>(m.counts[i][j]);
            cols[j] += static_cast<double>(m.counts[i][j]);
        }
    double obs = 0.0, exp = 0.0;
    const double total = static_cast<double>(n);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double w = std::abs(i - j) / 3.0;
            obs += w * static_cast<double>(m.counts[i][j]);
            exp += w * rows[i] * cols[j] / total;
        }
    if (exp == 0.0) fail(ErrorCode::DegenerateMarginals, "weighted_kappa: expected disagreement is zero");
    return 1.0 - obs / exp;
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) fail(ErrorCode::InvalidArgument, "quantile of empty data");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::size_t n, const std::function<std::optional<double>(std::span<const std::size_t>)>& statistic,
                      std::size_t iterations, std::uint64_t seed, double level) {
    if (n < 2) fail(ErrorCode::InvalidArgument, "bootstrap needs at least 2 units");
    if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::InvalidArgument, "bootstrap level must be in (0, 1)");
    std::vector<double> values;
    values.reserve(iterations);
    std::vector<std::size_t> idx(n);
    for (std::size_t it = 0; it < iterations; ++it) {
        Rng rng(derive_seed(seed, it));
        for (auto& v : idx) v = static_cast<std::size_t>(rng.below(n));
        if (auto v = statistic(idx)) values.push_back(*v);
    }
    if (values.empty()) fail(ErrorCode::UndefinedMetric, "bootstrap statistic undefined on every resample");
    std::sort(values.begin(), values.end());
    const double a = (1.0 - level) / 2.0;
    return {quantile_sorted(values, a), quantile_sorted(values, 1.0 - a), values.size()};
}

Interval kappa_ci(std::span<const std::pair<CacBin, CacBin>> pairs, std::size_t iterations, std::uint64_t seed,
                  double level) {
    return bootstrap_ci(
        pairs.size(),
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
            ConfusionMatrix4 m;
            for (auto i : idx) ++m.counts[agatston::bin_index(pairs[i].first)][agatston::bin_index(pairs[i].second)];
            try {
                return weighted_kappa(m);
            } catch (const Error&) {
                return std::nullopt;
            }
        },
        iterations, seed, level);
}

double icc_agreement(std::span<const std::pair<double, double>> pairs) {
    const auto n = pairs.size();
    if (n < 3) fail(ErrorCode::InvalidArgument, "icc needs at least 3 pairs");
    constexpr double k = 2.0;
    const double nd = static_cast<double>(n);
    double gm = 0.0, cx = 0.0, cy = 0.0;
    for (const auto& [x, y] : pairs) {
        cx += x;
        cy += y;
    }
    gm = (cx + cy) / (k * nd);
    cx /= nd;
    cy /= nd;
    double ssr = 0.0, sst = 0.0;
    for (const auto& [x, y] : pairs) {
        const double rm = (x + y) / k;
        ssr += k * (rm - gm) * (rm - gm);
        sst += (x - gm) * (x - gm) + (y - gm) * (y - gm);
    }
    const double ssc = nd * ((cx - gm) * (cx - gm) + (cy - gm) * (cy - gm));
    const double sse = sst - ssr - ssc;
    const double msr = ssr / (nd - 1.0);
    const double msc = ssc / (k - 1.0);
    const double mse = sse / ((nd - 1.0) * (k - 1.0));
    const double denom = msr + (k - 1.0) * mse + k * (msc - mse) / nd;
    if (sst == 0.0 || denom == 0.0) fail(ErrorCode::ZeroVariance, "icc: zero variance");
    return (msr - mse) / denom;
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (std::size_t k = i; k < j; ++k) r[idx[k]] = avg;
        i = j;
    }
    return r;
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::ZeroVariance, "correlation: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

Correlations correlations(std::span<const std::pair<double, double>> pairs) {
    if (pairs.size() < 3) fail(ErrorCode::InvalidArgument, "correlations need at least 3 pairs");
    std::vector<double> x, y;
    for (const auto& [a, b] : pairs) {
        x.push_back(a);
        y.push_back(b);
    }
    Correlations c;
    c.pearson = pearson(x, y);
    c.spearman = pearson(average_ranks(x), average_ranks(y));
    return c;
}

ThresholdMetrics metrics_from_cells(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
    if (tp < 0 || fp < 0 || fn < 0 || tn < 0) fail(ErrorCode::InvalidArgument, "negative confusion cell");
    auto ratio = [](std::int64_t num, std::int64_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    ThresholdMetrics m{tp, fp, fn, tn, {}, {}, {}, {}, {}, {}};
    m.accuracy = ratio(tp + tn, tp + fp + fn + tn);
    m.ppv = ratio(tp, tp + fp);
    m.npv = ratio(tn, tn + fn);
    m.sensitivity = ratio(tp, tp + fn);
    m.specificity = ratio(tn, tn + fp);
    m.f1 = ratio(2 * tp, 2 * tp + fp + fn);
    return m;
}

ThresholdMetrics threshold_metrics(std::span<const std::pair<std::int64_t, std::int64_t>> pairs,
                                   std::int64_t threshold) {
    if (pairs.empty()) fail(ErrorCode::InvalidArgument, "threshold_metrics: no pairs");
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& [ref, pred] : pairs) {
        const bool r = agatston::threshold_class(ref, threshold);
        const bool p = agatston::threshold_class(pred, threshold);
        (r ? (p ? tp : fn) : (p ? fp : tn)) += 1;
    }
    return metrics_from_cells(tp, fp, fn, tn);
}

BlandAltman bland_altman(std::span<const std::pair<double, double>> pairs) {
    if (pairs.size() < 2) fail(ErrorCode::InvalidArgument, "bland_altman needs at least 2 pairs");
    BlandAltman ba;
    double sum = 0.0;
    for (const auto& [x, y] : pairs) {
        ba.points.push_back({(x + y) / 2.0, y - x});
        sum += y - x;
    }
    const double n = static_cast<double>(pairs.size());
    ba.mean_diff = sum / n;
    double ss = 0.0;
    for (const auto& p : ba.points) ss += (p.diff - ba.mean_diff) * (p.diff - ba.mean_diff);
    ba.sd_diff = std::sqrt(ss / (n - 1.0));
    ba.lower = ba.mean_diff - 1.96 * ba.sd_diff;
    ba.upper = ba.mean_diff + 1.96 * ba.sd_diff;
    return ba;
}

SubgroupReport subgroup_evaluate(std::span<const EvalPair> pairs, std::span<const std::string> keys,
                                 std::span<const std::int64_t> thresholds) {
    SubgroupReport report;
    for (const auto& key : keys) {
        if (key != "manufacturer" && key != "sex" && key != "kvp")
            fail(ErrorCode::InvalidArgument, "unknown subgroup key '" + key + "'");
        std::map<std::string, std::vector<std::pair<std::int64_t, std::int64_t>>> parts;
        std::set<std::string> expected;
        if (key == "kvp") expected = {"120", "non_120"};
        if (key == "sex") expected = {"F", "M"};
        for (const auto& p : pairs) {
            std::string value;
            if (key == "manufacturer") value = p.manufacturer;
            else if (key == "sex") value = p.sex;
            else if (p.kvp) value = *p.kvp == 120.0 ? "120" : "non_120";
            if (value.empty()) fail(ErrorCode::InvalidArgument, "pair " + p.id + " lacks " + key + " metadata");
            parts[value].emplace_back(agatston::round_score(p.reference), agatston::round_score(p.predicted));
        }
        for (const auto& e : expected)
            if (!parts.count(e)) report.coverage_notes.push_back(key + "=" + e + ": no pairs");
        for (const auto& [value, ps] : parts) {
            SubgroupTable t{key, value, ps.size(), {}};
            for (auto thr : thresholds) t.by_threshold.emplace(thr, threshold_metrics(ps, thr));
            report.tables.push_back(std::move(t));
        }
    }
    return report;
}

Json to_json(const ThresholdMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    return Json{{"tp", m.tp},
                {"fp", m.fp},
                {"fn", m.fn},
                {"tn", m.tn},
                {"accuracy", opt(m.accuracy)},
                {"ppv", opt(m.ppv)},
                {"npv", opt(m.npv)},
                {"sensitivity", opt(m.sensitivity)},
                {"specificity", opt(m.specificity)},
                {"f1", opt(m.f1)}};
}

Json to_json(const CoxFit& f) {
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    return Json{{"log_hr", num(f.log_hr)},
                {"hr", num(f.hr)},
                {"se", num(f.se)},
                {"wald_z", num(f.wald_z)},
                {"p_value", num(f.p_value)},
                {"converged", f.converged},
                {"iterations", f.iterations},
                {"separation", f.separation},
                {"infinite_hr", f.separation && f.log_hr > 0}};
}

}  // namespace cac::stats
