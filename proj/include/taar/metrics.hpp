#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace taar::metrics {

// ---------------------------------------------------------------------------
// AUC (rank statistic, ties counted half)
// ---------------------------------------------------------------------------

// Mann-Whitney formulation over midranks. Exact for desk-scale inputs; the
// test suite cross-checks it against brute-force pairwise counting.
inline std::optional<double> auc(const std::vector<double>& scores,
                                 const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
    std::size_t positives = 0;
    for (bool l : labels) positives += l ? 1 : 0;
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) return std::nullopt;

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]]) rank_sum_pos += midrank;
        }
        i = j + 1;
    }
    const double p = static_cast<double>(positives);
    const double n = static_cast<double>(negatives);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

struct ScoredSet {
    std::vector<double> scores;
    std::vector<bool> labels;
};

// Prefix fractions the early-diagnosis experiments evaluate by default.
inline constexpr std::array<double, 5> kDefaultPrefixFractions = {0.2, 0.4, 0.6, 0.8, 1.0};

// Trap-detection AUC per prefix fraction; degenerate label sets are marked
// undefined rather than dropped.
inline std::map<double, std::optional<double>> auc_by_prefix(
    const std::map<double, ScoredSet>& per_fraction) {
    std::map<double, std::optional<double>> out;
    for (const auto& [fraction, set] : per_fraction) {
        out[fraction] = auc(set.scores, set.labels);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pearson product-moment correlation
// ---------------------------------------------------------------------------

inline std::optional<double> pearson(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.size() < 3) return std::nullopt;
    const double n = static_cast<double>(pairs.size());
    double sx = 0.0;
    double sy = 0.0;
    for (const auto& [x, y] : pairs) {
        sx += x;
        sy += y;
    }
    const double mx = sx / n;
    const double my = sy / n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (const auto& [x, y] : pairs) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt; // zero variance: undefined
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Localization metrics
// ---------------------------------------------------------------------------

struct LocalizationCase {
    std::optional<int> t_hat; // absent = not detected
    int t_star = 0;
    int input_segments = 0; // segments shown to the policy
};

struct LocalizationBucket {
    std::string label;
    int n = 0;
    double top1 = 0.0;
    double within3 = 0.0;
    double mae = 0.0;
};

struct LocalizationReport {
    int total_cases = 0;
    int detected = 0;
    double detection_rate = 0.0;
    // localization metrics over detected cases; absent when nothing detected
    std::optional<double> top1;
    std::optional<double> within3;
    std::optional<double> mae;
    std::optional<double> relative_error; // mae / mean input length of the evaluated set
    std::vector<LocalizationBucket> by_distance; // trap-to-truncation distance
    std::vector<LocalizationBucket> by_length;   // input length (segments)
};

namespace detail {

// Distance from trap to truncation point, in steps: a trap sitting in the last
// input segment is 1 step away.
inline int trap_distance(const LocalizationCase& c) { return c.input_segments - c.t_star; }

inline std::string distance_bucket(int d) {
    if (d <= 1) return "1";
    if (d <= 3) return "2-3";
    if (d <= 5) return "4-5";
    if (d <= 10) return "6-10";
    if (d <= 20) return "11-20";
    return ">20";
}

inline std::string length_bucket(int len) {
    if (len <= 10) return "<=10";
    if (len <= 20) return "11-20";
    if (len <= 40) return "21-40";
    if (len <= 60) return "41-60";
    return ">60";
}

} // namespace detail

inline LocalizationReport localization_metrics(const std::vector<LocalizationCase>& cases) {
    if (cases.empty()) throw std::invalid_argument("localization_metrics: empty input");
    LocalizationReport report;
    report.total_cases = static_cast<int>(cases.size());

    struct Acc {
        int n = 0;
        int top1 = 0;
        int within3 = 0;
        long long abs_err = 0;
    };
    Acc overall;
    std::map<std::string, Acc> by_distance;
    std::map<std::string, Acc> by_length;
    double length_sum = 0.0;

    for (const auto& c : cases) {
        length_sum += c.input_segments;
        if (!c.t_hat) continue;
        ++report.detected;
        const int err = std::abs(*c.t_hat - c.t_star);
        auto feed = [&err](Acc& acc) {
            ++acc.n;
            if (err == 0) ++acc.top1;
            if (err <= 3) ++acc.within3;
            acc.abs_err += err;
        };
        feed(overall);
        feed(by_distance[detail::distance_bucket(detail::trap_distance(c))]);
        feed(by_length[detail::length_bucket(c.input_segments)]);
    }

    report.detection_rate = static_cast<double>(report.detected) / report.total_cases;
    if (overall.n > 0) {
        report.top1 = static_cast<double>(overall.top1) / overall.n;
        report.within3 = static_cast<double>(overall.within3) / overall.n;
        report.mae = static_cast<double>(overall.abs_err) / overall.n;
        const double mean_len = length_sum / report.total_cases;
        if (mean_len > 0.0) report.relative_error = *report.mae / mean_len;
    }

    auto emit = [](const std::map<std::string, Acc>& acc, const std::vector<std::string>& order) {
        std::vector<LocalizationBucket> buckets;
        for (const auto& label : order) {
            auto it = acc.find(label);
            if (it == acc.end() || it->second.n == 0) continue;
            const Acc& a = it->second;
            buckets.push_back(LocalizationBucket{
                label, a.n, static_cast<double>(a.top1) / a.n,
                static_cast<double>(a.within3) / a.n, static_cast<double>(a.abs_err) / a.n});
        }
        return buckets;
    };
    report.by_distance = emit(by_distance, {"1", "2-3", "4-5", "6-10", "11-20", ">20"});
    report.by_length = emit(by_length, {"<=10", "11-20", "21-40", "41-60", ">60"});
    return report;
}

// ---------------------------------------------------------------------------
// Token-efficiency report
// ---------------------------------------------------------------------------

struct TokenTotals {
    long long baseline = 0;
    long long extra = 0;
};

struct TokenRow {
    std::string model;
    long long baseline = 0;
    long long extra_taar = 0;
    double extra_over_base_taar = 0.0;
    long long extra_ablation = 0;
    double extra_over_base_ablation = 0.0;
    double savings = 0.0; // 1 - extra_taar / extra_ablation
};

// Per-model baseline/extra totals plus the derived ratios: Extra/Base for both
// methods and the savings of gating vs. the cut-everything ablation.
inline std::vector<TokenRow> token_report(const std::map<std::string, TokenTotals>& taar,
                                          const std::map<std::string, TokenTotals>& ablation) {
    std::vector<TokenRow> rows;
    TokenRow total;
    total.model = "Total";
    for (const auto& [model, t] : taar) {
        TokenRow row;
        row.model = model;
        row.baseline = t.baseline;
        row.extra_taar = t.extra;
        auto it = ablation.find(model);
        if (it != ablation.end()) row.extra_ablation = it->second.extra;
        if (row.baseline > 0) {
            row.extra_over_base_taar = static_cast<double>(row.extra_taar) / row.baseline;
            row.extra_over_base_ablation = static_cast<double>(row.extra_ablation) / row.baseline;
        }
        if (row.extra_ablation > 0) {
            row.savings = 1.0 - static_cast<double>(row.extra_taar) / row.extra_ablation;
        }
        total.baseline += row.baseline;
        total.extra_taar += row.extra_taar;
        total.extra_ablation += row.extra_ablation;
        rows.push_back(std::move(row));
    }
    if (total.baseline > 0) {
        total.extra_over_base_taar = static_cast<double>(total.extra_taar) / total.baseline;
        total.extra_over_base_ablation =
            static_cast<double>(total.extra_ablation) / total.baseline;
    }
    if (total.extra_ablation > 0) {
        total.savings = 1.0 - static_cast<double>(total.extra_taar) / total.extra_ablation;
    }
    rows.push_back(std::move(total));
    return rows;
}

} // namespace taar::metrics
