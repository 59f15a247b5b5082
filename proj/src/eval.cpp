#include "mil/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mil/errors.hpp"
#include "mil/rng.hpp"

namespace mil {

void ScoredSet::push(double score, int label, std::string bag_id) {
    if (!std::isfinite(score)) throw InvalidValue("score is not finite");
    if (label != 0 && label != 1) throw InvalidLabel("scored-set label must be 0 or 1");
    scores.push_back(score);
    labels.push_back(label);
    bag_ids.push_back(std::move(bag_id));
}

void ScoredSet::validate() const {
    if (scores.size() != labels.size() || scores.size() != bag_ids.size()) {
        throw ShapeError("scored set sequences have unequal lengths");
    }
    if (scores.size() < 2) throw DegenerateInput("scored set needs at least 2 entries");
}

bool ScoredSet::has_both_classes() const {
    bool pos = false, neg = false;
    for (int l : labels) (l == 1 ? pos : neg) = true;
    return pos && neg;
}

void BootstrapConfig::validate() const {
    if (resamples < 1) throw InvalidConfig("bootstrap needs at least 1 resample");
    if (!(level > 0.0) || !(level < 1.0)) throw InvalidConfig("confidence level must be in (0,1)");
    if (max_attempt_factor < 1) throw InvalidConfig("bootstrap attempt factor must be >= 1");
}

namespace {

double auc_of(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tie blocks; ranks are integers or half-integers so
    // the sum below is exact in double for any realistic n.
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // (lo + hi) / 2, 1-based
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw DegenerateInput("AUC needs both classes present");
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                        static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

double auc(const ScoredSet& s) {
    s.validate();
    return auc_of(s.scores, s.labels);
}

std::vector<std::pair<double, double>> roc_points(const ScoredSet& s) {
    s.validate();
    if (!s.has_both_classes()) throw DegenerateInput("ROC needs both classes present");
    const std::size_t n = s.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });

    double n_pos = 0, n_neg = 0;
    for (int l : s.labels) (l == 1 ? n_pos : n_neg) += 1.0;

    std::vector<std::pair<double, double>> points;
    points.emplace_back(0.0, 0.0);
    double tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        // Walk one tie block: equal scores move the point diagonally.
        while (j < n && s.scores[order[j]] == s.scores[order[i]]) {
            if (s.labels[order[j]] == 1) tp += 1.0;
            else fp += 1.0;
            ++j;
        }
        points.emplace_back(fp / n_neg, tp / n_pos);
        i = j;
    }
    return points;
}

double trapezoid_area(const std::vector<std::pair<double, double>>& points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        area += 0.5 * (points[i].second + points[i - 1].second) *
                (points[i].first - points[i - 1].first);
    }
    return area;
}

std::pair<double, double> bootstrap_ci(const ScoredSet& s, const BootstrapConfig& cfg) {
    s.validate();
    cfg.validate();
    if (!s.has_both_classes()) throw DegenerateInput("bootstrap needs both classes present");
    const std::size_t n = s.size();
    const std::size_t max_attempts = cfg.max_attempt_factor * cfg.resamples;

    std::vector<double> stats;
    stats.reserve(cfg.resamples);
    std::vector<double> rs_scores(n);
    std::vector<int> rs_labels(n);
    std::size_t attempts = 0;
    for (std::size_t r = 0; r < cfg.resamples; ++r) {
        // Each resample owns a keyed substream; redraws advance the attempt
        // id so the sequence stays deterministic under any execution order.
        bool ok = false;
        for (std::size_t attempt = 0; !ok; ++attempt) {
            if (++attempts > max_attempts) {
                throw DegenerateInput("bootstrap exceeded its degenerate-resample redraw budget");
            }
            RngStream rng(cfg.seed, {stream_tag::kBootstrap, r, attempt});
            bool pos = false, neg = false;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t pick = rng.next_below(n);
                rs_scores[i] = s.scores[pick];
                rs_labels[i] = s.labels[pick];
                (rs_labels[i] == 1 ? pos : neg) = true;
            }
            ok = pos && neg;
        }
        stats.push_back(auc_of(rs_scores, rs_labels));
    }
    std::sort(stats.begin(), stats.end());

    const double alpha = 1.0 - cfg.level;
    auto nearest_rank = [&](double q) {
        std::size_t rank =
            static_cast<std::size_t>(std::ceil(q * static_cast<double>(stats.size())));
        if (rank < 1) rank = 1;
        if (rank > stats.size()) rank = stats.size();
        return stats[rank - 1];
    };
    return {nearest_rank(alpha / 2.0), nearest_rank(1.0 - alpha / 2.0)};
}

std::string format_mean_std(double mean, double std_dev) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", mean, std_dev);
    return buf;
}

std::string format_auc_ci(double auc_value, double lo, double hi) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f (%.3f - %.3f)", auc_value, lo, hi);
    return buf;
}

ReportTable report_table(const std::vector<ReportRow>& rows) {
    if (rows.empty()) throw InvalidConfig("report_table needs at least one row");
    std::ostringstream csv;
    std::ostringstream text;
    csv << "label,mean_auc,std_auc,ci_lo,ci_hi\n";
    std::size_t width = 0;
    for (const ReportRow& r : rows) width = std::max(width, r.label.size());
    for (const ReportRow& r : rows) {
        char num[256];
        std::snprintf(num, sizeof(num), "%.17g,%.17g,%.17g,%.17g", r.mean_auc,
                      r.has_std ? r.std_auc : std::nan(""), r.has_ci ? r.ci_lo : std::nan(""),
                      r.has_ci ? r.ci_hi : std::nan(""));
        csv << r.label << ',' << num << '\n';
        text << r.label;
        for (std::size_t i = r.label.size(); i < width + 2; ++i) text << ' ';
        if (r.has_std) {
            text << format_mean_std(r.mean_auc, r.std_auc);
        } else if (r.has_ci) {
            text << format_auc_ci(r.mean_auc, r.ci_lo, r.ci_hi);
        } else {
            char b[32];
            std::snprintf(b, sizeof(b), "%.4f", r.mean_auc);
            text << b;
        }
        text << '\n';
    }
    return {csv.str(), text.str()};
}

}  // namespace mil
