#ifndef MIL_EVAL_HPP
#define MIL_EVAL_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mil {

// Parallel (score, label, bag id) triples; scores are P(positive class).
struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;  // 0/1
    std::vector<std::string> bag_ids;

    std::size_t size() const { return scores.size(); }
    void push(double score, int label, std::string bag_id = {});
    void validate() const;  // equal lengths >= 2
    bool has_both_classes() const;
};

struct BootstrapConfig {
    std::size_t resamples = 2000;
    double level = 0.95;
    std::uint64_t seed = 0;
    // A resample containing one class is redrawn; total attempts are capped
    // at max_attempt_factor * resamples.
    std::size_t max_attempt_factor = 100;

    void validate() const;
};

// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie), computed via
// average ranks. Exactly equals exhaustive pair counting.
double auc(const ScoredSet& s);

// ROC points at every distinct threshold, (0,0) to (1,1), both coordinates
// nondecreasing. Trapezoidal area equals auc() within 1e-12.
std::vector<std::pair<double, double>> roc_points(const ScoredSet& s);  // (FPR, TPR)

double trapezoid_area(const std::vector<std::pair<double, double>>& points);

// Percentile bootstrap over bags with nearest-rank quantiles.
std::pair<double, double> bootstrap_ci(const ScoredSet& s, const BootstrapConfig& cfg);

// "0.9216 ± 0.0278" (k-fold rows, 4 decimals).
std::string format_mean_std(double mean, double std_dev);
// "0.926 (0.873 - 0.969)" (single-split rows, 3 decimals).
std::string format_auc_ci(double auc_value, double lo, double hi);

// One result row for report_table; exactly one of the two shapes is used
// depending on whether a fold std is available.
struct ReportRow {
    std::string label;
    double mean_auc = 0.0;
    bool has_std = false;
    double std_auc = 0.0;
    bool has_ci = false;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

struct ReportTable {
    std::string csv;   // full precision
    std::string text;  // formatted rows
};

ReportTable report_table(const std::vector<ReportRow>& rows);

}  // namespace mil

#endif  // MIL_EVAL_HPP
