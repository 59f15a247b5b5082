#ifndef MIL_TRAIN_HPP
#define MIL_TRAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mil/checkpoint.hpp"
#include "mil/data.hpp"
#include "mil/eval.hpp"
#include "mil/model.hpp"
#include "mil/sampling.hpp"

namespace mil {

struct TrainConfig {
    double lr = 2e-4;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    std::uint64_t seed = 1;
    SamplingPolicy sampling;  // defaults to Full
    double c_bag = 0.7;
    double c_inst = 0.3;
    std::size_t pseudo_count = 8;
    double weight_decay = 1e-5;
    double augment_sigma = 0.0;  // feature jitter, two-stage fine-tuning only

    void validate() const;
    std::string fingerprint() const;
};

struct EpochStats {
    std::size_t epoch;  // 1-based
    double train_loss;
    double val_loss;
    double val_auc;
};

// Training-visible view of one bag; embeddings points into a fold-level
// cache when the encoder is fully frozen (the pre-extracted-features path).
struct BagRef {
    const InstanceBag* bag = nullptr;
    const Tensor* embeddings = nullptr;
};

struct TrainOutcome {
    Checkpoint best;  // lowest validation loss, ties to the earlier epoch
    std::vector<EpochStats> curve;
    std::size_t epochs_run = 0;
    bool frozen_unchanged = true;  // frozen groups bit-identical across the run
    bool eval_purity = true;       // zero sampling/augment events inside evaluations
};

// One optimization run with per-visit sampling, full-bag validation every
// epoch and early stopping on validation loss.
TrainOutcome train_one(MilModel& model, const std::vector<BagRef>& train_bags,
                       const std::vector<BagRef>& val_bags, const TrainConfig& cfg,
                       std::uint64_t fold_id);

// Full-bag evaluation: predictions for AUC plus the mean total loss under
// the same weighting used in training. Never samples or augments.
struct EvalOutcome {
    ScoredSet scored;
    double mean_loss = 0.0;
    bool purity = true;
};

EvalOutcome evaluate_bags(MilModel& model, const std::vector<BagRef>& bags,
                          const TrainConfig& cfg);

struct FoldResult {
    std::size_t fold_index = 0;
    Checkpoint best;
    double test_auc = 0.0;
    std::vector<EpochStats> curve;
    std::size_t epochs_run = 0;
    bool frozen_unchanged = true;
    bool eval_purity = true;
};

struct KfoldSummary {
    std::vector<FoldResult> folds;
    double mean_auc = 0.0;
    double std_auc = 0.0;  // population std over folds
    bool frozen_unchanged = true;
    bool eval_purity = true;
};

// One train_one per fold (shared frozen encoder, shared head init) with
// held-out test evaluation of each fold's best checkpoint.
KfoldSummary train_kfold(const Dataset& dev, const FoldPlan& plan, const Dataset& test,
                         const ModelConfig& mc, const TrainConfig& cfg, std::size_t jobs = 1);

struct SweepCell {
    SamplingPolicy policy;
    KfoldSummary summary;
    bool ok = false;
    std::string error;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::size_t argmax_index = 0;  // over cells that ran, highest mean AUC
};

// The reported policy grid: count:8 plus fractions 2%..100%.
std::vector<SamplingPolicy> default_policy_grid();

SweepResult sweep(const Dataset& dev, const FoldPlan& plan, const Dataset& test,
                  const ModelConfig& mc, const TrainConfig& base_cfg,
                  const std::vector<SamplingPolicy>& grid, std::size_t jobs = 1);

// Parameter groups to unfreeze for the fine-tuning stage. encoder.norm is
// rejected outright.
struct UnfreezeSpec {
    std::vector<std::string> groups{group::kBlock2};
    void validate() const;
};

struct StageReport {
    Checkpoint best;
    double test_auc = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::vector<EpochStats> curve;
    std::size_t epochs_run = 0;
    double lr = 0.0;
    bool eval_purity = true;
};

struct E2eReport {
    StageReport stage1;
    StageReport stage2;
    bool stage2_init_matches_stage1_best = false;
    bool stage2_block1_unchanged = false;
    bool stage2_norm_unchanged = false;
    bool stage2_block2_changed = false;
};

// Two-step fine-tuning: stage 1 trains the heads over a frozen encoder at a
// fixed 1024-instance budget; stage 2 restarts from the best stage-1
// checkpoint, unfreezes the listed groups, drops the learning rate tenfold
// and enables feature jitter. Both stages share one 80/20 split and report
// held-out AUC with a bootstrap interval.
E2eReport two_stage_e2e(const Dataset& dev, const Dataset& test, const ModelConfig& mc,
                        const TrainConfig& stage1_cfg, const UnfreezeSpec& unfreeze,
                        double stage2_augment_sigma, const BootstrapConfig& boot);

// Output writers shared by the CLI and the acceptance suite. All files are
// byte-deterministic for fixed inputs.
void write_kfold_outputs(const std::string& out_dir, const KfoldSummary& summary);
void write_sweep_outputs(const std::string& out_dir, const SweepResult& result);
void write_e2e_outputs(const std::string& out_dir, const E2eReport& report);

}  // namespace mil

#endif  // MIL_TRAIN_HPP
