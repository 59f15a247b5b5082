#include "mil/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "mil/adam.hpp"
#include "mil/errors.hpp"
#include "mil/instrument.hpp"

namespace fs = std::filesystem;

namespace mil {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw InvalidConfig("learning rate must be positive");
    if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
    if (patience < 1) throw InvalidConfig("patience must be >= 1");
    if (c_bag < 0.0 || c_inst < 0.0 || std::abs(c_bag + c_inst - 1.0) > 1e-9) {
        throw InvalidConfig("loss weights must be nonnegative and sum to 1");
    }
    if (pseudo_count < 1) throw InvalidConfig("pseudo-label count must be >= 1");
    if (weight_decay < 0.0) throw InvalidConfig("weight decay must be >= 0");
    if (augment_sigma < 0.0) throw InvalidConfig("augmentation sigma must be >= 0");
}

std::string TrainConfig::fingerprint() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "lr=%.17g;max_epochs=%zu;patience=%zu;seed=%llu;sample=%s;c_bag=%.17g;"
                  "c_inst=%.17g;B=%zu;wd=%.17g;aug=%.17g",
                  lr, max_epochs, patience, static_cast<unsigned long long>(seed),
                  sampling.label().c_str(), c_bag, c_inst, pseudo_count, weight_decay,
                  augment_sigma);
    return buf;
}

namespace {

// Copies the embedding rows selected by a sampled bag. Row-wise gemm makes
// this bit-identical to encoding the sampled features directly.
Tensor gather_rows(const Tensor& embeddings, const std::vector<std::size_t>& rows) {
    Tensor out(rows.size(), embeddings.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = embeddings.row(rows[i]);
        std::copy(src, src + embeddings.cols(), out.row(i));
    }
    return out;
}

bool want_cache(const MilModel& model, const TrainConfig& cfg,
                const std::vector<BagRef>& a, const std::vector<BagRef>& b) {
    if (!model.encoder_fully_frozen() || cfg.augment_sigma > 0.0) return false;
    auto has_emb = [](const std::vector<BagRef>& refs) {
        return std::all_of(refs.begin(), refs.end(),
                           [](const BagRef& r) { return r.embeddings != nullptr; });
    };
    return has_emb(a) && has_emb(b);
}

double run_train_step(MilModel& model, AdamState& adam, const BagRef& ref,
                      const InstanceBag& sampled, const TrainConfig& cfg, bool use_cache) {
    Tensor gathered;
    const Tensor* feats = &sampled.features;
    BagForward::From from = BagForward::From::Instances;
    if (use_cache) {
        gathered = gather_rows(*ref.embeddings, sampled.original_indices);
        feats = &gathered;
        from = BagForward::From::Embeddings;
    }
    BagForward fwd(model, *feats, from);

    std::vector<PseudoLabel> pseudo;
    double cb = cfg.c_bag;
    double ci = cfg.c_inst;
    if (ci > 0.0 && sampled.size() >= 2) {
        pseudo = pseudo_labels(fwd.attention_row(sampled.label), 0, cfg.pseudo_count);
    } else {
        // A 1-instance visit cannot carry instance supervision; fall back to
        // the bag term alone for this visit.
        cb = 1.0;
        ci = 0.0;
    }
    const NodeId loss = fwd.add_total_loss(sampled.label, pseudo, cb, ci);
    const double loss_value = fwd.graph().value(loss).scalar_value();
    model.zero_grads();
    fwd.graph().backward(loss);
    adam.step(cfg.lr);
    return loss_value;
}

}  // namespace

EvalOutcome evaluate_bags(MilModel& model, const std::vector<BagRef>& bags,
                          const TrainConfig& cfg) {
    if (bags.empty()) throw InvalidConfig("evaluation set is empty");
    instrument::PurityProbe probe;
    const bool use_cache = want_cache(model, cfg, bags, {});
    EvalOutcome out;
    double loss_sum = 0.0;
    for (const BagRef& ref : bags) {
        const InstanceBag& bag = *ref.bag;
        const Tensor* feats = use_cache ? ref.embeddings : &bag.features;
        BagForward fwd(model, *feats,
                       use_cache ? BagForward::From::Embeddings : BagForward::From::Instances);
        std::vector<PseudoLabel> pseudo;
        double cb = cfg.c_bag;
        double ci = cfg.c_inst;
        if (ci > 0.0 && bag.size() >= 2) {
            pseudo = pseudo_labels(fwd.attention_row(bag.label), 0, cfg.pseudo_count);
        } else {
            cb = 1.0;
            ci = 0.0;
        }
        const NodeId loss = fwd.add_total_loss(bag.label, pseudo, cb, ci);
        loss_sum += fwd.graph().value(loss).scalar_value();
        BagPrediction pred = fwd.prediction();
        out.scored.push(pred.class_probabilities[1], bag.label == 1 ? 1 : 0, bag.bag_id);
    }
    out.mean_loss = loss_sum / static_cast<double>(bags.size());
    out.purity = probe.delta() == 0;
    return out;
}

TrainOutcome train_one(MilModel& model, const std::vector<BagRef>& train_bags,
                       const std::vector<BagRef>& val_bags, const TrainConfig& cfg,
                       std::uint64_t fold_id) {
    cfg.validate();
    if (train_bags.empty() || val_bags.empty()) {
        throw InvalidConfig("training needs nonempty train and validation sets");
    }
    const bool use_cache = want_cache(model, cfg, train_bags, val_bags);

    std::vector<std::pair<std::string, Tensor>> frozen_before;
    for (const Parameter* p : model.parameters()) {
        if (!p->trainable) frozen_before.emplace_back(p->name, p->value);
    }

    AdamState adam(model.parameters(),
                   {0.9, 0.999, 1e-8, cfg.weight_decay});

    TrainOutcome out;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<std::size_t> order(train_bags.size());
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffle_rng(cfg.seed, {stream_tag::kShuffle, fold_id, epoch});
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        }

        double train_loss_sum = 0.0;
        for (std::size_t oi : order) {
            const BagRef& ref = train_bags[oi];
            const InstanceBag& bag = *ref.bag;
            const std::uint64_t bag_key = hash_string(bag.bag_id.data(), bag.bag_id.size());
            try {
                RngStream sample_rng(cfg.seed, {stream_tag::kSample, fold_id, epoch, bag_key});
                InstanceBag sampled = sample_bag(bag, cfg.sampling, sample_rng);
                if (cfg.augment_sigma > 0.0) {
                    RngStream aug_rng(cfg.seed,
                                      {stream_tag::kAugment, fold_id, epoch, bag_key});
                    sampled = augment_features(sampled, cfg.augment_sigma, aug_rng);
                }
                train_loss_sum += run_train_step(model, adam, ref, sampled, cfg, use_cache);
            } catch (const InvalidValue& e) {
                throw DivergenceError(epoch, bag.bag_id, e.what());
            }
        }

        EvalOutcome ev;
        try {
            ev = evaluate_bags(model, val_bags, cfg);
        } catch (const InvalidValue& e) {
            throw DivergenceError(epoch, "validation", e.what());
        }
        out.eval_purity = out.eval_purity && ev.purity;
        const double val_auc = auc(ev.scored);
        out.curve.push_back({epoch, train_loss_sum / static_cast<double>(train_bags.size()),
                             ev.mean_loss, val_auc});
        out.epochs_run = epoch;

        if (ev.mean_loss < best_loss) {
            best_loss = ev.mean_loss;
            since_best = 0;
            out.best = Checkpoint::snapshot(
                model, {static_cast<std::uint32_t>(epoch), ev.mean_loss, val_auc,
                        cfg.fingerprint()});
        } else {
            ++since_best;
        }
        if (since_best >= cfg.patience) break;
    }

    for (const auto& [name, before] : frozen_before) {
        if (!model.find(name).value.bits_equal(before)) out.frozen_unchanged = false;
    }
    return out;
}

// ---------------------------------------------------------------------------
// k-fold, sweep, two-stage
// ---------------------------------------------------------------------------

namespace {

// Runs fn(0..n-1) on up to `jobs` threads; returns one exception slot per
// index so callers choose between rethrowing and marking failures.
std::vector<std::exception_ptr> parallel_for(std::size_t n, std::size_t jobs,
                                             const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
        return errors;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(jobs, n);
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    return errors;
}

std::vector<Tensor> encode_all(MilModel& model, const Dataset& ds) {
    std::vector<Tensor> out;
    out.reserve(ds.size());
    for (const InstanceBag& bag : ds.bags) out.push_back(model.encode(bag.features));
    return out;
}

std::vector<BagRef> make_refs(const Dataset& ds, const std::vector<Tensor>& emb,
                              const std::vector<std::size_t>& ids) {
    std::vector<BagRef> refs;
    refs.reserve(ids.size());
    for (std::size_t id : ids) refs.push_back({&ds.bags[id], &emb[id]});
    return refs;
}

std::vector<BagRef> make_refs_all(const Dataset& ds, const std::vector<Tensor>& emb) {
    std::vector<std::size_t> ids(ds.size());
    std::iota(ids.begin(), ids.end(), 0);
    return make_refs(ds, emb, ids);
}

FoldResult run_fold(const MilModel& base_model, const Dataset& dev,
                    const std::vector<Tensor>& dev_emb, const Dataset& test,
                    const std::vector<Tensor>& test_emb, const FoldPlan::Fold& fold,
                    std::size_t fold_index, const TrainConfig& cfg) {
    MilModel model = base_model;
    const std::vector<BagRef> train_refs = make_refs(dev, dev_emb, fold.train_ids);
    const std::vector<BagRef> val_refs = make_refs(dev, dev_emb, fold.val_ids);
    TrainOutcome outcome;
    try {
        outcome = train_one(model, train_refs, val_refs, cfg, fold_index);
    } catch (const DivergenceError& e) {
        throw DivergenceError(e.epoch, e.bag_id,
                              "fold " + std::to_string(fold_index) + " diverged");
    }
    MilModel best_model = outcome.best.restore();
    const std::vector<BagRef> test_refs = make_refs_all(test, test_emb);
    EvalOutcome ev = evaluate_bags(best_model, test_refs, cfg);

    FoldResult result;
    result.fold_index = fold_index;
    result.best = std::move(outcome.best);
    result.test_auc = auc(ev.scored);
    result.curve = std::move(outcome.curve);
    result.epochs_run = outcome.epochs_run;
    result.frozen_unchanged = outcome.frozen_unchanged;
    result.eval_purity = outcome.eval_purity && ev.purity;
    return result;
}

KfoldSummary summarize(std::vector<FoldResult> folds) {
    KfoldSummary summary;
    summary.folds = std::move(folds);
    double sum = 0.0;
    for (const FoldResult& f : summary.folds) {
        sum += f.test_auc;
        summary.frozen_unchanged = summary.frozen_unchanged && f.frozen_unchanged;
        summary.eval_purity = summary.eval_purity && f.eval_purity;
    }
    const double k = static_cast<double>(summary.folds.size());
    summary.mean_auc = sum / k;
    double sq = 0.0;
    for (const FoldResult& f : summary.folds) {
        const double d = f.test_auc - summary.mean_auc;
        sq += d * d;
    }
    summary.std_auc = std::sqrt(sq / k);  // population std over folds
    return summary;
}

}  // namespace

KfoldSummary train_kfold(const Dataset& dev, const FoldPlan& plan, const Dataset& test,
                         const ModelConfig& mc, const TrainConfig& cfg, std::size_t jobs) {
    cfg.validate();
    if (plan.folds.empty()) throw InvalidConfig("fold plan is empty");

    // One frozen extractor shared by every fold, like a fixed pretrained
    // backbone; embeddings are computed once per dataset.
    MilModel base_model = MilModel::init(mc, cfg.seed);
    base_model.freeze_encoder();
    std::vector<Tensor> dev_emb = encode_all(base_model, dev);
    std::vector<Tensor> test_emb = encode_all(base_model, test);

    std::vector<FoldResult> folds(plan.folds.size());
    auto errors = parallel_for(plan.folds.size(), jobs, [&](std::size_t f) {
        folds[f] = run_fold(base_model, dev, dev_emb, test, test_emb, plan.folds[f], f, cfg);
    });
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
    return summarize(std::move(folds));
}

std::vector<SamplingPolicy> default_policy_grid() {
    return {SamplingPolicy::fixed_count(8),  SamplingPolicy::fraction_of(0.02),
            SamplingPolicy::fraction_of(0.06), SamplingPolicy::fraction_of(0.10),
            SamplingPolicy::fraction_of(0.30), SamplingPolicy::fraction_of(0.60),
            SamplingPolicy::fraction_of(0.90), SamplingPolicy::full()};
}

SweepResult sweep(const Dataset& dev, const FoldPlan& plan, const Dataset& test,
                  const ModelConfig& mc, const TrainConfig& base_cfg,
                  const std::vector<SamplingPolicy>& grid, std::size_t jobs) {
    base_cfg.validate();
    if (grid.empty()) throw InvalidConfig("sweep grid is empty");
    if (plan.folds.empty()) throw InvalidConfig("fold plan is empty");

    MilModel base_model = MilModel::init(mc, base_cfg.seed);
    base_model.freeze_encoder();
    std::vector<Tensor> dev_emb = encode_all(base_model, dev);
    std::vector<Tensor> test_emb = encode_all(base_model, test);

    const std::size_t k = plan.folds.size();
    const std::size_t n_tasks = grid.size() * k;
    std::vector<FoldResult> fold_results(n_tasks);

    // (policy x fold) tasks share one pool for load balance; aggregation
    // below is index-ordered, so the schedule cannot affect the output.
    auto errors = parallel_for(n_tasks, jobs, [&](std::size_t t) {
        const std::size_t p = t / k;
        const std::size_t f = t % k;
        TrainConfig cfg = base_cfg;
        cfg.sampling = grid[p];
        fold_results[t] =
            run_fold(base_model, dev, dev_emb, test, test_emb, plan.folds[f], f, cfg);
    });

    SweepResult result;
    for (std::size_t p = 0; p < grid.size(); ++p) {
        SweepCell cell;
        cell.policy = grid[p];
        std::string first_error;
        std::vector<FoldResult> folds;
        for (std::size_t f = 0; f < k; ++f) {
            const std::size_t t = p * k + f;
            if (errors[t]) {
                if (first_error.empty()) {
                    try {
                        std::rethrow_exception(errors[t]);
                    } catch (const std::exception& e) {
                        first_error = e.what();
                    }
                }
            } else {
                folds.push_back(fold_results[t]);
            }
        }
        if (first_error.empty()) {
            cell.ok = true;
            cell.summary = summarize(std::move(folds));
        } else {
            cell.error = first_error;
        }
        result.cells.push_back(std::move(cell));
    }

    result.argmax_index = 0;
    double best = -1.0;
    for (std::size_t p = 0; p < result.cells.size(); ++p) {
        if (result.cells[p].ok && result.cells[p].summary.mean_auc > best) {
            best = result.cells[p].summary.mean_auc;
            result.argmax_index = p;
        }
    }
    return result;
}

void UnfreezeSpec::validate() const {
    if (groups.empty()) throw InvalidConfig("unfreeze spec lists no groups");
    for (const std::string& g : groups) {
        if (g == group::kNorm) {
            throw InvalidConfig("encoder.norm can never be unfrozen");
        }
        if (g != group::kBlock1 && g != group::kBlock2 && g != group::kAttention &&
            g != group::kBagClassifier && g != group::kInstanceHead) {
            throw InvalidConfig("unknown parameter group '" + g + "' in unfreeze spec");
        }
    }
}

namespace {

StageReport stage_report(const TrainOutcome& outcome, MilModel& best_model,
                         const std::vector<BagRef>& test_refs, const TrainConfig& cfg,
                         const BootstrapConfig& boot) {
    EvalOutcome ev = evaluate_bags(best_model, test_refs, cfg);
    StageReport report;
    report.best = outcome.best;
    report.test_auc = auc(ev.scored);
    auto [lo, hi] = bootstrap_ci(ev.scored, boot);
    report.ci_lo = lo;
    report.ci_hi = hi;
    report.curve = outcome.curve;
    report.epochs_run = outcome.epochs_run;
    report.lr = cfg.lr;
    report.eval_purity = outcome.eval_purity && ev.purity;
    return report;
}

bool group_bits_equal(const MilModel& a, const MilModel& b, const char* grp) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->group != grp) continue;
        if (!pa[i]->value.bits_equal(pb[i]->value)) return false;
    }
    return true;
}

}  // namespace

E2eReport two_stage_e2e(const Dataset& dev, const Dataset& test, const ModelConfig& mc,
                        const TrainConfig& stage1_cfg, const UnfreezeSpec& unfreeze,
                        double stage2_augment_sigma, const BootstrapConfig& boot) {
    unfreeze.validate();
    TrainConfig cfg1 = stage1_cfg;
    cfg1.sampling = SamplingPolicy::fixed_count(1024);  // fixed instance budget
    cfg1.augment_sigma = 0.0;
    cfg1.validate();

    const FoldPlan plan = split_kfold(dev.manifest, 1, cfg1.seed);
    const FoldPlan::Fold& fold = plan.folds[0];

    // Stage 1: heads over the frozen extractor.
    MilModel model = MilModel::init(mc, cfg1.seed);
    model.freeze_encoder();
    std::vector<Tensor> dev_emb = encode_all(model, dev);
    std::vector<Tensor> test_emb = encode_all(model, test);
    const std::vector<BagRef> train_refs = make_refs(dev, dev_emb, fold.train_ids);
    const std::vector<BagRef> val_refs = make_refs(dev, dev_emb, fold.val_ids);

    TrainOutcome outcome1 = train_one(model, train_refs, val_refs, cfg1, /*fold_id=*/0);
    MilModel best1 = outcome1.best.restore();
    E2eReport report;
    {
        const std::vector<BagRef> test_refs = make_refs_all(test, test_emb);
        report.stage1 = stage_report(outcome1, best1, test_refs, cfg1, boot);
    }

    // Stage 2: restart from the best stage-1 weights, open up the listed
    // groups, train tenfold slower with feature jitter.
    MilModel model2 = outcome1.best.restore();
    report.stage2_init_matches_stage1_best = true;
    {
        auto pa = model2.parameters();
        auto pb = best1.parameters();
        for (std::size_t i = 0; i < pa.size(); ++i) {
            if (!pa[i]->value.bits_equal(pb[i]->value)) {
                report.stage2_init_matches_stage1_best = false;
            }
        }
    }
    for (const std::string& g : unfreeze.groups) model2.set_group_trainable(g, true);

    TrainConfig cfg2 = cfg1;
    cfg2.lr = cfg1.lr / 10.0;
    cfg2.augment_sigma = stage2_augment_sigma;

    const MilModel stage2_init = model2;
    // No embedding cache here: the encoder is partially trainable.
    std::vector<BagRef> train_raw, val_raw, test_raw;
    for (std::size_t id : fold.train_ids) train_raw.push_back({&dev.bags[id], nullptr});
    for (std::size_t id : fold.val_ids) val_raw.push_back({&dev.bags[id], nullptr});
    for (const InstanceBag& bag : test.bags) test_raw.push_back({&bag, nullptr});

    TrainOutcome outcome2 = train_one(model2, train_raw, val_raw, cfg2, /*fold_id=*/0);
    MilModel best2 = outcome2.best.restore();
    report.stage2 = stage_report(outcome2, best2, test_raw, cfg2, boot);

    report.stage2_block1_unchanged = group_bits_equal(model2, stage2_init, group::kBlock1);
    report.stage2_norm_unchanged = group_bits_equal(model2, stage2_init, group::kNorm);
    report.stage2_block2_changed = !group_bits_equal(model2, stage2_init, group::kBlock2);
    return report;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot create '" + path.string() + "'");
    return out;
}

void write_curve(const fs::path& path, const std::vector<EpochStats>& curve) {
    std::ofstream out = open_out(path);
    out << "epoch,train_loss,val_loss,val_auc\n";
    char buf[160];
    for (const EpochStats& e : curve) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_auc);
        out << buf;
    }
}

void write_fold_rows(std::ofstream& out, const std::string& prefix,
                     const std::vector<FoldResult>& folds) {
    char buf[256];
    for (const FoldResult& f : folds) {
        std::snprintf(buf, sizeof(buf), "%s%zu,%u,%.17g,%.17g,%.17g,%zu\n", prefix.c_str(),
                      f.fold_index, f.best.meta.epoch, f.best.meta.val_loss, f.best.meta.val_auc,
                      f.test_auc, f.epochs_run);
        out << buf;
    }
}

}  // namespace

void write_kfold_outputs(const std::string& out_dir, const KfoldSummary& summary) {
    fs::create_directories(fs::path(out_dir) / "curves");
    {
        std::ofstream out = open_out(fs::path(out_dir) / "summary.csv");
        out << "k,mean_auc,std_auc\n";
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", summary.folds.size(),
                      summary.mean_auc, summary.std_auc);
        out << buf;
    }
    {
        std::ofstream out = open_out(fs::path(out_dir) / "folds.csv");
        out << "fold,best_epoch,best_val_loss,best_val_auc,test_auc,epochs_run\n";
        write_fold_rows(out, "", summary.folds);
    }
    for (const FoldResult& f : summary.folds) {
        write_curve(fs::path(out_dir) / "curves" /
                        ("fold_" + std::to_string(f.fold_index) + ".csv"),
                    f.curve);
        write_checkpoint(
            (fs::path(out_dir) / ("fold_" + std::to_string(f.fold_index) + ".milc")).string(),
            f.best);
    }
}

void write_sweep_outputs(const std::string& out_dir, const SweepResult& result) {
    fs::create_directories(out_dir);
    {
        std::ofstream out = open_out(fs::path(out_dir) / "summary.csv");
        out << "policy,mean_auc,std_auc,status\n";
        char buf[192];
        for (const SweepCell& cell : result.cells) {
            if (cell.ok) {
                std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,ok\n",
                              cell.policy.label().c_str(), cell.summary.mean_auc,
                              cell.summary.std_auc);
            } else {
                std::snprintf(buf, sizeof(buf), "%s,nan,nan,failed\n",
                              cell.policy.label().c_str());
            }
            out << buf;
        }
    }
    {
        std::ofstream out = open_out(fs::path(out_dir) / "folds.csv");
        out << "policy,fold,best_epoch,best_val_loss,best_val_auc,test_auc,epochs_run\n";
        for (const SweepCell& cell : result.cells) {
            if (cell.ok) write_fold_rows(out, cell.policy.label() + ",", cell.summary.folds);
        }
    }
    {
        std::vector<ReportRow> rows;
        for (const SweepCell& cell : result.cells) {
            if (!cell.ok) continue;
            ReportRow row;
            row.label = cell.policy.label();
            row.mean_auc = cell.summary.mean_auc;
            row.has_std = true;
            row.std_auc = cell.summary.std_auc;
            rows.push_back(row);
        }
        std::ofstream out = open_out(fs::path(out_dir) / "report.txt");
        if (!rows.empty()) {
            out << report_table(rows).text;
            out << "argmax: " << result.cells[result.argmax_index].policy.label() << "\n";
        }
        for (const SweepCell& cell : result.cells) {
            if (!cell.ok) out << "failed: " << cell.policy.label() << ": " << cell.error << "\n";
        }
    }
}

void write_e2e_outputs(const std::string& out_dir, const E2eReport& report) {
    fs::create_directories(fs::path(out_dir) / "curves");
    {
        std::ofstream out = open_out(fs::path(out_dir) / "summary.csv");
        out << "stage,auc,ci_lo,ci_hi\n";
        char buf[160];
        std::snprintf(buf, sizeof(buf), "stage1,%.17g,%.17g,%.17g\n", report.stage1.test_auc,
                      report.stage1.ci_lo, report.stage1.ci_hi);
        out << buf;
        std::snprintf(buf, sizeof(buf), "stage2,%.17g,%.17g,%.17g\n", report.stage2.test_auc,
                      report.stage2.ci_lo, report.stage2.ci_hi);
        out << buf;
    }
    write_curve(fs::path(out_dir) / "curves" / "stage1.csv", report.stage1.curve);
    write_curve(fs::path(out_dir) / "curves" / "stage2.csv", report.stage2.curve);
    write_checkpoint((fs::path(out_dir) / "stage1.milc").string(), report.stage1.best);
    write_checkpoint((fs::path(out_dir) / "stage2.milc").string(), report.stage2.best);
    {
        std::vector<ReportRow> rows(2);
        rows[0].label = "stage1";
        rows[0].mean_auc = report.stage1.test_auc;
        rows[0].has_ci = true;
        rows[0].ci_lo = report.stage1.ci_lo;
        rows[0].ci_hi = report.stage1.ci_hi;
        rows[1].label = "stage2";
        rows[1].mean_auc = report.stage2.test_auc;
        rows[1].has_ci = true;
        rows[1].ci_lo = report.stage2.ci_lo;
        rows[1].ci_hi = report.stage2.ci_hi;
        std::ofstream out = open_out(fs::path(out_dir) / "report.txt");
        out << report_table(rows).text;
    }
}

}  // namespace mil
