// Command-line front end: synthetic data generation, training, sampling
// sweeps, two-stage fine-tuning, metric evaluation, attention heatmaps and
// the gradient-check gate.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>

#include "mil/checkpoint.hpp"
#include "mil/data.hpp"
#include "mil/errors.hpp"
#include "mil/eval.hpp"
#include "mil/gradcheck.hpp"
#include "mil/interpret.hpp"
#include "mil/train.hpp"

namespace fs = std::filesystem;

namespace {

struct Settings {
    mil::ModelConfig model;
    mil::TrainConfig train;
    double e2e_aug_sigma = 0.1;
    std::size_t bootstrap_resamples = 2000;
    double bootstrap_level = 0.95;
    std::size_t k = 10;
    std::size_t jobs = 1;
};

// Flat key=value overrides; unknown keys are rejected.
void apply_config_file(const std::string& path, Settings& s) {
    std::ifstream in(path);
    if (!in) throw mil::InvalidConfig("cannot open config file '" + path + "'");
    std::map<std::string, std::function<void(const std::string&)>> setters{
        {"lr", [&](const std::string& v) { s.train.lr = std::stod(v); }},
        {"max_epochs", [&](const std::string& v) { s.train.max_epochs = std::stoul(v); }},
        {"patience", [&](const std::string& v) { s.train.patience = std::stoul(v); }},
        {"c_bag", [&](const std::string& v) { s.train.c_bag = std::stod(v); }},
        {"c_inst", [&](const std::string& v) { s.train.c_inst = std::stod(v); }},
        {"pseudo_count", [&](const std::string& v) { s.train.pseudo_count = std::stoul(v); }},
        {"weight_decay", [&](const std::string& v) { s.train.weight_decay = std::stod(v); }},
        {"sample", [&](const std::string& v) { s.train.sampling = mil::SamplingPolicy::parse(v); }},
        {"hidden1", [&](const std::string& v) { s.model.hidden1 = std::stoul(v); }},
        {"hidden2", [&](const std::string& v) { s.model.hidden2 = std::stoul(v); }},
        {"attention_dim", [&](const std::string& v) { s.model.attention_dim = std::stoul(v); }},
        {"classifier_depth",
         [&](const std::string& v) { s.model.classifier_depth = std::stoul(v); }},
        {"block1_gain", [&](const std::string& v) { s.model.block1_init_gain = std::stod(v); }},
        {"e2e_aug_sigma", [&](const std::string& v) { s.e2e_aug_sigma = std::stod(v); }},
        {"bootstrap_resamples",
         [&](const std::string& v) { s.bootstrap_resamples = std::stoul(v); }},
        {"bootstrap_level", [&](const std::string& v) { s.bootstrap_level = std::stod(v); }},
        {"k", [&](const std::string& v) { s.k = std::stoul(v); }},
        {"jobs", [&](const std::string& v) { s.jobs = std::stoul(v); }},
    };
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw mil::InvalidConfig("config line " + std::to_string(line_no) +
                                     " is not key=value");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        auto it = setters.find(key);
        if (it == setters.end()) {
            throw mil::InvalidConfig("unknown config key '" + key + "'");
        }
        try {
            it->second(value);
        } catch (const mil::MilError&) {
            throw;
        } catch (const std::exception&) {
            throw mil::InvalidConfig("bad value for config key '" + key + "'");
        }
    }
}

void write_run_meta(const std::string& out_dir, const std::string& subcommand,
                    const std::map<std::string, std::string>& extra, const Settings& s) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "run.meta", std::ios::trunc);
    if (!out) throw mil::FormatError("cannot create run.meta under '" + out_dir + "'");
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    out << "subcommand=" << subcommand << "\n";
    out << "timestamp_unix_ms="
        << std::chrono::duration_cast<std::chrono::milliseconds>(now).count() << "\n";
    out << "bag_format_version=" << mil::kBagFormatVersion << "\n";
    out << "checkpoint_format_version=" << mil::kCheckpointVersion << "\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "lr=%.17g\nmax_epochs=%zu\npatience=%zu\nc_bag=%.17g\nc_inst=%.17g\n"
                  "pseudo_count=%zu\nweight_decay=%.17g\nsample=%s\nseed=%llu\n",
                  s.train.lr, s.train.max_epochs, s.train.patience, s.train.c_bag, s.train.c_inst,
                  s.train.pseudo_count, s.train.weight_decay, s.train.sampling.label().c_str(),
                  static_cast<unsigned long long>(s.train.seed));
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "hidden1=%zu\nhidden2=%zu\nattention_dim=%zu\nclassifier_depth=%zu\n"
                  "block1_gain=%.17g\nk=%zu\njobs=%zu\nbootstrap_resamples=%zu\n"
                  "bootstrap_level=%.17g\ne2e_aug_sigma=%.17g\n",
                  s.model.hidden1, s.model.hidden2, s.model.attention_dim,
                  s.model.classifier_depth, s.model.block1_init_gain, s.k, s.jobs,
                  s.bootstrap_resamples, s.bootstrap_level, s.e2e_aug_sigma);
    out << buf;
    for (const auto& [key, value] : extra) out << key << "=" << value << "\n";
}

mil::ScoredSet read_predictions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mil::FormatError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw mil::FormatError("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "bag_id,score,label") {
        throw mil::FormatError("'" + path + "' must start with header bag_id,score,label");
    }
    mil::ScoredSet set;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            throw mil::FormatError("'" + path + "' line " + std::to_string(line_no) +
                                   " is not bag_id,score,label");
        }
        try {
            set.push(std::stod(line.substr(c1 + 1, c2 - c1 - 1)),
                     std::stoi(line.substr(c2 + 1)), line.substr(0, c1));
        } catch (const mil::MilError&) {
            throw;
        } catch (const std::exception&) {
            throw mil::FormatError("'" + path + "' line " + std::to_string(line_no) +
                                   " has a bad score or label");
        }
    }
    return set;
}

int run(int argc, char** argv) {
    CLI::App app{"Attention-based multiple-instance learning with within-bag sampling"};
    app.require_subcommand(1);
    Settings s;
    std::string config_path;
    std::string out_dir;
    std::string dev_path, test_path;

    // --- gen ---
    auto* gen = app.add_subcommand("gen", "Generate a synthetic focal/diffuse dataset");
    mil::SyntheticSpec spec;
    std::string regime = "focal";
    gen->add_option("--regime", regime, "focal | diffuse")->check(CLI::IsMember({"focal", "diffuse"}));
    gen->add_option("--witness", spec.witness_rate, "Focal witness fraction (0,1)");
    gen->add_option("--sep", spec.separation, "Focal witness mean shift");
    gen->add_option("--shift", spec.shift, "Diffuse per-instance mean shift");
    gen->add_option("--bags", spec.bags_per_class, "Bags per class");
    gen->add_option("--size", spec.bag_size, "Instances per bag");
    gen->add_option("--dim", spec.feature_dim, "Feature dimension");
    gen->add_option("--seed", spec.seed, "Generator seed");
    gen->add_option("--out", out_dir, "Output directory")->required();

    // --- shared train/sweep/e2e options ---
    auto add_run_options = [&](CLI::App* cmd, bool with_k) {
        cmd->add_option("--dev", dev_path, "Development manifest (TSV)")->required();
        cmd->add_option("--test", test_path, "Held-out test manifest (TSV)")->required();
        cmd->add_option("--out", out_dir, "Output directory")->required();
        cmd->add_option("--seed", s.train.seed, "Master seed (default 1)");
        cmd->add_option("--config", config_path, "key=value overrides");
        cmd->add_option("--jobs", s.jobs, "Parallel fold/cell workers (default 1)");
        if (with_k) cmd->add_option("--k", s.k, "Cross-validation folds (default 10)");
    };

    auto* train_cmd = app.add_subcommand("train", "k-fold training with one sampling policy");
    add_run_options(train_cmd, true);
    std::string sample_text = "full";
    train_cmd->add_option("--sample", sample_text, "full | frac:P | count:K (default full)");

    auto* sweep_cmd = app.add_subcommand("sweep", "k-fold sweep over the sampling-policy grid");
    add_run_options(sweep_cmd, true);

    auto* e2e_cmd = app.add_subcommand("e2e", "Two-stage fine-tuning (frozen then partial)");
    add_run_options(e2e_cmd, false);
    e2e_cmd->add_option("--block1-gain", s.model.block1_init_gain,
                        "Init-range gain for encoder block1 (default 1.0)");
    e2e_cmd->add_option("--aug-sigma", s.e2e_aug_sigma,
                        "Stage-2 feature jitter sigma (default 0.1)");

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "AUC / ROC / bootstrap CI from predictions");
    std::string pred_path;
    eval_cmd->add_option("--pred", pred_path, "Predictions CSV (bag_id,score,label)")->required();
    eval_cmd->add_option("--out", out_dir, "Output directory")->required();
    eval_cmd->add_option("--resamples", s.bootstrap_resamples, "Bootstrap resamples (default 2000)");
    eval_cmd->add_option("--level", s.bootstrap_level, "Confidence level (default 0.95)");
    eval_cmd->add_option("--seed", s.train.seed, "Bootstrap seed");

    // --- heatmap ---
    auto* heat_cmd = app.add_subcommand("heatmap", "Render an attention heatmap for one bag");
    std::string ckpt_path, bag_path, prefix;
    heat_cmd->add_option("--checkpoint", ckpt_path, "Model checkpoint (.milc)")->required();
    heat_cmd->add_option("--bag", bag_path, "Bag file (.milb)")->required();
    heat_cmd->add_option("--out", prefix, "Output prefix (PREFIX.pgm, PREFIX.csv)")->required();

    // --- gradcheck ---
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient gate");
    std::uint64_t gc_seed = 7;
    std::size_t gc_size = 200, gc_dim = 32, gc_threads = 0;
    double gc_eps = 1e-3;
    std::string gc_out;
    grad_cmd->add_option("--seed", gc_seed, "Model/bag seed (default 7)");
    grad_cmd->add_option("--size", gc_size, "Bag size (default 200)");
    grad_cmd->add_option("--dim", gc_dim, "Feature dimension (default 32)");
    grad_cmd->add_option("--eps", gc_eps, "Central-difference step (default 1e-3)");
    grad_cmd->add_option("--threads", gc_threads, "Worker threads (default all)");
    grad_cmd->add_option("--out", gc_out, "Optional output directory");

    CLI11_PARSE(app, argc, argv);

    if (!config_path.empty()) apply_config_file(config_path, s);

    if (gen->parsed()) {
        spec.regime = regime == "focal" ? mil::SyntheticSpec::Regime::Focal
                                        : mil::SyntheticSpec::Regime::Diffuse;
        mil::DatasetManifest manifest = mil::generate_synthetic(spec, out_dir);
        write_run_meta(out_dir, "gen",
                       {{"regime", regime},
                        {"bags_per_class", std::to_string(spec.bags_per_class)},
                        {"bag_size", std::to_string(spec.bag_size)},
                        {"feature_dim", std::to_string(spec.feature_dim)},
                        {"gen_seed", std::to_string(spec.seed)}},
                       s);
        std::cout << "wrote " << manifest.entries.size() << " bags under " << out_dir << "\n";
        return 0;
    }

    if (train_cmd->parsed() || sweep_cmd->parsed() || e2e_cmd->parsed()) {
        mil::Dataset dev = mil::Dataset::load(dev_path);
        mil::Dataset test = mil::Dataset::load(test_path);
        if (dev.size() == 0 || test.size() == 0) {
            throw mil::InvalidConfig("datasets must be nonempty");
        }
        s.model.input_dim = dev.bags[0].dim();

        if (train_cmd->parsed()) {
            s.train.sampling = mil::SamplingPolicy::parse(sample_text);
            mil::FoldPlan plan = mil::split_kfold(dev.manifest, s.k, s.train.seed);
            mil::KfoldSummary summary =
                mil::train_kfold(dev, plan, test, s.model, s.train, s.jobs);
            mil::write_kfold_outputs(out_dir, summary);
            write_run_meta(out_dir, "train", {{"dev", dev_path}, {"test", test_path}}, s);
            std::cout << s.train.sampling.label() << "  "
                      << mil::format_mean_std(summary.mean_auc, summary.std_auc) << "\n";
            return 0;
        }
        if (sweep_cmd->parsed()) {
            mil::FoldPlan plan = mil::split_kfold(dev.manifest, s.k, s.train.seed);
            mil::SweepResult result = mil::sweep(dev, plan, test, s.model, s.train,
                                                 mil::default_policy_grid(), s.jobs);
            mil::write_sweep_outputs(out_dir, result);
            write_run_meta(out_dir, "sweep", {{"dev", dev_path}, {"test", test_path}}, s);
            std::ifstream report(fs::path(out_dir) / "report.txt");
            std::cout << report.rdbuf();
            bool any_failed = false;
            for (const auto& cell : result.cells) any_failed |= !cell.ok;
            return any_failed ? 2 : 0;
        }
        // e2e
        mil::UnfreezeSpec unfreeze;
        mil::BootstrapConfig boot;
        boot.resamples = s.bootstrap_resamples;
        boot.level = s.bootstrap_level;
        boot.seed = s.train.seed;
        mil::E2eReport report =
            mil::two_stage_e2e(dev, test, s.model, s.train, unfreeze, s.e2e_aug_sigma, boot);
        mil::write_e2e_outputs(out_dir, report);
        write_run_meta(out_dir, "e2e", {{"dev", dev_path}, {"test", test_path}}, s);
        std::cout << "stage1  "
                  << mil::format_auc_ci(report.stage1.test_auc, report.stage1.ci_lo,
                                        report.stage1.ci_hi)
                  << "\nstage2  "
                  << mil::format_auc_ci(report.stage2.test_auc, report.stage2.ci_lo,
                                        report.stage2.ci_hi)
                  << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        mil::ScoredSet set = read_predictions_csv(pred_path);
        const double auc_value = mil::auc(set);
        mil::BootstrapConfig boot;
        boot.resamples = s.bootstrap_resamples;
        boot.level = s.bootstrap_level;
        boot.seed = s.train.seed;
        const auto [lo, hi] = mil::bootstrap_ci(set, boot);
        const auto points = mil::roc_points(set);
        fs::create_directories(out_dir);
        {
            std::ofstream out(fs::path(out_dir) / "roc.csv", std::ios::trunc);
            out << "fpr,tpr\n";
            char buf[96];
            for (const auto& [fpr, tpr] : points) {
                std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", fpr, tpr);
                out << buf;
            }
        }
        {
            std::ofstream out(fs::path(out_dir) / "metrics.csv", std::ios::trunc);
            char buf[192];
            out << "n,auc,ci_lo,ci_hi,resamples,level\n";
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%zu,%.17g\n", set.size(),
                          auc_value, lo, hi, s.bootstrap_resamples, s.bootstrap_level);
            out << buf;
        }
        write_run_meta(out_dir, "eval", {{"pred", pred_path}}, s);
        std::cout << mil::format_auc_ci(auc_value, lo, hi) << "\n";
        return 0;
    }

    if (heat_cmd->parsed()) {
        mil::Checkpoint ckpt = mil::read_checkpoint(ckpt_path);
        mil::MilModel model = ckpt.restore();
        mil::InstanceBag bag = mil::read_bag(bag_path);
        mil::AttentionMap map = mil::attention_map(model, bag);
        mil::render_grid(map, prefix + ".pgm", prefix + ".csv");
        std::cout << "wrote " << prefix << ".pgm and " << prefix << ".csv (predicted class "
                  << map.predicted_class << ")\n";
        return 0;
    }

    if (grad_cmd->parsed()) {
        mil::GradCheckConfig cfg;
        cfg.eps = gc_eps;
        cfg.threads = gc_threads;
        const double err = mil::grad_check_seeded(gc_seed, gc_size, gc_dim, cfg);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "max_relative_error=%.3e", err);
        std::cout << buf << "\n";
        if (!gc_out.empty()) {
            fs::create_directories(gc_out);
            std::ofstream out(fs::path(gc_out) / "gradcheck.txt", std::ios::trunc);
            out << buf << "\n";
            write_run_meta(gc_out, "gradcheck", {{"gc_seed", std::to_string(gc_seed)}}, s);
        }
        return err < 1e-4 ? 0 : 2;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const mil::InvalidConfig& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const mil::MilError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
