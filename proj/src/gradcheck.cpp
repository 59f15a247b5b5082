#include "mil/gradcheck.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "mil/data.hpp"
#include "mil/errors.hpp"
#include "mil/rng.hpp"

namespace mil {

namespace {

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

double clamped_log(double x) { return std::log(x < Graph::kLogFloor ? Graph::kLogFloor : x); }

// Hand-rolled forward of the MIL loss with stage caches. Perturbing a
// parameter entry re-evaluates only the stages it can touch; the stage
// outputs for everything upstream come from the cache. The math mirrors the
// graph ops (max-subtracted softmax, floored log) so both paths evaluate
// the same function.
class StagedLossEvaluator {
public:
    StagedLossEvaluator(const MilModel& model, const Tensor& features, std::size_t bag_label,
                        const std::vector<PseudoLabel>& pseudo, double c_bag, double c_inst)
        : model_(&model),
          cfg_(model.config()),
          x_(features),
          label_(bag_label),
          pseudo_(pseudo),
          c_bag_(c_bag),
          c_inst_(c_inst) {
        const Tensor& w1 = p("encoder.block1.weight");
        const Tensor& b1 = p("encoder.block1.bias");
        z1pre_ = affine(x_, w1, b1);
        z1_ = relu(z1pre_);
        const Tensor& w2 = p("encoder.block2.weight");
        const Tensor& b2 = p("encoder.block2.bias");
        z2pre_ = affine(z1_, w2, b2);
        h_ = normalize(relu(z2pre_));

        const std::size_t m = x_.rows();
        apre_.resize(cfg_.n_classes);
        gpre_.resize(cfg_.n_classes);
        ag_.resize(cfg_.n_classes);
        scores_.resize(cfg_.n_classes);
        for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
            const std::string cp = "attention.c" + std::to_string(c);
            apre_[c] = gemm(h_, false, p(cp + ".V"), false);
            gpre_[c] = gemm(h_, false, p(cp + ".U"), false);
            ag_[c] = Tensor(m, cfg_.attention_dim);
            for (std::size_t i = 0; i < ag_[c].size(); ++i) {
                ag_[c][i] = std::tanh(apre_[c][i]) / (1.0 + std::exp(-gpre_[c][i]));
            }
            scores_[c] = score_row(ag_[c], p(cp + ".w"));
        }
        // Local copies of the classifier stack; head perturbations mutate
        // these, never the shared model.
        heads_.resize(cfg_.n_classes);
        for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
            const std::string hp = "bag_classifier.c" + std::to_string(c);
            for (std::size_t d = 0; d < cfg_.classifier_depth; ++d) {
                const std::string lp = hp + ".l" + std::to_string(d);
                heads_[c].push_back({p(lp + ".weight"), p(lp + ".bias")});
            }
        }
        ilogits_ = affine(h_, p("instance_head.weight"), p("instance_head.bias"));
        base_inst_ce_ = instance_ce(ilogits_);
        {
            std::vector<double> logits(cfg_.n_classes);
            for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
                logits[c] = class_logit(c, scores_[c], h_);
            }
            base_bag_ce_ = -clamped_log(softmax(logits)[label_]);
        }
        base_loss_ = combine(base_bag_ce_, base_inst_ce_);
    }

    double base_loss() const { return base_loss_; }

    // Loss with params[name][index] shifted by delta. The entry's owning
    // group decides which stage boundary to restart from.
    double loss_with(const Parameter& param, std::size_t index, double delta) {
        const std::string& name = param.name;
        const std::size_t m = x_.rows();
        if (param.group == group::kBlock1) {
            std::vector<double> col(m);
            const std::size_t h1 = cfg_.hidden1;
            if (name == "encoder.block1.weight") {
                const std::size_t i = index / h1, j = index % h1;
                for (std::size_t r = 0; r < m; ++r) {
                    col[r] = z1pre_.at(r, j) + delta * x_.at(r, i);
                }
                return loss_from_z1pre_col(j, col);
            }
            const std::size_t j = index;
            for (std::size_t r = 0; r < m; ++r) col[r] = z1pre_.at(r, j) + delta;
            return loss_from_z1pre_col(j, col);
        }
        if (param.group == group::kBlock2) {
            std::vector<double> col(m);
            const std::size_t h2 = cfg_.hidden2;
            if (name == "encoder.block2.weight") {
                const std::size_t i = index / h2, j = index % h2;
                for (std::size_t r = 0; r < m; ++r) {
                    col[r] = z2pre_.at(r, j) + delta * z1_.at(r, i);
                }
                return loss_from_z2pre_col(j, col);
            }
            const std::size_t j = index;
            for (std::size_t r = 0; r < m; ++r) col[r] = z2pre_.at(r, j) + delta;
            return loss_from_z2pre_col(j, col);
        }
        if (param.group == group::kAttention) {
            return loss_from_attention(param, index, delta);
        }
        if (param.group == group::kBagClassifier) {
            return loss_from_heads(param, index, delta);
        }
        if (param.group == group::kInstanceHead) {
            return loss_from_instance_head(param, index, delta);
        }
        throw InvalidConfig("grad check cannot place parameter '" + name + "'");
    }

private:
    const Tensor& p(const std::string& name) const { return model_->find(name).value; }

    static Tensor relu(const Tensor& t) {
        Tensor out(t.rows(), t.cols());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0.0 ? t[i] : 0.0;
        return out;
    }

    static Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
        Tensor out = gemm(x, false, w, false);
        for (std::size_t r = 0; r < out.rows(); ++r) {
            double* row = out.row(r);
            for (std::size_t j = 0; j < out.cols(); ++j) row[j] += b[j];
        }
        return out;
    }

    Tensor normalize(const Tensor& z2) const {
        const Tensor& mean = p("encoder.norm.mean");
        const Tensor& inv_std = p("encoder.norm.inv_std");
        Tensor out(z2.rows(), z2.cols());
        for (std::size_t r = 0; r < z2.rows(); ++r) {
            for (std::size_t j = 0; j < z2.cols(); ++j) {
                out.at(r, j) = (z2.at(r, j) - mean[j]) * inv_std[j];
            }
        }
        return out;
    }

    static std::vector<double> score_row(const Tensor& ag, const Tensor& w) {
        std::vector<double> s(ag.rows(), 0.0);
        for (std::size_t r = 0; r < ag.rows(); ++r) {
            const double* row = ag.row(r);
            double acc = 0.0;
            for (std::size_t l = 0; l < ag.cols(); ++l) acc += w[l] * row[l];
            s[r] = acc;
        }
        return s;
    }

    static std::vector<double> softmax(const std::vector<double>& x) {
        double mx = x[0];
        for (double v : x) mx = std::max(mx, v);
        std::vector<double> y(x.size());
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        for (double& v : y) v /= s;
        return y;
    }

    // attn = softmax(scores); rep = attn * H; logit through the class head.
    double class_logit(std::size_t c, const std::vector<double>& scores,
                       const Tensor& h) const {
        const std::vector<double> attn = softmax(scores);
        std::vector<double> rep(cfg_.hidden2, 0.0);
        for (std::size_t r = 0; r < h.rows(); ++r) {
            const double a = attn[r];
            const double* row = h.row(r);
            for (std::size_t j = 0; j < cfg_.hidden2; ++j) rep[j] += a * row[j];
        }
        return head_logit(c, rep);
    }

    double head_logit(std::size_t c, std::vector<double> act) const {
        for (std::size_t d = 0; d + 1 < cfg_.classifier_depth; ++d) {
            const Tensor& w = heads_[c][d].first;
            const Tensor& b = heads_[c][d].second;
            std::vector<double> next(cfg_.hidden2, 0.0);
            for (std::size_t i = 0; i < cfg_.hidden2; ++i) {
                const double a = act[i];
                if (a == 0.0) continue;
                for (std::size_t j = 0; j < cfg_.hidden2; ++j) next[j] += a * w.at(i, j);
            }
            for (std::size_t j = 0; j < cfg_.hidden2; ++j) {
                next[j] += b[j];
                if (next[j] < 0.0) next[j] = 0.0;
            }
            act = std::move(next);
        }
        const auto& [w, b] = heads_[c][cfg_.classifier_depth - 1];
        double out = b[0];
        for (std::size_t j = 0; j < cfg_.hidden2; ++j) out += act[j] * w[j];
        return out;
    }

    double combine(double bag_ce, double inst_ce) const {
        return c_inst_ > 0.0 ? c_bag_ * bag_ce + c_inst_ * inst_ce : c_bag_ * bag_ce;
    }

    double instance_ce(const Tensor& ilogits) const {
        if (pseudo_.empty()) return 0.0;
        double ce = 0.0;
        const double unit = 1.0 / static_cast<double>(pseudo_.size());
        for (const PseudoLabel& pl : pseudo_) {
            const double l0 = ilogits.at(pl.instance, 0);
            const double l1 = ilogits.at(pl.instance, 1);
            const double mx = std::max(l0, l1);
            const double e0 = std::exp(l0 - mx);
            const double e1 = std::exp(l1 - mx);
            const double prob = (pl.label == 1 ? e1 : e0) / (e0 + e1);
            ce -= unit * clamped_log(prob);
        }
        return ce;
    }

    double finish_from_scores(const std::vector<std::vector<double>>& scores, const Tensor& h,
                              double inst_ce) const {
        std::vector<double> logits(cfg_.n_classes);
        for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
            logits[c] = class_logit(c, scores[c], h);
        }
        return combine(-clamped_log(softmax(logits)[label_]), inst_ce);
    }

    double loss_from_h(const Tensor& h) const {
        std::vector<std::vector<double>> scores(cfg_.n_classes);
        for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
            const std::string cp = "attention.c" + std::to_string(c);
            Tensor apre = gemm(h, false, p(cp + ".V"), false);
            Tensor gpre = gemm(h, false, p(cp + ".U"), false);
            Tensor ag(h.rows(), cfg_.attention_dim);
            for (std::size_t i = 0; i < ag.size(); ++i) {
                ag[i] = std::tanh(apre[i]) / (1.0 + std::exp(-gpre[i]));
            }
            scores[c] = score_row(ag, p(cp + ".w"));
        }
        const Tensor ilogits =
            affine(h, p("instance_head.weight"), p("instance_head.bias"));
        return finish_from_scores(scores, h, instance_ce(ilogits));
    }

    double loss_from_z1pre_col(std::size_t j, const std::vector<double>& newcol) const {
        const std::size_t m = x_.rows();
        const Tensor& w2 = p("encoder.block2.weight");
        Tensor z2pre = z2pre_;
        for (std::size_t r = 0; r < m; ++r) {
            const double dz1 = std::max(newcol[r], 0.0) - z1_.at(r, j);
            if (dz1 == 0.0) continue;
            double* row = z2pre.row(r);
            const double* wrow = w2.row(j);
            for (std::size_t k = 0; k < cfg_.hidden2; ++k) row[k] += dz1 * wrow[k];
        }
        return loss_from_h(normalize(relu(z2pre)));
    }

    double loss_from_z2pre_col(std::size_t j, const std::vector<double>& newcol) const {
        const std::size_t m = x_.rows();
        const Tensor& mean = p("encoder.norm.mean");
        const Tensor& inv_std = p("encoder.norm.inv_std");
        std::vector<double> dh(m);
        bool touched = false;
        for (std::size_t r = 0; r < m; ++r) {
            const double hnew = (std::max(newcol[r], 0.0) - mean[j]) * inv_std[j];
            dh[r] = hnew - h_.at(r, j);
            touched |= dh[r] != 0.0;
        }
        if (!touched) return base_loss_;

        // H differs from the cache in column j only: rank-1 updates into the
        // attention pre-activations and instance logits.
        std::vector<std::vector<double>> scores(cfg_.n_classes);
        Tensor h = h_;
        for (std::size_t r = 0; r < m; ++r) h.at(r, j) += dh[r];
        for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
            const std::string cp = "attention.c" + std::to_string(c);
            const Tensor& v = p(cp + ".V");
            const Tensor& u = p(cp + ".U");
            const Tensor& w = p(cp + ".w");
            scores[c].assign(m, 0.0);
            for (std::size_t r = 0; r < m; ++r) {
                const double* arow = apre_[c].row(r);
                const double* grow = gpre_[c].row(r);
                const double* vrow = v.row(j);
                const double* urow = u.row(j);
                double acc = 0.0;
                for (std::size_t l = 0; l < cfg_.attention_dim; ++l) {
                    const double a = std::tanh(arow[l] + dh[r] * vrow[l]);
                    const double s = 1.0 / (1.0 + std::exp(-(grow[l] + dh[r] * urow[l])));
                    acc += w[l] * a * s;
                }
                scores[c][r] = acc;
            }
        }
        Tensor ilogits = ilogits_;
        const Tensor& wi = p("instance_head.weight");
        for (std::size_t r = 0; r < m; ++r) {
            if (dh[r] == 0.0) continue;
            ilogits.at(r, 0) += dh[r] * wi.at(j, 0);
            ilogits.at(r, 1) += dh[r] * wi.at(j, 1);
        }
        return finish_from_scores(scores, h, instance_ce(ilogits));
    }

    static std::size_t class_of(const std::string& name) {
        // "attention.c<k>...." or "bag_classifier.c<k>....".
        const std::size_t start = name.find(".c") + 2;
        return static_cast<std::size_t>(std::stoul(name.substr(start)));
    }

    double loss_from_attention(const Parameter& param, std::size_t index, double delta) const {
        const std::size_t m = x_.rows();
        const std::size_t L = cfg_.attention_dim;
        const std::size_t c = class_of(param.name);
        const char kind = param.name.back();
        std::vector<double> scores = scores_[c];
        const Tensor& w = p("attention.c" + std::to_string(c) + ".w");
        if (kind == 'w') {
            const std::size_t l = index;
            for (std::size_t r = 0; r < m; ++r) scores[r] += delta * ag_[c].at(r, l);
        } else {
            const std::size_t i = index / L, l = index % L;
            for (std::size_t r = 0; r < m; ++r) {
                const double hval = h_.at(r, i);
                const double a =
                    std::tanh(apre_[c].at(r, l) + (kind == 'V' ? delta * hval : 0.0));
                const double s = 1.0 / (1.0 + std::exp(-(gpre_[c].at(r, l) +
                                                         (kind == 'U' ? delta * hval : 0.0))));
                scores[r] += w[l] * (a * s - ag_[c].at(r, l));
            }
        }
        // Only class c's branch moved; the instance term is untouched.
        std::vector<double> logits(cfg_.n_classes);
        for (std::size_t cc = 0; cc < cfg_.n_classes; ++cc) {
            logits[cc] = class_logit(cc, cc == c ? scores : scores_[cc], h_);
        }
        return combine(-clamped_log(softmax(logits)[label_]), base_inst_ce_);
    }

    double loss_from_heads(const Parameter& param, std::size_t index, double delta) {
        const std::size_t c = class_of(param.name);
        const std::size_t d_start = param.name.find(".l") + 2;
        const std::size_t d = std::stoul(param.name.substr(d_start));
        const bool is_weight = param.name.rfind(".weight") != std::string::npos;
        Tensor& target = is_weight ? heads_[c][d].first : heads_[c][d].second;
        const double saved = target[index];
        target[index] = saved + delta;
        std::vector<double> logits(cfg_.n_classes);
        for (std::size_t cc = 0; cc < cfg_.n_classes; ++cc) {
            logits[cc] = class_logit(cc, scores_[cc], h_);
        }
        target[index] = saved;
        return combine(-clamped_log(softmax(logits)[label_]), base_inst_ce_);
    }

    double loss_from_instance_head(const Parameter& param, std::size_t index,
                                   double delta) const {
        if (c_inst_ == 0.0 || pseudo_.empty()) return base_loss_;
        Tensor ilogits = ilogits_;
        const std::size_t m = x_.rows();
        if (param.name == "instance_head.weight") {
            const std::size_t i = index / 2, j = index % 2;
            for (std::size_t r = 0; r < m; ++r) ilogits.at(r, j) += delta * h_.at(r, i);
        } else {
            const std::size_t j = index;
            for (std::size_t r = 0; r < m; ++r) ilogits.at(r, j) += delta;
        }
        return combine(base_bag_ce_, instance_ce(ilogits));
    }

    const MilModel* model_;
    ModelConfig cfg_;
    Tensor x_;
    std::size_t label_;
    std::vector<PseudoLabel> pseudo_;
    double c_bag_;
    double c_inst_;

    Tensor z1pre_, z1_, z2pre_, h_;
    std::vector<Tensor> apre_, gpre_, ag_;
    std::vector<std::vector<double>> scores_;
    std::vector<std::vector<std::pair<Tensor, Tensor>>> heads_;  // per class (W, b) stack
    Tensor ilogits_;
    double base_inst_ce_ = 0.0;
    double base_bag_ce_ = 0.0;
    double base_loss_ = 0.0;
};

}  // namespace

double fd_check_graph(Graph& graph, NodeId loss, const std::vector<Parameter*>& params,
                      double eps) {
    if (!(eps >= 1e-6 && eps <= 1e-2)) throw InvalidConfig("fd step must lie in [1e-6, 1e-2]");
    double worst = 0.0;
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            graph.reforward();
            const double up = graph.value(loss).scalar_value();
            p->value[i] = saved - eps;
            graph.reforward();
            const double down = graph.value(loss).scalar_value();
            p->value[i] = saved;
            const double fd = (up - down) / (2.0 * eps);
            if (!std::isfinite(fd)) throw InvalidValue("finite-difference loss is not finite");
            worst = std::max(worst, rel_err(p->grad[i], fd));
        }
    }
    graph.reforward();
    return worst;
}

double grad_check(MilModel& model, const Tensor& features, std::size_t bag_label,
                  const GradCheckConfig& cfg) {
    if (!(cfg.eps >= 1e-6 && cfg.eps <= 1e-2)) {
        throw InvalidConfig("grad check eps must lie in [1e-6, 1e-2]");
    }
    BagForward fwd(model, features, BagForward::From::Instances);
    std::vector<PseudoLabel> pseudo;
    if (cfg.c_inst > 0.0) {
        pseudo = pseudo_labels(fwd.prediction().attention, bag_label, cfg.pseudo_count);
    }
    const NodeId loss = fwd.add_total_loss(bag_label, pseudo, cfg.c_bag, cfg.c_inst);
    model.zero_grads();
    fwd.graph().backward(loss);

    if (!cfg.staged) {
        return fd_check_graph(fwd.graph(), loss, model.parameters(), cfg.eps);
    }

    const double graph_loss = fwd.graph().value(loss).scalar_value();
    StagedLossEvaluator base_eval(model, features, bag_label, pseudo, cfg.c_bag, cfg.c_inst);
    if (std::abs(base_eval.base_loss() - graph_loss) >
        1e-9 * std::max(1.0, std::abs(graph_loss))) {
        throw StateError("staged loss evaluator disagrees with the graph forward");
    }

    struct Entry {
        const Parameter* param;
        std::size_t index;
        double analytic;
    };
    std::vector<Entry> entries;
    for (Parameter* p : model.parameters()) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            entries.push_back({p, i, p->grad[i]});
        }
    }

    std::size_t n_threads = cfg.threads ? cfg.threads : std::thread::hardware_concurrency();
    n_threads = std::max<std::size_t>(1, std::min(n_threads, entries.size()));
    std::vector<double> worst_per_thread(n_threads, 0.0);
    std::atomic<std::size_t> next{0};
    auto work = [&](std::size_t tid) {
        StagedLossEvaluator eval(model, features, bag_label, pseudo, cfg.c_bag, cfg.c_inst);
        double worst = 0.0;
        for (;;) {
            const std::size_t i = next.fetch_add(256);
            if (i >= entries.size()) break;
            const std::size_t end = std::min(entries.size(), i + 256);
            for (std::size_t e = i; e < end; ++e) {
                const Entry& en = entries[e];
                const double up = eval.loss_with(*en.param, en.index, cfg.eps);
                const double down = eval.loss_with(*en.param, en.index, -cfg.eps);
                const double fd = (up - down) / (2.0 * cfg.eps);
                if (!std::isfinite(fd)) {
                    throw InvalidValue("finite-difference loss is not finite");
                }
                worst = std::max(worst, rel_err(en.analytic, fd));
            }
        }
        worst_per_thread[tid] = worst;
    };
    if (n_threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
    }
    return *std::max_element(worst_per_thread.begin(), worst_per_thread.end());
}

double grad_check_seeded(std::uint64_t seed, std::size_t bag_size, std::size_t feature_dim,
                         const GradCheckConfig& cfg) {
    ModelConfig mc;
    mc.input_dim = feature_dim;
    MilModel model = MilModel::init(mc, seed);

    SyntheticSpec spec;
    spec.bag_size = bag_size;
    spec.feature_dim = feature_dim;
    spec.seed = seed;
    RngStream rng(seed, {stream_tag::kGradCheck, 0});
    Tensor features(bag_size, feature_dim);
    const std::size_t n_witness = spec.witness_count();
    for (std::size_t i = 0; i < bag_size; ++i) {
        for (std::size_t j = 0; j < feature_dim; ++j) {
            features.at(i, j) =
                rng.next_gaussian() + (i < n_witness && j == 0 ? spec.separation : 0.0);
        }
    }
    return grad_check(model, features, /*bag_label=*/1, cfg);
}

}  // namespace mil
