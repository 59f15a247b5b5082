#include "mil/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mil/errors.hpp"
#include "mil/rng.hpp"

namespace mil {

void ModelConfig::validate() const {
    if (input_dim < 1 || hidden1 < 1 || hidden2 < 1 || attention_dim < 1) {
        throw InvalidConfig("model widths must be >= 1");
    }
    if (n_classes < 2) throw InvalidConfig("model needs at least 2 classes");
    if (classifier_depth < 1) throw InvalidConfig("classifier depth must be >= 1");
    if (!(block1_init_gain > 0.0)) throw InvalidConfig("block1 init gain must be positive");
}

std::size_t BagPrediction::predicted_class() const {
    std::size_t best = 0;
    for (std::size_t c = 1; c < class_probabilities.cols(); ++c) {
        if (class_probabilities[c] > class_probabilities[best]) best = c;
    }
    return best;
}

std::vector<PseudoLabel> pseudo_labels(const Tensor& attention_weights, std::size_t true_class,
                                       std::size_t B) {
    const std::size_t m = attention_weights.cols();
    if (m < 2) throw TooFewInstances("pseudo labels need at least 2 instances, got " +
                                     std::to_string(m));
    if (true_class >= attention_weights.rows()) {
        throw InvalidConfig("true class index out of range");
    }
    if (B < 1) throw InvalidConfig("pseudo-label count B must be >= 1");
    const std::size_t b_eff = std::min(B, m / 2);
    const double* w = attention_weights.row(true_class);

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    // Descending attention, ties to the lower index.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (w[a] != w[b]) return w[a] > w[b];
        return a < b;
    });

    std::vector<PseudoLabel> out;
    out.reserve(2 * b_eff);
    std::vector<bool> taken(m, false);
    for (std::size_t i = 0; i < b_eff; ++i) {
        out.push_back({order[i], 1});
        taken[order[i]] = true;
    }
    // Lowest attention first, ties to the lower index, skipping instances
    // already labelled positive.
    std::vector<std::size_t> asc(m);
    std::iota(asc.begin(), asc.end(), 0);
    std::sort(asc.begin(), asc.end(), [&](std::size_t a, std::size_t b) {
        if (w[a] != w[b]) return w[a] < w[b];
        return a < b;
    });
    std::size_t picked = 0;
    for (std::size_t i = 0; i < m && picked < b_eff; ++i) {
        if (taken[asc[i]]) continue;
        out.push_back({asc[i], 0});
        ++picked;
    }
    return out;
}

// ---------------------------------------------------------------------------
// MilModel
// ---------------------------------------------------------------------------

Parameter& MilModel::add_param(const std::string& name, const std::string& grp, std::size_t rows,
                               std::size_t cols, bool trainable) {
    params_.emplace_back(name, grp, Tensor(rows, cols), trainable);
    return params_.back();
}

namespace {

void fill_uniform(Tensor& t, double bound, RngStream& rng) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = (2.0 * rng.next_unit() - 1.0) * bound;
    }
}

}  // namespace

MilModel MilModel::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    MilModel model;
    model.cfg_ = cfg;

    struct Spec {
        std::string name;
        std::string grp;
        std::size_t rows, cols;
        bool trainable;
        std::size_t fan_in;  // 0 = constant init
        double constant = 0.0;
        double gain = 1.0;
    };
    std::vector<Spec> specs;
    const double g1 = cfg.block1_init_gain;
    specs.push_back({"encoder.block1.weight", group::kBlock1, cfg.input_dim, cfg.hidden1, true,
                     cfg.input_dim, 0.0, g1});
    specs.push_back(
        {"encoder.block1.bias", group::kBlock1, 1, cfg.hidden1, true, cfg.input_dim, 0.0, g1});
    specs.push_back({"encoder.block2.weight", group::kBlock2, cfg.hidden1, cfg.hidden2, true,
                     cfg.hidden1, 0.0, 1.0});
    specs.push_back(
        {"encoder.block2.bias", group::kBlock2, 1, cfg.hidden2, true, cfg.hidden1, 0.0, 1.0});
    specs.push_back({"encoder.norm.mean", group::kNorm, 1, cfg.hidden2, false, 0, 0.0, 1.0});
    specs.push_back({"encoder.norm.inv_std", group::kNorm, 1, cfg.hidden2, false, 0, 1.0, 1.0});
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const std::string p = "attention.c" + std::to_string(c);
        specs.push_back(
            {p + ".V", group::kAttention, cfg.hidden2, cfg.attention_dim, true, cfg.hidden2});
        specs.push_back(
            {p + ".U", group::kAttention, cfg.hidden2, cfg.attention_dim, true, cfg.hidden2});
        specs.push_back({p + ".w", group::kAttention, 1, cfg.attention_dim, true,
                         cfg.attention_dim});
    }
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const std::string p = "bag_classifier.c" + std::to_string(c);
        for (std::size_t d = 0; d + 1 < cfg.classifier_depth; ++d) {
            const std::string lp = p + ".l" + std::to_string(d);
            specs.push_back({lp + ".weight", group::kBagClassifier, cfg.hidden2, cfg.hidden2,
                             true, cfg.hidden2});
            specs.push_back(
                {lp + ".bias", group::kBagClassifier, 1, cfg.hidden2, true, cfg.hidden2});
        }
        const std::string lp = p + ".l" + std::to_string(cfg.classifier_depth - 1);
        specs.push_back(
            {lp + ".weight", group::kBagClassifier, 1, cfg.hidden2, true, cfg.hidden2});
        specs.push_back({lp + ".bias", group::kBagClassifier, 1, 1, true, cfg.hidden2});
    }
    specs.push_back(
        {"instance_head.weight", group::kInstanceHead, cfg.hidden2, 2, true, cfg.hidden2});
    specs.push_back({"instance_head.bias", group::kInstanceHead, 1, 2, true, cfg.hidden2});

    std::uint64_t ordinal = 0;
    for (const Spec& s : specs) {
        Parameter& p = model.add_param(s.name, s.grp, s.rows, s.cols, s.trainable);
        if (s.fan_in > 0) {
            RngStream rng(seed, {stream_tag::kInit, ordinal});
            fill_uniform(p.value, s.gain / std::sqrt(static_cast<double>(s.fan_in)), rng);
        } else if (s.constant != 0.0) {
            p.value.fill(s.constant);
        }
        ++ordinal;
    }
    return model;
}

MilModel MilModel::from_parameters(std::vector<Parameter> params) {
    auto get = [&](const std::string& name) -> Parameter* {
        for (Parameter& p : params) {
            if (p.name == name) return &p;
        }
        return nullptr;
    };
    Parameter* b1 = get("encoder.block1.weight");
    Parameter* b2 = get("encoder.block2.weight");
    Parameter* v0 = get("attention.c0.V");
    if (!b1 || !b2 || !v0) throw FormatError("parameter set is missing encoder/attention tensors");

    ModelConfig cfg;
    cfg.input_dim = b1->value.rows();
    cfg.hidden1 = b1->value.cols();
    cfg.hidden2 = b2->value.cols();
    cfg.attention_dim = v0->value.cols();
    cfg.n_classes = 0;
    while (get("attention.c" + std::to_string(cfg.n_classes) + ".V") != nullptr) ++cfg.n_classes;
    cfg.classifier_depth = 0;
    while (get("bag_classifier.c0.l" + std::to_string(cfg.classifier_depth) + ".weight") !=
           nullptr) {
        ++cfg.classifier_depth;
    }
    cfg.validate();

    // Rebuild against the canonical layout so names, shapes and ordering are
    // all verified in one pass.
    MilModel model = MilModel::init(cfg, 0);
    if (params.size() != model.params_.size()) {
        throw FormatError("parameter set has " + std::to_string(params.size()) +
                          " tensors, expected " + std::to_string(model.params_.size()));
    }
    for (Parameter& slot : model.params_) {
        Parameter* src = get(slot.name);
        if (!src) throw FormatError("parameter set is missing '" + slot.name + "'");
        if (!src->value.same_shape(slot.value)) {
            throw FormatError("parameter '" + slot.name + "' has shape " +
                              src->value.shape_str() + ", expected " + slot.value.shape_str());
        }
        slot.value = src->value;
        slot.trainable = slot.group == group::kNorm ? false : src->trainable;
        slot.zero_grad();
    }
    return model;
}

std::vector<Parameter*> MilModel::parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (Parameter& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> MilModel::parameters() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const Parameter& p : params_) out.push_back(&p);
    return out;
}

Parameter& MilModel::find(const std::string& name) {
    for (Parameter& p : params_) {
        if (p.name == name) return p;
    }
    throw InvalidConfig("unknown parameter '" + name + "'");
}

const Parameter& MilModel::find(const std::string& name) const {
    return const_cast<MilModel*>(this)->find(name);
}

void MilModel::set_group_trainable(const std::string& grp, bool trainable) {
    if (grp == group::kNorm) {
        if (trainable) throw InvalidConfig("encoder.norm can never be made trainable");
        return;
    }
    bool found = false;
    for (Parameter& p : params_) {
        if (p.group == grp) {
            p.trainable = trainable;
            found = true;
        }
    }
    if (!found) throw InvalidConfig("unknown parameter group '" + grp + "'");
}

void MilModel::freeze_encoder() {
    set_group_trainable(group::kBlock1, false);
    set_group_trainable(group::kBlock2, false);
}

bool MilModel::encoder_fully_frozen() const {
    for (const Parameter& p : params_) {
        if ((p.group == group::kBlock1 || p.group == group::kBlock2) && p.trainable) return false;
    }
    return true;
}

void MilModel::zero_grads() {
    for (Parameter& p : params_) p.zero_grad();
}

Tensor MilModel::encode(const Tensor& instances) {
    BagForward fwd(*this, instances, BagForward::From::Instances);
    return fwd.embeddings_value();
}

std::pair<Tensor, Tensor> MilModel::attention_pool(const Tensor& embeddings) {
    BagForward fwd(*this, embeddings, BagForward::From::Embeddings);
    BagPrediction pred = fwd.prediction();
    Tensor reps(cfg_.n_classes, cfg_.hidden2);
    for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
        const Tensor& rep = fwd.class_rep_value(c);
        for (std::size_t j = 0; j < cfg_.hidden2; ++j) reps.at(c, j) = rep[j];
    }
    return {reps, pred.attention};
}

// ---------------------------------------------------------------------------
// BagForward
// ---------------------------------------------------------------------------

namespace {

// rep (1 x h2) -> scalar logit through the class's fully connected stack.
NodeId class_head_logit(Graph& g, MilModel& m, NodeId x, std::size_t c,
                        std::size_t classifier_depth) {
    const std::string p = "bag_classifier.c" + std::to_string(c);
    for (std::size_t d = 0; d + 1 < classifier_depth; ++d) {
        const std::string lp = p + ".l" + std::to_string(d);
        NodeId w = g.param(m.find(lp + ".weight"));
        NodeId b = g.param(m.find(lp + ".bias"));
        x = g.relu(g.row_broadcast_add(g.matmul(x, w), b));
    }
    const std::string lp = p + ".l" + std::to_string(classifier_depth - 1);
    NodeId w = g.param(m.find(lp + ".weight"));  // 1 x h2
    NodeId b = g.param(m.find(lp + ".bias"));    // 1 x 1
    return g.add(g.matmul(x, w, false, true), b);
}

// N scalar logits -> one 1 x N row via one-hot outer products; keeps the
// assembly inside the primitive set.
NodeId assemble_logit_row(Graph& g, const std::vector<NodeId>& logits) {
    const std::size_t n = logits.size();
    NodeId row = 0;
    for (std::size_t c = 0; c < n; ++c) {
        Tensor onehot(1, n);
        onehot[c] = 1.0;
        NodeId term = g.matmul(logits[c], g.input(std::move(onehot)));
        row = c == 0 ? term : g.add(row, term);
    }
    return row;
}

}  // namespace

BagForward::BagForward(MilModel& model, const Tensor& data, From from) : model_(&model) {
    const ModelConfig& cfg = model.config();
    m_ = data.rows();
    if (m_ == 0) throw TooFewInstances("bag has no instances");
    graph_ = std::make_unique<Graph>();
    Graph& g = *graph_;

    if (from == From::Instances) {
        if (data.cols() != cfg.input_dim) {
            throw ShapeError("bag features are " + data.shape_str() + ", model expects Mx" +
                             std::to_string(cfg.input_dim));
        }
        NodeId x = g.input(data);
        NodeId w1 = g.param(model.find("encoder.block1.weight"));
        NodeId b1 = g.param(model.find("encoder.block1.bias"));
        NodeId z1 = g.relu(g.row_broadcast_add(g.matmul(x, w1), b1));
        NodeId w2 = g.param(model.find("encoder.block2.weight"));
        NodeId b2 = g.param(model.find("encoder.block2.bias"));
        NodeId z2 = g.relu(g.row_broadcast_add(g.matmul(z1, w2), b2));
        // Frozen per-feature normalization: (z - mean) * inv_std, the
        // broadcast built as ones * inv_std.
        NodeId mean = g.param(model.find("encoder.norm.mean"));
        NodeId inv_std = g.param(model.find("encoder.norm.inv_std"));
        NodeId centered = g.row_broadcast_add(z2, g.scale(mean, -1.0));
        NodeId spread = g.matmul(g.input(Tensor::ones(m_, 1)), inv_std);
        embeddings_ = g.mul(centered, spread);
    } else {
        if (data.cols() != cfg.hidden2) {
            throw ShapeError("embeddings are " + data.shape_str() + ", model expects Mx" +
                             std::to_string(cfg.hidden2));
        }
        embeddings_ = g.input(data);
    }
    build_heads();
    g.forward();
}

void BagForward::build_heads() {
    Graph& g = *graph_;
    MilModel& m = *model_;
    const ModelConfig& cfg = m.config();
    std::vector<NodeId> logits;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const std::string p = "attention.c" + std::to_string(c);
        NodeId v = g.param(m.find(p + ".V"));
        NodeId u = g.param(m.find(p + ".U"));
        NodeId w = g.param(m.find(p + ".w"));
        NodeId gated = g.mul(g.tanh(g.matmul(embeddings_, v)), g.sigmoid(g.matmul(embeddings_, u)));
        NodeId scores = g.matmul(w, gated, false, true);  // 1 x M
        NodeId attn = g.softmax_rows(scores);
        NodeId rep = g.matmul(attn, embeddings_);  // 1 x h2
        attention_rows_.push_back(attn);
        class_reps_.push_back(rep);
        logits.push_back(class_head_logit(g, m, rep, c, cfg.classifier_depth));
    }
    bag_logits_ = assemble_logit_row(g, logits);
    bag_probs_ = g.softmax_rows(bag_logits_);
    NodeId wi = g.param(m.find("instance_head.weight"));
    NodeId bi = g.param(m.find("instance_head.bias"));
    instance_logits_ = g.row_broadcast_add(g.matmul(embeddings_, wi), bi);
}

const Tensor& BagForward::attention_row(std::size_t c) const {
    return graph_->value(attention_rows_.at(c));
}

const Tensor& BagForward::embeddings_value() const { return graph_->value(embeddings_); }

const Tensor& BagForward::class_rep_value(std::size_t c) const {
    return graph_->value(class_reps_.at(c));
}

BagPrediction BagForward::prediction() const {
    const ModelConfig& cfg = model_->config();
    BagPrediction pred;
    pred.class_probabilities = graph_->value(bag_probs_);
    pred.instance_logits = graph_->value(instance_logits_);
    pred.attention = Tensor(cfg.n_classes, m_);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const Tensor& row = graph_->value(attention_rows_[c]);
        for (std::size_t i = 0; i < m_; ++i) pred.attention.at(c, i) = row[i];
    }
    return pred;
}

NodeId BagForward::add_total_loss(std::size_t bag_label, const std::vector<PseudoLabel>& pseudo,
                                  double c_bag, double c_inst) {
    Graph& g = *graph_;
    const ModelConfig& cfg = model_->config();
    if (bag_label >= cfg.n_classes) throw InvalidConfig("bag label out of range");
    if (c_bag < 0.0 || c_inst < 0.0 || std::abs(c_bag + c_inst - 1.0) > 1e-9) {
        throw InvalidConfig("loss weights must be nonnegative and sum to 1");
    }
    Tensor onehot(1, cfg.n_classes);
    onehot[bag_label] = 1.0;
    NodeId ce_bag = g.scale(g.sum(g.mul(g.log(bag_probs_), g.input(std::move(onehot)))), -1.0);

    NodeId loss;
    if (c_inst > 0.0) {
        if (pseudo.empty()) {
            throw InvalidConfig("instance loss weight is positive but the pseudo-label set is empty");
        }
        Tensor mask(m_, 2);
        const double unit = 1.0 / static_cast<double>(pseudo.size());
        for (const PseudoLabel& pl : pseudo) {
            if (pl.instance >= m_ || (pl.label != 0 && pl.label != 1)) {
                throw InvalidConfig("pseudo label out of range");
            }
            mask.at(pl.instance, static_cast<std::size_t>(pl.label)) += unit;
        }
        NodeId iprobs = g.softmax_rows(instance_logits_);
        NodeId ce_inst = g.scale(g.sum(g.mul(g.log(iprobs), g.input(std::move(mask)))), -1.0);
        loss = g.add(g.scale(ce_bag, c_bag), g.scale(ce_inst, c_inst));
    } else {
        loss = g.scale(ce_bag, c_bag);
    }
    g.forward();
    return loss;
}

Tensor MilModel::bag_logits(const Tensor& reps) {
    if (reps.rows() != cfg_.n_classes || reps.cols() != cfg_.hidden2) {
        throw ShapeError("reps are " + reps.shape_str() + ", expected " +
                         std::to_string(cfg_.n_classes) + "x" + std::to_string(cfg_.hidden2));
    }
    Graph g;
    std::vector<NodeId> logits;
    for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
        Tensor rep(1, cfg_.hidden2);
        for (std::size_t j = 0; j < cfg_.hidden2; ++j) rep[j] = reps.at(c, j);
        logits.push_back(class_head_logit(g, *this, g.input(std::move(rep)), c,
                                          cfg_.classifier_depth));
    }
    NodeId row = assemble_logit_row(g, logits);
    g.forward();
    return g.value(row);
}

BagPrediction MilModel::predict(const Tensor& instances) {
    BagForward fwd(*this, instances, BagForward::From::Instances);
    return fwd.prediction();
}

}  // namespace mil
