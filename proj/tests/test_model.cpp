#include <doctest.h>

#include <cmath>
#include <set>

#include "mil/adam.hpp"
#include "mil/checkpoint.hpp"
#include "mil/errors.hpp"
#include "mil/gradcheck.hpp"
#include "mil/model.hpp"
#include "mil/rng.hpp"

using namespace mil;

namespace {

Tensor random_bag(std::size_t m, std::size_t d, std::uint64_t seed) {
    RngStream rng(seed, {7, m, d});
    Tensor t(m, d);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
    return t;
}

ModelConfig small_config(std::size_t input_dim = 8) {
    ModelConfig cfg;
    cfg.input_dim = input_dim;
    cfg.hidden1 = 32;
    cfg.hidden2 = 16;
    cfg.attention_dim = 8;
    return cfg;
}

// All-zero parameters: uniform attention, uniform class probabilities,
// uniform instance softmax.
MilModel zeroed_model(const ModelConfig& cfg) {
    MilModel model = MilModel::init(cfg, 1);
    for (Parameter* p : model.parameters()) p->value.fill(0.0);
    model.find("encoder.norm.inv_std").value.fill(1.0);
    return model;
}

Tensor permuted_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
    Tensor out(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(perm[i], j);
    }
    return out;
}

}  // namespace

TEST_CASE("encode: per-row contract") {
    MilModel model = MilModel::init(small_config(), 3);
    Tensor one = random_bag(1, 8, 1);
    CHECK(model.encode(one).rows() == 1);

    // Duplicate rows embed identically; permuting rows permutes embeddings.
    Tensor x = random_bag(5, 8, 2);
    for (std::size_t j = 0; j < 8; ++j) x.at(3, j) = x.at(1, j);
    Tensor h = model.encode(x);
    for (std::size_t j = 0; j < h.cols(); ++j) CHECK(h.at(3, j) == h.at(1, j));

    std::vector<std::size_t> perm{4, 2, 0, 3, 1};
    Tensor hp = model.encode(permuted_rows(x, perm));
    CHECK(hp.bits_equal(permuted_rows(h, perm)));
}

TEST_CASE("encode: dimension mismatch is a shape error") {
    MilModel model = MilModel::init(small_config(), 3);
    CHECK_THROWS_AS(model.encode(random_bag(4, 9, 1)), ShapeError);
}

TEST_CASE("attention_pool: singleton, duplicates, permutation invariance") {
    MilModel model = MilModel::init(small_config(), 5);
    const std::size_t h2 = model.config().hidden2;

    Tensor single = random_bag(1, h2, 11);
    auto [reps1, w1] = model.attention_pool(single);
    CHECK(w1.rows() == 2);
    CHECK(w1.cols() == 1);
    CHECK(w1.at(0, 0) == 1.0);
    CHECK(w1.at(1, 0) == 1.0);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < h2; ++j) {
            CHECK(reps1.at(c, j) == doctest::Approx(single[j]).epsilon(1e-12));
        }
    }

    Tensor twin(2, h2);
    for (std::size_t j = 0; j < h2; ++j) twin.at(0, j) = twin.at(1, j) = single[j];
    auto [reps2, w2] = model.attention_pool(twin);
    CHECK(w2.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w2.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    for (std::size_t j = 0; j < h2; ++j) {
        CHECK(reps2.at(0, j) == doctest::Approx(single[j]).epsilon(1e-12));
    }

    Tensor bag = random_bag(5, h2, 12);
    auto [reps, weights] = model.attention_pool(bag);
    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto [reps_p, weights_p] = model.attention_pool(permuted_rows(bag, perm));
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < h2; ++j) {
            CHECK(std::abs(reps.at(c, j) - reps_p.at(c, j)) < 1e-9);
        }
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(std::abs(weights_p.at(c, i) - weights.at(c, perm[i])) < 1e-12);
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < 5; ++i) sum += weights.at(c, i);
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("bag_logits: zero map and symmetric heads") {
    ModelConfig cfg = small_config();
    MilModel zero = zeroed_model(cfg);
    Tensor reps = random_bag(2, cfg.hidden2, 21);
    Tensor logits = zero.bag_logits(reps);
    CHECK(logits[0] == 0.0);
    CHECK(logits[1] == 0.0);
    CHECK(softmax_rows(logits)[0] == doctest::Approx(0.5).epsilon(1e-15));

    // Identical heads + identical reps give equal logits.
    MilModel model = MilModel::init(cfg, 9);
    for (std::size_t j = 0; j < cfg.hidden2; ++j) {
        model.find("bag_classifier.c1.l0.weight").value[j] =
            model.find("bag_classifier.c0.l0.weight").value[j];
    }
    model.find("bag_classifier.c1.l0.bias").value[0] =
        model.find("bag_classifier.c0.l0.bias").value[0];
    Tensor rep_row = random_bag(1, cfg.hidden2, 22);
    Tensor same(2, cfg.hidden2);
    for (std::size_t j = 0; j < cfg.hidden2; ++j) same.at(0, j) = same.at(1, j) = rep_row[j];
    Tensor eq = model.bag_logits(same);
    CHECK(eq[0] == eq[1]);
}

TEST_CASE("pseudo labels: worked examples") {
    Tensor weights(1, 4, {0.1, 0.9, 0.5, 0.05});
    auto one = pseudo_labels(weights, 0, 1);
    REQUIRE(one.size() == 2);
    CHECK(one[0] == PseudoLabel{1, 1});
    CHECK(one[1] == PseudoLabel{3, 0});

    auto two = pseudo_labels(weights, 0, 2);
    REQUIRE(two.size() == 4);
    CHECK(two[0] == PseudoLabel{1, 1});
    CHECK(two[1] == PseudoLabel{2, 1});
    CHECK(two[2] == PseudoLabel{3, 0});
    CHECK(two[3] == PseudoLabel{0, 0});

    // M=3 with B=2 clamps to one positive, one negative.
    Tensor three(1, 3, {0.2, 0.5, 0.3});
    auto clamped = pseudo_labels(three, 0, 2);
    REQUIRE(clamped.size() == 2);
    CHECK(clamped[0] == PseudoLabel{1, 1});
    CHECK(clamped[1] == PseudoLabel{0, 0});
}

TEST_CASE("pseudo labels: ties are deterministic and selections disjoint") {
    Tensor flat(1, 4, {0.25, 0.25, 0.25, 0.25});
    auto a = pseudo_labels(flat, 0, 2);
    auto b = pseudo_labels(flat, 0, 2);
    CHECK(a == b);
    std::set<std::size_t> seen;
    for (const PseudoLabel& pl : a) CHECK(seen.insert(pl.instance).second);
    // Lower indices win the positive side.
    CHECK(a[0] == PseudoLabel{0, 1});
    CHECK(a[1] == PseudoLabel{1, 1});

    CHECK_THROWS_AS(pseudo_labels(Tensor(1, 1, {1.0}), 0, 1), TooFewInstances);
}

TEST_CASE("total loss: degenerate weighting equals bag cross-entropy exactly") {
    MilModel model = MilModel::init(small_config(), 31);
    Tensor x = random_bag(6, 8, 32);
    BagForward fwd(model, x, BagForward::From::Instances);
    NodeId loss = fwd.add_total_loss(1, {}, 1.0, 0.0);
    const double expected = -std::log(fwd.prediction().class_probabilities[1]);
    CHECK(fwd.graph().value(loss).scalar_value() == expected);
}

TEST_CASE("total loss: uniform predictions give ln 2") {
    MilModel model = zeroed_model(small_config());
    Tensor x = random_bag(4, 8, 33);
    BagForward fwd(model, x, BagForward::From::Instances);
    auto pseudo = pseudo_labels(fwd.attention_row(1), 0, 1);
    NodeId loss = fwd.add_total_loss(1, pseudo, 0.7, 0.3);
    CHECK(fwd.graph().value(loss).scalar_value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("total loss: a perfect prediction scores essentially zero") {
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden1 = 4;
    cfg.hidden2 = 4;
    cfg.attention_dim = 2;
    MilModel model = zeroed_model(cfg);
    // Identity encoder on the first two feature axes.
    model.find("encoder.block1.weight").value.at(0, 0) = 1.0;
    model.find("encoder.block1.weight").value.at(1, 1) = 1.0;
    model.find("encoder.block2.weight").value.at(0, 0) = 1.0;
    model.find("encoder.block2.weight").value.at(1, 1) = 1.0;
    // Confident bag head for class 1 and a separating instance head.
    model.find("bag_classifier.c0.l0.bias").value[0] = -45.0;
    model.find("bag_classifier.c1.l0.bias").value[0] = 45.0;
    model.find("instance_head.weight").value.at(0, 1) = 18.0;
    model.find("instance_head.weight").value.at(1, 0) = 18.0;

    Tensor x(2, 2, {5.0, 0.0, 0.0, 5.0});
    BagForward fwd(model, x, BagForward::From::Instances);
    // Flat attention ties: instance 0 labelled 1, instance 1 labelled 0,
    // exactly what the crafted instance head predicts.
    auto pseudo = pseudo_labels(fwd.attention_row(1), 0, 1);
    REQUIRE(pseudo.size() == 2);
    NodeId loss = fwd.add_total_loss(1, pseudo, 0.7, 0.3);
    CHECK(fwd.graph().value(loss).scalar_value() <= 1e-9);
}

TEST_CASE("total loss: positive instance weight demands pseudo labels") {
    MilModel model = MilModel::init(small_config(), 34);
    BagForward fwd(model, random_bag(4, 8, 35), BagForward::From::Instances);
    CHECK_THROWS_AS(fwd.add_total_loss(0, {}, 0.7, 0.3), InvalidConfig);
    BagForward fwd2(model, random_bag(4, 8, 35), BagForward::From::Instances);
    CHECK_THROWS_AS(fwd2.add_total_loss(0, {}, 0.5, 0.6), InvalidConfig);
}

TEST_CASE("predict: normalization, symmetry, permutation invariance") {
    MilModel model = MilModel::init(small_config(), 41);
    CHECK_THROWS_AS(model.predict(Tensor(0, 8)), TooFewInstances);

    Tensor x = random_bag(7, 8, 42);
    BagPrediction pred = model.predict(x);
    CHECK(pred.attention.rows() == 2);
    CHECK(pred.attention.cols() == 7);
    CHECK(pred.instance_logits.rows() == 7);
    double psum = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
        double asum = 0.0;
        for (std::size_t i = 0; i < 7; ++i) asum += pred.attention.at(c, i);
        CHECK(std::abs(asum - 1.0) < 1e-9);
    }
    for (std::size_t c = 0; c < 2; ++c) psum += pred.class_probabilities[c];
    CHECK(std::abs(psum - 1.0) < 1e-9);

    // One instance repeated M times attends uniformly.
    Tensor rep(6, 8);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 8; ++j) rep.at(i, j) = x.at(0, j);
    }
    BagPrediction uniform = model.predict(rep);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(uniform.attention.at(c, i) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
        }
    }

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor bag = random_bag(9, 8, 100 + seed);
        BagPrediction base = model.predict(bag);
        std::vector<std::size_t> perm{8, 3, 5, 0, 7, 2, 6, 1, 4};
        BagPrediction shuffled = model.predict(permuted_rows(bag, perm));
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(std::abs(base.class_probabilities[c] - shuffled.class_probabilities[c]) < 1e-9);
            for (std::size_t i = 0; i < 9; ++i) {
                CHECK(std::abs(shuffled.attention.at(c, i) - base.attention.at(c, perm[i])) <
                      1e-9);
            }
        }
    }
}

TEST_CASE("full model gradients match finite differences (seed 7, 12x8 bag)") {
    MilModel model = MilModel::init(small_config(), 7);
    Tensor x = random_bag(12, 8, 7);

    GradCheckConfig staged;
    staged.threads = 1;
    const double err_staged = grad_check(model, x, 1, staged);
    CHECK(err_staged < 1e-4);

    GradCheckConfig naive;
    naive.staged = false;
    const double err_naive = grad_check(model, x, 1, naive);
    CHECK(err_naive < 1e-4);
}

TEST_CASE("grad check: degenerate all-zero inputs stay finite") {
    MilModel model = MilModel::init(small_config(), 8);
    Tensor zeros(5, 8);
    GradCheckConfig cfg;
    cfg.threads = 1;
    const double err = grad_check(model, zeros, 0, cfg);
    CHECK(std::isfinite(err));
    CHECK(err < 1e-4);
}

TEST_CASE("grad check: eps outside [1e-6,1e-2] is rejected") {
    MilModel model = MilModel::init(small_config(), 9);
    GradCheckConfig cfg;
    cfg.eps = 1e-7;
    CHECK_THROWS_AS(grad_check(model, random_bag(3, 8, 1), 0, cfg), InvalidConfig);
}

TEST_CASE("frozen encoder training: encoder bytes fixed, heads move") {
    MilModel model = MilModel::init(small_config(), 51);
    model.freeze_encoder();
    std::vector<std::pair<std::string, Tensor>> before;
    for (Parameter* p : model.parameters()) before.emplace_back(p->name, p->value);

    AdamState adam(model.parameters(), {0.9, 0.999, 1e-8, 0.0});
    for (std::uint64_t step = 0; step < 5; ++step) {
        Tensor x = random_bag(6, 8, 60 + step);
        BagForward fwd(model, x, BagForward::From::Instances);
        auto pseudo = pseudo_labels(fwd.attention_row(1), 0, 2);
        NodeId loss = fwd.add_total_loss(step % 2, pseudo, 0.7, 0.3);
        model.zero_grads();
        fwd.graph().backward(loss);
        adam.step(1e-3);
    }
    bool attention_changed = false;
    for (Parameter* p : model.parameters()) {
        const Tensor* old = nullptr;
        for (auto& [name, value] : before) {
            if (name == p->name) old = &value;
        }
        REQUIRE(old != nullptr);
        if (p->group == group::kBlock1 || p->group == group::kBlock2 ||
            p->group == group::kNorm) {
            CHECK(p->value.bits_equal(*old));
        } else if (p->group == group::kAttention && !p->value.bits_equal(*old)) {
            attention_changed = true;
        }
    }
    CHECK(attention_changed);
}

TEST_CASE("group bookkeeping: every parameter sits in exactly one known group") {
    MilModel model = MilModel::init(ModelConfig{}, 1);
    const std::set<std::string> known{group::kBlock1,        group::kBlock2,
                                      group::kNorm,          group::kAttention,
                                      group::kBagClassifier, group::kInstanceHead};
    std::set<std::string> seen;
    for (const Parameter* p : model.parameters()) {
        CHECK(known.count(p->group) == 1);
        seen.insert(p->group);
    }
    CHECK(seen == known);
    CHECK_THROWS_AS(model.set_group_trainable(group::kNorm, true), InvalidConfig);
    CHECK_THROWS_AS(model.set_group_trainable("no_such_group", false), InvalidConfig);
}

TEST_CASE("checkpoint: byte-identical round trip and faithful restore") {
    MilModel model = MilModel::init(small_config(), 71);
    model.freeze_encoder();
    CheckpointMeta meta{17, 0.125, 0.875, "lr=2e-4"};
    Checkpoint ckpt = Checkpoint::snapshot(model, meta);

    auto bytes = checkpoint_to_bytes(ckpt);
    Checkpoint again = checkpoint_from_bytes(bytes);
    CHECK(checkpoint_to_bytes(again) == bytes);
    CHECK(again.meta.epoch == 17);
    CHECK(again.meta.val_loss == 0.125);
    CHECK(again.meta.config_fingerprint == "lr=2e-4");

    MilModel restored = again.restore();
    CHECK(restored.encoder_fully_frozen());
    Tensor x = random_bag(5, 8, 72);
    CHECK(restored.predict(x).class_probabilities.bits_equal(
        model.predict(x).class_probabilities));

    bytes[0] = 'X';
    CHECK_THROWS_AS(checkpoint_from_bytes(bytes), FormatError);
    auto truncated = checkpoint_to_bytes(ckpt);
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_AS(checkpoint_from_bytes(truncated), FormatError);
}

TEST_CASE("classifier depth is configurable") {
    ModelConfig cfg = small_config();
    cfg.classifier_depth = 2;
    MilModel model = MilModel::init(cfg, 81);
    CHECK_NOTHROW(model.find("bag_classifier.c0.l0.weight"));
    CHECK_NOTHROW(model.find("bag_classifier.c1.l1.bias"));
    Tensor x = random_bag(4, 8, 82);
    BagPrediction pred = model.predict(x);
    CHECK(std::abs(pred.class_probabilities[0] + pred.class_probabilities[1] - 1.0) < 1e-9);

    GradCheckConfig gc;
    gc.threads = 1;
    CHECK(grad_check(model, x, 1, gc) < 1e-4);
}
