#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mil/binio.hpp"
#include "mil/data.hpp"
#include "mil/errors.hpp"
#include "mil/eval.hpp"

using namespace mil;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("mil_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

InstanceBag random_bag(std::uint64_t seed, std::size_t m = 6, std::size_t d = 4,
                       bool with_coords = true) {
    InstanceBag bag;
    bag.bag_id = "rb_" + std::to_string(seed);
    bag.label = seed % 2;
    RngStream rng(seed, {3});
    bag.features = Tensor(m, d);
    for (std::size_t i = 0; i < bag.features.size(); ++i) bag.features[i] = rng.next_gaussian();
    if (with_coords) {
        bag.coords.emplace();
        const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(double(m))));
        for (std::size_t i = 0; i < m; ++i) {
            bag.coords->emplace_back(i / side, i % side);
        }
    }
    bag.original_indices.resize(m);
    for (std::size_t i = 0; i < m; ++i) bag.original_indices[i] = i;
    return bag;
}

}  // namespace

TEST_CASE("bag container: round trip re-serializes byte-identically") {
    InstanceBag bag = random_bag(3);
    auto bytes = bag_to_bytes(bag);
    InstanceBag parsed = bag_from_bytes(bytes);
    CHECK(bag_to_bytes(parsed) == bytes);
    CHECK(parsed.bag_id == bag.bag_id);
    CHECK(parsed.label == bag.label);
    CHECK(parsed.features.bits_equal(bag.features));
    REQUIRE(parsed.coords.has_value());
    CHECK(*parsed.coords == *bag.coords);

    // Coordinate-free bags round trip too.
    InstanceBag plain = random_bag(4, 5, 2, /*with_coords=*/false);
    InstanceBag parsed2 = bag_from_bytes(bag_to_bytes(plain));
    CHECK(!parsed2.coords.has_value());
    CHECK(parsed2.features.bits_equal(plain.features));
}

TEST_CASE("bag container: the 1x1 layout has the documented byte count") {
    InstanceBag tiny;
    tiny.bag_id = "t";
    tiny.label = 0;
    tiny.features = Tensor(1, 1, {0.0});
    tiny.original_indices = {0};
    auto bytes = bag_to_bytes(tiny);
    // magic + version + M + D + has_coords + label + (2 + id) + one f64
    CHECK(bytes.size() == 4 + 4 + 4 + 4 + 1 + 4 + (2 + 1) + 8);
    CHECK(bag_from_bytes(bytes).features[0] == 0.0);
}

TEST_CASE("bag container: bad magic and truncation are format errors") {
    auto bytes = bag_to_bytes(random_bag(5));
    auto bad = bytes;
    bad[0] = 'X';
    bad[1] = 'X';
    bad[2] = 'X';
    bad[3] = 'X';
    CHECK_THROWS_AS(bag_from_bytes(bad), FormatError);

    auto short_bytes = bytes;
    short_bytes.resize(short_bytes.size() - 5);
    CHECK_THROWS_AS(bag_from_bytes(short_bytes), FormatError);

    // Declared size larger than the payload.
    auto lying = bytes;
    lying[8] = 0xFF;  // M low byte
    CHECK_THROWS_AS(bag_from_bytes(lying), FormatError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(bag_from_bytes(trailing), FormatError);
}

TEST_CASE("synthetic focal: witness counts, balance, determinism") {
    SyntheticSpec spec;
    spec.regime = SyntheticSpec::Regime::Focal;
    spec.witness_rate = 0.05;
    spec.separation = 3.0;
    spec.bags_per_class = 50;
    spec.bag_size = 200;
    spec.feature_dim = 8;
    spec.seed = 21;
    CHECK(spec.witness_count() == 10);  // ceil(0.05 * 200)

    TempDir dir_a("focal_a");
    DatasetManifest manifest = generate_synthetic(spec, dir_a.str());
    CHECK(manifest.entries.size() == 100);
    std::size_t positives = 0;
    for (const auto& e : manifest.entries) positives += e.label;
    CHECK(positives == 50);

    // Witnesses occupy the first ceil(w*M) rows of positive bags and are
    // shifted along the first axis.
    Dataset ds = Dataset::load((dir_a.path / "manifest.tsv").string());
    for (const InstanceBag& bag : ds.bags) {
        double witness_mean = 0.0, rest_mean = 0.0;
        for (std::size_t i = 0; i < 10; ++i) witness_mean += bag.features.at(i, 0);
        for (std::size_t i = 10; i < 200; ++i) rest_mean += bag.features.at(i, 0);
        witness_mean /= 10.0;
        rest_mean /= 190.0;
        if (bag.label == 1) {
            CHECK(witness_mean > 1.5);
        } else {
            CHECK(std::abs(witness_mean) < 1.5);
        }
        CHECK(std::abs(rest_mean) < 0.5);
        REQUIRE(bag.coords.has_value());
        CHECK(bag.coords->size() == 200);
    }

    TempDir dir_b("focal_b");
    generate_synthetic(spec, dir_b.str());
    for (const auto& e : manifest.entries) {
        auto a = binio::read_file((dir_a.path / e.path).string());
        auto b = binio::read_file((dir_b.path / e.path).string());
        CHECK(a == b);
    }
}

TEST_CASE("synthetic focal: invalid witness configuration is rejected") {
    SyntheticSpec spec;
    spec.witness_rate = 0.001;
    spec.bag_size = 100;  // 0.1 expected witnesses
    CHECK_THROWS_AS(spec.validate(), InvalidConfig);
}

TEST_CASE("synthetic diffuse: every positive instance is shifted") {
    SyntheticSpec spec;
    spec.regime = SyntheticSpec::Regime::Diffuse;
    spec.shift = 0.5;
    spec.bags_per_class = 10;
    spec.bag_size = 200;
    spec.feature_dim = 32;
    spec.seed = 33;
    TempDir dir("diffuse");
    generate_synthetic(spec, dir.str());
    Dataset ds = Dataset::load((dir.path / "manifest.tsv").string());
    const double tol = 3.0 / std::sqrt(200.0 * 32.0);
    for (const InstanceBag& bag : ds.bags) {
        // Mean over all M*D entries of (X - shift * e1 per instance).
        double acc = 0.0;
        for (std::size_t i = 0; i < bag.size(); ++i) {
            for (std::size_t j = 0; j < bag.dim(); ++j) {
                double v = bag.features.at(i, j);
                if (bag.label == 1 && j == 0) v -= spec.shift;
                acc += v;
            }
        }
        CHECK(std::abs(acc / double(bag.size() * bag.dim())) <= tol);
    }
}

TEST_CASE("focal bags separate under the bag-max oracle without learning") {
    SyntheticSpec spec;
    spec.regime = SyntheticSpec::Regime::Focal;
    spec.witness_rate = 0.05;
    spec.separation = 3.0;
    spec.bags_per_class = 100;
    spec.bag_size = 200;
    spec.feature_dim = 32;
    spec.seed = 1;
    TempDir dir("bagmax");
    generate_synthetic(spec, dir.str());
    Dataset ds = Dataset::load((dir.path / "manifest.tsv").string());
    ScoredSet scored;
    for (const InstanceBag& bag : ds.bags) {
        double best = bag.features.at(0, 0);
        for (std::size_t i = 1; i < bag.size(); ++i) {
            best = std::max(best, bag.features.at(i, 0));
        }
        scored.push(best, bag.label == 1 ? 1 : 0, bag.bag_id);
    }
    CHECK(auc(scored) >= 0.95);
}

TEST_CASE("dichotomize: grade mapping") {
    CHECK(dichotomize(1) == 0);
    CHECK(dichotomize(2) == 1);
    CHECK(dichotomize(3) == 1);
    CHECK_THROWS_AS(dichotomize(0), InvalidLabel);
    CHECK_THROWS_AS(dichotomize(4), InvalidLabel);
    CHECK_THROWS_AS(dichotomize(-1), InvalidLabel);
}

TEST_CASE("split_kfold: stratified folds partition the development set") {
    SyntheticSpec spec;
    spec.bags_per_class = 50;
    spec.bag_size = 4;
    spec.feature_dim = 2;
    spec.seed = 8;
    TempDir dir("kfold");
    DatasetManifest manifest = generate_synthetic(spec, dir.str());

    FoldPlan plan = split_kfold(manifest, 10, 99);
    REQUIRE(plan.folds.size() == 10);
    std::vector<std::size_t> seen(100, 0);
    for (const auto& fold : plan.folds) {
        CHECK(fold.val_ids.size() == 10);
        std::size_t positives = 0;
        for (std::size_t id : fold.val_ids) {
            positives += manifest.entries[id].label;
            ++seen[id];
        }
        CHECK(positives == 5);  // balanced input stays balanced per fold
        CHECK(fold.train_ids.size() == 90);
        for (std::size_t id : fold.train_ids) {
            for (std::size_t vid : fold.val_ids) CHECK(id != vid);
        }
    }
    for (std::size_t count : seen) CHECK(count == 1);  // validation sets partition

    FoldPlan again = split_kfold(manifest, 10, 99);
    for (std::size_t f = 0; f < 10; ++f) {
        CHECK(plan.folds[f].val_ids == again.folds[f].val_ids);
        CHECK(plan.folds[f].train_ids == again.folds[f].train_ids);
    }

    FoldPlan single = split_kfold(manifest, 1, 7);
    REQUIRE(single.folds.size() == 1);
    CHECK(single.folds[0].train_ids.size() == 80);
    CHECK(single.folds[0].val_ids.size() == 20);
    std::size_t val_pos = 0;
    for (std::size_t id : single.folds[0].val_ids) val_pos += manifest.entries[id].label;
    CHECK(val_pos == 10);

    CHECK_THROWS_AS(split_kfold(manifest, 51, 1), InvalidConfig);
}

TEST_CASE("augment_features: identity at zero, seeded, variance calibrated") {
    InstanceBag bag = random_bag(11, 8, 4);
    RngStream rng(1, {stream_tag::kAugment, 0});
    InstanceBag same = augment_features(bag, 0.0, rng);
    CHECK(same.features.bits_equal(bag.features));

    auto jitter = [&](std::uint64_t seed) {
        RngStream r(seed, {stream_tag::kAugment, 1});
        return augment_features(bag, 0.1, r);
    };
    CHECK(jitter(5).features.bits_equal(jitter(5).features));
    CHECK(!jitter(5).features.bits_equal(jitter(6).features));

    // Sample variance of the added jitter over 1e5 draws within 2%.
    const double sigma = 0.37;
    InstanceBag wide = random_bag(12, 250, 400);
    RngStream r(9, {stream_tag::kAugment, 2});
    InstanceBag noisy = augment_features(wide, sigma, r);
    double mean = 0.0;
    const std::size_t n = wide.features.size();
    REQUIRE(n == 100000);
    std::vector<double> deltas(n);
    for (std::size_t i = 0; i < n; ++i) {
        deltas[i] = noisy.features[i] - wide.features[i];
        mean += deltas[i];
    }
    mean /= double(n);
    double var = 0.0;
    for (double d : deltas) var += (d - mean) * (d - mean);
    var /= double(n - 1);
    CHECK(std::abs(var - sigma * sigma) <= 0.02 * sigma * sigma);

    CHECK_THROWS_AS(augment_features(bag, -0.1, rng), InvalidConfig);
}

TEST_CASE("manifest: loading validates referenced files up front") {
    SyntheticSpec spec;
    spec.bags_per_class = 3;
    spec.bag_size = 4;
    spec.feature_dim = 2;
    spec.seed = 77;
    TempDir dir("manifest");
    DatasetManifest manifest = generate_synthetic(spec, dir.str());
    const std::string manifest_path = (dir.path / "manifest.tsv").string();
    CHECK_NOTHROW(read_manifest(manifest_path, true));

    // Corrupt one referenced bag: validation must fail before any training.
    {
        std::ofstream out(dir.path / manifest.entries[2].path,
                          std::ios::binary | std::ios::trunc);
        out << "garbage";
    }
    CHECK_THROWS_AS(read_manifest(manifest_path, true), FormatError);

    // Duplicate ids are rejected.
    {
        std::ofstream out(dir.path / "dup.tsv", std::ios::trunc);
        out << "bag_id\tpath\tlabel\n";
        out << "x\t" << manifest.entries[0].path << "\t0\n";
        out << "x\t" << manifest.entries[1].path << "\t0\n";
    }
    CHECK_THROWS_AS(read_manifest((dir.path / "dup.tsv").string(), false), FormatError);

    // Bad header.
    {
        std::ofstream out(dir.path / "hdr.tsv", std::ios::trunc);
        out << "id,path,label\n";
    }
    CHECK_THROWS_AS(read_manifest((dir.path / "hdr.tsv").string(), false), FormatError);
}
