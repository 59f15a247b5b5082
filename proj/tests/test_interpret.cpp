#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mil/binio.hpp"
#include "mil/errors.hpp"
#include "mil/interpret.hpp"
#include "mil/rng.hpp"

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
};

InstanceBag grid_bag(std::size_t m, std::size_t d, std::uint64_t seed) {
    InstanceBag bag;
    bag.bag_id = "g" + std::to_string(seed);
    bag.label = 1;
    RngStream rng(seed, {21});
    bag.features = Tensor(m, d);
    for (std::size_t i = 0; i < bag.features.size(); ++i) bag.features[i] = rng.next_gaussian();
    bag.coords.emplace();
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(double(m))));
    for (std::size_t i = 0; i < m; ++i) bag.coords->emplace_back(i / side, i % side);
    bag.original_indices.resize(m);
    for (std::size_t i = 0; i < m; ++i) bag.original_indices[i] = i;
    return bag;
}

ModelConfig small_config(std::size_t d) {
    ModelConfig cfg;
    cfg.input_dim = d;
    cfg.hidden1 = 16;
    cfg.hidden2 = 8;
    cfg.attention_dim = 4;
    return cfg;
}

}  // namespace

TEST_CASE("attention map: degenerate ranges normalize to 1") {
    MilModel model = MilModel::init(small_config(4), 2);
    InstanceBag single = grid_bag(1, 4, 3);
    AttentionMap map = attention_map(model, single);
    REQUIRE(map.normalized.size() == 1);
    CHECK(map.normalized[0] == 1.0);

    // Identical instances mean uniform attention: all values equal.
    InstanceBag bag = grid_bag(9, 4, 4);
    for (std::size_t i = 1; i < 9; ++i) {
        for (std::size_t j = 0; j < 4; ++j) bag.features.at(i, j) = bag.features.at(0, j);
    }
    AttentionMap uniform = attention_map(model, bag);
    for (double v : uniform.normalized) CHECK(v == 1.0);

    CHECK_THROWS_AS(attention_map(model, InstanceBag{}), TooFewInstances);
}

TEST_CASE("attention map: normalization preserves attention ranking") {
    MilModel model = MilModel::init(small_config(6), 5);
    InstanceBag bag = grid_bag(40, 6, 6);
    AttentionMap map = attention_map(model, bag);
    REQUIRE(map.raw.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) {
        for (std::size_t j = 0; j < 40; ++j) {
            if (map.raw[i] < map.raw[j]) {
                CHECK(map.normalized[i] <= map.normalized[j]);
            }
        }
    }
    for (double v : map.normalized) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("render_grid: quantization, empty cells, round trip") {
    AttentionMap map;
    map.bag_id = "q";
    map.raw = {1.0, 0.0, 0.5, 0.5};
    map.normalized = {1.0, 0.0, 0.5, 0.5};
    map.coords = {{std::pair<std::uint32_t, std::uint32_t>{0, 0},
                   {0, 1},
                   {1, 0},
                   {1, 1}}};
    TempDir dir("pgm");
    const std::string pgm = (dir.path / "q.pgm").string();
    const std::string csv = (dir.path / "q.csv").string();
    render_grid(map, pgm, csv);

    PgmImage img = read_pgm(pgm);
    REQUIRE(img.width == 2);
    REQUIRE(img.height == 2);
    CHECK(img.pixels[0] == 255);
    CHECK(img.pixels[1] == 0);
    CHECK(img.pixels[2] == 128);  // round-half-up of 127.5
    CHECK(img.pixels[3] == 128);

    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "row,col,raw,normalized");

    // A sparse map leaves unoccupied cells black.
    AttentionMap sparse = map;
    sparse.coords = {{std::pair<std::uint32_t, std::uint32_t>{0, 0}, {2, 2}, {0, 2}, {2, 0}}};
    const std::string pgm2 = (dir.path / "s.pgm").string();
    render_grid(sparse, pgm2, (dir.path / "s.csv").string());
    PgmImage img2 = read_pgm(pgm2);
    REQUIRE(img2.width == 3);
    REQUIRE(img2.height == 3);
    CHECK(img2.pixels[1 * 3 + 1] == 0);
    CHECK(img2.pixels[0 * 3 + 1] == 0);
}

TEST_CASE("render_grid: duplicate or missing coordinates are rejected") {
    AttentionMap map;
    map.raw = {0.1, 0.9};
    map.normalized = {0.0, 1.0};
    TempDir dir("badcoords");
    CHECK_THROWS_AS(
        render_grid(map, (dir.path / "a.pgm").string(), (dir.path / "a.csv").string()),
        InvalidCoords);
    map.coords = {{std::pair<std::uint32_t, std::uint32_t>{0, 0}, {0, 0}}};
    CHECK_THROWS_AS(
        render_grid(map, (dir.path / "b.pgm").string(), (dir.path / "b.csv").string()),
        InvalidCoords);
}

TEST_CASE("heatmaps are byte-deterministic for a fixed model and bag") {
    MilModel model = MilModel::init(small_config(5), 8);
    InstanceBag bag = grid_bag(25, 5, 9);
    TempDir dir("det");
    const std::string a = (dir.path / "a.pgm").string();
    const std::string b = (dir.path / "b.pgm").string();
    render_grid(attention_map(model, bag), a, (dir.path / "a.csv").string());
    render_grid(attention_map(model, bag), b, (dir.path / "b.csv").string());
    CHECK(binio::read_file(a) == binio::read_file(b));
    CHECK(binio::read_file((dir.path / "a.csv").string()) ==
          binio::read_file((dir.path / "b.csv").string()));
}
