#include "mil/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "mil/errors.hpp"

namespace mil {

namespace {

double nearest_rank_percentile(const std::vector<double>& sorted, double q) {
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    if (rank < 1) rank = 1;
    if (rank > sorted.size()) rank = sorted.size();
    return sorted[rank - 1];
}

}  // namespace

AttentionMap attention_map(MilModel& model, const InstanceBag& bag) {
    if (bag.size() == 0) throw TooFewInstances("attention map needs a nonempty bag");
    BagPrediction pred = model.predict(bag.features);

    AttentionMap map;
    map.bag_id = bag.bag_id;
    map.predicted_class = pred.predicted_class();
    map.coords = bag.coords;
    map.raw.resize(bag.size());
    for (std::size_t i = 0; i < bag.size(); ++i) {
        map.raw[i] = pred.attention.at(map.predicted_class, i);
    }

    std::vector<double> sorted = map.raw;
    std::sort(sorted.begin(), sorted.end());
    const double lo = nearest_rank_percentile(sorted, 0.01);
    const double hi = nearest_rank_percentile(sorted, 0.99);
    map.normalized.resize(map.raw.size());
    if (hi <= lo) {
        std::fill(map.normalized.begin(), map.normalized.end(), 1.0);
    } else {
        for (std::size_t i = 0; i < map.raw.size(); ++i) {
            map.normalized[i] = std::clamp((map.raw[i] - lo) / (hi - lo), 0.0, 1.0);
        }
    }
    return map;
}

void render_grid(const AttentionMap& map, const std::string& pgm_path,
                 const std::string& csv_path) {
    if (!map.coords) throw InvalidCoords("attention map carries no grid coordinates");
    if (map.coords->size() != map.normalized.size()) {
        throw InvalidCoords("coordinate count does not match attention length");
    }
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    std::uint32_t max_row = 0, max_col = 0;
    for (const auto& rc : *map.coords) {
        if (!seen.insert(rc).second) {
            throw InvalidCoords("duplicate grid coordinate (" + std::to_string(rc.first) + "," +
                                std::to_string(rc.second) + ")");
        }
        max_row = std::max(max_row, rc.first);
        max_col = std::max(max_col, rc.second);
    }
    const std::size_t height = max_row + 1;
    const std::size_t width = max_col + 1;
    std::vector<std::uint8_t> pixels(width * height, 0);
    for (std::size_t i = 0; i < map.coords->size(); ++i) {
        const auto& [r, c] = (*map.coords)[i];
        pixels[r * width + c] =
            static_cast<std::uint8_t>(std::lround(255.0 * map.normalized[i]));
    }

    {
        std::ofstream out(pgm_path, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot create '" + pgm_path + "'");
        out << "P5\n" << width << " " << height << "\n255\n";
        out.write(reinterpret_cast<const char*>(pixels.data()),
                  static_cast<std::streamsize>(pixels.size()));
    }
    {
        std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot create '" + csv_path + "'");
        out << "row,col,raw,normalized\n";
        char buf[96];
        for (std::size_t i = 0; i < map.coords->size(); ++i) {
            const auto& [r, c] = (*map.coords)[i];
            std::snprintf(buf, sizeof(buf), "%u,%u,%.17g,%.17g\n", r, c, map.raw[i],
                          map.normalized[i]);
            out << buf;
        }
    }
}

PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::string magic;
    in >> magic;
    if (magic != "P5") throw FormatError("'" + path + "' is not a binary PGM");
    PgmImage img;
    std::size_t maxval = 0;
    in >> img.width >> img.height >> maxval;
    if (!in || maxval != 255) throw FormatError("'" + path + "' has an unsupported PGM header");
    in.get();  // single whitespace after the header
    img.pixels.resize(img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
        throw FormatError("'" + path + "' is truncated");
    }
    return img;
}

}  // namespace mil
