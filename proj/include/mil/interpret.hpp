#ifndef MIL_INTERPRET_HPP
#define MIL_INTERPRET_HPP

#include <optional>
#include <string>
#include <vector>

#include "mil/data.hpp"
#include "mil/model.hpp"

namespace mil {

// Attention over a full bag, taken from the predicted class's row and
// normalized with a 1st-99th percentile min-max (rank preserving up to the
// clamped tails; a degenerate range maps everything to 1.0).
struct AttentionMap {
    std::string bag_id;
    std::size_t predicted_class = 0;
    std::vector<double> raw;
    std::vector<double> normalized;
    std::optional<std::vector<std::pair<std::uint32_t, std::uint32_t>>> coords;
};

AttentionMap attention_map(MilModel& model, const InstanceBag& bag);

// Writes a binary PGM (P5, maxval 255) with pixel (row, col) =
// round(255 * normalized attention), empty cells 0, plus a CSV
// (row, col, raw, normalized). Requires coordinates; duplicates are an
// error.
void render_grid(const AttentionMap& map, const std::string& pgm_path,
                 const std::string& csv_path);

// 8-bit grayscale helper for round-trip tests and the CLI.
struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

PgmImage read_pgm(const std::string& path);

}  // namespace mil

#endif  // MIL_INTERPRET_HPP
