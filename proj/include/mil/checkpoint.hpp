#ifndef MIL_CHECKPOINT_HPP
#define MIL_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mil/model.hpp"

namespace mil {

constexpr std::uint32_t kCheckpointVersion = 1;

// Best-epoch metadata carried next to the parameter snapshot.
struct CheckpointMeta {
    std::uint32_t epoch = 0;
    double val_loss = 0.0;
    double val_auc = 0.0;
    std::string config_fingerprint;
};

struct Checkpoint {
    std::vector<Parameter> params;
    CheckpointMeta meta;

    static Checkpoint snapshot(const MilModel& model, CheckpointMeta meta);
    MilModel restore() const;
};

// Container layout: magic "MILC", u32 version, u32 parameter count, then per
// parameter (u16-length name, u32 rows, u32 cols, u8 trainable, row-major
// little-endian f64 payload), then a metadata trailer.
std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace mil

#endif  // MIL_CHECKPOINT_HPP
