#include "mil/checkpoint.hpp"

#include <fstream>

#include "mil/binio.hpp"

namespace mil {

namespace binio {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot create '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

}  // namespace binio

Checkpoint Checkpoint::snapshot(const MilModel& model, CheckpointMeta meta) {
    Checkpoint ckpt;
    ckpt.meta = std::move(meta);
    for (const Parameter* p : model.parameters()) {
        ckpt.params.push_back(*p);
    }
    return ckpt;
}

MilModel Checkpoint::restore() const { return MilModel::from_parameters(params); }

std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out;
    binio::put_bytes(out, "MILC", 4);
    binio::put_u32(out, kCheckpointVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const Parameter& p : ckpt.params) {
        binio::put_string16(out, p.name);
        binio::put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
        binio::put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
        binio::put_u8(out, p.trainable ? 1 : 0);
        for (std::size_t i = 0; i < p.value.size(); ++i) binio::put_f64(out, p.value[i]);
    }
    binio::put_u32(out, ckpt.meta.epoch);
    binio::put_f64(out, ckpt.meta.val_loss);
    binio::put_f64(out, ckpt.meta.val_auc);
    binio::put_string16(out, ckpt.meta.config_fingerprint);
    return out;
}

Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
    binio::Reader r(bytes.data(), bytes.size(), "checkpoint");
    r.expect_magic("MILC");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.string16();
        const std::uint64_t rows = r.u32();
        const std::uint64_t cols = r.u32();
        const bool trainable = r.u8() != 0;
        if (rows * cols > (1ULL << 30)) {
            throw FormatError("parameter '" + name + "' declares an implausible size");
        }
        std::vector<double> values(rows * cols);
        for (double& v : values) v = r.f64();
        Parameter p(name, std::string(), Tensor(rows, cols, std::move(values)), trainable);
        ckpt.params.push_back(std::move(p));
    }
    ckpt.meta.epoch = r.u32();
    ckpt.meta.val_loss = r.f64();
    ckpt.meta.val_auc = r.f64();
    ckpt.meta.config_fingerprint = r.string16();
    r.expect_exhausted();
    return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    binio::write_file(path, checkpoint_to_bytes(ckpt));
}

Checkpoint read_checkpoint(const std::string& path) {
    return checkpoint_from_bytes(binio::read_file(path));
}

}  // namespace mil
