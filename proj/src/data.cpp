#include "mil/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mil/binio.hpp"
#include "mil/errors.hpp"
#include "mil/instrument.hpp"

namespace fs = std::filesystem;

namespace mil {

void InstanceBag::validate() const {
    if (size() < 1) throw TooFewInstances("bag '" + bag_id + "' has no instances");
    if (coords && coords->size() != size()) {
        throw ShapeError("bag '" + bag_id + "' has " + std::to_string(coords->size()) +
                         " coordinates for " + std::to_string(size()) + " instances");
    }
    if (!original_indices.empty()) {
        if (original_indices.size() != size()) {
            throw ShapeError("bag '" + bag_id + "' original_indices length mismatch");
        }
        std::set<std::size_t> uniq(original_indices.begin(), original_indices.end());
        if (uniq.size() != original_indices.size()) {
            throw InvalidValue("bag '" + bag_id + "' has duplicate original indices");
        }
    }
}

void SyntheticSpec::validate() const {
    if (bag_size < 1 || feature_dim < 1 || bags_per_class < 1) {
        throw InvalidConfig("synthetic spec sizes must be >= 1");
    }
    if (regime == Regime::Focal) {
        if (!(witness_rate > 0.0) || witness_rate >= 1.0) {
            throw InvalidConfig("witness rate must be in (0, 1)");
        }
        if (!(separation > 0.0)) throw InvalidConfig("separation must be positive");
        if (witness_rate * static_cast<double>(bag_size) < 1.0) {
            throw InvalidConfig("witness_rate * bag_size must be >= 1");
        }
    } else {
        if (!(shift > 0.0)) throw InvalidConfig("diffuse shift must be positive");
    }
}

std::size_t SyntheticSpec::witness_count() const {
    return static_cast<std::size_t>(std::ceil(witness_rate * static_cast<double>(bag_size)));
}

// ---------------------------------------------------------------------------
// Bag container
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> bag_to_bytes(const InstanceBag& bag) {
    bag.validate();
    std::vector<std::uint8_t> out;
    binio::put_bytes(out, "MILB", 4);
    binio::put_u32(out, kBagFormatVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(bag.size()));
    binio::put_u32(out, static_cast<std::uint32_t>(bag.dim()));
    binio::put_u8(out, bag.coords ? 1 : 0);
    binio::put_u32(out, static_cast<std::uint32_t>(bag.label));
    binio::put_string16(out, bag.bag_id);
    for (std::size_t i = 0; i < bag.features.size(); ++i) {
        binio::put_f64(out, bag.features[i]);
    }
    if (bag.coords) {
        for (const auto& [r, c] : *bag.coords) {
            binio::put_u32(out, r);
            binio::put_u32(out, c);
        }
    }
    return out;
}

InstanceBag bag_from_bytes(const std::vector<std::uint8_t>& bytes) {
    binio::Reader r(bytes.data(), bytes.size(), "bag file");
    r.expect_magic("MILB");
    const std::uint32_t version = r.u32();
    if (version != kBagFormatVersion) {
        throw FormatError("unsupported bag format version " + std::to_string(version));
    }
    const std::uint64_t m = r.u32();
    const std::uint64_t d = r.u32();
    const bool has_coords = r.u8() != 0;
    const std::uint32_t label = r.u32();
    std::string bag_id = r.string16();
    if (m < 1 || d < 1) throw FormatError("bag file declares an empty feature matrix");
    const std::uint64_t cells = m * d;
    if (cells > (1ULL << 31) || cells * 8 > r.remaining()) {
        throw FormatError("bag file payload does not match declared " + std::to_string(m) + "x" +
                          std::to_string(d) + " size");
    }
    std::vector<double> values(cells);
    for (double& v : values) v = r.f64();

    InstanceBag bag;
    bag.bag_id = std::move(bag_id);
    bag.label = label;
    try {
        bag.features = Tensor(m, d, std::move(values));
    } catch (const InvalidValue&) {
        throw FormatError("bag file contains non-finite features");
    }
    if (has_coords) {
        bag.coords.emplace();
        bag.coords->reserve(m);
        for (std::uint64_t i = 0; i < m; ++i) {
            const std::uint32_t row = r.u32();
            const std::uint32_t col = r.u32();
            bag.coords->emplace_back(row, col);
        }
    }
    r.expect_exhausted();
    bag.original_indices.resize(m);
    std::iota(bag.original_indices.begin(), bag.original_indices.end(), 0);
    return bag;
}

void write_bag(const std::string& path, const InstanceBag& bag) {
    binio::write_file(path, bag_to_bytes(bag));
}

InstanceBag read_bag(const std::string& path) { return bag_from_bytes(binio::read_file(path)); }

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    spec.validate();
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.name = spec.regime == SyntheticSpec::Regime::Focal ? "focal" : "diffuse";
    manifest.base_dir = out_dir;

    const std::size_t side =
        static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.bag_size))));
    const std::size_t n_witness = spec.witness_count();

    std::size_t bag_index = 0;
    for (std::size_t label = 0; label < 2; ++label) {
        for (std::size_t b = 0; b < spec.bags_per_class; ++b, ++bag_index) {
            RngStream rng(spec.seed, {stream_tag::kGenerate, bag_index});
            InstanceBag bag;
            bag.label = label;
            {
                std::ostringstream id;
                id << manifest.name << "_" << (label == 0 ? "neg" : "pos") << "_";
                id.width(3);
                id.fill('0');
                id << b;
                bag.bag_id = id.str();
            }
            bag.features = Tensor(spec.bag_size, spec.feature_dim);
            for (std::size_t i = 0; i < spec.bag_size; ++i) {
                // Signal axis is the first basis vector; any fixed unit
                // direction is equivalent under the isotropic noise.
                double mean0 = 0.0;
                if (label == 1) {
                    if (spec.regime == SyntheticSpec::Regime::Diffuse) {
                        mean0 = spec.shift;
                    } else if (i < n_witness) {
                        mean0 = spec.separation;
                    }
                }
                for (std::size_t j = 0; j < spec.feature_dim; ++j) {
                    bag.features.at(i, j) = rng.next_gaussian() + (j == 0 ? mean0 : 0.0);
                }
            }
            bag.coords.emplace();
            for (std::size_t i = 0; i < spec.bag_size; ++i) {
                bag.coords->emplace_back(static_cast<std::uint32_t>(i / side),
                                         static_cast<std::uint32_t>(i % side));
            }
            bag.original_indices.resize(spec.bag_size);
            std::iota(bag.original_indices.begin(), bag.original_indices.end(), 0);

            const std::string filename = bag.bag_id + ".milb";
            write_bag((fs::path(out_dir) / filename).string(), bag);
            manifest.entries.push_back({bag.bag_id, filename, label});
        }
    }
    write_manifest(manifest, (fs::path(out_dir) / "manifest.tsv").string());
    return manifest;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string DatasetManifest::resolve_path(const ManifestEntry& e) const {
    fs::path p(e.path);
    if (p.is_absolute() || base_dir.empty()) return e.path;
    return (fs::path(base_dir) / p).string();
}

void DatasetManifest::validate_unique_ids() const {
    std::set<std::string> seen;
    for (const ManifestEntry& e : entries) {
        if (!seen.insert(e.bag_id).second) {
            throw FormatError("manifest lists bag_id '" + e.bag_id + "' more than once");
        }
    }
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot create '" + path + "'");
    out << "bag_id\tpath\tlabel\n";
    for (const ManifestEntry& e : manifest.entries) {
        out << e.bag_id << '\t' << e.path << '\t' << e.label << '\n';
    }
}

DatasetManifest read_manifest(const std::string& path, bool validate_bags) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    DatasetManifest manifest;
    manifest.base_dir = fs::path(path).parent_path().string();
    manifest.name = fs::path(path).stem().string();

    std::string line;
    if (!std::getline(in, line)) throw FormatError("manifest '" + path + "' is empty");
    if (line == "bag_id\tpath\tlabel\r") line.pop_back();
    if (line != "bag_id\tpath\tlabel") {
        throw FormatError("manifest '" + path + "' has an unexpected header");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw FormatError("manifest '" + path + "' line " + std::to_string(line_no) +
                              " is not bag_id<TAB>path<TAB>label");
        }
        ManifestEntry e;
        e.bag_id = line.substr(0, t1);
        e.path = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string label_str = line.substr(t2 + 1);
        try {
            std::size_t used = 0;
            const long v = std::stol(label_str, &used);
            if (used != label_str.size() || v < 0) throw std::invalid_argument("label");
            e.label = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw FormatError("manifest '" + path + "' line " + std::to_string(line_no) +
                              " has a bad label '" + label_str + "'");
        }
        manifest.entries.push_back(std::move(e));
    }
    manifest.validate_unique_ids();
    if (validate_bags) {
        for (const ManifestEntry& e : manifest.entries) {
            InstanceBag bag = read_bag(manifest.resolve_path(e));
            if (bag.label != e.label) {
                throw FormatError("bag '" + e.bag_id + "' label " + std::to_string(bag.label) +
                                  " disagrees with manifest label " + std::to_string(e.label));
            }
        }
    }
    return manifest;
}

InstanceBag load_bag(const DatasetManifest& manifest, std::size_t entry_index) {
    return read_bag(manifest.resolve_path(manifest.entries.at(entry_index)));
}

Dataset Dataset::load(const std::string& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path, /*validate_bags=*/false);
    ds.bags.reserve(ds.manifest.entries.size());
    for (std::size_t i = 0; i < ds.manifest.entries.size(); ++i) {
        InstanceBag bag = load_bag(ds.manifest, i);
        if (bag.label != ds.manifest.entries[i].label) {
            throw FormatError("bag '" + bag.bag_id + "' label disagrees with its manifest row");
        }
        ds.bags.push_back(std::move(bag));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Labels, folds, augmentation
// ---------------------------------------------------------------------------

std::size_t dichotomize(int raw_grade) {
    switch (raw_grade) {
        case 1:
            return 0;
        case 2:
        case 3:
            return 1;
        default:
            throw InvalidLabel("raw grade must be 1, 2 or 3; got " + std::to_string(raw_grade));
    }
}

FoldPlan split_kfold(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed) {
    if (k < 1) throw InvalidConfig("fold count must be >= 1");

    // Shuffle ids within each class, then deal contiguous chunks.
    std::vector<std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const std::size_t label = manifest.entries[i].label;
        if (label >= by_class.size()) by_class.resize(label + 1);
        by_class[label].push_back(i);
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& ids = by_class[c];
        if (k >= 2 && ids.size() < k) {
            throw InvalidConfig("class " + std::to_string(c) + " has " +
                                std::to_string(ids.size()) + " bags, fewer than k=" +
                                std::to_string(k));
        }
        if (k == 1 && ids.size() < 2) {
            throw InvalidConfig("class " + std::to_string(c) + " needs at least 2 bags");
        }
        RngStream rng(seed, {stream_tag::kSplit, c});
        for (std::size_t i = ids.size(); i > 1; --i) {
            std::swap(ids[i - 1], ids[rng.next_below(i)]);
        }
    }

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    if (k == 1) {
        FoldPlan::Fold fold;
        for (const auto& ids : by_class) {
            const std::size_t n_train = (ids.size() * 4) / 5;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                (i < n_train ? fold.train_ids : fold.val_ids).push_back(ids[i]);
            }
        }
        std::sort(fold.train_ids.begin(), fold.train_ids.end());
        std::sort(fold.val_ids.begin(), fold.val_ids.end());
        plan.folds.push_back(std::move(fold));
        return plan;
    }

    plan.folds.resize(k);
    for (const auto& ids : by_class) {
        const std::size_t base = ids.size() / k;
        const std::size_t extra = ids.size() % k;
        std::size_t cursor = 0;
        for (std::size_t f = 0; f < k; ++f) {
            const std::size_t take = base + (f < extra ? 1 : 0);
            for (std::size_t i = 0; i < take; ++i) {
                plan.folds[f].val_ids.push_back(ids[cursor + i]);
            }
            cursor += take;
        }
    }
    for (std::size_t f = 0; f < k; ++f) {
        std::sort(plan.folds[f].val_ids.begin(), plan.folds[f].val_ids.end());
        std::set<std::size_t> val(plan.folds[f].val_ids.begin(), plan.folds[f].val_ids.end());
        for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
            if (!val.count(i)) plan.folds[f].train_ids.push_back(i);
        }
    }
    return plan;
}

InstanceBag augment_features(const InstanceBag& bag, double sigma, RngStream& rng) {
    if (sigma < 0.0) throw InvalidConfig("augmentation sigma must be >= 0");
    if (sigma == 0.0) return bag;
    ++instrument::counters().augment_events;
    InstanceBag out = bag;
    for (std::size_t i = 0; i < out.features.size(); ++i) {
        out.features[i] += sigma * rng.next_gaussian();
    }
    return out;
}

}  // namespace mil
