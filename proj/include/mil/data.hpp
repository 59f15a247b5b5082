#ifndef MIL_DATA_HPP
#define MIL_DATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mil/rng.hpp"
#include "mil/tensor.hpp"

namespace mil {

constexpr std::uint32_t kBagFormatVersion = 1;

// One labelled bag: M instances of D features, optional grid coordinates
// for heatmaps, and the original index of every instance (identity for a
// freshly built bag, the selected indices after sampling).
struct InstanceBag {
    std::string bag_id;
    std::size_t label = 0;
    Tensor features;  // M x D
    std::optional<std::vector<std::pair<std::uint32_t, std::uint32_t>>> coords;  // (row, col)
    std::vector<std::size_t> original_indices;

    std::size_t size() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
    void validate() const;
};

// Synthetic generator regimes. Focal bags carry the class signal in a small
// witness subset; diffuse bags shift every instance. Witnesses occupy the
// first ceil(w*M) rows of a positive focal bag, which keeps instance-level
// ground truth recoverable without a side channel (the model is permutation
// invariant, so the placement is inert).
struct SyntheticSpec {
    enum class Regime { Focal, Diffuse };

    Regime regime = Regime::Focal;
    double witness_rate = 0.05;  // Focal: fraction of witness instances
    double separation = 3.0;     // Focal: witness mean shift along the signal axis
    double shift = 0.5;          // Diffuse: per-instance mean shift
    std::size_t bags_per_class = 100;
    std::size_t bag_size = 200;
    std::size_t feature_dim = 32;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t witness_count() const;  // ceil(witness_rate * bag_size)
};

struct ManifestEntry {
    std::string bag_id;
    std::string path;  // relative to the manifest's directory
    std::size_t label;
};

struct DatasetManifest {
    std::string name;
    std::vector<std::string> class_names{"negative", "positive"};
    std::vector<ManifestEntry> entries;
    std::string base_dir;  // directory the entry paths resolve against

    std::string resolve_path(const ManifestEntry& e) const;
    void validate_unique_ids() const;
};

// Stratified fold plan; ids index into the manifest entries.
struct FoldPlan {
    std::size_t k = 1;
    struct Fold {
        std::vector<std::size_t> train_ids;
        std::vector<std::size_t> val_ids;
    };
    std::vector<Fold> folds;
    std::uint64_t seed = 0;
};

// Bag container: magic "MILB", u32 version, u32 M, u32 D, u8 has_coords,
// u32 label, u16-length bag id, M*D little-endian f64 features, then M*2
// little-endian u32 coordinates when present.
std::vector<std::uint8_t> bag_to_bytes(const InstanceBag& bag);
InstanceBag bag_from_bytes(const std::vector<std::uint8_t>& bytes);
void write_bag(const std::string& path, const InstanceBag& bag);
InstanceBag read_bag(const std::string& path);

// Generates bags plus a manifest under out_dir ("manifest.tsv" and one
// .milb file per bag). Deterministic for a given spec.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

// Manifest TSV: header "bag_id<TAB>path<TAB>label", one row per bag.
void write_manifest(const DatasetManifest& manifest, const std::string& path);
// Loads the manifest; with validate_bags, checks every referenced file's
// magic and feature shape up front.
DatasetManifest read_manifest(const std::string& path, bool validate_bags = true);
InstanceBag load_bag(const DatasetManifest& manifest, std::size_t entry_index);

// A manifest plus its bags loaded into memory.
struct Dataset {
    DatasetManifest manifest;
    std::vector<InstanceBag> bags;

    static Dataset load(const std::string& manifest_path);
    std::size_t size() const { return bags.size(); }
};

// Raw proliferation grade {1,2,3} -> {low=0, high=1}.
std::size_t dichotomize(int raw_grade);

// Class-stratified shuffled folds; k = 1 yields a single 80/20 split.
FoldPlan split_kfold(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed);

// Adds i.i.d. N(0, sigma^2) feature jitter; sigma = 0 returns the bag
// unchanged. Training-only (stage 2 of the two-stage procedure).
InstanceBag augment_features(const InstanceBag& bag, double sigma, RngStream& rng);

}  // namespace mil

#endif  // MIL_DATA_HPP
