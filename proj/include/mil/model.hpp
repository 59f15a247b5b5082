#ifndef MIL_MODEL_HPP
#define MIL_MODEL_HPP

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mil/graph.hpp"

namespace mil {

// Parameter group names. The norm group stands in for batch normalization
// and can never be made trainable.
namespace group {
inline constexpr const char* kBlock1 = "encoder.block1";
inline constexpr const char* kBlock2 = "encoder.block2";
inline constexpr const char* kNorm = "encoder.norm";
inline constexpr const char* kAttention = "attention";
inline constexpr const char* kBagClassifier = "bag_classifier";
inline constexpr const char* kInstanceHead = "instance_head";
}  // namespace group

struct ModelConfig {
    std::size_t input_dim = 32;
    std::size_t hidden1 = 128;       // block1 output width
    std::size_t hidden2 = 64;        // block2 output width = embedding dim
    std::size_t attention_dim = 32;  // gated-attention hidden width
    std::size_t n_classes = 2;
    std::size_t classifier_depth = 1;  // fully connected layers per class head
    double block1_init_gain = 1.0;     // scales block1's init range

    void validate() const;
};

struct BagPrediction {
    Tensor class_probabilities;  // 1 x N, sums to 1
    Tensor attention;            // N x M, each row sums to 1
    Tensor instance_logits;      // M x 2

    std::size_t predicted_class() const;
};

struct PseudoLabel {
    std::size_t instance;
    int label;  // 1 = high attention, 0 = low attention
    bool operator==(const PseudoLabel&) const = default;
};

// Top-B'/bottom-B' pseudo labels from the true class's attention row.
// B' = min(B, floor(M/2)); ties resolve to the lower instance index and the
// two selections never overlap. Output lists positives (descending
// attention) then negatives (ascending attention).
std::vector<PseudoLabel> pseudo_labels(const Tensor& attention_weights, std::size_t true_class,
                                       std::size_t B);

class MilModel {
public:
    MilModel() = default;

    // Fresh model, weights uniform in +-1/sqrt(fan_in) from seeded streams.
    static MilModel init(const ModelConfig& cfg, std::uint64_t seed);
    // Rebuilds a model from a named parameter snapshot (checkpoint load).
    static MilModel from_parameters(std::vector<Parameter> params);

    const ModelConfig& config() const { return cfg_; }
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    Parameter& find(const std::string& name);
    const Parameter& find(const std::string& name) const;

    // Marks a whole group trainable or frozen. encoder.norm is locked.
    void set_group_trainable(const std::string& grp, bool trainable);
    void freeze_encoder();
    bool encoder_fully_frozen() const;
    void zero_grads();

    // Instance-wise feature extractor output (M x hidden2), forward only.
    Tensor encode(const Tensor& instances);
    // (reps N x hidden2, weights N x M) from precomputed embeddings.
    std::pair<Tensor, Tensor> attention_pool(const Tensor& embeddings);
    // Per-class logits (1 x N) from pooled class representations (N x h2).
    Tensor bag_logits(const Tensor& reps);
    // Full-bag inference: probabilities, attention matrix, instance logits.
    BagPrediction predict(const Tensor& instances);

private:
    friend class BagForward;
    ModelConfig cfg_;
    std::deque<Parameter> params_;

    Parameter& add_param(const std::string& name, const std::string& grp, std::size_t rows,
                         std::size_t cols, bool trainable);
};

// One differentiable pass over a bag. Building from raw instances runs the
// encoder inside the graph; building from embeddings starts at the
// attention stage (the pre-extracted-features path, valid only while the
// whole encoder is frozen).
class BagForward {
public:
    enum class From { Instances, Embeddings };

    BagForward(MilModel& model, const Tensor& data, From from);

    Graph& graph() { return *graph_; }
    const Tensor& attention_row(std::size_t c) const;
    const Tensor& embeddings_value() const;
    const Tensor& class_rep_value(std::size_t c) const;
    BagPrediction prediction() const;

    // Appends the weighted bag/instance cross-entropy:
    //   loss = c_bag * CE(bag probs, label)
    //        + c_inst * mean CE(instance softmax, pseudo labels).
    // pseudo must be nonempty whenever c_inst > 0.
    NodeId add_total_loss(std::size_t bag_label, const std::vector<PseudoLabel>& pseudo,
                          double c_bag, double c_inst);

    std::size_t bag_size() const { return m_; }

private:
    MilModel* model_;
    std::unique_ptr<Graph> graph_;
    std::size_t m_ = 0;
    NodeId embeddings_ = 0;
    std::vector<NodeId> attention_rows_;
    std::vector<NodeId> class_reps_;
    NodeId bag_logits_ = 0;
    NodeId bag_probs_ = 0;
    NodeId instance_logits_ = 0;

    void build_heads();
};

}  // namespace mil

#endif  // MIL_MODEL_HPP
