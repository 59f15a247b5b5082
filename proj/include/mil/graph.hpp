#ifndef MIL_GRAPH_HPP
#define MIL_GRAPH_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "mil/tensor.hpp"

namespace mil {

// A learnable (or frozen) tensor. grad always matches value's shape and
// accumulates across backward passes until zero_grad().
struct Parameter {
    std::string name;
    std::string group;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name_, std::string group_, Tensor value_, bool trainable_ = true)
        : name(std::move(name_)),
          group(std::move(group_)),
          value(std::move(value_)),
          grad(value.rows(), value.cols()),
          trainable(trainable_) {}

    void zero_grad() { grad.fill(0.0); }
};

using NodeId = std::size_t;

// Reverse-mode tape over dense matrices. Nodes are appended in topological
// order by construction; forward() evaluates pending nodes, so a graph can
// be extended after a partial forward (the instance-loss mask depends on
// attention values computed earlier in the same graph).
class Graph {
public:
    enum class Op {
        Input,
        Param,
        MatMul,
        Add,
        RowBroadcastAdd,
        Tanh,
        Sigmoid,
        Relu,
        Mul,
        SoftmaxRows,
        Log,
        Scale,
        Sum,
        Mean,
    };

    // Floor applied inside the log primitive; keeps cross-entropy of
    // fully-confident predictions finite.
    static constexpr double kLogFloor = 1e-12;

    NodeId input(Tensor value);
    NodeId param(Parameter& p);

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
    NodeId add(NodeId a, NodeId b);
    NodeId row_broadcast_add(NodeId m, NodeId row);
    NodeId tanh(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId relu(NodeId a);
    NodeId mul(NodeId a, NodeId b);
    NodeId softmax_rows(NodeId a);
    NodeId log(NodeId a);
    NodeId scale(NodeId a, double alpha);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);

    // Evaluates every node not yet evaluated, in insertion order.
    void forward();
    // Re-evaluates the whole graph (parameters are re-read), e.g. after a
    // finite-difference perturbation.
    void reforward();
    // Replaces an input node's value (same shape) without resetting the
    // evaluation cursor; callers re-run forward()/reforward() as needed.
    void set_input(NodeId id, Tensor value);

    // Accumulates d(loss)/d(parameter) into every reachable trainable
    // parameter. loss must be scalar and forward must be complete.
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Op op;
        NodeId a = 0;
        NodeId b = 0;
        bool trans_a = false;
        bool trans_b = false;
        double alpha = 0.0;
        Parameter* param = nullptr;
        std::size_t rows = 0;  // output shape, known at construction
        std::size_t cols = 0;
        Tensor value;
        Tensor grad;
    };

    NodeId push(Node n);
    NodeId unary(Op op, NodeId a);
    void eval(Node& n, NodeId id);
    std::string node_name(const Node& n, NodeId id) const;

    std::vector<Node> nodes_;
    std::size_t evaluated_ = 0;
    bool forward_done_ = false;
};

// Row-wise softmax with max subtraction; rows sum to 1 within 1e-12.
Tensor softmax_rows(const Tensor& m);

const char* op_name(Graph::Op op);

}  // namespace mil

#endif  // MIL_GRAPH_HPP
