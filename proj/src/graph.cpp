#include "mil/graph.hpp"

#include <algorithm>
#include <cmath>

#include "mil/errors.hpp"

namespace mil {

const char* op_name(Graph::Op op) {
    switch (op) {
        case Graph::Op::Input: return "input";
        case Graph::Op::Param: return "param";
        case Graph::Op::MatMul: return "matmul";
        case Graph::Op::Add: return "add";
        case Graph::Op::RowBroadcastAdd: return "row_broadcast_add";
        case Graph::Op::Tanh: return "tanh";
        case Graph::Op::Sigmoid: return "sigmoid";
        case Graph::Op::Relu: return "relu";
        case Graph::Op::Mul: return "mul";
        case Graph::Op::SoftmaxRows: return "softmax_rows";
        case Graph::Op::Log: return "log";
        case Graph::Op::Scale: return "scale";
        case Graph::Op::Sum: return "sum";
        case Graph::Op::Mean: return "mean";
    }
    return "?";
}

Tensor softmax_rows(const Tensor& m) {
    if (m.cols() == 0) throw ShapeError("softmax_rows on a tensor with zero columns");
    m.require_finite("softmax_rows input");
    Tensor out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* x = m.row(i);
        double* y = out.row(i);
        double mx = x[0];
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < m.cols(); ++j) y[j] *= inv;
    }
    return out;
}

std::string Graph::node_name(const Node& n, NodeId id) const {
    return std::string(op_name(n.op)) + "#" + std::to_string(id);
}

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return nodes_.size() - 1;
}

namespace {
std::string dims(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}
}  // namespace

NodeId Graph::input(Tensor value) {
    Node n;
    n.op = Op::Input;
    n.rows = value.rows();
    n.cols = value.cols();
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::param(Parameter& p) {
    Node n;
    n.op = Op::Param;
    n.param = &p;
    n.rows = p.value.rows();
    n.cols = p.value.cols();
    n.value = p.value;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    const Node& na = nodes_[a];
    const Node& nb = nodes_[b];
    const std::size_t ka = trans_a ? na.rows : na.cols;
    const std::size_t kb = trans_b ? nb.cols : nb.rows;
    if (ka != kb) {
        throw ShapeError("matmul#" + std::to_string(nodes_.size()) + ": inner dims of " +
                         dims(na.rows, na.cols) + (trans_a ? "^T" : "") + " and " +
                         dims(nb.rows, nb.cols) + (trans_b ? "^T" : "") + " do not agree");
    }
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    n.rows = trans_a ? na.cols : na.rows;
    n.cols = trans_b ? nb.rows : nb.cols;
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Node& na = nodes_[a];
    const Node& nb = nodes_[b];
    if (na.rows != nb.rows || na.cols != nb.cols) {
        throw ShapeError("add#" + std::to_string(nodes_.size()) + ": " + dims(na.rows, na.cols) +
                         " vs " + dims(nb.rows, nb.cols));
    }
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::row_broadcast_add(NodeId m, NodeId row) {
    const Node& nm = nodes_[m];
    const Node& nr = nodes_[row];
    if (nr.rows != 1 || nr.cols != nm.cols) {
        throw ShapeError("row_broadcast_add#" + std::to_string(nodes_.size()) + ": row " +
                         dims(nr.rows, nr.cols) + " does not broadcast over " +
                         dims(nm.rows, nm.cols));
    }
    Node n;
    n.op = Op::RowBroadcastAdd;
    n.a = m;
    n.b = row;
    n.rows = nm.rows;
    n.cols = nm.cols;
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Node& na = nodes_[a];
    const Node& nb = nodes_[b];
    if (na.rows != nb.rows || na.cols != nb.cols) {
        throw ShapeError("mul#" + std::to_string(nodes_.size()) + ": " + dims(na.rows, na.cols) +
                         " vs " + dims(nb.rows, nb.cols));
    }
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Graph::unary(Op op, NodeId a) {
    Node n;
    n.op = op;
    n.a = a;
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

NodeId Graph::tanh(NodeId a) { return unary(Op::Tanh, a); }

NodeId Graph::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }

NodeId Graph::relu(NodeId a) { return unary(Op::Relu, a); }

NodeId Graph::softmax_rows(NodeId a) {
    if (nodes_[a].cols < 1) {
        throw ShapeError("softmax_rows#" + std::to_string(nodes_.size()) + ": zero columns");
    }
    return unary(Op::SoftmaxRows, a);
}

NodeId Graph::log(NodeId a) { return unary(Op::Log, a); }

NodeId Graph::scale(NodeId a, double alpha) {
    if (!std::isfinite(alpha)) throw InvalidValue("scale factor is not finite");
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.alpha = alpha;
    n.rows = nodes_[a].rows;
    n.cols = nodes_[a].cols;
    return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
    Node n;
    n.op = Op::Sum;
    n.a = a;
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
    if (nodes_[a].rows * nodes_[a].cols == 0) {
        throw ShapeError("mean#" + std::to_string(nodes_.size()) + ": empty operand");
    }
    Node n;
    n.op = Op::Mean;
    n.a = a;
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

void Graph::set_input(NodeId id, Tensor value) {
    Node& n = nodes_[id];
    if (n.op != Op::Input) throw StateError("set_input on a non-input node");
    if (!n.value.same_shape(value)) {
        throw ShapeError("set_input: " + value.shape_str() + " does not match " +
                         n.value.shape_str());
    }
    n.value = std::move(value);
}

void Graph::eval(Node& n, NodeId id) {
    const auto& av = [&]() -> const Tensor& { return nodes_[n.a].value; };
    const auto& bv = [&]() -> const Tensor& { return nodes_[n.b].value; };
    switch (n.op) {
        case Op::Input:
            n.value.require_finite(node_name(n, id));
            break;
        case Op::Param:
            n.value = n.param->value;
            n.value.require_finite("parameter " + n.param->name);
            break;
        case Op::MatMul: {
            n.value = gemm(av(), n.trans_a, bv(), n.trans_b);
            break;
        }
        case Op::Add: {
            const Tensor& a = av();
            const Tensor& b = bv();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + b[i];
            break;
        }
        case Op::RowBroadcastAdd: {
            const Tensor& a = av();
            const Tensor& r = bv();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.rows(); ++i) {
                const double* src = a.row(i);
                double* dst = n.value.row(i);
                for (std::size_t j = 0; j < a.cols(); ++j) dst[j] = src[j] + r[j];
            }
            break;
        }
        case Op::Tanh: {
            const Tensor& a = av();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::tanh(a[i]);
            break;
        }
        case Op::Sigmoid: {
            const Tensor& a = av();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = 1.0 / (1.0 + std::exp(-a[i]));
            break;
        }
        case Op::Relu: {
            const Tensor& a = av();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] > 0.0 ? a[i] : 0.0;
            break;
        }
        case Op::Mul: {
            const Tensor& a = av();
            const Tensor& b = bv();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * b[i];
            break;
        }
        case Op::SoftmaxRows:
            n.value = mil::softmax_rows(av());
            break;
        case Op::Log: {
            const Tensor& a = av();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i] < 0.0) {
                    throw InvalidValue(node_name(n, id) + ": log of a negative value");
                }
                n.value[i] = std::log(a[i] < kLogFloor ? kLogFloor : a[i]);
            }
            break;
        }
        case Op::Scale: {
            const Tensor& a = av();
            n.value = Tensor(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = n.alpha * a[i];
            break;
        }
        case Op::Sum: {
            const Tensor& a = av();
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
            n.value = Tensor::scalar(s);
            break;
        }
        case Op::Mean: {
            const Tensor& a = av();
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
            n.value = Tensor::scalar(s / static_cast<double>(a.size()));
            break;
        }
    }
    if (n.op != Op::Input && n.op != Op::Param) {
        n.value.require_finite(node_name(n, id));
    }
}

void Graph::forward() {
    for (; evaluated_ < nodes_.size(); ++evaluated_) {
        eval(nodes_[evaluated_], evaluated_);
    }
    forward_done_ = true;
}

void Graph::reforward() {
    evaluated_ = 0;
    forward();
}

void Graph::backward(NodeId loss) {
    if (!forward_done_ || evaluated_ != nodes_.size()) {
        throw StateError("backward before forward completed");
    }
    const Tensor& lv = nodes_[loss].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ShapeError("loss node must be scalar, got " + lv.shape_str());
    }
    for (Node& n : nodes_) {
        n.grad = Tensor(n.value.rows(), n.value.cols());
    }
    nodes_[loss].grad[0] = 1.0;

    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
        Node& n = nodes_[idx];
        const Tensor& g = n.grad;
        Tensor& ga = nodes_[n.a].grad;
        Tensor& gb = nodes_[n.b].grad;
        switch (n.op) {
            case Op::Input:
                break;
            case Op::Param:
                if (n.param->trainable) {
                    g.require_finite("gradient of " + n.param->name);
                    for (std::size_t i = 0; i < g.size(); ++i) n.param->grad[i] += g[i];
                }
                break;
            case Op::MatMul: {
                const Tensor& a = nodes_[n.a].value;
                const Tensor& b = nodes_[n.b].value;
                if (!n.trans_a && !n.trans_b) {
                    gemm_acc(g, false, b, true, ga);
                    gemm_acc(a, true, g, false, gb);
                } else if (n.trans_a && !n.trans_b) {
                    gemm_acc(b, false, g, true, ga);
                    gemm_acc(a, false, g, false, gb);
                } else if (!n.trans_a && n.trans_b) {
                    gemm_acc(g, false, b, false, ga);
                    gemm_acc(g, true, a, false, gb);
                } else {
                    gemm_acc(b, true, g, true, ga);
                    gemm_acc(g, true, a, true, gb);
                }
                break;
            }
            case Op::Add:
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                break;
            case Op::RowBroadcastAdd: {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    const double* gr = g.row(r);
                    for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += gr[j];
                }
                break;
            }
            case Op::Tanh: {
                const Tensor& y = n.value;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (1.0 - y[i] * y[i]) * g[i];
                break;
            }
            case Op::Sigmoid: {
                const Tensor& y = n.value;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (1.0 - y[i]) * g[i];
                break;
            }
            case Op::Relu: {
                const Tensor& x = nodes_[n.a].value;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
                break;
            }
            case Op::Mul: {
                const Tensor& a = nodes_[n.a].value;
                const Tensor& b = nodes_[n.b].value;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                break;
            }
            case Op::SoftmaxRows: {
                const Tensor& y = n.value;
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    const double* yr = y.row(r);
                    const double* gr = g.row(r);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < y.cols(); ++j) dot += yr[j] * gr[j];
                    double* out = ga.row(r);
                    for (std::size_t j = 0; j < y.cols(); ++j) out[j] += yr[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::Log: {
                // Entries in the clamped region are constant, so their
                // derivative is zero.
                const Tensor& x = nodes_[n.a].value;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (x[i] >= kLogFloor) ga[i] += g[i] / x[i];
                }
                break;
            }
            case Op::Scale:
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.alpha * g[i];
                break;
            case Op::Sum: {
                const double gs = g[0];
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs;
                break;
            }
            case Op::Mean: {
                const double gs = g[0] / static_cast<double>(ga.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs;
                break;
            }
        }
    }
}

}  // namespace mil
