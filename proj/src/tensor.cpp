#include "mil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mil {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), v_(std::move(values)) {
    if (v_.size() != rows_ * cols_) {
        throw ShapeError("tensor value count " + std::to_string(v_.size()) +
                         " does not match shape " + shape_str());
    }
    require_finite("tensor construction");
}

Tensor Tensor::ones(std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    t.fill(1.0);
    return t;
}

std::string Tensor::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Tensor::all_finite() const {
    for (double x : v_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& who) const {
    if (!all_finite()) {
        throw InvalidValue(who + " produced a non-finite entry in a " + shape_str() + " tensor");
    }
}

bool Tensor::bits_equal(const Tensor& o) const {
    if (!same_shape(o)) return false;
    return v_.empty() || std::memcmp(v_.data(), o.v_.data(), v_.size() * sizeof(double)) == 0;
}

double Tensor::scalar_value() const {
    if (rows_ != 1 || cols_ != 1) {
        throw ShapeError("expected a 1x1 tensor, got " + shape_str());
    }
    return v_[0];
}

namespace {

// Plain row-major kernel, ikj order. Row i of C depends only on row i of A
// with a fixed per-row operation order; sampled-row subsets therefore
// reproduce full-matrix rows bit for bit.
void gemm_plain_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += aip * bp[j];
            }
        }
    }
}

Tensor transposed(const Tensor& t) {
    Tensor out(t.cols(), t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            out.at(j, i) = t.at(i, j);
        }
    }
    return out;
}

}  // namespace

void gemm_acc(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& c) {
    const std::size_t m = trans_a ? a.cols() : a.rows();
    const std::size_t k = trans_a ? a.rows() : a.cols();
    const std::size_t kb = trans_b ? b.cols() : b.rows();
    const std::size_t n = trans_b ? b.rows() : b.cols();
    if (k != kb) {
        throw ShapeError("matmul inner dims " + a.shape_str() + (trans_a ? "^T" : "") + " * " +
                         b.shape_str() + (trans_b ? "^T" : "") + " do not agree");
    }
    if (c.rows() != m || c.cols() != n) {
        throw ShapeError("matmul output " + c.shape_str() + " does not match " +
                         std::to_string(m) + "x" + std::to_string(n));
    }
    // Transposed operands are materialized; every matrix here is small.
    if (!trans_a && !trans_b) {
        gemm_plain_acc(a.data(), b.data(), c.data(), m, k, n);
    } else if (trans_a && !trans_b) {
        Tensor at = transposed(a);
        gemm_plain_acc(at.data(), b.data(), c.data(), m, k, n);
    } else if (!trans_a && trans_b) {
        Tensor bt = transposed(b);
        gemm_plain_acc(a.data(), bt.data(), c.data(), m, k, n);
    } else {
        Tensor at = transposed(a);
        Tensor bt = transposed(b);
        gemm_plain_acc(at.data(), bt.data(), c.data(), m, k, n);
    }
}

Tensor gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b) {
    const std::size_t m = trans_a ? a.cols() : a.rows();
    const std::size_t n = trans_b ? b.rows() : b.cols();
    Tensor c(m, n);
    gemm_acc(a, trans_a, b, trans_b, c);
    return c;
}

}  // namespace mil
