#ifndef MIL_TENSOR_HPP
#define MIL_TENSOR_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "mil/errors.hpp"

namespace mil {

// Dense row-major matrix of 64-bit floats. A row vector is 1xC, a scalar 1x1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), v_(rows * cols, 0.0) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor scalar(double x) { return Tensor(1, 1, {x}); }
    static Tensor ones(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const;

    double& at(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }
    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double* row(std::size_t r) { return v_.data() + r * cols_; }
    const double* row(std::size_t r) const { return v_.data() + r * cols_; }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }
    bool all_finite() const;
    // Throws InvalidValue when any entry is NaN/Inf; `who` names the producer.
    void require_finite(const std::string& who) const;
    bool bits_equal(const Tensor& o) const;
    double scalar_value() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> v_;
};

// C += op(A) * op(B) with optional operand transposition (gemm semantics).
// C must be preshaped to (op(A).rows x op(B).cols).
void gemm_acc(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& c);

// C = op(A) * op(B); returns a fresh tensor.
Tensor gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b);

}  // namespace mil

#endif  // MIL_TENSOR_HPP
