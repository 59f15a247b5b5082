#include "mil/adam.hpp"

#include <cmath>

#include "mil/errors.hpp"

namespace mil {

AdamState::AdamState(const std::vector<Parameter*>& params, Hyper hyper)
    : params_(params), hyper_(hyper) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Parameter* p : params_) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
}

void AdamState::step(double lr) {
    if (!(lr > 0.0)) throw InvalidConfig("adam step requires lr > 0");
    ++step_count_;
    const double b1 = hyper_.beta1;
    const double b2 = hyper_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Parameter& p = *params_[pi];
        if (!p.trainable) continue;
        Tensor& m = m_[pi];
        Tensor& v = v_[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double g = p.grad[i];
            if (hyper_.weight_decay != 0.0) g += hyper_.weight_decay * p.value[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.epsilon);
        }
        p.value.require_finite("adam update of " + p.name);
        p.zero_grad();
    }
}

}  // namespace mil
