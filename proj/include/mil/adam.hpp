#ifndef MIL_ADAM_HPP
#define MIL_ADAM_HPP

#include <cstdint>
#include <vector>

#include "mil/graph.hpp"

namespace mil {

// Adam with bias correction and optional decoupled-from-loss L2 term added
// to the gradient before the moment update. Frozen parameters are skipped
// entirely: value, moments and step all stay untouched for them.
class AdamState {
public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        double weight_decay = 0.0;
    };

    explicit AdamState(const std::vector<Parameter*>& params) : AdamState(params, Hyper{}) {}
    AdamState(const std::vector<Parameter*>& params, Hyper hyper);

    // One update over all trainable parameters; gradients are zeroed after
    // the step. lr must be positive.
    void step(double lr);

    std::uint64_t step_count() const { return step_count_; }
    const Hyper& hyper() const { return hyper_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    Hyper hyper_;
    std::uint64_t step_count_ = 0;
};

}  // namespace mil

#endif  // MIL_ADAM_HPP
