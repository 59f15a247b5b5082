#ifndef MIL_GRADCHECK_HPP
#define MIL_GRADCHECK_HPP

#include <cstdint>
#include <vector>

#include "mil/model.hpp"

namespace mil {

struct GradCheckConfig {
    double eps = 1e-3;  // central-difference step, must lie in [1e-6, 1e-2]
    std::size_t pseudo_count = 8;
    double c_bag = 0.7;
    double c_inst = 0.3;
    // The staged evaluator recomputes only what a perturbation touches;
    // the naive path re-runs the whole graph per entry. Both compute the
    // same loss function.
    bool staged = true;
    std::size_t threads = 0;  // 0 = hardware concurrency
};

// Max over all trainable parameter entries of
//   |analytic - central_fd| / max(1, |analytic|, |central_fd|)
// for the full bag/instance loss on one bag. Pseudo labels are frozen from
// the unperturbed forward, matching their constant treatment in backward.
double grad_check(MilModel& model, const Tensor& features, std::size_t bag_label,
                  const GradCheckConfig& cfg = {});

// Generic naive finite-difference check for an already-built scalar loss:
// every trainable entry of `params` is perturbed and the graph re-run.
// Analytic gradients must already be accumulated in the parameters.
double fd_check_graph(Graph& graph, NodeId loss, const std::vector<Parameter*>& params,
                      double eps);

// Builds a default-config model and a seeded synthetic focal bag, then runs
// grad_check; the CLI gradcheck subcommand wraps this.
double grad_check_seeded(std::uint64_t seed, std::size_t bag_size, std::size_t feature_dim,
                         const GradCheckConfig& cfg = {});

}  // namespace mil

#endif  // MIL_GRADCHECK_HPP
