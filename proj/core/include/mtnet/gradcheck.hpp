// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtnet/network.hpp"
#include "mtnet/tensor.hpp"

namespace mtn {

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // gradient entries compared
  bool passed = false;
};

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of sum_j r_j f(x)_j (fixed random r) with
/// central differences for every entry of every input. The relative error of
/// an entry is |a - n| / max(|a|, |n|, 1e-3 * scale, 1e-8), where scale is the
/// largest gradient magnitude of the check. `f` must be deterministic.
GradcheckResult gradcheck(const std::string& name, const GradFn& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& options = {});

/// Micro network used by the suite: 1 x 4 x 4 x 4 clips, one 4 -> 4 stage.
NetworkConfig micro_network_config();

/// Every differentiable op, each recurrent cell, every MTConv pooling mode,
/// one MTBlock and the micro network (parameters and input).
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace mtn
