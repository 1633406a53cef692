#pragma once

#include "lhmaploc/nn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lhm::nn {

struct GradCheckEntry {
  std::string leaf;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  int rejected = 0;  // coordinates whose ±eps interval straddles a kink
  bool passed(double tol) const { return !entries.empty() && max_rel_error <= tol; }
};

/// Compares reverse-mode gradients of a scalar function against central finite
/// differences at `coordinates` randomly chosen leaf entries. `fn` must rebuild
/// the graph from the current leaf values on every call. Relative error is
/// |a − n| / max(|a|, |n|, floor).
///
/// Piecewise-linear activations make the central difference meaningless when
/// [x − eps, x + eps] contains a kink. Such coordinates are detected exactly
/// with a BranchRecorder (the branch pattern at x ± eps differs from the one at
/// x), counted in `rejected`, and replaced by fresh draws.
GradCheckResult gradcheck(const std::function<Var<double>()>& fn,
                          const std::vector<std::pair<std::string, Var<double>>>& leaves,
                          int coordinates, std::uint64_t seed, double eps = 1e-3,
                          double floor = 1e-6);

}  // namespace lhm::nn
