#include "lhmaploc/nn/gradcheck.hpp"

#include "lhmaploc/error.hpp"
#include "lhmaploc/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lhm::nn {

GradCheckResult gradcheck(const std::function<Var<double>()>& fn,
                          const std::vector<std::pair<std::string, Var<double>>>& leaves,
                          int coordinates, std::uint64_t seed, double eps, double floor) {
  if (leaves.empty() || coordinates < 1) throw Error(ErrorCode::kInvalidArgument, "gradcheck: nothing to check");
  for (const auto& [name, leaf] : leaves) leaf->grad = Tensor<double>();

  const Var<double> out = fn();
  if (out->value.size() != 1) throw Error(ErrorCode::kShape, "gradcheck: function must return a scalar");
  backward(out);

  std::size_t total = 0;
  for (const auto& [name, leaf] : leaves) total += leaf->value.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  auto evaluate = [&](std::uint64_t& branches) {
    NoGradGuard guard;
    BranchRecorder rec;
    const double v = fn()->value.data[0];
    branches = rec.hash();
    return v;
  };
  std::uint64_t base_branches = 0;
  evaluate(base_branches);

  GradCheckResult result;
  const int max_draws = 20 * coordinates;
  for (int draw = 0; draw < max_draws && static_cast<int>(result.entries.size()) < coordinates; ++draw) {
    std::size_t flat = pick(rng);
    std::size_t li = 0;
    while (flat >= leaves[li].second->value.size()) flat -= leaves[li++].second->value.size();
    auto& leaf = *leaves[li].second;
    const double saved = leaf.value.data[flat];
    std::uint64_t plus_branches = 0, minus_branches = 0;
    leaf.value.data[flat] = saved + eps;
    const double plus = evaluate(plus_branches);
    leaf.value.data[flat] = saved - eps;
    const double minus = evaluate(minus_branches);
    leaf.value.data[flat] = saved;
    if (plus_branches != base_branches || minus_branches != base_branches) {
      ++result.rejected;
      continue;
    }
    const double numeric = (plus - minus) / (2 * eps);

    GradCheckEntry e;
    e.leaf = leaves[li].first;
    e.index = flat;
    e.analytic = leaf.grad.size() ? leaf.grad.data[flat] : 0.0;
    e.numeric = numeric;
    e.rel_error = std::abs(e.analytic - e.numeric) /
                  std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
    result.max_rel_error = std::max(result.max_rel_error, e.rel_error);
    result.entries.push_back(e);
  }
  return result;
}

}  // namespace lhm::nn
