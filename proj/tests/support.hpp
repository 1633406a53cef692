#pragma once

#include "lhmaploc/nets.hpp"
#include "lhmaploc/nn/gradcheck.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace lhm::testing {

inline nn::Tensor<double> random_tensor(std::mt19937_64& rng, int n, int c, int h = 1, int w = 1,
                                        double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  nn::Tensor<double> t(n, c, h, w);
  for (auto& v : t.data) v = d(rng);
  return t;
}

/// Random linear functional of `x`, so every output entry contributes.
inline nn::Var<double> readout(const nn::Var<double>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 1);
  nn::Tensor<double> w(x->value.n, x->value.c, x->value.h, x->value.w);
  for (auto& v : w.data) v = d(rng);
  return nn::weighted_sum(x, w);
}

inline nn::Var<double> readout(const std::vector<nn::Var<double>>& xs, std::uint64_t seed) {
  nn::Var<double> total;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto r = readout(xs[i], seed + i);
    total = total ? nn::add(total, r) : r;
  }
  return total;
}

using Leaves = std::vector<std::pair<std::string, nn::Var<double>>>;

inline Leaves leaves_with_prefix(const PoseNet<double>& net, const std::string& prefix) {
  Leaves out;
  for (const auto& p : net.parameters())
    if (p.first.rfind(prefix, 0) == 0) out.push_back(p);
  return out;
}

/// Central-difference checks of every trainable head on a small input.
/// Returns one (head name, result) pair per head.
inline std::vector<std::pair<std::string, nn::GradCheckResult>> check_all_heads(int coordinates,
                                                                                 std::uint64_t seed) {
  const int h = 16, w = 32;
  PoseNet<double> net(NetConfig{}, seed);
  std::mt19937_64 rng(seed + 1);
  auto img = nn::parameter(random_tensor(rng, 1, 3, h, w));
  auto dep = nn::parameter(random_tensor(rng, 1, 1, h, w, 0.0, 1.0));
  std::vector<std::pair<std::string, nn::GradCheckResult>> out;

  auto with_input = [](Leaves l, const std::string& name, const nn::Var<double>& x) {
    l.emplace_back(name, x);
    return l;
  };
  auto image_fn = [&] { return readout(net.encode_image_tensor(img).levels, 11); };
  auto depth_fn = [&] { return readout(net.encode_depth_tensor(dep).levels, 12); };
  out.emplace_back("image_encoder", nn::gradcheck(image_fn, leaves_with_prefix(net, "image."), coordinates, seed));
  out.emplace_back("image_encoder_input", nn::gradcheck(image_fn, {{"input", img}}, coordinates, seed));
  out.emplace_back("depth_encoder", nn::gradcheck(depth_fn, leaves_with_prefix(net, "depth."), coordinates, seed));
  out.emplace_back("depth_encoder_input", nn::gradcheck(depth_fn, {{"input", dep}}, coordinates, seed));

  FeaturePyramid<double> fd, fi;
  {
    nn::NoGradGuard guard;
    fd = net.encode_depth_tensor(nn::constant(dep->value));
    fi = net.encode_image_tensor(nn::constant(img->value));
  }
  for (auto& l : fd.levels) l = nn::parameter(l->value);
  for (auto& l : fi.levels) l = nn::parameter(l->value);
  Leaves flow_leaves = leaves_with_prefix(net, "flow.");
  for (std::size_t l = 0; l < fd.levels.size(); ++l) {
    flow_leaves.emplace_back("depth_feat" + std::to_string(l), fd.levels[l]);
    flow_leaves.emplace_back("image_feat" + std::to_string(l), fi.levels[l]);
  }
  out.emplace_back("flow_embedding",
                   nn::gradcheck([&] { return readout(net.flow_embedding(fd, fi).embedding, 13); }, flow_leaves,
                                 coordinates, seed));
  out.emplace_back("heat_head",
                   nn::gradcheck([&] { return readout(net.heat_head(fd), 14); },
                                 with_input(leaves_with_prefix(net, "heat."), "depth_feat0", fd.levels[0]),
                                 coordinates, seed));

  nn::Var<double> emb, heat;
  {
    nn::NoGradGuard guard;
    emb = nn::parameter(net.flow_embedding(fd, fi).embedding->value);
    heat = nn::parameter(net.heat_head(fd)->value);
  }
  Leaves pose_leaves = leaves_with_prefix(net, "pose.");
  pose_leaves.emplace_back("embedding", emb);
  pose_leaves.emplace_back("heat", heat);
  out.emplace_back("pose_head", nn::gradcheck(
                                    [&] {
                                      auto p = net.attention_pose_head(emb, heat);
                                      return readout(std::vector<nn::Var<double>>{p.q, p.t}, 15);
                                    },
                                    pose_leaves, coordinates, seed));
  return out;
}

}  // namespace lhm::testing
