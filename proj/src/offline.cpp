#include "lhmaploc/offline.hpp"

#include "lhmaploc/error.hpp"
#include "lhmaploc/nn/adam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lhm {

using nn::Tensor;
using nn::Var;

void TrainConfig::validate() const {
  if (epochs < 0 || batch < 1 || !(lr > 0) || topn < 1 || draws < 1) {
    throw Error(ErrorCode::kInvalidArgument, "invalid training configuration");
  }
  if (lambda < 1) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 1");
  if (std::abs(alpha + beta - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "alpha + beta must equal 1");
  noise_range(noise_level);
}

TrainConfig online_defaults() {
  TrainConfig c;
  c.epochs = 150;
  c.batch = 12;
  c.lr = 1e-4;
  return c;
}

template <class T>
Var<T> heat_value(const Var<T>& heat, const std::vector<const DepthImage*>& d_gt) {
  const auto& H = heat->value;
  if (d_gt.size() != static_cast<std::size_t>(H.n) || d_gt.empty()) {
    throw Error(ErrorCode::kShape, "heat_value: batch size mismatch");
  }
  const int h = d_gt.front()->h, w = d_gt.front()->w;
  Tensor<T> mask(H.n, 1, h, w);
  for (int n = 0; n < H.n; ++n) {
    const auto& d = *d_gt[static_cast<std::size_t>(n)];
    if (d.h != h || d.w != w) throw Error(ErrorCode::kShape, "heat_value: mixed depth sizes");
    T* m = mask.image(n);
    for (std::size_t i = 0; i < d.values.size(); ++i) m[i] = d.values[i] != 0.0f ? T(1) : T(0);
  }
  const Var<T> up = (H.h == h && H.w == w) ? heat : nn::resize_bilinear<T>(heat, h, w);
  return nn::masked_channel_sum<T>(up, mask);
}

template Var<float> heat_value<float>(const Var<float>&, const std::vector<const DepthImage*>&);
template Var<double> heat_value<double>(const Var<double>&, const std::vector<const DepthImage*>&);

std::vector<int> topn_indices(std::span<const double> heat, const DepthImage& d_gt, std::size_t n) {
  if (heat.size() != d_gt.values.size()) throw Error(ErrorCode::kShape, "topn: heat and depth sizes differ");
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "topn: N must be >= 1");
  std::vector<int> valid;
  for (std::size_t i = 0; i < d_gt.values.size(); ++i)
    if (d_gt.values[i] != 0.0f) valid.push_back(static_cast<int>(i));
  const std::size_t keep = std::min(n, valid.size());
  auto better = [&heat](int a, int b) { return heat[a] != heat[b] ? heat[a] > heat[b] : a < b; };
  if (keep < valid.size()) {
    std::nth_element(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(keep), valid.end(), better);
    valid.resize(keep);
  }
  std::sort(valid.begin(), valid.end());
  return valid;
}

DepthImage topn_select(std::span<const double> heat, const DepthImage& d_gt, std::size_t n) {
  DepthImage out(d_gt.h, d_gt.w, d_gt.pose);
  for (int i : topn_indices(heat, d_gt, n)) out.values[static_cast<std::size_t>(i)] = d_gt.values[static_cast<std::size_t>(i)];
  return out;
}

namespace {

std::vector<const DepthImage*> gt_depths(const std::vector<const OfflineSample*>& batch) {
  std::vector<const DepthImage*> out;
  for (const auto* s : batch) out.push_back(&s->d_gt);
  return out;
}

std::vector<double> plane_as_double(const Tensor<float>& t, int n) {
  const float* p = t.image(n);
  return std::vector<double>(p, p + t.plane());
}

Eigen::Vector4d quat_vec(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }

}  // namespace

Stage1Output stage1_forward(const PoseNet<float>& net, const std::vector<const OfflineSample*>& batch,
                            std::size_t topn) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "stage 1: empty batch");
  Stage1Output out;
  const auto d_gt = gt_depths(batch);
  std::vector<const DepthImage*> d_init;
  std::vector<const RgbImage*> images;
  for (const auto* s : batch) {
    d_init.push_back(&s->d_init);
    images.push_back(&s->image);
  }
  const auto f_gt = net.encode_depth(d_gt);
  out.heat = net.heat_head(f_gt);
  out.heat_value = heat_value<float>(out.heat, d_gt);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto h = plane_as_double(out.heat_value->value, static_cast<int>(n));
    out.selected.push_back(topn_select(h, batch[n]->d_gt, topn));
    out.selected.back().pose = batch[n]->t_gt;
  }
  out.image_features = net.encode_image(images);
  out.embedding = net.flow_embedding(net.encode_depth(d_init), out.image_features);
  out.pose = net.attention_pose_head(out.embedding.embedding, out.heat);
  return out;
}

DepthImage repose_selection(const DepthImage& selected, const Pose& t_gt, const Pose& t_init,
                            const CameraModel& cam, std::vector<int>* source) {
  std::vector<Eigen::Vector3d> points;
  std::vector<int> pixel_of_point;
  for (int r = 0; r < selected.h; ++r)
    for (int c = 0; c < selected.w; ++c) {
      const float z = selected.at(r, c);
      if (z == 0.0f) continue;
      points.push_back(unproject(c + 0.5, r + 0.5, z, t_gt, cam));
      pixel_of_point.push_back(r * selected.w + c);
    }
  std::vector<std::int32_t> winner;
  DepthImage out = render_depth_indexed(points, t_init, cam, &winner);
  if (source) {
    source->assign(winner.size(), -1);
    for (std::size_t i = 0; i < winner.size(); ++i)
      if (winner[i] >= 0) (*source)[i] = pixel_of_point[static_cast<std::size_t>(winner[i])];
  }
  return out;
}

Stage2Output stage2_forward(const PoseNet<float>& net, const std::vector<const OfflineSample*>& batch,
                            const Stage1Output& s1, const CameraModel& cam) {
  Stage2Output out;
  std::vector<std::vector<int>> sources(batch.size());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (s1.selected[n].nonzero_count() == 0) {
      throw Error(ErrorCode::kDegenerateSample,
                  "stage 2: empty selection for frame " + std::to_string(batch[n]->frame_id));
    }
    out.reposed.push_back(repose_selection(s1.selected[n], batch[n]->t_gt, batch[n]->t_init, cam, &sources[n]));
    out.reposed.back().pose = batch[n]->t_init;
  }
  std::vector<const DepthImage*> reposed;
  for (const auto& d : out.reposed) reposed.push_back(&d);
  // Forward: the exact re-rendered depths. Backward: each rendered depth is
  // treated as (normalized depth) × (selection gate of its source pixel), so
  // the pose loss reaches the heat values that chose the point.
  const Tensor<float> value = net.depth_tensor(reposed);
  const Var<float> input = nn::straight_through<float>(value, s1.heat_value, sources, value);
  const auto f_m = net.encode_depth_tensor(input);
  out.heat = net.heat_head(f_m);
  out.embedding = net.flow_embedding(f_m, s1.image_features);
  out.pose = net.attention_pose_head(out.embedding.embedding, out.heat);
  return out;
}

Pose relative_target(const Pose& t_init, const Pose& t_gt) { return compose(invert(t_init), t_gt); }

Pose output_pose(const PoseOutput<float>& out, int n) {
  const auto& q = out.q->value;
  const auto& t = out.t->value;
  return Pose(Eigen::Quaterniond(q.at(n, 0, 0, 0), q.at(n, 1, 0, 0), q.at(n, 2, 0, 0), q.at(n, 3, 0, 0)),
              Eigen::Vector3d(t.at(n, 0, 0, 0), t.at(n, 1, 0, 0), t.at(n, 2, 0, 0)));
}

BatchPoseLoss batch_pose_loss(const PoseOutput<float>& out, const std::vector<Pose>& targets) {
  const auto& Q = out.q->value;
  const auto& T = out.t->value;
  const int n = Q.n;
  if (static_cast<std::size_t>(n) != targets.size()) throw Error(ErrorCode::kShape, "pose loss: batch mismatch");
  BatchPoseLoss r;
  r.d_translation_dt = Tensor<float>(n, 3);
  r.d_rotation_dq = Tensor<float>(n, 4);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector4d q(Q.at(i, 0, 0, 0), Q.at(i, 1, 0, 0), Q.at(i, 2, 0, 0), Q.at(i, 3, 0, 0));
    const Eigen::Vector3d t(T.at(i, 0, 0, 0), T.at(i, 1, 0, 0), T.at(i, 2, 0, 0));
    const auto lq = losses::rotation_loss_grad(q, quat_vec(targets[static_cast<std::size_t>(i)].q));
    const auto lt = losses::translation_loss_grad(t, targets[static_cast<std::size_t>(i)].t);
    r.rotation += lq.value / n;
    r.translation += lt.value / n;
    for (int k = 0; k < 4; ++k) r.d_rotation_dq.at(i, k, 0, 0) = static_cast<float>(lq.grad[k] / n);
    for (int k = 0; k < 3; ++k) r.d_translation_dt.at(i, k, 0, 0) = static_cast<float>(lt.grad[k] / n);
  }
  return r;
}

LHMap export_lhmap(const PoseNet<float>& net, const std::vector<OfflineSample>& samples, const CameraModel& cam,
                   std::uint32_t topn) {
  nn::NoGradGuard guard;
  std::vector<KeyframeRecord> records;
  for (const auto& s : samples) {
    const std::vector<const DepthImage*> d{&s.d_gt};
    const auto h = heat_value<float>(net.heat_head(net.encode_depth(d)), d);
    const auto hv = plane_as_double(h->value, 0);
    const DepthImage selected = topn_select(hv, s.d_gt, topn);
    const std::vector<float> scores(h->value.data.begin(), h->value.data.end());
    records.push_back(lift_local_map(selected, s.t_gt, cam, scores, s.frame_id));
  }
  std::sort(records.begin(), records.end(),
            [](const KeyframeRecord& a, const KeyframeRecord& b) { return a.frame_id < b.frame_id; });
  return build_lhmap(std::move(records), cam, topn);
}

OfflineResult train_offline(const SampleSource& source, const CameraModel& cam, const TrainConfig& cfg,
                            const NetConfig& net_cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  cam.validate();
  OfflineResult result;
  result.checkpoint.net = PoseNet<float>(net_cfg, cfg.seed);
  result.checkpoint.noise_level = cfg.noise_level;
  const auto& net = result.checkpoint.net;
  std::vector<Var<float>> params;
  for (const auto& [name, p] : net.parameters()) params.push_back(p);
  nn::Adam adam(params, cfg.lr);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed0ff1eULL);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<OfflineSample> samples = source(epoch);
    std::vector<const OfflineSample*> usable;
    EpochLog log;
    log.epoch = epoch;
    for (const auto& s : samples) {
      if (s.d_gt.nonzero_count() >= kMinValidPixels) {
        usable.push_back(&s);
      } else {
        ++log.skipped;
      }
    }
    std::shuffle(usable.begin(), usable.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < usable.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::vector<const OfflineSample*> batch(
          usable.begin() + static_cast<std::ptrdiff_t>(b),
          usable.begin() + static_cast<std::ptrdiff_t>(std::min(usable.size(), b + static_cast<std::size_t>(cfg.batch))));
      std::vector<Pose> targets;
      for (const auto* s : batch) targets.push_back(relative_target(s->t_init, s->t_gt));

      const Stage1Output s1 = stage1_forward(net, batch, cfg.topn);
      Stage2Output s2;
      try {
        s2 = stage2_forward(net, batch, s1, cam);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateSample) throw;
        log.skipped += batch.size();
        continue;
      }
      const auto l0 = batch_pose_loss(s1.pose, targets);
      const auto l1 = batch_pose_loss(s2.pose, targets);
      const double lp0 = losses::combine_pose_loss(l0.translation, l0.rotation, cfg.lambda);
      const double lp1 = losses::combine_pose_loss(l1.translation, l1.rotation, cfg.lambda);
      const double loss = losses::offline_total_loss(lp0, lp1, cfg.alpha, cfg.beta);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kDivergence, "offline training diverged at epoch " + std::to_string(epoch) +
                                                " (L_p0 = " + std::to_string(lp0) + ", L_p1 = " + std::to_string(lp1) + ")");
      }
      auto seed_q = [&](const BatchPoseLoss& l, double w) {
        Tensor<float> g = l.d_rotation_dq;
        for (auto& v : g.data) v *= static_cast<float>(w * cfg.lambda);
        return g;
      };
      auto seed_t = [](const BatchPoseLoss& l, double w) {
        Tensor<float> g = l.d_translation_dt;
        for (auto& v : g.data) v *= static_cast<float>(w);
        return g;
      };
      nn::backward<float>({s1.pose.q, s1.pose.t, s2.pose.q, s2.pose.t},
                          {seed_q(l0, cfg.alpha), seed_t(l0, cfg.alpha), seed_q(l1, cfg.beta), seed_t(l1, cfg.beta)});
      adam.step();
      adam.zero_grad();
      total += loss * static_cast<double>(batch.size());
      log.samples += batch.size();
    }
    log.loss = log.samples ? total / static_cast<double>(log.samples) : 0.0;
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.map = export_lhmap(net, source(0), cam, cfg.topn);
  return result;
}

}  // namespace lhm
