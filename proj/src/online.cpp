#include "lhmaploc/online.hpp"

#include "lhmaploc/error.hpp"
#include "lhmaploc/nn/adam.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace lhm {

using nn::Tensor;
using nn::Var;

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

DepthImage render_local(const LHMap& map, const Pose& t_init, const CameraModel& cam, std::size_t k) {
  DepthImage d = render_depth(query_local(map, t_init, k), t_init, cam);
  d.pose = t_init;
  return d;
}

}  // namespace

PoseOutput<float> online_forward(const PoseNet<float>& net, const std::vector<const DepthImage*>& rendered,
                                 const std::vector<const RgbImage*>& images) {
  const auto fd = net.encode_depth(rendered);
  const auto fi = net.encode_image(images);
  const auto emb = net.flow_embedding(fd, fi);
  return net.attention_pose_head(emb.embedding, net.heat_head(fd));
}

LocalizeOutput localize_once(const PoseNet<float>& net, const LHMap& map, const RgbImage& image,
                             const Pose& t_init, const CameraModel& cam, std::size_t k) {
  if (image.h != cam.h || image.w != cam.w) {
    throw Error(ErrorCode::kShape, "localize: image does not match the camera model");
  }
  LocalizeOutput out;
  const auto t0 = std::chrono::steady_clock::now();
  out.rendered = render_local(map, t_init, cam, k);
  out.preprocess_ms = elapsed_ms(t0);
  if (out.rendered.nonzero_count() == 0) {
    throw Error(ErrorCode::kEmptyMap, "localize: the local map does not project into the image");
  }
  const auto t1 = std::chrono::steady_clock::now();
  nn::NoGradGuard guard;
  const auto pose = online_forward(net, {&out.rendered}, {&image});
  out.correction = output_pose(pose, 0);
  out.estimate = compose(t_init, out.correction);
  out.inference_ms = elapsed_ms(t1);
  return out;
}

LocalizationResult localize_iterative(const std::vector<const PoseNet<float>*>& models, const LHMap& map,
                                      const RgbImage& image, const Pose& t_init, const CameraModel& cam,
                                      int iters, const std::optional<Pose>& t_gt, std::size_t k) {
  if (iters < 1) throw Error(ErrorCode::kInvalidArgument, "localize: iteration count must be >= 1");
  if (models.size() < static_cast<std::size_t>(iters)) {
    throw Error(ErrorCode::kMissingModel, "localize: " + std::to_string(iters) + " iterations need " +
                                              std::to_string(iters) + " models, got " + std::to_string(models.size()));
  }
  LocalizationResult result;
  Pose current = t_init;
  for (int i = 0; i < iters; ++i) {
    if (!models[static_cast<std::size_t>(i)]) {
      throw Error(ErrorCode::kMissingModel, "localize: no model for iteration " + std::to_string(i + 1));
    }
    const auto step = localize_once(*models[static_cast<std::size_t>(i)], map, image, current, cam, k);
    current = step.estimate;
    IterationRecord rec;
    rec.pose = current;
    rec.preprocess_ms = step.preprocess_ms;
    rec.inference_ms = step.inference_ms;
    if (t_gt) {
      rec.translation_error_m = (current.t - t_gt->t).norm();
      rec.rotation_error_deg = quat_geodesic_deg(current.q, t_gt->q);
    }
    result.preprocess_ms += step.preprocess_ms;
    result.inference_ms += step.inference_ms;
    result.trace.push_back(rec);
  }
  result.pose_est = current;
  return result;
}

OnlineResult train_online(const LHMap& map, const SampleSource& source, const CameraModel& cam,
                          const TrainConfig& cfg, const NetConfig& net_cfg, const PoseNet<float>* init,
                          const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  cam.validate();
  if (map.total_points() == 0) throw Error(ErrorCode::kEmptyMap, "train_online: empty map");
  OnlineResult result;
  auto& ck = result.checkpoint;
  ck.net = init ? init->cast<float>() : PoseNet<float>(net_cfg, cfg.seed);
  ck.noise_level = cfg.noise_level;
  auto wx = nn::parameter(Tensor<float>(1, 1, 1, 1, static_cast<float>(losses::kInitialWx)));
  auto wq = nn::parameter(Tensor<float>(1, 1, 1, 1, static_cast<float>(losses::kInitialWq)));
  std::vector<Var<float>> params;
  for (const auto& [name, p] : ck.net.parameters()) params.push_back(p);
  params.push_back(wx);
  params.push_back(wq);
  nn::Adam adam(params, cfg.lr);
  std::mt19937_64 rng(cfg.seed ^ 0x0471e5eedULL);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<OfflineSample> samples = source(epoch);
    std::vector<DepthImage> rendered(samples.size());
    std::vector<std::size_t> usable;
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      rendered[i] = render_local(map, samples[i].t_init, cam, 1);
      if (rendered[i].nonzero_count() >= kMinValidPixels) {
        usable.push_back(i);
      } else {
        ++log.skipped;
      }
    }
    std::shuffle(usable.begin(), usable.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < usable.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(usable.size(), b + static_cast<std::size_t>(cfg.batch));
      std::vector<const DepthImage*> depths;
      std::vector<const RgbImage*> images;
      std::vector<Pose> targets;
      for (std::size_t j = b; j < end; ++j) {
        const auto& s = samples[usable[j]];
        depths.push_back(&rendered[usable[j]]);
        images.push_back(&s.image);
        targets.push_back(relative_target(s.t_init, s.t_gt));
      }
      const auto out = online_forward(ck.net, depths, images);
      const auto l = batch_pose_loss(out, targets);
      const auto total_loss = losses::online_total_loss(l.translation, l.rotation, wx->value.data[0], wq->value.data[0]);
      if (!std::isfinite(total_loss.value)) {
        throw Error(ErrorCode::kDivergence, "online training diverged at epoch " + std::to_string(epoch) +
                                                " (L_t = " + std::to_string(l.translation) +
                                                ", L_q = " + std::to_string(l.rotation) + ")");
      }
      Tensor<float> seed_t = l.d_translation_dt, seed_q = l.d_rotation_dq;
      const float st = static_cast<float>(total_loss.d_lt), sq = static_cast<float>(total_loss.d_lq);
      for (auto& v : seed_t.data) v *= st;
      for (auto& v : seed_q.data) v *= sq;
      nn::backward<float>({out.t, out.q}, {seed_t, seed_q});
      wx->grad = Tensor<float>(1, 1, 1, 1, static_cast<float>(total_loss.d_wx));
      wq->grad = Tensor<float>(1, 1, 1, 1, static_cast<float>(total_loss.d_wq));
      adam.step();
      adam.zero_grad();
      total += total_loss.value * static_cast<double>(end - b);
      log.samples += end - b;
    }
    log.loss = log.samples ? total / static_cast<double>(log.samples) : 0.0;
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  ck.w_x = wx->value.data[0];
  ck.w_q = wq->value.data[0];
  return result;
}

}  // namespace lhm
