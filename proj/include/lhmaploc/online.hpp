#pragma once

#include "lhmaploc/geometry.hpp"
#include "lhmaploc/mapstore.hpp"
#include "lhmaploc/nets.hpp"
#include "lhmaploc/offline.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace lhm {

struct LocalizeOutput {
  Pose correction;      // regressed ΔT (init camera → true camera)
  Pose estimate;        // T_init · ΔT
  DepthImage rendered;  // M^r: local map rendered at T_init
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
};

/// Renders the k nearest keyframe records at T_init and regresses the correction.
/// Throws kEmptyMap when the map or the rendered local map is empty.
LocalizeOutput localize_once(const PoseNet<float>& net, const LHMap& map, const RgbImage& image,
                             const Pose& t_init, const CameraModel& cam, std::size_t k = 1);

struct IterationRecord {
  Pose pose;
  std::optional<double> translation_error_m;
  std::optional<double> rotation_error_deg;
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
};

struct LocalizationResult {
  Pose pose_est;
  std::vector<IterationRecord> trace;
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
};

/// Iteration i runs models[i] from the previous estimate. Throws
/// kMissingModel when fewer than `iters` models are supplied.
LocalizationResult localize_iterative(const std::vector<const PoseNet<float>*>& models, const LHMap& map,
                                      const RgbImage& image, const Pose& t_init, const CameraModel& cam,
                                      int iters, const std::optional<Pose>& t_gt = std::nullopt,
                                      std::size_t k = 1);

struct OnlineResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> history;
};

/// Optimizes e^{-w_x}·L_t + w_x + e^{-w_q}·L_q + w_q over samples whose T_init
/// is drawn by `source`; w_x and w_q start at 0 and −2.5 and are trained with
/// the network. `init`, when given, provides starting weights. Throws
/// kDivergence on a non-finite loss.
OnlineResult train_online(const LHMap& map, const SampleSource& source, const CameraModel& cam,
                          const TrainConfig& cfg, const NetConfig& net_cfg = {},
                          const PoseNet<float>* init = nullptr,
                          const std::function<void(const EpochLog&)>& on_epoch = {});

/// Network forward on a batch of rendered local maps and images.
PoseOutput<float> online_forward(const PoseNet<float>& net, const std::vector<const DepthImage*>& rendered,
                                 const std::vector<const RgbImage*>& images);

}  // namespace lhm
