#pragma once

#include "lhmaploc/geometry.hpp"
#include "lhmaploc/losses.hpp"
#include "lhmaploc/mapstore.hpp"
#include "lhmaploc/nets.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lhm {

/// One training frame: image and depth at the true pose, depth at a perturbed
/// initial pose.
struct OfflineSample {
  std::uint64_t frame_id = 0;
  RgbImage image;
  DepthImage d_gt;
  DepthImage d_init;
  Pose t_gt;
  Pose t_init;
};

/// Frames with fewer valid depth pixels are excluded from training data.
inline constexpr std::size_t kMinValidPixels = 100;

/// Training hyper-parameters shared by the offline and online drivers.
struct TrainConfig {
  int epochs = 120;
  int batch = 8;
  double lr = 1e-4;
  double lambda = losses::kDefaultLambda;
  double alpha = losses::kDefaultAlpha;
  double beta = losses::kDefaultBeta;
  std::uint32_t topn = kDefaultPointBudget;
  int noise_level = 1;
  std::uint64_t seed = 0;
  /// Fresh noise draws per frame in one epoch (1 = one pass over the frames).
  int draws = 1;

  void validate() const;
};

/// Defaults of the online stage: 150 epochs, batch 12.
TrainConfig online_defaults();

/// h = Mask · Σ_k H_k after bilinear upsampling of `heat` (N, C, h', w') to the
/// depth resolution. Returns (N, 1, h, w).
template <class T>
nn::Var<T> heat_value(const nn::Var<T>& heat, const std::vector<const DepthImage*>& d_gt);

/// Row-major indices of the min(N, valid) valid pixels with the largest heat,
/// ties broken by the smaller index. Output is sorted by index.
std::vector<int> topn_indices(std::span<const double> heat, const DepthImage& d_gt, std::size_t n);

/// Depth image keeping d_gt at the TopN pixels and 0 elsewhere.
DepthImage topn_select(std::span<const double> heat, const DepthImage& d_gt, std::size_t n);

struct Stage1Output {
  FeaturePyramid<float> image_features;
  nn::Var<float> heat;        // H_c, (N, C, h', w')
  nn::Var<float> heat_value;  // h, (N, 1, h, w)
  std::vector<DepthImage> selected;  // M_c per sample
  FlowEmbedding<float> embedding;    // E_D
  PoseOutput<float> pose;            // (q0, t0)
};

struct Stage2Output {
  std::vector<DepthImage> reposed;  // M_c^init per sample
  nn::Var<float> heat;              // H_M
  FlowEmbedding<float> embedding;   // E_M
  PoseOutput<float> pose;           // (q1, t1)
};

Stage1Output stage1_forward(const PoseNet<float>& net, const std::vector<const OfflineSample*>& batch,
                            std::size_t topn);

/// Lifts M_c at T_gt and re-renders it at T_init. `source`, when given,
/// receives for every output pixel the row-major M_c pixel it came from, or -1.
DepthImage repose_selection(const DepthImage& selected, const Pose& t_gt, const Pose& t_init,
                            const CameraModel& cam, std::vector<int>* source = nullptr);

/// Throws kDegenerateSample when a selection is empty.
Stage2Output stage2_forward(const PoseNet<float>& net, const std::vector<const OfflineSample*>& batch,
                            const Stage1Output& s1, const CameraModel& cam);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

struct OfflineResult {
  Checkpoint checkpoint;
  LHMap map;
  std::vector<EpochLog> history;
};

/// Produces fresh samples for an epoch; `epoch` lets sources re-draw noise.
using SampleSource = std::function<std::vector<OfflineSample>(int epoch)>;

/// Trains with α·L_p(q0,t0) + β·L_p(q1,t1) under Adam, then exports the
/// selected points of every frame (at T_gt) as an LHMap. Throws kDivergence
/// on a non-finite loss.
OfflineResult train_offline(const SampleSource& source, const CameraModel& cam, const TrainConfig& cfg,
                            const NetConfig& net_cfg = {},
                            const std::function<void(const EpochLog&)>& on_epoch = {});

/// Stage-1 selection at the true pose of every sample, lifted into records.
LHMap export_lhmap(const PoseNet<float>& net, const std::vector<OfflineSample>& samples,
                   const CameraModel& cam, std::uint32_t topn);

/// Pose-supervision target ΔT = T_init⁻¹ · T_gt.
Pose relative_target(const Pose& t_init, const Pose& t_gt);

/// Batch-mean translation and rotation losses of predicted corrections against
/// targets, with the gradients of those means w.r.t. the network outputs.
struct BatchPoseLoss {
  double translation = 0.0;
  double rotation = 0.0;
  nn::Tensor<float> d_translation_dt;  // (N, 3)
  nn::Tensor<float> d_rotation_dq;     // (N, 4)
};

BatchPoseLoss batch_pose_loss(const PoseOutput<float>& out, const std::vector<Pose>& targets);

/// Network output row n as a pose (q renormalized).
Pose output_pose(const PoseOutput<float>& out, int n);

}  // namespace lhm
