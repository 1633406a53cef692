#pragma once

#include "lhmaploc/geometry.hpp"
#include "lhmaploc/nn/ops.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace lhm {

/// Architecture hyper-parameters. Defaults: three pyramid levels with
/// (16, 32, 64) channels, 8 heat channels, correlation radius 4, 256-wide MLPs.
struct NetConfig {
  std::vector<int> channels{16, 32, 64};
  int heat_channels = 8;
  int corr_radius = 4;
  int mlp_hidden = 256;
  int embed_level = 1;  // pyramid level the flow embedding is produced at
  double depth_range = 80.0;

  int levels() const { return static_cast<int>(channels.size()); }
  /// Input height/width must be divisible by this.
  int stride_multiple() const { return 1 << levels(); }
  void validate() const;
  std::uint64_t hash() const;
  bool operator==(const NetConfig&) const = default;
};

/// h×w×3 interleaved RGB in [0,1].
struct RgbImage {
  int h = 0, w = 0;
  std::vector<float> rgb;

  RgbImage() = default;
  RgbImage(int height, int width, float fill = 0.5f)
      : h(height), w(width), rgb(static_cast<std::size_t>(height) * width * 3, fill) {}
};

template <class T>
struct FeaturePyramid {
  std::vector<nn::Var<T>> levels;  // level l at 1/2^(l+1) of the input resolution
};

template <class T>
struct FlowEmbedding {
  nn::Var<T> embedding;           // (N, C, h', w')
  nn::Var<T> cost;                // raw correlation at the embedding level, (2r+1)² channels
  std::vector<nn::Var<T>> flows;  // per-level intermediate flow, coarsest first
};

template <class T>
struct PoseOutput {
  nn::Var<T> q;  // (N, 4), unit rows
  nn::Var<T> t;  // (N, 3)
  nn::Var<T> pooled;  // cost volume V, (N, C)
};

template <class T>
struct Conv2d {
  nn::Var<T> weight, bias;
  int stride = 1, pad = 1;
  nn::Var<T> operator()(const nn::Var<T>& x) const {
    return nn::conv2d<T>(x, weight, bias, stride, pad);
  }
};

template <class T>
struct Dense {
  nn::Var<T> weight, bias;
  nn::Var<T> operator()(const nn::Var<T>& x) const { return nn::linear<T>(x, weight, bias); }
};

template <class T>
struct Encoder {
  std::vector<Conv2d<T>> down, refine;
  FeaturePyramid<T> operator()(const nn::Var<T>& x) const;
};

template <class T>
struct FlowModule {
  int radius = 4;
  int embed_level = 1;
  // Indexed by pyramid level; levels finer than embed_level stay empty.
  std::vector<Conv2d<T>> first, second, flow_out;
  Conv2d<T> embed_out;
  FlowEmbedding<T> operator()(const FeaturePyramid<T>& a, const FeaturePyramid<T>& b) const;
};

template <class T>
struct HeatHead {
  Conv2d<T> first, second;
  nn::Var<T> operator()(const FeaturePyramid<T>& f) const;
};

template <class T>
struct PoseHead {
  Dense<T> q1, q2, q3, t1, t2, t3;
  /// Upsamples the embedding to the heat resolution, pools, regresses.
  PoseOutput<T> operator()(const nn::Var<T>& embedding, const nn::Var<T>& heat) const;
};

/// Image/depth encoders, flow embedding, heat head and attention pose head.
template <class T>
class PoseNet {
 public:
  PoseNet() = default;
  PoseNet(const NetConfig& cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }

  FeaturePyramid<T> encode_image(const std::vector<const RgbImage*>& images) const;
  FeaturePyramid<T> encode_depth(const std::vector<const DepthImage*>& depths) const;
  FeaturePyramid<T> encode_image_tensor(const nn::Var<T>& x) const { return image_enc_(x); }
  FeaturePyramid<T> encode_depth_tensor(const nn::Var<T>& x) const { return depth_enc_(x); }
  FlowEmbedding<T> flow_embedding(const FeaturePyramid<T>& depth_feat,
                                  const FeaturePyramid<T>& image_feat) const {
    return flow_(depth_feat, image_feat);
  }
  nn::Var<T> heat_head(const FeaturePyramid<T>& depth_feat) const { return heat_(depth_feat); }
  PoseOutput<T> attention_pose_head(const nn::Var<T>& embedding, const nn::Var<T>& heat) const {
    return pose_(embedding, heat);
  }

  /// Named parameters in a fixed order.
  std::vector<std::pair<std::string, nn::Var<T>>> parameters() const;
  std::size_t parameter_count() const;

  template <class U>
  PoseNet<U> cast() const;

  /// Input tensors in network layout.
  nn::Tensor<T> image_tensor(const std::vector<const RgbImage*>& images) const;
  nn::Tensor<T> depth_tensor(const std::vector<const DepthImage*>& depths) const;

 private:
  template <class U>
  friend class PoseNet;

  NetConfig cfg_;
  Encoder<T> image_enc_, depth_enc_;
  FlowModule<T> flow_;
  HeatHead<T> heat_;
  PoseHead<T> pose_;
};

/// Checkpoint: weights plus the uncertainty-loss scalars of the online loss.
struct Checkpoint {
  PoseNet<float> net;
  double w_x = 0.0;
  double w_q = -2.5;
  int noise_level = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lhm
