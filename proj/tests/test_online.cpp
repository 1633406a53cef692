#include "doctest.h"

#include "lhmaploc/error.hpp"
#include "lhmaploc/online.hpp"
#include "lhmaploc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace lhm;

namespace {

struct Fixture {
  SyntheticScene scene;
  std::vector<OfflineSample> samples;
  LHMap map;
};

/// Map built from every frame's full true-pose depth.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.scene = gen_scene(21, 30000, 40.0, 6);
    x.samples = make_dataset(x.scene, 1, 3);
    std::vector<KeyframeRecord> records;
    for (const auto& s : x.samples) {
      const std::vector<float> scores(s.d_gt.values.size(), 1.0f);
      records.push_back(lift_local_map(s.d_gt, s.t_gt, x.scene.cam, scores, s.frame_id));
    }
    x.map = build_lhmap(std::move(records), x.scene.cam, 0);
    return x;
  }();
  return f;
}

/// A network whose output layers are zeroed regresses the identity correction.
PoseNet<float> identity_net() {
  PoseNet<float> net(NetConfig{}, 2);
  for (const auto& [name, p] : net.parameters()) {
    if (name == "pose.q3.w" || name == "pose.t3.w" || name == "pose.t3.b") {
      std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
    }
  }
  return net;
}

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode{};
}

bool same_pose(const Pose& a, const Pose& b) { return a.t == b.t && a.q.coeffs() == b.q.coeffs(); }

}  // namespace

TEST_CASE("identity correction leaves the initial pose unchanged") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Pose init = sample_pose_noise(1, rng);
    CHECK(same_pose(compose(init, Pose()), init));
  }
}

TEST_CASE("localize once: rendering, determinism and composition") {
  const auto& f = fixture();
  PoseNet<float> net(NetConfig{}, 7);
  const auto& s = f.samples[2];
  const auto a = localize_once(net, f.map, s.image, s.t_init, f.scene.cam);
  const auto b = localize_once(net, f.map, s.image, s.t_init, f.scene.cam);
  CHECK(same_pose(a.estimate, b.estimate));
  CHECK(a.rendered.values == b.rendered.values);
  CHECK(a.rendered.values == render_depth(query_local(f.map, s.t_init, 1), s.t_init, f.scene.cam).values);
  const auto nearest = std::min_element(f.map.records.begin(), f.map.records.end(), [&](const auto& x, const auto& y) {
    return (x.anchor.t - s.t_init.t).squaredNorm() < (y.anchor.t - s.t_init.t).squaredNorm();
  });
  CHECK(a.rendered.nonzero_count() <= nearest->size());
  const Pose expect = compose(s.t_init, a.correction);
  CHECK((a.estimate.t - expect.t).norm() < 1e-12);
  CHECK(a.preprocess_ms >= 0.0);
  CHECK(a.inference_ms >= 0.0);
}

TEST_CASE("localize once with an identity network returns the initial pose") {
  const auto& f = fixture();
  const auto net = identity_net();
  const auto& s = f.samples[1];
  const auto out = localize_once(net, f.map, s.image, s.t_init, f.scene.cam);
  CHECK(same_pose(out.correction, Pose()));
  CHECK(same_pose(out.estimate, s.t_init));
}

TEST_CASE("localize once rejects bad inputs") {
  const auto& f = fixture();
  PoseNet<float> net(NetConfig{}, 7);
  const auto& s = f.samples[0];
  CHECK(code_of([&] { localize_once(net, LHMap{}, s.image, s.t_init, f.scene.cam); }) == ErrorCode::kEmptyMap);
  const RgbImage small(32, 64);
  CHECK(code_of([&] { localize_once(net, f.map, small, s.t_init, f.scene.cam); }) == ErrorCode::kShape);
  // Looking straight back along the path sees nothing of the nearest record.
  Pose away = s.t_init;
  away.t += Eigen::Vector3d(0, -500, 0);
  CHECK(code_of([&] { localize_once(net, f.map, s.image, away, f.scene.cam); }) == ErrorCode::kEmptyMap);
}

TEST_CASE("iterative localization: single step, trace and missing models") {
  const auto& f = fixture();
  PoseNet<float> n1(NetConfig{}, 7), n2(NetConfig{}, 8);
  const auto& s = f.samples[3];
  const auto once = localize_once(n1, f.map, s.image, s.t_init, f.scene.cam);
  const auto it1 = localize_iterative({&n1}, f.map, s.image, s.t_init, f.scene.cam, 1, s.t_gt);
  CHECK(same_pose(it1.pose_est, once.estimate));
  REQUIRE(it1.trace.size() == 1);
  CHECK(*it1.trace[0].translation_error_m == doctest::Approx((once.estimate.t - s.t_gt.t).norm()));
  CHECK(*it1.trace[0].rotation_error_deg == doctest::Approx(quat_geodesic_deg(once.estimate.q, s.t_gt.q)));

  const auto it2 = localize_iterative({&n1, &n2}, f.map, s.image, s.t_init, f.scene.cam, 2);
  REQUIRE(it2.trace.size() == 2);
  CHECK(same_pose(it2.trace[0].pose, once.estimate));
  const auto second = localize_once(n2, f.map, s.image, once.estimate, f.scene.cam);
  CHECK(same_pose(it2.pose_est, second.estimate));
  for (const auto& r : it2.trace) {
    CHECK(r.preprocess_ms >= 0.0);
    CHECK(r.inference_ms >= 0.0);
    CHECK_FALSE(r.translation_error_m.has_value());
  }
  CHECK(it2.preprocess_ms == doctest::Approx(it2.trace[0].preprocess_ms + it2.trace[1].preprocess_ms));

  CHECK(code_of([&] { localize_iterative({&n1}, f.map, s.image, s.t_init, f.scene.cam, 2); }) ==
        ErrorCode::kMissingModel);
  CHECK(code_of([&] { localize_iterative({&n1, nullptr}, f.map, s.image, s.t_init, f.scene.cam, 2); }) ==
        ErrorCode::kMissingModel);
  CHECK(code_of([&] { localize_iterative({&n1}, f.map, s.image, s.t_init, f.scene.cam, 0); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("zero corrections are a fixed point of iteration") {
  const auto& f = fixture();
  const auto net = identity_net();
  const auto& s = f.samples[4];
  const auto r = localize_iterative({&net, &net, &net}, f.map, s.image, s.t_init, f.scene.cam, 3);
  for (const auto& step : r.trace) CHECK(same_pose(step.pose, s.t_init));
}

TEST_CASE("online training lowers the loss and moves the uncertainty weights") {
  const auto& f = fixture();
  TrainConfig cfg = online_defaults();
  cfg.epochs = 6;
  cfg.batch = 3;
  cfg.lr = 1e-3;
  const auto result = train_online(f.map, [&](int) { return f.samples; }, f.scene.cam, cfg);
  REQUIRE(result.history.size() == 6);
  MESSAGE("loss " << result.history.front().loss << " -> " << result.history.back().loss);
  CHECK(result.history.back().loss < result.history.front().loss);
  CHECK(result.checkpoint.w_x != 0.0);
  CHECK(result.checkpoint.w_q != -2.5);
  for (const auto& l : result.history) CHECK(l.samples + l.skipped == f.samples.size());
}

TEST_CASE("online training can overfit a noiseless frame") {
  const auto& f = fixture();
  const auto clean = make_dataset(f.scene, 0, 1);
  const std::vector<OfflineSample> two{clean[1], clean[2]};
  TrainConfig cfg = online_defaults();
  cfg.epochs = 40;
  cfg.batch = 2;
  cfg.lr = 1e-3;
  const auto result = train_online(f.map, [&](int) { return two; }, f.scene.cam, cfg);
  for (const auto& s : two) {
    const auto out = localize_once(result.checkpoint.net, f.map, s.image, s.t_init, f.scene.cam);
    const double err = (out.estimate.t - s.t_gt.t).norm();
    MESSAGE("frame " << s.frame_id << " translation error " << err);
    CHECK(err < 0.1);
  }
}

TEST_CASE("online training rejects an empty map") {
  const auto& f = fixture();
  CHECK(code_of([&] { train_online(LHMap{}, [&](int) { return f.samples; }, f.scene.cam, TrainConfig{}); }) ==
        ErrorCode::kEmptyMap);
}
