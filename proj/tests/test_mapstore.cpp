#include "doctest.h"

#include "lhmaploc/error.hpp"
#include "lhmaploc/geometry.hpp"
#include "lhmaploc/mapstore.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>
#include <tuple>

using namespace lhm;

namespace {

const CameraModel kCam{100, 100, 50, 50, 100, 100};

Pose random_pose(std::mt19937_64& rng, double tscale = 5.0) {
  std::normal_distribution<double> n(0, 1);
  return Pose(Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)),
              Eigen::Vector3d(n(rng), n(rng), n(rng)) * tscale);
}

KeyframeRecord random_record(std::mt19937_64& rng, std::uint64_t id, std::size_t count) {
  std::uniform_real_distribution<float> u(-50, 50), s(0, 3);
  KeyframeRecord r;
  r.frame_id = id;
  r.anchor = random_pose(rng);
  for (std::size_t i = 0; i < count; ++i) {
    r.points.emplace_back(u(rng), u(rng), u(rng));
    r.scores.push_back(s(rng));
  }
  return r;
}

DepthImage random_sparse_depth(std::mt19937_64& rng, int h, int w, double fill) {
  DepthImage d(h, w);
  std::uniform_real_distribution<double> u(0, 1), z(1, 30);
  for (auto& v : d.values)
    if (u(rng) < fill) v = static_cast<float>(z(rng));
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lhmaploc_test_" + name);
}

bool records_equal(const KeyframeRecord& a, const KeyframeRecord& b) {
  if (a.frame_id != b.frame_id || a.points.size() != b.points.size()) return false;
  if (a.anchor.q.coeffs() != b.anchor.q.coeffs() || a.anchor.t != b.anchor.t) return false;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (std::memcmp(a.points[i].data(), b.points[i].data(), 12) != 0) return false;
    if (std::memcmp(&a.scores[i], &b.scores[i], 4) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("lift with identity anchor equals camera-frame unprojection") {
  DepthImage d(100, 100);
  d.values[10 * 100 + 20] = 5.0f;
  d.values[50 * 100 + 50] = 2.0f;
  std::vector<float> scores(100 * 100, 0.0f);
  scores[10 * 100 + 20] = 0.7f;
  const auto r = lift_local_map(d, Pose::identity(), kCam, scores, 3);
  REQUIRE(r.size() == 2);
  CHECK(r.frame_id == 3);
  CHECK(r.points[0].x() == doctest::Approx((20.5 - 50) / 100 * 5));
  CHECK(r.points[0].y() == doctest::Approx((10.5 - 50) / 100 * 5));
  CHECK(r.points[0].z() == doctest::Approx(5));
  CHECK(r.scores[0] == doctest::Approx(0.7f));
  CHECK(r.scores[1] == 0.0f);

  const auto shifted = lift_local_map(d, Pose::from_translation({10, 0, 0}), kCam, scores);
  for (std::size_t i = 0; i < r.size(); ++i)
    CHECK((shifted.points[i] - r.points[i] - Eigen::Vector3f(10, 0, 0)).norm() < 1e-5f);
}

TEST_CASE("lift then render at the anchor reproduces the selected depth") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const DepthImage d = random_sparse_depth(rng, 100, 100, 0.3);
    const Pose anchor = random_pose(rng);
    const auto rec = lift_local_map(d, anchor, kCam, {});
    CHECK(rec.size() == d.nonzero_count());
    LHMap map = build_lhmap({rec}, kCam, 100 * 100);
    const DepthImage back = render_depth(map.all_points(), anchor, kCam);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      CHECK((back.values[i] != 0) == (d.values[i] != 0));
      // Points are stored in single precision, so depths agree to float rounding.
      CHECK(std::abs(back.values[i] - d.values[i]) <= 1e-5f * std::max(1.0f, d.values[i]));
    }
  }
}

TEST_CASE("build_lhmap counts, budget and ordering") {
  std::mt19937_64 rng(22);
  auto m = build_lhmap({random_record(rng, 0, 5000)}, kCam);
  CHECK(m.total_points() == 5000);
  m = build_lhmap({random_record(rng, 0, 5000), random_record(rng, 1, 5000)}, kCam);
  CHECK(m.total_points() == 10000);
  CHECK(m.all_points().points.size() == 10000);
  CHECK(m.point_budget == 5000);
  try {
    build_lhmap({random_record(rng, 0, 5001)}, kCam);
    FAIL("expected budget error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBudgetExceeded);
  }
  try {
    build_lhmap({random_record(rng, 2, 10), random_record(rng, 2, 10)}, kCam);
    FAIL("expected duplicate error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDuplicateFrame);
  }
}

TEST_CASE("serialization round trip is bit exact") {
  std::mt19937_64 rng(23);
  LHMap m = build_lhmap({random_record(rng, 4, 300), random_record(rng, 9, 0), random_record(rng, 12, 77)}, kCam, 400);
  const auto bytes = encode_lhmap(m);
  CHECK(bytes.size() == encoded_size(m));
  const LHMap back = decode_lhmap(bytes);
  CHECK(back.camera == m.camera);
  CHECK(back.point_budget == 400);
  REQUIRE(back.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(records_equal(back.records[i], m.records[i]));
  CHECK(encode_lhmap(back) == bytes);

  const auto path = temp_path("roundtrip.lhm");
  save_lhmap(m, path);
  CHECK(encode_lhmap(load_lhmap(path)) == bytes);
  const MapStat st = stat_lhmap(path);
  CHECK(st.records == 3);
  CHECK(st.total_points == 377);
  CHECK(st.bytes == bytes.size());
  std::filesystem::remove(path);
}

TEST_CASE("file size follows the format layout") {
  std::mt19937_64 rng(24);
  LHMap m = build_lhmap({random_record(rng, 0, 5000)}, kCam);
  const std::size_t expected = (4 + 4 + 6 * 8 + 4 + 4) + (8 + 4 * 8 + 3 * 8 + 4) + 5000 * (3 * 4 + 4);
  CHECK(expected == 80132);
  CHECK(encode_lhmap(m).size() == expected);
}

TEST_CASE("decode errors are typed") {
  std::mt19937_64 rng(25);
  const auto good = encode_lhmap(build_lhmap({random_record(rng, 0, 10)}, kCam));
  auto expect_code = [](std::vector<std::uint8_t> bytes, ErrorCode code) {
    try {
      decode_lhmap(bytes);
      FAIL("expected decode error");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  expect_code(bad_magic, ErrorCode::kBadMagic);
  auto bad_version = good;
  bad_version[4] = 7;
  expect_code(bad_version, ErrorCode::kBadVersion);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{30}, good.size() - 1})
    expect_code(std::vector<std::uint8_t>(good.begin(), good.begin() + cut), ErrorCode::kTruncated);
  // Random garbage never crashes.
  std::uniform_int_distribution<int> byte(0, 255);
  for (int i = 0; i < 200; ++i) {
    auto noisy = good;
    for (int k = 0; k < 4; ++k) noisy[byte(rng) % noisy.size()] = static_cast<std::uint8_t>(byte(rng));
    try {
      decode_lhmap(noisy);
    } catch (const Error&) {
    }
  }
}

TEST_CASE("scene container round trip keeps albedo and seed") {
  std::mt19937_64 rng(26);
  auto rec = random_record(rng, 0, 50);
  for (std::size_t i = 0; i < rec.size(); ++i) rec.albedo.emplace_back(0.1f * (i % 10), 0.5f, 1.0f);
  SceneContainer sc{build_lhmap({rec}, kCam, 50), 1234};
  const auto bytes = encode_scene_container(sc);
  CHECK(bytes.size() == kFileHeaderBytes + kSceneExtraHeaderBytes + kRecordHeaderBytes + 50 * kScenePointBytes);
  const auto back = decode_scene_container(bytes);
  CHECK(back.seed == 1234);
  CHECK(records_equal(back.map.records[0], rec));
  CHECK(back.map.records[0].albedo == rec.albedo);
  try {
    decode_lhmap(bytes);
    FAIL("version-2 data must not decode as a plain map");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBadVersion);
  }
}

TEST_CASE("query_local nearest anchors") {
  KeyframeRecord a, b, c;
  a.frame_id = 0;
  a.anchor = Pose::from_translation({0, 0, 0});
  a.points = {{1, 1, 1}};
  a.scores = {1};
  b.frame_id = 1;
  b.anchor = Pose::from_translation({10, 0, 0});
  b.points = {{2, 2, 2}, {3, 3, 3}};
  b.scores = {1, 1};
  c.frame_id = 2;
  c.anchor = Pose::from_translation({-2, 0, 0});
  c.points = {{4, 4, 4}};
  c.scores = {1};
  const LHMap m = build_lhmap({a, b, c}, kCam);

  auto q = query_local(m, Pose::from_translation({10, 0, 0}));
  REQUIRE(q.points.size() == 2);
  CHECK(q.points[0] == Eigen::Vector3d(2, 2, 2));
  q = query_local(m, Pose::from_translation({2, 0, 0}));
  REQUIRE(q.points.size() == 1);
  CHECK(q.points[0] == Eigen::Vector3d(1, 1, 1));
  // Equidistant from frames 0 and 2: the smaller frame id wins.
  q = query_local(m, Pose::from_translation({-1, 0, 0}));
  CHECK(q.points[0] == Eigen::Vector3d(1, 1, 1));
  CHECK(query_local(m, Pose::identity(), 3).points.size() == 4);
  CHECK(query_local(m, Pose::identity(), 10).points.size() == 4);
  const auto q1 = query_local(m, Pose::from_translation({3, 1, 0}), 2);
  const auto q2 = query_local(m, Pose::from_translation({3, 1, 0}), 2);
  CHECK(q1.points == q2.points);

  LHMap empty;
  CHECK_THROWS_AS(query_local(empty, Pose::identity()), Error);
}

TEST_CASE("voxel downsample") {
  PointCloud pc;
  pc.points = {{0.01, 0.01, 0.01}, {0.05, 0.03, 0.07}};
  auto out = voxel_downsample(pc, 0.1);
  REQUIRE(out.points.size() == 1);
  CHECK((out.points[0] - Eigen::Vector3d(0.03, 0.02, 0.04)).norm() < 1e-12);

  pc.points = {{0.05, 0.05, 0.05}, {0.25, 0.25, 0.25}, {0.45, 0.45, 0.45}};
  CHECK(voxel_downsample(pc, 0.1).points.size() == 3);

  std::mt19937_64 rng(27);
  std::uniform_real_distribution<double> u(-1, 1);
  pc.points.clear();
  for (int i = 0; i < 5000; ++i) pc.points.emplace_back(u(rng), u(rng), u(rng));
  out = voxel_downsample(pc, 0.1);
  std::set<std::tuple<long, long, long>> occupied, seen;
  for (const auto& p : pc.points)
    occupied.emplace(std::lround(std::floor(p.x() / 0.1)), std::lround(std::floor(p.y() / 0.1)),
                     std::lround(std::floor(p.z() / 0.1)));
  for (const auto& p : out.points) {
    const auto key = std::make_tuple(std::lround(std::floor(p.x() / 0.1)), std::lround(std::floor(p.y() / 0.1)),
                                     std::lround(std::floor(p.z() / 0.1)));
    CHECK(seen.insert(key).second);
  }
  CHECK(seen == occupied);
}
