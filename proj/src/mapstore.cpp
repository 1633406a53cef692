#include "lhmaploc/mapstore.hpp"

#include "lhmaploc/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

namespace lhm {

static_assert(std::endian::native == std::endian::little,
              "the LHMap container is written with native little-endian stores");

std::size_t LHMap::total_points() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.size();
  return n;
}

PointCloud LHMap::all_points() const {
  PointCloud pc;
  pc.points.reserve(total_points());
  for (const auto& r : records)
    for (const auto& p : r.points) pc.points.push_back(p.cast<double>());
  return pc;
}

KeyframeRecord lift_local_map(const DepthImage& selected, const Pose& anchor,
                              const CameraModel& cam, std::span<const float> scores,
                              std::uint64_t frame_id) {
  if (selected.h != cam.h || selected.w != cam.w) {
    throw Error(ErrorCode::kShape, "depth image does not match the camera resolution");
  }
  if (!scores.empty() && scores.size() != selected.values.size()) {
    throw Error(ErrorCode::kShape, "score grid does not match the depth image");
  }
  KeyframeRecord rec;
  rec.frame_id = frame_id;
  rec.anchor = anchor;
  for (int row = 0; row < selected.h; ++row) {
    for (int col = 0; col < selected.w; ++col) {
      const float z = selected.at(row, col);
      if (z == 0.f) continue;
      if (!(z > 0.f) || !std::isfinite(z)) {
        throw Error(ErrorCode::kInvalidDepth, "selected depth must be nonnegative and finite");
      }
      Eigen::Vector3d p = unproject(col + 0.5, row + 0.5, z, anchor, cam);
      rec.points.push_back(p.cast<float>());
      rec.scores.push_back(scores.empty() ? 0.f
                                          : scores[static_cast<std::size_t>(row) * cam.w + col]);
    }
  }
  return rec;
}

LHMap build_lhmap(std::vector<KeyframeRecord> records, const CameraModel& cam,
                  std::uint32_t point_budget) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i > 0 && r.frame_id <= records[i - 1].frame_id) {
      throw Error(ErrorCode::kDuplicateFrame,
                  "frame ids must be strictly increasing (frame " + std::to_string(r.frame_id) +
                      ")");
    }
    if (r.points.size() != r.scores.size()) {
      throw Error(ErrorCode::kShape, "record points and scores differ in length");
    }
    if (point_budget > 0 && r.points.size() > point_budget) {
      throw Error(ErrorCode::kBudgetExceeded,
                  "frame " + std::to_string(r.frame_id) + " holds " +
                      std::to_string(r.points.size()) + " points, budget is " +
                      std::to_string(point_budget));
    }
    for (float s : r.scores) {
      if (!std::isfinite(s)) throw Error(ErrorCode::kInvalidArgument, "non-finite point score");
    }
  }
  LHMap map;
  map.camera = cam;
  map.point_budget = point_budget;
  map.records = std::move(records);
  return map;
}

PointCloud query_local(const LHMap& map, const Pose& query, std::size_t k) {
  if (map.records.empty()) throw Error(ErrorCode::kEmptyMap, "query on an empty LHMap");
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "query_local needs k >= 1");
  std::vector<std::size_t> order(map.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    dist[i] = (map.records[i].anchor.t - query.t).squaredNorm();
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (dist[a] != dist[b]) return dist[a] < dist[b];
                      return map.records[a].frame_id < map.records[b].frame_id;
                    });
  order.resize(take);
  // Emit in map order so the result does not depend on the distance ranking.
  std::sort(order.begin(), order.end());
  PointCloud out;
  for (std::size_t i : order)
    for (const auto& p : map.records[i].points) out.points.push_back(p.cast<double>());
  return out;
}

PointCloud voxel_downsample(const PointCloud& pc, double resolution) {
  if (!(resolution > 0)) throw Error(ErrorCode::kInvalidArgument, "voxel resolution must be > 0");
  struct KeyHash {
    std::size_t operator()(const Eigen::Vector3i& k) const noexcept {
      std::size_t h = static_cast<std::size_t>(k.x()) * 73856093u;
      h ^= static_cast<std::size_t>(k.y()) * 19349663u;
      h ^= static_cast<std::size_t>(k.z()) * 83492791u;
      return h;
    }
  };
  std::unordered_map<Eigen::Vector3i, std::size_t, KeyHash> slot;
  std::vector<Eigen::Vector3d> sum;
  std::vector<std::size_t> count;
  for (const auto& p : pc.points) {
    Eigen::Vector3i key((p / resolution).array().floor().cast<int>());
    auto [it, inserted] = slot.try_emplace(key, sum.size());
    if (inserted) {
      sum.push_back(Eigen::Vector3d::Zero());
      count.push_back(0);
    }
    sum[it->second] += p;
    ++count[it->second];
  }
  PointCloud out;
  out.frame = pc.frame;
  out.points.reserve(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) out.points.push_back(sum[i] / double(count[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw Error(ErrorCode::kTruncated, std::string("LHMap file truncated while reading ") + what);
    }
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_header(Writer& w, const LHMap& map, std::uint32_t version) {
  for (char c : kMagic) w.put(c);
  w.put<std::uint32_t>(version);
  const auto& c = map.camera;
  for (double v : {c.fx, c.fy, c.cx, c.cy, double(c.h), double(c.w)}) w.put(v);
  w.put<std::uint32_t>(map.point_budget);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.records.size()));
}

void put_record_header(Writer& w, const KeyframeRecord& r) {
  w.put<std::uint64_t>(r.frame_id);
  w.put(r.anchor.q.w());
  w.put(r.anchor.q.x());
  w.put(r.anchor.q.y());
  w.put(r.anchor.q.z());
  for (int i = 0; i < 3; ++i) w.put(r.anchor.t[i]);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.points.size()));
}

std::vector<std::uint8_t> encode(const LHMap& map, std::uint32_t version, std::uint64_t seed) {
  Writer w;
  w.reserve(encoded_size(map));
  put_header(w, map, version);
  if (version == kSceneFormatVersion) w.put<std::uint64_t>(seed);
  for (const auto& r : map.records) {
    if (r.scores.size() != r.points.size()) {
      throw Error(ErrorCode::kShape, "record points and scores differ in length");
    }
    if (version == kSceneFormatVersion && r.albedo.size() != r.points.size()) {
      throw Error(ErrorCode::kShape, "scene record needs one albedo per point");
    }
    put_record_header(w, r);
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      w.put(r.points[i].x());
      w.put(r.points[i].y());
      w.put(r.points[i].z());
      w.put(r.scores[i]);
      if (version == kSceneFormatVersion) {
        for (int c = 0; c < 3; ++c) w.put(r.albedo[i][c]);
      }
    }
  }
  return w.take();
}

LHMap decode(std::span<const std::uint8_t> bytes, std::uint32_t expected_version,
             std::uint64_t* seed) {
  Reader rd(bytes);
  char magic[4];
  for (char& c : magic) c = rd.get<char>("magic");
  if (!std::equal(magic, magic + 4, kMagic)) {
    throw Error(ErrorCode::kBadMagic, "not an LHMap file (bad magic)");
  }
  const auto version = rd.get<std::uint32_t>("version");
  if (version != expected_version) {
    throw Error(ErrorCode::kBadVersion, "unsupported LHMap version " + std::to_string(version) +
                                            " (expected " + std::to_string(expected_version) +
                                            ")");
  }
  LHMap map;
  auto& c = map.camera;
  c.fx = rd.get<double>("camera");
  c.fy = rd.get<double>("camera");
  c.cx = rd.get<double>("camera");
  c.cy = rd.get<double>("camera");
  c.h = static_cast<int>(rd.get<double>("camera"));
  c.w = static_cast<int>(rd.get<double>("camera"));
  map.point_budget = rd.get<std::uint32_t>("point budget");
  const auto n_records = rd.get<std::uint32_t>("record count");
  if (version == kSceneFormatVersion) {
    const auto s = rd.get<std::uint64_t>("seed");
    if (seed) *seed = s;
  }
  const std::size_t point_bytes = version == kSceneFormatVersion ? kScenePointBytes : kPointBytes;
  if (std::size_t(n_records) * kRecordHeaderBytes > rd.remaining()) {
    throw Error(ErrorCode::kTruncated, "LHMap file truncated: record table is incomplete");
  }
  map.records.reserve(n_records);
  for (std::uint32_t i = 0; i < n_records; ++i) {
    KeyframeRecord r;
    r.frame_id = rd.get<std::uint64_t>("frame id");
    const double qw = rd.get<double>("anchor");
    const double qx = rd.get<double>("anchor");
    const double qy = rd.get<double>("anchor");
    const double qz = rd.get<double>("anchor");
    // Stored quaternions are already canonical; copy them verbatim to keep bits.
    r.anchor.q = Eigen::Quaterniond(qw, qx, qy, qz);
    for (int k = 0; k < 3; ++k) r.anchor.t[k] = rd.get<double>("anchor");
    const auto n = rd.get<std::uint32_t>("point count");
    if (std::size_t(n) * point_bytes > rd.remaining()) {
      throw Error(ErrorCode::kTruncated, "LHMap file truncated inside frame " +
                                             std::to_string(r.frame_id));
    }
    r.points.resize(n);
    r.scores.resize(n);
    if (version == kSceneFormatVersion) r.albedo.resize(n);
    for (std::uint32_t j = 0; j < n; ++j) {
      r.points[j].x() = rd.get<float>("point");
      r.points[j].y() = rd.get<float>("point");
      r.points[j].z() = rd.get<float>("point");
      r.scores[j] = rd.get<float>("score");
      if (version == kSceneFormatVersion) {
        for (int k = 0; k < 3; ++k) r.albedo[j][k] = rd.get<float>("albedo");
      }
    }
    map.records.push_back(std::move(r));
  }
  if (rd.remaining() != 0) {
    throw Error(ErrorCode::kTruncated, "trailing bytes after the last LHMap record");
  }
  return map;
}

}  // namespace

std::size_t encoded_size(const LHMap& map) {
  return kFileHeaderBytes + map.records.size() * kRecordHeaderBytes +
         map.total_points() * kPointBytes;
}

std::vector<std::uint8_t> encode_lhmap(const LHMap& map) { return encode(map, kFormatVersion, 0); }

LHMap decode_lhmap(std::span<const std::uint8_t> bytes) {
  return decode(bytes, kFormatVersion, nullptr);
}

std::vector<std::uint8_t> encode_scene_container(const SceneContainer& scene) {
  return encode(scene.map, kSceneFormatVersion, scene.seed);
}

SceneContainer decode_scene_container(std::span<const std::uint8_t> bytes) {
  SceneContainer sc;
  sc.map = decode(bytes, kSceneFormatVersion, &sc.seed);
  return sc;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

void save_lhmap(const LHMap& map, const std::filesystem::path& path) {
  write_file(path, encode_lhmap(map));
}

LHMap load_lhmap(const std::filesystem::path& path) { return decode_lhmap(read_file(path)); }

MapStat stat_lhmap(const std::filesystem::path& path) {
  const LHMap map = load_lhmap(path);
  return {map.records.size(), map.total_points(), std::filesystem::file_size(path)};
}

}  // namespace lhm
