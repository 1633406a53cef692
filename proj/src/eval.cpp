#include "lhmaploc/eval.hpp"

#include "lhmaploc/error.hpp"
#include "lhmaploc/online.hpp"

#include "json.hpp"
#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

namespace lhm {

using nlohmann::json;

PoseError pose_errors(const Pose& est, const Pose& gt) {
  return {(est.t - gt.t).norm(), quat_geodesic_deg(est.q, gt.q)};
}

double failure_rate(std::span<const double> translation_errors) {
  if (translation_errors.empty()) throw Error(ErrorCode::kInvalidArgument, "failure rate of an empty error list");
  const auto failed = std::count_if(translation_errors.begin(), translation_errors.end(),
                                    [](double e) { return e > kFailureThresholdM; });
  return 100.0 * static_cast<double>(failed) / static_cast<double>(translation_errors.size());
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "aggregate of an empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  Aggregate a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  a.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  a.max = v.back();
  return a;
}

EvalReport make_report(std::vector<FrameResult> frames, std::optional<TimingStats> timing,
                       std::optional<std::uint64_t> map_bytes) {
  EvalReport r;
  r.frames = std::move(frames);
  r.timing = timing;
  r.map_bytes = map_bytes;
  if (r.frames.empty()) return r;
  std::vector<double> t, q;
  for (const auto& f : r.frames) {
    t.push_back(f.translation_m);
    q.push_back(f.rotation_deg);
  }
  r.translation_m = aggregate(t);
  r.rotation_deg = aggregate(q);
  r.failure_rate_pct = failure_rate(t);
  std::size_t iters = r.frames.front().iteration_translation_m.size();
  for (const auto& f : r.frames) iters = std::min(iters, f.iteration_translation_m.size());
  for (std::size_t i = 0; i < iters; ++i) {
    std::vector<double> e;
    for (const auto& f : r.frames) e.push_back(f.iteration_translation_m[i]);
    r.iteration_median_translation_m.push_back(aggregate(e).median);
  }
  return r;
}

namespace {

json aggregate_json(const std::optional<Aggregate>& a) {
  if (!a) return nullptr;
  return {{"mean", a->mean}, {"median", a->median}, {"max", a->max}};
}

std::optional<Aggregate> aggregate_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return Aggregate{j.at("mean").get<double>(), j.at("median").get<double>(), j.at("max").get<double>()};
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json frames = json::array();
  for (const auto& f : report.frames) {
    frames.push_back({{"frame_id", f.frame_id},
                      {"translation_m", f.translation_m},
                      {"rotation_deg", f.rotation_deg},
                      {"iteration_translation_m", f.iteration_translation_m},
                      {"preprocess_ms", f.preprocess_ms},
                      {"inference_ms", f.inference_ms}});
  }
  json j;
  j["frames"] = frames;
  j["translation_m"] = aggregate_json(report.translation_m);
  j["rotation_deg"] = aggregate_json(report.rotation_deg);
  j["failure_rate_pct"] = report.failure_rate_pct ? json(*report.failure_rate_pct) : json(nullptr);
  j["iteration_median_translation_m"] = report.iteration_median_translation_m;
  if (report.timing) {
    const auto& t = *report.timing;
    j["timing"] = {{"frames", t.frames},
                   {"reps", t.reps},
                   {"preprocess_ms", t.preprocess_ms},
                   {"inference_ms", t.inference_ms},
                   {"total_ms", t.total_ms},
                   {"preprocess_var", t.preprocess_var},
                   {"inference_var", t.inference_var},
                   {"total_var", t.total_var}};
  } else {
    j["timing"] = nullptr;
  }
  j["map_bytes"] = report.map_bytes ? json(*report.map_bytes) : json(nullptr);
  // Doubles are written with round-trip precision.
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    for (const auto& f : j.at("frames")) {
      FrameResult fr;
      fr.frame_id = f.at("frame_id").get<std::uint64_t>();
      fr.translation_m = f.at("translation_m").get<double>();
      fr.rotation_deg = f.at("rotation_deg").get<double>();
      fr.iteration_translation_m = f.at("iteration_translation_m").get<std::vector<double>>();
      fr.preprocess_ms = f.at("preprocess_ms").get<double>();
      fr.inference_ms = f.at("inference_ms").get<double>();
      r.frames.push_back(std::move(fr));
    }
    r.translation_m = aggregate_from(j.at("translation_m"));
    r.rotation_deg = aggregate_from(j.at("rotation_deg"));
    if (!j.at("failure_rate_pct").is_null()) r.failure_rate_pct = j.at("failure_rate_pct").get<double>();
    r.iteration_median_translation_m = j.at("iteration_median_translation_m").get<std::vector<double>>();
    if (const auto& t = j.at("timing"); !t.is_null()) {
      TimingStats s;
      s.frames = t.at("frames").get<std::size_t>();
      s.reps = t.at("reps").get<int>();
      s.preprocess_ms = t.at("preprocess_ms").get<double>();
      s.inference_ms = t.at("inference_ms").get<double>();
      s.total_ms = t.at("total_ms").get<double>();
      s.preprocess_var = t.at("preprocess_var").get<double>();
      s.inference_var = t.at("inference_var").get<double>();
      s.total_var = t.at("total_var").get<double>();
      r.timing = s;
    }
    if (!j.at("map_bytes").is_null()) r.map_bytes = j.at("map_bytes").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("report: ") + e.what());
  }
}

TimingStats benchmark_timing(const PoseNet<float>& net, const LHMap& map, std::span<const BenchSample> samples,
                             const CameraModel& cam, int reps) {
  if (reps < 1) throw Error(ErrorCode::kInvalidArgument, "benchmark: reps must be >= 1");
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "benchmark: no samples");
  std::vector<double> pre, inf;
  for (int r = 0; r < reps; ++r) {
    for (const auto& s : samples) {
      const auto out = localize_once(net, map, s.image, s.t_init, cam);
      pre.push_back(out.preprocess_ms);
      inf.push_back(out.inference_ms);
    }
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  auto var = [](const std::vector<double>& v, double m) {
    if (v.size() < 2) return 0.0;
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size() - 1);
  };
  std::vector<double> tot(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) tot[i] = pre[i] + inf[i];
  TimingStats t;
  t.frames = samples.size();
  t.reps = reps;
  t.preprocess_ms = mean(pre);
  t.inference_ms = mean(inf);
  t.total_ms = t.preprocess_ms + t.inference_ms;
  t.preprocess_var = var(pre, t.preprocess_ms);
  t.inference_var = var(inf, t.inference_ms);
  t.total_var = var(tot, mean(tot));
  return t;
}

namespace {

std::vector<double> parse_floats(std::string_view line, std::size_t line_no, const char* what) {
  std::vector<double> out;
  const char* p = line.data();
  const char* end = p + line.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    if (p == end) break;
    double v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r') || !std::isfinite(v)) {
      throw Error(ErrorCode::kParse, std::string(what) + " line " + std::to_string(line_no) + ": bad number");
    }
    out.push_back(v);
    p = next;
  }
  return out;
}

Pose pose_from_3x4(const std::vector<double>& v) {
  Eigen::Matrix3d r;
  r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  // Project onto SO(3) so slightly non-orthonormal files still give a rotation.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d rot = svd.matrixU() * svd.matrixV().transpose();
  if (rot.determinant() < 0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1;
    rot = u * svd.matrixV().transpose();
  }
  return Pose(Eigen::Quaterniond(rot), Eigen::Vector3d(v[3], v[7], v[11]));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string frame_name(std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", k);
  return buf;
}

}  // namespace

std::vector<Pose> parse_kitti_poses(std::string_view text) {
  std::vector<Pose> poses;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const auto v = parse_floats(line, line_no, "pose file");
    if (v.empty()) continue;
    if (v.size() != 12) {
      throw Error(ErrorCode::kParse, "pose file line " + std::to_string(line_no) + ": expected 12 values, got " +
                                         std::to_string(v.size()));
    }
    const Eigen::Map<const Eigen::Matrix<double, 3, 4, Eigen::RowMajor>> m(v.data());
    if (std::abs(m.leftCols<3>().determinant()) < 1e-6) {
      throw Error(ErrorCode::kParse, "pose file line " + std::to_string(line_no) + ": singular rotation");
    }
    poses.push_back(pose_from_3x4(v));
  }
  return poses;
}

KittiSequence ingest_kitti(const std::filesystem::path& dir, const std::string& sequence) {
  KittiSequence seq;
  seq.poses = parse_kitti_poses(read_text(dir / "poses" / (sequence + ".txt")));
  const auto seq_dir = dir / "sequences" / sequence;
  Pose velo_to_cam;
  if (std::filesystem::exists(seq_dir / "calib.txt")) {
    const std::string calib = read_text(seq_dir / "calib.txt");
    std::istringstream lines(calib);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
      ++line_no;
      if (line.rfind("Tr:", 0) != 0) continue;
      const auto v = parse_floats(std::string_view(line).substr(3), line_no, "calib");
      if (v.size() != 12) throw Error(ErrorCode::kParse, "calib line " + std::to_string(line_no) + ": expected 12 values");
      velo_to_cam = pose_from_3x4(v);
    }
  }
  std::vector<Eigen::Vector3d> all;
  for (std::size_t k = 0; k < seq.poses.size(); ++k) {
    const auto scan = seq_dir / "velodyne" / (frame_name(k) + ".bin");
    if (!std::filesystem::exists(scan)) {
      throw Error(ErrorCode::kIo, "missing scan for frame " + std::to_string(k) + ": " + scan.string());
    }
    const auto bytes = read_file(scan);
    if (bytes.size() % 16 != 0) {
      throw Error(ErrorCode::kTruncated, "scan for frame " + std::to_string(k) + " is not a whole number of points");
    }
    const Pose to_world = compose(seq.poses[k], velo_to_cam);
    for (std::size_t i = 0; i < bytes.size(); i += 16) {
      float xyz[3];
      std::memcpy(xyz, bytes.data() + i, sizeof xyz);
      all.push_back(to_world.apply(Eigen::Vector3d(xyz[0], xyz[1], xyz[2])));
    }
    seq.images.push_back(seq_dir / "image_2" / (frame_name(k) + ".png"));
  }
  seq.map = voxel_downsample(PointCloud{Frame::kWorld, std::move(all)}, kKittiVoxelM);
  return seq;
}

RgbImage overlay_depth(const RgbImage& image, const DepthImage& depth, double max_depth) {
  if (image.h != depth.h || image.w != depth.w) throw Error(ErrorCode::kShape, "overlay: image and depth sizes differ");
  RgbImage out = image;
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    const double z = depth.values[i];
    if (z == 0.0) continue;
    const double s = std::clamp(z / max_depth, 0.0, 1.0);
    // Red (near) → green → blue (far).
    const float r = static_cast<float>(std::clamp(1.0 - 2.0 * s, 0.0, 1.0));
    const float g = static_cast<float>(1.0 - std::abs(2.0 * s - 1.0));
    const float b = static_cast<float>(std::clamp(2.0 * s - 1.0, 0.0, 1.0));
    out.rgb[i * 3] = r;
    out.rgb[i * 3 + 1] = g;
    out.rgb[i * 3 + 2] = b;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::kIo, "png: out of memory");
  }
  std::vector<png_byte> rows(static_cast<std::size_t>(image.h) * image.w * 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i] = static_cast<png_byte>(std::lround(std::clamp(image.rgb[i], 0.0f, 1.0f) * 255.0f));
  }
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(image.h));
  for (int r = 0; r < image.h; ++r) row_ptrs[static_cast<std::size_t>(r)] = rows.data() + static_cast<std::size_t>(r) * image.w * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "png: write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.w), static_cast<png_uint_32>(image.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, row_ptrs.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error(ErrorCode::kIo, "cannot read png " + path.string());
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::kIo, "cannot decode png " + path.string());
  }
  RgbImage out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (std::size_t i = 0; i < buf.size(); ++i) out.rgb[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

namespace {

struct Canvas {
  RgbImage img;
  explicit Canvas(int h, int w) : img(h, w, 1.0f) {}
  void set(int x, int y, float r, float g, float b) {
    if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
    float* p = &img.rgb[(static_cast<std::size_t>(y) * img.w + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  void hline(int x0, int x1, int y, float r, float g, float b) {
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, r, g, b);
  }
  void vline(int x, int y0, int y1, float r, float g, float b) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) set(x, y, r, g, b);
  }
};

/// Empirical CDF of the errors as a step curve; the dashed red line marks the
/// failure threshold when it lies inside the axis range. Axis ticks every 10 %
/// vertically and every metre (or 0.1 m for small ranges) horizontally.
RgbImage cdf_plot(std::vector<double> errors) {
  std::sort(errors.begin(), errors.end());
  const int w = 480, h = 320, left = 40, right = 460, top = 20, bottom = 290;
  Canvas c(h, w);
  const double xmax = std::max(errors.back(), 0.1) * 1.05;
  auto px = [&](double e) { return left + static_cast<int>(std::lround((right - left) * e / xmax)); };
  auto py = [&](double f) { return bottom - static_cast<int>(std::lround((bottom - top) * f)); };
  for (int k = 0; k <= 10; ++k) c.hline(left - 4, left, py(k / 10.0), 0, 0, 0);
  const double tick = xmax > 2.0 ? 1.0 : 0.1;
  for (double t = 0; t <= xmax; t += tick) c.vline(px(t), bottom, bottom + 4, 0, 0, 0);
  if (kFailureThresholdM <= xmax) {
    for (int y = top; y <= bottom; ++y)
      if ((y / 4) % 2 == 0) c.set(px(kFailureThresholdM), y, 0.85f, 0.1f, 0.1f);
  }
  const double n = static_cast<double>(errors.size());
  int prev_x = left, prev_y = py(0);
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const int x = px(errors[i]);
    const int y = py(static_cast<double>(i + 1) / n);
    for (int d = 0; d < 2; ++d) {
      c.hline(prev_x, x, prev_y + d, 0.1f, 0.3f, 0.85f);
      c.vline(x + d, prev_y, y, 0.1f, 0.3f, 0.85f);
    }
    prev_x = x;
    prev_y = y;
  }
  c.hline(prev_x, right, prev_y, 0.1f, 0.3f, 0.85f);
  c.hline(left, right, bottom, 0, 0, 0);
  c.vline(left, top, bottom, 0, 0, 0);
  return c.img;
}

}  // namespace

PlotOutput emit_plots(const EvalReport& report, std::span<const Overlay> overlays,
                      const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw Error(ErrorCode::kIo, "cannot create plot directory " + out_dir.string());
  }
  PlotOutput out;
  for (const auto& o : overlays) {
    const auto stem = "overlay_" + frame_name(o.frame_id);
    const auto est = out_dir / (stem + "_est.png");
    const auto gt = out_dir / (stem + "_gt.png");
    write_png(est, overlay_depth(o.image, o.at_estimate));
    write_png(gt, overlay_depth(o.image, o.at_ground_truth));
    out.files.push_back(est);
    out.files.push_back(gt);
  }
  if (report.frames.empty()) {
    out.notices.push_back("no per-frame errors: error CDF not written");
  } else {
    std::vector<double> errors;
    for (const auto& f : report.frames) errors.push_back(f.translation_m);
    const auto cdf = out_dir / "error_cdf.png";
    write_png(cdf, cdf_plot(std::move(errors)));
    out.files.push_back(cdf);
  }
  return out;
}

}  // namespace lhm
