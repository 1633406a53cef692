#pragma once

#include "lhmaploc/geometry.hpp"
#include "lhmaploc/mapstore.hpp"
#include "lhmaploc/nets.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lhm {

struct PoseError {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};

/// ‖t_est − t_gt‖ and the quaternion geodesic angle.
PoseError pose_errors(const Pose& est, const Pose& gt);

/// A frame fails when its translation error is strictly larger than this.
inline constexpr double kFailureThresholdM = 4.0;

/// Percentage of errors above kFailureThresholdM. Throws kInvalidArgument on
/// an empty list.
double failure_rate(std::span<const double> translation_errors);

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
};

/// Throws kInvalidArgument on an empty list.
Aggregate aggregate(std::span<const double> values);

struct FrameResult {
  std::uint64_t frame_id = 0;
  double translation_m = 0.0;
  double rotation_deg = 0.0;
  /// Translation error after each refinement iteration (last == translation_m).
  std::vector<double> iteration_translation_m;
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
};

struct TimingStats {
  std::size_t frames = 0;
  int reps = 0;
  double preprocess_ms = 0.0;  // mean per frame
  double inference_ms = 0.0;   // mean per frame
  double total_ms = 0.0;       // preprocess_ms + inference_ms
  double preprocess_var = 0.0;  // sample variance over all measurements (ms²)
  double inference_var = 0.0;
  double total_var = 0.0;
};

struct EvalReport {
  std::vector<FrameResult> frames;
  std::optional<Aggregate> translation_m;
  std::optional<Aggregate> rotation_deg;
  std::optional<double> failure_rate_pct;
  /// Median translation error after each iteration.
  std::vector<double> iteration_median_translation_m;
  std::optional<TimingStats> timing;
  std::optional<std::uint64_t> map_bytes;
};

/// Fills every aggregate from `frames`; aggregates stay absent when empty.
EvalReport make_report(std::vector<FrameResult> frames, std::optional<TimingStats> timing = std::nullopt,
                       std::optional<std::uint64_t> map_bytes = std::nullopt);

std::string report_to_json(const EvalReport& report);
/// Throws kParse on malformed input.
EvalReport report_from_json(const std::string& text);

/// One localization query: the image and the initial pose.
struct BenchSample {
  RgbImage image;
  Pose t_init;
};

/// Runs every sample `reps` times at batch size 1 and reports mean and
/// variance of the pre-processing (local-map query + projection with
/// occlusion) and inference times. Throws kInvalidArgument for reps < 1 or no
/// samples.
TimingStats benchmark_timing(const PoseNet<float>& net, const LHMap& map, std::span<const BenchSample> samples,
                             const CameraModel& cam, int reps);

/// Poses of a KITTI odometry file: 12 floats per line, a row-major 3×4
/// camera-to-world matrix. Blank lines are skipped. Throws kParse naming the
/// line number.
std::vector<Pose> parse_kitti_poses(std::string_view text);

struct KittiSequence {
  PointCloud map{Frame::kWorld, {}};
  std::vector<Pose> poses;
  std::vector<std::filesystem::path> images;  // image_2/NNNNNN.png per frame
};

inline constexpr double kKittiVoxelM = 0.1;

/// Reads <dir>/poses/<seq>.txt and <dir>/sequences/<seq>/velodyne/NNNNNN.bin
/// (float32 x, y, z, reflectance). Scans are mapped through the optional
/// "Tr:" line of <dir>/sequences/<seq>/calib.txt and the frame pose, merged,
/// and voxel-downsampled at kKittiVoxelM. Throws kIo naming the frame of a
/// missing scan.
KittiSequence ingest_kitti(const std::filesystem::path& dir, const std::string& sequence);

/// Depth points colored by depth (near red, far blue) over the image.
RgbImage overlay_depth(const RgbImage& image, const DepthImage& depth, double max_depth = 40.0);

struct Overlay {
  std::uint64_t frame_id = 0;
  RgbImage image;
  DepthImage at_estimate;
  DepthImage at_ground_truth;
};

struct PlotOutput {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> notices;
};

/// Writes overlay_<frame>_est.png / overlay_<frame>_gt.png per overlay and
/// error_cdf.png for the report's translation errors (omitted with a notice
/// when there are none). Output is byte-identical for identical inputs.
/// Throws kIo when the directory cannot be written.
PlotOutput emit_plots(const EvalReport& report, std::span<const Overlay> overlays,
                      const std::filesystem::path& out_dir);

/// 8-bit RGB PNG without time or text chunks.
void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace lhm
