#include "lhmaploc/lhmaploc.h"

#include "lhmaploc/config.hpp"
#include "lhmaploc/error.hpp"
#include "lhmaploc/eval.hpp"
#include "lhmaploc/online.hpp"
#include "lhmaploc/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <new>
#include <random>
#include <string>

struct lhm_scene {
  lhm::SyntheticScene scene;
};

struct lhm_map {
  lhm::LHMap map;
};

struct lhm_model {
  lhm::Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

/// Runs fn, translating exceptions into status codes and the thread's last error.
template <class Fn>
lhm_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return LHM_OK;
  } catch (const lhm::Error& e) {
    g_last_error = e.what();
    return static_cast<lhm_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LHM_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LHM_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw lhm::Error(lhm::ErrorCode::kInvalidArgument, what);
}

lhm::TrainConfig to_cpp(const lhm_train_config& c) {
  lhm::TrainConfig t;
  t.epochs = c.epochs;
  t.batch = c.batch;
  t.lr = c.lr;
  t.lambda = c.lambda;
  t.alpha = c.alpha;
  t.beta = c.beta;
  t.topn = c.topn;
  t.noise_level = c.noise_level;
  t.seed = c.seed;
  t.draws = c.draws;
  return t;
}

lhm_train_config to_c(const lhm::TrainConfig& t) {
  return lhm_train_config{t.epochs, t.batch, t.lr, t.lambda, t.alpha, t.beta, t.topn, t.noise_level, t.seed, t.draws};
}

lhm::Pose to_cpp(const lhm_pose& p) {
  return lhm::Pose(Eigen::Quaterniond(p.q[0], p.q[1], p.q[2], p.q[3]), Eigen::Vector3d(p.t[0], p.t[1], p.t[2]));
}

lhm_pose to_c(const lhm::Pose& p) {
  return lhm_pose{{p.q.w(), p.q.x(), p.q.y(), p.q.z()}, {p.t.x(), p.t.y(), p.t.z()}};
}

std::function<void(const lhm::EpochLog&)> epoch_hook(lhm_epoch_callback cb, void* user) {
  if (!cb) return {};
  return [cb, user](const lhm::EpochLog& l) {
    if (!cb(l.epoch, l.loss, l.samples, l.skipped, user)) {
      throw lhm::Error(lhm::ErrorCode::kInvalidArgument, "training cancelled at epoch " + std::to_string(l.epoch));
    }
  };
}

std::vector<const lhm::PoseNet<float>*> nets_of(const lhm_model* const* models, int n_models) {
  require(models != nullptr || n_models == 0, "models is null");
  std::vector<const lhm::PoseNet<float>*> out;
  for (int i = 0; i < n_models; ++i) out.push_back(models[i] ? &models[i]->checkpoint.net : nullptr);
  return out;
}

}  // namespace

extern "C" {

const char* lhm_version(void) { return "0.1.0"; }

const char* lhm_last_error(void) { return g_last_error.c_str(); }

const char* lhm_status_name(lhm_status status) {
  switch (status) {
    case LHM_OK: return "ok";
    case LHM_INVALID_ARGUMENT: return "invalid argument";
    case LHM_SHAPE: return "shape mismatch";
    case LHM_INVALID_DEPTH: return "invalid depth";
    case LHM_DUPLICATE_FRAME: return "duplicate frame";
    case LHM_BUDGET_EXCEEDED: return "point budget exceeded";
    case LHM_EMPTY_MAP: return "empty map";
    case LHM_BAD_MAGIC: return "bad magic";
    case LHM_BAD_VERSION: return "bad version";
    case LHM_TRUNCATED: return "truncated input";
    case LHM_IO: return "i/o error";
    case LHM_PARSE: return "parse error";
    case LHM_DEGENERATE_SAMPLE: return "degenerate sample";
    case LHM_DIVERGENCE: return "training diverged";
    case LHM_MISSING_MODEL: return "missing model";
    case LHM_GENERATION: return "scene generation failed";
    case LHM_INTERNAL: return "internal error";
  }
  return "unknown status";
}

lhm_status lhm_perturb_pose(const lhm_pose* gt, int noise_level, uint64_t seed, lhm_pose* out) {
  return guarded([&] {
    require(gt && out, "null argument");
    std::mt19937_64 rng(seed);
    *out = to_c(lhm::compose(to_cpp(*gt), lhm::sample_pose_noise(noise_level, rng)));
  });
}

lhm_status lhm_pose_error(const lhm_pose* est, const lhm_pose* gt, double* translation_m, double* rotation_deg) {
  return guarded([&] {
    require(est && gt, "null argument");
    const auto e = lhm::pose_errors(to_cpp(*est), to_cpp(*gt));
    if (translation_m) *translation_m = e.translation_m;
    if (rotation_deg) *rotation_deg = e.rotation_deg;
  });
}

void lhm_train_config_default(int online, lhm_train_config* out) {
  if (out) *out = to_c(online ? lhm::online_defaults() : lhm::TrainConfig{});
}

lhm_status lhm_train_config_load(const char* path, lhm_train_config* cfg) {
  return guarded([&] {
    require(path && cfg, "null argument");
    *cfg = to_c(lhm::load_train_config(path, to_cpp(*cfg)));
  });
}

lhm_status lhm_scene_generate(uint64_t seed, uint64_t n_points, double extent_m, int n_frames, lhm_scene** out) {
  return guarded([&] {
    require(out, "null output");
    *out = new lhm_scene{lhm::gen_scene(seed, n_points, extent_m, n_frames)};
  });
}

lhm_status lhm_scene_load(const char* path, lhm_scene** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new lhm_scene{lhm::load_scene(path)};
  });
}

lhm_status lhm_scene_save(const lhm_scene* scene, const char* path) {
  return guarded([&] {
    require(scene && path, "null argument");
    lhm::save_scene(scene->scene, path);
  });
}

void lhm_scene_free(lhm_scene* scene) { delete scene; }

lhm_status lhm_scene_info(const lhm_scene* scene, uint64_t* points, int* frames, int* width, int* height) {
  return guarded([&] {
    require(scene, "null scene");
    if (points) *points = scene->scene.map.points.size();
    if (frames) *frames = static_cast<int>(scene->scene.trajectory.size());
    if (width) *width = scene->scene.cam.w;
    if (height) *height = scene->scene.cam.h;
  });
}

lhm_status lhm_scene_pose(const lhm_scene* scene, int frame, lhm_pose* out) {
  return guarded([&] {
    require(scene && out, "null argument");
    require(frame >= 0 && static_cast<std::size_t>(frame) < scene->scene.trajectory.size(), "frame out of range");
    *out = to_c(scene->scene.trajectory[static_cast<std::size_t>(frame)]);
  });
}

lhm_status lhm_scene_render(const lhm_scene* scene, int frame, float* rgb, size_t rgb_len) {
  return guarded([&] {
    require(scene && rgb, "null argument");
    const auto& s = scene->scene;
    require(frame >= 0 && static_cast<std::size_t>(frame) < s.trajectory.size(), "frame out of range");
    const auto img = lhm::render_rgb(s, s.trajectory[static_cast<std::size_t>(frame)]);
    if (rgb_len != img.rgb.size()) throw lhm::Error(lhm::ErrorCode::kShape, "rgb buffer has the wrong length");
    std::copy(img.rgb.begin(), img.rgb.end(), rgb);
  });
}

lhm_status lhm_map_load(const char* path, lhm_map** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new lhm_map{lhm::load_lhmap(path)};
  });
}

lhm_status lhm_map_save(const lhm_map* map, const char* path) {
  return guarded([&] {
    require(map && path, "null argument");
    lhm::save_lhmap(map->map, path);
  });
}

void lhm_map_free(lhm_map* map) { delete map; }

lhm_status lhm_map_stat_file(const char* path, lhm_map_stat* out) {
  return guarded([&] {
    require(path && out, "null argument");
    const auto map = lhm::load_lhmap(path);
    out->file_bytes = std::filesystem::file_size(path);
    out->records = map.records.size();
    out->points = map.total_points();
    out->point_budget = map.point_budget;
    out->width = map.camera.w;
    out->height = map.camera.h;
  });
}

lhm_status lhm_model_load(const char* path, lhm_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new lhm_model{lhm::load_checkpoint(path)};
  });
}

lhm_status lhm_model_save(const lhm_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "null argument");
    lhm::save_checkpoint(model->checkpoint, path);
  });
}

void lhm_model_free(lhm_model* model) { delete model; }

lhm_status lhm_build_map(const lhm_scene* scene, const lhm_train_config* cfg, lhm_epoch_callback cb, void* user,
                         lhm_map** map_out, lhm_model** model_out) {
  return guarded([&] {
    require(scene && cfg, "null argument");
    const auto c = to_cpp(*cfg);
    auto result = lhm::train_offline(lhm::noisy_source(scene->scene, c.noise_level, c.seed, c.draws),
                                     scene->scene.cam, c, lhm::NetConfig{}, epoch_hook(cb, user));
    if (map_out) *map_out = new lhm_map{std::move(result.map)};
    if (model_out) *model_out = new lhm_model{std::move(result.checkpoint)};
  });
}

lhm_status lhm_train_online(const lhm_scene* scene, const lhm_map* map, const lhm_train_config* cfg,
                            const lhm_model* init, lhm_epoch_callback cb, void* user, lhm_model** out) {
  return guarded([&] {
    require(scene && map && cfg && out, "null argument");
    const auto c = to_cpp(*cfg);
    auto result = lhm::train_online(map->map, lhm::noisy_source(scene->scene, c.noise_level, c.seed, c.draws),
                                    scene->scene.cam, c, lhm::NetConfig{},
                                    init ? &init->checkpoint.net : nullptr, epoch_hook(cb, user));
    *out = new lhm_model{std::move(result.checkpoint)};
  });
}

lhm_status lhm_localize(const lhm_model* const* models, int n_models, int iters, const lhm_map* map,
                        const float* rgb, int width, int height, const lhm_pose* init, lhm_pose* out,
                        lhm_pose* trace, double* preprocess_ms, double* inference_ms) {
  return guarded([&] {
    require(map && rgb && init && out, "null argument");
    require(width > 0 && height > 0, "image size must be positive");
    lhm::RgbImage img(height, width);
    std::copy(rgb, rgb + img.rgb.size(), img.rgb.begin());
    const auto r = lhm::localize_iterative(nets_of(models, n_models), map->map, img, to_cpp(*init),
                                           map->map.camera, iters);
    *out = to_c(r.pose_est);
    if (trace)
      for (std::size_t i = 0; i < r.trace.size(); ++i) trace[i] = to_c(r.trace[i].pose);
    if (preprocess_ms) *preprocess_ms = r.preprocess_ms;
    if (inference_ms) *inference_ms = r.inference_ms;
  });
}

lhm_status lhm_evaluate(const lhm_model* const* models, int n_models, int iters, const lhm_map* map,
                        const char* map_path, const lhm_scene* scene, int noise_level, uint64_t seed,
                        const char* out_dir, lhm_eval_summary* summary) {
  return guarded([&] {
    require(map && scene && out_dir, "null argument");
    require(iters >= 1 && iters <= 3, "iterations must be 1, 2 or 3");
    const auto nets = nets_of(models, n_models);
    const auto& s = scene->scene;
    const auto& cam = map->map.camera;
    std::mt19937_64 rng(seed);
    std::vector<lhm::FrameResult> frames;
    std::vector<lhm::Overlay> overlays;
    for (std::size_t k = 0; k < s.trajectory.size(); ++k) {
      const lhm::Pose gt = s.trajectory[k];
      const lhm::Pose init = lhm::compose(gt, lhm::sample_pose_noise(noise_level, rng));
      const auto image = lhm::render_rgb(s, gt);
      const auto r = lhm::localize_iterative(nets, map->map, image, init, cam, iters, gt);
      lhm::FrameResult f;
      f.frame_id = k;
      const auto e = lhm::pose_errors(r.pose_est, gt);
      f.translation_m = e.translation_m;
      f.rotation_deg = e.rotation_deg;
      for (const auto& step : r.trace) f.iteration_translation_m.push_back(*step.translation_error_m);
      f.preprocess_ms = r.preprocess_ms;
      f.inference_ms = r.inference_ms;
      frames.push_back(f);
      if (k % 10 == 0) {
        lhm::Overlay o;
        o.frame_id = k;
        o.image = image;
        o.at_estimate = lhm::render_depth(lhm::query_local(map->map, r.pose_est), r.pose_est, cam);
        o.at_ground_truth = lhm::render_depth(lhm::query_local(map->map, gt), gt, cam);
        overlays.push_back(std::move(o));
      }
    }
    lhm::TimingStats timing;
    timing.frames = frames.size();
    timing.reps = 1;
    for (const auto& f : frames) {
      timing.preprocess_ms += f.preprocess_ms / static_cast<double>(frames.size());
      timing.inference_ms += f.inference_ms / static_cast<double>(frames.size());
    }
    timing.total_ms = timing.preprocess_ms + timing.inference_ms;
    const std::uint64_t bytes =
        map_path ? std::filesystem::file_size(map_path) : lhm::encoded_size(map->map);
    const auto report = lhm::make_report(std::move(frames), timing, bytes);
    const std::filesystem::path dir(out_dir);
    lhm::emit_plots(report, overlays, dir);
    std::ofstream(dir / "report.json") << lhm::report_to_json(report) << '\n';
    if (summary && report.translation_m) {
      summary->frames = report.frames.size();
      summary->median_translation_m = report.translation_m->median;
      summary->mean_translation_m = report.translation_m->mean;
      summary->median_rotation_deg = report.rotation_deg->median;
      summary->failure_rate_pct = *report.failure_rate_pct;
      summary->iterations = iters;
      for (int i = 0; i < 3; ++i)
        summary->iteration_median_translation_m[i] =
            i < iters ? report.iteration_median_translation_m[static_cast<std::size_t>(i)] : 0.0;
    }
  });
}

lhm_status lhm_bench(const lhm_model* model, const lhm_map* map, const lhm_scene* scene, int noise_level,
                     uint64_t seed, int reps, lhm_timing* out) {
  return guarded([&] {
    require(model && map && scene && out, "null argument");
    std::mt19937_64 rng(seed);
    std::vector<lhm::BenchSample> samples;
    for (const auto& gt : scene->scene.trajectory) {
      samples.push_back({lhm::render_rgb(scene->scene, gt), lhm::compose(gt, lhm::sample_pose_noise(noise_level, rng))});
    }
    const auto t = lhm::benchmark_timing(model->checkpoint.net, map->map, samples, map->map.camera, reps);
    *out = lhm_timing{t.frames, t.reps, t.preprocess_ms, t.inference_ms, t.total_ms,
                      t.preprocess_var, t.inference_var, t.total_var};
  });
}

}  // extern "C"
