#include "lhmaploc/lhmaploc.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

struct Failure {
  lhm_status status;
  std::string message;
};

void check(lhm_status s) {
  if (s != LHM_OK) throw Failure{s, std::string(lhm_status_name(s)) + ": " + lhm_last_error()};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Scene = std::unique_ptr<lhm_scene, Deleter<lhm_scene, lhm_scene_free>>;
using Map = std::unique_ptr<lhm_map, Deleter<lhm_map, lhm_map_free>>;
using Model = std::unique_ptr<lhm_model, Deleter<lhm_model, lhm_model_free>>;

Scene load_scene(const std::string& path) {
  lhm_scene* s = nullptr;
  check(lhm_scene_load(path.c_str(), &s));
  return Scene(s);
}

Map load_map(const std::string& path) {
  lhm_map* m = nullptr;
  check(lhm_map_load(path.c_str(), &m));
  return Map(m);
}

std::vector<Model> load_models(const std::vector<std::string>& paths) {
  std::vector<Model> out;
  for (const auto& p : paths) {
    lhm_model* m = nullptr;
    check(lhm_model_load(p.c_str(), &m));
    out.emplace_back(m);
  }
  return out;
}

std::vector<const lhm_model*> raw(const std::vector<Model>& models) {
  std::vector<const lhm_model*> out;
  for (const auto& m : models) out.push_back(m.get());
  return out;
}

json pose_json(const lhm_pose& p) {
  return {{"q", {p.q[0], p.q[1], p.q[2], p.q[3]}}, {"t", {p.t[0], p.t[1], p.t[2]}}};
}

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw Failure{LHM_IO, "cannot write " + out};
  f << j.dump(2) << '\n';
}

int print_epoch(int epoch, double loss, uint64_t samples, uint64_t skipped, void*) {
  std::fprintf(stderr, "epoch %3d  loss %.5f  samples %llu  skipped %llu\n", epoch, loss,
               static_cast<unsigned long long>(samples), static_cast<unsigned long long>(skipped));
  return 1;
}

/// Training options shared by build-map and train-online: defaults, then the
/// config file, then explicit flags.
struct TrainFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<uint32_t> topn;
  std::optional<int> noise_level;

  void add(CLI::App* app, bool with_topn) {
    app->add_option("--config", config, "key=value training configuration")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "random seed");
    if (with_topn) app->add_option("--topn", topn, "points kept per keyframe");
    app->add_option("--noise-level", noise_level, "initial-pose noise level")->check(CLI::Range(1, 3));
  }

  lhm_train_config resolve(bool online) const {
    lhm_train_config cfg;
    lhm_train_config_default(online ? 1 : 0, &cfg);
    if (!config.empty()) check(lhm_train_config_load(config.c_str(), &cfg));
    if (seed) cfg.seed = *seed;
    if (topn) cfg.topn = *topn;
    if (noise_level) cfg.noise_level = *noise_level;
    return cfg;
  }
};

json config_json(const lhm_train_config& c) {
  return {{"epochs", c.epochs}, {"batch", c.batch},   {"lr", c.lr},     {"lambda", c.lambda},
          {"alpha", c.alpha},   {"beta", c.beta},     {"topn", c.topn}, {"noise_level", c.noise_level},
          {"seed", c.seed},     {"draws", c.draws}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR heat-map camera localization"};
  app.set_version_flag("--version", std::string(lhm_version()));
  app.require_subcommand(1);

  // synth-gen
  auto* gen = app.add_subcommand("synth-gen", "generate a synthetic scene");
  uint64_t gen_seed = 0, gen_points = 150000;
  int gen_frames = 50;
  double gen_extent = 70.0;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "scene seed");
  gen->add_option("--points", gen_points, "number of map points");
  gen->add_option("--frames", gen_frames, "trajectory length");
  gen->add_option("--extent", gen_extent, "scene extent in metres");
  gen->add_option("--out", gen_out, "scene file")->required();

  // build-map
  auto* build = app.add_subcommand("build-map", "train the heat-map network and export an LHMap");
  TrainFlags build_flags;
  std::string build_scene, build_out, build_ckpt;
  build_flags.add(build, true);
  build->add_option("--scene", build_scene, "synthetic scene file")->required()->check(CLI::ExistingFile);
  build->add_option("--out", build_out, "output LHMap file")->required();
  build->add_option("--ckpt", build_ckpt, "also save the offline network here");

  // train-online
  auto* online = app.add_subcommand("train-online", "train a pose-regression model for one noise level");
  TrainFlags online_flags;
  std::string online_scene, online_map, online_init, online_out;
  online_flags.add(online, false);
  online->add_option("--scene", online_scene, "synthetic scene file")->required()->check(CLI::ExistingFile);
  online->add_option("--map", online_map, "LHMap file")->required()->check(CLI::ExistingFile);
  online->add_option("--ckpt", online_init, "initial weights")->check(CLI::ExistingFile);
  online->add_option("--out", online_out, "output checkpoint")->required();

  // localize
  auto* loc = app.add_subcommand("localize", "localize scene frames from perturbed initial poses");
  std::string loc_scene, loc_map, loc_out;
  std::vector<std::string> loc_ckpt;
  int loc_iters = 1, loc_frame = -1, loc_level = 1;
  uint64_t loc_seed = 0;
  loc->add_option("--scene", loc_scene, "synthetic scene file")->required()->check(CLI::ExistingFile);
  loc->add_option("--map", loc_map, "LHMap file")->required()->check(CLI::ExistingFile);
  loc->add_option("--ckpt", loc_ckpt, "checkpoint per iteration, in order")->required()->delimiter(',');
  loc->add_option("--iters", loc_iters, "refinement iterations")->check(CLI::IsMember({1, 2, 3}));
  loc->add_option("--frame", loc_frame, "single frame (default: every frame)");
  loc->add_option("--noise-level", loc_level, "initial-pose noise level")->check(CLI::Range(1, 3));
  loc->add_option("--seed", loc_seed, "noise seed");
  loc->add_option("--out", loc_out, "JSON output file (default: stdout)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate on every scene frame; write report.json and plots");
  std::string ev_scene, ev_map, ev_out;
  std::vector<std::string> ev_ckpt;
  int ev_iters = 1, ev_level = 1;
  uint64_t ev_seed = 0;
  ev->add_option("--scene", ev_scene, "synthetic scene file")->required()->check(CLI::ExistingFile);
  ev->add_option("--map", ev_map, "LHMap file")->required()->check(CLI::ExistingFile);
  ev->add_option("--ckpt", ev_ckpt, "checkpoint per iteration, in order")->required()->delimiter(',');
  ev->add_option("--iters", ev_iters, "refinement iterations")->check(CLI::IsMember({1, 2, 3}));
  ev->add_option("--noise-level", ev_level, "initial-pose noise level")->check(CLI::Range(1, 3));
  ev->add_option("--seed", ev_seed, "noise seed");
  ev->add_option("--out", ev_out, "output directory")->required();

  // map-stat
  auto* stat = app.add_subcommand("map-stat", "print LHMap statistics");
  std::string stat_map;
  stat->add_option("--map", stat_map, "LHMap file")->required()->check(CLI::ExistingFile);

  // bench
  auto* bench = app.add_subcommand("bench", "time pre-processing and inference at batch size 1");
  std::string bench_scene, bench_map, bench_ckpt, bench_out;
  int bench_reps = 10, bench_level = 1;
  uint64_t bench_seed = 0;
  bench->add_option("--scene", bench_scene, "synthetic scene file")->required()->check(CLI::ExistingFile);
  bench->add_option("--map", bench_map, "LHMap file")->required()->check(CLI::ExistingFile);
  bench->add_option("--ckpt", bench_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--reps", bench_reps, "repetitions per frame")->check(CLI::PositiveNumber);
  bench->add_option("--noise-level", bench_level, "initial-pose noise level")->check(CLI::Range(1, 3));
  bench->add_option("--seed", bench_seed, "noise seed");
  bench->add_option("--out", bench_out, "JSON output file (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      lhm_scene* s = nullptr;
      check(lhm_scene_generate(gen_seed, gen_points, gen_extent, gen_frames, &s));
      Scene scene(s);
      check(lhm_scene_save(scene.get(), gen_out.c_str()));
      uint64_t points = 0;
      int frames = 0, w = 0, h = 0;
      check(lhm_scene_info(scene.get(), &points, &frames, &w, &h));
      emit({{"scene", gen_out}, {"seed", gen_seed}, {"points", points}, {"frames", frames}, {"width", w},
            {"height", h}},
           "");
    } else if (*build) {
      const auto cfg = build_flags.resolve(false);
      const auto scene = load_scene(build_scene);
      lhm_map* m = nullptr;
      lhm_model* k = nullptr;
      check(lhm_build_map(scene.get(), &cfg, print_epoch, nullptr, &m, build_ckpt.empty() ? nullptr : &k));
      Map map(m);
      Model model(k);
      check(lhm_map_save(map.get(), build_out.c_str()));
      if (model) check(lhm_model_save(model.get(), build_ckpt.c_str()));
      lhm_map_stat st;
      check(lhm_map_stat_file(build_out.c_str(), &st));
      emit({{"map", build_out}, {"records", st.records}, {"points", st.points}, {"bytes", st.file_bytes},
            {"config", config_json(cfg)}},
           "");
    } else if (*online) {
      const auto cfg = online_flags.resolve(true);
      const auto scene = load_scene(online_scene);
      const auto map = load_map(online_map);
      const auto init = online_init.empty() ? std::vector<Model>{} : load_models({online_init});
      lhm_model* k = nullptr;
      check(lhm_train_online(scene.get(), map.get(), &cfg, init.empty() ? nullptr : init.front().get(), print_epoch,
                             nullptr, &k));
      Model model(k);
      check(lhm_model_save(model.get(), online_out.c_str()));
      emit({{"checkpoint", online_out}, {"config", config_json(cfg)}}, "");
    } else if (*loc) {
      const auto scene = load_scene(loc_scene);
      const auto map = load_map(loc_map);
      const auto models = load_models(loc_ckpt);
      const auto ptrs = raw(models);
      uint64_t points = 0;
      int frames = 0, w = 0, h = 0;
      check(lhm_scene_info(scene.get(), &points, &frames, &w, &h));
      if (loc_frame >= frames) throw Failure{LHM_INVALID_ARGUMENT, "frame out of range"};
      json results = json::array();
      std::vector<float> rgb(static_cast<std::size_t>(w) * h * 3);
      for (int f = loc_frame < 0 ? 0 : loc_frame; f < (loc_frame < 0 ? frames : loc_frame + 1); ++f) {
        lhm_pose gt, init, est, trace[3];
        check(lhm_scene_pose(scene.get(), f, &gt));
        check(lhm_perturb_pose(&gt, loc_level, loc_seed + static_cast<uint64_t>(f), &init));
        check(lhm_scene_render(scene.get(), f, rgb.data(), rgb.size()));
        double pre = 0, inf = 0;
        check(lhm_localize(ptrs.data(), static_cast<int>(ptrs.size()), loc_iters, map.get(), rgb.data(), w, h, &init,
                           &est, trace, &pre, &inf));
        json steps = json::array();
        for (int i = 0; i < loc_iters; ++i) {
          double te = 0, re = 0;
          check(lhm_pose_error(&trace[i], &gt, &te, &re));
          steps.push_back({{"pose", pose_json(trace[i])}, {"translation_m", te}, {"rotation_deg", re}});
        }
        double te = 0, re = 0;
        check(lhm_pose_error(&est, &gt, &te, &re));
        results.push_back({{"frame", f},
                           {"init", pose_json(init)},
                           {"estimate", pose_json(est)},
                           {"translation_m", te},
                           {"rotation_deg", re},
                           {"trace", steps},
                           {"preprocess_ms", pre},
                           {"inference_ms", inf}});
      }
      emit(results, loc_out);
    } else if (*ev) {
      const auto scene = load_scene(ev_scene);
      const auto map = load_map(ev_map);
      const auto models = load_models(ev_ckpt);
      const auto ptrs = raw(models);
      lhm_eval_summary s{};
      check(lhm_evaluate(ptrs.data(), static_cast<int>(ptrs.size()), ev_iters, map.get(), ev_map.c_str(),
                         scene.get(), ev_level, ev_seed, ev_out.c_str(), &s));
      std::vector<double> per_iter(s.iteration_median_translation_m, s.iteration_median_translation_m + s.iterations);
      emit({{"report", ev_out + "/report.json"},
            {"frames", s.frames},
            {"median_translation_m", s.median_translation_m},
            {"median_rotation_deg", s.median_rotation_deg},
            {"failure_rate_pct", s.failure_rate_pct},
            {"iteration_median_translation_m", per_iter}},
           "");
    } else if (*stat) {
      lhm_map_stat st;
      check(lhm_map_stat_file(stat_map.c_str(), &st));
      emit({{"map", stat_map},
            {"bytes", st.file_bytes},
            {"records", st.records},
            {"points", st.points},
            {"point_budget", st.point_budget},
            {"width", st.width},
            {"height", st.height}},
           "");
    } else if (*bench) {
      const auto scene = load_scene(bench_scene);
      const auto map = load_map(bench_map);
      const auto models = load_models({bench_ckpt});
      lhm_timing t;
      check(lhm_bench(models.front().get(), map.get(), scene.get(), bench_level, bench_seed, bench_reps, &t));
      emit({{"frames", t.frames},
            {"reps", t.reps},
            {"preprocess_ms", t.preprocess_ms},
            {"inference_ms", t.inference_ms},
            {"total_ms", t.total_ms},
            {"preprocess_var", t.preprocess_var},
            {"inference_var", t.inference_var},
            {"total_var", t.total_var}},
           bench_out);
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "lhmaploc: %s\n", f.message.c_str());
    return static_cast<int>(f.status);
  }
  return 0;
}
