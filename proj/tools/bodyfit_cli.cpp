#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "bodyfit/body_model.hpp"
#include "bodyfit/errors.hpp"
#include "bodyfit/io.hpp"
#include "bodyfit/pipeline.hpp"
#include "bodyfit/silhouette.hpp"

namespace fs = std::filesystem;
using namespace bodyfit;

namespace {

struct Options {
  std::vector<std::string> configs;
  std::string out;
  std::string model;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool optimize_offsets = false;

  // synth
  int subjects = 10;
  int views = 4;
  int vertices = 2500;
  int joints = 24;
  int shape = 10;
  int image_size = 512;
  double radius_factor = 3.0;
  double perturb_beta = 0.0;

  // eval / render-mask
  std::string params;
  std::string stage = "after_shape";
};

BodyModel model_for_synth(const Options& o) {
  if (!o.model.empty()) return load_model_file(o.model);
  return make_toy_model(o.seed, o.vertices, o.joints, o.shape);
}

int cmd_synth(const Options& o) {
  if (o.out.empty()) throw ConfigError("synth needs --out DIR");
  SynthOptions s;
  s.num_subjects = o.subjects;
  s.ring.num_views = o.views;
  s.ring.image_size = o.image_size;
  s.ring.radius_factor = o.radius_factor;
  s.perturb_beta = o.perturb_beta;
  s.seed = o.seed;
  const auto configs = synth_generate(model_for_synth(o), s, o.out);
  for (const auto& c : configs) std::cout << c << "\n";
  return 0;
}

int cmd_fit(const Options& o) {
  if (o.configs.empty()) throw ConfigError("fit needs --config PATH");
  std::vector<RunConfig> configs;
  for (const auto& path : o.configs) {
    RunConfig c = load_run_config(path);
    if (o.optimize_offsets) c.optimize_offsets = true;
    if (!o.out.empty()) {
      c.output_dir = o.configs.size() == 1 ? o.out : (fs::path(o.out) / c.frame).string();
    }
    c.seed = o.seed ? o.seed : c.seed;
    configs.push_back(c);
  }

  std::vector<int> codes(configs.size(), 0);
  std::vector<std::string> lines(configs.size());
  std::atomic<size_t> next{0};
  std::mutex print;
  auto worker = [&] {
    for (size_t i = next++; i < configs.size(); i = next++) {
      try {
        const RunResult r = run_fit(configs[i]);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s: pose-only IoU %.4f, after shape %.4f (pose %.1fs, shape %.1fs)",
                      configs[i].frame.c_str(), r.report.mean("pose_only"), r.report.mean("after_shape"),
                      r.pose_seconds, r.shape_seconds);
        lines[i] = buf;
      } catch (const std::exception& e) {
        codes[i] = exit_code_for(e);
        lines[i] = configs[i].frame + ": error: " + e.what();
      }
      std::lock_guard<std::mutex> lock(print);
      std::cout << lines[i] << std::endl;
    }
  };
  const int n = std::max(1, std::min<int>(o.jobs, static_cast<int>(configs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (int c : codes) {
    if (c != 0) return c;
  }
  return 0;
}

struct Frame {
  RunConfig config;
  FittedParams params;
  BodyModel model;
  std::vector<SilhouetteMask> masks;
};

Frame load_frame(const std::string& config_path, const std::string& params_override,
                 const std::string& stage) {
  Frame f;
  f.config = load_run_config(config_path);
  const std::string file = stage == "pose_only" ? "pose_params.json" : "params.json";
  const std::string params =
      params_override.empty() ? (fs::path(f.config.output_dir) / file).string() : params_override;
  f.params = parse_params(read_file(params));
  f.model = load_model_file(f.config.model_path);
  for (const auto& m : f.config.mask_paths) f.masks.push_back(load_mask_file(m));
  if (f.params.cameras.size() != f.masks.size()) {
    throw ConfigError(params + ": camera count does not match the masks");
  }
  return f;
}

int cmd_eval(const Options& o) {
  if (o.configs.empty()) throw ConfigError("eval needs --config PATH");
  if (o.stage != "pose_only" && o.stage != "after_shape") {
    throw ConfigError("--stage must be pose_only or after_shape");
  }
  EvalReport report;
  for (const auto& path : o.configs) {
    const Frame f = load_frame(path, o.configs.size() == 1 ? o.params : "", o.stage);
    const Mesh mesh = skin(f.model, f.params.theta, f.params.beta, VertexOffsets::zeros(f.model.num_vertices()));
    for (auto& e : eval_iou(mesh, f.params.cameras, f.masks, f.config.frame, o.stage).entries) {
      report.add(e);
    }
  }
  const std::string text = format_report(report);
  if (!o.out.empty()) {
    write_file(o.out, text);
  } else {
    std::cout << text;
  }
  std::printf("sequence mean IoU (%s): %.6f\n", o.stage.c_str(), report.mean(o.stage));
  return 0;
}

int cmd_render(const Options& o) {
  if (o.configs.size() != 1) throw ConfigError("render-mask needs exactly one --config PATH");
  if (o.out.empty()) throw ConfigError("render-mask needs --out DIR");
  const Frame f = load_frame(o.configs.front(), o.params, o.stage);
  const Mesh mesh = skin(f.model, f.params.theta, f.params.beta, VertexOffsets::zeros(f.model.num_vertices()));
  fs::create_directories(o.out);
  for (size_t v = 0; v < f.params.cameras.size(); ++v) {
    const auto r = rasterize_silhouette(mesh, f.params.cameras[v]);
    const std::string path = (fs::path(o.out) / ("render_" + std::to_string(v) + ".pgm")).string();
    save_mask_file(r.mask, path);
    std::printf("%s  IoU %.6f\n", path.c_str(), iou(r.mask, f.masks[v]));
  }
  return 0;
}

int cmd_check_model(const Options& o) {
  const BodyModel model = o.model.empty() ? make_toy_model(o.seed, o.vertices, o.joints, o.shape)
                                          : load_model_file(o.model);
  const auto issues = audit_model(model);
  std::printf("V=%d K=%d S=%d pose_dirs=%s\n", model.num_vertices(), model.num_joints(),
              model.num_shape(), model.has_pose_dirs() ? "yes" : "no");
  for (const auto& i : issues) std::printf("violation: %s\n", i.c_str());
  if (!issues.empty()) return 2;
  std::printf("ok\n");
  if (!o.out.empty()) save_model_file(model, o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view body pose and shape fitting"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-view dataset");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--seed", o.seed, "Random seed");
  synth->add_option("--model", o.model, "Model JSON (default: seeded toy model)");
  synth->add_option("--subjects", o.subjects, "Number of subjects");
  synth->add_option("--views", o.views, "Cameras per subject");
  synth->add_option("--vertices", o.vertices, "Toy model vertex count");
  synth->add_option("--joints", o.joints, "Toy model joint count");
  synth->add_option("--shape", o.shape, "Toy model shape coefficients");
  synth->add_option("--image-size", o.image_size, "Square image size in pixels");
  synth->add_option("--radius-factor", o.radius_factor, "Camera ring radius / model height");
  synth->add_option("--perturb-beta", o.perturb_beta, "Start shape at beta* +/- this value");

  auto* fit = app.add_subcommand("fit", "Fit pose and shape for one or more run configs");
  fit->add_option("--config", o.configs, "Run config JSON")->required();
  fit->add_option("--seed", o.seed, "Seed recorded with the run");
  fit->add_option("--jobs", o.jobs, "Simultaneous fits")->check(CLI::PositiveNumber);
  fit->add_flag("--optimize-offsets", o.optimize_offsets, "Also optimise per-vertex offsets");
  fit->add_option("--out", o.out, "Override the output directory");

  auto* eval = app.add_subcommand("eval", "Score fitted parameters against the masks");
  eval->add_option("--config", o.configs, "Run config JSON")->required();
  eval->add_option("--params", o.params, "Parameter JSON (default: the run's output)");
  eval->add_option("--stage", o.stage, "pose_only or after_shape");
  eval->add_option("--out", o.out, "Write the report here instead of stdout");

  auto* render = app.add_subcommand("render-mask", "Rasterize fitted parameters into PGM masks");
  render->add_option("--config", o.configs, "Run config JSON")->required();
  render->add_option("--params", o.params, "Parameter JSON (default: the run's output)");
  render->add_option("--stage", o.stage, "pose_only or after_shape");
  render->add_option("--out", o.out, "Output directory")->required();

  auto* check = app.add_subcommand("check-model", "Audit model invariants");
  check->add_option("--model", o.model, "Model JSON (default: seeded toy model)");
  check->add_option("--seed", o.seed, "Toy model seed");
  check->add_option("--vertices", o.vertices, "Toy model vertex count");
  check->add_option("--joints", o.joints, "Toy model joint count");
  check->add_option("--shape", o.shape, "Toy model shape coefficients");
  check->add_option("--out", o.out, "Write the model JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (fit->parsed()) return cmd_fit(o);
    if (eval->parsed()) return cmd_eval(o);
    if (render->parsed()) return cmd_render(o);
    if (check->parsed()) return cmd_check_model(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
