#include "bodyfit/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include <json.hpp>

#include "bodyfit/errors.hpp"

namespace bodyfit {

namespace fs = std::filesystem;
using nlohmann::json;

PoseParams a_pose(const BodyModel& model) {
  PoseParams theta = PoseParams::zeros(model.num_joints());
  theta.theta.row(0) = upright_root_rotation().transpose();
  const int left = model.joint_index("left_shoulder");
  const int right = model.joint_index("right_shoulder");
  if (left >= 0) theta.theta(left, 2) = -std::numbers::pi / 6.0;
  if (right >= 0) theta.theta(right, 2) = std::numbers::pi / 6.0;
  return theta;
}

std::vector<CameraParams> ring_cameras(const Mesh& posed, const RingOptions& ring) {
  if (ring.num_views < 1) throw ConfigError("need at least one view");
  if (ring.image_size < 8) throw ConfigError("image size must be at least 8");
  const Vec3 centroid = posed.vertices.colwise().mean().transpose();
  const double height = posed.vertices.col(1).maxCoeff() - posed.vertices.col(1).minCoeff();
  const double radius = ring.radius_factor * height;
  const double focal = ring.focal > 0.0 ? ring.focal : 0.75 * ring.image_size * ring.radius_factor;
  std::vector<CameraParams> cams;
  for (int v = 0; v < ring.num_views; ++v) {
    const double phi = 2.0 * std::numbers::pi * v / ring.num_views;
    CameraParams c;
    c.focal = focal;
    c.width = ring.image_size;
    c.height = ring.image_size;
    c.principal_point = Vec2(0.5 * ring.image_size, 0.5 * ring.image_size);
    const Mat3 R = Eigen::AngleAxisd(-phi, Vec3::UnitY()).toRotationMatrix();
    c.rotation = v == 0 ? Vec3::Zero() : rodrigues_inv(R);
    const Vec3 axis = R.transpose() * Vec3::UnitZ();
    const Vec3 center = centroid - radius * axis;
    c.translation = -(rodrigues(c.rotation) * center);
    cams.push_back(c);
  }
  return cams;
}

SyntheticScene render_scene(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                            const std::vector<CameraParams>& cameras) {
  SyntheticScene scene;
  scene.theta = theta;
  scene.beta = beta;
  scene.cameras = cameras;
  const Mesh mesh = skin(model, theta, beta, VertexOffsets::zeros(model.num_vertices()));
  const Points3 joints = model_joints_3d(model, theta, beta);
  for (const auto& cam : cameras) {
    std::vector<JointObservation> view;
    for (int k = 0; k < model.num_joints(); ++k) {
      const Vec2 p = project(cam, joints.row(k).transpose());
      view.push_back({model.joint_names[k], p.x(), p.y(), 1.0});
    }
    scene.joints.views.push_back(std::move(view));
    scene.masks.push_back(rasterize_silhouette(mesh, cam).mask);
  }
  return scene;
}

SyntheticScene make_scene(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                          const RingOptions& ring) {
  const Mesh mesh = skin(model, theta, beta, VertexOffsets::zeros(model.num_vertices()));
  return render_scene(model, theta, beta, ring_cameras(mesh, ring));
}

namespace {

std::string subject_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subject_%03d", i);
  return buf;
}

std::string join(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace

std::vector<std::string> synth_generate(const BodyModel& model, const SynthOptions& options,
                                        const std::string& out_dir) {
  if (options.num_subjects < 1) throw ConfigError("need at least one subject");
  fs::create_directories(out_dir);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::vector<std::string> artifacts{"model.json"};
  save_model_file(model, (fs::path(out_dir) / "model.json").string());
  std::vector<std::string> configs;
  const PoseParams theta = a_pose(model);

  for (int s = 0; s < options.num_subjects; ++s) {
    ShapeParams beta = ShapeParams::zeros(model.num_shape());
    for (int i = 0; i < model.num_shape(); ++i) beta.beta(i) = options.beta_range * unit(rng);
    const SyntheticScene scene = make_scene(model, theta, beta, options.ring);

    const std::string name = subject_name(s);
    const fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir);
    auto put = [&](const std::string& file, const std::string& contents) {
      write_file((dir / file).string(), contents);
      artifacts.push_back(name + "/" + file);
    };
    put("gt.json", format_params({theta, beta, 0.0, scene.cameras}));
    put("joints.json", format_joints(scene.joints));
    put("cameras.json", format_cameras(scene.cameras, false));
    put("cameras_gt.json", format_cameras(scene.cameras, true));

    RunConfig cfg;
    cfg.model_path = "../model.json";
    cfg.joints_path = "joints.json";
    cfg.cameras_path = "cameras.json";
    cfg.output_dir = "fit";
    cfg.frame = name;
    cfg.seed = options.seed;
    for (size_t v = 0; v < scene.masks.size(); ++v) {
      const std::string file = "mask_" + std::to_string(v) + ".pgm";
      put(file, save_mask(scene.masks[v]));
      cfg.mask_paths.push_back(file);
    }
    if (options.perturb_beta > 0.0) {
      std::vector<double> b0(static_cast<size_t>(model.num_shape()));
      for (int i = 0; i < model.num_shape(); ++i) {
        b0[i] = beta.beta(i) + (unit(rng) < 0.0 ? -options.perturb_beta : options.perturb_beta);
      }
      cfg.initial_beta = b0;
    }
    put("run.json", format_run_config(cfg));
    configs.push_back((dir / "run.json").string());
  }
  write_manifest(out_dir, artifacts);
  return configs;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

RunConfig load_run_config(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(path + ": expected a JSON object");
  const fs::path base = fs::path(path).parent_path();
  auto str = [&](const char* key, bool required) -> std::string {
    if (!doc.contains(key)) {
      if (required) throw ConfigError(path + ": missing '" + key + "'");
      return {};
    }
    if (!doc.at(key).is_string()) throw ConfigError(path + ": '" + key + "' must be a string");
    return join(base, doc.at(key).get<std::string>());
  };

  RunConfig c;
  try {
    c.model_path = str("model", true);
    c.joints_path = str("joints", true);
    c.cameras_path = str("cameras", true);
    c.schedule_path = str("schedule", false);
    c.mapping_path = str("mapping", false);
    c.output_dir = str("output", true);
    if (!doc.contains("masks") || !doc.at("masks").is_array()) {
      throw ConfigError(path + ": 'masks' must be an array of paths");
    }
    for (const auto& m : doc.at("masks")) c.mask_paths.push_back(join(base, m.get<std::string>()));
    c.frame = doc.value("frame", c.frame);
    c.seed = doc.value("seed", std::uint64_t{0});
    c.sigma_2d = doc.value("sigma_2d", c.sigma_2d);
    c.joint_l2_ratio = doc.value("joint_l2_ratio", c.joint_l2_ratio);
    c.optimize_offsets = doc.value("optimize_offsets", false);
    c.use_given_extrinsics = doc.value("use_given_extrinsics", false);
    const std::string kind = doc.value("dataset", std::string("synthetic"));
    if (kind == "synthetic") {
      c.dataset = DatasetKind::Synthetic;
    } else if (kind == "real") {
      c.dataset = DatasetKind::Real;
    } else {
      throw ConfigError(path + ": dataset must be 'synthetic' or 'real'");
    }
    if (doc.contains("initial_beta")) c.initial_beta = doc.at("initial_beta").get<std::vector<double>>();
    if (doc.contains("pairing")) {
      const json& p = doc.at("pairing");
      c.pairing.distance_threshold = p.value("distance_threshold", c.pairing.distance_threshold);
      c.pairing.normal_epsilon = p.value("normal_epsilon", c.pairing.normal_epsilon);
      c.pairing.max_pairs_per_vertex = p.value("max_pairs_per_vertex", c.pairing.max_pairs_per_vertex);
      c.pairing.max_pixel_distance = p.value("max_pixel_distance", c.pairing.max_pixel_distance);
      c.pairing.depth_tolerance = p.value("depth_tolerance", c.pairing.depth_tolerance);
      c.pairing.quantization_limit = p.value("quantization_limit", c.pairing.quantization_limit);
    }
    if (doc.contains("pose_prior")) {
      const json& p = doc.at("pose_prior");
      PosePriorSpec spec;
      spec.indices = p.value("indices", std::vector<int>{});
      spec.signs = p.value("signs", std::vector<double>{});
      spec.alpha = p.value("alpha", spec.alpha);
      c.pose_prior = spec;
    }
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  c.pairing.validate();

  std::vector<std::string> required{c.model_path, c.joints_path, c.cameras_path};
  required.insert(required.end(), c.mask_paths.begin(), c.mask_paths.end());
  if (!c.schedule_path.empty()) required.push_back(c.schedule_path);
  if (!c.mapping_path.empty()) required.push_back(c.mapping_path);
  for (const auto& f : required) {
    if (!fs::is_regular_file(f)) throw ConfigError("referenced file not found: " + f);
  }
  return c;
}

std::string format_run_config(const RunConfig& c) {
  json doc;
  doc["model"] = c.model_path;
  doc["joints"] = c.joints_path;
  doc["masks"] = c.mask_paths;
  doc["cameras"] = c.cameras_path;
  if (!c.schedule_path.empty()) doc["schedule"] = c.schedule_path;
  if (!c.mapping_path.empty()) doc["mapping"] = c.mapping_path;
  doc["output"] = c.output_dir;
  doc["frame"] = c.frame;
  doc["seed"] = c.seed;
  doc["dataset"] = c.dataset == DatasetKind::Synthetic ? "synthetic" : "real";
  doc["sigma_2d"] = c.sigma_2d;
  doc["joint_l2_ratio"] = c.joint_l2_ratio;
  doc["optimize_offsets"] = c.optimize_offsets;
  doc["use_given_extrinsics"] = c.use_given_extrinsics;
  doc["pairing"] = {{"distance_threshold", c.pairing.distance_threshold},
                    {"normal_epsilon", c.pairing.normal_epsilon},
                    {"max_pairs_per_vertex", c.pairing.max_pairs_per_vertex},
                    {"max_pixel_distance", c.pairing.max_pixel_distance},
                    {"depth_tolerance", c.pairing.depth_tolerance},
                    {"quantization_limit", c.pairing.quantization_limit}};
  if (c.initial_beta) doc["initial_beta"] = *c.initial_beta;
  if (c.pose_prior) {
    doc["pose_prior"] = {{"indices", c.pose_prior->indices},
                         {"signs", c.pose_prior->signs},
                         {"alpha", c.pose_prior->alpha}};
  }
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

void EvalReport::add(EvalEntry entry) {
  double sum = 0.0;
  for (double v : entry.per_view) sum += v;
  entry.mean = entry.per_view.empty() ? 0.0 : sum / static_cast<double>(entry.per_view.size());
  entries.push_back(std::move(entry));
  recompute_means();
}

void EvalReport::recompute_means() {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& e : entries) {
    acc[e.stage].first += e.mean;
    acc[e.stage].second += 1;
  }
  sequence_mean.clear();
  for (const auto& [stage, a] : acc) sequence_mean[stage] = a.first / a.second;
}

double EvalReport::mean(const std::string& stage) const {
  auto it = sequence_mean.find(stage);
  if (it == sequence_mean.end()) throw ConfigError("report has no stage '" + stage + "'");
  return it->second;
}

std::string format_report(const EvalReport& report) {
  json doc;
  doc["entries"] = json::array();
  for (const auto& e : report.entries) {
    doc["entries"].push_back(
        {{"frame", e.frame}, {"stage", e.stage}, {"per_view", e.per_view}, {"mean", e.mean}});
  }
  doc["sequence_mean"] = report.sequence_mean;
  return doc.dump(2) + "\n";
}

EvalReport parse_report(std::string_view text) {
  EvalReport r;
  try {
    const json doc = json::parse(text);
    for (const auto& e : doc.at("entries")) {
      r.entries.push_back({e.at("frame").get<std::string>(), e.at("stage").get<std::string>(),
                           e.at("per_view").get<std::vector<double>>(), e.at("mean").get<double>()});
    }
    r.sequence_mean = doc.at("sequence_mean").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  return r;
}

EvalReport eval_iou(const Mesh& mesh, const std::vector<CameraParams>& cameras,
                    const std::vector<SilhouetteMask>& masks, const std::string& frame,
                    const std::string& stage) {
  EvalReport r;
  r.add({frame, stage, view_ious(mesh, cameras, masks), 0.0});
  return r;
}

// ---------------------------------------------------------------------------
// run_fit
// ---------------------------------------------------------------------------

namespace {

template <class F>
auto in_stage(const char* name, F&& f) -> decltype(f()) {
  const std::string prefix = std::string("stage ") + name + ": ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const ParseError& e) {
    throw ParseError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const InvariantError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const Error& e) {
    throw FitError(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw IoError(prefix + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

RunResult run_fit(const RunConfig& config) {
  struct Inputs {
    BodyModel model;
    JointObservations joints;
    std::vector<SilhouetteMask> masks;
    std::vector<CameraParams> cameras;
    bool has_extrinsics = false;
    ScheduleSet schedule;
    JointMapping mapping;
  };
  Inputs in = in_stage("load", [&] {
    Inputs i;
    i.model = load_model_file(config.model_path);
    i.joints = parse_joints(read_file(config.joints_path));
    for (const auto& m : config.mask_paths) i.masks.push_back(load_mask_file(m));
    i.cameras = parse_cameras(read_file(config.cameras_path), &i.has_extrinsics);
    i.schedule = config.schedule_path.empty()
                     ? ScheduleSet{default_pose_schedule(), default_shape_schedule(config.dataset)}
                     : parse_schedule(read_file(config.schedule_path), config.dataset);
    i.mapping = config.mapping_path.empty() ? JointMapping::identity(i.model)
                                            : parse_mapping(read_file(config.mapping_path));
    i.mapping.validate(i.model);
    const size_t n = i.cameras.size();
    if (i.joints.views.size() != n || i.masks.size() != n) {
      throw ConfigError("view counts differ: " + std::to_string(n) + " cameras, " +
                        std::to_string(i.joints.views.size()) + " joint views, " +
                        std::to_string(i.masks.size()) + " masks");
    }
    for (size_t v = 0; v < n; ++v) {
      if (i.masks[v].width != i.cameras[v].width || i.masks[v].height != i.cameras[v].height) {
        throw ConfigError("mask " + config.mask_paths[v] + " does not match camera " + std::to_string(v));
      }
    }
    if (config.initial_beta && static_cast<int>(config.initial_beta->size()) != i.model.num_shape()) {
      throw ConfigError("initial_beta has the wrong length");
    }
    return i;
  });

  RunResult result;
  const std::vector<CameraParams> cameras0 = in_stage("init_cameras", [&] {
    if (config.use_given_extrinsics) {
      if (!in.has_extrinsics) throw ConfigError("use_given_extrinsics set but cameras have no extrinsics");
      return in.cameras;
    }
    std::vector<CameraParams> out;
    for (size_t v = 0; v < in.cameras.size(); ++v) {
      const CameraParams& c = in.cameras[v];
      JointObservations single;
      single.views.push_back(in.joints.views[v]);
      CameraInitOptions opts;
      opts.principal_point = c.principal_point;
      if (config.initial_beta) {
        opts.beta = ShapeParams{Eigen::Map<const Eigen::VectorXd>(config.initial_beta->data(),
                                                                 in.model.num_shape())};
      }
      try {
        out.push_back(init_cameras(in.model, single, in.mapping, c.focal, c.width, c.height, opts).front());
      } catch (const ConfigError& e) {
        throw ConfigError("view " + std::to_string(v) + ": " + e.what());
      }
    }
    return out;
  });

  const auto t_pose = std::chrono::steady_clock::now();
  result.pose = in_stage("fit_pose", [&] {
    PoseFitOptions opts;
    opts.joint_l2_ratio = config.joint_l2_ratio;
    if (config.initial_beta) {
      opts.initial_beta = ShapeParams{
          Eigen::Map<const Eigen::VectorXd>(config.initial_beta->data(), in.model.num_shape())};
    }
    const PosePriorSpec prior = config.pose_prior.value_or(PosePriorSpec::for_model(in.model));
    return fit_pose(in.model, in.joints, in.mapping, cameras0, in.schedule.pose, prior, opts);
  });
  result.pose_seconds = seconds_since(t_pose);

  const Mesh pose_mesh =
      skin(in.model, result.pose.theta, result.pose.beta, VertexOffsets::zeros(in.model.num_vertices()));

  const auto t_shape = std::chrono::steady_clock::now();
  result.shape = in_stage("fit_shape", [&] {
    ShapeFitOptions opts;
    opts.optimize_offsets = config.optimize_offsets;
    opts.sigma_2d = config.sigma_2d;
    return fit_shape(in.model, result.pose.theta, result.pose.cameras, in.masks, result.pose.beta,
                     in.schedule.shape, config.pairing, opts);
  });
  result.shape_seconds = seconds_since(t_shape);

  const Mesh final_mesh = skin(in.model, result.pose.theta, result.shape.beta, result.shape.d);
  result.report.add({config.frame, "pose_only", result.shape.iou_before, 0.0});
  result.report.add({config.frame, "after_shape", result.shape.iou_after, 0.0});

  in_stage("write", [&] {
    fs::create_directories(config.output_dir);
    const fs::path out(config.output_dir);
    auto put = [&](const std::string& file, const std::string& contents) {
      write_file((out / file).string(), contents);
      result.artifacts.push_back(file);
    };
    put("pose_only.obj", format_obj(pose_mesh.vertices, pose_mesh.faces));
    put("final.obj", format_obj(final_mesh.vertices, final_mesh.faces));
    put("pose_params.json", format_params({result.pose.theta, result.pose.beta, 0.0, result.pose.cameras}));
    put("params.json", format_params({result.pose.theta, result.shape.beta, result.shape.d.d.norm(),
                                      result.pose.cameras}));
    put("trace_pose.json", format_trace(result.pose.trace));
    put("trace_shape.json", format_trace(result.shape.trace));
    put("report.json", format_report(result.report));
    write_manifest(config.output_dir, result.artifacts);
    return 0;
  });
  return result;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& relative_paths) {
  json doc;
  doc["artifacts"] = json::array();
  for (const auto& p : relative_paths) {
    const std::string bytes = read_file((fs::path(dir) / p).string());
    doc["artifacts"].push_back({{"path", p}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }
  write_file((fs::path(dir) / "manifest.json").string(), doc.dump(2) + "\n");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const InvariantError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 4;
  return 3;
}

}  // namespace bodyfit
