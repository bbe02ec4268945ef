#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"
#include "bodyfit/correspondence.hpp"
#include "bodyfit/io.hpp"
#include "bodyfit/pose_fit.hpp"
#include "bodyfit/shape_fit.hpp"
#include "bodyfit/silhouette.hpp"

namespace bodyfit {

/// Upright root, arms lowered 30 degrees from the T-pose (60 degrees from
/// vertical), everything else zero.
PoseParams a_pose(const BodyModel& model);

struct RingOptions {
  int num_views = 4;
  double radius_factor = 3.0;  // ring radius / model height
  int image_size = 512;
  double focal = 0.0;          // 0: 0.75 * image_size * radius_factor
};

struct SyntheticScene {
  PoseParams theta;
  ShapeParams beta;
  std::vector<CameraParams> cameras;
  JointObservations joints;
  std::vector<SilhouetteMask> masks;
};

/// Cameras on a horizontal ring around the posed mesh centroid, looking at
/// it; view 0 has identity rotation.
std::vector<CameraParams> ring_cameras(const Mesh& posed, const RingOptions& ring);

/// Renders masks and projects every model joint (confidence 1) for a known
/// parameter set.
SyntheticScene render_scene(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                            const std::vector<CameraParams>& cameras);
SyntheticScene make_scene(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                          const RingOptions& ring);

struct SynthOptions {
  int num_subjects = 10;
  RingOptions ring;
  double beta_range = 2.0;
  /// When positive, each run config starts shape from beta* with every
  /// coefficient moved by +/- this amount (random sign).
  double perturb_beta = 0.0;
  std::uint64_t seed = 0;
};

/// Writes <out>/model.json, <out>/subject_NNN/{gt.json, joints.json,
/// cameras.json, cameras_gt.json, mask_V.pgm, run.json} and a manifest.
/// Returns the run config paths.
std::vector<std::string> synth_generate(const BodyModel& model, const SynthOptions& options,
                                        const std::string& out_dir);

struct RunConfig {
  std::string model_path;
  std::string joints_path;
  std::vector<std::string> mask_paths;
  std::string cameras_path;
  std::string schedule_path;  // optional
  std::string mapping_path;   // optional
  std::string output_dir;
  std::string frame = "frame";
  PairingConfig pairing;
  std::optional<PosePriorSpec> pose_prior;
  std::optional<std::vector<double>> initial_beta;
  DatasetKind dataset = DatasetKind::Synthetic;
  double sigma_2d = 10.0;
  double joint_l2_ratio = 1.0;
  bool optimize_offsets = false;
  bool use_given_extrinsics = false;
  std::uint64_t seed = 0;
};

/// Relative paths resolve against the config file's directory. Checks that
/// every referenced file exists.
RunConfig load_run_config(const std::string& path);
std::string format_run_config(const RunConfig& config);

struct EvalEntry {
  std::string frame;
  std::string stage;  // "pose_only" or "after_shape"
  std::vector<double> per_view;
  double mean = 0.0;
};

struct EvalReport {
  std::vector<EvalEntry> entries;
  std::map<std::string, double> sequence_mean;  // per stage

  void add(EvalEntry entry);
  void recompute_means();
  double mean(const std::string& stage) const;
};

std::string format_report(const EvalReport& report);
EvalReport parse_report(std::string_view text);

/// Renders the mesh in every view and scores it against the masks.
EvalReport eval_iou(const Mesh& mesh, const std::vector<CameraParams>& cameras,
                    const std::vector<SilhouetteMask>& masks, const std::string& frame = "frame",
                    const std::string& stage = "after_shape");

struct RunResult {
  PoseFitResult pose;
  ShapeFitResult shape;
  EvalReport report;
  double pose_seconds = 0.0;
  double shape_seconds = 0.0;
  std::vector<std::string> artifacts;
};

/// init_cameras -> fit_pose -> fit_shape, writing meshes, parameters, traces,
/// report and manifest into config.output_dir. Stage failures are rethrown
/// with the stage name prefixed.
RunResult run_fit(const RunConfig& config);

/// Writes manifest.json listing the given files (relative to dir) with
/// SHA-256 hashes.
void write_manifest(const std::string& dir, const std::vector<std::string>& relative_paths);

/// 0 ok, 2 config/parse, 3 fit/numeric, 4 I/O.
int exit_code_for(const std::exception& e);

}  // namespace bodyfit
