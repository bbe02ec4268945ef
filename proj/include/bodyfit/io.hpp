#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"
#include "bodyfit/pose_fit.hpp"
#include "bodyfit/robust_optim.hpp"

namespace bodyfit {

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

/// Array of {focal, principal_point, width, height[, rotation, translation]}.
/// Missing extrinsics read as identity rotation and zero translation.
std::vector<CameraParams> parse_cameras(std::string_view text, bool* has_extrinsics = nullptr);
std::string format_cameras(const std::vector<CameraParams>& cameras, bool with_extrinsics = true);

/// Array (one entry per view) of arrays of {joint_name, u, v, confidence}.
JointObservations parse_joints(std::string_view text);
std::string format_joints(const JointObservations& obs);

/// {observation_name: model_joint_index}.
JointMapping parse_mapping(std::string_view text);

struct ScheduleSet {
  StageSchedule pose;
  StageSchedule shape;
};

/// {"pose_stages": [{w_theta, w_beta, sigma, max_iters, rel_tol}],
///  "shape_stages": [{w_L, w_B, sigma, max_iters, rel_tol}]}.
/// Any key other than sigma/max_iters/rel_tol is a weight. A missing list
/// falls back to the default schedule.
ScheduleSet parse_schedule(std::string_view text, DatasetKind kind = DatasetKind::Synthetic);
std::string format_schedule(const ScheduleSet& schedules);

struct FittedParams {
  PoseParams theta;
  ShapeParams beta;
  double d_norm = 0.0;
  std::vector<CameraParams> cameras;
};

std::string format_params(const FittedParams& params);
FittedParams parse_params(std::string_view text);

std::string format_trace(const std::vector<StageTrace>& trace);

/// Wavefront OBJ with vertices and 1-based faces, 9 significant digits.
std::string format_obj(const Points3& vertices, const Faces& faces);
Mesh parse_obj(std::string_view text);

}  // namespace bodyfit
