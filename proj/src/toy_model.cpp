#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "bodyfit/body_model.hpp"
#include "bodyfit/errors.hpp"

namespace bodyfit {

namespace {

struct JointSpec {
  const char* name;
  int parent;
  double x, y, z;
};

// Parents always precede children, so any prefix of this table is a tree.
// Ordered so that elbows and knees are present from K = 10 upwards.
constexpr std::array<JointSpec, 24> kJoints = {{
    {"pelvis", -1, 0.0, 0.0, 0.0},
    {"spine", 0, 0.0, 0.25, 0.0},
    {"left_hip", 0, 0.09, -0.06, 0.0},
    {"right_hip", 0, -0.09, -0.06, 0.0},
    {"left_knee", 2, 0.10, -0.48, 0.02},
    {"right_knee", 3, -0.10, -0.48, 0.02},
    {"left_shoulder", 1, 0.19, 0.43, 0.0},
    {"right_shoulder", 1, -0.19, 0.43, 0.0},
    {"left_elbow", 6, 0.45, 0.43, -0.02},
    {"right_elbow", 7, -0.45, 0.43, -0.02},
    {"neck", 1, 0.0, 0.52, 0.0},
    {"head", 10, 0.0, 0.63, 0.0},
    {"left_ankle", 4, 0.10, -0.88, 0.0},
    {"right_ankle", 5, -0.10, -0.88, 0.0},
    {"left_wrist", 8, 0.70, 0.43, 0.0},
    {"right_wrist", 9, -0.70, 0.43, 0.0},
    {"left_foot", 12, 0.10, -0.91, 0.13},
    {"right_foot", 13, -0.10, -0.91, 0.13},
    {"left_hand", 14, 0.80, 0.42, 0.02},
    {"right_hand", 15, -0.80, 0.42, 0.02},
    {"left_toe", 16, 0.10, -0.92, 0.18},
    {"right_toe", 17, -0.10, -0.92, 0.18},
    {"left_fingers", 18, 0.86, 0.41, 0.03},
    {"right_fingers", 19, -0.86, 0.41, 0.03},
}};

enum class Group { Torso, Head, Thigh, Shin, UpperArm, Forearm, Foot, Hand };

struct PartSpec {
  Group group;
  int side;  // +1 left, -1 right, 0 centre
  Vec3 a, b;
  int owner;    // joint the part rotates with
  int proximal; // joint blended in near end a
  std::vector<std::pair<double, double>> width;  // (t, radius) keyframes
  double depth_ratio;
};

std::vector<PartSpec> part_table() {
  auto j = [](int k) { return Vec3(kJoints[k].x, kJoints[k].y, kJoints[k].z); };
  std::vector<PartSpec> parts;
  parts.push_back({Group::Torso, 0, Vec3(0, -0.10, 0), Vec3(0, 0.52, 0), 0, 0,
                   {{0.0, 0.15}, {0.35, 0.13}, {0.75, 0.165}, {1.0, 0.11}}, 0.68});
  parts.push_back({Group::Head, 0, Vec3(0, 0.52, 0), Vec3(0, 0.80, 0), 10, 10,
                   {{0.0, 0.05}, {0.25, 0.055}, {0.45, 0.09}, {0.8, 0.085}, {1.0, 0.05}}, 1.1});
  for (int side : {+1, -1}) {
    const int o = side > 0 ? 0 : 1;
    parts.push_back({Group::Thigh, side, j(2 + o), j(4 + o), 2 + o, 0, {{0.0, 0.075}, {1.0, 0.052}}, 1.0});
  }
  for (int side : {+1, -1}) {
    const int o = side > 0 ? 0 : 1;
    parts.push_back({Group::Shin, side, j(4 + o), j(12 + o), 4 + o, 2 + o, {{0.0, 0.05}, {1.0, 0.038}}, 1.0});
  }
  for (int side : {+1, -1}) {
    const int o = side > 0 ? 0 : 1;
    parts.push_back({Group::UpperArm, side, j(6 + o), j(8 + o), 6 + o, 1, {{0.0, 0.048}, {1.0, 0.038}}, 1.0});
  }
  for (int side : {+1, -1}) {
    const int o = side > 0 ? 0 : 1;
    parts.push_back({Group::Forearm, side, j(8 + o), j(14 + o), 8 + o, 6 + o, {{0.0, 0.037}, {1.0, 0.028}}, 1.0});
  }
  for (int side : {+1, -1}) {
    const int o = side > 0 ? 0 : 1;
    const double x = 0.10 * side;
    parts.push_back({Group::Foot, side, Vec3(x, -0.90, -0.04), Vec3(x, -0.90, 0.17), 12 + o, 4 + o,
                     {{0.0, 0.04}, {1.0, 0.036}}, 0.7});
  }
  for (int side : {+1, -1}) {
    const int o = side > 0 ? 0 : 1;
    parts.push_back({Group::Hand, side, j(14 + o), j(22 + o), 14 + o, 8 + o, {{0.0, 0.03}, {1.0, 0.025}}, 0.5});
  }
  return parts;
}

double keyframe(const std::vector<std::pair<double, double>>& keys, double t) {
  if (t <= keys.front().first) return keys.front().second;
  for (size_t i = 1; i < keys.size(); ++i) {
    if (t <= keys[i].first) {
      const double s = (t - keys[i - 1].first) / (keys[i].first - keys[i - 1].first);
      return keys[i - 1].second + s * (keys[i].second - keys[i - 1].second);
    }
  }
  return keys.back().second;
}

double mean_width(const PartSpec& p) {
  double acc = 0.0;
  for (int i = 0; i <= 10; ++i) acc += keyframe(p.width, i / 10.0);
  return acc / 11.0;
}

// Per-vertex construction record, consumed when building blendshapes.
struct VertexInfo {
  int part = -1;
  double t = 0.0;
  Vec3 center = Vec3::Zero();
  Vec3 e1 = Vec3::UnitX(), e2 = Vec3::UnitZ();
};

struct Ring {
  int first;
  int count;
  Vec3 center;
};

double smooth_ramp(double x, double lo, double hi) {
  if (x <= lo) return 0.0;
  if (x >= hi) return 1.0;
  return (x - lo) / (hi - lo);
}

}  // namespace

BodyModel make_toy_model(std::uint64_t seed, int num_vertices, int num_joints, int num_shape) {
  if (num_joints < 1 || num_joints > static_cast<int>(kJoints.size())) {
    throw InvariantError("make_toy_model: K must be in [1, 24]");
  }
  if (num_vertices < 8 || num_vertices < num_joints) {
    throw InvariantError("make_toy_model: V must be at least max(8, K)");
  }
  if (num_shape < 1) throw InvariantError("make_toy_model: S must be at least 1");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::vector<PartSpec> all_parts = part_table();
  const int num_parts = std::min<int>(static_cast<int>(all_parts.size()), num_vertices / 8);
  std::vector<PartSpec> parts(all_parts.begin(), all_parts.begin() + num_parts);

  // Per-part girth jitter keeps seeds distinguishable.
  std::vector<double> jitter(all_parts.size());
  for (auto& v : jitter) v = 1.0 + 0.04 * unit(rng);

  // Allocate vertices proportionally to lateral area, at least 8 per part.
  std::vector<double> area(num_parts);
  for (int p = 0; p < num_parts; ++p) {
    const double len = (parts[p].b - parts[p].a).norm();
    const double perim = 2.0 * M_PI * mean_width(parts[p]) * (1.0 + parts[p].depth_ratio) / 2.0;
    area[p] = len * perim;
  }
  const double total_area = std::accumulate(area.begin(), area.end(), 0.0);
  const int spare = num_vertices - 8 * num_parts;
  std::vector<int> segments(num_parts), rings(num_parts);
  // Latitude rings per end cap; -1 keeps the flat fan of the smallest parts.
  std::vector<int> cap_rings(num_parts, -1);
  int used = 0;
  for (int p = 0; p < num_parts; ++p) {
    const int budget = 8 + static_cast<int>(std::floor(spare * area[p] / total_area));
    const double len = (parts[p].b - parts[p].a).norm();
    const double perim = 2.0 * M_PI * mean_width(parts[p]) * (1.0 + parts[p].depth_ratio) / 2.0;
    int m = static_cast<int>(std::lround(std::sqrt(budget * perim / len)));
    m = std::clamp(m, 4, std::min(64, budget / 2));
    if (budget - 2 - 4 * m >= 2 * m) {
      cap_rings[p] = 2;
    } else if (budget - 2 >= 2 * m) {
      cap_rings[p] = 0;
    }
    const int cap = cap_rings[p] < 0 ? 0 : 2 + 2 * cap_rings[p] * m;
    segments[p] = m;
    rings[p] = std::max(2, (budget - cap) / m);
    used += segments[p] * rings[p] + cap;
  }

  auto joint_of = [&](int j) {
    while (j >= num_joints) j = kJoints[j].parent;
    return j;
  };

  std::vector<Vec3> positions;
  std::vector<VertexInfo> info;
  std::vector<std::array<int, 3>> faces;
  std::vector<Ring> ring_list;
  positions.reserve(num_vertices);

  for (int p = 0; p < num_parts; ++p) {
    const PartSpec& part = parts[p];
    const Vec3 axis = (part.b - part.a).normalized();
    Vec3 e1 = axis.cross(Vec3::UnitZ());
    if (e1.norm() < 0.1) e1 = axis.cross(Vec3::UnitX());
    e1.normalize();
    const Vec3 e2 = axis.cross(e1);
    const int m = segments[p];
    const int r = rings[p];
    const int base = static_cast<int>(positions.size());
    for (int ri = 0; ri < r; ++ri) {
      const double t = static_cast<double>(ri) / (r - 1);
      const Vec3 c = part.a + t * (part.b - part.a);
      const double w = keyframe(part.width, t) * jitter[p];
      const double d = w * part.depth_ratio;
      ring_list.push_back({static_cast<int>(positions.size()), m, c});
      for (int k = 0; k < m; ++k) {
        const double phi = 2.0 * M_PI * k / m;
        positions.push_back(c + w * std::cos(phi) * e1 + d * std::sin(phi) * e2);
        info.push_back({p, t, c, e1, e2});
      }
    }
    if (cap_rings[p] < 0) {
      for (int ri = 0; ri + 1 < r; ++ri) {
        for (int k = 0; k < m; ++k) {
          const int a0 = base + ri * m + k;
          const int a1 = base + ri * m + (k + 1) % m;
          faces.push_back({a0, a1, a1 + m});
          faces.push_back({a0, a1 + m, a0 + m});
        }
      }
      const int top = base + (r - 1) * m;
      for (int k = 1; k + 1 < m; ++k) {
        faces.push_back({base, base + k + 1, base + k});
        faces.push_back({top, top + k, top + k + 1});
      }
      continue;
    }
    // Hemispherical end caps: ring starts listed in axial order, then poles.
    std::vector<int> order;
    std::vector<int> north;
    for (int end = 0; end < 2; ++end) {
      const double t = end;
      const Vec3 c = end == 0 ? part.a : part.b;
      const double w = keyframe(part.width, t) * jitter[p];
      const double d = w * part.depth_ratio;
      const double h = 0.5 * w;
      const Vec3 out = end == 0 ? -axis : axis;
      for (int li = 1; li <= cap_rings[p]; ++li) {
        const double lat = 0.5 * M_PI * li / (cap_rings[p] + 1);
        (end == 0 ? order : north).push_back(static_cast<int>(positions.size()));
        for (int k = 0; k < m; ++k) {
          const double phi = 2.0 * M_PI * k / m;
          positions.push_back(c + h * std::sin(lat) * out +
                              std::cos(lat) * (w * std::cos(phi) * e1 + d * std::sin(phi) * e2));
          info.push_back({p, t, c, e1, e2});
        }
      }
      positions.push_back(c + h * out);
      info.push_back({p, t, c, e1, e2});
    }
    const int south_pole = static_cast<int>(positions.size()) - 2 - cap_rings[p] * m;
    const int north_pole = static_cast<int>(positions.size()) - 1;
    std::reverse(order.begin(), order.end());
    for (int ri = 0; ri < r; ++ri) order.push_back(base + ri * m);
    order.insert(order.end(), north.begin(), north.end());
    for (size_t ri = 0; ri + 1 < order.size(); ++ri) {
      for (int k = 0; k < m; ++k) {
        const int a0 = order[ri] + k;
        const int a1 = order[ri] + (k + 1) % m;
        const int b0 = order[ri + 1] + k;
        const int b1 = order[ri + 1] + (k + 1) % m;
        faces.push_back({a0, a1, b1});
        faces.push_back({a0, b1, b0});
      }
    }
    for (int k = 0; k < m; ++k) {
      faces.push_back({south_pole, order.front() + (k + 1) % m, order.front() + k});
      faces.push_back({north_pole, order.back() + k, order.back() + (k + 1) % m});
    }
  }

  // Spend the remaining vertex budget on centroid splits of the largest faces.
  std::vector<std::array<int, 3>> split_parents;
  {
    const int leftover = num_vertices - used;
    std::vector<int> order(faces.size());
    std::iota(order.begin(), order.end(), 0);
    auto face_area = [&](int f) {
      const auto& t = faces[f];
      return (positions[t[1]] - positions[t[0]]).cross(positions[t[2]] - positions[t[0]]).norm();
    };
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return face_area(x) > face_area(y); });
    if (leftover > static_cast<int>(order.size())) {
      throw InvariantError("make_toy_model: cannot place the requested vertex count");
    }
    for (int s = 0; s < leftover; ++s) {
      const int f = order[s];
      const auto tri = faces[f];
      const int n = static_cast<int>(positions.size());
      positions.push_back((positions[tri[0]] + positions[tri[1]] + positions[tri[2]]) / 3.0);
      info.push_back(info[tri[0]]);
      split_parents.push_back(tri);
      faces[f] = {tri[0], tri[1], n};
      faces.push_back({tri[1], tri[2], n});
      faces.push_back({tri[2], tri[0], n});
    }
  }
  const int v_count = static_cast<int>(positions.size());
  const int first_split = v_count - static_cast<int>(split_parents.size());

  BodyModel model;
  model.template_vertices.resize(v_count, 3);
  for (int i = 0; i < v_count; ++i) model.template_vertices.row(i) = positions[i].transpose();
  model.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f)
    for (int c = 0; c < 3; ++c) model.faces(static_cast<Eigen::Index>(f), c) = faces[f][c];
  for (int j = 0; j < num_joints; ++j) {
    model.parent.push_back(kJoints[j].parent);
    model.joint_names.emplace_back(kJoints[j].name);
  }

  // Skinning weights.
  model.skin_weights = Eigen::MatrixXd::Zero(v_count, num_joints);
  for (int i = 0; i < first_split; ++i) {
    const PartSpec& part = parts[info[i].part];
    const Vec3 p = positions[i];
    double w_owner;
    int owner, other;
    if (part.group == Group::Torso) {
      owner = joint_of(1);
      other = joint_of(0);
      w_owner = smooth_ramp(p.y(), 0.08, 0.30);
    } else if (part.group == Group::Head) {
      owner = joint_of(11);
      other = joint_of(10);
      w_owner = smooth_ramp(p.y(), 0.58, 0.66);
    } else {
      owner = joint_of(part.owner);
      other = joint_of(part.proximal);
      w_owner = std::min(1.0, 0.5 + 2.0 * info[i].t);
    }
    model.skin_weights(i, owner) += w_owner;
    model.skin_weights(i, other) += 1.0 - w_owner;
  }
  for (int s = 0; s < static_cast<int>(split_parents.size()); ++s) {
    const auto& tri = split_parents[s];
    model.skin_weights.row(first_split + s) =
        (model.skin_weights.row(tri[0]) + model.skin_weights.row(tri[1]) + model.skin_weights.row(tri[2])) / 3.0;
  }

  // Joint regressor: mean of the ring whose centre is nearest each joint.
  model.joint_regressor = Eigen::MatrixXd::Zero(num_joints, v_count);
  for (int j = 0; j < num_joints; ++j) {
    const Vec3 target(kJoints[j].x, kJoints[j].y, kJoints[j].z);
    const Ring* best = &ring_list.front();
    for (const Ring& ring : ring_list) {
      if ((ring.center - target).norm() < (best->center - target).norm()) best = &ring;
    }
    for (int k = 0; k < best->count; ++k) model.joint_regressor(j, best->first + k) = 1.0 / best->count;
  }

  // Shape blendshapes, one column per coefficient.
  model.shape_dirs = Eigen::MatrixXd::Zero(3 * v_count, num_shape);
  std::vector<std::vector<double>> extra_gain(num_shape, std::vector<double>(all_parts.size()));
  for (auto& g : extra_gain)
    for (auto& x : g) x = gauss(rng);
  const Vec3 head_center(0.0, 0.66, 0.0);
  for (int i = 0; i < first_split; ++i) {
    const VertexInfo& vi = info[i];
    const PartSpec& part = parts[vi.part];
    const Vec3 p = positions[i];
    const Vec3 rho = p - vi.center;
    const bool arm = part.group == Group::UpperArm || part.group == Group::Forearm || part.group == Group::Hand;
    const bool leg = part.group == Group::Thigh || part.group == Group::Shin;
    const bool lower = leg || part.group == Group::Foot;
    const double side = part.side;
    for (int s = 0; s < num_shape; ++s) {
      Vec3 d = Vec3::Zero();
      switch (s) {
        case 0: d = Vec3(0.0, 0.035 * p.y(), 0.0); break;
        case 1: if (part.group == Group::Torso) d = 0.06 * rho.dot(vi.e1) * vi.e1; break;
        case 2: if (part.group == Group::Torso) d = 0.07 * rho.dot(vi.e2) * vi.e2; break;
        case 3: if (arm) d = 0.07 * rho; break;
        case 4: if (leg) d = 0.07 * rho; break;
        case 5: if (arm) d = Vec3(0.06 * (p.x() - side * 0.19), 0.0, 0.0); break;
        case 6: if (lower) d = Vec3(0.0, 0.05 * (p.y() + 0.06), 0.0); break;
        case 7: if (arm) d = Vec3(0.02 * side, 0.0, 0.0); break;
        case 8: if (part.group == Group::Head) d = 0.08 * (p - head_center); break;
        case 9:
          if (lower) d = Vec3(0.015 * side, 0.0, 0.0);
          if (part.group == Group::Torso) {
            d = 0.05 * std::max(0.0, (0.15 - p.y()) / 0.25) * rho.dot(vi.e1) * vi.e1;
          }
          break;
        default: d = 0.03 * extra_gain[s][vi.part] * rho; break;
      }
      model.shape_dirs.block(3 * i, s, 3, 1) = d;
    }
  }

  // Small pose correctives: radial bulges proportional to the joint's weight.
  const int num_features = 9 * (num_joints - 1);
  model.pose_dirs = Eigen::MatrixXd::Zero(3 * v_count, num_features);
  std::vector<double> gain(num_features);
  for (auto& g : gain) g = unit(rng);
  for (int i = 0; i < first_split; ++i) {
    const Vec3 rho = positions[i] - info[i].center;
    const double len = rho.norm();
    if (len == 0.0) continue;
    const Vec3 dir = rho / len;
    for (int j = 1; j < num_joints; ++j) {
      const double w = model.skin_weights(i, j);
      if (w == 0.0) continue;
      for (int f = 0; f < 9; ++f) {
        model.pose_dirs.block(3 * i, 9 * (j - 1) + f, 3, 1) = 0.004 * gain[9 * (j - 1) + f] * w * dir;
      }
    }
  }
  for (int s = 0; s < static_cast<int>(split_parents.size()); ++s) {
    const auto& tri = split_parents[s];
    const int i = first_split + s;
    model.shape_dirs.middleRows(3 * i, 3) = (model.shape_dirs.middleRows(3 * tri[0], 3) +
                                             model.shape_dirs.middleRows(3 * tri[1], 3) +
                                             model.shape_dirs.middleRows(3 * tri[2], 3)) / 3.0;
    model.pose_dirs.middleRows(3 * i, 3) = (model.pose_dirs.middleRows(3 * tri[0], 3) +
                                            model.pose_dirs.middleRows(3 * tri[1], 3) +
                                            model.pose_dirs.middleRows(3 * tri[2], 3)) / 3.0;
  }

  check_model(model);
  return model;
}

}  // namespace bodyfit
