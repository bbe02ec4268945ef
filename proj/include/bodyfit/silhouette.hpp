#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"

namespace bodyfit {

struct SilhouetteMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  static SilhouetteMask empty(int width, int height);
  bool at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool on) { bits[static_cast<size_t>(y) * width + x] = on ? 1 : 0; }
  int count() const;
  void validate() const;
};

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;  // +inf on background

  double at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
};

/// Binary PGM (P5, maxval <= 255). Values >= 128 are foreground.
SilhouetteMask load_mask(std::string_view bytes);
std::string save_mask(const SilhouetteMask& mask);
SilhouetteMask load_mask_file(const std::string& path);
void save_mask_file(const SilhouetteMask& mask, const std::string& path);

/// Foreground pixels with at least one background 4-neighbour (outside the
/// image counts as background), as pixel centres in row-major order.
std::vector<Vec2> boundary_points(const SilhouetteMask& mask);

struct Rasterization {
  SilhouetteMask mask;
  DepthMap depth;
};

/// Coverage of pixel centres by any triangle (either winding), top-left fill
/// rule, nearest camera-space depth. Triangles with a vertex at or behind the
/// near plane are skipped.
Rasterization rasterize_silhouette(const Mesh& mesh, const CameraParams& camera);

/// |a & b| / |a | b|, or 1 when both are empty.
double iou(const SilhouetteMask& a, const SilhouetteMask& b);

}  // namespace bodyfit
