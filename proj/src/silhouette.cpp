#include "bodyfit/silhouette.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bodyfit/errors.hpp"

namespace bodyfit {

SilhouetteMask SilhouetteMask::empty(int width, int height) {
  if (width <= 0 || height <= 0) throw DimensionError("mask dimensions must be positive");
  SilhouetteMask m;
  m.width = width;
  m.height = height;
  m.bits.assign(static_cast<size_t>(width) * height, 0);
  return m;
}

int SilhouetteMask::count() const {
  return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void SilhouetteMask::validate() const {
  if (width <= 0 || height <= 0 || bits.size() != static_cast<size_t>(width) * height) {
    throw DimensionError("mask bit count does not match " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  int next_int() {
    skip_space_and_comments();
    size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError("PGM header: expected an integer at byte " + std::to_string(start));
    if (pos_ - start > 9) throw ParseError("PGM header: integer too large");
    return std::stoi(std::string(bytes_.substr(start, pos_ - start)));
  }

  // Exactly one whitespace byte separates maxval from the raster.
  size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ParseError("PGM header: missing whitespace before raster");
    }
    return pos_ + 1;
  }

  size_t pos_ = 0;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
};

}  // namespace

SilhouetteMask load_mask(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw ParseError("not a binary PGM (missing P5 magic)");
  }
  HeaderReader reader(bytes);
  reader.pos_ = 2;
  const int width = reader.next_int();
  const int height = reader.next_int();
  const int maxval = reader.next_int();
  if (width <= 0 || height <= 0) throw ParseError("PGM header: non-positive dimensions");
  if (maxval <= 0 || maxval > 255) throw ParseError("PGM header: maxval must be in [1, 255]");
  const size_t start = reader.raster_start();
  const size_t n = static_cast<size_t>(width) * height;
  if (bytes.size() < start + n) {
    throw ParseError("PGM payload truncated: expected " + std::to_string(n) + " bytes, found " +
                     std::to_string(bytes.size() - std::min(bytes.size(), start)));
  }
  SilhouetteMask mask = SilhouetteMask::empty(width, height);
  for (size_t i = 0; i < n; ++i) {
    mask.bits[i] = static_cast<unsigned char>(bytes[start + i]) >= 128 ? 1 : 0;
  }
  return mask;
}

std::string save_mask(const SilhouetteMask& mask) {
  mask.validate();
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  out.reserve(out.size() + mask.bits.size());
  for (auto b : mask.bits) out.push_back(b ? static_cast<char>(255) : static_cast<char>(0));
  return out;
}

SilhouetteMask load_mask_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return load_mask(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void save_mask_file(const SilhouetteMask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mask '" + path + "'");
  const std::string bytes = save_mask(mask);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing mask '" + path + "'");
}

std::vector<Vec2> boundary_points(const SilhouetteMask& mask) {
  mask.validate();
  std::vector<Vec2> out;
  auto fg = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < mask.width && y < mask.height && mask.at(x, y);
  };
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      if (!fg(x - 1, y) || !fg(x + 1, y) || !fg(x, y - 1) || !fg(x, y + 1)) {
        out.emplace_back(x + 0.5, y + 0.5);
      }
    }
  }
  return out;
}

Rasterization rasterize_silhouette(const Mesh& mesh, const CameraParams& camera) {
  camera.validate();
  if (mesh.vertices.rows() == 0 || mesh.faces.rows() == 0) {
    throw DimensionError("rasterize_silhouette: empty mesh");
  }
  Rasterization out;
  out.mask = SilhouetteMask::empty(camera.width, camera.height);
  out.depth.width = camera.width;
  out.depth.height = camera.height;
  out.depth.depth.assign(out.mask.bits.size(), std::numeric_limits<double>::infinity());

  const Mat3 R = camera.rotation_matrix();
  const Eigen::Index nv = mesh.vertices.rows();
  Points3 cam(nv, 3);
  Eigen::MatrixX2d pix(nv, 2);
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Vec3 c = R * mesh.vertices.row(i).transpose() + camera.translation;
    cam.row(i) = c.transpose();
    pix(i, 0) = camera.focal * c.x() / c.z() + camera.principal_point.x();
    pix(i, 1) = camera.focal * c.y() / c.z() + camera.principal_point.y();
  }

  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
    int idx[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    if (cam(idx[0], 2) <= kMinDepth || cam(idx[1], 2) <= kMinDepth || cam(idx[2], 2) <= kMinDepth) {
      continue;
    }
    Vec2 p[3];
    for (int k = 0; k < 3; ++k) p[k] = pix.row(idx[k]).transpose();
    auto edge = [](const Vec2& a, const Vec2& b, const Vec2& q) {
      return (b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x());
    };
    double area = edge(p[0], p[1], p[2]);
    if (area == 0.0 || !std::isfinite(area)) continue;
    if (area < 0.0) {
      std::swap(p[1], p[2]);
      std::swap(idx[1], idx[2]);
      area = -area;
    }
    double inv_z[3];
    for (int k = 0; k < 3; ++k) inv_z[k] = 1.0 / cam(idx[k], 2);
    bool top_left[3];
    for (int k = 0; k < 3; ++k) {
      const Vec2 d = p[(k + 1) % 3] - p[k];
      top_left[k] = d.y() < 0.0 || (d.y() == 0.0 && d.x() > 0.0);
    }

    const double min_x = std::min({p[0].x(), p[1].x(), p[2].x()});
    const double max_x = std::max({p[0].x(), p[1].x(), p[2].x()});
    const double min_y = std::min({p[0].y(), p[1].y(), p[2].y()});
    const double max_y = std::max({p[0].y(), p[1].y(), p[2].y()});
    const int x0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
    const int x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(max_x - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
    const int y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(max_y - 0.5)));

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q(x + 0.5, y + 0.5);
        double w[3];
        bool inside = true;
        for (int k = 0; k < 3 && inside; ++k) {
          // Weight of vertex k is the edge function of the opposite edge.
          const int e = (k + 1) % 3;
          w[k] = edge(p[e], p[(e + 1) % 3], q);
          inside = w[k] > 0.0 || (w[k] == 0.0 && top_left[e]);
        }
        if (!inside) continue;
        const double denom = (w[0] * inv_z[0] + w[1] * inv_z[1] + w[2] * inv_z[2]) / area;
        const double z = 1.0 / denom;
        const size_t at = static_cast<size_t>(y) * camera.width + x;
        out.mask.bits[at] = 1;
        if (z < out.depth.depth[at]) out.depth.depth[at] = z;
      }
    }
  }
  return out;
}

double iou(const SilhouetteMask& a, const SilhouetteMask& b) {
  a.validate();
  b.validate();
  if (a.width != b.width || a.height != b.height) {
    throw DimensionError("iou: mask sizes differ (" + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + ")");
  }
  size_t inter = 0;
  size_t uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] & b.bits[i]);
    uni += (a.bits[i] | b.bits[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace bodyfit
