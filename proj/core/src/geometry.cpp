#include "hdm/geometry.hpp"

#include <cmath>
#include <string>

namespace hdm::geometry {

PositionMap::PositionMap(int height, int width, std::vector<Coord> coords)
    : height_(height), width_(width), coords_(std::move(coords)) {
  require(height >= 0 && width >= 0 && coords_.size() == static_cast<std::size_t>(height) * width, ErrorKind::kShape,
          "position map coordinate count does not match its grid");
}

PositionMap PositionMap::slice(int row0, int col0, int rows, int cols) const {
  require(row0 >= 0 && col0 >= 0 && rows >= 0 && cols >= 0 && row0 + rows <= height_ && col0 + cols <= width_,
          ErrorKind::kShape, "position map slice outside the grid");
  std::vector<Coord> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) out.push_back(at(row0 + i, col0 + j));
  }
  return PositionMap(rows, cols, std::move(out));
}

PositionMap PositionMap::permuted(std::span<const int> perm) const {
  require(perm.size() == coords_.size(), ErrorKind::kShape, "permutation length does not match the map");
  std::vector<Coord> out;
  out.reserve(perm.size());
  for (int p : perm) out.push_back(coords_.at(static_cast<std::size_t>(p)));
  // A permuted map is a flat token list, not a grid.
  const int n = static_cast<int>(out.size());
  return PositionMap(1, n, std::move(out));
}

int RopeFrequencies::rotated_dims() const {
  return static_cast<int>(std::lround(rotated_fraction * head_dim));
}

void RopeFrequencies::validate() const {
  require(head_dim > 0 && head_dim % 2 == 0, ErrorKind::kShape, "rope head_dim must be a positive even number");
  require(rotated_fraction > 0.0 && rotated_fraction <= 1.0, ErrorKind::kShape,
          "rope rotated_fraction must be in (0, 1]");
  const int rot = rotated_dims();
  require(rot % 4 == 0 && rot > 0, ErrorKind::kShape,
          "rope rotated dimension count " + std::to_string(rot) + " is not divisible by 4");
  require(base > 0.0, ErrorKind::kShape, "rope base must be positive");
}

std::vector<double> RopeFrequencies::omegas() const {
  const int axis_dims = rotated_dims() / 2;
  std::vector<double> out(static_cast<std::size_t>(pairs_per_axis()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = freq_scale * std::pow(base, -2.0 * static_cast<double>(i) / axis_dims);
  }
  return out;
}

std::vector<double> linspace(double start, double stop, int count) {
  require(count >= 1, ErrorKind::kInvalidDimension, "linspace needs at least one sample");
  if (count == 1) return {0.5 * (start + stop)};
  std::vector<double> out(static_cast<std::size_t>(count));
  const double step = (stop - start) / (count - 1);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = i * step + start;
  out.back() = stop;
  return out;
}

AspectRanges compute_ranges(int height, int width) {
  require(height >= 1 && width >= 1, ErrorKind::kInvalidDimension,
          "grid dimensions must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
  const double h = height;
  const double w = width;
  return {std::sqrt(h / w), std::sqrt(w / h)};
}

PositionMap make_position_map(int height, int width) {
  const auto ranges = compute_ranges(height, width);
  const auto hs = linspace(-ranges.r_h, ranges.r_h, height);
  const auto ws = linspace(-ranges.r_w, ranges.r_w, width);
  std::vector<Coord> coords;
  coords.reserve(static_cast<std::size_t>(height) * width);
  for (double h : hs) {
    for (double w : ws) coords.push_back({h, w});
  }
  return PositionMap(height, width, std::move(coords));
}

PositionMap apply_camera(GridDims dims, const CameraTransform& cam) {
  require(cam.zoom > 0.0 && std::isfinite(cam.zoom), ErrorKind::kInvalidTransform, "camera zoom must be positive");
  require(std::isfinite(cam.shift_x) && std::isfinite(cam.shift_y), ErrorKind::kInvalidTransform,
          "camera shift must be finite");
  auto base = make_position_map(dims.height, dims.width);
  if (cam.is_identity()) return base;
  std::vector<Coord> coords(base.coords().begin(), base.coords().end());
  for (auto& c : coords) {
    c.h = c.h / cam.zoom + cam.shift_y;
    c.w = c.w / cam.zoom + cam.shift_x;
  }
  return PositionMap(dims.height, dims.width, std::move(coords));
}

std::vector<double> rope_angles(const Coord& pos, const RopeFrequencies& freqs) {
  const auto om = freqs.omegas();
  std::vector<double> angles;
  angles.reserve(2 * om.size());
  for (double w : om) angles.push_back(pos.h * w);
  for (double w : om) angles.push_back(pos.w * w);
  return angles;
}

std::vector<double> rope_rotate(std::span<const double> features, const Coord& pos, const RopeFrequencies& freqs) {
  freqs.validate();
  require(static_cast<int>(features.size()) == freqs.head_dim, ErrorKind::kShape,
          "rope feature length does not match head_dim");
  std::vector<double> out(features.begin(), features.end());
  const auto angles = rope_angles(pos, freqs);
  for (std::size_t p = 0; p < angles.size(); ++p) {
    const double c = std::cos(angles[p]);
    const double s = std::sin(angles[p]);
    const double a = features[2 * p];
    const double b = features[2 * p + 1];
    out[2 * p] = a * c - b * s;
    out[2 * p + 1] = a * s + b * c;
  }
  return out;
}

}  // namespace hdm::geometry
