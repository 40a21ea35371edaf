#pragma once

// Aspect-ratio constrained position maps, camera transforms on them, and
// 2D axial rotary embeddings driven by map coordinates.

#include <array>
#include <span>
#include <vector>

#include "hdm/autograd.hpp"

namespace hdm::geometry {

// Axis ranges with r_h * r_w == 1 and r_h / r_w == H / W.
struct AspectRanges {
  double r_h = 1.0;
  double r_w = 1.0;
};

struct GridDims {
  int height = 0;
  int width = 0;
};

struct Coord {
  double h = 0.0;
  double w = 0.0;

  bool operator==(const Coord&) const = default;
};

// Row-major grid of (h, w) coordinates, one per token.
class PositionMap {
 public:
  PositionMap() = default;
  PositionMap(int height, int width, std::vector<Coord> coords);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return coords_.size(); }

  const Coord& at(int row, int col) const { return coords_[static_cast<std::size_t>(row) * width_ + col]; }
  std::span<const Coord> coords() const { return coords_; }

  // Rectangular window [row0, row0 + rows) x [col0, col0 + cols).
  PositionMap slice(int row0, int col0, int rows, int cols) const;

  // Coordinates reordered as coords[perm[i]].
  PositionMap permuted(std::span<const int> perm) const;

  bool operator==(const PositionMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<Coord> coords_;
};

struct CameraTransform {
  double shift_x = 0.0;  // added to w coordinates
  double shift_y = 0.0;  // added to h coordinates
  double zoom = 1.0;     // > 1 zooms in

  bool is_identity() const { return shift_x == 0.0 && shift_y == 0.0 && zoom == 1.0; }
};

// Rotary layout inside one attention head: the first rotated_fraction of
// head_dim is rotated in adjacent pairs; the first half of those pairs use
// the h coordinate, the second half the w coordinate, both with
// omega_i = freq_scale * base^(-2i / axis_dims), axis_dims = rotated / 2.
struct RopeFrequencies {
  int head_dim = 64;
  double rotated_fraction = 0.5;
  double base = 10000.0;
  double freq_scale = 1.0;

  int rotated_dims() const;
  int pairs_per_axis() const { return rotated_dims() / 4; }
  // Throws kShape unless head_dim is even and rotated_dims() % 4 == 0.
  void validate() const;
  std::vector<double> omegas() const;
};

// numpy.linspace semantics; a single sample sits at the interval midpoint.
std::vector<double> linspace(double start, double stop, int count);

AspectRanges compute_ranges(int height, int width);

PositionMap make_position_map(int height, int width);

PositionMap apply_camera(GridDims dims, const CameraTransform& cam);

// Rotation angle of every rotated pair for one position, h pairs first.
std::vector<double> rope_angles(const Coord& pos, const RopeFrequencies& freqs);

std::vector<double> rope_rotate(std::span<const double> features, const Coord& pos, const RopeFrequencies& freqs);

// Per-token cos/sin table for the backbone's rotary op. Rows without a
// position (text tokens) get the identity rotation.
template <typename T>
ag::RotaryTable<T> make_rotary_table(std::span<const Coord> positions, int unpositioned_rows,
                                     const RopeFrequencies& freqs) {
  freqs.validate();
  const int pairs = freqs.rotated_dims() / 2;
  const auto n = static_cast<ag::Index>(positions.size()) + unpositioned_rows;
  ag::RotaryTable<T> table;
  table.cos = ag::Mat<T>::Ones(n, pairs);
  table.sin = ag::Mat<T>::Zero(n, pairs);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto angles = rope_angles(positions[i], freqs);
    for (int p = 0; p < pairs; ++p) {
      table.cos(static_cast<ag::Index>(i), p) = static_cast<T>(std::cos(angles[static_cast<std::size_t>(p)]));
      table.sin(static_cast<ag::Index>(i), p) = static_cast<T>(std::sin(angles[static_cast<std::size_t>(p)]));
    }
  }
  return table;
}

}  // namespace hdm::geometry
