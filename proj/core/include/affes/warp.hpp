#pragma once

#include <array>
#include <vector>

#include "affes/dataset.hpp"

namespace affes {

/// The six affine parameters. Angles are radians; translations are pixels.
struct TransformParams {
  double delta_u = 0.0;
  double delta_v = 0.0;
  double theta = 0.0;
  double phi = 0.0;
  double s_u = 1.0;
  double s_v = 1.0;

  static constexpr TransformParams identity() { return {}; }

  bool operator==(const TransformParams&) const = default;
};

struct Point2 {
  double u = 0.0;
  double v = 0.0;
};

/// 3x3 homogeneous matrix acting on column vectors (u, v, 1).
///
/// Coordinates are continuous image coordinates: u runs along columns, v
/// along rows, and the pixel at (row r, col c) covers [c, c+1) x [r, r+1) with
/// its centre at (c + 0.5, r + 0.5).
struct AffineMatrix {
  std::array<std::array<double, 3>, 3> m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  static AffineMatrix identity() { return {}; }
  static AffineMatrix translation(double du, double dv) {
    AffineMatrix a;
    a.m[0][2] = du;
    a.m[1][2] = dv;
    return a;
  }

  double operator()(int r, int c) const { return m[r][c]; }
  double& operator()(int r, int c) { return m[r][c]; }

  AffineMatrix operator*(const AffineMatrix& o) const;
  double det() const;
  /// General 3x3 inverse via the adjugate. Caller checks det() first.
  AffineMatrix inverse() const;

  /// Linear part only (translation column zeroed).
  AffineMatrix linear_part() const;

  bool operator==(const AffineMatrix&) const = default;
};

/// Maps a point through the matrix, dividing by the homogeneous coordinate.
Point2 map_point(const AffineMatrix& a, Point2 p);

/// [[s_u cos t, -s_v sin(t+p), du], [s_u sin t, s_v cos(t+p), dv], [0, 0, 1]].
AffineMatrix build_matrix(const TransformParams& t);

/// Image centre used for re-centering: (round(width/2), round(height/2)).
Point2 image_center(int height, int width);

/// Conjugates the linear part of `a` by a translation to the image centre,
/// then applies a's own translation: T_delta * T_c * L * T_c^-1. The centre
/// maps to centre + delta.
AffineMatrix center_fix(const AffineMatrix& a, int height, int width);

/// Translation, then shear, then scale, then rotation, each factor centred:
/// C(Rot) * C(Scale) * C(Shear) * Trans.
AffineMatrix compose_sequence(const TransformParams& t, int height, int width);

/// Bilinear interpolation at index coordinates (u = column, v = row).
/// Neighbours outside the image contribute 0.
float bilinear_sample(const Image& img, double u, double v);

enum class WarpMode {
  /// Compose the four centred factors and resample once.
  single_pass,
  /// Resample after each factor (translation, shear, scale, rotation).
  sequential,
};

inline constexpr double kSingularDetThreshold = 1e-9;

/// Inverse-warps `img` by the matrix: each output pixel pulls from
/// A^-1 * (u', v', 1). Throws DegenerateTransformError if |det A| < 1e-9.
Image warp_with_matrix(const Image& img, const AffineMatrix& a);

Image warp_image(const Image& img, const TransformParams& t,
                 WarpMode mode = WarpMode::single_pass);

/// Exact left-right mirror (column c -> width-1-c).
Image flip_horizontal(const Image& img);

enum class NormKind { l2, linf };

/// Values sampled on a 2-D grid. `values[i * axis2.size() + j]` belongs to
/// (axis1[i], axis2[j]).
struct LandscapeGrid {
  std::vector<double> axis1;
  std::vector<double> axis2;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * axis2.size() + j]; }
};

double image_norm_distance(const Image& a, const Image& b, NormKind p);

/// ||x - warp(x, translation(du_i, dv_j))||_p over the grid; axis1 = du, axis2 = dv.
LandscapeGrid norm_landscape(const Image& img, NormKind p, const std::vector<double>& du_values,
                             const std::vector<double>& dv_values);

}  // namespace affes
