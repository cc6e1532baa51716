#include "affes/warp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "affes/errors.hpp"

namespace affes {

AffineMatrix AffineMatrix::operator*(const AffineMatrix& o) const {
  AffineMatrix r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
    }
  }
  return r;
}

double AffineMatrix::det() const {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

AffineMatrix AffineMatrix::inverse() const {
  const double d = det();
  AffineMatrix r;
  r.m[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
  r.m[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
  r.m[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
  r.m[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
  r.m[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
  r.m[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
  r.m[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
  r.m[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
  r.m[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
  // Affine inverses keep an exact [0, 0, 1] bottom row.
  if (m[2][0] == 0.0 && m[2][1] == 0.0 && m[2][2] == 1.0) {
    r.m[2] = {0.0, 0.0, 1.0};
  }
  return r;
}

AffineMatrix AffineMatrix::linear_part() const {
  AffineMatrix r = *this;
  r.m[0][2] = 0.0;
  r.m[1][2] = 0.0;
  return r;
}

Point2 map_point(const AffineMatrix& a, Point2 p) {
  const double x = a.m[0][0] * p.u + a.m[0][1] * p.v + a.m[0][2];
  const double y = a.m[1][0] * p.u + a.m[1][1] * p.v + a.m[1][2];
  const double w = a.m[2][0] * p.u + a.m[2][1] * p.v + a.m[2][2];
  if (w == 1.0) return {x, y};
  return {x / w, y / w};
}

AffineMatrix build_matrix(const TransformParams& t) {
  AffineMatrix a;
  a.m[0] = {t.s_u * std::cos(t.theta), -t.s_v * std::sin(t.theta + t.phi), t.delta_u};
  a.m[1] = {t.s_u * std::sin(t.theta), t.s_v * std::cos(t.theta + t.phi), t.delta_v};
  a.m[2] = {0.0, 0.0, 1.0};
  return a;
}

Point2 image_center(int height, int width) {
  return {std::round(width / 2.0), std::round(height / 2.0)};
}

AffineMatrix center_fix(const AffineMatrix& a, int height, int width) {
  const Point2 c = image_center(height, width);
  const AffineMatrix to_center = AffineMatrix::translation(c.u, c.v);
  const AffineMatrix from_center = AffineMatrix::translation(-c.u, -c.v);
  const AffineMatrix delta = AffineMatrix::translation(a.m[0][2], a.m[1][2]);
  return delta * to_center * a.linear_part() * from_center;
}

namespace {

struct Factors {
  AffineMatrix translation, shear, scale, rotation;
};

Factors centered_factors(const TransformParams& t, int height, int width) {
  TransformParams trans;
  trans.delta_u = t.delta_u;
  trans.delta_v = t.delta_v;
  TransformParams shear;
  shear.phi = t.phi;
  TransformParams scale;
  scale.s_u = t.s_u;
  scale.s_v = t.s_v;
  TransformParams rot;
  rot.theta = t.theta;
  return {center_fix(build_matrix(trans), height, width),
          center_fix(build_matrix(shear), height, width),
          center_fix(build_matrix(scale), height, width),
          center_fix(build_matrix(rot), height, width)};
}

}  // namespace

AffineMatrix compose_sequence(const TransformParams& t, int height, int width) {
  const Factors f = centered_factors(t, height, width);
  return f.rotation * f.scale * f.shear * f.translation;
}

float bilinear_sample(const Image& img, double u, double v) {
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  // Far outside: avoid int overflow in the casts below.
  if (fu < -2.0 || fv < -2.0 || fu > img.width + 1.0 || fv > img.height + 1.0) return 0.0f;
  const int c0 = static_cast<int>(fu);
  const int r0 = static_cast<int>(fv);
  const double au = u - fu;
  const double av = v - fv;

  auto pixel = [&](int r, int c) -> double {
    if (r < 0 || c < 0 || r >= img.height || c >= img.width) return 0.0;
    return img.at(r, c);
  };
  double value = 0.0;
  if ((1.0 - au) * (1.0 - av) != 0.0) value += (1.0 - au) * (1.0 - av) * pixel(r0, c0);
  if (au * (1.0 - av) != 0.0) value += au * (1.0 - av) * pixel(r0, c0 + 1);
  if ((1.0 - au) * av != 0.0) value += (1.0 - au) * av * pixel(r0 + 1, c0);
  if (au * av != 0.0) value += au * av * pixel(r0 + 1, c0 + 1);
  return static_cast<float>(value);
}

Image warp_with_matrix(const Image& img, const AffineMatrix& a) {
  const double d = a.det();
  if (!(std::abs(d) >= kSingularDetThreshold)) {
    std::ostringstream msg;
    msg << "degenerate transform: |det| = " << std::abs(d) << " < " << kSingularDetThreshold;
    throw DegenerateTransformError(msg.str());
  }
  const AffineMatrix inv = a.inverse();
  Image out(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const Point2 src = map_point(inv, {c + 0.5, r + 0.5});
      const float value = bilinear_sample(img, src.u - 0.5, src.v - 0.5);
      out.at(r, c) = std::clamp(value, 0.0f, 1.0f);
    }
  }
  return out;
}

Image warp_image(const Image& img, const TransformParams& t, WarpMode mode) {
  if (mode == WarpMode::single_pass) {
    return warp_with_matrix(img, compose_sequence(t, img.height, img.width));
  }
  const Factors f = centered_factors(t, img.height, img.width);
  Image out = warp_with_matrix(img, f.translation);
  out = warp_with_matrix(out, f.shear);
  out = warp_with_matrix(out, f.scale);
  return warp_with_matrix(out, f.rotation);
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, img.width - 1 - c);
  }
  return out;
}

double image_norm_distance(const Image& a, const Image& b, NormKind p) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double diff = std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
    if (p == NormKind::l2) {
      acc += diff * diff;
    } else {
      acc = std::max(acc, diff);
    }
  }
  return p == NormKind::l2 ? std::sqrt(acc) : acc;
}

LandscapeGrid norm_landscape(const Image& img, NormKind p, const std::vector<double>& du_values,
                             const std::vector<double>& dv_values) {
  LandscapeGrid grid{du_values, dv_values, {}};
  grid.values.reserve(du_values.size() * dv_values.size());
  for (double du : du_values) {
    for (double dv : dv_values) {
      TransformParams t;
      t.delta_u = du;
      t.delta_v = dv;
      grid.values.push_back(image_norm_distance(img, warp_image(img, t), p));
    }
  }
  return grid;
}

}  // namespace affes
