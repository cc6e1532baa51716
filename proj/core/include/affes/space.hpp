#pragma once

#include <array>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string_view>
#include <vector>

#include "affes/random.hpp"
#include "affes/warp.hpp"

namespace affes {

enum class Param : int { delta_u = 0, delta_v, theta, phi, s_u, s_v };
inline constexpr int kNumParams = 6;
inline constexpr std::array<Param, kNumParams> kAllParams{Param::delta_u, Param::delta_v,
                                                          Param::theta,   Param::phi,
                                                          Param::s_u,     Param::s_v};

/// Short config names: du, dv, theta, phi, su, sv.
std::string_view param_name(Param p);
std::optional<Param> parse_param(std::string_view name);
bool is_angle(Param p);

double get_param(const TransformParams& t, Param p);
void set_param(TransformParams& t, Param p, double value);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// A point in the normalized search box [-1, 1]^d (one coordinate per free parameter).
class NormalizedPoint {
 public:
  NormalizedPoint() = default;
  explicit NormalizedPoint(std::size_t d, double fill = 0.0) : values_(d, fill) {}
  explicit NormalizedPoint(std::vector<double> values) : values_(std::move(values)) {}
  NormalizedPoint(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  bool operator==(const NormalizedPoint&) const = default;

 private:
  std::vector<double> values_;
};

/// Hyper-rectangle of allowed transforms plus the mask of free parameters.
/// Bounds are stored in internal units (radians for angles).
class ConstraintSpace {
 public:
  /// Throws ConfigError unless lo < hi for every free parameter and every
  /// interval contains the identity value.
  ConstraintSpace(const std::array<Interval, kNumParams>& bounds,
                  const std::array<bool, kNumParams>& free_mask);

  /// MNIST ranges: translations [-3, 3] px, rotation [-30, 30] deg,
  /// shear [-20, 20] deg, scales [0.6, 1.4].
  static std::array<Interval, kNumParams> mnist_bounds();
  static ConstraintSpace mnist(std::initializer_list<Param> free);
  static ConstraintSpace translations() { return mnist({Param::delta_u, Param::delta_v}); }
  static ConstraintSpace translations_rotation() {
    return mnist({Param::delta_u, Param::delta_v, Param::theta});
  }
  static ConstraintSpace full_affine() {
    return mnist({Param::delta_u, Param::delta_v, Param::theta, Param::phi, Param::s_u,
                  Param::s_v});
  }

  int dim() const { return static_cast<int>(free_.size()); }
  const std::vector<Param>& free_params() const { return free_; }
  bool is_free(Param p) const { return mask_[static_cast<int>(p)]; }
  Interval bounds(Param p) const { return bounds_[static_cast<int>(p)]; }
  const std::array<Interval, kNumParams>& all_bounds() const { return bounds_; }

  /// x = 2 (v - lo) / (hi - lo) - 1 per free parameter.
  NormalizedPoint normalize(const TransformParams& t) const;
  /// Inverse of normalize; frozen parameters are set to identity.
  TransformParams denormalize(const NormalizedPoint& x) const;

  NormalizedPoint identity_point() const { return normalize(TransformParams::identity()); }

  /// Membership oracle: every coordinate in the closed interval [-1, 1].
  bool contains(const NormalizedPoint& x) const;

  /// i.i.d. uniform coordinates on [-1, 1].
  NormalizedPoint sample_uniform(Rng& rng) const;

 private:
  std::array<Interval, kNumParams> bounds_;
  std::array<bool, kNumParams> mask_;
  std::vector<Param> free_;
};

/// Predicate deciding whether a normalized candidate is admissible. The ES
/// routines only ever query feasibility through this.
using MembershipOracle = std::function<bool(const NormalizedPoint&)>;

MembershipOracle hypercube_oracle();

/// Coordinate-wise clamp to [-1, 1].
NormalizedPoint project(const NormalizedPoint& x);

/// Coordinate-wise tanh. The result always passes the membership oracle.
NormalizedPoint tanh_squash(const NormalizedPoint& x);

}  // namespace affes
