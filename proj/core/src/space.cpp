#include "affes/space.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "affes/errors.hpp"

namespace affes {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double identity_value(Param p) { return get_param(TransformParams::identity(), p); }

}  // namespace

std::string_view param_name(Param p) {
  switch (p) {
    case Param::delta_u: return "du";
    case Param::delta_v: return "dv";
    case Param::theta: return "theta";
    case Param::phi: return "phi";
    case Param::s_u: return "su";
    case Param::s_v: return "sv";
  }
  return "?";
}

std::optional<Param> parse_param(std::string_view name) {
  for (Param p : kAllParams) {
    if (param_name(p) == name) return p;
  }
  return std::nullopt;
}

bool is_angle(Param p) { return p == Param::theta || p == Param::phi; }

double get_param(const TransformParams& t, Param p) {
  switch (p) {
    case Param::delta_u: return t.delta_u;
    case Param::delta_v: return t.delta_v;
    case Param::theta: return t.theta;
    case Param::phi: return t.phi;
    case Param::s_u: return t.s_u;
    case Param::s_v: return t.s_v;
  }
  return 0.0;
}

void set_param(TransformParams& t, Param p, double value) {
  switch (p) {
    case Param::delta_u: t.delta_u = value; break;
    case Param::delta_v: t.delta_v = value; break;
    case Param::theta: t.theta = value; break;
    case Param::phi: t.phi = value; break;
    case Param::s_u: t.s_u = value; break;
    case Param::s_v: t.s_v = value; break;
  }
}

ConstraintSpace::ConstraintSpace(const std::array<Interval, kNumParams>& bounds,
                                 const std::array<bool, kNumParams>& free_mask)
    : bounds_(bounds), mask_(free_mask) {
  for (Param p : kAllParams) {
    const Interval b = bounds_[static_cast<int>(p)];
    const double id = identity_value(p);
    if (!(b.lo <= id && id <= b.hi)) {
      throw ConfigError("bounds for '" + std::string(param_name(p)) +
                        "' must contain the identity value");
    }
    if (mask_[static_cast<int>(p)]) {
      if (!(b.lo < b.hi)) {
        throw ConfigError("free parameter '" + std::string(param_name(p)) +
                          "' needs lo < hi");
      }
      free_.push_back(p);
    }
  }
  if (free_.empty()) throw ConfigError("constraint space has no free parameters");
}

std::array<Interval, kNumParams> ConstraintSpace::mnist_bounds() {
  return {Interval{-3.0, 3.0},         Interval{-3.0, 3.0},       Interval{-30 * kDeg, 30 * kDeg},
          Interval{-20 * kDeg, 20 * kDeg}, Interval{0.6, 1.4}, Interval{0.6, 1.4}};
}

ConstraintSpace ConstraintSpace::mnist(std::initializer_list<Param> free) {
  std::array<bool, kNumParams> mask{};
  for (Param p : free) mask[static_cast<int>(p)] = true;
  return ConstraintSpace(mnist_bounds(), mask);
}

NormalizedPoint ConstraintSpace::normalize(const TransformParams& t) const {
  NormalizedPoint x(free_.size());
  for (std::size_t i = 0; i < free_.size(); ++i) {
    const Interval b = bounds(free_[i]);
    x[i] = 2.0 * (get_param(t, free_[i]) - b.lo) / (b.hi - b.lo) - 1.0;
  }
  return x;
}

TransformParams ConstraintSpace::denormalize(const NormalizedPoint& x) const {
  TransformParams t = TransformParams::identity();
  for (std::size_t i = 0; i < free_.size(); ++i) {
    const Interval b = bounds(free_[i]);
    set_param(t, free_[i], b.lo + (x[i] + 1.0) * 0.5 * (b.hi - b.lo));
  }
  return t;
}

bool ConstraintSpace::contains(const NormalizedPoint& x) const {
  if (x.size() != free_.size()) return false;
  return std::all_of(x.begin(), x.end(), [](double v) { return v >= -1.0 && v <= 1.0; });
}

NormalizedPoint ConstraintSpace::sample_uniform(Rng& rng) const {
  NormalizedPoint x(free_.size());
  for (std::size_t i = 0; i < free_.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  return x;
}

MembershipOracle hypercube_oracle() {
  return [](const NormalizedPoint& x) {
    return std::all_of(x.begin(), x.end(), [](double v) { return v >= -1.0 && v <= 1.0; });
  };
}

NormalizedPoint project(const NormalizedPoint& x) {
  NormalizedPoint out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], -1.0, 1.0);
  return out;
}

NormalizedPoint tanh_squash(const NormalizedPoint& x) {
  NormalizedPoint out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

}  // namespace affes
