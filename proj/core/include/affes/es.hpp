#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "affes/classifier.hpp"
#include "affes/random.hpp"
#include "affes/space.hpp"

namespace affes {

/// Scores a batch of normalized candidates. Larger CandidateScore = worse for
/// the model = better for the attacker.
using BatchObjective =
    std::function<std::vector<CandidateScore>(std::span<const NormalizedPoint>)>;

/// Per-evaluation callback: (iteration, evaluated point, score, sigma, det(cov)).
using EsTraceFn = std::function<void(std::int64_t, const NormalizedPoint&,
                                     const CandidateScore&, double, double)>;

/// Search distribution m + sigma * N(0, cov), cov = D * C * D.
struct EsState {
  NormalizedPoint mean;
  double sigma = 0.0;
  /// Full shape matrix D*C*D (identity for (1+1)-ES).
  Eigen::MatrixXd cov;
  /// Diagonal decoding D. cov's correlation part is D^-1 cov D^-1.
  Eigen::VectorXd decoding;
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd path_cov;
  /// Score of `mean`, if it has been evaluated.
  std::optional<CandidateScore> best_score;
  std::int64_t generation = 0;

  static EsState fresh(const NormalizedPoint& mean, double sigma0);
  int dim() const { return static_cast<int>(mean.size()); }
};

enum class EsAlgorithm { one_plus_one, cma };

/// Per-example ES states that persist across training epochs.
class EsStateStore {
 public:
  /// Stored state for `index`, or a fresh one centred on the identity.
  EsState get_or_init(std::int64_t index, const ConstraintSpace& space, double sigma0,
                      EsAlgorithm algo) const;
  void put(std::int64_t index, EsState state);
  std::optional<EsState> find(std::int64_t index) const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::int64_t, EsState> states_;
};

struct EsRun {
  NormalizedPoint worst_point;
  CandidateScore worst_score;
  std::int64_t evaluations = 0;
  std::int64_t resamples = 0;
  /// Incumbent score after each iteration ((1+1)-ES) or generation (CMA-ES).
  std::vector<CandidateScore> incumbent_history;
  /// Times the covariance needed eigenvalue flooring to stay positive definite.
  int pd_repairs = 0;
};

inline constexpr std::size_t kResampleCap = 10000;

// ---- (1+1)-ES with the one-fifth success rule -------------------------------

inline constexpr double kSuccessFactor = 1.5;
double failure_factor();  // 1.5^(-1/4)

/// sigma * 1.5 on success, sigma * 1.5^(-1/4) otherwise.
double one_fifth_update(double sigma, bool success);

/// sigma0 * (1.5^(-1/4))^5, computed by the same repeated multiplication the
/// update applies, so five straight failures from sigma0 land exactly on it.
double restart_threshold(double sigma0);

/// Back to sigma0 once sigma <= restart_threshold(sigma0).
double apply_restart(double sigma, double sigma0);

struct OnePlusOneOptions {
  int iterations = 10;
  double sigma0 = 0.4;
  std::size_t resample_cap = kResampleCap;
};

/// Runs `iterations` single-candidate steps. Candidates are redrawn until the
/// oracle accepts them; a candidate at least as bad as the incumbent replaces
/// it. Throws InfeasibleError after `resample_cap` consecutive rejections.
EsRun run_one_plus_one(const BatchObjective& objective, EsState& state,
                       const OnePlusOneOptions& options, Rng& rng,
                       const MembershipOracle& oracle, const EsTraceFn& trace = {});

// ---- CMA-ES with diagonal decoding ------------------------------------------

enum class Feasibility { project, tanh, resample };

enum class DetNormalization {
  none,
  /// cov <- cov / det(cov)^(1/d), giving det(cov) = 1.
  root,
  /// cov <- cov / det(cov), kept for comparison experiments.
  literal,
};

struct CmaOptions {
  int update_calls = 2;
  Feasibility feasibility = Feasibility::tanh;
  DetNormalization det_normalization = DetNormalization::root;
  std::size_t resample_cap = kResampleCap;
  /// 0 selects population_size(d).
  int population = 0;
};

/// 4 + floor(3 log10 d), at least 3.
int population_size(int d);

/// Learning rates and recombination weights for a given (d, lambda).
struct CmaParameters {
  int lambda = 0;
  int mu = 0;
  std::vector<double> weights;
  double mu_eff = 0.0;
  double c_sigma = 0.0;
  double d_sigma = 0.0;
  double c_c = 0.0;
  double c_1 = 0.0;
  double c_mu = 0.0;
  double c_1_diag = 0.0;
  double c_mu_diag = 0.0;
  double chi_d = 0.0;

  static CmaParameters defaults(int d, int lambda);
};

/// Rescales cov (through D) to unit determinant per the chosen mode.
void normalize_determinant(EsState& state, DetNormalization mode);

/// Runs `update_calls` generations of lambda candidates each. In tanh and
/// project modes the state lives in the unconstrained space and candidates
/// are squashed/clamped only when evaluated.
EsRun run_cma(const BatchObjective& objective, EsState& state, const CmaOptions& options,
              Rng& rng, const MembershipOracle& oracle, const EsTraceFn& trace = {});

/// Maps a CMA sample to the point that is actually evaluated.
NormalizedPoint materialize(const NormalizedPoint& sample, Feasibility mode);

}  // namespace affes
