#include <cmath>
#include <sstream>

#include "affes/errors.hpp"
#include "affes/es.hpp"

namespace affes {

EsState EsState::fresh(const NormalizedPoint& mean, double sigma0) {
  const auto d = static_cast<Eigen::Index>(mean.size());
  EsState s;
  s.mean = mean;
  s.sigma = sigma0;
  s.cov = Eigen::MatrixXd::Identity(d, d);
  s.decoding = Eigen::VectorXd::Ones(d);
  s.path_sigma = Eigen::VectorXd::Zero(d);
  s.path_cov = Eigen::VectorXd::Zero(d);
  return s;
}

EsState EsStateStore::get_or_init(std::int64_t index, const ConstraintSpace& space,
                                  double sigma0, EsAlgorithm) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = states_.find(index); it != states_.end()) return it->second;
  }
  // Both algorithms start from the identity with cov = I; they differ only in
  // which fields they later touch.
  return EsState::fresh(space.identity_point(), sigma0);
}

void EsStateStore::put(std::int64_t index, EsState state) {
  std::lock_guard lock(mutex_);
  states_.insert_or_assign(index, std::move(state));
}

std::optional<EsState> EsStateStore::find(std::int64_t index) const {
  std::lock_guard lock(mutex_);
  if (auto it = states_.find(index); it != states_.end()) return it->second;
  return std::nullopt;
}

std::size_t EsStateStore::size() const {
  std::lock_guard lock(mutex_);
  return states_.size();
}

double failure_factor() { return std::pow(kSuccessFactor, -0.25); }

double one_fifth_update(double sigma, bool success) {
  return success ? sigma * kSuccessFactor : sigma * failure_factor();
}

double restart_threshold(double sigma0) {
  double t = sigma0;
  for (int i = 0; i < 5; ++i) t = one_fifth_update(t, false);
  return t;
}

double apply_restart(double sigma, double sigma0) {
  return sigma <= restart_threshold(sigma0) ? sigma0 : sigma;
}

EsRun run_one_plus_one(const BatchObjective& objective, EsState& state,
                       const OnePlusOneOptions& options, Rng& rng,
                       const MembershipOracle& oracle, const EsTraceFn& trace) {
  const std::size_t d = state.mean.size();
  if (!oracle(state.mean)) throw InfeasibleError("(1+1)-ES mean is outside the feasible set");

  EsRun run;
  bool have_worst = false;
  std::vector<NormalizedPoint> candidate(1, NormalizedPoint(d));
  for (int it = 0; it < options.iterations; ++it) {
    NormalizedPoint& t = candidate[0];
    std::size_t rejected = 0;
    for (;;) {
      for (std::size_t i = 0; i < d; ++i) t[i] = state.mean[i] + state.sigma * rng.normal();
      if (oracle(t)) break;
      ++run.resamples;
      if (++rejected >= options.resample_cap) {
        std::ostringstream msg;
        msg << "(1+1)-ES: " << rejected << " consecutive infeasible draws at iteration " << it
            << " (sigma = " << state.sigma << ")";
        throw InfeasibleError(msg.str());
      }
    }

    const CandidateScore score = objective(candidate).at(0);
    ++run.evaluations;
    if (trace) trace(it, t, score, state.sigma, 1.0);
    if (!have_worst || is_worse(score, run.worst_score)) {
      run.worst_point = t;
      run.worst_score = score;
      have_worst = true;
    }

    // Minimizing F = -severity: F(t) <= F(m) is severity(t) >= severity(m).
    const bool success = !state.best_score || score >= *state.best_score;
    if (success) {
      state.mean = t;
      state.best_score = score;
    }
    state.sigma = apply_restart(one_fifth_update(state.sigma, success), options.sigma0);
    ++state.generation;
    run.incumbent_history.push_back(*state.best_score);
  }
  return run;
}

}  // namespace affes
