#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "affes/errors.hpp"
#include "affes/es.hpp"

namespace affes {
namespace {

constexpr double kEigenFloor = 1e-12;

struct Decomposition {
  Eigen::MatrixXd sqrt_c;
  double condition = 1.0;
  bool repaired = false;
};

/// Symmetric square root of the correlation part, flooring eigenvalues.
Decomposition decompose(Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  if (eig.info() != Eigen::Success) throw NumericalError("CMA-ES: eigendecomposition failed");
  Eigen::VectorXd values = eig.eigenvalues();
  Decomposition out;
  if (values.minCoeff() < kEigenFloor) {
    values = values.cwiseMax(kEigenFloor);
    c = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
    out.repaired = true;
  }
  out.sqrt_c = eig.eigenvectors() * values.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  out.condition = values.maxCoeff() / values.minCoeff();
  return out;
}

void ensure_shape(EsState& state) {
  const auto d = static_cast<Eigen::Index>(state.mean.size());
  if (state.cov.rows() != d || state.cov.cols() != d) state.cov = Eigen::MatrixXd::Identity(d, d);
  if (state.decoding.size() != d) {
    state.decoding = state.cov.diagonal().cwiseSqrt();
  }
  if (state.path_sigma.size() != d) state.path_sigma = Eigen::VectorXd::Zero(d);
  if (state.path_cov.size() != d) state.path_cov = Eigen::VectorXd::Zero(d);
}

}  // namespace

int population_size(int d) {
  const int lambda = 4 + static_cast<int>(std::floor(3.0 * std::log10(static_cast<double>(d))));
  return std::max(3, lambda);
}

CmaParameters CmaParameters::defaults(int d, int lambda) {
  CmaParameters p;
  const double n = d;
  p.lambda = lambda;
  p.mu = (lambda + 1) / 2;
  p.weights.resize(static_cast<std::size_t>(p.mu));
  for (int i = 0; i < p.mu; ++i) {
    p.weights[static_cast<std::size_t>(i)] =
        std::log(p.mu + 0.5) - std::log(i + 1.0);
  }
  const double sum = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  double sum_sq = 0.0;
  for (double& w : p.weights) {
    w /= sum;
    sum_sq += w * w;
  }
  p.mu_eff = 1.0 / sum_sq;

  p.c_sigma = (p.mu_eff + 2.0) / (n + p.mu_eff + 5.0);
  p.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((p.mu_eff - 1.0) / (n + 1.0)) - 1.0) + p.c_sigma;
  p.c_c = (4.0 + p.mu_eff / n) / (n + 4.0 + 2.0 * p.mu_eff / n);
  p.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + p.mu_eff);
  p.c_mu = std::min(1.0 - p.c_1,
                    2.0 * (p.mu_eff - 2.0 + 1.0 / p.mu_eff) / ((n + 2.0) * (n + 2.0) + p.mu_eff));
  // The diagonal only has d degrees of freedom and can learn faster
  // (separable CMA-ES rates).
  p.c_1_diag = std::min(0.5, p.c_1 * (n + 2.0) / 3.0);
  p.c_mu_diag = std::min(1.0 - p.c_1_diag, p.c_mu * (n + 2.0) / 3.0);
  p.chi_d = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  return p;
}

void normalize_determinant(EsState& state, DetNormalization mode) {
  if (mode == DetNormalization::none) return;
  const double det = state.cov.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) {
    throw NumericalError("CMA-ES: covariance determinant is not positive");
  }
  const double d = static_cast<double>(state.cov.rows());
  // Scale through D so that the correlation part is untouched.
  const double cov_scale = mode == DetNormalization::root ? std::pow(det, -1.0 / d) : 1.0 / det;
  state.decoding *= std::sqrt(cov_scale);
  state.cov *= cov_scale;
}

NormalizedPoint materialize(const NormalizedPoint& sample, Feasibility mode) {
  switch (mode) {
    case Feasibility::project: return project(sample);
    case Feasibility::tanh: return tanh_squash(sample);
    case Feasibility::resample: return sample;
  }
  return sample;
}

EsRun run_cma(const BatchObjective& objective, EsState& state, const CmaOptions& options,
              Rng& rng, const MembershipOracle& oracle, const EsTraceFn& trace) {
  ensure_shape(state);
  const int d = state.dim();
  const int lambda = options.population > 0 ? options.population : population_size(d);
  if (lambda < 3) throw ConfigError("CMA-ES population must be at least 3");
  const CmaParameters p = CmaParameters::defaults(d, lambda);

  EsRun run;
  bool have_worst = false;
  Eigen::Map<Eigen::VectorXd> mean(state.mean.data(), d);

  std::vector<Eigen::VectorXd> z(static_cast<std::size_t>(lambda), Eigen::VectorXd(d));
  std::vector<Eigen::VectorXd> xi(static_cast<std::size_t>(lambda), Eigen::VectorXd(d));
  std::vector<NormalizedPoint> evaluated(static_cast<std::size_t>(lambda));

  for (int call = 0; call < options.update_calls; ++call) {
    const Eigen::VectorXd& dvec = state.decoding;
    Eigen::MatrixXd c = dvec.cwiseInverse().asDiagonal() * state.cov * dvec.cwiseInverse().asDiagonal();
    const Decomposition dec = decompose(c);
    if (dec.repaired) ++run.pd_repairs;

    for (int k = 0; k < lambda; ++k) {
      auto& zk = z[static_cast<std::size_t>(k)];
      auto& xik = xi[static_cast<std::size_t>(k)];
      NormalizedPoint sample(static_cast<std::size_t>(d));
      std::size_t rejected = 0;
      for (;;) {
        for (int i = 0; i < d; ++i) xik[i] = rng.normal();
        zk = dec.sqrt_c * xik;
        for (int i = 0; i < d; ++i) sample[static_cast<std::size_t>(i)] = mean[i] + state.sigma * dvec[i] * zk[i];
        if (options.feasibility != Feasibility::resample || oracle(sample)) break;
        ++run.resamples;
        if (++rejected >= options.resample_cap) {
          std::ostringstream msg;
          msg << "CMA-ES: " << rejected << " consecutive infeasible draws in generation "
              << state.generation << " (sigma = " << state.sigma << ")";
          throw InfeasibleError(msg.str());
        }
      }
      evaluated[static_cast<std::size_t>(k)] = materialize(sample, options.feasibility);
    }

    const std::vector<CandidateScore> scores = objective(evaluated);
    run.evaluations += lambda;
    const double det_before = state.cov.determinant();
    for (int k = 0; k < lambda; ++k) {
      const auto& s = scores[static_cast<std::size_t>(k)];
      if (trace) trace(state.generation, evaluated[static_cast<std::size_t>(k)], s, state.sigma, det_before);
      if (!have_worst || is_worse(s, run.worst_score)) {
        run.worst_point = evaluated[static_cast<std::size_t>(k)];
        run.worst_score = s;
        have_worst = true;
      }
    }

    // Rank worst-first (best for the attacker); stable keeps first-seen order on ties.
    std::vector<int> order(static_cast<std::size_t>(lambda));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return is_worse(scores[static_cast<std::size_t>(a)], scores[static_cast<std::size_t>(b)]);
    });
    const CandidateScore& gen_best = scores[static_cast<std::size_t>(order[0])];
    if (!state.best_score || gen_best >= *state.best_score) state.best_score = gen_best;

    Eigen::VectorXd z_w = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd xi_w = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd diag_mu = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < p.mu; ++i) {
      const double w = p.weights[static_cast<std::size_t>(i)];
      const auto& zi = z[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      z_w += w * zi;
      xi_w += w * xi[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      rank_mu += w * zi * zi.transpose();
      diag_mu += w * zi.cwiseProduct(zi);
    }

    mean += state.sigma * dvec.cwiseProduct(z_w);

    state.path_sigma = (1.0 - p.c_sigma) * state.path_sigma +
                       std::sqrt(p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff) * xi_w;
    const double ps_norm = state.path_sigma.norm();
    const double ps_correction =
        std::sqrt(1.0 - std::pow(1.0 - p.c_sigma, 2.0 * static_cast<double>(state.generation + 1)));
    const bool h_sigma = ps_norm / ps_correction < (1.4 + 2.0 / (d + 1.0)) * p.chi_d;
    state.path_cov = (1.0 - p.c_c) * state.path_cov +
                     (h_sigma ? std::sqrt(p.c_c * (2.0 - p.c_c) * p.mu_eff) : 0.0) * z_w;
    const double delta_h = h_sigma ? 0.0 : p.c_c * (2.0 - p.c_c);

    // Rank-one + rank-mu update of the correlation part.
    Eigen::MatrixXd c_next = (1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h) * c +
                             p.c_1 * state.path_cov * state.path_cov.transpose() + p.c_mu * rank_mu;

    // Diagonal decoding update, damped by the conditioning of C.
    const double beta = std::max(1.0, std::sqrt(dec.condition) - 1.0);
    Eigen::VectorXd new_d = dvec;
    for (int j = 0; j < d; ++j) {
      const double cjj = c(j, j);
      const double delta = p.c_1_diag * (state.path_cov[j] * state.path_cov[j] + (delta_h - 1.0) * cjj) +
                           p.c_mu_diag * (diag_mu[j] - cjj);
      new_d[j] *= std::exp(delta / (2.0 * beta));
    }

    // Move C's diagonal into D so C keeps a unit diagonal.
    c_next = 0.5 * (c_next + c_next.transpose());
    const Eigen::VectorXd scale = c_next.diagonal().cwiseMax(kEigenFloor).cwiseSqrt();
    c_next = scale.cwiseInverse().asDiagonal() * c_next * scale.cwiseInverse().asDiagonal();
    new_d = new_d.cwiseProduct(scale);
    c_next = 0.5 * (c_next + c_next.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> check(c_next, Eigen::EigenvaluesOnly);
    if (check.eigenvalues().minCoeff() < kEigenFloor) {
      (void)decompose(c_next);
      ++run.pd_repairs;
    }

    state.decoding = new_d;
    state.cov = new_d.asDiagonal() * c_next * new_d.asDiagonal();
    state.cov = 0.5 * (state.cov + state.cov.transpose());

    state.sigma *= std::exp((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_d - 1.0));
    if (!std::isfinite(state.sigma) || state.sigma <= 0.0) {
      throw NumericalError("CMA-ES: step size became non-finite");
    }
    normalize_determinant(state, options.det_normalization);
    ++state.generation;
    run.incumbent_history.push_back(*state.best_score);
  }
  return run;
}

}  // namespace affes
