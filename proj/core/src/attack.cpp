#include "affes/attack.hpp"

#include <algorithm>
#include <cmath>

#include "affes/errors.hpp"

namespace affes {

int predict(std::span<const float> logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
    if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

template <typename T>
double cross_entropy(std::span<const T> logits, int label) {
  double max_logit = static_cast<double>(logits[0]);
  for (T v : logits) max_logit = std::max(max_logit, static_cast<double>(v));
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - max_logit);
  return std::log(sum) - (static_cast<double>(logits[static_cast<std::size_t>(label)]) - max_logit);
}

template double cross_entropy<float>(std::span<const float>, int);
template double cross_entropy<double>(std::span<const double>, int);

CandidateScore score_logits(const Logits& logits, int label) {
  return {predict(logits) != label, std::max(0.0, cross_entropy(logits, label))};
}

ImageObjective::ImageObjective(const Image& image, int label, const Classifier& classifier,
                               const ConstraintSpace& space, const AttackOptions& options)
    : image_(image), label_(label), classifier_(classifier), space_(space), options_(options) {}

Image ImageObjective::materialize(const NormalizedPoint& point) const {
  return warp_image(image_, space_.denormalize(point), options_.warp_mode);
}

std::vector<CandidateScore> ImageObjective::score(std::span<const NormalizedPoint> points) {
  std::vector<CandidateScore> scores;
  scores.reserve(points.size());
  std::vector<Image> batch;
  const std::size_t chunk = std::max<std::size_t>(1, options_.max_batch);
  for (std::size_t start = 0; start < points.size(); start += chunk) {
    const std::size_t stop = std::min(points.size(), start + chunk);
    batch.clear();
    for (std::size_t i = start; i < stop; ++i) batch.push_back(materialize(points[i]));
    const std::vector<Logits> logits = classifier_.logits(batch);
    forward_passes_ += static_cast<std::int64_t>(batch.size());
    for (const auto& row : logits) scores.push_back(score_logits(row, label_));
  }
  return scores;
}

BatchObjective ImageObjective::as_batch_objective() {
  return [this](std::span<const NormalizedPoint> points) { return score(points); };
}

std::vector<double> grid_axis(int count, double identity_coordinate) {
  if (count < 1) throw ConfigError("grid counts must be >= 1");
  if (count == 1) return {identity_coordinate};
  std::vector<double> axis(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) axis[static_cast<std::size_t>(i)] = -1.0 + 2.0 * i / (count - 1);
  // Pin the midpoint of odd grids to exactly zero.
  if (count % 2 == 1) axis[static_cast<std::size_t>(count / 2)] = 0.0;
  return axis;
}

std::vector<NormalizedPoint> enumerate_grid(const ConstraintSpace& space, std::span<const int> counts) {
  if (counts.size() != static_cast<std::size_t>(space.dim())) {
    throw ConfigError("grid needs one count per free parameter (" + std::to_string(space.dim()) +
                      "), got " + std::to_string(counts.size()));
  }
  const NormalizedPoint identity = space.identity_point();
  std::vector<std::vector<double>> axes;
  std::size_t total = 1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    axes.push_back(grid_axis(counts[i], identity[i]));
    total *= axes.back().size();
  }
  std::vector<NormalizedPoint> points;
  points.reserve(total);
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    NormalizedPoint p(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) p[i] = axes[i][idx[i]];
    points.push_back(std::move(p));
    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++idx[i] < axes[i].size()) break;
      idx[i] = 0;
    }
  }
  return points;
}

namespace {

void emit_trace(const AttackOptions& options, const ConstraintSpace& space, std::int64_t iteration,
                const NormalizedPoint& point, const CandidateScore& score, double sigma,
                double det) {
  if (!options.trace) return;
  TraceRecord rec;
  rec.iteration = iteration;
  rec.candidate = space.denormalize(point);
  rec.score = score;
  rec.sigma = sigma;
  rec.cov_det = det;
  options.trace(rec);
}

AttackOutcome finish(const ImageObjective& objective, const NormalizedPoint& point,
                     const CandidateScore& score) {
  AttackOutcome out;
  out.point = point;
  out.transform = objective.space().denormalize(point);
  out.score = score;
  out.adversarial_image = objective.materialize(point);
  out.forward_passes = objective.forward_passes();
  return out;
}

}  // namespace

AttackOutcome worst_of_candidates(ImageObjective& objective,
                                  std::span<const NormalizedPoint> candidates) {
  if (candidates.empty()) throw ConfigError("attack needs at least one candidate");
  const std::vector<CandidateScore> scores = objective.score(candidates);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    emit_trace(objective.options(), objective.space(), static_cast<std::int64_t>(i), candidates[i],
               scores[i], std::numeric_limits<double>::quiet_NaN(),
               std::numeric_limits<double>::quiet_NaN());
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (is_worse(scores[i], scores[best])) best = i;
  }
  return finish(objective, candidates[best], scores[best]);
}

namespace {

AttackOutcome run_candidates(const Image& image, int label, const Classifier& classifier,
                             const ConstraintSpace& space, std::vector<NormalizedPoint> candidates,
                             const AttackOptions& options) {
  if (options.include_identity) {
    NormalizedPoint identity = space.identity_point();
    if (std::find(candidates.begin(), candidates.end(), identity) == candidates.end()) {
      candidates.insert(candidates.begin(), std::move(identity));
    }
  }
  ImageObjective objective(image, label, classifier, space, options);
  return worst_of_candidates(objective, candidates);
}

}  // namespace

AttackOutcome grid_search(const Image& image, int label, const Classifier& classifier,
                          const ConstraintSpace& space, std::span<const int> counts,
                          const AttackOptions& options) {
  return run_candidates(image, label, classifier, space, enumerate_grid(space, counts), options);
}

AttackOutcome worst_of_k(const Image& image, int label, const Classifier& classifier,
                         const ConstraintSpace& space, int k, Rng& rng,
                         const AttackOptions& options, const CandidateSampler& sampler) {
  if (k < 1) throw ConfigError("worst-of-k needs k >= 1");
  std::vector<NormalizedPoint> candidates;
  candidates.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    candidates.push_back(sampler ? sampler(static_cast<std::size_t>(i), rng)
                                 : space.sample_uniform(rng));
  }
  return run_candidates(image, label, classifier, space, std::move(candidates), options);
}

std::pair<AttackOutcome, EsState> one_plus_one_es(const Image& image, int label,
                                                  const Classifier& classifier,
                                                  const ConstraintSpace& space, EsState state,
                                                  const OnePlusOneOptions& es, Rng& rng,
                                                  const AttackOptions& options) {
  ImageObjective objective(image, label, classifier, space, options);
  const MembershipOracle oracle = [&space](const NormalizedPoint& x) { return space.contains(x); };

  // Tracked here rather than taken from EsRun so that a segment cut short by
  // the resample cap still contributes its candidates.
  std::int64_t done = 0;
  bool have_worst = false;
  NormalizedPoint worst_point;
  CandidateScore worst_score;
  const EsTraceFn trace = [&](std::int64_t, const NormalizedPoint& p, const CandidateScore& s,
                              double sigma, double det) {
    if (!have_worst || is_worse(s, worst_score)) {
      worst_point = p;
      worst_score = s;
      have_worst = true;
    }
    if (options.trace) emit_trace(options, space, done, p, s, sigma, det);
    ++done;
  };

  int restarts = 0;
  OnePlusOneOptions segment = es;
  for (;;) {
    const std::int64_t before = done;
    try {
      run_one_plus_one(objective.as_batch_objective(), state, segment, rng, oracle, trace);
      break;
    } catch (const InfeasibleError&) {
      if (!options.restart_on_infeasible || done == before) throw;
      const std::int64_t generation = state.generation;
      state = EsState::fresh(space.identity_point(), es.sigma0);
      state.generation = generation;
      segment.iterations = es.iterations - static_cast<int>(done);
      ++restarts;
    }
  }

  AttackOutcome out;
  if (!have_worst) {
    // Zero iterations: report the identity without spending a forward pass.
    out.point = space.identity_point();
    out.adversarial_image = image;
  } else {
    out = finish(objective, worst_point, worst_score);
  }
  out.infeasible_restarts = restarts;
  return {out, std::move(state)};
}

std::pair<AttackOutcome, EsState> cma_es(const Image& image, int label,
                                         const Classifier& classifier,
                                         const ConstraintSpace& space, EsState state,
                                         const CmaOptions& cma, Rng& rng,
                                         const AttackOptions& options) {
  ImageObjective objective(image, label, classifier, space, options);
  const MembershipOracle oracle = [&space](const NormalizedPoint& x) { return space.contains(x); };
  EsTraceFn trace;
  if (options.trace) {
    trace = [&](std::int64_t it, const NormalizedPoint& p, const CandidateScore& s, double sigma,
                double det) { emit_trace(options, space, it, p, s, sigma, det); };
  }
  const EsRun run = run_cma(objective.as_batch_objective(), state, cma, rng, oracle, trace);
  if (run.evaluations == 0) {
    AttackOutcome out;
    out.point = space.identity_point();
    out.adversarial_image = image;
    return {out, std::move(state)};
  }
  return {finish(objective, run.worst_point, run.worst_score), std::move(state)};
}

}  // namespace affes
