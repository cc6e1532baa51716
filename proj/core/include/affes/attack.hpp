#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "affes/classifier.hpp"
#include "affes/es.hpp"
#include "affes/space.hpp"
#include "affes/warp.hpp"

namespace affes {

struct AttackOutcome {
  TransformParams transform;
  NormalizedPoint point;
  CandidateScore score;
  Image adversarial_image;
  /// Exact number of images the classifier evaluated for this attack.
  std::int64_t forward_passes = 0;
  /// Times a (1+1)-ES attack hit the resample cap and restarted.
  int infeasible_restarts = 0;
};

/// One evaluated candidate. sigma/cov_det are NaN for the non-ES attacks.
struct TraceRecord {
  std::int64_t iteration = 0;
  TransformParams candidate;
  CandidateScore score;
  double sigma = std::numeric_limits<double>::quiet_NaN();
  double cov_det = std::numeric_limits<double>::quiet_NaN();
};
using TraceSink = std::function<void(const TraceRecord&)>;

struct AttackOptions {
  WarpMode warp_mode = WarpMode::single_pass;
  TraceSink trace;
  /// Evaluate the identity transform first unless it is already a candidate.
  bool include_identity = false;
  /// (1+1)-ES only: when the resample cap is hit, restart from a fresh
  /// identity state with sigma0 and spend the remaining iterations there
  /// instead of throwing. A segment that evaluated nothing still throws.
  bool restart_on_infeasible = false;
  /// Upper bound on images per classifier call.
  std::size_t max_batch = 256;
};

/// Warps one image by normalized candidates and scores them with the
/// classifier, counting every forward pass.
class ImageObjective {
 public:
  ImageObjective(const Image& image, int label, const Classifier& classifier,
                 const ConstraintSpace& space, const AttackOptions& options = {});

  std::vector<CandidateScore> score(std::span<const NormalizedPoint> points);
  Image materialize(const NormalizedPoint& point) const;
  BatchObjective as_batch_objective();

  std::int64_t forward_passes() const { return forward_passes_; }
  const ConstraintSpace& space() const { return space_; }
  const AttackOptions& options() const { return options_; }

 private:
  const Image& image_;
  int label_;
  const Classifier& classifier_;
  const ConstraintSpace& space_;
  AttackOptions options_;
  std::int64_t forward_passes_ = 0;
};

/// Equally spaced values on [-1, 1] with endpoints; a count of 1 yields the
/// identity coordinate.
std::vector<double> grid_axis(int count, double identity_coordinate);

/// Full Cartesian product of the per-dimension axes, first dimension slowest.
std::vector<NormalizedPoint> enumerate_grid(const ConstraintSpace& space, std::span<const int> counts);

/// Worst of an explicit candidate list, first-seen on ties.
AttackOutcome worst_of_candidates(ImageObjective& objective,
                                  std::span<const NormalizedPoint> candidates);

AttackOutcome grid_search(const Image& image, int label, const Classifier& classifier,
                          const ConstraintSpace& space, std::span<const int> counts,
                          const AttackOptions& options = {});

/// Draws candidate i of k. The default draws uniformly from the box.
using CandidateSampler = std::function<NormalizedPoint(std::size_t, Rng&)>;

AttackOutcome worst_of_k(const Image& image, int label, const Classifier& classifier,
                         const ConstraintSpace& space, int k, Rng& rng,
                         const AttackOptions& options = {}, const CandidateSampler& sampler = {});

std::pair<AttackOutcome, EsState> one_plus_one_es(const Image& image, int label,
                                                  const Classifier& classifier,
                                                  const ConstraintSpace& space, EsState state,
                                                  const OnePlusOneOptions& es, Rng& rng,
                                                  const AttackOptions& options = {});

std::pair<AttackOutcome, EsState> cma_es(const Image& image, int label,
                                         const Classifier& classifier,
                                         const ConstraintSpace& space, EsState state,
                                         const CmaOptions& cma, Rng& rng,
                                         const AttackOptions& options = {});

}  // namespace affes
