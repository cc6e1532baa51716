#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "affes/attack.hpp"
#include "affes/errors.hpp"
#include "test_helpers.hpp"

using namespace affes;
using affes::testing::centroid_classifier;
using affes::testing::ring_image;

TEST(Compare, MisclassificationDominatesLoss) {
  EXPECT_TRUE(is_worse({true, 0.1}, {false, 0.9}));
  EXPECT_FALSE(is_worse({false, 0.9}, {true, 0.1}));
}

TEST(Compare, LossBreaksTiesAndExactTiesKeepIncumbent) {
  EXPECT_TRUE(is_worse({false, 0.7}, {false, 0.5}));
  EXPECT_FALSE(is_worse({true, 1.2}, {true, 1.2}));
  EXPECT_EQ(compare({true, 1.2}, {true, 1.2}), std::partial_ordering::equivalent);
}

TEST(Compare, ScanMatchesBruteForceSort) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<CandidateScore> scores(1 + rng.below(20));
    for (auto& s : scores) s = {rng.coin(), static_cast<double>(rng.below(5))};
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (is_worse(scores[i], scores[best])) best = i;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a].misclassified != scores[b].misclassified) return scores[a].misclassified;
      return scores[a].loss > scores[b].loss;
    });
    EXPECT_EQ(best, order.front());
  }
}

TEST(GridAxis, EndpointsMidpointAndSingleton) {
  EXPECT_EQ(grid_axis(5, 0.0), (std::vector<double>{-1, -0.5, 0, 0.5, 1}));
  EXPECT_EQ(grid_axis(1, 0.25), (std::vector<double>{0.25}));
  EXPECT_EQ(grid_axis(31, 0.0)[15], 0.0);
  EXPECT_EQ(grid_axis(2, 0.0), (std::vector<double>{-1, 1}));
  EXPECT_THROW(grid_axis(0, 0.0), ConfigError);
}

TEST(EnumerateGrid, CartesianProductFirstDimensionSlowest) {
  const auto space = ConstraintSpace::translations();
  const std::vector<int> counts{2, 3};
  const auto pts = enumerate_grid(space, counts);
  ASSERT_EQ(pts.size(), 6u);
  EXPECT_EQ(pts[0], (NormalizedPoint{-1, -1}));
  EXPECT_EQ(pts[1], (NormalizedPoint{-1, 0}));
  EXPECT_EQ(pts[2], (NormalizedPoint{-1, 1}));
  EXPECT_EQ(pts[3], (NormalizedPoint{1, -1}));
  const std::vector<int> wrong{2, 3, 4};
  EXPECT_THROW(enumerate_grid(space, wrong), ConfigError);
}

TEST(GridSearch, CountsForwardPassesExactly) {
  const auto space = ConstraintSpace::translations_rotation();
  const auto base = centroid_classifier();
  CountingClassifier counter(base);
  const std::vector<int> counts{5, 5, 31};
  const AttackOutcome out = grid_search(ring_image(), 0, counter, space, counts);
  EXPECT_EQ(out.forward_passes, 775);
  EXPECT_EQ(counter.count(), 775);
}

TEST(GridSearch, AllOnesEvaluatesOnlyIdentity) {
  const auto space = ConstraintSpace::full_affine();
  const auto clf = centroid_classifier();
  const std::vector<int> counts(6, 1);
  int traced = 0;
  AttackOptions opt;
  opt.trace = [&](const TraceRecord& r) {
    ++traced;
    EXPECT_EQ(r.candidate, TransformParams::identity());
  };
  const Image img = ring_image();
  const AttackOutcome out = grid_search(img, 0, clf, space, counts, opt);
  EXPECT_EQ(out.forward_passes, 1);
  EXPECT_EQ(traced, 1);
  EXPECT_EQ(out.adversarial_image, img);
}

TEST(GridSearch, MatchesIndependentRescoring) {
  const auto space = ConstraintSpace::translations_rotation();
  const auto clf = centroid_classifier();
  const std::vector<int> counts{3, 3, 7};
  const Image img = ring_image();
  const AttackOutcome out = grid_search(img, 0, clf, space, counts);
  CandidateScore best{};
  bool first = true;
  NormalizedPoint best_point;
  for (const auto& p : enumerate_grid(space, counts)) {
    const Image warped = warp_image(img, space.denormalize(p));
    const Logits l = clf.logits(std::span<const Image>(&warped, 1))[0];
    int arg = 0;
    for (int c = 1; c < 10; ++c)
      if (l[c] > l[arg]) arg = c;
    double m = l[0];
    for (float v : l) m = std::max<double>(m, v);
    double s = 0.0;
    for (float v : l) s += std::exp(v - m);
    const CandidateScore score{arg != 0, std::log(s) - (l[0] - m)};
    if (first || score.misclassified > best.misclassified ||
        (score.misclassified == best.misclassified && score.loss > best.loss)) {
      best = score;
      best_point = p;
      first = false;
    }
  }
  EXPECT_EQ(out.point, best_point);
  EXPECT_EQ(out.score.misclassified, best.misclassified);
  EXPECT_NEAR(out.score.loss, best.loss, 1e-9);
  EXPECT_EQ(out.adversarial_image, warp_image(img, space.denormalize(best_point)));
}

TEST(WorstOfK, DeterministicAndCounted) {
  const auto space = ConstraintSpace::translations_rotation();
  const auto base = centroid_classifier();
  CountingClassifier counter(base);
  Rng a(5), b(5);
  const AttackOutcome x = worst_of_k(ring_image(), 0, counter, space, 10, a);
  const AttackOutcome y = worst_of_k(ring_image(), 0, counter, space, 10, b);
  EXPECT_EQ(x.point, y.point);
  EXPECT_EQ(x.forward_passes, 10);
  EXPECT_EQ(counter.count(), 20);
  AttackOptions with_identity;
  with_identity.include_identity = true;
  const AttackOutcome z = worst_of_k(ring_image(), 0, counter, space, 10, a, with_identity);
  EXPECT_EQ(z.forward_passes, 11);
  EXPECT_THROW(worst_of_k(ring_image(), 0, counter, space, 0, a), ConfigError);
}

TEST(WorstOfK, GridSamplerReproducesGridSearch) {
  const auto space = ConstraintSpace::translations_rotation();
  const auto clf = centroid_classifier();
  const std::vector<int> counts{3, 3, 5};
  const auto grid = enumerate_grid(space, counts);
  Rng rng(0);
  for (int n = 0; n < 20; ++n) {
    Image img = ring_image();
    for (auto& p : img.pixels) p *= static_cast<float>(0.5 + 0.5 * rng.uniform01());
    const int label = n % 3;
    const AttackOutcome g = grid_search(img, label, clf, space, counts);
    const AttackOutcome w =
        worst_of_k(img, label, clf, space, static_cast<int>(grid.size()), rng, {},
                   [&](std::size_t i, Rng&) { return grid[i]; });
    EXPECT_EQ(g.point, w.point);
    EXPECT_EQ(g.score, w.score);
    EXPECT_EQ(g.adversarial_image, w.adversarial_image);
    EXPECT_EQ(g.forward_passes, w.forward_passes);
  }
}

TEST(WorstOfK, OutcomeNoBetterThanIdentityWhenIncluded) {
  const auto space = ConstraintSpace::translations_rotation();
  const auto clf = centroid_classifier();
  Rng rng(2);
  AttackOptions opt;
  opt.include_identity = true;
  const Image img = ring_image();
  const CandidateScore identity = score_logits(clf.logits(std::span<const Image>(&img, 1))[0], 0);
  for (int n = 0; n < 20; ++n) {
    const AttackOutcome out = worst_of_k(img, 0, clf, space, 3, rng, opt);
    EXPECT_GE(out.score, identity);
  }
}

TEST(EsAttacks, ForwardPassesAndTracesAgree) {
  const auto space = ConstraintSpace::full_affine();
  const auto base = centroid_classifier();
  CountingClassifier counter(base);
  Rng rng(3);
  int traced = 0;
  AttackOptions opt;
  opt.trace = [&](const TraceRecord& r) {
    ++traced;
    EXPECT_FALSE(std::isnan(r.sigma));
  };
  OnePlusOneOptions es;
  es.iterations = 10;
  auto [a, sa] = one_plus_one_es(ring_image(), 0, counter, space,
                                 EsState::fresh(space.identity_point(), 0.4), es, rng, opt);
  EXPECT_EQ(a.forward_passes, 10);
  EXPECT_EQ(traced, 10);
  EXPECT_EQ(sa.generation, 10);

  traced = 0;
  auto [b, sb] = cma_es(ring_image(), 0, counter, space, EsState::fresh(space.identity_point(), 0.4),
                        CmaOptions{}, rng, opt);
  EXPECT_EQ(b.forward_passes, 12);
  EXPECT_EQ(traced, 12);
  EXPECT_EQ(counter.count(), 22);
  EXPECT_TRUE(space.contains(b.point));
}

TEST(EsAttacks, ZeroIterationsCostNothing) {
  const auto space = ConstraintSpace::translations();
  const auto clf = centroid_classifier();
  Rng rng(4);
  OnePlusOneOptions es;
  es.iterations = 0;
  const Image img = ring_image();
  auto [out, state] =
      one_plus_one_es(img, 0, clf, space, EsState::fresh(space.identity_point(), 0.4), es, rng);
  EXPECT_EQ(out.forward_passes, 0);
  EXPECT_EQ(out.adversarial_image, img);
}

TEST(ScoreLogits, UsesLowestIdOnArgmaxTies) {
  Logits l{};
  l[3] = 1.0f;
  l[5] = 1.0f;
  EXPECT_EQ(predict(l), 3);
  EXPECT_FALSE(score_logits(l, 3).misclassified);
  EXPECT_TRUE(score_logits(l, 5).misclassified);
}

TEST(GridSearch, IdentityIsAddedOnlyWhenMissing) {
  const auto space = ConstraintSpace::translations_rotation();
  const auto clf = centroid_classifier();
  AttackOptions opt;
  opt.include_identity = true;
  EXPECT_EQ(grid_search(ring_image(), 0, clf, space, std::vector<int>{3, 3, 3}, opt).forward_passes, 27);
  EXPECT_EQ(grid_search(ring_image(), 0, clf, space, std::vector<int>{2, 2, 2}, opt).forward_passes, 9);
}

TEST(EsAttacks, RestartOnInfeasibleKeepsTheBudgetAndTheWorstCandidate) {
  const auto space = ConstraintSpace::translations();
  const auto clf = centroid_classifier();
  OnePlusOneOptions es;
  es.iterations = 60;
  es.sigma0 = 0.6;
  es.resample_cap = 4;
  const Image img = ring_image();

  bool found = false;
  for (std::uint64_t seed = 0; seed < 200 && !found; ++seed) {
    Rng strict_rng(seed);
    try {
      one_plus_one_es(img, 0, clf, space, EsState::fresh(space.identity_point(), es.sigma0), es, strict_rng);
      continue;
    } catch (const InfeasibleError&) {
    }

    std::vector<TraceRecord> trace;
    AttackOptions opt;
    opt.restart_on_infeasible = true;
    opt.trace = [&](const TraceRecord& r) { trace.push_back(r); };
    Rng rng(seed);
    AttackOutcome out;
    try {
      out = one_plus_one_es(img, 0, clf, space, EsState::fresh(space.identity_point(), es.sigma0), es, rng, opt)
                .first;
    } catch (const InfeasibleError&) {
      continue;  // the very first segment evaluated nothing
    }
    found = true;
    EXPECT_GT(out.infeasible_restarts, 0);
    EXPECT_EQ(out.forward_passes, es.iterations);
    ASSERT_EQ(trace.size(), static_cast<std::size_t>(es.iterations));
    CandidateScore worst = trace.front().score;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      EXPECT_EQ(trace[i].iteration, static_cast<std::int64_t>(i));
      if (is_worse(trace[i].score, worst)) worst = trace[i].score;
    }
    EXPECT_EQ(out.score, worst);
    EXPECT_TRUE(space.contains(out.point));
  }
  EXPECT_TRUE(found);
}

TEST(EsAttacks, RestartStillThrowsWhenNothingIsFeasible) {
  const auto space = ConstraintSpace::translations();
  const auto clf = centroid_classifier();
  OnePlusOneOptions es;
  es.sigma0 = 1000.0;
  es.resample_cap = 1;
  AttackOptions opt;
  opt.restart_on_infeasible = true;
  Rng rng(1);
  EXPECT_THROW(one_plus_one_es(ring_image(), 0, clf, space, EsState::fresh(space.identity_point(), es.sigma0), es,
                               rng, opt),
               InfeasibleError);
}
