#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "affes/errors.hpp"
#include "affes/train.hpp"
#include "affes/warp.hpp"
#include "test_helpers.hpp"

using namespace affes;
using affes::testing::data_file;
using affes::testing::FunctionClassifier;

namespace {

const Dataset& bundled_train() {
  static const Dataset ds =
      load_idx(data_file("train-images-idx3-ubyte"), data_file("train-labels-idx1-ubyte"));
  return ds;
}

TrainOptions small_options(int iterations, int batch = 8) {
  TrainOptions o;
  o.architecture = Architecture::small();
  o.config.learning_rate = 1e-3;
  o.config.batch_size = batch;
  o.config.iterations = iterations;
  o.seeds = TrainSeeds::derive(5);
  return o;
}

Regime robust_regime(AttackSpec attack) {
  Regime r;
  r.kind = RegimeKind::robust;
  r.attack = std::move(attack);
  return r;
}

std::shared_ptr<Cnn<float>> briefly_trained_model() {
  static const auto model = [] {
    const Dataset ds = subset(bundled_train(), 500, 21);
    return train_standard(ds, small_options(150, 32)).model;
  }();
  return model;
}

}  // namespace

TEST(BatchSampler, EpochsHoldDistinctIndices) {
  BatchSampler sampler(100, 30, 9);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (int b = 0; b < 3; ++b) {
      const auto batch = sampler.next();
      ASSERT_EQ(batch.size(), 30u);
      for (std::size_t i : batch) {
        EXPECT_LT(i, 100u);
        EXPECT_TRUE(seen.insert(i).second);
      }
    }
  }
  BatchSampler again(100, 30, 9), other(100, 30, 10);
  BatchSampler first(100, 30, 9);
  EXPECT_EQ(again.next(), first.next());
  EXPECT_NE(BatchSampler(100, 30, 9).next(), other.next());
  EXPECT_THROW(BatchSampler(10, 11, 0), ConfigError);
  EXPECT_THROW(BatchSampler(10, 0, 0), ConfigError);
}

TEST(AugmentFlip, DoublesTheDatasetWithHalfMirrored) {
  const Dataset ds = subset(bundled_train(), 2000, 3);
  Rng rng(3);
  const Dataset aug = augment_flip(ds, rng);
  ASSERT_EQ(aug.size(), 2 * ds.size());
  EXPECT_NO_THROW(validate(aug));
  std::size_t flipped = 0, ambiguous = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(aug[i].image, ds[i].image);
    const LabeledExample& copy = aug[ds.size() + i];
    EXPECT_EQ(copy.label, ds[i].label);
    const Image mirrored = flip_horizontal(ds[i].image);
    EXPECT_EQ(flip_horizontal(mirrored), ds[i].image);
    if (mirrored == ds[i].image) {
      ++ambiguous;
    } else if (copy.image == mirrored) {
      ++flipped;
    } else {
      EXPECT_EQ(copy.image, ds[i].image);
    }
  }
  const double fraction = static_cast<double>(flipped) / static_cast<double>(ds.size() - ambiguous);
  EXPECT_NEAR(fraction, 0.5, 0.05);
}

TEST(AugmentRandomAffine, CopiesStayInsideTheSpace) {
  const Dataset ds = subset(bundled_train(), 50, 4);
  Rng rng(4);
  const Dataset aug = augment_random_affine(ds, ConstraintSpace::translations_rotation(), rng);
  ASSERT_EQ(aug.size(), 100u);
  EXPECT_NO_THROW(validate(aug));
}

TEST(TrainStandard, ZeroIterationsReturnsTheInitializedModel) {
  const Dataset ds = subset(bundled_train(), 64, 1);
  const TrainOptions o = small_options(0);
  const TrainResult r = train_standard(ds, o);
  Cnn<float> fresh(Architecture::small());
  fresh.initialize(o.seeds.init);
  EXPECT_TRUE(std::equal(fresh.parameters().begin(), fresh.parameters().end(),
                         r.model->parameters().begin()));
  EXPECT_TRUE(r.log.empty());
}

TEST(TrainStandard, LogsEveryIntervalAndTheLastIteration) {
  const Dataset ds = subset(bundled_train(), 64, 1);
  TrainOptions o = small_options(12);
  o.log_every = 5;
  std::vector<std::int64_t> seen;
  o.progress = [&](const ProgressEntry& e) { seen.push_back(e.iteration); };
  const TrainResult r = train_standard(ds, o);
  ASSERT_EQ(r.log.size(), seen.size());
  EXPECT_EQ(seen, (std::vector<std::int64_t>{0, 5, 10, 11}));
  for (const auto& e : r.log) {
    EXPECT_GE(e.natural_batch_accuracy, 0.0);
    EXPECT_LE(e.natural_batch_accuracy, 1.0);
    EXPECT_GT(e.loss, 0.0);
  }
}

TEST(TrainStandard, ReachesHighTrainingAccuracy) {
  const Dataset ds = subset(bundled_train(), 2000, 11);
  TrainOptions o = small_options(500, 64);
  o.jobs = 4;
  const TrainResult r = train_standard(ds, o);
  const CnnClassifier clf(r.model);
  const EvalReport report = evaluate(clf, ds, {EvalMode::natural()}, {1}, {.jobs = 4});
  EXPECT_GT(report.modes[0].mean(), 0.90);
}

TEST(TrainRobust, SpendsExactlyTheAttackBudget) {
  const Dataset ds = subset(bundled_train(), 64, 2);
  EsStateStore store;
  AttackSpec w10;
  w10.k = 10;
  const TrainResult r = train(ds, small_options(3), robust_regime(w10), store);
  EXPECT_EQ(r.attack_forward_passes, 3 * 8 * 10);

  AttackSpec grid;
  grid.kind = AttackKind::grid;
  grid.grid_counts = {3, 1, 2};
  EXPECT_EQ(train(ds, small_options(2), robust_regime(grid), store).attack_forward_passes, 2 * 8 * 6);
}

TEST(TrainRobust, EsStatesCoverTheEpoch) {
  const Dataset ds = subset(bundled_train(), 32, 3);
  AttackSpec es;
  es.kind = AttackKind::one_plus_one;
  es.one_plus_one.iterations = 3;
  EsStateStore store;
  const TrainResult r = train(ds, small_options(4), robust_regime(es), store);
  EXPECT_EQ(store.size(), 32u);
  EXPECT_EQ(r.attack_forward_passes, 4 * 8 * 3);
  for (const auto& ex : ds.examples) {
    const auto state = store.find(ex.index);
    ASSERT_TRUE(state.has_value());
    EXPECT_EQ(state->generation, 3);
  }

  AttackSpec cma;
  cma.kind = AttackKind::cma;
  cma.cma.update_calls = 2;
  EsStateStore cma_store;
  const TrainResult rc = train(ds, small_options(4), robust_regime(cma), cma_store);
  EXPECT_EQ(cma_store.size(), 32u);
  EXPECT_EQ(rc.attack_forward_passes, 4 * 8 * 2 * population_size(3));
}

TEST(TrainRobust, IndependentOfTheJobCount) {
  const Dataset ds = subset(bundled_train(), 64, 4);
  AttackSpec es;
  es.kind = AttackKind::one_plus_one;
  es.one_plus_one.iterations = 4;
  std::vector<std::vector<float>> params;
  for (int jobs : {1, 4}) {
    TrainOptions o = small_options(5);
    o.jobs = jobs;
    EsStateStore store;
    const TrainResult r = train(ds, o, robust_regime(es), store);
    params.emplace_back(r.model->parameters().begin(), r.model->parameters().end());
  }
  EXPECT_EQ(params[0], params[1]);
}

TEST(TrainRobust, WorstOfOneCostsOnePassPerExample) {
  const Dataset ds = subset(bundled_train(), 16, 5);
  AttackSpec w1;
  w1.k = 1;
  EsStateStore store;
  const TrainResult r = train(ds, small_options(2), robust_regime(w1), store);
  EXPECT_EQ(r.attack_forward_passes, 2 * 8);
  EXPECT_EQ(store.size(), 0u);
}

TEST(TrainRobust, ZeroBudgetIsAConfigError) {
  const Dataset ds = subset(bundled_train(), 16, 5);
  AttackSpec w0;
  w0.k = 0;
  EsStateStore store;
  EXPECT_THROW(train(ds, small_options(1), robust_regime(w0), store), ConfigError);
  AttackSpec bad_grid;
  bad_grid.kind = AttackKind::grid;
  bad_grid.grid_counts = {3, 3};
  EXPECT_THROW(train(ds, small_options(1), robust_regime(bad_grid), store), ConfigError);
}

TEST(Evaluate, ConstantClassifierScoresTheLabelFrequency) {
  const Dataset ds = subset(bundled_train(), 300, 6);
  const FunctionClassifier always3([](const Image&) {
    Logits l{};
    l[3] = 1.0f;
    return l;
  });
  const double freq = static_cast<double>(std::count_if(ds.examples.begin(), ds.examples.end(),
                                                        [](const auto& e) { return e.label == 3; })) /
                      static_cast<double>(ds.size());
  const EvalReport report = evaluate(
      always3, ds, {EvalMode::natural(), EvalMode::worst_of(5), EvalMode::grid({3, 3, 3}), EvalMode::es(4)},
      {1, 2});
  for (const auto& m : report.modes) {
    ASSERT_EQ(m.accuracies.size(), 2u);
    for (double a : m.accuracies) EXPECT_DOUBLE_EQ(a, freq);
    EXPECT_DOUBLE_EQ(m.stddev(), 0.0);
  }
  EXPECT_EQ(report.modes[0].forward_passes, 300);
  EXPECT_EQ(report.modes[1].forward_passes, 2 * 300 * 6);
  EXPECT_EQ(report.modes[2].forward_passes, 300 * 27);
  EXPECT_EQ(report.modes[3].forward_passes, 2 * 300 * 5);
}

TEST(Evaluate, FinerNestedGridIsNoEasier) {
  const Dataset ds = subset(bundled_train(), 200, 7);
  const CnnClassifier clf(briefly_trained_model());
  const EvalReport r = evaluate(
      clf, ds, {EvalMode::natural(), EvalMode::grid({3, 3, 3}), EvalMode::grid({5, 5, 5})}, {1}, {.jobs = 4});
  EXPECT_LE(r.modes[1].mean(), r.modes[0].mean());
  EXPECT_LE(r.modes[2].mean(), r.modes[1].mean());
}

TEST(Evaluate, DeterministicAndSideEffectFree) {
  const Dataset ds = subset(bundled_train(), 100, 8);
  const auto model = briefly_trained_model();
  const std::vector<float> before(model->parameters().begin(), model->parameters().end());
  const CnnClassifier clf(model);
  const std::vector<EvalMode> modes{EvalMode::worst_of(10), EvalMode::es(10)};
  const EvalReport a = evaluate(clf, ds, modes, {1, 2, 3}, {.jobs = 1});
  const EvalReport b = evaluate(clf, ds, modes, {1, 2, 3}, {.jobs = 4});
  for (std::size_t m = 0; m < modes.size(); ++m) EXPECT_EQ(a.modes[m].correct, b.modes[m].correct);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), model->parameters().begin()));
}

TEST(Evaluate, RejectsBadInputs) {
  const Dataset ds = subset(bundled_train(), 10, 8);
  const CnnClassifier clf(briefly_trained_model());
  EXPECT_THROW(evaluate(clf, ds, {EvalMode::natural()}, {}), ConfigError);
  EXPECT_THROW(evaluate(clf, ds, {EvalMode::grid({3, 3})}, {1}), ConfigError);
}

TEST(EvalMode, LabelsRoundTrip) {
  for (const EvalMode& m : {EvalMode::natural(), EvalMode::worst_of(10), EvalMode::grid({5, 5, 31}),
                            EvalMode::es(10)}) {
    EXPECT_EQ(EvalMode::parse(m.label()).label(), m.label());
  }
  EXPECT_EQ(EvalMode::grid({5, 5, 31}).label(), "grid(5,5,31)");
  EXPECT_EQ(EvalMode::parse(" worst_of_k( 7 ) ").k, 7);
  for (const char* bad : {"", "worst_of_k(0)", "grid()", "grid(3,x)", "es(-1)", "nonsense"}) {
    EXPECT_THROW(EvalMode::parse(bad), ConfigError) << bad;
  }
}

TEST(Regime, NamesAndLabels) {
  EXPECT_EQ(parse_regime("robust"), RegimeKind::robust);
  EXPECT_FALSE(parse_regime("adversarial").has_value());
  AttackSpec w10;
  EXPECT_EQ(robust_regime(w10).label(), "robust worst_of_k(10)");
  EXPECT_EQ(Regime{}.label(), "standard");
}

TEST(Report, FormatMergeAndCsv) {
  ModeResult m;
  m.mode = EvalMode::worst_of(10);
  m.accuracies = {0.5, 0.6};
  EXPECT_NEAR(m.mean(), 0.55, 1e-12);
  EXPECT_NEAR(m.stddev(), 0.05, 1e-12);
  EXPECT_EQ(format_cell(m), "55.00±5.00");

  EvalReport a{{1}, {m}}, b{{2}, {m}};
  b.modes[0].accuracies = {0.7};
  a.modes[0].accuracies = {0.5};
  const EvalReport merged = merge_reports({a, b});
  EXPECT_EQ(merged.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_EQ(merged.modes[0].accuracies, (std::vector<double>{0.5, 0.7}));

  ModeResult g;
  g.mode = EvalMode::grid({5, 5, 31});
  g.accuracies = {0.25};
  std::ostringstream out;
  write_eval_csv(out, {{"robust worst_of_k(10)", EvalReport{{1}, {m, g}}}});
  EXPECT_EQ(out.str(), "regime,worst_of_k(10),\"grid(5,5,31)\"\nrobust worst_of_k(10),55.00±5.00,25.00±0.00\n");

  EvalReport other{{1}, {g}};
  EXPECT_THROW(merge_reports({a, other}), ConfigError);
}
