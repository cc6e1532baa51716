#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "affes/errors.hpp"
#include "affes/model.hpp"
#include "test_helpers.hpp"

using namespace affes;
using affes::testing::random_image;

namespace {

/// Small enough for fast finite differences, but with every layer type.
Architecture tiny() { return {8, 8, 3, 4, 3, 6, 10}; }

std::vector<Image> random_batch(Rng& rng, int n, int h, int w) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(random_image(rng, h, w));
  return out;
}

long double cross_entropy_oracle(const std::vector<double>& logits, int label) {
  long double sum = 0.0L;
  for (double v : logits) sum += std::exp(static_cast<long double>(v));
  return -std::log(std::exp(static_cast<long double>(logits[static_cast<std::size_t>(label)])) / sum);
}

}  // namespace

TEST(Architecture, LayoutIsContiguous) {
  const Architecture a = Architecture::small();
  const auto layout = parameter_layout(a);
  ASSERT_EQ(layout.size(), 8u);
  std::size_t offset = 0;
  for (const auto& s : layout) {
    EXPECT_EQ(s.offset, offset);
    offset += s.size;
  }
  EXPECT_EQ(offset, a.parameter_count());
  EXPECT_EQ(a.flat_size(), 16 * 7 * 7);
  EXPECT_EQ(Architecture::full().parameter_count(),
            32u * 25 + 32 + 64 * 32 * 25 + 64 + 1024u * 3136 + 1024 + 10 * 1024 + 10);
}

TEST(Cnn, ZeroWeightsGiveZeroLogits) {
  Cnn<float> model(Architecture::small());
  Rng rng(1);
  const auto batch = random_batch(rng, 3, 28, 28);
  const auto logits = model.forward(batch);
  ASSERT_EQ(logits.size(), 30u);
  for (float v : logits) EXPECT_EQ(v, 0.0f);
}

TEST(Cnn, OneRowPerImageAndPermutationEquivariant) {
  Cnn<float> model(Architecture::small());
  model.initialize(3);
  Rng rng(2);
  auto batch = random_batch(rng, 4, 28, 28);
  const auto a = model.forward(batch);
  ASSERT_EQ(a.size(), 40u);
  std::swap(batch[0], batch[3]);
  const auto b = model.forward(batch);
  for (int j = 0; j < 10; ++j) {
    EXPECT_EQ(a[static_cast<std::size_t>(j)], b[static_cast<std::size_t>(30 + j)]);
    EXPECT_EQ(a[static_cast<std::size_t>(10 + j)], b[static_cast<std::size_t>(10 + j)]);
  }
  EXPECT_EQ(model.forward(batch), model.forward(batch));
  const auto single = model.forward(std::span<const Image>(&batch[1], 1));
  for (int j = 0; j < 10; ++j) EXPECT_NEAR(single[static_cast<std::size_t>(j)], b[static_cast<std::size_t>(10 + j)], 1e-5);
}

TEST(Cnn, WrongImageSizeIsShapeError) {
  Cnn<float> model(Architecture::small());
  std::vector<Image> batch{Image(27, 28)};
  EXPECT_THROW(model.forward(batch), ShapeError);
}

TEST(Cnn, InitializationIsSeededAndTruncated) {
  Cnn<float> a(Architecture::small()), b(Architecture::small()), c(Architecture::small());
  a.initialize(7);
  b.initialize(7);
  c.initialize(8);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
  for (const auto& s : parameter_layout(a.architecture())) {
    for (std::size_t i = 0; i < s.size; ++i) {
      const float p = a.parameters()[s.offset + i];
      if (s.is_bias) {
        EXPECT_EQ(p, 0.1f);
      } else {
        EXPECT_LE(std::abs(p), 0.2f);
      }
    }
  }
}

TEST(CrossEntropy, UniformAndSaturatedLogits) {
  Logits uniform{};
  EXPECT_NEAR(cross_entropy(uniform, 4), std::log(10.0), 1e-12);
  Logits peaked{};
  peaked[2] = 1000.0f;
  EXPECT_NEAR(cross_entropy(peaked, 2), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(cross_entropy(peaked, 3)));
  EXPECT_NEAR(cross_entropy(peaked, 3), 1000.0, 1e-9);
}

TEST(CrossEntropy, AgreesWithExtendedPrecisionOracle) {
  Rng rng(4);
  for (int n = 0; n < 1000; ++n) {
    std::vector<double> logits(10);
    for (auto& v : logits) v = 5.0 * rng.normal();
    const int label = static_cast<int>(rng.below(10));
    const double got = cross_entropy(std::span<const double>(logits), label);
    const long double want = cross_entropy_oracle(logits, label);
    EXPECT_LT(std::abs(got - static_cast<double>(want)), 1e-6 * std::max(1e-3, static_cast<double>(want)));
    EXPECT_GE(got, 0.0);
    double total = 0.0;
    for (int j = 0; j < 10; ++j) total += std::exp(-cross_entropy(std::span<const double>(logits), j));
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Cnn, LossMatchesForwardCrossEntropy) {
  Cnn<double> model(tiny());
  model.initialize(5);
  Rng rng(5);
  const auto batch = random_batch(rng, 3, 8, 8);
  const std::vector<int> labels{1, 7, 3};
  const auto logits = model.forward(batch);
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    expected += cross_entropy(std::span<const double>(logits.data() + 10 * i, 10), labels[static_cast<std::size_t>(i)]);
  }
  EXPECT_NEAR(model.loss(batch, labels), expected / 3, 1e-12);
  std::vector<double> grad(model.parameters().size());
  EXPECT_NEAR(model.loss_and_gradient(batch, labels, grad), expected / 3, 1e-12);
}

TEST(Cnn, GradientMatchesCentralDifferences) {
  Cnn<double> model(tiny());
  model.initialize(6);
  Rng rng(6);
  const auto batch = random_batch(rng, 3, 8, 8);
  const std::vector<int> labels{0, 4, 9};
  std::vector<double> grad(model.parameters().size());
  model.loss_and_gradient(batch, labels, grad);
  const auto pattern = model.activation_pattern(batch);

  const double h = 1e-5;
  const auto layout = parameter_layout(model.architecture());
  for (LayerKind kind : {LayerKind::conv, LayerKind::fc}) {
    std::vector<std::size_t> pool;
    for (const auto& s : layout)
      if (s.kind == kind)
        for (std::size_t i = 0; i < s.size; ++i) pool.push_back(s.offset + i);
    int checked = 0;
    for (int attempt = 0; checked < 100 && attempt < 1000; ++attempt) {
      const std::size_t idx = pool[rng.below(pool.size())];
      double& p = model.parameters()[idx];
      const double saved = p;
      p = saved + h;
      const double up = model.loss(batch, labels);
      const bool same_up = model.activation_pattern(batch) == pattern;
      p = saved - h;
      const double down = model.loss(batch, labels);
      const bool same_down = model.activation_pattern(batch) == pattern;
      p = saved;
      if (!same_up || !same_down) continue;  // straddles a ReLU or pooling kink
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max(std::abs(numeric), std::abs(grad[idx]));
      if (scale < 1e-8) {
        EXPECT_LT(std::abs(numeric - grad[idx]), 1e-10);
      } else {
        EXPECT_LT(std::abs(numeric - grad[idx]) / scale, 1e-4) << "parameter " << idx;
      }
      ++checked;
    }
    EXPECT_EQ(checked, 100);
  }
}

TEST(Cnn, DuplicatedBatchHasTheSameGradient) {
  Cnn<double> model(tiny());
  model.initialize(7);
  Rng rng(7);
  auto batch = random_batch(rng, 2, 8, 8);
  std::vector<int> labels{2, 5};
  std::vector<double> g1(model.parameters().size()), g2(g1.size());
  model.loss_and_gradient(batch, labels, g1);
  const auto batch_copy = batch;
  const auto labels_copy = labels;
  batch.insert(batch.end(), batch_copy.begin(), batch_copy.end());
  labels.insert(labels.end(), labels_copy.begin(), labels_copy.end());
  model.loss_and_gradient(batch, labels, g2);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-12);
}

TEST(Cnn, SaturatedFitHasVanishingGradient) {
  Cnn<double> model(tiny());
  model.initialize(8);
  const auto layout = parameter_layout(model.architecture());
  // Kill fc2 weights and put a huge bias on the true class.
  for (std::size_t i = 0; i < layout[6].size; ++i) model.parameters()[layout[6].offset + i] = 0.0;
  for (std::size_t i = 0; i < layout[7].size; ++i) model.parameters()[layout[7].offset + i] = i == 3 ? 60.0 : 0.0;
  Rng rng(8);
  const auto batch = random_batch(rng, 4, 8, 8);
  const std::vector<int> labels(4, 3);
  std::vector<double> grad(model.parameters().size());
  model.loss_and_gradient(batch, labels, grad);
  double norm2 = 0.0;
  for (double g : grad) norm2 += g * g;
  EXPECT_LT(std::sqrt(norm2), 1e-6);
}

TEST(TrainStep, ZeroLearningRateLeavesWeights) {
  Cnn<float> model(Architecture::small());
  model.initialize(9);
  const std::vector<float> before(model.parameters().begin(), model.parameters().end());
  Rng rng(9);
  const auto batch = random_batch(rng, 4, 28, 28);
  const std::vector<int> labels{1, 2, 3, 4};
  OptimizerState opt;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
    cfg.optimizer = kind;
    train_step(model, opt, batch, labels, cfg);
  }
  EXPECT_TRUE(std::equal(before.begin(), before.end(), model.parameters().begin()));
}

TEST(TrainStep, DeterministicAndDecreasesLoss) {
  Rng rng(10);
  const auto batch = random_batch(rng, 8, 28, 28);
  const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7};
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  std::vector<std::vector<float>> finals;
  for (int run = 0; run < 2; ++run) {
    Cnn<float> model(Architecture::small());
    model.initialize(11);
    OptimizerState opt;
    const double first = train_step(model, opt, batch, labels, cfg);
    double last = first;
    for (int i = 0; i < 20; ++i) last = train_step(model, opt, batch, labels, cfg);
    EXPECT_LT(last, first);
    EXPECT_EQ(opt.step, 21);
    finals.emplace_back(model.parameters().begin(), model.parameters().end());
  }
  EXPECT_EQ(finals[0], finals[1]);
}

TEST(TrainStep, NonFiniteLossIsDivergence) {
  Cnn<float> model(Architecture::small());
  model.initialize(12);
  std::vector<Image> batch{Image(28, 28)};
  batch[0].pixels[100] = std::numeric_limits<float>::infinity();
  OptimizerState opt;
  EXPECT_THROW(train_step(model, opt, batch, std::vector<int>{1}, TrainConfig{}), DivergenceError);
}

TEST(Checkpoint, RoundTripAndRejections) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "affes_ckpt_test.bin";
  Cnn<float> model(Architecture::small());
  model.initialize(13);
  save_checkpoint(path, model, 99);
  const LoadedCheckpoint loaded = load_checkpoint(path, Architecture::small());
  EXPECT_EQ(loaded.seed, 99u);
  EXPECT_TRUE(std::equal(model.parameters().begin(), model.parameters().end(),
                         loaded.model->parameters().begin()));
  EXPECT_THROW(load_checkpoint(path, Architecture::full()), CheckpointError);

  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 10);
  EXPECT_THROW(load_checkpoint(path, Architecture::small()), CheckpointError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACHECKPOINT";
  }
  EXPECT_THROW(load_checkpoint(path, Architecture::small()), CheckpointError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path, Architecture::small()), IoError);
}

TEST(CnnClassifier, AdaptsFloatModel) {
  auto model = std::make_shared<Cnn<float>>(Architecture::small());
  model->initialize(14);
  const CnnClassifier clf(model);
  Rng rng(14);
  const auto batch = random_batch(rng, 3, 28, 28);
  const auto logits = clf.logits(batch);
  const auto raw = model->forward(batch);
  ASSERT_EQ(logits.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(logits[i][j], raw[i * 10 + j]);
}
