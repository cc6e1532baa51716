#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "affes/classifier.hpp"
#include "affes/dataset.hpp"

namespace affes {

/// conv(k x k, same) -> ReLU -> maxpool 2x2 -> conv -> ReLU -> maxpool 2x2
/// -> fc -> ReLU -> fc (logits).
struct Architecture {
  int input_height = 28;
  int input_width = 28;
  int conv1_filters = 32;
  int conv2_filters = 64;
  int kernel = 5;
  int fc_units = 1024;
  int classes = kNumClasses;

  /// 32/64 filters, 1024-unit hidden layer.
  static Architecture full() { return {}; }
  /// 8/16 filters, 128-unit hidden layer, for fast runs.
  static Architecture small() { return {28, 28, 8, 16, 5, 128, kNumClasses}; }

  int pooled1_height() const { return input_height / 2; }
  int pooled1_width() const { return input_width / 2; }
  int pooled2_height() const { return pooled1_height() / 2; }
  int pooled2_width() const { return pooled1_width() / 2; }
  int flat_size() const { return conv2_filters * pooled2_height() * pooled2_width(); }
  std::size_t parameter_count() const;

  bool operator==(const Architecture&) const = default;
};

enum class LayerKind { conv, fc };

/// A named slice of the flat parameter vector.
struct TensorSlice {
  std::string name;
  LayerKind kind;
  bool is_bias;
  std::size_t offset;
  std::size_t size;
};

std::vector<TensorSlice> parameter_layout(const Architecture& arch);

/// The reference CNN. Parameters live in one flat vector in the order
/// conv1.w, conv1.b, conv2.w, conv2.b, fc1.w, fc1.b, fc2.w, fc2.b; weight
/// matrices are row-major (out, in).
template <typename T>
class Cnn {
 public:
  explicit Cnn(const Architecture& arch);

  /// Truncated normal (sigma 0.1, cut at 2 sigma) weights, 0.1 biases.
  void initialize(std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }

  /// Row-major (batch, classes) logits. Throws ShapeError on size mismatch.
  std::vector<T> forward(std::span<const Image> batch) const;

  /// Mean cross-entropy over the batch; writes d(loss)/d(params) into grad.
  double loss_and_gradient(std::span<const Image> batch, std::span<const int> labels,
                           std::span<T> grad) const;

  /// Mean cross-entropy only.
  double loss(std::span<const Image> batch, std::span<const int> labels) const;

  /// ReLU on/off bits and max-pool winners for the batch. Two parameter
  /// vectors with equal patterns lie in the same differentiable piece.
  std::vector<std::uint8_t> activation_pattern(std::span<const Image> batch) const;

 private:
  struct Trace;
  void forward_image(const Image& image, Trace* trace, std::vector<std::uint8_t>* pattern,
                     T* flat_out) const;

  Architecture arch_;
  // Fixed alignment keeps Eigen's vectorized reductions in the same order
  // regardless of where the buffer lands.
  std::vector<T, Eigen::aligned_allocator<T>> params_;
  std::vector<TensorSlice> layout_;
};

extern template class Cnn<float>;
extern template class Cnn<double>;

/// Classifier adapter over a float CNN. Holds the model by shared pointer so
/// evaluation workers can share it read-only.
class CnnClassifier final : public Classifier {
 public:
  explicit CnnClassifier(std::shared_ptr<const Cnn<float>> model);
  std::vector<Logits> logits(std::span<const Image> batch) const override;
  const Cnn<float>& model() const { return *model_; }

 private:
  std::shared_ptr<const Cnn<float>> model_;
};

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-4;
  int batch_size = 128;
  int iterations = 10000;
  std::uint64_t seed = 0;
};

/// Adam moments (unused by SGD).
struct OptimizerState {
  std::vector<float> first_moment;
  std::vector<float> second_moment;
  std::int64_t step = 0;
};

/// One optimizer update on the batch; returns the pre-update mean loss.
/// Throws DivergenceError if the loss or gradient is not finite.
double train_step(Cnn<float>& model, OptimizerState& optimizer, std::span<const Image> batch,
                  std::span<const int> labels, const TrainConfig& cfg);

/// Checkpoint: "AFESCNN1", u32 version, seven u32 architecture constants,
/// u64 seed, u64 parameter count, then little-endian float32 parameters.
void save_checkpoint(const std::filesystem::path& path, const Cnn<float>& model,
                     std::uint64_t seed);

struct LoadedCheckpoint {
  std::shared_ptr<Cnn<float>> model;
  std::uint64_t seed = 0;
};

/// Throws CheckpointError on a bad header, truncation, or when the stored
/// architecture differs from `expected`.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const Architecture& expected);

}  // namespace affes
