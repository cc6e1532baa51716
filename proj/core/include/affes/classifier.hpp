#pragma once

#include <array>
#include <atomic>
#include <compare>
#include <span>
#include <vector>

#include "affes/dataset.hpp"

namespace affes {

inline constexpr int kNumClasses = 10;
using Logits = std::array<float, kNumClasses>;

/// Anything that maps a batch of images to class scores. Implementations must
/// allow concurrent logits() calls.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<Logits> logits(std::span<const Image> batch) const = 0;
};

/// Argmax; the lowest class id wins ties.
int predict(std::span<const float> logits);
inline int predict(const Logits& logits) { return predict(std::span<const float>(logits)); }

/// -log softmax(logits)[label], with max-subtraction. Accumulates in double.
template <typename T>
double cross_entropy(std::span<const T> logits, int label);
inline double cross_entropy(const Logits& logits, int label) {
  return cross_entropy(std::span<const float>(logits), label);
}

/// Severity of one evaluated transform. Ordered lexicographically: a
/// misclassification outranks any loss, then the larger loss is worse.
struct CandidateScore {
  bool misclassified = false;
  double loss = 0.0;

  auto operator<=>(const CandidateScore&) const = default;
};

/// Three-way severity comparison of two scores (greater = worse for the model).
inline std::partial_ordering compare(const CandidateScore& a, const CandidateScore& b) {
  return a <=> b;
}

/// Selection rule for running maxima: a later candidate replaces the incumbent
/// only when strictly worse, so the first-seen candidate wins exact ties.
inline bool is_worse(const CandidateScore& challenger, const CandidateScore& incumbent) {
  return challenger > incumbent;
}

CandidateScore score_logits(const Logits& logits, int label);

/// Forwards to another classifier and counts every image it evaluates.
class CountingClassifier final : public Classifier {
 public:
  explicit CountingClassifier(const Classifier& inner) : inner_(inner) {}

  std::vector<Logits> logits(std::span<const Image> batch) const override {
    calls_.fetch_add(static_cast<std::int64_t>(batch.size()), std::memory_order_relaxed);
    return inner_.logits(batch);
  }

  std::int64_t count() const { return calls_.load(); }
  void reset() { calls_.store(0); }

 private:
  const Classifier& inner_;
  mutable std::atomic<std::int64_t> calls_{0};
};

}  // namespace affes
