#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "affes/attack.hpp"
#include "affes/dataset.hpp"
#include "affes/es.hpp"
#include "affes/model.hpp"
#include "affes/space.hpp"

namespace affes {

enum class AttackKind { worst_of_k, grid, one_plus_one, cma };

/// Attack selector plus its budget.
struct AttackSpec {
  AttackKind kind = AttackKind::worst_of_k;
  int k = 10;
  std::vector<int> grid_counts;
  OnePlusOneOptions one_plus_one;
  CmaOptions cma;
  double cma_sigma0 = 0.4;
  WarpMode warp_mode = WarpMode::single_pass;

  /// Forward passes one attack on one image costs in a space of dimension d.
  std::int64_t forward_passes(int d) const;
  std::string label() const;
};

enum class RegimeKind { standard, augmented, robust };
enum class Augmentation { flip, random_affine };

struct Regime {
  RegimeKind kind = RegimeKind::standard;
  AttackSpec attack;
  Augmentation augmentation = Augmentation::flip;
  ConstraintSpace space = ConstraintSpace::translations_rotation();

  /// Throws ConfigError if a robust regime has no usable attack budget.
  void validate() const;
  std::string label() const;
};

std::string_view regime_name(RegimeKind kind);
std::optional<RegimeKind> parse_regime(std::string_view name);

/// Model init, batch order and attack randomness each get their own stream.
struct TrainSeeds {
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t attack = 0;

  static TrainSeeds derive(std::uint64_t master);
};

struct ProgressEntry {
  std::int64_t iteration = 0;
  double loss = 0.0;
  /// Accuracy of the pre-update model on the untransformed batch.
  double natural_batch_accuracy = 0.0;
};
using ProgressFn = std::function<void(const ProgressEntry&)>;

struct TrainOptions {
  Architecture architecture = Architecture::full();
  TrainConfig config;
  TrainSeeds seeds;
  int jobs = 1;
  int log_every = 50;
  ProgressFn progress;
};

struct TrainResult {
  std::shared_ptr<Cnn<float>> model;
  std::vector<ProgressEntry> log;
  /// Forward passes spent inside attacks (robust regime only).
  std::int64_t attack_forward_passes = 0;
  /// (1+1)-ES attacks that hit the resample cap and restarted.
  std::int64_t attack_restarts = 0;
};

/// Minibatches of distinct examples, reshuffled every epoch; the tail of an
/// epoch that does not fill a batch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  void reshuffle();
};

/// Plain minibatch training on the examples as given.
TrainResult train_standard(const Dataset& ds, const TrainOptions& options);

/// Originals followed by one copy of each example that is mirrored with
/// probability 1/2. Copies get indices after the largest original index.
Dataset augment_flip(const Dataset& ds, Rng& rng);

/// Originals followed by one uniformly random transform from `space` per example.
Dataset augment_random_affine(const Dataset& ds, const ConstraintSpace& space, Rng& rng,
                              WarpMode mode = WarpMode::single_pass);

/// Every iteration replaces each batch example by its worst transform under
/// the regime's attack, then takes one optimizer step on the transformed
/// batch. ES states persist in `store`, keyed by example index.
TrainResult train_robust(const Dataset& ds, const TrainOptions& options, const Regime& regime,
                         EsStateStore& store);

/// Dispatches on the regime kind.
TrainResult train(const Dataset& ds, const TrainOptions& options, const Regime& regime,
                  EsStateStore& store);

// ---- evaluation -------------------------------------------------------------

enum class EvalModeKind { natural, worst_of_k, grid, es };

struct EvalMode {
  EvalModeKind kind = EvalModeKind::natural;
  int k = 10;
  std::vector<int> counts;
  int iterations = 10;

  static EvalMode natural() { return {}; }
  static EvalMode worst_of(int k) { return {EvalModeKind::worst_of_k, k, {}, 0}; }
  static EvalMode grid(std::vector<int> counts) { return {EvalModeKind::grid, 0, std::move(counts), 0}; }
  static EvalMode es(int iterations) { return {EvalModeKind::es, 0, {}, iterations}; }

  /// "natural", "worst_of_k(10)", "grid(5,5,31)" or "es(10)".
  std::string label() const;
  /// Inverse of label(). Throws ConfigError.
  static EvalMode parse(std::string_view text);
  /// Natural and grid results do not depend on the attack seed.
  bool is_random() const { return kind == EvalModeKind::worst_of_k || kind == EvalModeKind::es; }
};

inline constexpr double kEvalEsSigma0 = 0.75;

struct ModeResult {
  EvalMode mode;
  /// One accuracy per (model, seed) run.
  std::vector<double> accuracies;
  std::vector<std::int64_t> correct;
  std::int64_t total = 0;
  std::int64_t forward_passes = 0;
  /// (1+1)-ES attacks that hit the resample cap and restarted.
  std::int64_t attack_restarts = 0;

  double mean() const;
  /// Population standard deviation; 0 for a single run.
  double stddev() const;
};

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::vector<ModeResult> modes;
};

struct EvalOptions {
  ConstraintSpace space = ConstraintSpace::translations_rotation();
  WarpMode warp_mode = WarpMode::single_pass;
  int jobs = 1;
};

/// Per mode, the fraction of examples that stay correctly classified under
/// that mode's worst case. Every candidate set includes the identity, and ES
/// runs start from a fresh state with sigma0 = 0.75.
EvalReport evaluate(const Classifier& model, const Dataset& ds, const std::vector<EvalMode>& modes,
                    const std::vector<std::uint64_t>& seeds, const EvalOptions& options = {});

/// Pools the runs of several reports over the same modes (e.g. several models).
EvalReport merge_reports(const std::vector<EvalReport>& reports);

/// "mean±std" in percent with two decimals.
std::string format_cell(const ModeResult& result);

/// Rows are regimes, columns are eval modes.
void write_eval_csv(std::ostream& out, const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace affes
