#include "affes/train.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "affes/errors.hpp"
#include "affes/parallel.hpp"

namespace affes {

std::int64_t AttackSpec::forward_passes(int d) const {
  switch (kind) {
    case AttackKind::worst_of_k:
      return k;
    case AttackKind::grid: {
      std::int64_t total = 1;
      for (int c : grid_counts) total *= c;
      return grid_counts.empty() ? 0 : total;
    }
    case AttackKind::one_plus_one:
      return one_plus_one.iterations;
    case AttackKind::cma:
      return static_cast<std::int64_t>(cma.update_calls) *
             (cma.population > 0 ? cma.population : population_size(d));
  }
  return 0;
}

std::string AttackSpec::label() const {
  std::ostringstream out;
  switch (kind) {
    case AttackKind::worst_of_k:
      out << "worst_of_k(" << k << ")";
      break;
    case AttackKind::grid:
      out << "grid(";
      for (std::size_t i = 0; i < grid_counts.size(); ++i) out << (i ? "," : "") << grid_counts[i];
      out << ")";
      break;
    case AttackKind::one_plus_one:
      out << "es(" << one_plus_one.iterations << ")";
      break;
    case AttackKind::cma:
      out << "cma(" << cma.update_calls << ")";
      break;
  }
  return out.str();
}

std::string_view regime_name(RegimeKind kind) {
  switch (kind) {
    case RegimeKind::standard:
      return "standard";
    case RegimeKind::augmented:
      return "augmented";
    case RegimeKind::robust:
      return "robust";
  }
  return "?";
}

std::optional<RegimeKind> parse_regime(std::string_view name) {
  for (RegimeKind k : {RegimeKind::standard, RegimeKind::augmented, RegimeKind::robust}) {
    if (regime_name(k) == name) return k;
  }
  return std::nullopt;
}

void Regime::validate() const {
  if (kind != RegimeKind::robust) return;
  if (attack.kind == AttackKind::grid &&
      attack.grid_counts.size() != static_cast<std::size_t>(space.dim())) {
    throw ConfigError("robust grid attack needs one count per free parameter");
  }
  if (attack.forward_passes(space.dim()) < 1) {
    throw ConfigError("robust regime needs an attack budget of at least one forward pass");
  }
}

std::string Regime::label() const {
  if (kind == RegimeKind::robust) return "robust " + attack.label();
  if (kind == RegimeKind::augmented) {
    return augmentation == Augmentation::flip ? "augmented flip" : "augmented random_affine";
  }
  return "standard";
}

TrainSeeds TrainSeeds::derive(std::uint64_t master) {
  return {mix_seed(master, 1), mix_seed(master, 2), mix_seed(master, 3)};
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed), order_(dataset_size) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (batch_size > dataset_size) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(dataset_size));
  }
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(mix_seed(seed_, epoch_));
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[rng.below(i)]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_size_ > order_.size()) {
    ++epoch_;
    reshuffle();
  }
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  return batch;
}

namespace {

void check_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (cfg.iterations < 0) throw ConfigError("train.iterations must be >= 0");
}

double batch_accuracy(const Cnn<float>& model, std::span<const Image> images,
                      std::span<const int> labels) {
  const std::vector<float> logits = model.forward(images);
  const auto classes = static_cast<std::size_t>(model.architecture().classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::span<const float> row(logits.data() + i * classes, classes);
    if (predict(row) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

/// `transform(iteration, indices, images, model)` may overwrite the batch images
/// before the optimizer step.
template <typename Transform>
TrainResult run_training(const Dataset& ds, const TrainOptions& options, Transform&& transform) {
  check_train_config(options.config);
  TrainResult result;
  result.model = std::make_shared<Cnn<float>>(options.architecture);
  result.model->initialize(options.seeds.init);
  if (options.config.iterations == 0) return result;

  BatchSampler sampler(ds.size(), static_cast<std::size_t>(options.config.batch_size),
                       options.seeds.shuffle);
  OptimizerState optimizer;
  std::vector<Image> images;
  std::vector<int> labels;
  const int log_every = std::max(1, options.log_every);
  for (std::int64_t it = 0; it < options.config.iterations; ++it) {
    const std::vector<std::size_t> indices = sampler.next();
    images.clear();
    labels.clear();
    for (std::size_t i : indices) {
      images.push_back(ds[i].image);
      labels.push_back(ds[i].label);
    }
    const bool log_now = it % log_every == 0 || it + 1 == options.config.iterations;
    double natural_accuracy = 0.0;
    if (log_now) natural_accuracy = batch_accuracy(*result.model, images, labels);

    transform(it, indices, images, result.model);
    const double loss = train_step(*result.model, optimizer, images, labels, options.config);

    if (log_now) {
      const ProgressEntry entry{it, loss, natural_accuracy};
      result.log.push_back(entry);
      if (options.progress) options.progress(entry);
    }
  }
  return result;
}

}  // namespace

TrainResult train_standard(const Dataset& ds, const TrainOptions& options) {
  return run_training(ds, options, [](std::int64_t, const auto&, auto&, const auto&) {});
}

namespace {

std::int64_t next_free_index(const Dataset& ds) {
  std::int64_t max_index = -1;
  for (const auto& ex : ds.examples) max_index = std::max(max_index, ex.index);
  return max_index + 1;
}

}  // namespace

Dataset augment_flip(const Dataset& ds, Rng& rng) {
  Dataset out;
  out.name = ds.name + "+flip";
  out.examples = ds.examples;
  const std::int64_t base = next_free_index(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    LabeledExample copy = ds[i];
    if (rng.coin()) copy.image = flip_horizontal(copy.image);
    copy.index = base + static_cast<std::int64_t>(i);
    out.examples.push_back(std::move(copy));
  }
  return out;
}

Dataset augment_random_affine(const Dataset& ds, const ConstraintSpace& space, Rng& rng,
                              WarpMode mode) {
  Dataset out;
  out.name = ds.name + "+affine";
  out.examples = ds.examples;
  const std::int64_t base = next_free_index(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    LabeledExample copy = ds[i];
    copy.image = warp_image(copy.image, space.denormalize(space.sample_uniform(rng)), mode);
    copy.index = base + static_cast<std::int64_t>(i);
    out.examples.push_back(std::move(copy));
  }
  return out;
}

namespace {

AttackOutcome attack_example(const LabeledExample& ex, const Classifier& classifier,
                             const ConstraintSpace& space, const AttackSpec& spec, Rng& rng,
                             EsStateStore& store) {
  AttackOptions ao;
  ao.warp_mode = spec.warp_mode;
  switch (spec.kind) {
    case AttackKind::worst_of_k:
      return worst_of_k(ex.image, ex.label, classifier, space, spec.k, rng, ao);
    case AttackKind::grid:
      return grid_search(ex.image, ex.label, classifier, space, spec.grid_counts, ao);
    case AttackKind::one_plus_one: {
      ao.restart_on_infeasible = true;
      EsState state = store.get_or_init(ex.index, space, spec.one_plus_one.sigma0,
                                        EsAlgorithm::one_plus_one);
      // The model changed since the stored score was measured.
      state.best_score.reset();
      auto [outcome, next] =
          one_plus_one_es(ex.image, ex.label, classifier, space, std::move(state),
                          spec.one_plus_one, rng, ao);
      store.put(ex.index, std::move(next));
      return outcome;
    }
    case AttackKind::cma: {
      EsState state = store.get_or_init(ex.index, space, spec.cma_sigma0, EsAlgorithm::cma);
      state.best_score.reset();
      auto [outcome, next] =
          cma_es(ex.image, ex.label, classifier, space, std::move(state), spec.cma, rng, ao);
      store.put(ex.index, std::move(next));
      return outcome;
    }
  }
  throw ConfigError("unknown attack kind");
}

}  // namespace

TrainResult train_robust(const Dataset& ds, const TrainOptions& options, const Regime& regime,
                         EsStateStore& store) {
  if (regime.kind != RegimeKind::robust) throw ConfigError("train_robust needs a robust regime");
  regime.validate();
  const std::int64_t budget = regime.attack.forward_passes(regime.space.dim());

  std::int64_t spent = 0;
  std::atomic<std::int64_t> restarts = 0;
  TrainResult result = run_training(
      ds, options,
      [&](std::int64_t iteration, const std::vector<std::size_t>& indices, std::vector<Image>& images,
          const std::shared_ptr<Cnn<float>>& model) {
        CnnClassifier classifier(model);
        CountingClassifier counter(classifier);
        parallel_for(indices.size(), options.jobs, [&](std::size_t j) {
          const LabeledExample& ex = ds[indices[j]];
          Rng rng(mix_seed(options.seeds.attack, static_cast<std::uint64_t>(iteration),
                           static_cast<std::uint64_t>(ex.index)));
          try {
            AttackOutcome out = attack_example(ex, counter, regime.space, regime.attack, rng, store);
            restarts += out.infeasible_restarts;
            images[j] = std::move(out.adversarial_image);
          } catch (const InfeasibleError& e) {
            throw InfeasibleError("attack on training example " + std::to_string(ex.index) +
                                  " at iteration " + std::to_string(iteration) + ": " + e.what());
          }
        });
        const std::int64_t expected = budget * static_cast<std::int64_t>(indices.size());
        if (counter.count() != expected) {
          throw std::logic_error("attack forward-pass audit failed: spent " +
                                 std::to_string(counter.count()) + ", expected " +
                                 std::to_string(expected));
        }
        spent += counter.count();
      });
  result.attack_forward_passes = spent;
  result.attack_restarts = restarts;
  return result;
}

TrainResult train(const Dataset& ds, const TrainOptions& options, const Regime& regime,
                  EsStateStore& store) {
  regime.validate();
  switch (regime.kind) {
    case RegimeKind::standard:
      return train_standard(ds, options);
    case RegimeKind::augmented: {
      Rng rng(mix_seed(options.seeds.attack, 0));
      const Dataset augmented = regime.augmentation == Augmentation::flip
                                    ? augment_flip(ds, rng)
                                    : augment_random_affine(ds, regime.space, rng,
                                                            regime.attack.warp_mode);
      return train_standard(augmented, options);
    }
    case RegimeKind::robust:
      return train_robust(ds, options, regime, store);
  }
  throw ConfigError("unknown regime");
}

// ---- evaluation -------------------------------------------------------------

std::string EvalMode::label() const {
  std::ostringstream out;
  switch (kind) {
    case EvalModeKind::natural:
      out << "natural";
      break;
    case EvalModeKind::worst_of_k:
      out << "worst_of_k(" << k << ")";
      break;
    case EvalModeKind::grid:
      out << "grid(";
      for (std::size_t i = 0; i < counts.size(); ++i) out << (i ? "," : "") << counts[i];
      out << ")";
      break;
    case EvalModeKind::es:
      out << "es(" << iterations << ")";
      break;
  }
  return out.str();
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

int parse_positive(std::string_view s, std::string_view context) {
  s = trim(s);
  int value = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (s.empty() || ec != std::errc{} || ptr != end || value < 1) {
    throw ConfigError("bad count '" + std::string(s) + "' in eval mode '" + std::string(context) + "'");
  }
  return value;
}

}  // namespace

EvalMode EvalMode::parse(std::string_view text) {
  const std::string_view s = trim(text);
  if (s == "natural") return natural();
  const auto open = s.find('(');
  if (open == std::string_view::npos || s.back() != ')') {
    throw ConfigError("unknown eval mode '" + std::string(s) + "'");
  }
  const std::string_view name = trim(s.substr(0, open));
  const std::string_view args = s.substr(open + 1, s.size() - open - 2);
  if (name == "worst_of_k") return worst_of(parse_positive(args, s));
  if (name == "es") return es(parse_positive(args, s));
  if (name == "grid") {
    std::vector<int> counts;
    std::size_t start = 0;
    while (true) {
      const auto comma = args.find(',', start);
      counts.push_back(parse_positive(args.substr(start, comma - start), s));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return grid(std::move(counts));
  }
  throw ConfigError("unknown eval mode '" + std::string(s) + "'");
}

double ModeResult::mean() const {
  if (accuracies.empty()) return 0.0;
  return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) /
         static_cast<double>(accuracies.size());
}

double ModeResult::stddev() const {
  if (accuracies.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double a : accuracies) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(accuracies.size()));
}

namespace {

/// FNV-1a; keys the per-mode random stream by the mode's label.
std::uint64_t label_key(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ExampleResult {
  bool correct = false;
  std::int64_t forward_passes = 0;
  int restarts = 0;
};

ExampleResult evaluate_example(const Classifier& model, const LabeledExample& ex,
                               const EvalMode& mode, const EvalOptions& options, Rng& rng) {
  AttackOptions ao;
  ao.warp_mode = options.warp_mode;
  ao.include_identity = true;
  switch (mode.kind) {
    case EvalModeKind::natural: {
      const std::vector<Logits> logits = model.logits(std::span<const Image>(&ex.image, 1));
      return {predict(logits[0]) == ex.label, 1};
    }
    case EvalModeKind::worst_of_k: {
      const AttackOutcome out = worst_of_k(ex.image, ex.label, model, options.space, mode.k, rng, ao);
      return {!out.score.misclassified, out.forward_passes};
    }
    case EvalModeKind::grid: {
      const AttackOutcome out = grid_search(ex.image, ex.label, model, options.space, mode.counts, ao);
      return {!out.score.misclassified, out.forward_passes};
    }
    case EvalModeKind::es: {
      const std::vector<Logits> logits = model.logits(std::span<const Image>(&ex.image, 1));
      const bool natural_correct = predict(logits[0]) == ex.label;
      OnePlusOneOptions es;
      es.iterations = mode.iterations;
      es.sigma0 = kEvalEsSigma0;
      ao.restart_on_infeasible = true;
      const auto [out, state] =
          one_plus_one_es(ex.image, ex.label, model, options.space,
                          EsState::fresh(options.space.identity_point(), kEvalEsSigma0), es, rng, ao);
      return {natural_correct && !out.score.misclassified, 1 + out.forward_passes,
              out.infeasible_restarts};
    }
  }
  throw ConfigError("unknown eval mode");
}

}  // namespace

EvalReport evaluate(const Classifier& model, const Dataset& ds, const std::vector<EvalMode>& modes,
                    const std::vector<std::uint64_t>& seeds, const EvalOptions& options) {
  if (seeds.empty()) throw ConfigError("evaluation needs at least one seed");
  if (ds.size() == 0) throw ConfigError("evaluation dataset is empty");
  EvalReport report;
  report.seeds = seeds;
  for (const EvalMode& mode : modes) {
    if (mode.kind == EvalModeKind::grid &&
        mode.counts.size() != static_cast<std::size_t>(options.space.dim())) {
      throw ConfigError("eval mode " + mode.label() + " needs " +
                        std::to_string(options.space.dim()) + " counts");
    }
    ModeResult result;
    result.mode = mode;
    result.total = static_cast<std::int64_t>(ds.size());
    const std::uint64_t key = label_key(mode.label());
    std::optional<std::int64_t> deterministic_correct;
    for (std::uint64_t seed : seeds) {
      if (!mode.is_random() && deterministic_correct) {
        result.correct.push_back(*deterministic_correct);
        result.accuracies.push_back(static_cast<double>(*deterministic_correct) /
                                    static_cast<double>(ds.size()));
        continue;
      }
      std::vector<ExampleResult> per_example(ds.size());
      parallel_for(ds.size(), options.jobs, [&](std::size_t i) {
        const LabeledExample& ex = ds[i];
        Rng rng(mix_seed(seed, key, static_cast<std::uint64_t>(ex.index)));
        per_example[i] = evaluate_example(model, ex, mode, options, rng);
      });
      std::int64_t correct = 0;
      for (const auto& r : per_example) {
        correct += r.correct ? 1 : 0;
        result.forward_passes += r.forward_passes;
        result.attack_restarts += r.restarts;
      }
      if (!mode.is_random()) deterministic_correct = correct;
      result.correct.push_back(correct);
      result.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(ds.size()));
    }
    report.modes.push_back(std::move(result));
  }
  return report;
}

EvalReport merge_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) return {};
  EvalReport merged = reports.front();
  for (std::size_t r = 1; r < reports.size(); ++r) {
    const EvalReport& next = reports[r];
    if (next.modes.size() != merged.modes.size()) {
      throw ConfigError("cannot merge reports with different eval modes");
    }
    merged.seeds.insert(merged.seeds.end(), next.seeds.begin(), next.seeds.end());
    for (std::size_t m = 0; m < merged.modes.size(); ++m) {
      ModeResult& into = merged.modes[m];
      const ModeResult& from = next.modes[m];
      if (into.mode.label() != from.mode.label() || into.total != from.total) {
        throw ConfigError("cannot merge reports with different eval modes or datasets");
      }
      into.accuracies.insert(into.accuracies.end(), from.accuracies.begin(), from.accuracies.end());
      into.correct.insert(into.correct.end(), from.correct.begin(), from.correct.end());
      into.forward_passes += from.forward_passes;
      into.attack_restarts += from.attack_restarts;
    }
  }
  return merged;
}

std::string format_cell(const ModeResult& result) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", 100.0 * result.mean(), 100.0 * result.stddev());
  return buf;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

}  // namespace

void write_eval_csv(std::ostream& out, const std::vector<std::pair<std::string, EvalReport>>& rows) {
  if (rows.empty()) return;
  const auto& head = rows.front().second.modes;
  out << "regime";
  for (const auto& m : head) out << ',' << csv_field(m.mode.label());
  out << '\n';
  for (const auto& [name, report] : rows) {
    if (report.modes.size() != head.size()) {
      throw ConfigError("all report rows must share the same eval modes");
    }
    out << csv_field(name);
    for (const auto& m : report.modes) out << ',' << format_cell(m);
    out << '\n';
  }
}

}  // namespace affes
