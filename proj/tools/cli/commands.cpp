#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "affes/errors.hpp"
#include "affes/image_io.hpp"
#include "affes/sigma0.hpp"
#include "config.hpp"

namespace affes::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

fs::path prepare_output(const json& resolved, const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.output_dir.string() + ": " + ec.message());
  std::ostringstream text;
  write_config_text(text, resolved);
  write_file(cfg.output_dir / "config.resolved", text.str());
  return cfg.output_dir;
}

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, value);
  return buf;
}

/// Display units: degrees for angles, pixels and factors otherwise.
double to_display(Param p, double value) { return is_angle(p) ? value * 180.0 / std::numbers::pi : value; }

json transform_json(const TransformParams& t) {
  json out = json::object();
  for (Param p : kAllParams) out[std::string(param_name(p))] = to_display(p, get_param(t, p));
  return out;
}

const LabeledExample& example_at(const Dataset& ds, std::size_t index) {
  if (index >= ds.size()) {
    throw BoundsError("index " + std::to_string(index) + " is outside the " + ds.name + " split (size " +
                      std::to_string(ds.size()) + ")");
  }
  return ds[index];
}

std::shared_ptr<Cnn<float>> load_model(const fs::path& checkpoint, const RunConfig& cfg) {
  return load_checkpoint(checkpoint, cfg.architecture).model;
}

json mode_json(const ModeResult& m) {
  return {{"mode", m.mode.label()},
          {"accuracies", m.accuracies},
          {"correct", m.correct},
          {"total", m.total},
          {"forward_passes", m.forward_passes},
          {"attack_restarts", m.attack_restarts}};
}

}  // namespace

json resolve_invocation(const Invocation& inv, std::string_view command) {
  json user = inv.config_file ? parse_config_text(read_file(*inv.config_file), inv.config_file->string())
                              : json::object();
  if (inv.seed) {
    if (command == "train") {
      user["model"]["seed"] = *inv.seed;
    } else if (command == "eval") {
      user["eval"]["seeds"] = json::array({*inv.seed});
    } else if (command == "attack") {
      user["attack"]["seed"] = *inv.seed;
    }
  }
  if (inv.out_dir) user["output"]["dir"] = inv.out_dir->string();
  return resolve_config(user);
}

void cmd_train(const json& resolved, int jobs, std::ostream& out) {
  const RunConfig cfg = RunConfig::from_json(resolved);
  const Dataset ds = load_split(cfg.data, Split::train);
  const fs::path dir = prepare_output(resolved, cfg);

  TrainOptions options;
  options.architecture = cfg.architecture;
  options.config = cfg.train;
  options.seeds = TrainSeeds::derive(cfg.model_seed);
  options.jobs = jobs;
  options.log_every = cfg.log_every;

  std::ostringstream log;
  log << "# regime " << cfg.regime.label() << "\n";
  log << "# seed " << cfg.model_seed << " init " << options.seeds.init << " shuffle "
      << options.seeds.shuffle << " attack " << options.seeds.attack << "\n";
  log << "# examples " << ds.size() << " iterations " << cfg.train.iterations << " batch "
      << cfg.train.batch_size << "\n";
  log << "# iteration loss natural_batch_accuracy\n";
  options.progress = [&](const ProgressEntry& e) {
    const std::string line = std::to_string(e.iteration) + " " + fmt("%.6f", e.loss) + " " +
                             fmt("%.6f", e.natural_batch_accuracy);
    log << line << "\n";
    out << "iteration " << line << std::endl;
  };

  const auto start = std::chrono::steady_clock::now();
  EsStateStore store;
  const TrainResult result = train(ds, options, cfg.regime, store);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  log << "# attack_forward_passes " << result.attack_forward_passes << "\n";
  log << "# attack_restarts " << result.attack_restarts << "\n";
  save_checkpoint(dir / "checkpoint.bin", *result.model, cfg.model_seed);
  write_file(dir / "train.log", log.str());
  out << "trained " << cfg.regime.label() << " in " << fmt("%.1f", seconds) << " s; wrote "
      << (dir / "checkpoint.bin").string() << "\n";
}

void cmd_eval(const json& resolved, const std::vector<fs::path>& checkpoints, int jobs, std::ostream& out) {
  if (checkpoints.empty()) throw ConfigError("eval needs at least one --checkpoint");
  const RunConfig cfg = RunConfig::from_json(resolved);
  const Dataset ds = load_split(cfg.data, cfg.eval_split);
  std::vector<std::shared_ptr<Cnn<float>>> models;
  for (const auto& path : checkpoints) models.push_back(load_model(path, cfg));
  const fs::path dir = prepare_output(resolved, cfg);

  EvalOptions options;
  options.space = cfg.space;
  options.warp_mode = cfg.regime.attack.warp_mode;
  options.jobs = jobs;

  std::vector<EvalReport> reports;
  json detail;
  detail["split"] = ds.name;
  detail["examples"] = ds.size();
  detail["seeds"] = cfg.eval_seeds;
  detail["checkpoints"] = json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const CnnClassifier clf(models[i]);
    reports.push_back(evaluate(clf, ds, cfg.eval_modes, cfg.eval_seeds, options));
    json entry{{"file", checkpoints[i].filename().string()}, {"modes", json::array()}};
    for (const auto& m : reports.back().modes) entry["modes"].push_back(mode_json(m));
    detail["checkpoints"].push_back(std::move(entry));
  }
  const EvalReport pooled = merge_reports(reports);
  detail["pooled"] = json::array();
  for (const auto& m : pooled.modes) {
    detail["pooled"].push_back(
        {{"mode", m.mode.label()}, {"mean", m.mean()}, {"std", m.stddev()}, {"cell", format_cell(m)}});
  }

  std::ostringstream csv;
  write_eval_csv(csv, {{cfg.regime.label(), pooled}});
  write_file(dir / "eval.csv", csv.str());
  write_file(dir / "eval_detail.txt", detail.dump(2) + "\n");
  out << csv.str();
}

void cmd_attack(const json& resolved, const fs::path& checkpoint, std::size_t index, std::ostream& out) {
  const RunConfig cfg = RunConfig::from_json(resolved);
  const Dataset ds = load_split(cfg.data, cfg.attack.split);
  const LabeledExample& ex = example_at(ds, index);
  const auto model = load_model(checkpoint, cfg);
  const fs::path dir = prepare_output(resolved, cfg);
  fs::create_directories(dir / "traces");

  const CnnClassifier clf(model);
  std::ostringstream trace;
  AttackOptions ao;
  ao.warp_mode = cfg.attack.method.warp_mode;
  ao.restart_on_infeasible = true;
  ao.trace = [&](const TraceRecord& r) {
    trace << r.iteration;
    for (Param p : kAllParams) trace << ',' << fmt("%.9g", to_display(p, get_param(r.candidate, p)));
    trace << ',' << (r.score.misclassified ? 1 : 0) << ',' << fmt("%.9g", r.score.loss) << ','
          << fmt("%.9g", r.sigma) << ',' << fmt("%.9g", r.cov_det) << '\n';
  };

  const AttackSpec& spec = cfg.attack.method;
  Rng rng(mix_seed(cfg.attack.seed, static_cast<std::uint64_t>(ex.index)));
  AttackOutcome outcome;
  switch (spec.kind) {
    case AttackKind::worst_of_k:
      outcome = worst_of_k(ex.image, ex.label, clf, cfg.space, spec.k, rng, ao);
      break;
    case AttackKind::grid:
      outcome = grid_search(ex.image, ex.label, clf, cfg.space, spec.grid_counts, ao);
      break;
    case AttackKind::one_plus_one:
      outcome = one_plus_one_es(ex.image, ex.label, clf, cfg.space,
                                EsState::fresh(cfg.space.identity_point(), spec.one_plus_one.sigma0),
                                spec.one_plus_one, rng, ao)
                    .first;
      break;
    case AttackKind::cma:
      outcome = cma_es(ex.image, ex.label, clf, cfg.space,
                       EsState::fresh(cfg.space.identity_point(), spec.cma_sigma0), spec.cma, rng, ao)
                    .first;
      break;
  }

  const Logits natural = clf.logits(std::span<const Image>(&ex.image, 1)).at(0);
  const Logits adversarial = clf.logits(std::span<const Image>(&outcome.adversarial_image, 1)).at(0);
  const std::string stem = "attack_" + std::to_string(index);
  write_pgm(dir / (stem + "_original.pgm"), ex.image);
  write_pgm(dir / (stem + "_adversarial.pgm"), outcome.adversarial_image);
  write_file(dir / "traces" / (stem + ".csv"), trace.str());
  const json report{{"index", index},
                    {"example_id", ex.index},
                    {"label", ex.label},
                    {"method", spec.label()},
                    {"natural_prediction", predict(natural)},
                    {"adversarial_prediction", predict(adversarial)},
                    {"transform", transform_json(outcome.transform)},
                    {"normalized", outcome.point.values()},
                    {"misclassified", outcome.score.misclassified},
                    {"loss", outcome.score.loss},
                    {"forward_passes", outcome.forward_passes},
                    {"infeasible_restarts", outcome.infeasible_restarts}};
  write_file(dir / (stem + ".txt"), report.dump(2) + "\n");
  out << report.dump(2) << "\n";
}

void cmd_landscape(const json& resolved, const fs::path& checkpoint, std::size_t index, std::ostream& out) {
  const RunConfig cfg = RunConfig::from_json(resolved);
  const LandscapeConfig& lc = cfg.landscape;
  const Dataset ds = load_split(cfg.data, lc.split);
  const LabeledExample& ex = example_at(ds, index);
  const auto model = load_model(checkpoint, cfg);
  const fs::path dir = prepare_output(resolved, cfg);
  const CnnClassifier clf(model);

  const auto& free = cfg.space.free_params();
  const auto slot = [&](Param p) {
    return static_cast<std::size_t>(std::find(free.begin(), free.end(), p) - free.begin());
  };
  const std::size_t s1 = slot(lc.axis1), s2 = slot(lc.axis2);
  const NormalizedPoint identity = cfg.space.identity_point();
  const std::vector<double> n1 = grid_axis(lc.count1, identity[s1]);
  const std::vector<double> n2 = grid_axis(lc.count2, identity[s2]);

  const auto display_axis = [&](Param p, std::size_t slot_index, const std::vector<double>& coords) {
    std::vector<double> values;
    for (double c : coords) {
      NormalizedPoint x = identity;
      x[slot_index] = c;
      values.push_back(to_display(p, get_param(cfg.space.denormalize(x), p)));
    }
    return values;
  };
  LandscapeGrid grid;
  grid.axis1 = display_axis(lc.axis1, s1, n1);
  grid.axis2 = display_axis(lc.axis2, s2, n2);
  std::vector<Image> warped;
  warped.reserve(n1.size() * n2.size());
  for (double a : n1) {
    for (double b : n2) {
      NormalizedPoint x = identity;
      x[s1] = a;
      x[s2] = b;
      warped.push_back(warp_image(ex.image, cfg.space.denormalize(x), cfg.regime.attack.warp_mode));
    }
  }
  if (lc.norm_mode) {
    for (const Image& img : warped) grid.values.push_back(image_norm_distance(ex.image, img, lc.norm));
  } else {
    constexpr std::size_t chunk = 256;
    for (std::size_t i = 0; i < warped.size(); i += chunk) {
      const std::size_t n = std::min(chunk, warped.size() - i);
      for (const Logits& l : clf.logits(std::span<const Image>(warped.data() + i, n))) {
        grid.values.push_back(cross_entropy(l, ex.label));
      }
    }
  }

  const std::string name1(param_name(lc.axis1)), name2(param_name(lc.axis2));
  const std::string value_name = lc.norm_mode ? (lc.norm == NormKind::l2 ? "l2" : "linf") : "loss";
  std::ostringstream csv;
  csv << name1 << ',' << name2 << ',' << value_name << '\n';
  for (std::size_t i = 0; i < grid.axis1.size(); ++i) {
    for (std::size_t j = 0; j < grid.axis2.size(); ++j) {
      csv << fmt("%.9g", grid.axis1[i]) << ',' << fmt("%.9g", grid.axis2[j]) << ','
          << fmt("%.9g", grid.at(i, j)) << '\n';
    }
  }
  const std::string stem = "landscape_" + std::to_string(index);
  write_file(dir / (stem + ".csv"), csv.str());
  write_grid_csv(dir / (stem + "_matrix.csv"), grid, name2 + "\\" + name1);
  out << "wrote " << grid.values.size() << " " << value_name << " values to " << (dir / (stem + ".csv")).string()
      << "\n";
}

void cmd_sigma0(double epsilon, int d, std::ostream& out) {
  const double sigma = sigma0_solve(epsilon, d);
  const double residual = resample_probability(sigma, d) - epsilon;
  out << "sigma0 = " << fmt("%.6f", sigma) << "\n";
  out << "residual = " << fmt("%.3e", residual) << "\n";
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Affine-transform adversarial attacks and robust training"};
  app.require_subcommand(1);

  Invocation inv;
  inv.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string config_file, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> checkpoints;
  std::size_t index = 0;
  double epsilon = 0.5;
  int dim = 3;

  const auto add_common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--config", config_file, "Config file")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    sub->add_option("--jobs", inv.jobs, "Worker threads")->check(CLI::PositiveNumber);
    if (with_seed) sub->add_option("--seed", seed, "Seed override");
  };
  CLI::App* train = app.add_subcommand("train", "Train a model");
  add_common(train, true);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate checkpoints");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoints, "Checkpoint file (repeat to pool models)")->required();
  CLI::App* attack = app.add_subcommand("attack", "Attack one image");
  add_common(attack, true);
  attack->add_option("--checkpoint", checkpoints, "Checkpoint file")->required()->expected(1);
  attack->add_option("--index", index, "Example position in the split")->required();
  CLI::App* landscape = app.add_subcommand("landscape", "Export a loss or norm landscape");
  add_common(landscape, false);
  landscape->add_option("--checkpoint", checkpoints, "Checkpoint file")->required()->expected(1);
  landscape->add_option("--index", index, "Example position in the split")->required();
  CLI::App* sigma0 = app.add_subcommand("sigma0", "Initial step size for a resampling probability");
  sigma0->add_option("--epsilon", epsilon, "Target resampling probability")->required();
  sigma0->add_option("--dim", dim, "Search dimension")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (!config_file.empty()) inv.config_file = config_file;
    if (!out_dir.empty()) inv.out_dir = out_dir;
    CLI::App* active = app.get_subcommands().front();
    if (const CLI::Option* opt = active->get_option_no_throw("--seed"); opt && opt->count() > 0) inv.seed = seed;
    const std::vector<fs::path> paths(checkpoints.begin(), checkpoints.end());
    if (active == train) {
      cmd_train(resolve_invocation(inv, "train"), inv.jobs, out);
    } else if (active == eval) {
      cmd_eval(resolve_invocation(inv, "eval"), paths, inv.jobs, out);
    } else if (active == attack) {
      cmd_attack(resolve_invocation(inv, "attack"), paths.at(0), index, out);
    } else if (active == landscape) {
      cmd_landscape(resolve_invocation(inv, "landscape"), paths.at(0), index, out);
    } else {
      cmd_sigma0(epsilon, dim, out);
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace affes::cli
