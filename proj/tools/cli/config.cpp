#include "config.hpp"

#include <cctype>
#include <charconv>
#include <numbers>
#include <ostream>
#include <sstream>

#include "affes/errors.hpp"

namespace affes::cli {
namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

/// Drops a trailing `#` comment, ignoring `#` inside double-quoted strings.
std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string && c == '\\') {
      ++i;
    } else if (c == '"') {
      in_string = !in_string;
    } else if (c == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

bool valid_key_part(std::string_view part) {
  if (part.empty()) return false;
  for (char c : part) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

std::vector<std::string> split_key(std::string_view key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    parts.emplace_back(key.substr(start, dot == std::string_view::npos ? key.size() - start : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  if (node.is_object() && !node.empty()) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.emplace_back(prefix, node);
  }
}

bool type_compatible(const json& def, const json& value) {
  if (def.is_null()) return value.is_null() || value.is_number_integer();
  if (def.is_number()) return value.is_number();
  if (def.is_array()) return value.is_array();
  return def.type() == value.type();
}

void overlay(json& target, const json& user, const std::string& path) {
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!target.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    json& slot = target[key];
    if (slot.is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + here + "' is a section, not a value");
      overlay(slot, value, here);
    } else if (!type_compatible(slot, value)) {
      throw ConfigError("config key '" + here + "' expects a value like " + slot.dump() + ", got " +
                        value.dump());
    } else {
      slot = value;
    }
  }
}

const json& at(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  for (const auto& part : split_key(dotted)) node = &node->at(part);
  return *node;
}

template <typename T>
T get(const json& doc, const std::string& key) {
  try {
    return at(doc, key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::uint64_t get_u64(const json& doc, const std::string& key) {
  const json& v = at(doc, key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

int get_positive_int(const json& doc, const std::string& key, int minimum = 1) {
  const json& v = at(doc, key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < minimum || v.get<std::int64_t>() > 1'000'000'000) {
    throw ConfigError("config key '" + key + "' must be an integer >= " + std::to_string(minimum));
  }
  return v.get<int>();
}

Split parse_split(const json& doc, const std::string& key) {
  const auto s = get<std::string>(doc, key);
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("config key '" + key + "' must be \"train\" or \"test\"");
}

Param parse_param_key(const std::string& key, std::string_view name) {
  if (auto p = parse_param(name)) return *p;
  throw ConfigError("config key '" + key + "': unknown parameter '" + std::string(name) +
                    "' (expected du, dv, theta, phi, su or sv)");
}

int parse_int(std::string_view s, std::string_view context) {
  s = trim(s);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("expected an integer in '" + std::string(context) + "'");
  }
  return value;
}

std::filesystem::path data_path(const std::filesystem::path& dir, const std::string& file) {
  const std::filesystem::path p(file);
  return p.is_absolute() ? p : dir / p;
}

}  // namespace

json parse_config_text(std::string_view text, std::string_view source) {
  json doc = json::object();
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!valid_key_part(section)) throw ConfigError(where + ": invalid section name '" + section + "'");
      if (!doc.contains(section)) doc[section] = json::object();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    if (section.empty()) throw ConfigError(where + ": key outside of any [section]");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value_text = trim(line.substr(eq + 1));
    json value;
    try {
      value = json::parse(value_text);
    } catch (const json::parse_error&) {
      throw ConfigError(where + ": value for '" + key + "' is not valid (strings need double quotes)");
    }
    json* node = &doc[section];
    const auto parts = split_key(key);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!valid_key_part(parts[i])) throw ConfigError(where + ": invalid key '" + key + "'");
      if (i + 1 == parts.size()) {
        if (node->contains(parts[i])) throw ConfigError(where + ": duplicate key '" + section + "." + key + "'");
        (*node)[parts[i]] = std::move(value);
      } else {
        json& child = (*node)[parts[i]];
        if (child.is_null()) child = json::object();
        if (!child.is_object()) throw ConfigError(where + ": '" + key + "' conflicts with an earlier value");
        node = &child;
      }
    }
  }
  return doc;
}

void write_config_text(std::ostream& out, const json& doc) {
  bool first = true;
  for (const auto& [section, body] : doc.items()) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    std::vector<std::pair<std::string, json>> leaves;
    flatten(body, "", leaves);
    for (const auto& [key, value] : leaves) out << key << " = " << value.dump() << '\n';
  }
}

json default_config() {
  return json{
      {"data",
       {{"dir", AFFES_DEFAULT_DATA_DIR},
        {"train_images", "train-images-idx3-ubyte"},
        {"train_labels", "train-labels-idx1-ubyte"},
        {"test_images", "test-images-idx3-ubyte"},
        {"test_labels", "test-labels-idx1-ubyte"},
        {"train_subset", 0},
        {"train_subset_seed", 11},
        {"test_subset", 0},
        {"test_subset_seed", 12}}},
      {"space",
       {{"free", json::array({"du", "dv", "theta"})},
        {"bounds",
         {{"du", json::array({-3.0, 3.0})},
          {"dv", json::array({-3.0, 3.0})},
          {"theta", json::array({-30.0, 30.0})},
          {"phi", json::array({-20.0, 20.0})},
          {"su", json::array({0.6, 1.4})},
          {"sv", json::array({0.6, 1.4})}}}}},
      {"model",
       {{"preset", "small"},
        {"seed", 1},
        {"conv1_filters", nullptr},
        {"conv2_filters", nullptr},
        {"kernel", nullptr},
        {"fc_units", nullptr}}},
      {"train",
       {{"optimizer", "adam"},
        {"learning_rate", 1e-4},
        {"batch_size", 128},
        {"iterations", 10000},
        {"log_every", 50}}},
      {"regime",
       {{"kind", "standard"},
        {"attack", "worst_of_k(10)"},
        {"augmentation", "flip"},
        {"es_sigma0", 0.4},
        {"cma_sigma0", 0.4},
        {"cma_feasibility", "tanh"},
        {"cma_det_normalization", "root"},
        {"cma_population", 0},
        {"warp_mode", "single_pass"}}},
      {"eval",
       {{"modes", json::array({"natural", "worst_of_k(10)", "grid(5,5,31)"})},
        {"seeds", json::array({1, 2, 3})},
        {"split", "test"}}},
      {"attack", {{"method", "grid(5,5,31)"}, {"split", "test"}, {"seed", 1}}},
      {"landscape",
       {{"axes", json::array({"du", "theta"})},
        {"counts", json::array({13, 31})},
        {"mode", "loss"},
        {"norm", "l2"},
        {"split", "test"}}},
      {"output", {{"dir", "out"}}},
  };
}

json resolve_config(const json& user) {
  json resolved = default_config();
  if (!user.is_object()) throw ConfigError("config must be a set of sections");
  overlay(resolved, user, "");
  return resolved;
}

AttackSpec parse_attack(std::string_view text) {
  const std::string_view t = trim(text);
  const auto open = t.find('(');
  if (open == std::string_view::npos || t.back() != ')') {
    throw ConfigError("attack '" + std::string(text) + "' must look like name(args)");
  }
  const std::string_view name = trim(t.substr(0, open));
  const std::string_view args = t.substr(open + 1, t.size() - open - 2);
  std::vector<int> values;
  std::size_t start = 0;
  for (;;) {
    const auto comma = args.find(',', start);
    values.push_back(parse_int(args.substr(start, comma == std::string_view::npos ? args.size() - start : comma - start), text));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (int v : values) {
    if (v < 1) throw ConfigError("attack '" + std::string(text) + "' needs positive arguments");
  }
  AttackSpec spec;
  const auto single = [&]() {
    if (values.size() != 1) throw ConfigError("attack '" + std::string(text) + "' takes one argument");
    return values[0];
  };
  if (name == "worst_of_k") {
    spec.kind = AttackKind::worst_of_k;
    spec.k = single();
  } else if (name == "grid") {
    spec.kind = AttackKind::grid;
    spec.grid_counts = values;
  } else if (name == "es") {
    spec.kind = AttackKind::one_plus_one;
    spec.one_plus_one.iterations = single();
  } else if (name == "cma") {
    spec.kind = AttackKind::cma;
    spec.cma.update_calls = single();
  } else {
    throw ConfigError("unknown attack '" + std::string(name) + "' (expected worst_of_k, grid, es or cma)");
  }
  return spec;
}

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig c;

  const std::filesystem::path dir(get<std::string>(doc, "data.dir"));
  c.data.train_images = data_path(dir, get<std::string>(doc, "data.train_images"));
  c.data.train_labels = data_path(dir, get<std::string>(doc, "data.train_labels"));
  c.data.test_images = data_path(dir, get<std::string>(doc, "data.test_images"));
  c.data.test_labels = data_path(dir, get<std::string>(doc, "data.test_labels"));
  c.data.train_subset = get_u64(doc, "data.train_subset");
  c.data.train_subset_seed = get_u64(doc, "data.train_subset_seed");
  c.data.test_subset = get_u64(doc, "data.test_subset");
  c.data.test_subset_seed = get_u64(doc, "data.test_subset_seed");

  std::array<Interval, kNumParams> bounds{};
  for (Param p : kAllParams) {
    const std::string key = "space.bounds." + std::string(param_name(p));
    const auto pair = get<std::vector<double>>(doc, key);
    if (pair.size() != 2) throw ConfigError("config key '" + key + "' needs [lo, hi]");
    const double scale = is_angle(p) ? std::numbers::pi / 180.0 : 1.0;
    bounds[static_cast<std::size_t>(p)] = {pair[0] * scale, pair[1] * scale};
  }
  std::array<bool, kNumParams> mask{};
  for (const auto& name : get<std::vector<std::string>>(doc, "space.free")) {
    const Param p = parse_param_key("space.free", name);
    if (mask[static_cast<std::size_t>(p)]) throw ConfigError("config key 'space.free' lists '" + name + "' twice");
    mask[static_cast<std::size_t>(p)] = true;
  }
  try {
    c.space = ConstraintSpace(bounds, mask);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config section 'space': ") + e.what());
  }

  const auto preset = get<std::string>(doc, "model.preset");
  if (preset == "small") {
    c.architecture = Architecture::small();
  } else if (preset == "full") {
    c.architecture = Architecture::full();
  } else {
    throw ConfigError("config key 'model.preset' must be \"small\" or \"full\"");
  }
  const auto override_int = [&](const std::string& key, int& field) {
    if (!at(doc, key).is_null()) field = get_positive_int(doc, key);
  };
  override_int("model.conv1_filters", c.architecture.conv1_filters);
  override_int("model.conv2_filters", c.architecture.conv2_filters);
  override_int("model.kernel", c.architecture.kernel);
  override_int("model.fc_units", c.architecture.fc_units);
  if (c.architecture.kernel % 2 == 0) throw ConfigError("config key 'model.kernel' must be odd");
  c.model_seed = get_u64(doc, "model.seed");

  const auto optimizer = get<std::string>(doc, "train.optimizer");
  if (optimizer == "adam") {
    c.train.optimizer = OptimizerKind::adam;
  } else if (optimizer == "sgd") {
    c.train.optimizer = OptimizerKind::sgd;
  } else {
    throw ConfigError("config key 'train.optimizer' must be \"adam\" or \"sgd\"");
  }
  c.train.learning_rate = get<double>(doc, "train.learning_rate");
  if (!(c.train.learning_rate > 0.0)) throw ConfigError("config key 'train.learning_rate' must be > 0");
  c.train.batch_size = get_positive_int(doc, "train.batch_size");
  c.train.iterations = get_positive_int(doc, "train.iterations", 0);
  c.train.seed = c.model_seed;
  c.log_every = get_positive_int(doc, "train.log_every");

  const auto kind = get<std::string>(doc, "regime.kind");
  const auto regime_kind = parse_regime(kind);
  if (!regime_kind) throw ConfigError("config key 'regime.kind' must be standard, augmented or robust");
  c.regime.kind = *regime_kind;
  try {
    c.regime.attack = parse_attack(get<std::string>(doc, "regime.attack"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config key 'regime.attack': ") + e.what());
  }
  const auto aug = get<std::string>(doc, "regime.augmentation");
  if (aug == "flip") {
    c.regime.augmentation = Augmentation::flip;
  } else if (aug == "random_affine") {
    c.regime.augmentation = Augmentation::random_affine;
  } else {
    throw ConfigError("config key 'regime.augmentation' must be \"flip\" or \"random_affine\"");
  }
  c.regime.attack.one_plus_one.sigma0 = get<double>(doc, "regime.es_sigma0");
  c.regime.attack.cma_sigma0 = get<double>(doc, "regime.cma_sigma0");
  if (!(c.regime.attack.one_plus_one.sigma0 > 0.0)) throw ConfigError("config key 'regime.es_sigma0' must be > 0");
  if (!(c.regime.attack.cma_sigma0 > 0.0)) throw ConfigError("config key 'regime.cma_sigma0' must be > 0");
  const auto feas = get<std::string>(doc, "regime.cma_feasibility");
  if (feas == "tanh") {
    c.regime.attack.cma.feasibility = Feasibility::tanh;
  } else if (feas == "project") {
    c.regime.attack.cma.feasibility = Feasibility::project;
  } else if (feas == "resample") {
    c.regime.attack.cma.feasibility = Feasibility::resample;
  } else {
    throw ConfigError("config key 'regime.cma_feasibility' must be tanh, project or resample");
  }
  const auto detn = get<std::string>(doc, "regime.cma_det_normalization");
  if (detn == "root") {
    c.regime.attack.cma.det_normalization = DetNormalization::root;
  } else if (detn == "literal") {
    c.regime.attack.cma.det_normalization = DetNormalization::literal;
  } else if (detn == "none") {
    c.regime.attack.cma.det_normalization = DetNormalization::none;
  } else {
    throw ConfigError("config key 'regime.cma_det_normalization' must be root, literal or none");
  }
  c.regime.attack.cma.population = get_positive_int(doc, "regime.cma_population", 0);
  if (c.regime.attack.cma.population > 0 && c.regime.attack.cma.population < 3) {
    throw ConfigError("config key 'regime.cma_population' must be 0 (automatic) or >= 3");
  }
  const auto warp = get<std::string>(doc, "regime.warp_mode");
  if (warp == "single_pass") {
    c.regime.attack.warp_mode = WarpMode::single_pass;
  } else if (warp == "sequential") {
    c.regime.attack.warp_mode = WarpMode::sequential;
  } else {
    throw ConfigError("config key 'regime.warp_mode' must be \"single_pass\" or \"sequential\"");
  }
  c.regime.space = c.space;
  try {
    c.regime.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config section 'regime': ") + e.what());
  }

  for (const auto& label : get<std::vector<std::string>>(doc, "eval.modes")) {
    try {
      c.eval_modes.push_back(EvalMode::parse(label));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config key 'eval.modes': ") + e.what());
    }
    const EvalMode& m = c.eval_modes.back();
    if (m.kind == EvalModeKind::grid && m.counts.size() != static_cast<std::size_t>(c.space.dim())) {
      throw ConfigError("config key 'eval.modes': " + label + " needs one count per free parameter");
    }
  }
  if (c.eval_modes.empty()) throw ConfigError("config key 'eval.modes' must not be empty");
  for (const auto& seed : at(doc, "eval.seeds")) {
    if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<std::int64_t>() < 0)) {
      throw ConfigError("config key 'eval.seeds' must hold non-negative integers");
    }
    c.eval_seeds.push_back(seed.get<std::uint64_t>());
  }
  if (c.eval_seeds.empty()) throw ConfigError("config key 'eval.seeds' must not be empty");
  c.eval_split = parse_split(doc, "eval.split");

  try {
    c.attack.method = parse_attack(get<std::string>(doc, "attack.method"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config key 'attack.method': ") + e.what());
  }
  c.attack.method.one_plus_one.sigma0 = c.regime.attack.one_plus_one.sigma0;
  c.attack.method.cma_sigma0 = c.regime.attack.cma_sigma0;
  c.attack.method.cma.feasibility = c.regime.attack.cma.feasibility;
  c.attack.method.cma.det_normalization = c.regime.attack.cma.det_normalization;
  c.attack.method.cma.population = c.regime.attack.cma.population;
  c.attack.method.warp_mode = c.regime.attack.warp_mode;
  if (c.attack.method.kind == AttackKind::grid &&
      c.attack.method.grid_counts.size() != static_cast<std::size_t>(c.space.dim())) {
    throw ConfigError("config key 'attack.method' needs one grid count per free parameter");
  }
  c.attack.split = parse_split(doc, "attack.split");
  c.attack.seed = get_u64(doc, "attack.seed");

  const auto axes = get<std::vector<std::string>>(doc, "landscape.axes");
  const auto counts = at(doc, "landscape.counts");
  if (axes.size() != 2) throw ConfigError("config key 'landscape.axes' needs two parameter names");
  if (!counts.is_array() || counts.size() != 2) throw ConfigError("config key 'landscape.counts' needs two counts");
  c.landscape.axis1 = parse_param_key("landscape.axes", axes[0]);
  c.landscape.axis2 = parse_param_key("landscape.axes", axes[1]);
  if (c.landscape.axis1 == c.landscape.axis2) throw ConfigError("config key 'landscape.axes' must name two distinct parameters");
  for (Param p : {c.landscape.axis1, c.landscape.axis2}) {
    if (!c.space.is_free(p)) {
      throw ConfigError("config key 'landscape.axes': '" + std::string(param_name(p)) +
                        "' is not a free parameter of the space");
    }
  }
  for (std::size_t i = 0; i < 2; ++i) {
    if (!counts[i].is_number_integer() || counts[i].get<int>() < 1) {
      throw ConfigError("config key 'landscape.counts' must hold positive integers");
    }
  }
  c.landscape.count1 = counts[0].get<int>();
  c.landscape.count2 = counts[1].get<int>();
  const auto mode = get<std::string>(doc, "landscape.mode");
  if (mode != "loss" && mode != "norm") throw ConfigError("config key 'landscape.mode' must be \"loss\" or \"norm\"");
  c.landscape.norm_mode = mode == "norm";
  const auto norm = get<std::string>(doc, "landscape.norm");
  if (norm == "l2") {
    c.landscape.norm = NormKind::l2;
  } else if (norm == "linf") {
    c.landscape.norm = NormKind::linf;
  } else {
    throw ConfigError("config key 'landscape.norm' must be \"l2\" or \"linf\"");
  }
  c.landscape.split = parse_split(doc, "landscape.split");

  c.output_dir = get<std::string>(doc, "output.dir");
  return c;
}

Dataset load_split(const DataConfig& data, Split split) {
  const bool train = split == Split::train;
  Dataset ds = load_idx(train ? data.train_images : data.test_images,
                        train ? data.train_labels : data.test_labels);
  ds.name = train ? "train" : "test";
  const std::size_t n = train ? data.train_subset : data.test_subset;
  if (n > 0) {
    ds = subset(ds, n, train ? data.train_subset_seed : data.test_subset_seed);
    ds.name = train ? "train" : "test";
  }
  return ds;
}

}  // namespace affes::cli
