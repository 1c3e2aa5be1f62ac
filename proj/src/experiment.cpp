#include "l2l/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "l2l/optimizee.hpp"

namespace l2l {

namespace fs = std::filesystem;

namespace {

std::string describe(const std::string& source, std::size_t line, const std::string& message) {
  return line > 0 ? source + ":" + std::to_string(line) + ": " + message
                  : source + ": " + message;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.emplace_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::optional<double> to_real(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> to_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, std::size_t line, const std::string& key,
                         const std::string& message)
    : std::runtime_error(describe(source, line, message)), line_(line), key_(key) {}

const ConfigEntry* ConfigSection::find(std::string_view key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

const ConfigSection* ConfigFile::section(std::string_view name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

ConfigFile ConfigFile::parse(std::istream& in, const std::string& source) {
  ConfigFile file;
  file.source = source;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(source, line_no, "", "section header is missing ']'");
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (name.empty()) throw ConfigError(source, line_no, "", "empty section name");
      if (file.section(name) != nullptr)
        throw ConfigError(source, line_no, "", "duplicate section [" + name + "]");
      file.sections.push_back({name, line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source, line_no, "", "expected 'key = value' or '[section]'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(source, line_no, "", "empty key");
    if (file.sections.empty())
      throw ConfigError(source, line_no, key, "key '" + key + "' appears before any section");
    auto& sec = file.sections.back();
    if (sec.find(key) != nullptr)
      throw ConfigError(source, line_no, key,
                        "duplicate key '" + key + "' in [" + sec.name + "]");
    sec.entries.push_back({key, value, line_no});
  }
  return file;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "", "cannot open config file");
  return parse(in, path);
}

const RosterEntry* ExperimentConfig::find(std::string_view name) const {
  for (const auto& e : roster)
    if (e.name == name) return &e;
  return nullptr;
}

// ---------------------------------------------------------------------------

namespace {

// Typed access to one section; rejects keys outside `allowed`.
class Reader {
 public:
  Reader(const ConfigFile& file, std::string name, const std::vector<std::string_view>& allowed,
         const Reader* fallback = nullptr)
      : file_(file), name_(std::move(name)), sec_(file.section(name_)), fallback_(fallback) {
    if (sec_ == nullptr) return;
    for (const auto& e : sec_->entries)
      if (std::find(allowed.begin(), allowed.end(), e.key) == allowed.end())
        fail(e, "unknown key '" + e.key + "' in [" + name_ + "]");
  }

  bool present() const { return sec_ != nullptr; }
  std::size_t line() const { return sec_ ? sec_->line : 0; }

  const ConfigEntry* get(std::string_view key) const {
    const ConfigEntry* e = sec_ ? sec_->find(key) : nullptr;
    if (e == nullptr && fallback_ != nullptr) return fallback_->get(key);
    return e;
  }

  [[noreturn]] void fail(const ConfigEntry& e, const std::string& message) const {
    throw ConfigError(file_.source, e.line, e.key, message);
  }

  const ConfigEntry& require(std::string_view key) const {
    if (const auto* e = get(key)) return *e;
    throw ConfigError(file_.source, line(), std::string(key),
                      "missing required key '" + std::string(key) + "' in [" + name_ + "]");
  }

  std::string text(std::string_view key, std::string fallback) const {
    const auto* e = get(key);
    return e ? e->value : fallback;
  }

  double real(std::string_view key, double fallback) const {
    const auto* e = get(key);
    if (e == nullptr) return fallback;
    return real_of(*e);
  }

  double real_of(const ConfigEntry& e) const {
    const auto v = to_real(e.value);
    if (!v) fail(e, "'" + e.key + "' must be a finite number, got '" + e.value + "'");
    return *v;
  }

  std::uint64_t count(std::string_view key, std::uint64_t fallback, std::uint64_t min = 0) const {
    const auto* e = get(key);
    if (e == nullptr) return fallback;
    return count_of(*e, min);
  }

  std::uint64_t count_of(const ConfigEntry& e, std::uint64_t min = 0) const {
    const auto v = to_uint(e.value);
    if (!v) fail(e, "'" + e.key + "' must be a nonnegative integer, got '" + e.value + "'");
    if (*v < min) fail(e, "'" + e.key + "' must be at least " + std::to_string(min));
    return *v;
  }

  bool flag(std::string_view key, bool fallback) const {
    const auto* e = get(key);
    if (e == nullptr) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    fail(*e, "'" + e->key + "' must be true or false, got '" + e->value + "'");
  }

  std::vector<double> reals(std::string_view key, std::vector<double> fallback) const {
    const auto* e = get(key);
    if (e == nullptr) return fallback;
    std::vector<double> out;
    for (const auto& part : split(e->value, ',')) {
      const auto v = to_real(part);
      if (!v) fail(*e, "'" + e->key + "' must be a comma-separated list of numbers");
      out.push_back(*v);
    }
    return out;
  }

  std::vector<std::size_t> counts(std::string_view key, std::vector<std::size_t> fallback) const {
    const auto* e = get(key);
    if (e == nullptr) return fallback;
    if (e->value.empty() || e->value == "none") return {};
    std::vector<std::size_t> out;
    for (const auto& part : split(e->value, ',')) {
      const auto v = to_uint(part);
      if (!v) fail(*e, "'" + e->key + "' must be a comma-separated list of integers");
      out.push_back(static_cast<std::size_t>(*v));
    }
    return out;
  }

  std::vector<std::string> names(std::string_view key, std::vector<std::string> fallback) const {
    const auto* e = get(key);
    if (e == nullptr) return fallback;
    std::vector<std::string> out;
    for (auto& part : split(e->value, ','))
      if (!part.empty()) out.push_back(std::move(part));
    return out;
  }

  const ConfigSection* section() const { return sec_; }

 private:
  const ConfigFile& file_;
  std::string name_;
  const ConfigSection* sec_;
  const Reader* fallback_;
};

std::string existing_path(const Reader& r, const ConfigEntry& e, const fs::path& base_dir) {
  if (e.value.empty()) r.fail(e, "'" + e.key + "' must name a file");
  fs::path p(e.value);
  if (p.is_relative()) p = base_dir / p;
  std::error_code ec;
  if (!fs::is_regular_file(p, ec))
    r.fail(e, "'" + e.key + "' refers to a missing file: " + p.string());
  return p.string();
}

LearnedOptimizerOptions read_optimizer(const Reader& r, FamilyKind family) {
  LearnedOptimizerOptions o;
  const bool quad = family == FamilyKind::kQuadratic;
  if (const auto* e = r.get("architecture")) {
    const auto a = parse_architecture(e->value);
    if (!a) r.fail(*e, "unknown architecture '" + e->value + "' (plain, gac, ntm-bfgs, ntm-lbfgs)");
    o.architecture = *a;
  }
  if (const auto* e = r.get("grouping")) {
    const auto g = parse_grouping(e->value);
    if (!g) r.fail(*e, "unknown grouping '" + e->value + "' (single, by-kind)");
    o.grouping = *g;
  }
  o.group_names = o.grouping == Grouping::kSingle
                      ? std::vector<std::string>{"all"}
                      : r.names("groups", {"weight", "bias"});
  if (o.group_names.empty()) r.fail(r.require("groups"), "'groups' must list at least one kind");

  auto& init = o.init;
  init.n_hidden = static_cast<std::size_t>(r.count("hidden", 20, 1));
  init.input_mode = quad ? InputMode::kRaw : InputMode::kPreprocessed;
  if (const auto* e = r.get("input_mode")) {
    const auto m = parse_input_mode(e->value);
    if (!m) r.fail(*e, "unknown input_mode '" + e->value + "' (raw, preprocessed)");
    init.input_mode = *m;
  }
  init.output_scale = r.real("output_scale", quad ? 1.0 : 0.1);
  init.input_scale = r.real("input_scale", 1.0);
  init.preprocess_p = r.real("preprocess_p", kDefaultPreprocessP);
  if (init.preprocess_p <= 0.0) r.fail(*r.get("preprocess_p"), "'preprocess_p' must be positive");
  init.scale_std = r.real("init_std", 0.1);
  init.forget_bias = r.real("forget_bias", 1.0);

  o.gac.layer1_cells = r.counts("gac_layer1", {});
  o.gac.layer2_cells = r.counts("gac_layer2", {});
  for (const auto* key : {"gac_layer1", "gac_layer2"})
    for (auto c : r.counts(key, {}))
      if (c >= init.n_hidden) r.fail(*r.get(key), std::string("'") + key + "' cell index out of range");
  o.ntm.read_heads = static_cast<std::size_t>(r.count("read_heads", 1, 1));
  o.ntm.write_heads = static_cast<std::size_t>(r.count("write_heads", 3, 1));
  o.ntm.memory_init = r.real("memory_init", 0.0);
  o.ntm.history_len = static_cast<std::size_t>(r.count("history_len", 10, 1));
  return o;
}

}  // namespace

ExperimentConfig parse_experiment_config(const ConfigFile& file, const fs::path& base_dir) {
  ExperimentConfig cfg;
  cfg.source = file.source;

  const Reader exp(file, "experiment",
                   {"family", "seed", "output", "steps", "test_problems", "exclude_diverged"});
  if (!exp.present())
    throw ConfigError(file.source, 0, "experiment", "missing required section [experiment]");
  {
    const auto& e = exp.require("family");
    if (e.value == "quadratic") cfg.family = FamilyKind::kQuadratic;
    else if (e.value == "mlp") cfg.family = FamilyKind::kMlp;
    else exp.fail(e, "unknown family '" + e.value + "' (quadratic, mlp)");
  }
  cfg.seed = exp.count_of(exp.require("seed"));
  {
    const auto& e = exp.require("output");
    if (e.value.empty()) exp.fail(e, "'output' must name a directory");
    cfg.output_dir = fs::path(e.value).is_relative() ? base_dir / e.value : fs::path(e.value);
  }
  cfg.steps = static_cast<std::size_t>(exp.count("steps", 100, 1));
  cfg.test_problems = static_cast<std::size_t>(exp.count("test_problems", 100, 1));
  cfg.exclude_diverged = exp.flag("exclude_diverged", false);

  const Reader quad(file, "quadratic", {"dim", "theta_std"});
  cfg.quadratic.dim = static_cast<std::size_t>(quad.count("dim", 10, 1));
  cfg.quadratic.theta_std = quad.real("theta_std", 1.0);

  const Reader mlp(file, "mlp",
                   {"dataset", "images", "labels", "max_examples", "examples", "features",
                    "classes", "hidden", "activation", "minibatch", "theta_std"});
  if (cfg.family == FamilyKind::kMlp) {
    auto& m = cfg.mlp;
    const auto source = mlp.text("dataset", "synthetic");
    if (source == "idx") {
      m.synthetic = false;
      m.images_path = existing_path(mlp, mlp.require("images"), base_dir);
      m.labels_path = existing_path(mlp, mlp.require("labels"), base_dir);
      m.max_examples = static_cast<std::size_t>(mlp.count("max_examples", 0));
    } else if (source == "synthetic") {
      m.examples = static_cast<std::size_t>(mlp.count("examples", 1000, 1));
      m.features = static_cast<std::size_t>(mlp.count("features", 8, 1));
    } else {
      mlp.fail(*mlp.get("dataset"), "unknown dataset '" + source + "' (synthetic, idx)");
    }
    m.architecture.input_dim = m.synthetic ? m.features : 0;
    m.architecture.n_classes = static_cast<std::size_t>(mlp.count("classes", 2, 2));
    m.architecture.hidden_layer_sizes = mlp.counts("hidden", {20});
    for (auto h : m.architecture.hidden_layer_sizes)
      if (h == 0) mlp.fail(*mlp.get("hidden"), "'hidden' layer sizes must be at least 1");
    const auto act = mlp.text("activation", "sigmoid");
    if (act == "sigmoid") m.architecture.activation = Activation::kSigmoid;
    else if (act == "relu") m.architecture.activation = Activation::kRelu;
    else mlp.fail(*mlp.get("activation"), "unknown activation '" + act + "' (sigmoid, relu)");
    m.minibatch = static_cast<std::size_t>(mlp.count("minibatch", 128, 1));
    if (m.synthetic && m.minibatch > m.examples)
      mlp.fail(*mlp.get("minibatch"), "'minibatch' exceeds the number of examples");
    if (m.synthetic && m.examples < m.architecture.n_classes)
      mlp.fail(*mlp.get("examples"), "'examples' must be at least the number of classes");
    m.theta_std = mlp.real("theta_std", 0.1);
  }

  const Reader tuning(file, "tuning", {"grid", "budget", "steps", "refine"});
  cfg.rate_grid = tuning.reals("grid", default_rate_grid());
  if (cfg.rate_grid.empty()) tuning.fail(*tuning.get("grid"), "'grid' must not be empty");
  for (double r : cfg.rate_grid)
    if (r <= 0.0) tuning.fail(*tuning.get("grid"), "'grid' rates must be positive");
  cfg.tuning.budget = static_cast<std::size_t>(tuning.count("budget", 20, 1));
  cfg.tuning.steps = static_cast<std::size_t>(tuning.count("steps", cfg.steps, 1));
  cfg.tuning.refine = tuning.flag("refine", true);

  const Reader optimizer(file, "optimizer",
                         {"architecture", "grouping", "groups", "hidden", "input_mode",
                          "output_scale", "input_scale", "preprocess_p", "init_std",
                          "forget_bias", "gac_layer1", "gac_layer2", "read_heads",
                          "write_heads", "memory_init", "history_len"});
  const std::vector<std::string_view> optimizer_keys = {
      "architecture", "grouping", "groups", "hidden", "input_mode", "output_scale",
      "input_scale", "preprocess_p", "init_std", "forget_bias", "gac_layer1", "gac_layer2",
      "read_heads", "write_heads", "memory_init", "history_len"};

  const auto* roster = file.section("roster");
  if (roster == nullptr || roster->entries.empty())
    throw ConfigError(file.source, roster ? roster->line : 0, "roster",
                      "the [roster] section must list at least one optimizer");
  for (const auto& e : roster->entries) {
    RosterEntry entry;
    entry.name = e.key;
    const auto parts = words(e.value);
    const auto bad = [&](const std::string& msg) {
      throw ConfigError(file.source, e.line, e.key, msg);
    };
    if (parts.size() != 2)
      bad("roster entry '" + e.key + "' must be '<kind> <rate|tune>' or 'learned <train|path>'");
    if (parts[0] == "learned") {
      entry.learned = true;
      if (parts[1] == "train") {
        entry.train = true;
        const Reader override(file, "optimizer." + e.key, optimizer_keys, &optimizer);
        entry.options = read_optimizer(override, cfg.family);
        if (entry.options.architecture == Architecture::kNtmBfgs ||
            entry.options.architecture == Architecture::kNtmLbfgs)
          bad("'" + e.key + "': memory architectures are evaluation-only; load them from a file");
      } else {
        fs::path p(parts[1]);
        if (p.is_relative()) p = base_dir / p;
        std::error_code ec;
        if (!fs::is_regular_file(p, ec)) bad("'" + e.key + "' refers to a missing file: " + p.string());
        entry.path = p.string();
      }
    } else {
      const auto kind = parse_baseline_kind(parts[0]);
      if (!kind) bad("unknown optimizer kind '" + parts[0] + "' (sgd, nag, rmsprop, adam, learned)");
      entry.baseline = *kind;
      if (parts[1] != "tune") {
        const auto rate = to_real(parts[1]);
        if (!rate || *rate <= 0.0) bad("'" + e.key + "' rate must be a positive number or 'tune'");
        entry.rate = rate;
      }
    }
    cfg.roster.push_back(std::move(entry));
  }
  for (const auto& sec : file.sections) {
    static const std::vector<std::string_view> known = {
        "experiment", "quadratic", "mlp", "tuning", "roster", "optimizer",
        "unroll",     "meta",      "trace", "sweep"};
    if (std::find(known.begin(), known.end(), sec.name) != known.end()) continue;
    if (sec.name.rfind("optimizer.", 0) == 0) {
      const auto* target = cfg.find(sec.name.substr(10));
      if (target != nullptr && target->train) continue;
      throw ConfigError(file.source, sec.line, "",
                        "[" + sec.name + "] does not match a 'learned train' roster entry");
    }
    throw ConfigError(file.source, sec.line, "", "unknown section [" + sec.name + "]");
  }

  const Reader unroll(file, "unroll", {"horizon", "truncation", "weights"});
  cfg.unroll.horizon = static_cast<std::size_t>(unroll.count("horizon", 100, 1));
  cfg.unroll.truncation = static_cast<std::size_t>(unroll.count("truncation", 20, 1));
  cfg.unroll.step_weights = unroll.reals("weights", {});
  try {
    cfg.unroll.validate();
  } catch (const ContractViolation& err) {
    unroll.fail(unroll.require("weights"), err.what());
  }

  const Reader meta(file, "meta",
                    {"learning_rate", "lr_trials", "lr_min", "lr_max", "epochs", "episodes",
                     "validation", "patience", "batch", "clip_norm"});
  auto& mc = cfg.meta;
  mc.meta_learning_rate = meta.real("learning_rate", 1e-2);
  mc.meta_lr_trials = static_cast<std::size_t>(meta.count("lr_trials", 0));
  mc.meta_lr_min = meta.real("lr_min", 1e-4);
  mc.meta_lr_max = meta.real("lr_max", 1e-1);
  mc.epochs = static_cast<std::size_t>(meta.count("epochs", 20, 1));
  mc.episodes_per_epoch = static_cast<std::size_t>(meta.count("episodes", 100, 1));
  mc.validation_problems = static_cast<std::size_t>(meta.count("validation", 20, 1));
  mc.patience = static_cast<std::size_t>(meta.count("patience", 5, 1));
  mc.meta_batch = static_cast<std::size_t>(meta.count("batch", 1, 1));
  mc.clip_norm = meta.real("clip_norm", 0.0);
  mc.seed = cfg.seed;
  if (mc.meta_learning_rate <= 0.0)
    meta.fail(*meta.get("learning_rate"), "'learning_rate' must be positive");
  if (mc.meta_lr_trials > 0 && !(mc.meta_lr_min > 0.0 && mc.meta_lr_min <= mc.meta_lr_max))
    meta.fail(meta.require("lr_min"), "need 0 < lr_min <= lr_max");
  if (mc.clip_norm < 0.0) meta.fail(*meta.get("clip_norm"), "'clip_norm' must be nonnegative");

  const auto learned_entry = [&](const Reader& r, const ConfigEntry& e) {
    const auto* entry = cfg.find(e.value);
    if (entry == nullptr || !entry->learned)
      r.fail(e, "'" + e.key + "' must name a learned roster entry, got '" + e.value + "'");
    return e.value;
  };

  const Reader trace(file, "trace", {"optimizer", "baselines", "coordinates", "steps"});
  if (trace.present()) {
    auto& t = cfg.trace;
    t.enabled = true;
    t.driver = learned_entry(trace, trace.require("optimizer"));
    t.baselines = trace.names("baselines", {});
    for (const auto& name : t.baselines) {
      const auto* entry = cfg.find(name);
      if (entry == nullptr || entry->learned)
        trace.fail(*trace.get("baselines"), "'" + name + "' is not a baseline roster entry");
    }
    t.coordinates = trace.counts("coordinates", {0});
    if (t.coordinates.empty()) trace.fail(*trace.get("coordinates"), "'coordinates' must not be empty");
    t.steps = static_cast<std::size_t>(trace.count("steps", 32, 1));
  }

  const Reader sweep(file, "sweep", {"optimizer", "coordinate", "step", "grid"});
  if (sweep.present()) {
    auto& s = cfg.sweep;
    s.enabled = true;
    s.optimizer = learned_entry(sweep, sweep.require("optimizer"));
    s.coordinate = static_cast<std::size_t>(sweep.count("coordinate", 0));
    s.step = static_cast<std::size_t>(sweep.count("step", 0));
    s.grid = sweep.reals("grid", {});
    if (s.grid.empty()) sweep.fail(sweep.require("grid"), "'grid' must not be empty");
    if (!std::is_sorted(s.grid.begin(), s.grid.end()))
      sweep.fail(*sweep.get("grid"), "'grid' must be sorted in increasing order");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  const ConfigFile file = ConfigFile::load(path);
  return parse_experiment_config(file, fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------

std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  (void)ec;
  return std::string(buf, ptr);
}

TraceTable trace_coordinate_updates(const LearnedOptimizer& driver, const std::string& driver_name,
                                    const std::vector<std::pair<std::string, BaselineState>>& baselines,
                                    Problem& problem, const Vector& theta0,
                                    const std::vector<std::size_t>& coordinates, std::size_t steps) {
  for (auto c : coordinates)
    if (c >= problem.dim())
      throw ContractViolation("trace: coordinate " + std::to_string(c) + " out of range (dim " +
                              std::to_string(problem.dim()) + ")");
  TraceTable table;
  table.names.push_back(driver_name);
  std::vector<BaselineState> states;
  for (const auto& [name, state] : baselines) {
    table.names.push_back(name);
    states.push_back(state);
  }

  // by_step[t][j] holds (grad, updates) for coordinates[j].
  std::vector<std::vector<TraceTable::Row>> by_step(steps);
  const ParameterGroupSpec groups = driver.resolve_groups(problem);
  RuleState state = initial_rule_state(driver, groups);
  Vector theta = theta0;
  Evaluation eval = problem.evaluate(theta, 0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const Vector update = learned_step(driver, groups, eval.grad, state);
    std::vector<Vector> proposals;
    for (auto& s : states) proposals.push_back(baseline_update(s, eval.grad));
    for (auto c : coordinates) {
      const auto k = static_cast<Eigen::Index>(c);
      TraceTable::Row row{c, t, eval.grad[k], {update[k]}};
      for (const auto& p : proposals) row.updates.push_back(p[k]);
      by_step[t - 1].push_back(std::move(row));
    }
    theta += update;
    eval = problem.evaluate(theta, t);
  }
  for (std::size_t j = 0; j < coordinates.size(); ++j)
    for (std::size_t t = 0; t < steps; ++t) table.rows.push_back(std::move(by_step[t][j]));
  return table;
}

RuleSnapshot snapshot_after(const LearnedOptimizer& opt, Problem& problem, const Vector& theta0,
                            std::size_t step) {
  RuleSnapshot snap;
  snap.groups = opt.resolve_groups(problem);
  snap.state = initial_rule_state(opt, snap.groups);
  Vector theta = theta0;
  Evaluation eval = problem.evaluate(theta, 0);
  for (std::size_t t = 1; t <= step; ++t) {
    theta += learned_step(opt, snap.groups, eval.grad, snap.state);
    eval = problem.evaluate(theta, t);
  }
  snap.grad = std::move(eval.grad);
  RuleState probe = snap.state;
  snap.update = learned_step(opt, snap.groups, snap.grad, probe);
  return snap;
}

std::vector<SweepPoint> update_response_sweep(const LearnedOptimizer& opt,
                                              const RuleSnapshot& snapshot,
                                              std::size_t coordinate,
                                              const std::vector<double>& grid) {
  if (coordinate >= snapshot.groups.dim)
    throw ContractViolation("sweep: coordinate " + std::to_string(coordinate) + " out of range");
  for (double v : grid)
    if (!std::isfinite(v)) throw ContractViolation("sweep: grid values must be finite");
  if (!std::is_sorted(grid.begin(), grid.end()))
    throw ContractViolation("sweep: grid must be sorted");
  std::vector<SweepPoint> out;
  const auto k = static_cast<Eigen::Index>(coordinate);
  for (double v : grid) {
    Vector grad = snapshot.grad;
    grad[k] = v;
    RuleState probe = snapshot.state;
    const Vector update = learned_step(opt, snapshot.groups, grad, probe);
    out.push_back({v, update[k]});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void write_csv(const fs::path& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::string body = header + "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) body += ',';
      body += row[i];
    }
    body += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ExperimentFailure("cannot write " + path.string());
  out << body;
  if (!out) throw ExperimentFailure("error while writing " + path.string());
}

}  // namespace

ExperimentRunner::ExperimentRunner(ExperimentConfig cfg, std::ostream* log)
    : cfg_(std::move(cfg)), log_(log) {}

ExperimentRunner::~ExperimentRunner() = default;

void ExperimentRunner::note(const std::string& message) {
  if (log_ != nullptr) *log_ << message << '\n';
}

fs::path ExperimentRunner::output(const std::string& file) const { return cfg_.output_dir / file; }

const ProblemFamily& ExperimentRunner::family() {
  if (family_) return *family_;
  if (cfg_.family == FamilyKind::kQuadratic) {
    family_ = std::make_unique<QuadraticFamily>(cfg_.quadratic.dim, cfg_.quadratic.theta_std);
    return *family_;
  }
  auto& m = cfg_.mlp;
  std::shared_ptr<Dataset> data;
  const int classes = static_cast<int>(m.architecture.n_classes);
  if (m.synthetic) {
    RngStream rng = seed_stream(cfg_.seed, SeedStream::kDataset);
    data = std::make_shared<Dataset>(synthetic_dataset(m.examples, m.features, classes, rng));
  } else {
    data = std::make_shared<Dataset>(load_idx(m.images_path, m.labels_path, m.max_examples, classes));
    if (m.minibatch > static_cast<std::size_t>(data->features.rows()))
      throw ExperimentFailure("minibatch of " + std::to_string(m.minibatch) +
                              " exceeds the " + std::to_string(data->features.rows()) +
                              " loaded examples");
  }
  m.architecture.input_dim = static_cast<std::size_t>(data->features.cols());
  family_ = std::make_unique<MlpFamily>(m.architecture, std::move(data), m.minibatch, m.theta_std);
  return *family_;
}

double ExperimentRunner::rate_for(const RosterEntry& entry) {
  if (entry.rate) return *entry.rate;
  if (tuned_.find(entry.name) == tuned_.end()) tune();
  return tuned_.at(entry.name).best_rate;
}

void ExperimentRunner::tune() {
  const ProblemFamily& fam = family();
  std::vector<std::vector<std::string>> rows;
  std::optional<std::string> failure;
  for (const auto& entry : cfg_.roster) {
    if (entry.learned || entry.rate) continue;
    note("tuning " + entry.name);
    std::vector<RateDiagnostics> per_rate;
    double best = std::numeric_limits<double>::quiet_NaN();
    try {
      TuneResult result = tune_learning_rate(entry.baseline, fam, cfg_.rate_grid,
                                             seed_stream(cfg_.seed, SeedStream::kTuning),
                                             cfg_.tuning);
      per_rate = result.per_rate;
      best = result.best_rate;
      tuned_[entry.name] = std::move(result);
    } catch (const TuningFailure& err) {
      per_rate = err.per_rate();
      if (!failure) failure = entry.name + ": " + err.what();
    }
    for (const auto& d : per_rate)
      rows.push_back({entry.name, std::string(to_string(entry.baseline)), format_real(d.rate),
                      format_real(d.mean_final_loss), std::to_string(d.diverged),
                      d.rate == best ? "1" : "0"});
  }
  write_csv(output("tuning.csv"), "name,kind,rate,mean_final_loss,diverged,selected", rows);
  if (failure) throw ExperimentFailure("tuning failed for " + *failure);
}

void ExperimentRunner::meta_train() {
  const ProblemFamily& fam = family();
  std::vector<std::vector<std::string>> rows;
  const RngStream init_stream = seed_stream(cfg_.seed, SeedStream::kOptimizerInit);
  for (std::size_t i = 0; i < cfg_.roster.size(); ++i) {
    const auto& entry = cfg_.roster[i];
    if (!entry.train) continue;
    note("meta-training " + entry.name);
    const LearnedOptimizer init = make_learned_optimizer(entry.options, init_stream.substream(i));
    MetaTrainResult result = l2l::meta_train(cfg_.meta, cfg_.unroll, fam, init);
    for (const auto& h : result.history)
      rows.push_back({entry.name, std::to_string(h.epoch), std::to_string(h.meta_iteration),
                      format_real(h.train_loss), format_real(h.validation_loss),
                      std::to_string(h.diverged)});
    note("  best epoch " + std::to_string(result.history[result.best_index].epoch) +
         ", validation loss " + format_real(result.history[result.best_index].validation_loss));
    fs::create_directories(cfg_.output_dir);
    save_optimizer_file(result.best, output(entry.name + ".l2l").string());
    learned_[entry.name] = std::move(result.best);
  }
  write_csv(output("history.csv"), "name,epoch,meta_iteration,train_loss,validation_loss,diverged",
            rows);
}

const LearnedOptimizer& ExperimentRunner::learned(const RosterEntry& entry) {
  if (auto it = learned_.find(entry.name); it != learned_.end()) return it->second;
  const std::string path = entry.train ? output(entry.name + ".l2l").string() : entry.path;
  std::error_code ec;
  if (!fs::is_regular_file(path, ec))
    throw ExperimentFailure("no trained optimizer for '" + entry.name + "' at " + path +
                            "; run meta-train first");
  return learned_[entry.name] = load_optimizer_file(path);
}

void ExperimentRunner::evaluate() {
  const ProblemFamily& fam = family();
  EvaluateOptions options;
  options.n_problems = cfg_.test_problems;
  options.steps = cfg_.steps;
  options.exclude_diverged = cfg_.exclude_diverged;
  std::vector<std::vector<std::string>> rows;
  std::size_t fully_diverged = 0;
  for (const auto& entry : cfg_.roster) {
    OptimizerRule rule = entry.learned
                             ? OptimizerRule(learned(entry))
                             : OptimizerRule(BaselineState::make(entry.baseline, rate_for(entry)));
    note("evaluating " + entry.name);
    const Curve curve =
        evaluate_optimizer(rule, fam, seed_stream(cfg_.seed, SeedStream::kTest), options);
    if (curve.diverged == options.n_problems) ++fully_diverged;
    if (curve.diverged > 0)
      note("  " + std::to_string(curve.diverged) + " of " + std::to_string(options.n_problems) +
           " runs diverged");
    for (std::size_t t = 0; t < options.steps; ++t)
      rows.push_back({entry.name, std::to_string(t + 1), format_real(curve.mean[t]),
                      format_real(curve.q25[t]), format_real(curve.q75[t]),
                      std::to_string(curve.diverged)});
  }
  write_csv(output("curves.csv"), "name,step,mean,q25,q75,diverged", rows);
  if (fully_diverged == cfg_.roster.size())
    throw ExperimentFailure("every evaluation run of every optimizer diverged");
}

void ExperimentRunner::trace() {
  if (!cfg_.trace.enabled) throw ExperimentFailure("the config has no [trace] section");
  const auto& t = cfg_.trace;
  const LearnedOptimizer& driver = learned(*cfg_.find(t.driver));
  std::vector<std::pair<std::string, BaselineState>> baselines;
  for (const auto& name : t.baselines) {
    const auto& entry = *cfg_.find(name);
    baselines.emplace_back(name, BaselineState::make(entry.baseline, rate_for(entry)));
  }
  ProblemSample sample = family().sample(seed_stream(cfg_.seed, SeedStream::kTrace));
  const TraceTable table = trace_coordinate_updates(driver, t.driver, baselines, *sample.problem,
                                                    sample.theta0, t.coordinates, t.steps);
  std::string header = "coord,step,grad";
  for (const auto& name : table.names) header += ",upd_" + name;
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : table.rows) {
    std::vector<std::string> row{std::to_string(r.coordinate), std::to_string(r.step),
                                 format_real(r.grad)};
    for (double u : r.updates) row.push_back(format_real(u));
    rows.push_back(std::move(row));
  }
  write_csv(output("trace.csv"), header, rows);
}

void ExperimentRunner::sweep() {
  if (!cfg_.sweep.enabled) throw ExperimentFailure("the config has no [sweep] section");
  const auto& s = cfg_.sweep;
  const LearnedOptimizer& opt = learned(*cfg_.find(s.optimizer));
  ProblemSample sample = family().sample(seed_stream(cfg_.seed, SeedStream::kTrace));
  if (s.coordinate >= sample.problem->dim())
    throw ExperimentFailure("sweep coordinate " + std::to_string(s.coordinate) +
                            " out of range for a problem of dimension " +
                            std::to_string(sample.problem->dim()));
  const RuleSnapshot snap = snapshot_after(opt, *sample.problem, sample.theta0, s.step);
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : update_response_sweep(opt, snap, s.coordinate, s.grid))
    rows.push_back({format_real(p.grad), format_real(p.update)});
  write_csv(output("sweep.csv"), "grad,update", rows);
}

void ExperimentRunner::run() {
  tune();
  meta_train();
  evaluate();
  if (cfg_.trace.enabled) trace();
  if (cfg_.sweep.enabled) sweep();
}

}  // namespace l2l
