#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "l2l/baselines.hpp"
#include "l2l/learned_optimizer.hpp"
#include "l2l/meta_trainer.hpp"

namespace l2l {

// ---------------------------------------------------------------------------
// Line-oriented config files:
//
//   # comment
//   [section]
//   key = value

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& key,
              const std::string& message);
  std::size_t line() const { return line_; }  // 0 when no single line applies
  const std::string& key() const { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line;
};

struct ConfigSection {
  std::string name;
  std::size_t line;
  std::vector<ConfigEntry> entries;  // in file order

  const ConfigEntry* find(std::string_view key) const;
};

struct ConfigFile {
  std::string source;
  std::vector<ConfigSection> sections;

  static ConfigFile parse(std::istream& in, const std::string& source);
  static ConfigFile load(const std::string& path);
  const ConfigSection* section(std::string_view name) const;
};

// ---------------------------------------------------------------------------

enum class FamilyKind { kQuadratic, kMlp };

struct QuadraticSettings {
  std::size_t dim = 10;
  double theta_std = 1.0;
};

struct MlpSettings {
  bool synthetic = true;
  std::string images_path;  // IDX sources
  std::string labels_path;
  std::size_t max_examples = 0;
  std::size_t examples = 1000;  // synthetic sources
  std::size_t features = 8;
  MlpArchitecture architecture{8, {20}, 2, Activation::kSigmoid};
  std::size_t minibatch = 128;
  double theta_std = 0.1;
};

struct RosterEntry {
  std::string name;
  bool learned = false;
  // Baselines: a fixed rate, or nullopt to tune.
  BaselineKind baseline = BaselineKind::kSgd;
  std::optional<double> rate;
  // Learned: meta-train from `options`, or load `path`.
  bool train = false;
  std::string path;
  LearnedOptimizerOptions options;
};

struct TraceSettings {
  bool enabled = false;
  std::string driver;                  // learned roster entry
  std::vector<std::string> baselines;  // baseline roster entries
  std::vector<std::size_t> coordinates{0};
  std::size_t steps = 32;
};

struct SweepSettings {
  bool enabled = false;
  std::string optimizer;  // learned roster entry
  std::size_t coordinate = 0;
  std::size_t step = 0;  // probe the state reached after this many updates
  std::vector<double> grid;
};

struct ExperimentConfig {
  std::string source;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  FamilyKind family = FamilyKind::kQuadratic;
  QuadraticSettings quadratic;
  MlpSettings mlp;

  std::size_t steps = 100;          // evaluation horizon
  std::size_t test_problems = 100;
  bool exclude_diverged = false;

  std::vector<double> rate_grid = default_rate_grid();
  TuneOptions tuning;

  std::vector<RosterEntry> roster;
  UnrollConfig unroll;
  MetaTrainConfig meta;
  TraceSettings trace;
  SweepSettings sweep;

  const RosterEntry* find(std::string_view name) const;
};

// Typed view of a config. Relative paths resolve against base_dir. Throws
// ConfigError naming the offending line or key.
ExperimentConfig parse_experiment_config(const ConfigFile& file,
                                         const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::string& path);

// ---------------------------------------------------------------------------

// Fixed-notation-free decimal rendering with 17 significant digits,
// independent of the global locale.
std::string format_real(double value);

// Updates proposed along a single trajectory driven by the learned rule.
// Baselines see the same gradient sequence and keep their own accumulators
// but never move theta.
struct TraceTable {
  std::vector<std::string> names;  // names[0] is the driver
  struct Row {
    std::size_t coordinate;
    std::size_t step;  // 1-based; row t holds grad f(theta_{t-1}) and g_{t-1}
    double grad;
    std::vector<double> updates;  // one per name
  };
  std::vector<Row> rows;  // coordinate-major
};

TraceTable trace_coordinate_updates(const LearnedOptimizer& driver, const std::string& driver_name,
                                    const std::vector<std::pair<std::string, BaselineState>>& baselines,
                                    Problem& problem, const Vector& theta0,
                                    const std::vector<std::size_t>& coordinates, std::size_t steps);

// Learned rule state reached after `step` updates, with the gradient and
// update of the following step.
struct RuleSnapshot {
  ParameterGroupSpec groups;
  RuleState state;
  Vector grad;    // grad f(theta_step)
  Vector update;  // g_step actually taken from this state
};

RuleSnapshot snapshot_after(const LearnedOptimizer& opt, Problem& problem, const Vector& theta0,
                            std::size_t step);

struct SweepPoint {
  double grad;
  double update;
};

// Update proposed for `coordinate` when its gradient entry is replaced by
// each grid value, every probe starting from the same snapshot.
std::vector<SweepPoint> update_response_sweep(const LearnedOptimizer& opt,
                                              const RuleSnapshot& snapshot,
                                              std::size_t coordinate,
                                              const std::vector<double>& grid);

// ---------------------------------------------------------------------------

class ExperimentFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Drives tuning, meta-training, evaluation and the visualisation emitters
// for one config. Artifacts land in cfg.output_dir:
//   tuning.csv   name,kind,rate,mean_final_loss,diverged,selected
//   history.csv  name,epoch,meta_iteration,train_loss,validation_loss,diverged
//   <name>.l2l   every meta-trained optimizer
//   curves.csv   name,step,mean,q25,q75,diverged
//   trace.csv    coord,step,grad,upd_<name>...
//   sweep.csv    grad,update
class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig cfg, std::ostream* log = nullptr);
  ~ExperimentRunner();

  const ExperimentConfig& config() const { return cfg_; }
  const ProblemFamily& family();

  void tune();
  void meta_train();
  void evaluate();
  void trace();
  void sweep();
  // tune, meta-train, evaluate, then trace and sweep when configured.
  void run();

  // Rate used for a baseline entry (tunes on demand).
  double rate_for(const RosterEntry& entry);
  // Learned entry: loaded from its file or from the output directory.
  const LearnedOptimizer& learned(const RosterEntry& entry);

 private:
  std::filesystem::path output(const std::string& file) const;
  void note(const std::string& message);

  ExperimentConfig cfg_;
  std::ostream* log_;
  std::unique_ptr<ProblemFamily> family_;
  std::map<std::string, TuneResult> tuned_;
  std::map<std::string, LearnedOptimizer> learned_;
};

}  // namespace l2l
