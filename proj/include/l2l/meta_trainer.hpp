#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "l2l/baselines.hpp"
#include "l2l/learned_optimizer.hpp"
#include "l2l/problem.hpp"

namespace l2l {

// Named substreams of an experiment's master seed.
enum class SeedStream : std::uint64_t {
  kOptimizerInit = 0,
  kTraining = 1,
  kValidation = 2,
  kTest = 3,
  kTuning = 4,
  kMetaLearningRate = 5,
  kTrace = 6,
  kDataset = 7,
};

RngStream seed_stream(std::uint64_t master_seed, SeedStream stream);

struct Segment {
  std::size_t start = 0;   // iterate index the segment starts from
  std::size_t length = 0;  // number of updates
};

struct UnrollConfig {
  std::size_t horizon = 100;
  std::size_t truncation = 20;
  // Weight of f(theta_t) for t = 1..horizon. Empty means all ones.
  std::vector<double> step_weights;

  void validate() const;
  double weight(std::size_t iterate) const;
  // Consecutive truncation windows covering [0, horizon).
  std::vector<Segment> segments() const;
};

struct TraceStep {
  double loss;    // f(theta_t)
  Vector theta;   // theta_t
  Vector grad;    // gradient fed to the optimizer to produce this step
  Vector update;  // g_{t-1} = theta_t - theta_{t-1}
};

struct EpisodeTrace {
  std::vector<TraceStep> steps;
};

struct UnrollResult {
  double loss = 0.0;  // sum of w_t f(theta_t) over the segment
  EpisodeTrace trace;
  Vector theta_end;
  RuleState state_end;
};

// Forward recursion theta_{t+1} = theta_t + g_t over one segment. Throws
// DivergenceError when a loss or update is not finite.
UnrollResult unroll_loss(const LearnedOptimizer& opt, const ParameterGroupSpec& groups,
                         Problem& problem, const Vector& theta0, const RuleState& state0,
                         const UnrollConfig& cfg, Segment segment);

struct MetaGradientResult {
  UnrollResult unroll;
  Vector gradient;  // d L / d trainable_flat()
};

// Reverse-mode gradient of the segment loss with gradient inputs treated as
// constants: adjoints reach phi only through the updates g_t and the LSTM
// state; theta_t receives w_t * grad f(theta_t). No second derivatives of f.
// Adjoints of the carried state start at zero (truncation boundary).
MetaGradientResult meta_gradient(const LearnedOptimizer& opt, const ParameterGroupSpec& groups,
                                 Problem& problem, const Vector& theta0, const RuleState& state0,
                                 const UnrollConfig& cfg, Segment segment);

// ---------------------------------------------------------------------------

struct MetaTrainConfig {
  double meta_learning_rate = 1e-3;
  // When > 0, this many rates are drawn log-uniformly from
  // [meta_lr_min, meta_lr_max]; each trains a full optimizer and the one
  // with the best validation score wins.
  std::size_t meta_lr_trials = 0;
  double meta_lr_min = 1e-4;
  double meta_lr_max = 1e-1;
  std::size_t epochs = 20;
  std::size_t episodes_per_epoch = 100;
  std::size_t validation_problems = 20;
  std::size_t patience = 5;
  // Episodes run in lockstep whose segment gradients are averaged into one
  // update. 1 is strictly serial.
  std::size_t meta_batch = 1;
  // Rescale the averaged meta-gradient to at most this norm; 0 disables.
  double clip_norm = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct HistoryRow {
  std::size_t epoch;
  std::size_t meta_iteration;  // cumulative meta-updates at the end of the epoch
  double train_loss;           // mean per-step loss over the epoch's episodes
  double validation_loss;      // mean final loss on the validation set
  std::size_t diverged;        // divergent episodes during the epoch
};

struct MetaTrainResult {
  LearnedOptimizer best;
  std::vector<HistoryRow> history;
  std::size_t best_index = 0;  // row of history whose snapshot is `best`
  double meta_learning_rate = 0.0;
  bool stopped_early = false;
};

class MetaTrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mean of f(theta_horizon) over the problems drawn from rng substreams
// 0..count-1. +inf if any run diverges.
double validation_score(const LearnedOptimizer& opt, const ProblemFamily& family,
                        const RngStream& rng, std::size_t count, std::size_t horizon);

MetaTrainResult meta_train(const MetaTrainConfig& cfg, const UnrollConfig& ucfg,
                           const ProblemFamily& family, const LearnedOptimizer& initial);

// ---------------------------------------------------------------------------

using OptimizerRule = std::variant<LearnedOptimizer, BaselineState>;

// Losses f(theta_1..theta_steps) of one run; a divergent run is padded
// with +inf.
RunResult run_rule(const OptimizerRule& rule, Problem& problem, const Vector& theta0,
                   std::size_t steps);

struct Curve {
  std::vector<double> mean;  // index t-1 holds step t
  std::vector<double> q25;
  std::vector<double> q75;
  std::size_t diverged = 0;
};

struct EvaluateOptions {
  std::size_t n_problems = 100;
  std::size_t steps = 100;
  bool exclude_diverged = false;
};

// Runs the rule on problems drawn from rng substreams 0..n_problems-1 and
// aggregates f(theta_t) per step.
Curve evaluate_optimizer(const OptimizerRule& rule, const ProblemFamily& family,
                         const RngStream& rng, const EvaluateOptions& options);

}  // namespace l2l
