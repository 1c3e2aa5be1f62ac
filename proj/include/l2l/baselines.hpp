#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "l2l/numerics.hpp"
#include "l2l/problem.hpp"

namespace l2l {

enum class BaselineKind { kSgd, kNag, kRmsprop, kAdam };

std::string_view to_string(BaselineKind kind);
std::optional<BaselineKind> parse_baseline_kind(std::string_view name);

struct BaselineHyperparams {
  double momentum = 0.9;    // nag
  double decay = 0.9;       // rmsprop
  double beta1 = 0.9;       // adam
  double beta2 = 0.999;     // adam
  double epsilon = 1e-8;    // rmsprop, adam
};

// A hand-designed rule plus its accumulators. Accumulators are sized lazily
// on the first step.
struct BaselineState {
  BaselineKind kind = BaselineKind::kSgd;
  double learning_rate = 0.0;
  BaselineHyperparams hyper;

  Vector velocity;        // nag
  Vector mean_square;     // rmsprop
  Vector first_moment;    // adam
  Vector second_moment;   // adam
  std::uint64_t step_count = 0;

  static BaselineState make(BaselineKind kind, double learning_rate,
                            BaselineHyperparams hyper = {});
  void validate() const;
};

// Update g such that theta' = theta + g. Throws DivergenceError on a
// non-finite update.
Vector baseline_update(BaselineState& state, const Vector& grad);

// theta' = theta + baseline_update(state, grad).
Vector baseline_step(BaselineState& state, const Vector& theta, const Vector& grad);

// Losses f(theta_1..theta_steps) for one run of a baseline; iterate 0 is
// only used for its gradient.
struct RunResult {
  std::vector<double> losses;
  bool diverged = false;
};

RunResult run_baseline(const BaselineState& init, Problem& problem, const Vector& theta0,
                       std::size_t steps);

struct RateDiagnostics {
  double rate;
  double mean_final_loss;  // +inf when any run diverged
  std::size_t diverged;
};

struct TuneResult {
  double best_rate;
  std::vector<RateDiagnostics> per_rate;  // in evaluation order
};

class TuningFailure : public std::runtime_error {
 public:
  TuningFailure(const std::string& what, std::vector<RateDiagnostics> per_rate)
      : std::runtime_error(what), per_rate_(std::move(per_rate)) {}
  const std::vector<RateDiagnostics>& per_rate() const { return per_rate_; }

 private:
  std::vector<RateDiagnostics> per_rate_;
};

// {10^k : k = -4..1}
std::vector<double> default_rate_grid();

struct TuneOptions {
  std::size_t budget = 20;   // sampled problems per rate
  std::size_t steps = 100;   // optimization steps per problem
  // After the grid, also try the winner times 10^(+-1/2) and keep the best.
  bool refine = false;
  BaselineHyperparams hyper;
};

// Grid search for the learning rate with the lowest mean final loss over
// `budget` problems drawn from rng substreams 0..budget-1. Ties go to the
// smaller rate. Throws TuningFailure when every rate diverges.
TuneResult tune_learning_rate(BaselineKind kind, const ProblemFamily& family,
                              const std::vector<double>& grid, const RngStream& rng,
                              const TuneOptions& options = {});

}  // namespace l2l
