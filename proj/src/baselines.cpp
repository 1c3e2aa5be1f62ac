#include "l2l/baselines.hpp"

#include <cmath>
#include <limits>

#include "l2l/parallel.hpp"

namespace l2l {

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kSgd: return "sgd";
    case BaselineKind::kNag: return "nag";
    case BaselineKind::kRmsprop: return "rmsprop";
    case BaselineKind::kAdam: return "adam";
  }
  return "unknown";
}

std::optional<BaselineKind> parse_baseline_kind(std::string_view name) {
  if (name == "sgd") return BaselineKind::kSgd;
  if (name == "nag") return BaselineKind::kNag;
  if (name == "rmsprop") return BaselineKind::kRmsprop;
  if (name == "adam") return BaselineKind::kAdam;
  return std::nullopt;
}

BaselineState BaselineState::make(BaselineKind kind, double learning_rate,
                                  BaselineHyperparams hyper) {
  BaselineState s;
  s.kind = kind;
  s.learning_rate = learning_rate;
  s.hyper = hyper;
  s.validate();
  return s;
}

void BaselineState::validate() const {
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ContractViolation("baseline: learning rate must be positive and finite");
  if (!in_unit(hyper.momentum) || !in_unit(hyper.decay) || !in_unit(hyper.beta1) ||
      !in_unit(hyper.beta2))
    throw ContractViolation("baseline: momentum, decay and betas must lie in (0, 1)");
  if (!(hyper.epsilon > 0.0)) throw ContractViolation("baseline: epsilon must be positive");
}

namespace {

void ensure_sized(Vector& v, Eigen::Index n) {
  if (v.size() == 0) v = Vector::Zero(n);
  if (v.size() != n) throw ContractViolation("baseline: accumulator dimension mismatch");
}

}  // namespace

Vector baseline_update(BaselineState& s, const Vector& grad) {
  const Eigen::Index n = grad.size();
  const double lr = s.learning_rate;
  Vector update;
  switch (s.kind) {
    case BaselineKind::kSgd:
      update = -lr * grad;
      break;
    case BaselineKind::kNag: {
      // Lookahead-free form: v' = mu v - lr g; theta' = theta + mu v' - lr g.
      ensure_sized(s.velocity, n);
      s.velocity = s.hyper.momentum * s.velocity - lr * grad;
      update = s.hyper.momentum * s.velocity - lr * grad;
      break;
    }
    case BaselineKind::kRmsprop: {
      ensure_sized(s.mean_square, n);
      const double rho = s.hyper.decay;
      s.mean_square = rho * s.mean_square + (1.0 - rho) * grad.cwiseAbs2();
      update = (-lr * grad.array() / (s.mean_square.array().sqrt() + s.hyper.epsilon)).matrix();
      break;
    }
    case BaselineKind::kAdam: {
      ensure_sized(s.first_moment, n);
      ensure_sized(s.second_moment, n);
      const double b1 = s.hyper.beta1;
      const double b2 = s.hyper.beta2;
      s.first_moment = b1 * s.first_moment + (1.0 - b1) * grad;
      s.second_moment = b2 * s.second_moment + (1.0 - b2) * grad.cwiseAbs2();
      const auto t = static_cast<double>(s.step_count + 1);
      const double c1 = 1.0 - std::pow(b1, t);
      const double c2 = 1.0 - std::pow(b2, t);
      update = (-lr * (s.first_moment.array() / c1) /
                ((s.second_moment.array() / c2).sqrt() + s.hyper.epsilon))
                   .matrix();
      break;
    }
  }
  ++s.step_count;
  if (!update.allFinite())
    throw DivergenceError(std::string(to_string(s.kind)) + ": non-finite update");
  return update;
}

Vector baseline_step(BaselineState& state, const Vector& theta, const Vector& grad) {
  if (theta.size() != grad.size()) throw ContractViolation("baseline_step: theta/grad mismatch");
  return theta + baseline_update(state, grad);
}

RunResult run_baseline(const BaselineState& init, Problem& problem, const Vector& theta0,
                       std::size_t steps) {
  RunResult result;
  result.losses.reserve(steps);
  BaselineState state = init;
  Vector theta = theta0;
  try {
    Evaluation eval = problem.evaluate(theta, 0);
    for (std::size_t t = 1; t <= steps; ++t) {
      theta += baseline_update(state, eval.grad);
      eval = problem.evaluate(theta, t);
      if (!std::isfinite(eval.loss)) throw DivergenceError("non-finite loss");
      result.losses.push_back(eval.loss);
    }
  } catch (const DivergenceError&) {
    result.diverged = true;
    result.losses.resize(steps, std::numeric_limits<double>::infinity());
  }
  return result;
}

std::vector<double> default_rate_grid() { return {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}; }

namespace {

RateDiagnostics score_rate(BaselineKind kind, double rate, const ProblemFamily& family,
                           const RngStream& rng, const TuneOptions& options) {
  const BaselineState init = BaselineState::make(kind, rate, options.hyper);
  std::vector<double> finals(options.budget);
  std::vector<char> diverged(options.budget, 0);
  parallel_for(options.budget, [&](std::size_t i) {
    ProblemSample sample = family.sample(rng.substream(i));
    RunResult run = run_baseline(init, *sample.problem, sample.theta0, options.steps);
    diverged[i] = run.diverged ? 1 : 0;
    finals[i] = options.steps == 0 ? sample.problem->evaluate(sample.theta0, 0).loss
                                   : run.losses.back();
  });
  RateDiagnostics d{rate, 0.0, 0};
  for (std::size_t i = 0; i < options.budget; ++i) {
    d.diverged += static_cast<std::size_t>(diverged[i]);
    d.mean_final_loss += finals[i];
  }
  d.mean_final_loss /= static_cast<double>(options.budget);
  if (d.diverged > 0 || !std::isfinite(d.mean_final_loss))
    d.mean_final_loss = std::numeric_limits<double>::infinity();
  return d;
}

bool better(const RateDiagnostics& a, const RateDiagnostics& b) {
  if (a.mean_final_loss != b.mean_final_loss) return a.mean_final_loss < b.mean_final_loss;
  return a.rate < b.rate;
}

}  // namespace

TuneResult tune_learning_rate(BaselineKind kind, const ProblemFamily& family,
                              const std::vector<double>& grid, const RngStream& rng,
                              const TuneOptions& options) {
  if (grid.empty()) throw ContractViolation("tune_learning_rate: empty grid");
  if (options.budget == 0) throw ContractViolation("tune_learning_rate: budget must be >= 1");

  TuneResult result;
  for (double rate : grid) result.per_rate.push_back(score_rate(kind, rate, family, rng, options));

  auto pick = [&] {
    const RateDiagnostics* best = &result.per_rate.front();
    for (const auto& d : result.per_rate)
      if (better(d, *best)) best = &d;
    return *best;
  };

  RateDiagnostics best = pick();
  if (options.refine && std::isfinite(best.mean_final_loss)) {
    const double half_decade = std::sqrt(10.0);
    for (double rate : {best.rate / half_decade, best.rate * half_decade}) {
      bool seen = false;
      for (const auto& d : result.per_rate) seen = seen || d.rate == rate;
      if (!seen) result.per_rate.push_back(score_rate(kind, rate, family, rng, options));
    }
    best = pick();
  }
  if (!std::isfinite(best.mean_final_loss))
    throw TuningFailure(std::string(to_string(kind)) + ": every learning rate diverged",
                        result.per_rate);
  result.best_rate = best.rate;
  return result;
}

}  // namespace l2l
