#include "l2l/meta_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "l2l/parallel.hpp"

namespace l2l {

RngStream seed_stream(std::uint64_t master_seed, SeedStream stream) {
  return RngStream(master_seed).substream(static_cast<std::uint64_t>(stream));
}

void UnrollConfig::validate() const {
  if (horizon == 0 || truncation == 0)
    throw ContractViolation("UnrollConfig: horizon and truncation must be >= 1");
  if (step_weights.empty()) return;
  if (step_weights.size() != horizon)
    throw ContractViolation("UnrollConfig: step_weights must have one entry per horizon step");
  bool any_positive = false;
  for (double w : step_weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ContractViolation("UnrollConfig: step weights must be finite and nonnegative");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw ContractViolation("UnrollConfig: at least one step weight must be positive");
}

double UnrollConfig::weight(std::size_t iterate) const {
  if (step_weights.empty()) return 1.0;
  if (iterate == 0 || iterate > step_weights.size()) return 0.0;
  return step_weights[iterate - 1];
}

std::vector<Segment> UnrollConfig::segments() const {
  std::vector<Segment> out;
  for (std::size_t start = 0; start < horizon; start += truncation)
    out.push_back({start, std::min(truncation, horizon - start)});
  return out;
}

namespace {

struct SegmentTape {
  std::vector<std::vector<StackTape>> steps;  // [step][group]
  std::vector<Vector> loss_grads;             // grad f(theta_t), t = 1..S
};

UnrollResult forward_segment(const LearnedOptimizer& opt, const ParameterGroupSpec& groups,
                             Problem& problem, const Vector& theta0, const RuleState& state0,
                             const UnrollConfig& cfg, Segment segment, SegmentTape* tape) {
  if (segment.length > cfg.truncation)
    throw ContractViolation("unroll_loss: segment longer than the truncation length");
  if (static_cast<std::size_t>(theta0.size()) != problem.dim())
    throw ContractViolation("unroll_loss: theta0 dimension mismatch");

  UnrollResult result;
  result.state_end = state0;
  Vector theta = theta0;
  Evaluation eval = problem.evaluate(theta, segment.start);
  if (tape != nullptr) {
    tape->steps.resize(segment.length);
    tape->loss_grads.resize(segment.length);
  }
  for (std::size_t t = 1; t <= segment.length; ++t) {
    Vector update = learned_step(opt, groups, eval.grad, result.state_end,
                                 tape ? &tape->steps[t - 1] : nullptr);
    theta += update;
    Vector grad_in = std::move(eval.grad);
    const std::size_t iterate = segment.start + t;
    eval = problem.evaluate(theta, iterate);
    if (!std::isfinite(eval.loss) || !eval.grad.allFinite())
      throw DivergenceError("unroll_loss: non-finite loss at iterate " + std::to_string(iterate));
    result.loss += cfg.weight(iterate) * eval.loss;
    if (tape != nullptr) tape->loss_grads[t - 1] = eval.grad;
    result.trace.steps.push_back({eval.loss, theta, std::move(grad_in), std::move(update)});
  }
  if (!std::isfinite(result.loss)) throw DivergenceError("unroll_loss: non-finite segment loss");
  result.theta_end = std::move(theta);
  return result;
}

}  // namespace

UnrollResult unroll_loss(const LearnedOptimizer& opt, const ParameterGroupSpec& groups,
                         Problem& problem, const Vector& theta0, const RuleState& state0,
                         const UnrollConfig& cfg, Segment segment) {
  return forward_segment(opt, groups, problem, theta0, state0, cfg, segment, nullptr);
}

MetaGradientResult meta_gradient(const LearnedOptimizer& opt, const ParameterGroupSpec& groups,
                                 Problem& problem, const Vector& theta0, const RuleState& state0,
                                 const UnrollConfig& cfg, Segment segment) {
  if (!opt.trainable())
    throw ContractViolation("meta_gradient: " + std::string(to_string(opt.architecture)) +
                            " optimizers are evaluation-only");
  SegmentTape tape;
  MetaGradientResult out;
  out.unroll = forward_segment(opt, groups, problem, theta0, state0, cfg, segment, &tape);

  const GacSpec* gac = opt.architecture == Architecture::kGac ? &opt.gac : nullptr;
  const std::size_t n_groups = groups.groups.size();
  std::vector<LstmOptimizerParams> grads;
  std::vector<StackAdjoint> carry;
  for (std::size_t g = 0; g < n_groups; ++g) {
    grads.push_back(opt.params[g].zeros_like());
    carry.push_back(
        StackAdjoint::zeros(groups.groups[g].indices.size(), opt.params[g].n_hidden()));
  }

  // Under the constant-gradient convention d theta_{t+1} / d theta_t = I, so
  // the adjoint of theta_t is the running sum of w_s grad f(theta_s), s >= t.
  Vector theta_adjoint = Vector::Zero(theta0.size());
  for (std::size_t t = segment.length; t >= 1; --t) {
    theta_adjoint += cfg.weight(segment.start + t) * tape.loss_grads[t - 1];
    for (std::size_t g = 0; g < n_groups; ++g) {
      const auto& idx = groups.groups[g].indices;
      if (idx.empty()) continue;
      Vector local(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j)
        local[static_cast<Eigen::Index>(j)] = theta_adjoint[static_cast<Eigen::Index>(idx[j])];
      backward_step(opt.params[g], tape.steps[t - 1][g], local, gac, carry[g], grads[g]);
    }
  }

  std::size_t total = 0;
  for (const auto& g : grads) total += g.parameter_count();
  out.gradient.resize(static_cast<Eigen::Index>(total));
  Eigen::Index at = 0;
  for (const auto& g : grads) {
    const Vector part = g.to_flat();
    out.gradient.segment(at, part.size()) = part;
    at += part.size();
  }
  return out;
}

// ---------------------------------------------------------------------------

void MetaTrainConfig::validate() const {
  if (epochs == 0 || episodes_per_epoch == 0 || validation_problems == 0 || patience == 0 ||
      meta_batch == 0)
    throw ContractViolation("MetaTrainConfig: counts must be >= 1");
  if (meta_lr_trials == 0 && !(meta_learning_rate > 0.0))
    throw ContractViolation("MetaTrainConfig: meta learning rate must be positive");
  if (meta_lr_trials > 0 && !(meta_lr_min > 0.0 && meta_lr_max >= meta_lr_min))
    throw ContractViolation("MetaTrainConfig: need 0 < meta_lr_min <= meta_lr_max");
  if (clip_norm < 0.0) throw ContractViolation("MetaTrainConfig: clip_norm must be >= 0");
}

RunResult run_rule(const OptimizerRule& rule, Problem& problem, const Vector& theta0,
                   std::size_t steps) {
  if (const auto* baseline = std::get_if<BaselineState>(&rule))
    return run_baseline(*baseline, problem, theta0, steps);

  const auto& opt = std::get<LearnedOptimizer>(rule);
  RunResult result;
  result.losses.reserve(steps);
  const ParameterGroupSpec groups = opt.resolve_groups(problem);
  RuleState state = initial_rule_state(opt, groups);
  Vector theta = theta0;
  try {
    Evaluation eval = problem.evaluate(theta, 0);
    for (std::size_t t = 1; t <= steps; ++t) {
      theta += learned_step(opt, groups, eval.grad, state);
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

double validation_score(const LearnedOptimizer& opt, const ProblemFamily& family,
                        const RngStream& rng, std::size_t count, std::size_t horizon) {
  std::vector<double> finals(count);
  parallel_for(count, [&](std::size_t i) {
    ProblemSample sample = family.sample(rng.substream(i));
    RunResult run = run_rule(opt, *sample.problem, sample.theta0, horizon);
    finals[i] = run.diverged ? std::numeric_limits<double>::infinity() : run.losses.back();
  });
  double sum = 0.0;
  for (double f : finals) sum += f;
  return sum / static_cast<double>(count);
}

namespace {

struct Episode {
  ProblemSample sample;
  ParameterGroupSpec groups;
  RuleState state;
  Vector theta;
  double loss = 0.0;
  bool alive = true;
};

MetaTrainResult train_with_rate(const MetaTrainConfig& cfg, const UnrollConfig& ucfg,
                                const ProblemFamily& family, const LearnedOptimizer& initial,
                                double learning_rate) {
  MetaTrainResult result;
  result.meta_learning_rate = learning_rate;
  LearnedOptimizer opt = initial;
  BaselineState adam = BaselineState::make(BaselineKind::kAdam, learning_rate);
  const RngStream training = seed_stream(cfg.seed, SeedStream::kTraining);
  const RngStream validation = seed_stream(cfg.seed, SeedStream::kValidation);
  const auto segments = ucfg.segments();

  double best_score = std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;
  std::size_t episode_index = 0;
  std::size_t meta_iteration = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double train_sum = 0.0;
    std::size_t completed = 0;
    std::size_t diverged = 0;

    for (std::size_t done = 0; done < cfg.episodes_per_epoch;) {
      const std::size_t batch = std::min(cfg.meta_batch, cfg.episodes_per_epoch - done);
      std::vector<Episode> episodes(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        Episode& ep = episodes[b];
        ep.sample = family.sample(training.substream(episode_index + b));
        ep.groups = opt.resolve_groups(*ep.sample.problem);
        ep.state = initial_rule_state(opt, ep.groups);
        ep.theta = ep.sample.theta0;
      }

      for (const Segment& segment : segments) {
        std::vector<std::optional<MetaGradientResult>> grads(batch);
        parallel_for(batch, [&](std::size_t b) {
          Episode& ep = episodes[b];
          if (!ep.alive) return;
          try {
            grads[b] = meta_gradient(opt, ep.groups, *ep.sample.problem, ep.theta, ep.state, ucfg,
                                     segment);
          } catch (const DivergenceError&) {
            ep.alive = false;
          }
        });

        Vector mean;
        std::size_t contributing = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          if (!grads[b]) continue;
          Episode& ep = episodes[b];
          MetaGradientResult& g = *grads[b];
          if (!g.gradient.allFinite()) {
            ep.alive = false;
            continue;
          }
          ep.loss += g.unroll.loss;
          ep.theta = std::move(g.unroll.theta_end);
          ep.state = std::move(g.unroll.state_end);
          mean = contributing == 0 ? g.gradient : Vector(mean + g.gradient);
          ++contributing;
        }
        if (contributing == 0) break;
        mean /= static_cast<double>(contributing);
        if (cfg.clip_norm > 0.0) {
          const double norm = mean.norm();
          if (norm > cfg.clip_norm) mean *= cfg.clip_norm / norm;
        }
        Vector flat = opt.trainable_flat();
        flat += baseline_update(adam, mean);
        opt.assign_trainable(flat);
        ++meta_iteration;
      }

      for (const Episode& ep : episodes) {
        if (ep.alive) {
          train_sum += ep.loss / static_cast<double>(ucfg.horizon);
          ++completed;
        } else {
          ++diverged;
        }
      }
      episode_index += batch;
      done += batch;
    }

    if (completed == 0)
      throw MetaTrainingFailure("meta_train: every episode of epoch " + std::to_string(epoch) +
                                " diverged (" + std::to_string(diverged) + " episodes, rate " +
                                std::to_string(learning_rate) + ")");

    const double score =
        validation_score(opt, family, validation, cfg.validation_problems, ucfg.horizon);
    result.history.push_back(
        {epoch, meta_iteration, train_sum / static_cast<double>(completed), score, diverged});
    if (result.history.size() == 1 || score < best_score) {
      best_score = score;
      result.best = opt;
      result.best_index = result.history.size() - 1;
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  return result;
}

}  // namespace

MetaTrainResult meta_train(const MetaTrainConfig& cfg, const UnrollConfig& ucfg,
                           const ProblemFamily& family, const LearnedOptimizer& initial) {
  cfg.validate();
  ucfg.validate();
  initial.validate();
  if (!initial.trainable())
    throw ContractViolation("meta_train: " + std::string(to_string(initial.architecture)) +
                            " optimizers cannot be meta-trained");
  if (cfg.meta_lr_trials == 0)
    return train_with_rate(cfg, ucfg, family, initial, cfg.meta_learning_rate);

  RngStream rates = seed_stream(cfg.seed, SeedStream::kMetaLearningRate);
  std::optional<MetaTrainResult> best;
  for (std::size_t trial = 0; trial < cfg.meta_lr_trials; ++trial) {
    const double rate = rates.log_uniform(cfg.meta_lr_min, cfg.meta_lr_max);
    MetaTrainResult candidate;
    try {
      candidate = train_with_rate(cfg, ucfg, family, initial, rate);
    } catch (const MetaTrainingFailure&) {
      continue;
    }
    const double score = candidate.history[candidate.best_index].validation_loss;
    if (!best || score < best->history[best->best_index].validation_loss)
      best = std::move(candidate);
  }
  if (!best) throw MetaTrainingFailure("meta_train: every meta learning-rate trial diverged");
  return std::move(*best);
}

// ---------------------------------------------------------------------------

namespace {

double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (values[lo] == values[hi] || frac == 0.0) return values[lo];
  if (!std::isfinite(values[hi])) return values[hi];
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

Curve evaluate_optimizer(const OptimizerRule& rule, const ProblemFamily& family,
                         const RngStream& rng, const EvaluateOptions& options) {
  if (options.n_problems == 0) throw ContractViolation("evaluate_optimizer: n_problems must be >= 1");
  std::vector<RunResult> runs(options.n_problems);
  parallel_for(options.n_problems, [&](std::size_t i) {
    ProblemSample sample = family.sample(rng.substream(i));
    runs[i] = run_rule(rule, *sample.problem, sample.theta0, options.steps);
  });

  Curve curve;
  for (const auto& run : runs) curve.diverged += run.diverged ? 1 : 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t t = 0; t < options.steps; ++t) {
    std::vector<double> values;
    values.reserve(runs.size());
    for (const auto& run : runs)
      if (!(options.exclude_diverged && run.diverged)) values.push_back(run.losses[t]);
    if (values.empty()) {
      curve.mean.push_back(nan);
      curve.q25.push_back(nan);
      curve.q75.push_back(nan);
      continue;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    curve.mean.push_back(sum / static_cast<double>(values.size()));
    curve.q25.push_back(quantile(values, 0.25));
    curve.q75.push_back(quantile(values, 0.75));
  }
  return curve;
}

}  // namespace l2l
