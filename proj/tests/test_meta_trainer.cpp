#include <cmath>
#include <limits>

#include "doctest.h"
#include "meta_gradient_check.hpp"

using namespace l2l;

namespace {

// Constant objective: every gradient is zero.
class FlatProblem final : public Problem {
 public:
  explicit FlatProblem(std::size_t n) : n_(n) {}
  std::size_t dim() const override { return n_; }
  Evaluation evaluate(const Vector&, std::size_t) override { return {2.0, Vector::Zero(static_cast<Eigen::Index>(n_))}; }

 private:
  std::size_t n_;
};

// Objective whose value is never finite.
class NanProblem final : public Problem {
 public:
  std::size_t dim() const override { return 3; }
  Evaluation evaluate(const Vector&, std::size_t) override {
    return {std::numeric_limits<double>::quiet_NaN(), Vector::Ones(3)};
  }
};

template <class P>
class FixedFamily final : public ProblemFamily {
 public:
  template <class... Args>
  explicit FixedFamily(Args... args) : make_([=] { return std::make_unique<P>(args...); }) {}
  std::string name() const override { return "fixed"; }
  ProblemSample sample(RngStream rng) const override {
    auto p = make_();
    const std::size_t n = p->dim();
    return {std::move(p), sample_gaussian_vector(rng, n)};
  }

 private:
  std::function<std::unique_ptr<P>()> make_;
};

LearnedOptimizer small_optimizer(std::uint64_t seed, double phi_std = 0.0, std::size_t hidden = 4) {
  LearnedOptimizerOptions o;
  o.init.n_hidden = hidden;
  LearnedOptimizer opt = make_learned_optimizer(o, RngStream(seed));
  if (phi_std > 0) {
    RngStream rng(seed + 1);
    opt.assign_trainable(sample_gaussian_vector(rng, opt.trainable_flat().size(), phi_std));
  }
  return opt;
}

double mean_initial_loss(const ProblemFamily& family, const RngStream& rng, std::size_t count) {
  double total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ProblemSample s = family.sample(rng.substream(i));
    total += s.problem->evaluate(s.theta0, 0).loss;
  }
  return total / static_cast<double>(count);
}

}  // namespace

TEST_SUITE("meta_trainer") {

TEST_CASE("unroll configuration") {
  UnrollConfig cfg;
  cfg.horizon = 45;
  cfg.truncation = 20;
  const auto segs = cfg.segments();
  REQUIRE(segs.size() == 3);
  CHECK(segs[2].start == 40);
  CHECK(segs[2].length == 5);
  CHECK(cfg.weight(7) == 1.0);
  cfg.step_weights = std::vector<double>(45, 0.0);
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg.step_weights[3] = -1;
  cfg.step_weights[4] = 2;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  UnrollConfig zero;
  zero.truncation = 0;
  CHECK_THROWS_AS(zero.validate(), ContractViolation);
  CHECK((seed_stream(5, SeedStream::kTest).next_u64() == RngStream(5).substream(3).next_u64()));
}

TEST_CASE("zero projection keeps theta fixed") {
  const LearnedOptimizer opt = small_optimizer(61);
  QuadraticFamily family(6);
  ProblemSample s = family.sample(RngStream(1));
  const auto groups = opt.resolve_groups(*s.problem);
  UnrollConfig cfg;
  cfg.horizon = 8;
  cfg.truncation = 8;
  cfg.step_weights = {1, 0.5, 2, 0, 1, 1, 3, 0.25};
  const UnrollResult r = unroll_loss(opt, groups, *s.problem, s.theta0, initial_rule_state(opt, groups), cfg, {0, 8});
  const double f0 = s.problem->evaluate(s.theta0, 0).loss;
  CHECK(r.loss == doctest::Approx(8.75 * f0).epsilon(1e-14));
  for (const auto& step : r.trace.steps) CHECK((step.theta.array() == s.theta0.array()).all());
  CHECK(r.trace.steps.size() == 8);
}

TEST_CASE("terminal weighting gives the final loss exactly") {
  const LearnedOptimizer opt = small_optimizer(62, 0.3);
  QuadraticFamily family(6);
  ProblemSample s = family.sample(RngStream(2));
  const auto groups = opt.resolve_groups(*s.problem);
  UnrollConfig cfg;
  cfg.horizon = 10;
  cfg.truncation = 10;
  cfg.step_weights.assign(10, 0.0);
  cfg.step_weights.back() = 1.0;
  const UnrollResult r = unroll_loss(opt, groups, *s.problem, s.theta0, initial_rule_state(opt, groups), cfg, {0, 10});
  CHECK(r.loss == r.trace.steps.back().loss);
  CHECK(r.loss == s.problem->evaluate(r.theta_end, 10).loss);
}

TEST_CASE("unrolled loss matches an independent replay") {
  RngStream rng(63);
  for (int trial = 0; trial < 10; ++trial) {
    const LearnedOptimizer opt = small_optimizer(64 + static_cast<std::uint64_t>(trial), 0.4);
    QuadraticFamily family(6);
    ProblemSample s = family.sample(rng.substream(static_cast<std::uint64_t>(trial)));
    const auto inst = dynamic_cast<QuadraticProblem&>(*s.problem).instance();
    const auto groups = opt.resolve_groups(*s.problem);
    UnrollConfig cfg;
    cfg.horizon = 12;
    cfg.truncation = 12;
    for (int t = 0; t < 12; ++t) cfg.step_weights.push_back(0.5 + 0.1 * t);
    const RuleState state0 = initial_rule_state(opt, groups);
    const UnrollResult r = unroll_loss(opt, groups, *s.problem, s.theta0, state0, cfg, {0, 12});

    // Replay with the bare cell recursion and closed-form quadratic.
    CoordinateStateBank bank = CoordinateStateBank::zeros(6, 4);
    Vector theta = s.theta0;
    double total = 0;
    for (std::size_t t = 1; t <= 12; ++t) {
      theta += optimizer_step(opt.params[0], quad_grad(inst, theta), bank);
      total += cfg.weight(t) * quad_eval(inst, theta);
    }
    CHECK(std::abs(total - r.loss) <= 1e-12 * std::abs(total));
    CHECK(relative_error(theta, r.theta_end) <= 1e-12);

    // The detached surrogate at phi reproduces the same value in long double.
    const oracle::Surrogate sur = oracle::make_surrogate(
        opt, groups, state0, s.theta0, r, cfg, {0, 12},
        [inst](const oracle::RealVec& th, std::size_t) { return oracle::quadratic_loss(inst, th); });
    const auto value = static_cast<double>(sur(oracle::widen(opt.trainable_flat())));
    CHECK(std::abs(value - r.loss) <= 1e-12 * std::abs(value));
  }
}

TEST_CASE("output bias gradient for a single step") {
  RngStream rng(65);
  LearnedOptimizer opt = small_optimizer(66, 0.4);
  opt.params[0].output_weights.setZero();
  opt.params[0].output_scale = 0.7;
  QuadraticFamily family(5);
  ProblemSample s = family.sample(rng);
  const auto groups = opt.resolve_groups(*s.problem);
  UnrollConfig cfg;
  cfg.horizon = 1;
  cfg.truncation = 1;
  const RuleState state0 = initial_rule_state(opt, groups);
  const MetaGradientResult mg = meta_gradient(opt, groups, *s.problem, s.theta0, state0, cfg, {0, 1});
  const Vector grad1 = s.problem->evaluate(mg.unroll.theta_end, 1).grad;
  const double expected = 0.7 * grad1.sum();
  const double analytic = mg.gradient[mg.gradient.size() - 1];
  CHECK(analytic == doctest::Approx(expected).epsilon(1e-12));

  const auto inst = dynamic_cast<QuadraticProblem&>(*s.problem).instance();
  const oracle::Surrogate sur = oracle::make_surrogate(
      opt, groups, state0, s.theta0, mg.unroll, cfg, {0, 1},
      [inst](const oracle::RealVec& th, std::size_t) { return oracle::quadratic_loss(inst, th); });
  const oracle::RealVec ref = oracle::central_differences4(sur, oracle::widen(opt.trainable_flat()), 3e-4L);
  CHECK(std::abs(analytic - static_cast<double>(ref.back())) <= 1e-6 * std::abs(analytic));
}

TEST_CASE("meta-gradients match the detached surrogate") {
  using oracle::CheckFamily;
  struct Case {
    CheckFamily family;
    Architecture arch;
    Grouping grouping;
    std::size_t length;
  };
  const Case cases[] = {
      {CheckFamily::kQuadratic, Architecture::kPlain, Grouping::kSingle, 1},
      {CheckFamily::kQuadratic, Architecture::kPlain, Grouping::kSingle, 5},
      {CheckFamily::kQuadratic, Architecture::kGac, Grouping::kSingle, 5},
      {CheckFamily::kMlp, Architecture::kPlain, Grouping::kSingle, 3},
      {CheckFamily::kMlp, Architecture::kPlain, Grouping::kByKind, 3},
      {CheckFamily::kMlp, Architecture::kGac, Grouping::kSingle, 2},
  };
  RngStream rng(67);
  for (std::size_t i = 0; i < std::size(cases); ++i) {
    oracle::CheckOptions o;
    o.family = cases[i].family;
    o.architecture = cases[i].arch;
    o.grouping = cases[i].grouping;
    o.segment_length = cases[i].length;
    if (o.family == CheckFamily::kMlp) o.hidden = 3;
    CAPTURE(i);
    const auto cmp = oracle::check_meta_gradient(o, rng.substream(i));
    CHECK(cmp.norm_relative <= 1e-4);
    CHECK(cmp.max_component_relative <= 1e-3);
    CHECK(cmp.components > 0);
  }
}

TEST_CASE("zero weights give a zero meta-gradient") {
  const LearnedOptimizer opt = small_optimizer(68, 0.4);
  QuadraticFamily family(5);
  ProblemSample s = family.sample(RngStream(3));
  const auto groups = opt.resolve_groups(*s.problem);
  UnrollConfig cfg;
  cfg.horizon = 10;
  cfg.truncation = 5;
  cfg.step_weights = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  const auto first = unroll_loss(opt, groups, *s.problem, s.theta0, initial_rule_state(opt, groups), cfg, {0, 5});
  const auto mg = meta_gradient(opt, groups, *s.problem, first.theta_end, first.state_end, cfg, {5, 5});
  CHECK(mg.gradient.isZero(0));
  CHECK(mg.unroll.loss == 0.0);
}

TEST_CASE("segments carry theta and state exactly") {
  const LearnedOptimizer opt = small_optimizer(69, 0.4);
  QuadraticFamily family(6);
  ProblemSample s = family.sample(RngStream(4));
  const auto groups = opt.resolve_groups(*s.problem);
  UnrollConfig one, two;
  one.horizon = two.horizon = 20;
  one.truncation = 20;
  two.truncation = 10;
  const RuleState state0 = initial_rule_state(opt, groups);
  const auto whole = unroll_loss(opt, groups, *s.problem, s.theta0, state0, one, {0, 20});
  const auto a = unroll_loss(opt, groups, *s.problem, s.theta0, state0, two, {0, 10});
  const auto b = unroll_loss(opt, groups, *s.problem, a.theta_end, a.state_end, two, {10, 10});
  for (std::size_t t = 0; t < 20; ++t) {
    const auto& x = whole.trace.steps[t];
    const auto& y = t < 10 ? a.trace.steps[t] : b.trace.steps[t - 10];
    CHECK((x.theta.array() == y.theta.array()).all());
    CHECK(x.loss == y.loss);
  }
  CHECK(whole.loss == doctest::Approx(a.loss + b.loss).epsilon(1e-14));
  CHECK(whole.state_end.banks[0] == b.state_end.banks[0]);
}

TEST_CASE("memory architectures have no meta-gradient") {
  LearnedOptimizerOptions o;
  o.architecture = Architecture::kNtmBfgs;
  o.init.n_hidden = 3;
  const LearnedOptimizer opt = make_learned_optimizer(o, RngStream(1));
  QuadraticFamily family(4);
  ProblemSample s = family.sample(RngStream(5));
  const auto groups = opt.resolve_groups(*s.problem);
  UnrollConfig cfg;
  cfg.horizon = 2;
  cfg.truncation = 2;
  CHECK_THROWS_AS(meta_gradient(opt, groups, *s.problem, s.theta0, initial_rule_state(opt, groups), cfg, {0, 2}),
                  ContractViolation);
  CHECK_THROWS_AS(meta_train(MetaTrainConfig{}, cfg, family, opt), ContractViolation);
}

TEST_CASE("meta-training") {
  QuadraticFamily family(10);
  UnrollConfig ucfg;
  ucfg.horizon = 20;
  ucfg.truncation = 10;
  MetaTrainConfig cfg;
  cfg.meta_learning_rate = 1e-2;
  cfg.epochs = 3;
  cfg.episodes_per_epoch = 20;
  cfg.validation_problems = 10;
  cfg.seed = 7;
  const LearnedOptimizer initial = small_optimizer(70, 0.0, 8);

  const MetaTrainResult r = meta_train(cfg, ucfg, family, initial);

  SUBCASE("bookkeeping") {
    REQUIRE(r.history.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r.history[i].epoch == i + 1);
      CHECK(r.history[i].meta_iteration == (i + 1) * 20 * 2);
    }
    const RngStream validation = seed_stream(cfg.seed, SeedStream::kValidation);
    const double score = validation_score(r.best, family, validation, cfg.validation_problems, ucfg.horizon);
    CHECK(score == r.history[r.best_index].validation_loss);
    for (const auto& row : r.history) CHECK(row.validation_loss >= r.history[r.best_index].validation_loss);
    CHECK(r.meta_learning_rate == cfg.meta_learning_rate);
  }

  SUBCASE("same seed is bit-identical") {
    const MetaTrainResult again = meta_train(cfg, ucfg, family, initial);
    CHECK(again.best == r.best);
    REQUIRE(again.history.size() == r.history.size());
    for (std::size_t i = 0; i < r.history.size(); ++i) {
      CHECK(again.history[i].train_loss == r.history[i].train_loss);
      CHECK(again.history[i].validation_loss == r.history[i].validation_loss);
    }
  }

  SUBCASE("training beats standing still") {
    const RngStream validation = seed_stream(cfg.seed, SeedStream::kValidation);
    const double f0 = mean_initial_loss(family, validation, cfg.validation_problems);
    CHECK(r.history[r.best_index].validation_loss < f0);
  }
}

TEST_CASE("meta-learning-rate search keeps the best trial") {
  QuadraticFamily family(4);
  UnrollConfig ucfg;
  ucfg.horizon = 6;
  ucfg.truncation = 3;
  MetaTrainConfig cfg;
  cfg.meta_lr_trials = 3;
  cfg.epochs = 1;
  cfg.episodes_per_epoch = 4;
  cfg.validation_problems = 4;
  const MetaTrainResult r = meta_train(cfg, ucfg, family, small_optimizer(71, 0.0, 3));
  CHECK(r.meta_learning_rate >= cfg.meta_lr_min);
  CHECK(r.meta_learning_rate <= cfg.meta_lr_max);
}

TEST_CASE("no improvement stops early with the first snapshot") {
  FixedFamily<FlatProblem> family(4);
  UnrollConfig ucfg;
  ucfg.horizon = 4;
  ucfg.truncation = 2;
  MetaTrainConfig cfg;
  cfg.meta_learning_rate = 1e-12;
  cfg.epochs = 10;
  cfg.episodes_per_epoch = 2;
  cfg.validation_problems = 2;
  cfg.patience = 1;
  const LearnedOptimizer initial = small_optimizer(72, 0.2, 3);
  const MetaTrainResult r = meta_train(cfg, ucfg, family, initial);
  CHECK(r.stopped_early);
  CHECK(r.history.size() == 2);
  CHECK(r.best_index == 0);
  CHECK(r.best == initial);
}

TEST_CASE("an epoch where every episode diverges aborts") {
  FixedFamily<NanProblem> family;
  UnrollConfig ucfg;
  ucfg.horizon = 4;
  ucfg.truncation = 2;
  MetaTrainConfig cfg;
  cfg.epochs = 2;
  cfg.episodes_per_epoch = 3;
  cfg.validation_problems = 2;
  CHECK_THROWS_AS(meta_train(cfg, ucfg, family, small_optimizer(73, 0.1, 3)), MetaTrainingFailure);
  MetaTrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("evaluation curves") {
  QuadraticFamily family(10);
  const RngStream rng(74);
  EvaluateOptions eo;
  eo.n_problems = 30;
  eo.steps = 25;

  SUBCASE("zero updates give a flat curve at the mean initial loss") {
    const Curve c = evaluate_optimizer(small_optimizer(75), family, rng, eo);
    const double f0 = mean_initial_loss(family, rng, eo.n_problems);
    REQUIRE(c.mean.size() == 25);
    for (double m : c.mean) CHECK(m == doctest::Approx(f0).epsilon(1e-12));
    CHECK(c.diverged == 0);
  }

  SUBCASE("curves extend past the training horizon") {
    eo.steps = 200;
    LearnedOptimizer opt = small_optimizer(76, 0.2);
    opt.params[0].output_scale = 0.01;
    const Curve c = evaluate_optimizer(opt, family, rng, eo);
    REQUIRE(c.mean.size() == 200);
    for (std::size_t t = 0; t < 200; ++t) {
      CHECK(std::isfinite(c.mean[t]));
      CHECK(c.q25[t] <= c.q75[t]);
    }
  }

  SUBCASE("sgd on identity quadratics follows the closed form") {
    IdentityQuadraticFamily eye(10);
    const double a = 0.05;
    const Curve c = evaluate_optimizer(BaselineState::make(BaselineKind::kSgd, a), eye, rng, eo);
    const double f0 = mean_initial_loss(eye, rng, eo.n_problems);
    for (std::size_t t = 1; t <= eo.steps; ++t) {
      const double expected = std::pow(1 - 2 * a, 2.0 * static_cast<double>(t)) * f0;
      CHECK(std::abs(c.mean[t - 1] - expected) <= 1e-9 * expected);
    }
  }

  SUBCASE("divergent runs are counted and optionally excluded") {
    const BaselineState wild = BaselineState::make(BaselineKind::kSgd, 1e12);
    const Curve kept = evaluate_optimizer(wild, family, rng, eo);
    CHECK(kept.diverged == eo.n_problems);
    CHECK(std::isinf(kept.mean.back()));
    eo.exclude_diverged = true;
    const Curve dropped = evaluate_optimizer(wild, family, rng, eo);
    CHECK(std::isnan(dropped.mean.back()));
    CHECK(dropped.diverged == eo.n_problems);
  }
}

}
