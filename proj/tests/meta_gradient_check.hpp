#pragma once

// Meta-gradient against central differences of the detached-gradient
// surrogate, for randomly drawn (phi, problem, segment) triples.

#include <algorithm>
#include <cmath>
#include <memory>

#include "oracles.hpp"

namespace oracle {

struct GradientComparison {
  double norm_relative = 0;      // ||a - r|| / ||r||
  double max_component_relative = 0;  // over components with |r_i| > floor
  std::size_t components = 0;
};

inline GradientComparison compare(const l2l::Vector& analytic, const RealVec& reference,
                                  Real floor = 1e-8L) {
  GradientComparison out;
  Real diff2 = 0, ref2 = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const Real a = analytic[static_cast<Eigen::Index>(i)];
    const Real r = reference[i];
    diff2 += (a - r) * (a - r);
    ref2 += r * r;
    if (std::fabs(r) > floor) {
      out.max_component_relative =
          std::max(out.max_component_relative, static_cast<double>(std::fabs(a - r) / std::fabs(r)));
      ++out.components;
    }
  }
  out.norm_relative = ref2 > 0 ? static_cast<double>(std::sqrt(diff2 / ref2)) : static_cast<double>(std::sqrt(diff2));
  return out;
}

enum class CheckFamily { kQuadratic, kMlp };

struct CheckOptions {
  CheckFamily family = CheckFamily::kQuadratic;
  std::size_t segment_length = 5;
  std::size_t prefix = 3;  // updates run before the segment to reach nonzero state
  std::size_t hidden = 4;
  l2l::Architecture architecture = l2l::Architecture::kPlain;
  l2l::Grouping grouping = l2l::Grouping::kSingle;
  double phi_std = 0.5;
  Real eps = 3e-4L;
  bool fourth_order = true;
};

inline std::shared_ptr<const l2l::Dataset> small_dataset() {
  static const auto data = [] {
    l2l::RngStream rng(2024);
    return std::make_shared<const l2l::Dataset>(l2l::synthetic_dataset(60, 3, 2, rng));
  }();
  return data;
}

inline std::unique_ptr<l2l::ProblemFamily> check_family(CheckFamily family) {
  if (family == CheckFamily::kQuadratic) return std::make_unique<l2l::QuadraticFamily>(6);
  l2l::MlpArchitecture arch{3, {3}, 2, l2l::Activation::kSigmoid};
  return std::make_unique<l2l::MlpFamily>(arch, small_dataset(), 6, 0.5);
}

// Draws a triple from rng and compares meta_gradient with the surrogate.
inline GradientComparison check_meta_gradient(const CheckOptions& o, l2l::RngStream rng) {
  const auto family = check_family(o.family);
  l2l::ProblemSample sample = family->sample(rng.substream(0));

  l2l::LearnedOptimizerOptions lo;
  lo.architecture = o.architecture;
  lo.grouping = o.grouping;
  if (o.grouping == l2l::Grouping::kByKind) lo.group_names = {"weight", "bias"};
  lo.init.n_hidden = o.hidden;
  if (o.family == CheckFamily::kMlp) {
    lo.init.input_mode = l2l::InputMode::kPreprocessed;
    lo.init.output_scale = 0.1;
  }
  if (o.architecture == l2l::Architecture::kGac) lo.gac = {{0}, {1}};
  l2l::LearnedOptimizer opt = make_learned_optimizer(lo, rng.substream(1));
  l2l::RngStream phi_rng = rng.substream(2);
  opt.assign_trainable(l2l::sample_gaussian_vector(phi_rng, opt.trainable_flat().size(), o.phi_std));

  l2l::UnrollConfig cfg;
  cfg.horizon = o.prefix + o.segment_length;
  cfg.truncation = std::max<std::size_t>(std::max(o.prefix, o.segment_length), 1);
  l2l::RngStream w_rng = rng.substream(3);
  for (std::size_t t = 0; t < cfg.horizon; ++t) cfg.step_weights.push_back(0.25 + w_rng.uniform());

  const l2l::ParameterGroupSpec groups = opt.resolve_groups(*sample.problem);
  l2l::RuleState state = initial_rule_state(opt, groups);
  l2l::Vector theta = sample.theta0;
  if (o.prefix > 0) {
    auto pre = l2l::unroll_loss(opt, groups, *sample.problem, theta, state, cfg, {0, o.prefix});
    theta = pre.theta_end;
    state = pre.state_end;
  }
  const l2l::Segment segment{o.prefix, o.segment_length};
  const l2l::MetaGradientResult mg =
      l2l::meta_gradient(opt, groups, *sample.problem, theta, state, cfg, segment);

  l2l::Problem* problem = sample.problem.get();
  std::function<Real(const RealVec&, std::size_t)> loss;
  if (o.family == CheckFamily::kQuadratic) {
    const auto inst = dynamic_cast<l2l::QuadraticProblem&>(*problem).instance();
    loss = [inst](const RealVec& th, std::size_t) { return quadratic_loss(inst, th); };
  } else {
    auto* mlp = dynamic_cast<l2l::MlpProblem*>(problem);
    loss = [mlp](const RealVec& th, std::size_t t) {
      return mlp_loss(mlp->instance(), mlp->batch_for(t), th);
    };
  }
  const Surrogate surrogate =
      make_surrogate(opt, groups, state, theta, mg.unroll, cfg, segment, loss);
  const RealVec phi = widen(opt.trainable_flat());
  const RealVec reference = o.fourth_order ? central_differences4(surrogate, phi, o.eps)
                                           : central_differences(surrogate, phi, o.eps);
  return compare(mg.gradient, reference);
}

}  // namespace oracle
