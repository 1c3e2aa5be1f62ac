#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "l2l/numerics.hpp"
#include "l2l/optimizee.hpp"

namespace l2l {

struct Evaluation {
  double loss;
  Vector grad;
};

// One sampled objective. evaluate() is indexed by the iterate number t of the
// episode so that stochastic objectives use the same minibatch for f(theta_t)
// and grad f(theta_t), and so a replay of iterate t sees the same batch.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::size_t dim() const = 0;
  virtual Evaluation evaluate(const Vector& theta, std::size_t iterate) = 0;
  // Kind label per coordinate ("weight", "bias", ...); used to resolve
  // parameter groups. Problems without structure label everything "all".
  virtual std::vector<std::string> coordinate_kinds() const;
};

struct ProblemSample {
  std::unique_ptr<Problem> problem;
  Vector theta0;
};

class ProblemFamily {
 public:
  virtual ~ProblemFamily() = default;
  virtual std::string name() const = 0;
  // Problem and initial point drawn entirely from rng.
  virtual ProblemSample sample(RngStream rng) const = 0;
};

class QuadraticProblem final : public Problem {
 public:
  explicit QuadraticProblem(QuadraticInstance inst) : inst_(std::move(inst)) {}
  std::size_t dim() const override { return inst_.dim(); }
  Evaluation evaluate(const Vector& theta, std::size_t iterate) override;
  const QuadraticInstance& instance() const { return inst_; }

 private:
  QuadraticInstance inst_;
};

class QuadraticFamily final : public ProblemFamily {
 public:
  explicit QuadraticFamily(std::size_t dim, double theta_std = 1.0)
      : dim_(dim), theta_std_(theta_std) {}
  std::string name() const override { return "quadratic"; }
  ProblemSample sample(RngStream rng) const override;

 private:
  std::size_t dim_;
  double theta_std_;
};

// Quadratics with W = I, so f(theta) = ||theta - y||^2. Used for closed-form
// checks of the baselines.
class IdentityQuadraticFamily final : public ProblemFamily {
 public:
  explicit IdentityQuadraticFamily(std::size_t dim, double theta_std = 1.0)
      : dim_(dim), theta_std_(theta_std) {}
  std::string name() const override { return "identity-quadratic"; }
  ProblemSample sample(RngStream rng) const override;

 private:
  std::size_t dim_;
  double theta_std_;
};

class MlpProblem final : public Problem {
 public:
  explicit MlpProblem(MlpProblemInstance inst) : inst_(std::move(inst)) {}
  std::size_t dim() const override { return inst_.parameter_count(); }
  Evaluation evaluate(const Vector& theta, std::size_t iterate) override;
  std::vector<std::string> coordinate_kinds() const override;
  const MlpProblemInstance& instance() const { return inst_; }
  // Minibatch used for iterate t; draws from the instance stream on demand.
  const Minibatch& batch_for(std::size_t iterate);

 private:
  MlpProblemInstance inst_;
  std::vector<Minibatch> batches_;
};

class MlpFamily final : public ProblemFamily {
 public:
  MlpFamily(MlpArchitecture arch, std::shared_ptr<const Dataset> data, std::size_t minibatch_size,
            double theta_std = 0.1);
  std::string name() const override { return "mlp"; }
  ProblemSample sample(RngStream rng) const override;
  const MlpArchitecture& architecture() const { return arch_; }

 private:
  MlpArchitecture arch_;
  std::shared_ptr<const Dataset> data_;
  std::size_t minibatch_size_;
  double theta_std_;
};

}  // namespace l2l
