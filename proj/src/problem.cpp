#include "l2l/problem.hpp"

namespace l2l {

std::vector<std::string> Problem::coordinate_kinds() const {
  return std::vector<std::string>(dim(), "all");
}

Evaluation QuadraticProblem::evaluate(const Vector& theta, std::size_t /*iterate*/) {
  Vector residual = inst_.w * theta - inst_.y;
  return {residual.squaredNorm(), 2.0 * (inst_.w.transpose() * residual)};
}

ProblemSample QuadraticFamily::sample(RngStream rng) const {
  auto inst = quad_sample(dim_, rng);
  Vector theta0 = sample_gaussian_vector(rng, dim_, theta_std_);
  return {std::make_unique<QuadraticProblem>(std::move(inst)), std::move(theta0)};
}

ProblemSample IdentityQuadraticFamily::sample(RngStream rng) const {
  QuadraticInstance inst;
  inst.w = Matrix::Identity(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
  inst.y = sample_gaussian_vector(rng, dim_);
  Vector theta0 = sample_gaussian_vector(rng, dim_, theta_std_);
  return {std::make_unique<QuadraticProblem>(std::move(inst)), std::move(theta0)};
}

const Minibatch& MlpProblem::batch_for(std::size_t iterate) {
  while (batches_.size() <= iterate) batches_.push_back(inst_.next_minibatch());
  return batches_[iterate];
}

Evaluation MlpProblem::evaluate(const Vector& theta, std::size_t iterate) {
  auto [loss, grad] = mlp_loss_and_grad(inst_, theta, batch_for(iterate));
  return {loss, std::move(grad)};
}

std::vector<std::string> MlpProblem::coordinate_kinds() const {
  std::vector<std::string> kinds(dim());
  for (const auto& slot : inst_.shape_map())
    for (std::size_t i = 0; i < slot.size(); ++i)
      kinds[slot.offset + i] = slot.kind == TensorKind::kWeight ? "weight" : "bias";
  return kinds;
}

MlpFamily::MlpFamily(MlpArchitecture arch, std::shared_ptr<const Dataset> data,
                     std::size_t minibatch_size, double theta_std)
    : arch_(std::move(arch)),
      data_(std::move(data)),
      minibatch_size_(minibatch_size),
      theta_std_(theta_std) {
  arch_.validate();
}

ProblemSample MlpFamily::sample(RngStream rng) const {
  const std::size_t n = parameter_count(build_shape_map(arch_));
  Vector theta0 = sample_gaussian_vector(rng, n, theta_std_);
  MlpProblemInstance inst(arch_, data_, minibatch_size_, rng.substream(1));
  return {std::make_unique<MlpProblem>(std::move(inst)), std::move(theta0)};
}

}  // namespace l2l
