#include "cvcrf/moe.hpp"

#include <cmath>
#include <stdexcept>

namespace cvcrf {

Tensor gate_weights(const Tensor& z_long, const Tensor& z_trans, const ClassCenters& centers, bool stop_gradient) {
  if (z_long.shape() != z_trans.shape() || z_long.rank() != 2 || z_long.dim(1) != centers.dim) {
    throw ShapeError("gate_weights", z_long.shape(), z_trans.shape());
  }
  Tensor z_cat = ops::concat({z_long, z_trans}, 1);
  if (stop_gradient) z_cat = z_cat.detach();
  std::size_t degenerate = 0;
  const Tensor z_unit = ops::l2_normalize(z_cat, 1, 1e-12, &degenerate);
  if (degenerate) throw NumericError("gate_weights: zero-norm concatenated feature");

  const std::size_t width = 2 * centers.dim;
  const std::vector<double> mu = centers.concatenated();
  const std::vector<double> mu_unit = normalized_rows(mu, width);
  for (std::size_t k = 0; k < centers.num_classes; ++k) {
    double sq = 0.0;
    for (std::size_t i = 0; i < width; ++i) sq += mu_unit[k * width + i] * mu_unit[k * width + i];
    if (sq == 0.0) throw NumericError("gate_weights: zero-norm class center " + std::to_string(k));
  }
  const Tensor sims =
      ops::matmul(z_unit, ops::transpose(Tensor::from_data({centers.num_classes, width}, std::vector<double>(mu_unit))));
  return ops::softmax(sims, 1);
}

double mean_gate_entropy(const Tensor& weights) {
  const auto w = weights.data();
  const std::size_t rows = weights.dim(0), k = weights.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      const double p = w[r * k + i];
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(rows);
}

ExpertEnsemble::ExpertEnsemble(std::size_t fused_dim, std::size_t num_experts, std::size_t num_classes,
                               ParameterStore& store, const std::string& prefix, std::mt19937_64& rng)
    : fused_dim_(fused_dim) {
  if (fused_dim < 2 || fused_dim % 2 != 0) throw std::invalid_argument("experts: fused_dim must be even");
  if (num_experts == 0 || num_classes < 2) throw std::invalid_argument("experts: need experts and >= 2 classes");
  const std::size_t hidden = fused_dim, out = fused_dim / 2;
  for (std::size_t k = 0; k < num_experts; ++k) {
    const std::string name = prefix + ".expert" + std::to_string(k);
    Expert e;
    e.w1 = store.add_he(name + ".fc1.weight", {fused_dim, hidden}, fused_dim, rng);
    e.b1 = store.add_zeros(name + ".fc1.bias", {hidden});
    e.w2 = store.add_lecun(name + ".fc2.weight", {hidden, out}, hidden, rng);
    e.b2 = store.add_zeros(name + ".fc2.bias", {out});
    experts_.push_back(std::move(e));
  }
  cls_w_ = store.add_lecun(prefix + ".classifier.weight", {out, num_classes}, out, rng);
  cls_b_ = store.add_zeros(prefix + ".classifier.bias", {num_classes});
}

Tensor ExpertEnsemble::expert(std::size_t k, const Tensor& z_fused) const {
  const Expert& e = experts_.at(k);
  if (z_fused.rank() != 2 || z_fused.dim(1) != fused_dim_) {
    throw ShapeError("experts", z_fused.shape(), {0, fused_dim_});
  }
  return ops::linear(ops::relu(ops::linear(z_fused, e.w1, e.b1)), e.w2, e.b2);
}

Tensor ExpertEnsemble::classify(const Tensor& mixed) const { return ops::linear(mixed, cls_w_, cls_b_); }

Tensor ExpertEnsemble::forward(const Tensor& z_fused, const Tensor& weights) const {
  if (weights.rank() != 2 || z_fused.rank() != 2 || weights.dim(0) != z_fused.dim(0) ||
      weights.dim(1) != experts_.size()) {
    throw ShapeError("moe_forward", z_fused.shape(), weights.shape());
  }
  Tensor mixed;
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    const Tensor term = ops::mul(ops::slice(weights, 1, k, k + 1), expert(k, z_fused));
    mixed = mixed.defined() ? ops::add(mixed, term) : term;
  }
  return classify(mixed);
}

Tensor ExpertEnsemble::forward_single(const Tensor& z_fused) const { return classify(expert(0, z_fused)); }

}  // namespace cvcrf
