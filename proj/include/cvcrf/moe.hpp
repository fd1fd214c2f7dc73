#pragma once

// Class-specific experts mixed by a parameter-free gate.
//
// The gate weight of expert k is softmax_k(cos(z_cat, mu_cat_k)) where z_cat
// concatenates the two views' representation features and mu_cat_k the two
// views' class centers. No temperature, no learned gate parameters.

#include <random>
#include <string>
#include <vector>

#include "cvcrf/memory_bank.hpp"
#include "cvcrf/parameters.hpp"
#include "cvcrf/tensor.hpp"

namespace cvcrf {

/// B x K gate weights. With `stop_gradient`, z_cat is detached first.
Tensor gate_weights(const Tensor& z_long, const Tensor& z_trans, const ClassCenters& centers,
                    bool stop_gradient = false);

/// Row-wise Shannon entropy (nats) averaged over the batch.
double mean_gate_entropy(const Tensor& weights);

class ExpertEnsemble {
 public:
  /// Each expert: fused_dim -> fused_dim (relu) -> fused_dim / 2. The
  /// classifier maps fused_dim / 2 to num_classes logits.
  ExpertEnsemble(std::size_t fused_dim, std::size_t num_experts, std::size_t num_classes, ParameterStore& store,
                 const std::string& prefix, std::mt19937_64& rng);

  /// classifier(sum_k w_k * expert_k(z_fused)); weights is B x num_experts.
  Tensor forward(const Tensor& z_fused, const Tensor& weights) const;
  /// Single-expert path: classifier(expert_0(z_fused)).
  Tensor forward_single(const Tensor& z_fused) const;

  Tensor expert(std::size_t k, const Tensor& z_fused) const;
  Tensor classify(const Tensor& mixed) const;

  std::size_t num_experts() const noexcept { return experts_.size(); }
  std::size_t fused_dim() const noexcept { return fused_dim_; }

 private:
  struct Expert {
    Tensor w1, b1, w2, b2;
  };
  std::size_t fused_dim_;
  std::vector<Expert> experts_;
  Tensor cls_w_, cls_b_;
};

}  // namespace cvcrf
