#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cvcrf/tensor.hpp"

namespace cvcrf {

/// A trainable leaf tensor with a dotted path name, e.g. "backbone.stage2.conv1.weight".
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered registry of a model's parameters. Names are unique.
class ParameterStore {
 public:
  /// He-normal weights: std = sqrt(2 / fan_in).
  /// N(0, 2/fan_in): for weights whose output feeds a relu.
  Tensor add_he(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);
  /// N(0, 1/fan_in): for weights whose output is used linearly.
  Tensor add_lecun(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add(const std::string& name, Tensor tensor);

  const std::vector<Parameter>& all() const noexcept { return params_; }
  std::vector<Parameter>& all() noexcept { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t count_values() const;
  std::size_t count_values_with_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

/// Decoupled weight-decay Adam.
struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWOptions options) : options_(options) {}

  /// Updates every parameter, then zeroes its gradient. Moments are keyed by
  /// parameter position, so the same store must be passed on every call.
  void step(std::vector<Parameter>& params);

  const AdamWOptions& options() const noexcept { return options_; }
  std::uint64_t steps() const noexcept { return step_; }

  // Exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() noexcept { return m_; }
  std::vector<std::vector<double>>& second_moments() noexcept { return v_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }
  void restore(std::uint64_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  AdamWOptions options_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace cvcrf
