#include "cvcrf/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cvcrf {

namespace {

Tensor normal_values(Shape shape, double variance, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(variance));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(values), true);
}

}  // namespace

Tensor ParameterStore::add_he(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return add(name, normal_values(std::move(shape), 2.0 / static_cast<double>(fan_in), rng));
}

Tensor ParameterStore::add_lecun(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return add(name, normal_values(std::move(shape), 1.0 / static_cast<double>(fan_in), rng));
}

Tensor ParameterStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape), true));
}

Tensor ParameterStore::add(const std::string& name, Tensor tensor) {
  if (!tensor.requires_grad()) throw std::invalid_argument("parameter " + name + " must require grad");
  if (find(name)) throw std::invalid_argument("duplicate parameter name " + name);
  params_.push_back({name, tensor});
  return tensor;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

std::size_t ParameterStore::count_values() const { return count_values_with_prefix(""); }

std::size_t ParameterStore::count_values_with_prefix(const std::string& prefix) const {
  std::size_t total = 0;
  for (const auto& p : params_) {
    if (p.name.starts_with(prefix)) total += p.tensor.numel();
  }
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::step(std::vector<Parameter>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("adamw: parameter set changed between steps");
  ++step_;
  const auto& o = options_;
  const double bias1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = params[k].tensor;
    auto w = t.mutable_data();
    auto g = t.mutable_grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - o.lr * o.weight_decay;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      w[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
      g[i] = 0.0;
    }
  }
}

void AdamW::restore(std::uint64_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (m.size() != v.size()) throw std::invalid_argument("adamw: moment count mismatch");
  step_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace cvcrf
