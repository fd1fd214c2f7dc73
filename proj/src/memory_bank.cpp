#include "cvcrf/memory_bank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cvcrf {

namespace {
constexpr std::size_t kNoSlot = std::numeric_limits<std::size_t>::max();
}

std::vector<double> ClassCenters::concatenated() const {
  std::vector<double> out;
  out.reserve(num_classes * 2 * dim);
  for (std::size_t k = 0; k < num_classes; ++k) {
    out.insert(out.end(), mu_long.begin() + static_cast<std::ptrdiff_t>(k * dim),
               mu_long.begin() + static_cast<std::ptrdiff_t>((k + 1) * dim));
    out.insert(out.end(), mu_trans.begin() + static_cast<std::ptrdiff_t>(k * dim),
               mu_trans.begin() + static_cast<std::ptrdiff_t>((k + 1) * dim));
  }
  return out;
}

MemoryBank::MemoryBank(std::vector<std::size_t> sample_indices, std::vector<int> labels, std::size_t num_classes,
                       std::size_t dim, std::vector<double> m_long, std::vector<double> m_trans, double alpha,
                       double tau)
    : sample_indices_(std::move(sample_indices)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      dim_(dim),
      m_long_(std::move(m_long)),
      m_trans_(std::move(m_trans)),
      alpha_(alpha),
      tau_(tau) {
  const std::size_t n = labels_.size();
  if (sample_indices_.size() != n || m_long_.size() != n * dim_ || m_trans_.size() != n * dim_) {
    throw std::invalid_argument("memory bank: inconsistent row counts");
  }
  if (!(alpha_ >= 0.0 && alpha_ <= 1.0)) throw std::invalid_argument("memory bank: alpha must lie in [0, 1]");
  if (!(tau_ > 0.0)) throw std::invalid_argument("memory bank: tau must be positive");
  std::vector<std::size_t> members(num_classes_, 0);
  for (int y : labels_) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes_) throw std::invalid_argument("memory bank: label out of range");
    ++members[static_cast<std::size_t>(y)];
  }
  for (std::size_t k = 0; k < num_classes_; ++k) {
    if (members[k] == 0) throw std::invalid_argument("memory bank: class " + std::to_string(k) + " has no members");
  }
  const std::size_t max_index = n ? *std::max_element(sample_indices_.begin(), sample_indices_.end()) : 0;
  slot_lookup_.assign(max_index + 1, kNoSlot);
  for (std::size_t r = 0; r < n; ++r) {
    if (slot_lookup_[sample_indices_[r]] != kNoSlot) throw std::invalid_argument("memory bank: duplicate sample index");
    slot_lookup_[sample_indices_[r]] = r;
  }
}

void MemoryBank::ema_update(std::size_t slot, std::span<const double> z_long, std::span<const double> z_trans) {
  if (slot >= rows()) {
    throw std::out_of_range("memory bank: slot " + std::to_string(slot) + " out of range [0, " +
                            std::to_string(rows()) + ")");
  }
  if (z_long.size() != dim_ || z_trans.size() != dim_) throw std::invalid_argument("memory bank: feature size mismatch");
  double* ml = m_long_.data() + slot * dim_;
  double* mt = m_trans_.data() + slot * dim_;
  for (std::size_t i = 0; i < dim_; ++i) {
    ml[i] = alpha_ * ml[i] + (1.0 - alpha_) * z_long[i];
    mt[i] = alpha_ * mt[i] + (1.0 - alpha_) * z_trans[i];
  }
}

std::size_t MemoryBank::slot_of(std::size_t sample_index) const {
  if (sample_index >= slot_lookup_.size() || slot_lookup_[sample_index] == kNoSlot) {
    throw std::out_of_range("memory bank: sample " + std::to_string(sample_index) + " has no slot");
  }
  return slot_lookup_[sample_index];
}

ClassCenters MemoryBank::class_centers() const {
  ClassCenters c;
  c.num_classes = num_classes_;
  c.dim = dim_;
  c.mu_long.assign(num_classes_ * dim_, 0.0);
  c.mu_trans.assign(num_classes_ * dim_, 0.0);
  std::vector<std::size_t> members(num_classes_, 0);
  for (std::size_t r = 0; r < rows(); ++r) {
    const auto k = static_cast<std::size_t>(labels_[r]);
    ++members[k];
    for (std::size_t i = 0; i < dim_; ++i) {
      c.mu_long[k * dim_ + i] += m_long_[r * dim_ + i];
      c.mu_trans[k * dim_ + i] += m_trans_[r * dim_ + i];
    }
  }
  for (std::size_t k = 0; k < num_classes_; ++k) {
    const double inv = 1.0 / static_cast<double>(members[k]);
    for (std::size_t i = 0; i < dim_; ++i) {
      c.mu_long[k * dim_ + i] *= inv;
      c.mu_trans[k * dim_ + i] *= inv;
    }
  }
  return c;
}

std::vector<double> normalized_rows(std::span<const double> rows, std::size_t dim) {
  std::vector<double> out(rows.begin(), rows.end());
  for (std::size_t at = 0; at < out.size(); at += dim) {
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sq += out[at + i] * out[at + i];
    const double norm = std::sqrt(sq);
    for (std::size_t i = 0; i < dim; ++i) out[at + i] = norm < 1e-12 ? 0.0 : out[at + i] / norm;
  }
  return out;
}

Tensor center_memory_contrastive(const Tensor& z, std::span<const int> labels, std::span<const double> memory,
                                 std::span<const int> memory_labels, std::span<const double> centers, double tau) {
  if (z.rank() != 2 || z.dim(0) != labels.size()) throw ShapeError("cmcl", z.shape(), {labels.size()});
  if (!(tau > 0.0)) throw std::invalid_argument("cmcl: tau must be positive");
  const std::size_t batch = z.dim(0), dim = z.dim(1), rows = memory_labels.size();
  if (memory.size() != rows * dim || centers.size() % dim != 0) {
    throw ShapeError("cmcl", z.shape(), {rows, memory.size() / std::max<std::size_t>(rows, 1)}, "memory width");
  }
  const std::size_t classes = centers.size() / dim;

  std::size_t degenerate = 0;
  const Tensor zn = ops::l2_normalize(z, 1, 1e-12, &degenerate);
  if (degenerate) throw NumericError("cmcl: zero-norm feature in batch");

  const std::vector<double> centers_n = normalized_rows(centers, dim);
  std::vector<double> positives(batch * dim);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) throw std::out_of_range("cmcl: label out of range");
    const auto k = static_cast<std::size_t>(labels[b]);
    std::copy_n(centers_n.begin() + static_cast<std::ptrdiff_t>(k * dim), dim,
                positives.begin() + static_cast<std::ptrdiff_t>(b * dim));
  }
  // Column 0 holds the positive score, columns 1..N the memory scores.
  const Tensor pos = ops::scale(ops::sum(ops::mul(zn, Tensor::from_data({batch, dim}, std::move(positives))), 1), 1.0 / tau);
  const Tensor memory_t = ops::transpose(Tensor::from_data({rows, dim}, normalized_rows(memory, dim)));
  const Tensor neg = ops::scale(ops::matmul(zn, memory_t), 1.0 / tau);
  const Tensor scores = ops::concat({ops::reshape(pos, {batch, 1}), neg}, 1);

  std::vector<std::uint8_t> mask(batch * (rows + 1), 0);
  for (std::size_t b = 0; b < batch; ++b) {
    mask[b * (rows + 1)] = 1;
    for (std::size_t j = 0; j < rows; ++j) mask[b * (rows + 1) + 1 + j] = memory_labels[j] != labels[b];
  }
  return ops::sub(ops::logsumexp(scores, 1, mask), pos);
}

Tensor cmcl_loss(const MemoryBank& bank, const ClassCenters& centers, const Tensor& z_long, const Tensor& z_trans,
                 std::span<const int> labels) {
  const Tensor l_long =
      center_memory_contrastive(z_long, labels, bank.m_long(), bank.labels(), centers.mu_long, bank.tau());
  const Tensor l_trans =
      center_memory_contrastive(z_trans, labels, bank.m_trans(), bank.labels(), centers.mu_trans, bank.tau());
  return ops::mean(ops::add(l_long, l_trans));
}

double log_sum_exp_stabilized(std::span<const double> scores) {
  if (scores.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(mx)) return mx;
  double total = 0.0;
  for (double s : scores) total += std::exp(s - mx);
  return mx + std::log(total);
}

}  // namespace cvcrf
