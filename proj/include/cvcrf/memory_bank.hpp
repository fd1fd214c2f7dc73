#pragma once

// Per-view memory of training-sample features, class centers, and the
// center-memory contrastive loss.
//
// For a feature z of class k in view v the per-sample loss is
//   -log( e^{s(z,mu_k)/tau} / (e^{s(z,mu_k)/tau} + sum_{j: y_j != k} e^{s(z,m_j)/tau}) )
// with s the cosine similarity. Memory rows and centers are constants:
// gradients flow only into z.

#include <cstdint>
#include <span>
#include <vector>

#include "cvcrf/tensor.hpp"

namespace cvcrf {

struct ClassCenters {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> mu_long;   // K x d
  std::vector<double> mu_trans;  // K x d

  /// K x 2d, row k = [mu_long[k], mu_trans[k]].
  std::vector<double> concatenated() const;
};

class MemoryBank {
 public:
  /// Rows are given in slot order; `sample_indices[r]` is the dataset index
  /// that owns slot r.
  MemoryBank(std::vector<std::size_t> sample_indices, std::vector<int> labels, std::size_t num_classes,
             std::size_t dim, std::vector<double> m_long, std::vector<double> m_trans, double alpha, double tau);

  /// m <- alpha * m + (1 - alpha) * z for both views. No renormalization.
  void ema_update(std::size_t slot, std::span<const double> z_long, std::span<const double> z_trans);
  /// Exact per-class means of the current rows.
  ClassCenters class_centers() const;

  std::size_t slot_of(std::size_t sample_index) const;
  std::size_t rows() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  double alpha() const noexcept { return alpha_; }
  double tau() const noexcept { return tau_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<std::size_t>& sample_indices() const noexcept { return sample_indices_; }
  const std::vector<double>& m_long() const noexcept { return m_long_; }
  const std::vector<double>& m_trans() const noexcept { return m_trans_; }

 private:
  std::vector<std::size_t> sample_indices_;
  std::vector<int> labels_;
  std::vector<std::size_t> slot_lookup_;  // dataset index -> slot, npos if absent
  std::size_t num_classes_;
  std::size_t dim_;
  std::vector<double> m_long_;
  std::vector<double> m_trans_;
  double alpha_;
  double tau_;
};

/// Per-sample contrastive terms for one view (B values). `memory` is N x d,
/// `centers` K x d. Both are renormalized internally so similarities are
/// true cosines. Throws NumericError on zero-norm z.
Tensor center_memory_contrastive(const Tensor& z, std::span<const int> labels, std::span<const double> memory,
                                 std::span<const int> memory_labels, std::span<const double> centers, double tau);

/// Mean over the batch of (loss_long + loss_trans).
Tensor cmcl_loss(const MemoryBank& bank, const ClassCenters& centers, const Tensor& z_long, const Tensor& z_trans,
                 std::span<const int> labels);

/// log(sum(exp(scores))) computed as max + log(sum(exp(scores - max))).
double log_sum_exp_stabilized(std::span<const double> scores);

/// Unit-normalized copy of each row of a row-major matrix; rows with norm
/// below 1e-12 stay zero.
std::vector<double> normalized_rows(std::span<const double> rows, std::size_t dim);

}  // namespace cvcrf
