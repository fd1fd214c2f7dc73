#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "cvcrf/memory_bank.hpp"
#include "gradcheck.hpp"

namespace cvcrf {
namespace {

using testing::random_tensor;

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

MemoryBank make_bank(std::size_t rows, std::size_t k, std::size_t d, double alpha, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(rows);
  std::vector<int> labels(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    idx[r] = 3 * r + 1;
    labels[r] = static_cast<int>(r % k);
  }
  return MemoryBank(idx, labels, k, d, random_vec(rows * d, rng), random_vec(rows * d, rng), alpha, 0.1);
}

double cmcl_single(const std::vector<double>& z, int label, const std::vector<double>& memory,
                   const std::vector<int>& memory_labels, const std::vector<double>& centers, double tau) {
  const Tensor zt = Tensor::from_data({1, z.size()}, z);
  const std::vector<int> labels{label};
  return center_memory_contrastive(zt, labels, memory, memory_labels, centers, tau).item();
}

TEST(Ema, AlphaOneKeepsMemory) {
  std::mt19937_64 rng(1);
  MemoryBank bank = make_bank(6, 2, 4, 1.0, rng);
  const auto before = bank.m_long();
  bank.ema_update(2, random_vec(4, rng), random_vec(4, rng));
  EXPECT_EQ(bank.m_long(), before);
}

TEST(Ema, AlphaZeroReplacesRow) {
  std::mt19937_64 rng(2);
  MemoryBank bank = make_bank(6, 2, 4, 0.0, rng);
  const auto zl = random_vec(4, rng), zt = random_vec(4, rng);
  bank.ema_update(3, zl, zt);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(bank.m_long()[12 + i], zl[i]);
    EXPECT_EQ(bank.m_trans()[12 + i], zt[i]);
  }
}

TEST(Ema, ExactConvexCombinationOnlyOnTargetSlot) {
  std::mt19937_64 rng(3);
  MemoryBank bank = make_bank(5, 2, 3, 0.01, rng);
  const auto before = bank.m_long();
  const auto zl = random_vec(3, rng), zt = random_vec(3, rng);
  bank.ema_update(1, zl, zt);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double expected = (i / 3 == 1) ? 0.01 * before[i] + 0.99 * zl[i % 3] : before[i];
    EXPECT_EQ(bank.m_long()[i], expected);
  }
}

TEST(Ema, BadSlotThrows) {
  std::mt19937_64 rng(4);
  MemoryBank bank = make_bank(4, 2, 3, 0.5, rng);
  EXPECT_THROW(bank.ema_update(4, random_vec(3, rng), random_vec(3, rng)), std::out_of_range);
  EXPECT_THROW(bank.slot_of(2), std::out_of_range);
  EXPECT_EQ(bank.slot_of(7), 2u);
}

TEST(Bank, RejectsInvalidConstruction) {
  std::mt19937_64 rng(5);
  const auto m = random_vec(8, rng);
  EXPECT_THROW(MemoryBank({0, 1}, {0, 0}, 2, 4, m, m, 0.5, 0.1), std::invalid_argument);  // class 1 empty
  EXPECT_THROW(MemoryBank({0, 1}, {0, 1}, 2, 4, m, m, 1.5, 0.1), std::invalid_argument);
  EXPECT_THROW(MemoryBank({0, 1}, {0, 1}, 2, 4, m, m, 0.5, 0.0), std::invalid_argument);
  EXPECT_THROW(MemoryBank({0, 0}, {0, 1}, 2, 4, m, m, 0.5, 0.1), std::invalid_argument);
}

TEST(Centers, MatchGroupbyMeanOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 2 + trial % 3, d = 5, rows = 40;
    MemoryBank bank = make_bank(rows, k, d, 0.3, rng);
    std::map<int, std::vector<long double>> sums;
    std::map<int, long double> counts;
    for (std::size_t r = 0; r < rows; ++r) {
      auto& s = sums[bank.labels()[r]];
      s.resize(d, 0.0L);
      for (std::size_t j = 0; j < d; ++j) s[j] += bank.m_trans()[r * d + j];
      counts[bank.labels()[r]] += 1.0L;
    }
    const ClassCenters c = bank.class_centers();
    for (const auto& [label, s] : sums) {
      for (std::size_t j = 0; j < d; ++j) {
        EXPECT_NEAR(c.mu_trans[static_cast<std::size_t>(label) * d + j], static_cast<double>(s[j] / counts[label]), 1e-12);
      }
    }
  }
}

TEST(Centers, ConcatenationLayout) {
  ClassCenters c{2, 2, {1, 2, 3, 4}, {5, 6, 7, 8}};
  EXPECT_EQ(c.concatenated(), (std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8}));
}

TEST(Cmcl, UniformSimilaritiesGiveLogMPlusOne) {
  for (std::size_t m : {1u, 4u, 9u}) {
    std::vector<double> memory, centers{0, 1, 0, 0, 0, 1};  // class 0 -> e2, class 1 -> e3
    std::vector<int> memory_labels;
    for (std::size_t j = 0; j < m; ++j) {
      memory.insert(memory.end(), {0.0, 0.0, 2.0});
      memory_labels.push_back(1);
    }
    memory.insert(memory.end(), {0.0, 5.0, 0.0});  // same-class row is not a negative
    memory_labels.push_back(0);
    EXPECT_NEAR(cmcl_single({1, 0, 0}, 0, memory, memory_labels, centers, 0.01), std::log(m + 1.0), 1e-12);
  }
}

TEST(Cmcl, SingleNegativeClosedForm) {
  const std::vector<double> centers{1, 0, 0, 1};
  EXPECT_NEAR(cmcl_single({3, 0}, 0, {0, 1}, {1}, centers, 1.0), 0.31326, 5e-6);
  EXPECT_NEAR(cmcl_single({3, 0}, 0, {0, 1}, {1}, centers, 1.0), std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(Cmcl, TemperatureEntersAsSoftplusScale) {
  const std::vector<double> centers{1, 0, 0, 1};
  const double s = 1.0 / std::sqrt(2.0);  // cosine to the negative
  for (double tau : {0.01, 0.1, 0.5, 2.0}) {
    const double expected = std::log1p(std::exp((s - 1.0) / tau));
    EXPECT_NEAR(cmcl_single({1, 0}, 0, {1, 1}, {1}, centers, tau), expected, 1e-12) << tau;
  }
}

TEST(Cmcl, InvariantUnderRotation) {
  std::mt19937_64 rng(7);
  const std::size_t d = 4;
  // Random orthogonal matrix by Gram-Schmidt.
  std::vector<double> q = random_vec(d * d, rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * q[j * d + t];
      for (std::size_t t = 0; t < d; ++t) q[i * d + t] -= dot * q[j * d + t];
    }
    double n = 0.0;
    for (std::size_t t = 0; t < d; ++t) n += q[i * d + t] * q[i * d + t];
    for (std::size_t t = 0; t < d; ++t) q[i * d + t] /= std::sqrt(n);
  }
  auto rotate = [&](const std::vector<double>& rows) {
    std::vector<double> out(rows.size(), 0.0);
    for (std::size_t r = 0; r < rows.size() / d; ++r)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t t = 0; t < d; ++t) out[r * d + i] += q[i * d + t] * rows[r * d + t];
    return out;
  };
  const auto z = random_vec(d, rng), memory = random_vec(6 * d, rng), centers = random_vec(2 * d, rng);
  const std::vector<int> ml{0, 1, 1, 0, 1, 0};
  EXPECT_NEAR(cmcl_single(z, 0, memory, ml, centers, 0.3), cmcl_single(rotate(z), 0, rotate(memory), ml, rotate(centers), 0.3),
              1e-12);
}

TEST(Cmcl, AddingNegativesIncreasesLoss) {
  std::mt19937_64 rng(8);
  const auto z = random_vec(3, rng), centers = random_vec(6, rng);
  std::vector<double> memory;
  std::vector<int> ml;
  double previous = -1.0;
  for (int step = 0; step < 5; ++step) {
    const auto row = random_vec(3, rng);
    memory.insert(memory.end(), row.begin(), row.end());
    ml.push_back(1);
    const double loss = cmcl_single(z, 0, memory, ml, centers, 0.2);
    EXPECT_GT(loss, previous);
    previous = loss;
  }
}

TEST(Cmcl, DecreasesAlongPathTowardCenter) {
  const std::vector<double> centers{1, 0, 0, 0, 1, 0};
  const std::vector<double> memory{0, 1, 0, 0, 1, 0.2};
  const std::vector<int> ml{1, 1};
  double previous = INFINITY;
  for (int i = 0; i <= 10; ++i) {
    const double t = i / 10.0;
    const double loss = cmcl_single({t, 1.0 - t, 0.0}, 0, memory, ml, centers, 0.1);
    EXPECT_LT(loss, previous) << t;
    previous = loss;
  }
}

TEST(Cmcl, ZeroFeatureThrows) {
  EXPECT_THROW(cmcl_single({0, 0}, 0, {0, 1}, {1}, {1, 0, 0, 1}, 0.1), NumericError);
}

TEST(Cmcl, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + trial % 4, d = 3 + trial % 5, rows = 8, k = 2 + trial % 2;
    MemoryBank bank = make_bank(rows, k, d, 0.5, rng);
    const ClassCenters centers = bank.class_centers();
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>(rng() % k);
    const Tensor zl = random_tensor({b, d}, rng), zt = random_tensor({b, d}, rng);
    const double tau = trial % 2 ? 0.5 : 0.05;
    const MemoryBank scaled(bank.sample_indices(), bank.labels(), k, d, bank.m_long(), bank.m_trans(), 0.5, tau);
    const auto r = testing::check_gradients([&] { return cmcl_loss(scaled, centers, zl, zt, labels); }, {zl, zt});
    EXPECT_LE(r.max_rel_error, 1e-4) << "trial " << trial;
  }
}

TEST(Cmcl, BankIsConstantUnderBackward) {
  std::mt19937_64 rng(10);
  MemoryBank bank = make_bank(8, 2, 4, 0.5, rng);
  const auto before = bank.m_long();
  const Tensor zl = random_tensor({3, 4}, rng), zt = random_tensor({3, 4}, rng);
  const std::vector<int> labels{0, 1, 1};
  Tensor loss = cmcl_loss(bank, bank.class_centers(), zl, zt, labels);
  loss.backward();
  EXPECT_EQ(bank.m_long(), before);
  double g = 0.0;
  for (double v : zl.grad()) g += std::abs(v);
  EXPECT_GT(g, 0.0);
}

TEST(Cmcl, LossIsBatchMeanOfViewSums) {
  std::mt19937_64 rng(11);
  MemoryBank bank = make_bank(8, 2, 4, 0.5, rng);
  const ClassCenters c = bank.class_centers();
  const Tensor zl = random_tensor({3, 4}, rng, false), zt = random_tensor({3, 4}, rng, false);
  const std::vector<int> labels{1, 0, 1};
  const Tensor l = center_memory_contrastive(zl, labels, bank.m_long(), bank.labels(), c.mu_long, 0.1);
  const Tensor t = center_memory_contrastive(zt, labels, bank.m_trans(), bank.labels(), c.mu_trans, 0.1);
  double expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i) expected += (l.data()[i] + t.data()[i]) / 3.0;
  EXPECT_NEAR(cmcl_loss(bank, c, zl, zt, labels).item(), expected, 1e-12);
}

TEST(LogSumExp, ExamplesAndLongDoubleOracle) {
  const std::vector<double> zeros{0.0, 0.0};
  EXPECT_NEAR(log_sum_exp_stabilized(zeros), std::log(2.0), 1e-15);
  const std::vector<double> large{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp_stabilized(large), 1000.0 + std::log(2.0), 1e-12);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = random_vec(7, rng);
    for (double& x : v) x *= 30.0;
    long double sum = 0.0L;
    for (double x : v) sum += std::exp(static_cast<long double>(x));
    EXPECT_NEAR(log_sum_exp_stabilized(v), static_cast<double>(std::log(sum)), 1e-12);
  }
}

}  // namespace
}  // namespace cvcrf
