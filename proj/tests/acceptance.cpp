// Acceptance run: one PASS/FAIL line per criterion A1..A6, exit status 1 if
// any fails. A4/A5 train the six ablation variants for every seed at the desk
// configuration, so a full run takes tens of minutes on one core.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cvcrf/checkpoint.hpp"
#include "cvcrf/dsam.hpp"
#include "cvcrf/memory_bank.hpp"
#include "cvcrf/moe.hpp"
#include "cvcrf/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "trainer_fixture.hpp"

namespace cvcrf {
namespace {

using testing::random_tensor;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Accumulates sub-checks of one criterion.
struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "FAILED ") + what);
  }
};

void report(const std::string& id, const Verdict& v, double secs, std::map<std::string, bool>& all) {
  std::printf("%s %s (%.1f s)\n", id.c_str(), v.pass ? "PASS" : "FAIL", secs);
  for (const auto& n : v.notes) std::printf("    %s\n", n.c_str());
  std::fflush(stdout);
  all[id] = v.pass;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

MemoryBank random_bank(std::size_t rows, std::size_t k, std::size_t d, double alpha, double tau,
                       std::mt19937_64& rng) {
  std::vector<std::size_t> idx(rows);
  std::vector<int> labels(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    idx[r] = 2 * r + 5;
    labels[r] = static_cast<int>(r % k);
  }
  return MemoryBank(idx, labels, k, d, random_vec(rows * d, rng), random_vec(rows * d, rng), alpha, tau);
}

ClassCenters random_centers(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  return ClassCenters{k, d, random_vec(k * d, rng), random_vec(k * d, rng)};
}

BackboneConfig small_backbone() {
  BackboneConfig c;
  c.image_size = 32;
  c.base_channels = 4;
  c.proj_dim = 8;
  c.patches = 2;
  return c;
}

FeaturePyramid random_pyramid(const BackboneConfig& c, std::size_t batch, std::mt19937_64& rng) {
  FeaturePyramid p;
  for (std::size_t i = 0; i < 4; ++i)
    p.stages[i] = random_tensor({batch, c.stage_channels(i), c.stage_size(i), c.stage_size(i)}, rng, false);
  return p;
}

// ---------------------------------------------------------------- A1

Verdict gradient_suite() {
  Verdict v;
  constexpr int kTrials = 20;
  {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) {
      const std::size_t b = 1 + t % 4, d = 3 + t % 5, k = 2 + t % 2;
      const MemoryBank bank = random_bank(8, k, d, 0.5, t % 2 ? 0.5 : 0.05, rng);
      const ClassCenters centers = bank.class_centers();
      std::vector<int> labels(b);
      for (auto& l : labels) l = static_cast<int>(rng() % k);
      const Tensor zl = random_tensor({b, d}, rng), zt = random_tensor({b, d}, rng);
      worst = std::max(worst, testing::check_gradients([&] { return cmcl_loss(bank, centers, zl, zt, labels); },
                                                       {zl, zt}).max_rel_error);
    }
    v.require(worst <= 1e-4, fmt("cmcl-loss: max rel err %.3g over %d instances", worst, kTrials));
  }
  {
    std::mt19937_64 rng(102);
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) {
      ParameterStore store;
      DsamStage stage(4, 4, 4, 2, 2, store, "s", rng);
      const Tensor x = random_tensor({1, 4, 4, 4}, rng);
      const Tensor w = random_tensor({1, 8, 2, 2}, rng, false, 0.1);
      std::vector<Tensor> inputs{x};
      for (const auto& p : store.all()) inputs.push_back(p.tensor);
      worst = std::max(worst, testing::check_gradients([&] { return ops::sum(ops::mul(stage.forward(x), w)); },
                                                       inputs, 1e-5, 12, static_cast<unsigned>(t))
                                  .max_rel_error);
    }
    v.require(worst <= 1e-4, fmt("dsam-forward: max rel err %.3g over %d instances", worst, kTrials));
  }
  {
    std::mt19937_64 rng(103);
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) {
      ParameterStore store;
      const std::size_t d = 3 + t % 3, f = 4 + 2 * (t % 2);
      ExpertEnsemble head(f, 3, 3, store, "moe", rng);
      const ClassCenters c = random_centers(3, d, rng);
      const Tensor zl = random_tensor({2, d}, rng), zt = random_tensor({2, d}, rng), zf = random_tensor({2, f}, rng);
      const std::vector<int> labels{t % 3, (t + 1) % 3};
      std::vector<Tensor> inputs{zl, zt, zf};
      for (const auto& p : store.all()) inputs.push_back(p.tensor);
      worst = std::max(
          worst, testing::check_gradients(
                     [&] { return ops::softmax_cross_entropy(head.forward(zf, gate_weights(zl, zt, c)), labels); },
                     inputs, 1e-5, 10, static_cast<unsigned>(t))
                     .max_rel_error);
    }
    v.require(worst <= 1e-4, fmt("gate+moe: max rel err %.3g over %d instances", worst, kTrials));
  }
  {
    double worst = 0.0, key_bias = 0.0;
    std::size_t coords = 0, kinks = 0;
    for (std::uint64_t seed = 0; seed < kTrials; ++seed) {
      TrainConfig c = testing::tiny_train_config(seed);
      c.data.n = 24;
      Trainer tr(c);
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> jitter(0.0, 0.05);
      for (auto& p : tr.model().parameters().all())
        if (p.name.ends_with(".bias"))
          for (double& x : p.tensor.mutable_data()) x += jitter(rng);
      Tensor cls = tr.model().parameters().find("moe.classifier.weight")->tensor;
      for (double& x : cls.mutable_data()) x *= 0.05;
      const std::vector<std::size_t> batch(tr.splits().train.begin(), tr.splits().train.begin() + 3);
      const ClassCenters centers = tr.bank().class_centers();
      std::vector<Tensor> inputs;
      for (const auto& p : tr.model().parameters().all())
        if (!p.name.ends_with("attn.k.bias")) inputs.push_back(p.tensor);
      const auto r = testing::check_gradients([&] { return tr.compute_loss(batch, centers).total; }, inputs, 1e-5, 2,
                                              static_cast<unsigned>(seed));
      worst = std::max(worst, r.max_rel_error);
      coords += r.coordinates;
      kinks += r.kinks;
      tr.model().parameters().zero_grad();
      tr.compute_loss(batch, centers).total.backward();
      for (const auto& p : tr.model().parameters().all())
        if (p.name.ends_with("attn.k.bias"))
          for (double g : p.tensor.grad()) key_bias = std::max(key_bias, std::abs(g));
    }
    v.require(worst <= 1e-4 && kinks * 20 <= coords + kinks && key_bias <= 1e-12,
              fmt("composed loss: max rel err %.3g over %d instances (%zu coords, %zu kink stencils skipped, "
                  "|key-bias grad| %.1e)",
                  worst, kTrials, coords, kinks, key_bias));
  }
  return v;
}

// ---------------------------------------------------------------- A2

/// Macro metrics recomputed from raw label/prediction pairs in long double.
struct OracleMetrics {
  long double acc = 0, pre = 0, rec = 0, f1 = 0;
};

OracleMetrics oracle_metrics(const std::vector<int>& y, const std::vector<int>& p, int k) {
  OracleMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += y[i] == p[i];
  m.acc = static_cast<long double>(correct) / y.size();
  for (int c = 0; c < k; ++c) {
    long double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      tp += y[i] == c && p[i] == c;
      fp += y[i] != c && p[i] == c;
      fn += y[i] == c && p[i] != c;
    }
    const long double pre = tp + fp > 0 ? tp / (tp + fp) : 0, rec = tp + fn > 0 ? tp / (tp + fn) : 0;
    m.pre += pre / k;
    m.rec += rec / k;
    m.f1 += (pre + rec > 0 ? 2 * pre * rec / (pre + rec) : 0) / k;
  }
  return m;
}

Verdict algebraic_suite() {
  Verdict v;
  std::mt19937_64 rng(201);
  {
    bool exact = true;
    for (double alpha : {0.0, 0.01, 0.5, 1.0}) {
      MemoryBank bank = random_bank(6, 2, 4, alpha, 0.1, rng);
      const auto before = bank.m_trans();
      const auto zl = random_vec(4, rng), zt = random_vec(4, rng);
      bank.ema_update(2, zl, zt);
      for (std::size_t i = 0; i < before.size(); ++i) {
        const double expected = i / 4 == 2 ? alpha * before[i] + (1.0 - alpha) * zt[i % 4] : before[i];
        exact = exact && bank.m_trans()[i] == expected;
      }
    }
    v.require(exact, "EMA update bitwise equal to alpha*old + (1-alpha)*new on the target slot only");
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      const std::size_t k = 2 + t % 3, d = 6, rows = 50;
      const MemoryBank bank = random_bank(rows, k, d, 0.3, 0.1, rng);
      std::map<int, std::vector<long double>> sums;
      std::map<int, long double> counts;
      for (std::size_t r = 0; r < rows; ++r) {
        auto& s = sums[bank.labels()[r]];
        s.resize(d, 0.0L);
        for (std::size_t j = 0; j < d; ++j) s[j] += bank.m_long()[r * d + j];
        counts[bank.labels()[r]] += 1;
      }
      const ClassCenters c = bank.class_centers();
      for (const auto& [label, s] : sums)
        for (std::size_t j = 0; j < d; ++j)
          worst = std::max(worst, std::abs(c.mu_long[label * d + j] - static_cast<double>(s[j] / counts[label])));
    }
    v.require(worst <= 1e-12, fmt("class centers vs groupby mean: max abs err %.2e", worst));
  }
  {
    auto single = [](std::vector<double> z, std::vector<double> memory, std::vector<int> memory_labels,
                     std::vector<double> centers, double tau) {
      const std::vector<int> label{0};
      return center_memory_contrastive(Tensor::from_data({1, z.size()}, z), label, memory, memory_labels, centers,
                                       tau)
          .item();
    };
    double worst_uniform = 0.0;
    for (std::size_t m : {1u, 3u, 8u}) {
      std::vector<double> memory;
      std::vector<int> labels;
      for (std::size_t j = 0; j < m; ++j) {
        memory.insert(memory.end(), {0.0, 0.0, 1.5});
        labels.push_back(1);
      }
      worst_uniform = std::max(
          worst_uniform, std::abs(single({1, 0, 0}, memory, labels, {0, 1, 0, 0, 0, 1}, 0.01) - std::log(m + 1.0)));
    }
    const double neg = single({3, 0}, {0, 1}, {1}, {1, 0, 0, 1}, 1.0);
    v.require(worst_uniform <= 1e-12 && std::abs(neg - 0.31326) <= 5e-6,
              fmt("CMCL closed forms: |L - log(M+1)| %.1e, single negative %.6f (0.31326)", worst_uniform, neg));
  }
  {
    double simplex = 0.0, scale = 0.0, shift = 0.0;
    for (int t = 0; t < 20; ++t) {
      const ClassCenters c = random_centers(3, 5, rng);
      const Tensor zl = random_tensor({4, 5}, rng, false), zt = random_tensor({4, 5}, rng, false);
      const Tensor w = gate_weights(zl, zt, c);
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          s += w.data()[r * 3 + j];
          if (w.data()[r * 3 + j] <= 0.0) simplex = 1.0;
        }
        simplex = std::max(simplex, std::abs(s - 1.0));
      }
      const double a = 0.01 + 40.0 * std::uniform_real_distribution<double>()(rng);
      const Tensor ws = gate_weights(ops::scale(zl, a), ops::scale(zt, a), c);
      for (std::size_t i = 0; i < w.numel(); ++i) scale = std::max(scale, std::abs(ws.data()[i] - w.data()[i]));
      const Tensor s = random_tensor({4, 3}, rng, false);
      const Tensor p = ops::softmax(s, 1), q = ops::softmax(ops::add_scalar(s, 3.0 * a), 1);
      for (std::size_t i = 0; i < p.numel(); ++i) shift = std::max(shift, std::abs(p.data()[i] - q.data()[i]));
    }
    v.require(simplex <= 1e-10 && scale <= 1e-10 && shift <= 1e-10,
              fmt("gate simplex %.1e, scale invariance %.1e, softmax shift invariance %.1e", simplex, scale, shift));
  }
  {
    long double worst = 0.0L;
    for (int t = 0; t < 50; ++t) {
      const int k = 2 + t % 3;
      std::vector<int> y(30 + t), p(30 + t);
      for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = static_cast<int>(i % k);  // every class present
        p[i] = rng() % 3 == 0 ? static_cast<int>(rng() % k) : y[i];
      }
      const MetricsReport r = metrics_from_predictions(y, p, k);
      const OracleMetrics o = oracle_metrics(y, p, k);
      for (long double e : {o.acc - r.acc, o.pre - r.m_pre, o.rec - r.m_rec, o.f1 - r.m_f1})
        worst = std::max(worst, std::abs(e));
    }
    v.require(worst <= 1e-12L, fmt("metrics vs confusion-matrix oracle: max abs err %.1Le", worst));
  }
  return v;
}

// ---------------------------------------------------------------- A3

Verdict structure_suite() {
  Verdict v;
  std::mt19937_64 rng(301);
  {
    ParameterStore store;
    const BackboneConfig cfg;
    Backbone net(cfg, store, "b", rng);
    const FeaturePyramid p = net.encode(random_tensor({2, cfg.input_channels, 32, 32}, rng, false));
    bool ok = p.z.shape() == Shape{2, cfg.proj_dim};
    for (std::size_t i = 0; i < 4; ++i)
      ok = ok && p.stages[i].shape() == Shape{2, cfg.base_channels << i, 16u >> i, 16u >> i};
    double norm_err = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      double sq = 0.0;
      for (std::size_t j = 0; j < cfg.proj_dim; ++j) sq += p.z.data()[r * cfg.proj_dim + j] * p.z.data()[r * cfg.proj_dim + j];
      norm_err = std::max(norm_err, std::abs(sq - 1.0));
    }
    v.require(ok && norm_err <= 1e-12, "pyramid: channels double, side halves per stage; z rows unit norm");
  }
  {
    ParameterStore store;
    DsamStage stage(8, 16, 16, 4, 2, store, "s", rng);
    const Tensor y = stage.forward(random_tensor({3, 8, 16, 16}, rng, false));
    v.require(y.shape() == Shape{3, 16, 8, 8}, "DSAM stage (3,8,16,16) -> (3,16,8,8)");
  }
  {
    const BackboneConfig c = small_backbone();
    ParameterStore store;
    DsamCascade cascade(c, 2, store, "dsam", rng);
    const FeaturePyramid p = random_pyramid(c, 2, rng);
    Tensor h = cascade.stage(0).forward(p.stages[0]);
    for (std::size_t i = 1; i < 4; ++i) h = cascade.stage(i).forward(ops::add(h, p.stages[i]));
    const Tensor expected = ops::global_avg_pool(h), got = cascade.forward_view(p);
    bool equal = got.shape() == expected.shape();
    for (std::size_t i = 0; equal && i < got.numel(); ++i) equal = got.data()[i] == expected.data()[i];
    const FusedFeature f = cascade.fuse(p, random_pyramid(c, 2, rng));
    v.require(equal && f.z_fused.shape() == Shape{2, 32 * c.base_channels},
              "cascade: stage i consumes stage i-1 output + pyramid level i; fused width 32c");
  }
  {
    ParameterStore store;
    DsamStage stage(8, 8, 8, 4, 2, store, "s", rng);
    const std::size_t p = 4, d = stage.token_dim(), d2 = 2 * d;
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      std::vector<std::size_t> perm{0, 1, 2, 3};
      std::shuffle(perm.begin(), perm.end(), rng);
      const Tensor tokens = random_tensor({2, p, d}, rng, false);
      std::vector<double> permuted(tokens.numel());
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < d; ++j) permuted[(b * p + i) * d + j] = tokens.data()[(b * p + perm[i]) * d + j];
      const Tensor out = stage.mix_tokens(tokens), out_perm = stage.mix_tokens(Tensor::from_data({2, p, d}, permuted));
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < d2; ++j)
            worst = std::max(worst, std::abs(out_perm.data()[(b * p + i) * d2 + j] - out.data()[(b * p + perm[i]) * d2 + j]));
    }
    v.require(worst <= 1e-10, fmt("token permutation equivariance: max abs err %.1e", worst));
  }
  {
    const BackboneConfig c = small_backbone();
    ParameterStore store;
    DsamCascade cascade(c, 2, store, "dsam", rng);
    const FeaturePyramid pl = random_pyramid(c, 2, rng), pt = random_pyramid(c, 2, rng);
    const std::size_t half = 16 * c.base_channels;
    const Tensor wl = random_tensor({2, half}, rng, false), wt = random_tensor({2, half}, rng, false);
    auto grads = [&](bool use_long, bool use_trans) {
      store.zero_grad();
      const FusedFeature f = cascade.fuse(pl, pt);
      Tensor loss = Tensor::scalar(0.0);
      if (use_long) loss = ops::add(loss, ops::sum(ops::mul(f.view_long, wl)));
      if (use_trans) loss = ops::add(loss, ops::sum(ops::mul(f.view_trans, wt)));
      loss.backward();
      std::vector<double> g;
      for (const auto& p : store.all()) g.insert(g.end(), p.tensor.grad().begin(), p.tensor.grad().end());
      return g;
    };
    const auto both = grads(true, true), gl = grads(true, false), gt = grads(false, true);
    double worst = 0.0;
    for (std::size_t i = 0; i < both.size(); ++i)
      worst = std::max(worst, std::abs(both[i] - gl[i] - gt[i]) / (1.0 + std::abs(both[i])));
    v.require(worst <= 1e-10, fmt("shared DSAM weights: joint gradient = sum of per-view gradients (%.1e)", worst));
  }
  return v;
}

// ---------------------------------------------------------------- A4/A5

struct SeedRuns {
  std::uint64_t seed = 0;
  double oracle_acc = 0.0;
  std::map<std::string, ExperimentResult> runs;
  double slowest = 0.0;
};

SeedRuns run_seed(std::uint64_t seed) {
  TrainConfig base;
  base.seed = seed;
  SeedRuns s{seed, testing::threshold_oracle_accuracy(generate(seed, base.data)), {}, 0.0};
  for (const auto& [name, config] : ablation_variants(base)) {
    const auto start = Clock::now();
    ExperimentResult r = run_experiment(config);
    const double secs = seconds_since(start);
    s.slowest = std::max(s.slowest, secs);
    std::printf("  seed %llu %-8s test acc %.4f m_f1 %.4f  center cos %.4f  best epoch %zu  %.1f s\n",
                static_cast<unsigned long long>(seed), name.c_str(), r.test.acc, r.test.m_f1, r.train_center_cosine,
                r.best_epoch, secs);
    std::fflush(stdout);
    s.runs.emplace(name, std::move(r));
  }
  return s;
}

Verdict convergence_verdict(const std::vector<SeedRuns>& seeds) {
  Verdict v;
  const std::size_t n = seeds.size(), need = (8 * n + 9) / 10;
  std::size_t converged = 0, dual_wins = 0;
  double slowest = 0.0, oracle_min = 1.0, oracle_max = 0.0;
  for (const auto& s : seeds) {
    const MetricsReport& full = s.runs.at("full").test;
    converged += full.acc >= 0.90 && full.m_f1 >= 0.88;
    dual_wins += full.m_f1 > s.runs.at("long").test.m_f1 && full.m_f1 > s.runs.at("trans").test.m_f1;
    slowest = std::max(slowest, s.slowest);
    oracle_min = std::min(oracle_min, s.oracle_acc);
    oracle_max = std::max(oracle_max, s.oracle_acc);
  }
  v.require(converged >= need, fmt("full model acc >= 0.90 and m_f1 >= 0.88 in %zu/%zu seeds (need %zu)", converged, n, need));
  v.require(dual_wins >= need, fmt("dual view m_f1 beats both single views in %zu/%zu seeds (need %zu)", dual_wins, n, need));
  v.require(slowest <= 300.0, fmt("slowest run %.1f s (limit 300 s)", slowest));
  v.notes.push_back(fmt("threshold-oracle accuracy on the generated sets: %.3f .. %.3f", oracle_min, oracle_max));
  return v;
}

Verdict ablation_verdict(const std::vector<SeedRuns>& seeds) {
  Verdict v;
  const std::size_t n = seeds.size();
  for (const char* name : {"no_cmcl", "no_dsam", "no_moe"}) {
    std::size_t wins = 0;
    for (const auto& s : seeds) wins += s.runs.at("full").test.m_f1 >= s.runs.at(name).test.m_f1;
    v.require(wins * 10 >= 7 * n, fmt("full m_f1 >= %s in %zu/%zu seeds (need %zu)", name, wins, n, (7 * n + 9) / 10));
  }
  // no_cmcl trains exactly as lambda = 0 (same loss, same bank updates).
  std::size_t tighter = 0;
  for (const auto& s : seeds)
    tighter += s.runs.at("full").train_center_cosine > s.runs.at("no_cmcl").train_center_cosine;
  v.require(tighter * 10 >= 8 * n,
            fmt("mean cosine to own center higher with lambda 0.2 than 0 in %zu/%zu seeds (need %zu)", tighter, n,
                (8 * n + 9) / 10));
  return v;
}

// ---------------------------------------------------------------- A6

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool same_report(const MetricsReport& a, const MetricsReport& b) {
  return a.confusion == b.confusion && a.acc == b.acc && a.m_pre == b.m_pre && a.m_rec == b.m_rec &&
         a.m_f1 == b.m_f1 && a.per_class_acc == b.per_class_acc && a.precision == b.precision && a.f1 == b.f1;
}

Verdict persistence_suite(const ExperimentResult* earlier) {
  Verdict v;
  TrainConfig config;
  config.seed = 0;
  const auto dir = std::filesystem::temp_directory_path() / "cvcrf_acceptance_a6";
  std::filesystem::remove_all(dir);
  ExperimentOptions options;
  options.out_dir = dir.string();
  options.write_embeddings = false;
  const ExperimentResult second = run_experiment(config, options);
  const ExperimentResult first = earlier ? *earlier : run_experiment(config);
  const std::string on_disk = slurp(dir / "metrics.csv");
  v.require(first.metrics_csv == second.metrics_csv && on_disk == first.metrics_csv && !on_disk.empty(),
            fmt("same config and seed: metrics CSV byte-identical across runs (%zu bytes)", on_disk.size()));

  const auto restored = read_checkpoint((dir / "checkpoint.bin").string());
  const MetricsReport test = restored->evaluate("test");
  v.require(same_report(test, second.test) && same_report(test, first.test),
            fmt("checkpoint round trip: restored test evaluation bitwise equal (acc %.4f, m_f1 %.4f)", test.acc,
                test.m_f1));
  std::filesystem::remove_all(dir);
  return v;
}

}  // namespace
}  // namespace cvcrf

int main(int argc, char** argv) {
  using namespace cvcrf;
  CLI::App app{"Acceptance criteria A1-A6"};
  std::size_t seeds = 10;
  std::vector<std::string> only;
  app.add_option("--seeds", seeds, "seeds for the training criteria")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "subset of criteria, e.g. --only A1 A6");
  CLI11_PARSE(app, argc, argv);
  const std::set<std::string> selected(only.begin(), only.end());
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.count(id); };

  std::map<std::string, bool> results;
  auto timed = [&](const std::string& id, auto fn) {
    if (!wanted(id)) return;
    const auto start = Clock::now();
    const Verdict v = fn();
    report(id, v, seconds_since(start), results);
  };
  timed("A1", [] {
    const auto start = Clock::now();
    Verdict v = gradient_suite();
    const double secs = seconds_since(start);
    v.require(secs <= 120.0, fmt("runtime %.1f s (limit 120 s)", secs));
    return v;
  });
  timed("A2", [] {
    const auto start = Clock::now();
    Verdict v = algebraic_suite();
    v.require(seconds_since(start) <= 60.0, "runtime within 60 s");
    return v;
  });
  timed("A3", [] {
    const auto start = Clock::now();
    Verdict v = structure_suite();
    v.require(seconds_since(start) <= 60.0, "runtime within 60 s");
    return v;
  });

  std::vector<SeedRuns> runs;
  if (wanted("A4") || wanted("A5")) {
    const auto start = Clock::now();
    for (std::uint64_t s = 0; s < seeds; ++s) runs.push_back(run_seed(s));
    const double secs = seconds_since(start);
    if (wanted("A4")) report("A4", convergence_verdict(runs), secs, results);
    if (wanted("A5")) report("A5", ablation_verdict(runs), 0.0, results);
  }
  timed("A6", [&] { return persistence_suite(runs.empty() ? nullptr : &runs.front().runs.at("full")); });

  bool all = true;
  for (const auto& [id, ok] : results) all = all && ok;
  std::printf("acceptance: %s\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
