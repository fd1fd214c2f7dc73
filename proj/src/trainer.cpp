#include "cvcrf/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cvcrf/binary_io.hpp"
#include "cvcrf/checkpoint.hpp"

namespace cvcrf {

namespace {

constexpr std::size_t kInferenceBatch = 64;

std::uint64_t split_seed(std::uint64_t seed) { return mix_seed(seed, 0x5B17); }
std::uint64_t batch_seed(std::uint64_t seed) { return mix_seed(seed, 0xBA7C); }

AdamWOptions adamw_options(const TrainConfig& c) {
  AdamWOptions o;
  o.lr = c.lr;
  o.weight_decay = c.weight_decay;
  return o;
}

template <class F>
void for_each_chunk(std::span<const std::size_t> part, F&& f) {
  for (std::size_t start = 0; start < part.size(); start += kInferenceBatch) {
    f(part.subspan(start, std::min(kInferenceBatch, part.size() - start)));
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io::IoError("cannot open for writing: " + path);
  out << text;
  out.flush();
  if (!out) throw io::IoError("write failed: " + path);
}

std::string fmt(const char* pattern, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

double selection_score(const TrainConfig& c, const MetricsReport& r) { return c.select_metric == "acc" ? r.acc : r.m_f1; }

}  // namespace

Trainer::Trainer(TrainConfig config)
    : config_(std::move(config)),
      data_((config_.validate(), generate(config_.seed, config_.data))),
      split_(split(data_, split_seed(config_.seed), config_.split)),
      normalizer_(SpacingNormalizer::fit(data_, split_.train)),
      model_(config_.model_config(), config_.seed),
      optimizer_(adamw_options(config_)) {
  init_bank();
}

void Trainer::init_bank() {
  NoGradGuard no_grad;
  const std::size_t d = config_.proj_dim;
  std::vector<double> m_long, m_trans;
  m_long.reserve(split_.train.size() * d);
  m_trans.reserve(split_.train.size() * d);
  for_each_chunk(split_.train, [&](std::span<const std::size_t> chunk) {
    const auto [xl, xt] = view_batches(chunk);
    const auto [pl, pt] = model_.encode(xl, xt);
    const Tensor zl = pl.z, zt = pt.z;
    m_long.insert(m_long.end(), zl.data().begin(), zl.data().end());
    m_trans.insert(m_trans.end(), zt.data().begin(), zt.data().end());
  });
  bank_.emplace(split_.train, labels_of(split_.train), config_.data.num_classes, d, std::move(m_long),
                std::move(m_trans), config_.alpha, config_.tau);
}

std::pair<Tensor, Tensor> Trainer::view_batches(std::span<const std::size_t> batch) const {
  Tensor xl, xt;
  if (config_.view != ViewMode::TransOnly) xl = make_view_batch(data_, batch, View::Longitudinal, normalizer_);
  if (config_.view != ViewMode::LongOnly) xt = make_view_batch(data_, batch, View::Transverse, normalizer_);
  return {xl, xt};
}

std::vector<int> Trainer::labels_of(std::span<const std::size_t> batch) const {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (std::size_t i : batch) labels.push_back(data_.samples.at(i).label);
  return labels;
}

LossTerms Trainer::compute_loss(std::span<const std::size_t> batch, const ClassCenters& centers) const {
  const auto [xl, xt] = view_batches(batch);
  const std::vector<int> labels = labels_of(batch);
  LossTerms t;
  t.forward = model_.forward(xl, xt, &centers);
  t.ce = ops::softmax_cross_entropy(t.forward.logits, labels);
  if (config_.no_cmcl) {
    t.total = t.ce;
  } else {
    t.cmcl = cmcl_loss(*bank_, centers, t.forward.long_pyramid.z, t.forward.trans_pyramid.z, labels);
    t.total = ops::add(t.ce, ops::scale(t.cmcl, config_.lambda));
  }
  return t;
}

LossTerms Trainer::compute_loss(std::span<const std::size_t> batch) const {
  return compute_loss(batch, bank_->class_centers());
}

StepLosses Trainer::train_step(std::span<const std::size_t> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  LossTerms t = compute_loss(batch);
  StepLosses s;
  s.total = t.total.item();
  s.ce = t.ce.item();
  s.cmcl = t.cmcl.defined() ? t.cmcl.item() : 0.0;
  if (!std::isfinite(s.total) || !std::isfinite(s.ce) || !std::isfinite(s.cmcl)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "non-finite loss at epoch " << epoch_ << ": total=" << s.total << " ce=" << s.ce << " cmcl=" << s.cmcl
        << " batch=[";
    for (std::size_t i = 0; i < batch.size(); ++i) msg << (i ? "," : "") << batch[i];
    msg << "]";
    throw NumericError(msg.str());
  }
  if (t.forward.gate.defined()) s.gate_entropy = mean_gate_entropy(t.forward.gate);

  t.total.backward();
  optimizer_.step(model_.parameters().all());

  const std::size_t d = bank_->dim();
  const Tensor zl = t.forward.long_pyramid.z, zt = t.forward.trans_pyramid.z;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    bank_->ema_update(bank_->slot_of(batch[r]), zl.data().subspan(r * d, d), zt.data().subspan(r * d, d));
  }
  return s;
}

EpochStats Trainer::train_epoch() {
  EpochStats stats;
  stats.epoch = epoch_ + 1;
  for (const auto& batch : batches(split_.train, config_.batch_size, batch_seed(config_.seed), epoch_)) {
    const StepLosses s = train_step(batch);
    stats.loss += s.total;
    stats.ce += s.ce;
    stats.cmcl += s.cmcl;
    stats.gate_entropy += s.gate_entropy;
    ++stats.steps;
  }
  const double n = static_cast<double>(std::max<std::size_t>(stats.steps, 1));
  stats.loss /= n;
  stats.ce /= n;
  stats.cmcl /= n;
  stats.gate_entropy /= n;
  ++epoch_;
  return stats;
}

std::vector<int> Trainer::predict(std::span<const std::size_t> part) const {
  NoGradGuard no_grad;
  const ClassCenters centers = bank_->class_centers();
  std::vector<int> predictions;
  predictions.reserve(part.size());
  for_each_chunk(part, [&](std::span<const std::size_t> chunk) {
    const auto [xl, xt] = view_batches(chunk);
    const Tensor logits = model_.forward(xl, xt, &centers).logits;
    const std::size_t k = logits.dim(1);
    const auto v = logits.data();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (v[r * k + j] > v[r * k + best]) best = j;
      predictions.push_back(static_cast<int>(best));
    }
  });
  return predictions;
}

MetricsReport Trainer::evaluate(std::span<const std::size_t> part, const std::string& split_name) const {
  if (part.empty()) throw std::invalid_argument("evaluate: split '" + split_name + "' is empty");
  const std::vector<int> predictions = predict(part);
  return metrics_from_predictions(labels_of(part), predictions, config_.data.num_classes, epoch_, split_name);
}

MetricsReport Trainer::evaluate(const std::string& split_name) const { return evaluate(part(split_name), split_name); }

const std::vector<std::size_t>& Trainer::part(const std::string& split_name) const {
  if (split_name == "train") return split_.train;
  if (split_name == "val") return split_.val;
  if (split_name == "test") return split_.test;
  throw std::invalid_argument("unknown split '" + split_name + "' (expected train, val or test)");
}

double Trainer::mean_center_cosine(std::span<const std::size_t> part) const {
  if (part.empty()) throw std::invalid_argument("mean_center_cosine: empty part");
  NoGradGuard no_grad;
  const std::size_t d = config_.proj_dim, k = config_.data.num_classes;
  std::vector<double> zl_all, zt_all;
  for_each_chunk(part, [&](std::span<const std::size_t> chunk) {
    const auto [xl, xt] = view_batches(chunk);
    const auto [pl, pt] = model_.encode(xl, xt);
    const Tensor zl = pl.z, zt = pt.z;
    zl_all.insert(zl_all.end(), zl.data().begin(), zl.data().end());
    zt_all.insert(zt_all.end(), zt.data().begin(), zt.data().end());
  });
  const std::vector<int> labels = labels_of(part);
  auto centers_of = [&](const std::vector<double>& z) {
    std::vector<double> mu(k * d, 0.0);
    std::vector<double> count(k, 0.0);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const auto y = static_cast<std::size_t>(labels[r]);
      count[y] += 1.0;
      for (std::size_t j = 0; j < d; ++j) mu[y * d + j] += z[r * d + j];
    }
    for (std::size_t y = 0; y < k; ++y)
      for (std::size_t j = 0; j < d; ++j) mu[y * d + j] /= std::max(count[y], 1.0);
    return normalized_rows(mu, d);
  };
  const std::vector<double> mu_l = centers_of(zl_all), mu_t = centers_of(zt_all);
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    double cl = 0.0, ct = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      cl += zl_all[r * d + j] * mu_l[y * d + j];
      ct += zt_all[r * d + j] * mu_t[y * d + j];
    }
    total += 0.5 * (cl + ct);
  }
  return total / static_cast<double>(labels.size());
}

void Trainer::export_embeddings(const std::string& path) const {
  NoGradGuard no_grad;
  const ClassCenters centers = bank_->class_centers();
  const std::size_t d = config_.proj_dim, f = model_.config().fused_dim();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io::IoError("cannot open for writing: " + path);
  out << "index,label,split";
  for (std::size_t j = 0; j < d; ++j) out << ",z_long_" << j;
  for (std::size_t j = 0; j < d; ++j) out << ",z_trans_" << j;
  for (std::size_t j = 0; j < f; ++j) out << ",z_fused_" << j;
  out << "\n";
  for (const char* name : {"train", "val", "test"}) {
    const auto& indices = part(name);
    for_each_chunk(indices, [&](std::span<const std::size_t> chunk) {
      const auto [xl, xt] = view_batches(chunk);
      const ForwardOutput o = model_.forward(xl, xt, &centers);
      const Tensor zl = o.long_pyramid.z, zt = o.trans_pyramid.z, zf = o.fused.z_fused;
      for (std::size_t r = 0; r < chunk.size(); ++r) {
        out << chunk[r] << "," << data_.samples[chunk[r]].label << "," << name;
        for (std::size_t j = 0; j < d; ++j) out << "," << fmt("%.9g", zl.data()[r * d + j]);
        for (std::size_t j = 0; j < d; ++j) out << "," << fmt("%.9g", zt.data()[r * d + j]);
        for (std::size_t j = 0; j < f; ++j) out << "," << fmt("%.9g", zf.data()[r * f + j]);
        out << "\n";
      }
    });
  }
  out.flush();
  if (!out) throw io::IoError("write failed: " + path);
}

TrainState Trainer::snapshot() const {
  TrainState s;
  for (const auto& p : model_.parameters().all()) s.parameters.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  s.optimizer_steps = optimizer_.steps();
  s.first_moments = optimizer_.first_moments();
  s.second_moments = optimizer_.second_moments();
  s.bank = bank_;
  s.epoch = epoch_;
  return s;
}

void Trainer::restore(const TrainState& state) {
  auto& params = model_.parameters().all();
  if (state.parameters.size() != params.size() || !state.bank) throw std::invalid_argument("restore: state does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    if (dst.size() != state.parameters[i].size()) throw std::invalid_argument("restore: size mismatch for " + params[i].name);
    std::copy(state.parameters[i].begin(), state.parameters[i].end(), dst.begin());
  }
  optimizer_.restore(state.optimizer_steps, state.first_moments, state.second_moments);
  bank_ = state.bank;
  epoch_ = state.epoch;
}

ExperimentResult run_experiment(const TrainConfig& config, const ExperimentOptions& options) {
  Trainer trainer(config);
  ExperimentResult result;
  std::string metrics = metrics_csv_header(config.data.num_classes) + "\n";
  std::string diagnostics = "epoch,loss,ce,cmcl,gate_entropy,val_acc,val_m_f1\n";
  TrainState best;
  double best_score = -1.0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const EpochStats stats = trainer.train_epoch();
    const MetricsReport val = trainer.evaluate("val");
    result.history.push_back(stats);
    metrics += metrics_csv_row(val) + "\n";
    diagnostics += std::to_string(stats.epoch) + "," + fmt("%.6f", stats.loss) + "," + fmt("%.6f", stats.ce) + "," +
                   fmt("%.6f", stats.cmcl) + "," + fmt("%.6f", stats.gate_entropy) + "," + fmt("%.6f", val.acc) + "," +
                   fmt("%.6f", val.m_f1) + "\n";
    if (options.on_epoch) options.on_epoch(stats, val);
    const double score = selection_score(config, val);
    if (score > best_score) {
      best_score = score;
      best = trainer.snapshot();
      result.best_epoch = stats.epoch;
      result.best_val = val;
    }
  }
  trainer.restore(best);
  result.test = trainer.evaluate("test");
  metrics += metrics_csv_row(result.test) + "\n";
  result.train_center_cosine = trainer.mean_center_cosine(trainer.splits().train);
  result.metrics_csv = metrics;

  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const std::filesystem::path dir(options.out_dir);
    write_text((dir / "metrics.csv").string(), metrics);
    write_text((dir / "diagnostics.csv").string(), diagnostics);
    write_text((dir / "config.txt").string(), config.to_text());
    if (options.write_checkpoint) write_checkpoint((dir / "checkpoint.bin").string(), trainer);
    if (options.write_embeddings) trainer.export_embeddings((dir / "embeddings.csv").string());
  }
  return result;
}

std::vector<std::pair<std::string, TrainConfig>> ablation_variants(const TrainConfig& base) {
  TrainConfig full = base;
  full.no_cmcl = full.no_dsam = full.no_moe = false;
  full.view = ViewMode::Both;
  std::vector<std::pair<std::string, TrainConfig>> v;
  v.emplace_back("full", full);
  TrainConfig c = full;
  c.no_cmcl = true;
  v.emplace_back("no_cmcl", c);
  c = full;
  c.no_dsam = true;
  v.emplace_back("no_dsam", c);
  c = full;
  c.no_moe = true;
  v.emplace_back("no_moe", c);
  c = full;
  c.view = ViewMode::LongOnly;
  v.emplace_back("long", c);
  c = full;
  c.view = ViewMode::TransOnly;
  v.emplace_back("trans", c);
  return v;
}

std::vector<std::pair<std::string, ExperimentResult>> run_ablation_grid(const TrainConfig& base,
                                                                        const std::string& out_dir) {
  std::vector<std::pair<std::string, ExperimentResult>> results;
  std::string grid = "variant,best_epoch,acc,m_pre,m_rec,m_f1";
  for (std::size_t k = 1; k <= base.data.num_classes; ++k) grid += ",acc_" + std::to_string(k);
  grid += "\n";
  for (const auto& [name, config] : ablation_variants(base)) {
    ExperimentOptions options;
    if (!out_dir.empty()) options.out_dir = (std::filesystem::path(out_dir) / name).string();
    ExperimentResult r = run_experiment(config, options);
    grid += name + "," + std::to_string(r.best_epoch) + "," + fmt("%.6f", r.test.acc) + "," + fmt("%.6f", r.test.m_pre) +
            "," + fmt("%.6f", r.test.m_rec) + "," + fmt("%.6f", r.test.m_f1);
    for (double a : r.test.per_class_acc) grid += "," + fmt("%.6f", a);
    grid += "\n";
    results.emplace_back(name, std::move(r));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text((std::filesystem::path(out_dir) / "grid.csv").string(), grid);
  }
  return results;
}

}  // namespace cvcrf
