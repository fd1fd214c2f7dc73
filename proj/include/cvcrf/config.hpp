#pragma once

// Run configuration and its plain-text form.
//
// The file format is one `key = value` pair per line; `#` starts a comment.
// Unknown keys are errors. `preset = desk|full` selects the base settings
// and is applied before every other key regardless of its position.

#include <cstdint>
#include <string>
#include <vector>

#include "cvcrf/data.hpp"
#include "cvcrf/model.hpp"

namespace cvcrf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double alpha = 0.01;
  double tau = 0.01;
  double lambda = 0.2;

  bool no_cmcl = false;
  bool no_dsam = false;
  bool no_moe = false;
  ViewMode view = ViewMode::Both;
  bool gate_stop_gradient = false;
  bool shared_backbone = true;
  /// Validation metric used to pick the reported checkpoint: "m_f1" or "acc".
  std::string select_metric = "m_f1";

  GenSpec data;
  SplitRatios split;
  std::size_t base_channels = 8;
  std::size_t proj_dim = 128;
  std::size_t patches = 4;
  std::size_t heads = 2;

  /// Settings mirroring the original experiment scale (224 px, 100 epochs, lr 1e-4, N = 1657).
  static TrainConfig full_preset();
  static TrainConfig desk_preset() { return {}; }

  void validate() const;
  ModelConfig model_config() const;
  /// Canonical text form; parse_config(to_text()) reproduces every field exactly.
  std::string to_text() const;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);

/// Every recognised key, in canonical order.
const std::vector<std::string>& config_keys();

std::string view_mode_name(ViewMode mode);
ViewMode parse_view_mode(const std::string& name);

}  // namespace cvcrf
