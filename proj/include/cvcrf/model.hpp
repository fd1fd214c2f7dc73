#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "cvcrf/backbone.hpp"
#include "cvcrf/dsam.hpp"
#include "cvcrf/memory_bank.hpp"
#include "cvcrf/moe.hpp"
#include "cvcrf/parameters.hpp"

namespace cvcrf {

enum class ViewMode { Both, LongOnly, TransOnly };

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t heads = 2;
  std::size_t num_classes = 3;
  bool shared_backbone = true;
  bool use_dsam = true;
  bool use_moe = true;
  bool gate_stop_gradient = false;
  ViewMode view = ViewMode::Both;

  std::size_t fused_dim() const {
    return use_dsam ? 2 * backbone.stage_channels(4) : 2 * backbone.stage_channels(3);
  }
};

struct ForwardOutput {
  FeaturePyramid long_pyramid;
  FeaturePyramid trans_pyramid;
  Tensor gate;  // B x K; undefined without the MoE gate
  FusedFeature fused;
  Tensor logits;
};

/// Encoder(s), fusion and expert head.
///
/// In a single-view mode only the present view is encoded and its pyramid
/// stands in for the absent one, so every downstream shape is unchanged.
class CvcModel {
 public:
  CvcModel(const ModelConfig& config, std::uint64_t seed);

  /// Runs everything up to the logits. `centers` is required when the gate is on.
  ForwardOutput forward(const Tensor& x_long, const Tensor& x_trans, const ClassCenters* centers) const;

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }
  const Backbone& long_encoder() const noexcept { return *long_encoder_; }
  const Backbone& trans_encoder() const noexcept { return trans_encoder_ ? *trans_encoder_ : *long_encoder_; }
  const DsamCascade* cascade() const noexcept { return cascade_.get(); }
  const ExpertEnsemble& head() const noexcept { return *head_; }

  /// Pyramids (z included) for both views, honoring the view mode.
  std::pair<FeaturePyramid, FeaturePyramid> encode(const Tensor& x_long, const Tensor& x_trans) const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  std::unique_ptr<Backbone> long_encoder_;
  std::unique_ptr<Backbone> trans_encoder_;  // null when shared
  std::unique_ptr<DsamCascade> cascade_;     // null without DSAM
  std::unique_ptr<ExpertEnsemble> head_;
};

}  // namespace cvcrf
