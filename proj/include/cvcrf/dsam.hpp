#pragma once

// Cascaded down-sampling attention fusion.
//
// One stage maps B x C x H x W to B x 2C x H/2 x W/2:
//   2x2 max-pool -> split channels into P groups, each flattened with its
//   spatial extent into one token -> multi-head self-attention over the P
//   tokens (no positional encoding, residual add) -> per-token feed-forward
//   network doubling the token width -> tokens restored to a feature map.
// Four stages are chained, each input being the previous output plus the
// next backbone stage, and the last output is globally average-pooled.

#include <array>
#include <random>
#include <string>

#include "cvcrf/backbone.hpp"
#include "cvcrf/parameters.hpp"
#include "cvcrf/tensor.hpp"

namespace cvcrf {

class DsamStage {
 public:
  DsamStage(std::size_t channels, std::size_t height, std::size_t width, std::size_t patches, std::size_t heads,
            ParameterStore& store, const std::string& prefix, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  /// Attention + FFN on B x P x D tokens, producing B x P x 2D.
  Tensor mix_tokens(const Tensor& tokens) const;

  std::size_t token_dim() const noexcept { return token_dim_; }
  std::size_t patches() const noexcept { return patches_; }

 private:
  std::size_t channels_, height_, width_, patches_, heads_, token_dim_;
  Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Tensor ffn1_w_, ffn1_b_, ffn2_w_, ffn2_b_;
};

struct FusedFeature {
  Tensor view_long;   // B x F/2
  Tensor view_trans;  // B x F/2
  Tensor z_fused;     // B x F
};

class DsamCascade {
 public:
  DsamCascade(const BackboneConfig& backbone, std::size_t heads, ParameterStore& store, const std::string& prefix,
              std::mt19937_64& rng);

  /// GAP of the last stage output for one view's pyramid: B x 16c.
  Tensor forward_view(const FeaturePyramid& pyramid) const;
  /// Both views go through the same four stages.
  FusedFeature fuse(const FeaturePyramid& long_view, const FeaturePyramid& trans_view) const;

  std::size_t fused_dim() const noexcept { return 2 * backbone_.stage_channels(4); }
  const DsamStage& stage(std::size_t i) const { return stages_.at(i); }

 private:
  void check_pyramid(const FeaturePyramid& pyramid) const;

  BackboneConfig backbone_;
  std::vector<DsamStage> stages_;
};

/// Fusion without the cascade: concat(GAP(stage4_long), GAP(stage4_trans)), width 2 * 8c.
FusedFeature late_fusion(const FeaturePyramid& long_view, const FeaturePyramid& trans_view);

}  // namespace cvcrf
