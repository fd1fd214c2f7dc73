#pragma once

// Four-stage convolutional encoder. Each stage halves the spatial extent and
// doubles the channels (stride-2 conv, relu, conv, relu); the last stage is
// pooled and projected to a unit-norm representation feature z.

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvcrf/data.hpp"
#include "cvcrf/parameters.hpp"
#include "cvcrf/tensor.hpp"

namespace cvcrf {

struct BackboneConfig {
  std::size_t input_channels = 2;  // image channels + spacing plane
  std::size_t image_size = 32;
  std::size_t base_channels = 8;
  std::size_t proj_dim = 128;
  std::size_t patches = 4;  // DSAM channel patches; base_channels must divide by it

  void validate() const;
  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
  std::size_t stage_size(std::size_t stage) const { return image_size >> (stage + 1); }
};

struct FeaturePyramid {
  std::array<Tensor, 4> stages;
  Tensor z;  // B x proj_dim, unit rows
  std::size_t degenerate_rows = 0;
};

class Backbone {
 public:
  Backbone(const BackboneConfig& config, ParameterStore& store, const std::string& prefix, std::mt19937_64& rng);

  /// x: B x input_channels x H x W.
  FeaturePyramid encode(const Tensor& x) const;
  const BackboneConfig& config() const noexcept { return config_; }

 private:
  struct Stage {
    Tensor conv1_weight, conv1_bias, conv2_weight, conv2_bias;
  };

  BackboneConfig config_;
  std::array<Stage, 4> stages_;
  Tensor proj_weight_;
  Tensor proj_bias_;
};

enum class View { Longitudinal, Transverse };

/// Stacks the given samples of one view into a B x (C_in+1) x H x W batch
/// with the normalized spacing plane appended.
Tensor make_view_batch(const Dataset& data, std::span<const std::size_t> indices, View view,
                       const SpacingNormalizer& normalize);

struct MemoryFeatures {
  std::vector<std::size_t> indices;  // dataset index per row, ascending
  std::vector<double> z_long;        // rows x proj_dim
  std::vector<double> z_trans;
};

/// One inference pass over `train` in index order, producing the rows that
/// seed the memory bank.
MemoryFeatures init_memory_features(const Backbone& long_encoder, const Backbone& trans_encoder, const Dataset& data,
                                    const std::vector<std::size_t>& train, const SpacingNormalizer& normalize,
                                    std::size_t batch_size = 64);

}  // namespace cvcrf
