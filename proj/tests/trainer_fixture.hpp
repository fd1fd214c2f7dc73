#pragma once

#include "cvcrf/config.hpp"

namespace cvcrf::testing {

/// A configuration small enough for many full runs inside a unit test.
inline TrainConfig tiny_train_config(std::uint64_t seed = 0) {
  TrainConfig c;
  c.seed = seed;
  c.epochs = 2;
  c.batch_size = 8;
  c.data.n = 48;
  c.data.image_size = 32;
  c.base_channels = 4;
  c.proj_dim = 8;
  c.patches = 2;
  c.tau = 0.1;
  return c;
}

}  // namespace cvcrf::testing
