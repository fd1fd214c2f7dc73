#include "cvcrf/backbone.hpp"

#include <algorithm>
#include <stdexcept>

namespace cvcrf {

void BackboneConfig::validate() const {
  if (base_channels < 4) throw std::invalid_argument("backbone: base_channels must be at least 4");
  if (patches == 0 || base_channels % patches != 0) {
    throw std::invalid_argument("backbone: base_channels " + std::to_string(base_channels) +
                                " not divisible by patch count " + std::to_string(patches));
  }
  if (image_size < 16 || image_size % 16 != 0) {
    throw std::invalid_argument("backbone: image size " + std::to_string(image_size) + " not divisible by 16");
  }
  if (input_channels == 0 || proj_dim == 0) throw std::invalid_argument("backbone: empty input or projection");
}

Backbone::Backbone(const BackboneConfig& config, ParameterStore& store, const std::string& prefix,
                   std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  std::size_t in = config_.input_channels;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::size_t out = config_.stage_channels(i);
    const std::string name = prefix + ".stage" + std::to_string(i + 1);
    stages_[i].conv1_weight = store.add_he(name + ".conv1.weight", {out, in, 3, 3}, in * 9, rng);
    stages_[i].conv1_bias = store.add_zeros(name + ".conv1.bias", {out});
    stages_[i].conv2_weight = store.add_he(name + ".conv2.weight", {out, out, 3, 3}, out * 9, rng);
    stages_[i].conv2_bias = store.add_zeros(name + ".conv2.bias", {out});
    in = out;
  }
  proj_weight_ = store.add_lecun(prefix + ".proj.weight", {in, config_.proj_dim}, in, rng);
  proj_bias_ = store.add_zeros(prefix + ".proj.bias", {config_.proj_dim});
}

FeaturePyramid Backbone::encode(const Tensor& x) const {
  const Shape expected{x.rank() == 4 ? x.dim(0) : 0, config_.input_channels, config_.image_size, config_.image_size};
  if (x.shape() != expected) throw ShapeError("backbone.encode", x.shape(), expected);
  FeaturePyramid out;
  Tensor h = x;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const Stage& s = stages_[i];
    h = ops::relu(ops::conv2d(h, s.conv1_weight, s.conv1_bias, 2, 1));
    h = ops::relu(ops::conv2d(h, s.conv2_weight, s.conv2_bias, 1, 1));
    out.stages[i] = h;
  }
  const Tensor pooled = ops::global_avg_pool(h);
  out.z = ops::l2_normalize(ops::linear(pooled, proj_weight_, proj_bias_), 1, 1e-12, &out.degenerate_rows);
  return out;
}

Tensor make_view_batch(const Dataset& data, std::span<const std::size_t> indices, View view,
                       const SpacingNormalizer& normalize) {
  const std::size_t size = data.spec.image_size;
  const std::size_t per = (data.spec.in_channels + 1) * size * size;
  std::vector<double> values;
  values.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    const SamplePair& s = data.samples.at(i);
    const auto planes =
        attach_spacing_channel(view == View::Longitudinal ? s.x_long : s.x_trans, size, size, s.spacing, normalize);
    values.insert(values.end(), planes.begin(), planes.end());
  }
  return Tensor::from_data({indices.size(), data.spec.in_channels + 1, size, size}, std::move(values));
}

MemoryFeatures init_memory_features(const Backbone& long_encoder, const Backbone& trans_encoder, const Dataset& data,
                                    const std::vector<std::size_t>& train, const SpacingNormalizer& normalize,
                                    std::size_t batch_size) {
  NoGradGuard no_grad;
  MemoryFeatures out;
  out.indices = train;
  std::sort(out.indices.begin(), out.indices.end());
  for (std::size_t at = 0; at < out.indices.size(); at += batch_size) {
    const std::size_t end = std::min(out.indices.size(), at + batch_size);
    std::span<const std::size_t> chunk(out.indices.data() + at, end - at);
    const Tensor zl_t = long_encoder.encode(make_view_batch(data, chunk, View::Longitudinal, normalize)).z;
    const Tensor zt_t = trans_encoder.encode(make_view_batch(data, chunk, View::Transverse, normalize)).z;
    const auto zl = zl_t.data();
    const auto zt = zt_t.data();
    out.z_long.insert(out.z_long.end(), zl.begin(), zl.end());
    out.z_trans.insert(out.z_trans.end(), zt.begin(), zt.end());
  }
  return out;
}

}  // namespace cvcrf
