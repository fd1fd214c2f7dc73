#include "cvcrf/dsam.hpp"

#include <cmath>
#include <stdexcept>

namespace cvcrf {

namespace {

Tensor add_normal(ParameterStore& store, const std::string& name, Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return store.add(name, Tensor::from_data(std::move(shape), std::move(values), true));
}

}  // namespace

DsamStage::DsamStage(std::size_t channels, std::size_t height, std::size_t width, std::size_t patches,
                     std::size_t heads, ParameterStore& store, const std::string& prefix, std::mt19937_64& rng)
    : channels_(channels), height_(height), width_(width), patches_(patches), heads_(heads) {
  if (patches_ == 0 || channels_ % patches_ != 0) {
    throw std::invalid_argument("dsam: " + std::to_string(channels_) + " channels not divisible into " +
                                std::to_string(patches_) + " patches");
  }
  if (height_ % 2 != 0 || width_ % 2 != 0 || height_ == 0 || width_ == 0) {
    throw std::invalid_argument("dsam: spatial size must be even");
  }
  token_dim_ = channels_ / patches_ * (height_ / 2) * (width_ / 2);
  if (heads_ == 0 || token_dim_ % heads_ != 0) {
    throw std::invalid_argument("dsam: token width " + std::to_string(token_dim_) + " not divisible by " +
                                std::to_string(heads_) + " heads");
  }
  const std::size_t d = token_dim_;
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));
  wq_ = add_normal(store, prefix + ".attn.q.weight", {d, d}, attn_std, rng);
  bq_ = store.add_zeros(prefix + ".attn.q.bias", {d});
  wk_ = add_normal(store, prefix + ".attn.k.weight", {d, d}, attn_std, rng);
  bk_ = store.add_zeros(prefix + ".attn.k.bias", {d});
  wv_ = add_normal(store, prefix + ".attn.v.weight", {d, d}, attn_std, rng);
  bv_ = store.add_zeros(prefix + ".attn.v.bias", {d});
  wo_ = add_normal(store, prefix + ".attn.out.weight", {d, d}, attn_std, rng);
  bo_ = store.add_zeros(prefix + ".attn.out.bias", {d});
  ffn1_w_ = store.add_he(prefix + ".ffn.fc1.weight", {d, 2 * d}, d, rng);
  ffn1_b_ = store.add_zeros(prefix + ".ffn.fc1.bias", {2 * d});
  ffn2_w_ = store.add_lecun(prefix + ".ffn.fc2.weight", {2 * d, 2 * d}, 2 * d, rng);
  ffn2_b_ = store.add_zeros(prefix + ".ffn.fc2.bias", {2 * d});
}

Tensor DsamStage::mix_tokens(const Tensor& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(1) != patches_ || tokens.dim(2) != token_dim_) {
    throw ShapeError("dsam.tokens", tokens.shape(), {0, patches_, token_dim_});
  }
  const std::size_t batch = tokens.dim(0), head_dim = token_dim_ / heads_;
  auto split_heads = [&](const Tensor& t) {
    Tensor h = ops::permute(ops::reshape(t, {batch, patches_, heads_, head_dim}), {0, 2, 1, 3});
    return ops::reshape(h, {batch * heads_, patches_, head_dim});
  };
  const Tensor q = split_heads(ops::linear(tokens, wq_, bq_));
  const Tensor k = split_heads(ops::linear(tokens, wk_, bk_));
  const Tensor v = split_heads(ops::linear(tokens, wv_, bv_));
  Tensor attended = ops::scaled_dot_product_attention(q, k, v);
  attended = ops::permute(ops::reshape(attended, {batch, heads_, patches_, head_dim}), {0, 2, 1, 3});
  attended = ops::linear(ops::reshape(attended, {batch, patches_, token_dim_}), wo_, bo_);
  const Tensor mixed = ops::add(tokens, attended);
  return ops::linear(ops::relu(ops::linear(mixed, ffn1_w_, ffn1_b_)), ffn2_w_, ffn2_b_);
}

Tensor DsamStage::forward(const Tensor& x) const {
  const Shape expected{x.rank() == 4 ? x.dim(0) : 0, channels_, height_, width_};
  if (x.shape() != expected) throw ShapeError("dsam.forward", x.shape(), expected);
  const std::size_t batch = x.dim(0);
  const Tensor pooled = ops::max_pool2d(x, 2, 2);
  const Tensor tokens = ops::reshape(pooled, {batch, patches_, token_dim_});
  return ops::reshape(mix_tokens(tokens), {batch, 2 * channels_, height_ / 2, width_ / 2});
}

DsamCascade::DsamCascade(const BackboneConfig& backbone, std::size_t heads, ParameterStore& store,
                         const std::string& prefix, std::mt19937_64& rng)
    : backbone_(backbone) {
  backbone_.validate();
  if (backbone_.image_size % 32 != 0) {
    throw std::invalid_argument("dsam: image size " + std::to_string(backbone_.image_size) +
                                " must be a multiple of 32 so the last stage can pool");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t size = backbone_.stage_size(i);
    stages_.emplace_back(backbone_.stage_channels(i), size, size, backbone_.patches, heads, store,
                         prefix + ".stage" + std::to_string(i + 1), rng);
  }
}

void DsamCascade::check_pyramid(const FeaturePyramid& pyramid) const {
  const std::size_t batch = pyramid.stages[0].dim(0);
  for (std::size_t i = 0; i < 4; ++i) {
    const Shape expected{batch, backbone_.stage_channels(i), backbone_.stage_size(i), backbone_.stage_size(i)};
    if (pyramid.stages[i].shape() != expected) {
      throw ShapeError("dsam.cascade", pyramid.stages[i].shape(), expected, "stage " + std::to_string(i + 1));
    }
  }
}

Tensor DsamCascade::forward_view(const FeaturePyramid& pyramid) const {
  check_pyramid(pyramid);
  Tensor h = stages_[0].forward(pyramid.stages[0]);
  for (std::size_t i = 1; i < 4; ++i) h = stages_[i].forward(ops::add(h, pyramid.stages[i]));
  return ops::global_avg_pool(h);
}

FusedFeature DsamCascade::fuse(const FeaturePyramid& long_view, const FeaturePyramid& trans_view) const {
  FusedFeature out;
  out.view_long = forward_view(long_view);
  out.view_trans = forward_view(trans_view);
  out.z_fused = ops::concat({out.view_long, out.view_trans}, 1);
  return out;
}

FusedFeature late_fusion(const FeaturePyramid& long_view, const FeaturePyramid& trans_view) {
  FusedFeature out;
  out.view_long = ops::global_avg_pool(long_view.stages[3]);
  out.view_trans = ops::global_avg_pool(trans_view.stages[3]);
  out.z_fused = ops::concat({out.view_long, out.view_trans}, 1);
  return out;
}

}  // namespace cvcrf
