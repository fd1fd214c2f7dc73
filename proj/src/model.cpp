#include "cvcrf/model.hpp"

#include <random>
#include <stdexcept>

namespace cvcrf {

CvcModel::CvcModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.backbone.validate();
  // Independent streams per component so toggling one ablation leaves the
  // other components' initial weights untouched.
  std::mt19937_64 backbone_rng(mix_seed(seed, 0xBB01));
  std::mt19937_64 dsam_rng(mix_seed(seed, 0xD5A3));
  std::mt19937_64 head_rng(mix_seed(seed, 0x4EAD));
  if (config_.shared_backbone) {
    long_encoder_ = std::make_unique<Backbone>(config_.backbone, store_, "backbone", backbone_rng);
  } else {
    long_encoder_ = std::make_unique<Backbone>(config_.backbone, store_, "backbone_long", backbone_rng);
    trans_encoder_ = std::make_unique<Backbone>(config_.backbone, store_, "backbone_trans", backbone_rng);
  }
  if (config_.use_dsam) cascade_ = std::make_unique<DsamCascade>(config_.backbone, config_.heads, store_, "dsam", dsam_rng);
  head_ = std::make_unique<ExpertEnsemble>(config_.fused_dim(), config_.use_moe ? config_.num_classes : 1,
                                           config_.num_classes, store_, "moe", head_rng);
}

std::pair<FeaturePyramid, FeaturePyramid> CvcModel::encode(const Tensor& x_long, const Tensor& x_trans) const {
  switch (config_.view) {
    case ViewMode::LongOnly: {
      FeaturePyramid p = long_encoder().encode(x_long);
      return {p, p};
    }
    case ViewMode::TransOnly: {
      FeaturePyramid p = trans_encoder().encode(x_trans);
      return {p, p};
    }
    case ViewMode::Both:
      break;
  }
  return {long_encoder().encode(x_long), trans_encoder().encode(x_trans)};
}

ForwardOutput CvcModel::forward(const Tensor& x_long, const Tensor& x_trans, const ClassCenters* centers) const {
  ForwardOutput out;
  std::tie(out.long_pyramid, out.trans_pyramid) = encode(x_long, x_trans);
  if (config_.use_moe) {
    if (!centers) throw std::invalid_argument("model: the MoE gate needs class centers");
    out.gate = gate_weights(out.long_pyramid.z, out.trans_pyramid.z, *centers, config_.gate_stop_gradient);
  }
  out.fused = cascade_ ? cascade_->fuse(out.long_pyramid, out.trans_pyramid)
                       : late_fusion(out.long_pyramid, out.trans_pyramid);
  out.logits = config_.use_moe ? head_->forward(out.fused.z_fused, out.gate) : head_->forward_single(out.fused.z_fused);
  return out;
}

}  // namespace cvcrf
