#ifndef RLQ_MODEL_HPP_
#define RLQ_MODEL_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "rlq/image.hpp"
#include "rlq/tensor.hpp"

namespace rlq {

/// Dense layer parameters: W is [in x out], b is [1 x out].
struct Dense {
  Tensor W;
  Tensor b;
};

/// x[B x in] * W + b, bias broadcast over the batch through a ones column.
Tensor affine(const Tensor& x, const Dense& layer);

/// Max-Avg pooling: the feature axis is viewed as `groups` contiguous groups;
/// the per-group max and mean are concatenated, giving 2 * groups dims.
Tensor maxavg_pool(const Tensor& x, std::size_t groups);

/// Architecture hyperparameters. The defaults are the toy dimensions:
/// 64x32 RGB flattened to 6144, backbone 6144->512->256, branch blocks
/// 256->256->256, 64 pooling groups so each branch feature is 128 and the
/// inference feature 256.
struct ModelConfig {
  int input_dim = 64 * 32 * 3;
  int b1_dim = 512;
  int b2_dim = 256;
  int branch_dim = 256;
  int pool_groups = 64;
  int num_ids = 0;
  int num_clothes = 0;
  int num_pose_classes = 16;  // k clusters + noise cluster 0
  // per-channel input normalization, set from the training split
  std::array<double, 3> norm_mean = {127.5, 127.5, 127.5};
  std::array<double, 3> norm_std = {64.0, 64.0, 64.0};

  int branch_feature_dim() const { return 2 * pool_groups; }
  int embedding_dim() const { return 2 * branch_feature_dim(); }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
};

/// All trainable state of the toy RLQ network. The BOT and CAL branches
/// share b1 and b2 (same tensors); the pose branch shares only b1. Branch
/// blocks start as copies of one another, mirroring a backbone split.
struct ModelParams {
  ModelConfig config;

  Dense b1, b2;                  // group "backbone"
  Dense bot3, bot4;              // group "bot_branch"
  Dense cal3, cal4;              // group "cal_branch"
  Dense pose2, pose3, pose4;     // group "pose_branch"
  Dense id_head_bot;             // group "id_head_bot"
  Dense id_head_cal;             // group "id_head_cal"
  Dense clothes_head;            // group "clothes_head"
  Dense gender_head;             // group "gender_head"
  Dense pose_head;               // group "pose_head"

  std::set<std::string> frozen_groups;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Deep copy with every group frozen; optimizer steps leave it untouched
  /// and its forward passes record no graph.
  ModelParams clone_frozen() const;

  /// Deep copy with every group trainable (a student seeded from a teacher).
  ModelParams clone_trainable() const;

  void set_group_frozen(const std::string& group, bool frozen);
  bool is_frozen(const std::string& group) const;

  /// Visits every parameter tensor in declaration order as
  /// (group, name, tensor).
  void for_each_param(
      const std::function<void(const std::string&, const std::string&, Tensor&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const std::string&,
                                               const Tensor&)>& fn) const;

  /// FNV-1a over the raw parameter bytes in declaration order.
  std::uint64_t checksum() const;

  /// Binary checkpoint: magic "RLQ1", a dimension table, then little-endian
  /// float64 buffers in declaration order. A JSON sidecar (<path>.json)
  /// carries the architecture hyperparameters and frozen groups.
  void save(const std::string& path) const;
  static ModelParams load(const std::string& path);
};

struct ForwardResult {
  Tensor f_bot;          // [B x 2G]
  Tensor f_cal;          // [B x 2G]
  Tensor f_pose;         // [B x 2G], defined only with_pose
  Tensor id_logits_bot;  // [B x num_ids]
  Tensor id_logits_cal;
  Tensor clothes_logits;  // [B x num_clothes]
  Tensor gender_logits;   // [B x 2]
  Tensor pose_logits;     // [B x num_pose_classes], defined only with_pose
};

/// Full training forward pass over a flattened normalized batch. The pose
/// branch and its head run only when with_pose is set (CAP training mode).
ForwardResult forward(ModelParams& params, const Tensor& batch, bool with_pose);

/// Flattens and normalizes images with the model's per-channel statistics.
Tensor images_to_batch(const ModelConfig& config, const std::vector<Image>& images);

/// [f_bot, f_cal] concatenated and L2-normalized; pose and gender heads are
/// not evaluated. Rows are unit vectors.
Tensor inference_embeddings(ModelParams& params, const std::vector<Image>& images);

}  // namespace rlq

#endif  // RLQ_MODEL_HPP_
