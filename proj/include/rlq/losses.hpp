#ifndef RLQ_LOSSES_HPP_
#define RLQ_LOSSES_HPP_

#include <map>
#include <set>
#include <string>
#include <vector>

#include "rlq/tensor.hpp"

namespace rlq {

/// A named scalar training objective still attached to its graph.
/// Every loss carries weight 1 unless the experiment config overrides it.
struct LossValue {
  Tensor value;
  std::string name;
  double weight = 1.0;
};

/// Mean over the batch of -sum_k q_k log softmax(logits)_k with
/// q = (1 - epsilon) * onehot + epsilon / C.
LossValue label_smoothed_ce(const Tensor& logits, const std::vector<int>& labels,
                            double epsilon, const std::string& name = "ce");

/// Batch-hard triplet mining under Euclidean distance: per anchor, the
/// hardest positive is the most distant same-identity sample (self excluded)
/// and the hardest negative the closest other-identity sample;
/// loss = mean relu(d_ap - d_an + margin). Requires >= 2 samples per
/// identity and >= 2 identities in the batch.
LossValue triplet_loss(const Tensor& features, const std::vector<int>& labels,
                       double margin);

struct ClothesAdversarialPair {
  LossValue classifier_loss;   // updates only the clothes classifier
  LossValue adversarial_loss;  // updates only the feature extractor
};

/// Two-player clothes objective. The classifier half sees detached features;
/// the adversarial half sees detached classifier parameters and pulls the
/// logits toward the uniform distribution over the clothes classes owned by
/// the sample's identity.
ClothesAdversarialPair clothes_adversarial(
    const Tensor& features, const Tensor& classifier_w, const Tensor& classifier_b,
    const std::vector<int>& clothes_labels, const std::vector<int>& id_labels,
    const std::map<int, std::set<int>>& id_to_clothes);

/// Symmetric KL between the two branches' identity logits at `temperature`:
/// 0.5 KL(softmax(bot/T) || softmax(cal/T)) + 0.5 KL(cal || bot), batch mean.
/// Zero iff the logit rows differ by per-row constants.
LossValue id_logit_kl(const Tensor& logits_bot, const Tensor& logits_cal,
                      double temperature = 1.0);

/// Mean |cosine(f_bot_i, f_pose_i)| over the batch; range [0, 1].
LossValue cosine_disentangle(const Tensor& f_bot, const Tensor& f_pose);

/// Normalized CAL/BOT feature pair of one forward pass.
struct BranchFeatures {
  Tensor cal;
  Tensor bot;
};

/// Feature distillation: sum over tiers delta in {HQ, LQ} of
/// ||T_CAL - S_CAL^delta||^2 + ||T_BOT - S_BOT^delta||^2, batch mean per
/// term. All six feature matrices must be row-normalized (tolerance 1e-6);
/// teacher features must carry no graph.
LossValue tad_distill(const BranchFeatures& teacher,
                      const BranchFeatures& student_hq,
                      const BranchFeatures& student_lq);

/// The three logit heads compared by TAD self-supervision.
struct TadLogits {
  Tensor cal_clothes;
  Tensor cal_id;
  Tensor bot_id;
};

/// KL(HQ || LQ) summed over the clothes head and both identity heads, batch
/// mean per term. By default the HQ side is detached so the gradient pulls
/// LQ logits toward HQ.
LossValue tad_self_supervise(const TadLogits& hq, const TadLogits& lq,
                             double temperature = 1.0, bool detach_hq = true);

}  // namespace rlq

#endif  // RLQ_LOSSES_HPP_
