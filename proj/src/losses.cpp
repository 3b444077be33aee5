#include "rlq/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rlq {

namespace {

void require_batch_rank2(const Tensor& t, const char* who) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument(std::string(who) + ": [batch x dim] tensor required");
  }
}

// -mean_b sum_k q[b,k] * log_softmax(logits)[b,k] for an explicit target
// distribution matrix q.
Tensor soft_target_ce(const Tensor& logits, std::vector<double> q) {
  const auto B = logits.rows();
  Tensor targets = Tensor::from_data({B, logits.cols()}, std::move(q));
  return scale(sum(mul(targets, log_softmax(logits))),
               -1.0 / static_cast<double>(B));
}

}  // namespace

LossValue label_smoothed_ce(const Tensor& logits, const std::vector<int>& labels,
                            double epsilon, const std::string& name) {
  require_batch_rank2(logits, "label_smoothed_ce");
  if (epsilon < 0.0 || epsilon >= 1.0) {
    throw std::invalid_argument("label_smoothed_ce: epsilon outside [0, 1)");
  }
  const std::size_t B = logits.rows(), C = logits.cols();
  if (labels.size() != B) {
    throw std::invalid_argument("label_smoothed_ce: label count != batch size");
  }
  std::vector<double> q(B * C, epsilon / static_cast<double>(C));
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C) {
      throw std::invalid_argument("label_smoothed_ce: label out of range");
    }
    q[i * C + static_cast<std::size_t>(labels[i])] += 1.0 - epsilon;
  }
  return {soft_target_ce(logits, std::move(q)), name, 1.0};
}

LossValue triplet_loss(const Tensor& features, const std::vector<int>& labels,
                       double margin) {
  require_batch_rank2(features, "triplet_loss");
  const std::size_t B = features.rows();
  if (labels.size() != B) {
    throw std::invalid_argument("triplet_loss: label count != batch size");
  }
  {
    std::map<int, int> counts;
    for (int l : labels) ++counts[l];
    if (counts.size() < 2) {
      throw std::invalid_argument("triplet_loss: batch holds a single identity");
    }
    for (const auto& [id, c] : counts) {
      if (c < 2) {
        throw std::invalid_argument("triplet_loss: identity with one sample in batch");
      }
    }
  }

  // pairwise Euclidean distances: D_ij = sqrt(relu(|f_i|^2 + |f_j|^2 - 2 f_i.f_j))
  Tensor sq = sum(mul(features, features), 1);              // [B]
  Tensor sq_col = reshape(sq, {B, 1});
  Tensor sq_row = reshape(sq, {1, B});
  Tensor ones_col = Tensor::full({B, 1}, 1.0);
  Tensor ones_row = Tensor::full({1, B}, 1.0);
  Tensor gram = matmul(features, transpose(features));      // [B, B]
  Tensor dsq = sub(add(matmul(sq_col, ones_row), matmul(ones_col, sq_row)),
                   scale(gram, 2.0));
  Tensor dist = sqrt(relu(dsq));

  // batch-hard mining on the concrete distance values
  const auto dv = dist.data();
  std::vector<std::size_t> pos_idx(B), neg_idx(B);
  for (std::size_t i = 0; i < B; ++i) {
    double worst_pos = -1.0, best_neg = std::numeric_limits<double>::infinity();
    std::size_t pi = B, ni = B;
    for (std::size_t j = 0; j < B; ++j) {
      const double d = dv[i * B + j];
      if (labels[j] == labels[i]) {
        if (j != i && d > worst_pos) {
          worst_pos = d;
          pi = j;
        }
      } else if (d < best_neg) {
        best_neg = d;
        ni = j;
      }
    }
    pos_idx[i] = i * B + pi;
    neg_idx[i] = i * B + ni;
  }

  Tensor d_ap = gather(dist, pos_idx);
  Tensor d_an = gather(dist, neg_idx);
  Tensor loss = mean(relu(add(sub(d_ap, d_an), Tensor::scalar(margin))));
  return {loss, "triplet", 1.0};
}

ClothesAdversarialPair clothes_adversarial(
    const Tensor& features, const Tensor& classifier_w, const Tensor& classifier_b,
    const std::vector<int>& clothes_labels, const std::vector<int>& id_labels,
    const std::map<int, std::set<int>>& id_to_clothes) {
  require_batch_rank2(features, "clothes_adversarial");
  const std::size_t B = features.rows();
  const std::size_t K = classifier_w.cols();
  if (clothes_labels.size() != B || id_labels.size() != B) {
    throw std::invalid_argument("clothes_adversarial: label count != batch size");
  }

  Tensor ones = Tensor::full({B, 1}, 1.0);

  // classifier half: detached features, live classifier parameters
  Tensor logits_c = add(matmul(features.detach(), classifier_w),
                        matmul(ones, classifier_b));
  LossValue classifier = label_smoothed_ce(logits_c, clothes_labels, 0.0, "clothes_ce");

  // adversarial half: live features, frozen classifier snapshot, uniform
  // target over the identity's own clothes classes
  Tensor logits_a = add(matmul(features, classifier_w.detach()),
                        matmul(ones, classifier_b.detach()));
  std::vector<double> q(B * K, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    const auto it = id_to_clothes.find(id_labels[i]);
    if (it == id_to_clothes.end() || it->second.empty()) {
      throw std::invalid_argument("clothes_adversarial: identity owns no clothes classes");
    }
    const double p = 1.0 / static_cast<double>(it->second.size());
    for (int cls : it->second) {
      if (cls < 0 || static_cast<std::size_t>(cls) >= K) {
        throw std::invalid_argument("clothes_adversarial: clothes class out of range");
      }
      q[i * K + static_cast<std::size_t>(cls)] = p;
    }
  }
  LossValue adversarial = {soft_target_ce(logits_a, std::move(q)), "clothes_adv", 1.0};
  return {classifier, adversarial};
}

namespace {

// mean over rows of KL(softmax(a/T) || softmax(b/T))
Tensor kl_rows(const Tensor& a, const Tensor& b, double temperature) {
  const double inv_t = 1.0 / temperature;
  Tensor lp = log_softmax(scale(a, inv_t));
  Tensor lq = log_softmax(scale(b, inv_t));
  Tensor p = exp(lp);
  return scale(sum(mul(p, sub(lp, lq))), 1.0 / static_cast<double>(a.rows()));
}

}  // namespace

LossValue id_logit_kl(const Tensor& logits_bot, const Tensor& logits_cal,
                      double temperature) {
  require_batch_rank2(logits_bot, "id_logit_kl");
  if (logits_bot.shape() != logits_cal.shape()) {
    throw std::invalid_argument("id_logit_kl: logit shapes differ");
  }
  if (temperature <= 0.0) throw std::invalid_argument("id_logit_kl: temperature <= 0");
  Tensor loss = scale(add(kl_rows(logits_bot, logits_cal, temperature),
                          kl_rows(logits_cal, logits_bot, temperature)),
                      0.5);
  return {loss, "id_kl", 1.0};
}

LossValue cosine_disentangle(const Tensor& f_bot, const Tensor& f_pose) {
  require_batch_rank2(f_bot, "cosine_disentangle");
  if (f_bot.shape() != f_pose.shape()) {
    throw std::invalid_argument("cosine_disentangle: feature shapes differ");
  }
  Tensor cosines = sum(mul(l2_normalize(f_bot), l2_normalize(f_pose)), 1);
  return {mean(abs(cosines)), "cos_disentangle", 1.0};
}

namespace {

void require_normalized(const Tensor& t, const char* who) {
  require_batch_rank2(t, who);
  const auto v = t.data();
  const std::size_t B = t.rows(), D = t.cols();
  for (std::size_t i = 0; i < B; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) s += v[i * D + j] * v[i * D + j];
    if (std::fabs(std::sqrt(s) - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string(who) + ": row is not unit-normalized");
    }
  }
}

// batch mean of the squared row distance ||a - b||^2
Tensor mse_rows(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return scale(sum(mul(d, d)), 1.0 / static_cast<double>(a.rows()));
}

}  // namespace

LossValue tad_distill(const BranchFeatures& teacher,
                      const BranchFeatures& student_hq,
                      const BranchFeatures& student_lq) {
  for (const auto* f : {&teacher, &student_hq, &student_lq}) {
    require_normalized(f->cal, "tad_distill");
    require_normalized(f->bot, "tad_distill");
  }
  if (teacher.cal.attached() || teacher.bot.attached() ||
      teacher.cal.requires_grad() || teacher.bot.requires_grad()) {
    throw std::invalid_argument("tad_distill: teacher features must carry no gradient");
  }
  if (teacher.cal.shape() != student_hq.cal.shape() ||
      teacher.cal.shape() != student_lq.cal.shape() ||
      teacher.bot.shape() != student_hq.bot.shape() ||
      teacher.bot.shape() != student_lq.bot.shape()) {
    throw std::invalid_argument("tad_distill: feature shapes differ");
  }
  Tensor loss = add(add(mse_rows(teacher.cal, student_hq.cal),
                        mse_rows(teacher.bot, student_hq.bot)),
                    add(mse_rows(teacher.cal, student_lq.cal),
                        mse_rows(teacher.bot, student_lq.bot)));
  return {loss, "tad_distill", 1.0};
}

LossValue tad_self_supervise(const TadLogits& hq, const TadLogits& lq,
                             double temperature, bool detach_hq) {
  const std::pair<const Tensor*, const Tensor*> heads[3] = {
      {&hq.cal_clothes, &lq.cal_clothes},
      {&hq.cal_id, &lq.cal_id},
      {&hq.bot_id, &lq.bot_id},
  };
  Tensor loss = Tensor::scalar(0.0);
  for (const auto& [h, l] : heads) {
    require_batch_rank2(*h, "tad_self_supervise");
    if (h->shape() != l->shape()) {
      throw std::invalid_argument("tad_self_supervise: head shapes differ");
    }
    Tensor reference = detach_hq ? h->detach() : *h;
    loss = add(loss, kl_rows(reference, *l, temperature));
  }
  return {loss, "tad_self_sup", 1.0};
}

}  // namespace rlq
