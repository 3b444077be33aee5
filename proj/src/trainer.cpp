#include "rlq/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "rlq/eval.hpp"
#include "rlq/losses.hpp"

namespace rlq {

namespace fs = std::filesystem;

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kBaseline: return "baseline";
    case Mode::kCapOnly: return "cap_only";
    case Mode::kTadOnly: return "tad_only";
    case Mode::kRlq: return "rlq";
  }
  throw std::logic_error("mode_name: bad enum");
}

Mode mode_from_name(const std::string& name) {
  if (name == "baseline") return Mode::kBaseline;
  if (name == "cap_only") return Mode::kCapOnly;
  if (name == "tad_only") return Mode::kTadOnly;
  if (name == "rlq") return Mode::kRlq;
  throw std::invalid_argument("unknown mode: " + name);
}

std::string variant_name(TadVariant v) {
  switch (v) {
    case TadVariant::kTad: return "tad";
    case TadVariant::kSsMseTad: return "ss_mse_tad";
    case TadVariant::kSsMseNt: return "ss_mse_nt";
    case TadVariant::kLqAugOnly: return "lq_aug_only";
    case TadVariant::kTargetSsNt: return "target_ss_nt";
  }
  throw std::logic_error("variant_name: bad enum");
}

TadVariant variant_from_name(const std::string& name) {
  if (name == "tad") return TadVariant::kTad;
  if (name == "ss_mse_tad") return TadVariant::kSsMseTad;
  if (name == "ss_mse_nt") return TadVariant::kSsMseNt;
  if (name == "lq_aug_only") return TadVariant::kLqAugOnly;
  if (name == "target_ss_nt") return TadVariant::kTargetSsNt;
  throw std::invalid_argument("unknown tad variant: " + name);
}

void ExperimentConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: epochs must be positive");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size too small");
  if (positives_per_id < 2) {
    throw std::invalid_argument("config: positives_per_id must be at least 2");
  }
  if (batch_size % positives_per_id != 0) {
    throw std::invalid_argument("config: batch_size must divide by positives_per_id");
  }
  if (external_fraction <= 0.0 || external_fraction > 1.0) {
    throw std::invalid_argument("config: external_fraction outside (0, 1]");
  }
  if (base_lr <= 0.0) throw std::invalid_argument("config: base_lr must be positive");
  if (eval_every < 1) throw std::invalid_argument("config: eval_every must be positive");
  if (clothes_aug_prob < 0.0 || clothes_aug_prob > 1.0) {
    throw std::invalid_argument("config: clothes_aug_prob outside [0, 1]");
  }
  tad_policy.validate();
}

std::string ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["mode"] = mode_name(mode);
  j["tad_variant"] = variant_name(tad_variant);
  j["epochs"] = epochs;
  j["teacher_epochs"] = teacher_epochs;
  j["batch_size"] = batch_size;
  j["positives_per_id"] = positives_per_id;
  j["base_lr"] = base_lr;
  j["warmup_epochs"] = warmup_epochs;
  j["external_fraction"] = external_fraction;
  j["eval_every"] = eval_every;
  j["seed"] = seed;
  j["clothes_aug_prob"] = clothes_aug_prob;
  j["triplet_margin"] = triplet_margin;
  j["label_smoothing"] = label_smoothing;
  j["kl_temperature"] = kl_temperature;
  j["tad_temperature"] = tad_temperature;
  j["tad_detach_hq"] = tad_detach_hq;
  j["tad_interleave_target"] = tad_interleave_target;
  j["tad_policy"] = nlohmann::json::parse(tad_policy.to_json());
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  const std::set<std::string> known = {
      "mode",           "tad_variant",     "epochs",          "teacher_epochs",
      "batch_size",     "positives_per_id", "base_lr",        "warmup_epochs",
      "external_fraction", "eval_every",   "seed",            "clothes_aug_prob",
      "triplet_margin", "label_smoothing", "kl_temperature",  "tad_temperature",
      "tad_detach_hq",  "tad_interleave_target", "tad_policy"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  ExperimentConfig c;
  if (j.contains("mode")) c.mode = mode_from_name(j.at("mode"));
  if (j.contains("tad_variant")) c.tad_variant = variant_from_name(j.at("tad_variant"));
  if (j.contains("epochs")) c.epochs = j.at("epochs");
  if (j.contains("teacher_epochs")) c.teacher_epochs = j.at("teacher_epochs");
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size");
  if (j.contains("positives_per_id")) c.positives_per_id = j.at("positives_per_id");
  if (j.contains("base_lr")) c.base_lr = j.at("base_lr");
  if (j.contains("warmup_epochs")) c.warmup_epochs = j.at("warmup_epochs");
  if (j.contains("external_fraction")) c.external_fraction = j.at("external_fraction");
  if (j.contains("eval_every")) c.eval_every = j.at("eval_every");
  if (j.contains("seed")) c.seed = j.at("seed");
  if (j.contains("clothes_aug_prob")) c.clothes_aug_prob = j.at("clothes_aug_prob");
  if (j.contains("triplet_margin")) c.triplet_margin = j.at("triplet_margin");
  if (j.contains("label_smoothing")) c.label_smoothing = j.at("label_smoothing");
  if (j.contains("kl_temperature")) c.kl_temperature = j.at("kl_temperature");
  if (j.contains("tad_temperature")) c.tad_temperature = j.at("tad_temperature");
  if (j.contains("tad_detach_hq")) c.tad_detach_hq = j.at("tad_detach_hq");
  if (j.contains("tad_interleave_target")) c.tad_interleave_target = j.at("tad_interleave_target");
  if (j.contains("tad_policy")) c.tad_policy = ArtifactPolicy::from_json(j.at("tad_policy").dump());
  c.validate();
  return c;
}

// ---- dataset loading --------------------------------------------------------

LoadedDataset load_dataset(const std::string& root) {
  LoadedDataset ds;
  ds.root = root;
  ds.manifest = Manifest::load_jsonl((fs::path(root) / "manifest.jsonl").string());
  ds.manifest.validate(root);

  std::map<std::string, Skeleton> skel_by_path;
  const auto skel_path = fs::path(root) / "skeletons.jsonl";
  if (fs::exists(skel_path)) {
    for (auto& rec : load_skeletons_jsonl(skel_path.string())) {
      skel_by_path.emplace(rec.image, rec.skeleton);
    }
  }

  ds.images.reserve(ds.manifest.samples.size());
  ds.masks.resize(ds.manifest.samples.size());
  ds.skeletons.resize(ds.manifest.samples.size());
  for (std::size_t i = 0; i < ds.manifest.samples.size(); ++i) {
    const auto& s = ds.manifest.samples[i];
    ds.images.push_back(read_png((fs::path(root) / s.path).string()));

    std::string mask_path = s.path;
    const auto dot = mask_path.rfind(".png");
    if (dot != std::string::npos) mask_path.insert(dot, "_mask");
    const auto full_mask = fs::path(root) / mask_path;
    if (fs::exists(full_mask)) {
      const Image m = read_png(full_mask.string());
      SegMask mask(m.height, m.width);
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) mask.at(y, x) = m.at(y, x, 0);
      ds.masks[i] = std::move(mask);
    }
    const auto it = skel_by_path.find(s.path);
    if (it != skel_by_path.end()) ds.skeletons[i] = it->second;
  }
  return ds;
}

// ---- optimizer ---------------------------------------------------------------

double AdamOptimizer::current_lr() const {
  if (warmup_steps <= 0) return base_lr;
  const double f = static_cast<double>(step_count) / static_cast<double>(warmup_steps);
  return base_lr * std::min(1.0, f);
}

void AdamOptimizer::step(ModelParams& params) {
  ++step_count;
  const double lr = current_lr();
  const double bc1 = 1.0 - std::pow(beta1, step_count);
  const double bc2 = 1.0 - std::pow(beta2, step_count);
  params.for_each_param([&](const std::string&, const std::string& name, Tensor& t) {
    if (!t.requires_grad() || !t.has_grad()) return;
    const auto g = t.grad();
    auto& mm = m[name];
    auto& vv = v[name];
    if (mm.empty()) mm.assign(g.size(), 0.0);
    if (vv.empty()) vv.assign(g.size(), 0.0);
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i];
      vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = mm[i] / bc1;
      const double vhat = vv[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    t.zero_grad();
  });
}

// ---- PK sampler ---------------------------------------------------------------

PkSampler::PkSampler(const std::vector<int>& sample_ids, int batch_size,
                     int positives_per_id, std::uint64_t seed)
    : positives_(positives_per_id), total_samples_(sample_ids.size()), rng_(seed) {
  if (batch_size % positives_per_id != 0) {
    throw std::invalid_argument("PkSampler: batch size must divide by K");
  }
  num_ids_per_batch_ = batch_size / positives_per_id;
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    by_id_[sample_ids[i]].push_back(i);
  }
  if (static_cast<int>(by_id_.size()) < num_ids_per_batch_) {
    throw std::invalid_argument("PkSampler: fewer identities than batch slots");
  }
  for (const auto& [id, _] : by_id_) id_ring_.push_back(id);
  rng_.shuffle(id_ring_);
}

void PkSampler::refill(int id) {
  auto q = by_id_.at(id);
  rng_.shuffle(q);
  auto& dst = queues_[id];
  dst.insert(dst.end(), q.begin(), q.end());
}

std::vector<std::vector<std::size_t>> PkSampler::epoch_batches() {
  std::vector<bool> visited(total_samples_, false);
  std::size_t remaining = total_samples_;
  std::vector<std::vector<std::size_t>> batches;
  while (remaining > 0) {
    std::vector<std::size_t> batch;
    std::set<int> used;
    while (static_cast<int>(used.size()) < num_ids_per_batch_) {
      if (ring_pos_ >= id_ring_.size()) {
        rng_.shuffle(id_ring_);
        ring_pos_ = 0;
      }
      const int id = id_ring_[ring_pos_++];
      if (used.count(id)) continue;  // ring reshuffle may repeat within a batch
      used.insert(id);
      for (int k = 0; k < positives_; ++k) {
        if (queues_[id].empty()) refill(id);
        const std::size_t s = queues_[id].front();
        queues_[id].erase(queues_[id].begin());
        batch.push_back(s);
        if (!visited[s]) {
          visited[s] = true;
          --remaining;
        }
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---- metrics -------------------------------------------------------------------

std::string MetricsRow::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["phase"] = phase;
  for (const auto& [k, v] : values) j[k] = v;
  return j.dump();
}

// ---- training internals ----------------------------------------------------------

namespace {

struct LabelSpace {
  std::map<int, int> id_index;       // raw identity -> dense index
  std::map<int, int> clothes_index;  // raw clothes -> dense base index
  int n_base_clothes = 0;
  std::map<int, std::set<int>> id_to_clothes_idx;  // dense id -> owned classes

  static LabelSpace build(const Manifest& m) {
    LabelSpace ls;
    for (int id : m.identities()) {
      const int idx = static_cast<int>(ls.id_index.size());
      ls.id_index[id] = idx;
    }
    for (int c : m.clothes_labels()) {
      const int idx = static_cast<int>(ls.clothes_index.size());
      ls.clothes_index[c] = idx;
    }
    ls.n_base_clothes = static_cast<int>(ls.clothes_index.size());
    for (const auto& [id, clothes] : m.id_to_clothes()) {
      auto& owned = ls.id_to_clothes_idx[ls.id_index.at(id)];
      for (int c : clothes) {
        const int base = ls.clothes_index.at(c);
        owned.insert(base);
        owned.insert(ls.n_base_clothes + base);  // augmentation alias
      }
    }
    return ls;
  }
};

std::array<double, 3> channel_mean(const std::vector<Image>& images,
                                   const std::vector<std::size_t>& idx) {
  std::array<double, 3> mean = {0, 0, 0};
  std::size_t n = 0;
  for (auto i : idx) {
    const auto& img = images[i];
    for (std::size_t p = 0; p < img.data.size(); p += 3) {
      for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] += img.data[p + static_cast<std::size_t>(c)];
    }
    n += img.data.size() / 3;
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  return mean;
}

std::array<double, 3> channel_std(const std::vector<Image>& images,
                                  const std::vector<std::size_t>& idx,
                                  const std::array<double, 3>& mean) {
  std::array<double, 3> var = {0, 0, 0};
  std::size_t n = 0;
  for (auto i : idx) {
    const auto& img = images[i];
    for (std::size_t p = 0; p < img.data.size(); p += 3) {
      for (int c = 0; c < 3; ++c) {
        const double d = img.data[p + static_cast<std::size_t>(c)] - mean[static_cast<std::size_t>(c)];
        var[static_cast<std::size_t>(c)] += d * d;
      }
    }
    n += img.data.size() / 3;
  }
  std::array<double, 3> sd;
  for (int c = 0; c < 3; ++c) {
    sd[static_cast<std::size_t>(c)] = std::max(1.0, std::sqrt(var[static_cast<std::size_t>(c)] / static_cast<double>(n)));
  }
  return sd;
}

struct TrainContext {
  ExperimentConfig cfg;
  const LoadedDataset* target = nullptr;
  const LoadedDataset* external = nullptr;
  ModelParams student;
  ModelParams teacher;  // frozen clone; config.num_ids == 0 when absent
  bool has_teacher = false;

  AdamOptimizer main_opt, clothes_opt;
  LabelSpace labels;

  std::vector<std::size_t> train_idx;        // target train HQ indices
  std::vector<int> train_id_dense;           // aligned with train_idx
  std::map<std::string, std::size_t> twin_of;  // HQ path -> LQ sample index
  std::vector<int> pose_label;               // per target sample; -1 unknown
  std::vector<std::size_t> tad_pool;         // sample indices for TAD epochs
  const LoadedDataset* tad_source = nullptr; // external or target (target_ss_nt)
  // frozen-teacher branch features per tad_pool member, computed once
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> teacher_cache;
  std::vector<std::size_t> probe_idx;        // pose-cos probe subset
  std::vector<std::size_t> query_idx, gallery_idx;
};

bool uses_tad_epochs(const ExperimentConfig& c) {
  if (c.mode != Mode::kTadOnly && c.mode != Mode::kRlq) return false;
  return c.tad_variant != TadVariant::kLqAugOnly;
}

bool wants_teacher(const ExperimentConfig& c) {
  return uses_tad_epochs(c) && (c.tad_variant == TadVariant::kTad ||
                                c.tad_variant == TadVariant::kSsMseTad);
}

bool wants_external(const ExperimentConfig& c) {
  return uses_tad_epochs(c) && c.tad_variant != TadVariant::kTargetSsNt;
}

bool inject_lq(const ExperimentConfig& c) {
  return (c.mode == Mode::kTadOnly || c.mode == Mode::kRlq) &&
         c.tad_variant == TadVariant::kLqAugOnly;
}

bool cap_heads_active(const ExperimentConfig& c) {
  return c.mode == Mode::kCapOnly || c.mode == Mode::kRlq;
}

Tensor embed_indices(ModelParams& params, const LoadedDataset& ds,
                     const std::vector<std::size_t>& idx) {
  const auto dim = static_cast<std::size_t>(params.config.embedding_dim());
  std::vector<double> rows;
  rows.reserve(idx.size() * dim);
  for (std::size_t at = 0; at < idx.size(); at += 64) {
    std::vector<Image> chunk;
    for (std::size_t i = at; i < std::min(idx.size(), at + 64); ++i) {
      chunk.push_back(ds.images[idx[i]]);
    }
    Tensor emb = inference_embeddings(params, chunk);
    rows.insert(rows.end(), emb.data().begin(), emb.data().end());
  }
  return Tensor::from_data({idx.size(), dim}, std::move(rows));
}

// mean |cos| between BOT and POSE features over the probe subset
double pose_cosine_probe(ModelParams& params, const LoadedDataset& ds,
                         const std::vector<std::size_t>& idx) {
  NoGradScope no_grad;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t at = 0; at < idx.size(); at += 64) {
    std::vector<Image> chunk;
    for (std::size_t i = at; i < std::min(idx.size(), at + 64); ++i) {
      chunk.push_back(ds.images[idx[i]]);
    }
    Tensor batch = images_to_batch(params.config, chunk);
    auto r = forward(params, batch, /*with_pose=*/true);
    const auto l = cosine_disentangle(r.f_bot, r.f_pose);
    total += l.value.item() * static_cast<double>(chunk.size());
    n += chunk.size();
  }
  return total / static_cast<double>(n);
}

double gender_accuracy(ModelParams& params, const LoadedDataset& ds,
                       const std::vector<std::size_t>& idx) {
  NoGradScope no_grad;
  int correct = 0;
  for (std::size_t at = 0; at < idx.size(); at += 64) {
    std::vector<Image> chunk;
    std::vector<int> truth;
    for (std::size_t i = at; i < std::min(idx.size(), at + 64); ++i) {
      chunk.push_back(ds.images[idx[i]]);
      truth.push_back(ds.manifest.samples[idx[i]].gender);
    }
    Tensor batch = images_to_batch(params.config, chunk);
    auto r = forward(params, batch, false);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int pred = r.gender_logits.at(i, 1) > r.gender_logits.at(i, 0) ? 1 : 0;
      correct += pred == truth[i];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

// one CAP (or plain base-model) epoch over the target train split
std::map<std::string, double> run_base_epoch(TrainContext& ctx, int epoch,
                                             bool with_pose, bool with_inject) {
  const auto& cfg = ctx.cfg;
  const auto& ds = *ctx.target;
  PkSampler sampler(ctx.train_id_dense, cfg.batch_size, cfg.positives_per_id,
                    cfg.seed ^ (0x5e11ULL + static_cast<std::uint64_t>(epoch)));
  Rng aug_rng(cfg.seed, 40000 + static_cast<std::uint64_t>(epoch));

  const std::set<std::string> expected_names = [&] {
    std::set<std::string> names = {"ce_id_bot", "ce_id_cal", "clothes_ce",
                                   "clothes_adv", "id_kl", "triplet"};
    if (with_pose) {
      names.insert({"ce_pose", "ce_gender", "cos_disentangle"});
    }
    return names;
  }();

  std::map<std::string, double> sums;
  std::size_t batches = 0;
  for (const auto& batch_slots : sampler.epoch_batches()) {
    std::vector<Image> images;
    std::vector<int> id_labels, clothes_labels, gender_labels, pose_labels;
    for (std::size_t slot : batch_slots) {
      const std::size_t si = ctx.train_idx[slot];
      const Sample& s = ds.manifest.samples[si];
      const int id_dense = ctx.labels.id_index.at(s.id);
      int clothes_dense = ctx.labels.clothes_index.at(s.clothes);
      int pose_lab = ctx.pose_label.empty() ? 0 : ctx.pose_label[si];

      Image img = ds.images[si];
      if (with_inject && aug_rng.bernoulli(0.5)) {
        // swap in the degraded twin; labels unchanged, pose follows the twin
        const auto it = ctx.twin_of.find(s.path);
        if (it != ctx.twin_of.end()) {
          img = ds.images[it->second];
          if (!ctx.pose_label.empty()) pose_lab = ctx.pose_label[it->second];
        }
      } else if (aug_rng.bernoulli(cfg.clothes_aug_prob) && ds.masks[si].has_value()) {
        auto [recolored, alias] = clothes_augment(
            img, *ds.masks[si], aug_rng,
            [&]() { return ctx.labels.n_base_clothes + clothes_dense; });
        img = std::move(recolored);
        clothes_dense = alias;
      }
      images.push_back(std::move(img));
      id_labels.push_back(id_dense);
      clothes_labels.push_back(clothes_dense);
      gender_labels.push_back(s.gender);
      pose_labels.push_back(pose_lab < 0 ? 0 : pose_lab);
    }

    GraphScope scope;
    Tensor batch = images_to_batch(ctx.student.config, images);
    auto r = forward(ctx.student, batch, with_pose);

    // clothes classifier micro-step, then the extractor step
    auto player1 = clothes_adversarial(r.f_cal, ctx.student.clothes_head.W,
                                       ctx.student.clothes_head.b, clothes_labels,
                                       id_labels, ctx.labels.id_to_clothes_idx);
    backward(player1.classifier_loss.value);
    ctx.clothes_opt.step(ctx.student);

    auto player2 = clothes_adversarial(r.f_cal, ctx.student.clothes_head.W,
                                       ctx.student.clothes_head.b, clothes_labels,
                                       id_labels, ctx.labels.id_to_clothes_idx);

    std::vector<LossValue> losses;
    losses.push_back(label_smoothed_ce(r.id_logits_bot, id_labels, cfg.label_smoothing,
                                       "ce_id_bot"));
    losses.push_back(label_smoothed_ce(r.id_logits_cal, id_labels, cfg.label_smoothing,
                                       "ce_id_cal"));
    losses.push_back(player2.adversarial_loss);
    losses.push_back(id_logit_kl(r.id_logits_bot, r.id_logits_cal, cfg.kl_temperature));
    losses.back().name = "id_kl";
    losses.push_back(triplet_loss(r.f_bot, id_labels, cfg.triplet_margin));
    if (with_pose) {
      losses.push_back(label_smoothed_ce(r.pose_logits, pose_labels, cfg.label_smoothing,
                                         "ce_pose"));
      losses.push_back(label_smoothed_ce(r.gender_logits, gender_labels,
                                         cfg.label_smoothing, "ce_gender"));
      losses.push_back(cosine_disentangle(r.f_bot, r.f_pose));
      losses.back().name = "cos_disentangle";
    }

    Tensor total = Tensor::scalar(0.0);
    std::set<std::string> seen = {"clothes_ce"};
    sums["clothes_ce"] += player1.classifier_loss.value.item();
    for (const auto& l : losses) {
      total = add(total, scale(l.value, l.weight));
      seen.insert(l.name);
      sums[l.name] += l.value.item();
    }
    if (seen != expected_names) {
      throw std::logic_error("trainer: loss ledger mismatch in base/CAP epoch");
    }
    backward(total);
    ctx.main_opt.step(ctx.student);
    ++batches;
  }

  std::map<std::string, double> means;
  for (const auto& [k, v] : sums) means[k] = v / static_cast<double>(batches);
  means["batches"] = static_cast<double>(batches);
  means["lr"] = ctx.main_opt.current_lr();
  return means;
}

// one TAD epoch over the external (or pseudo-HQ target) pool
std::map<std::string, double> run_tad_epoch(TrainContext& ctx, int epoch) {
  const auto& cfg = ctx.cfg;
  const auto& ds = *ctx.tad_source;
  Rng batch_rng(cfg.seed, 50000 + static_cast<std::uint64_t>(epoch));
  Rng degrade_rng(cfg.seed, 60000 + static_cast<std::uint64_t>(epoch));

  std::vector<std::size_t> pool = ctx.tad_pool;
  batch_rng.shuffle(pool);

  const bool distill = cfg.tad_variant == TadVariant::kTad ||
                       cfg.tad_variant == TadVariant::kSsMseTad;
  const bool direct_mse = cfg.tad_variant == TadVariant::kSsMseTad ||
                          cfg.tad_variant == TadVariant::kSsMseNt ||
                          cfg.tad_variant == TadVariant::kTargetSsNt;

  std::set<std::string> expected_names;
  if (distill) expected_names.insert({"tad_distill", "tad_self_sup"});
  if (direct_mse) expected_names.insert("ss_mse");

  std::map<std::string, double> sums;
  std::size_t batches = 0;
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t at = 0; at + 2 <= pool.size(); at += B) {
    const std::size_t end = std::min(pool.size(), at + B);
    if (end - at < 2) break;
    std::vector<Image> hq_images, lq_images;
    for (std::size_t i = at; i < end; ++i) {
      const Image& hq = ds.images[pool[i]];
      hq_images.push_back(hq);
      lq_images.push_back(apply_forced(hq, cfg.tad_policy, degrade_rng).first);
    }

    BranchFeatures teacher_feats;
    if (distill) {
      // the teacher is frozen: its features per pool member never change
      const auto feat_dim = static_cast<std::size_t>(ctx.teacher.config.branch_feature_dim());
      std::vector<std::size_t> missing;
      for (std::size_t i = at; i < end; ++i) {
        if (!ctx.teacher_cache.count(pool[i])) missing.push_back(pool[i]);
      }
      if (!missing.empty()) {
        NoGradScope no_grad;
        std::vector<Image> imgs;
        for (auto m : missing) imgs.push_back(ds.images[m]);
        Tensor tb = images_to_batch(ctx.teacher.config, imgs);
        auto tr = forward(ctx.teacher, tb, false);
        Tensor cal = l2_normalize(tr.f_cal), bot = l2_normalize(tr.f_bot);
        for (std::size_t k = 0; k < missing.size(); ++k) {
          std::vector<double> c(cal.data().begin() + k * feat_dim,
                                cal.data().begin() + (k + 1) * feat_dim);
          std::vector<double> b(bot.data().begin() + k * feat_dim,
                                bot.data().begin() + (k + 1) * feat_dim);
          ctx.teacher_cache.emplace(missing[k], std::make_pair(std::move(c), std::move(b)));
        }
      }
      std::vector<double> cal_rows, bot_rows;
      for (std::size_t i = at; i < end; ++i) {
        const auto& [c, b] = ctx.teacher_cache.at(pool[i]);
        cal_rows.insert(cal_rows.end(), c.begin(), c.end());
        bot_rows.insert(bot_rows.end(), b.begin(), b.end());
      }
      const std::size_t bsz = end - at;
      teacher_feats = {Tensor::from_data({bsz, feat_dim}, std::move(cal_rows)),
                       Tensor::from_data({bsz, feat_dim}, std::move(bot_rows))};
    }

    GraphScope scope;
    Tensor hq_batch = images_to_batch(ctx.student.config, hq_images);
    Tensor lq_batch = images_to_batch(ctx.student.config, lq_images);
    auto hq = forward(ctx.student, hq_batch, false);
    auto lq = forward(ctx.student, lq_batch, false);
    BranchFeatures student_hq{l2_normalize(hq.f_cal), l2_normalize(hq.f_bot)};
    BranchFeatures student_lq{l2_normalize(lq.f_cal), l2_normalize(lq.f_bot)};

    std::vector<LossValue> losses;
    if (distill) {
      losses.push_back(tad_distill(teacher_feats, student_hq, student_lq));
      losses.push_back(tad_self_supervise(
          {hq.clothes_logits, hq.id_logits_cal, hq.id_logits_bot},
          {lq.clothes_logits, lq.id_logits_cal, lq.id_logits_bot},
          cfg.tad_temperature, cfg.tad_detach_hq));
    }
    if (direct_mse) {
      const double inv_b = 1.0 / static_cast<double>(hq_images.size());
      Tensor d_cal = sub(student_hq.cal, student_lq.cal);
      Tensor d_bot = sub(student_hq.bot, student_lq.bot);
      Tensor mse = scale(add(sum(mul(d_cal, d_cal)), sum(mul(d_bot, d_bot))), inv_b);
      losses.push_back({mse, "ss_mse", 1.0});
    }

    Tensor total = Tensor::scalar(0.0);
    std::set<std::string> seen;
    for (const auto& l : losses) {
      total = add(total, scale(l.value, l.weight));
      seen.insert(l.name);
      sums[l.name] += l.value.item();
    }
    if (seen != expected_names) {
      throw std::logic_error("trainer: loss ledger mismatch in TAD epoch");
    }
    backward(total);
    ctx.main_opt.step(ctx.student);
    ++batches;
  }

  std::map<std::string, double> means;
  for (const auto& [k, v] : sums) means[k] = v / static_cast<double>(batches);
  means["batches"] = static_cast<double>(batches);
  means["lr"] = ctx.main_opt.current_lr();
  return means;
}

MetricsRow evaluate(TrainContext& ctx, int epoch) {
  const auto& ds = *ctx.target;
  MetricsRow row;
  row.epoch = epoch;
  row.phase = "eval";

  std::vector<Sample> queries, gallery;
  for (auto i : ctx.query_idx) queries.push_back(ds.manifest.samples[i]);
  for (auto i : ctx.gallery_idx) gallery.push_back(ds.manifest.samples[i]);
  Tensor qe = embed_indices(ctx.student, ds, ctx.query_idx);
  Tensor ge = embed_indices(ctx.student, ds, ctx.gallery_idx);

  for (Protocol p : {Protocol::kCC, Protocol::kSC, Protocol::kGeneral}) {
    const auto r = cmc_map(qe, queries, ge, gallery, p);
    row.values[protocol_name(p) + "_top1"] = r.top1;
    row.values[protocol_name(p) + "_map"] = r.mean_ap;
    row.values[protocol_name(p) + "_dropped"] = r.dropped_queries;
  }

  // query tier is LQ and gallery HQ, so the union carries both tiers
  std::vector<Sample> both = queries;
  both.insert(both.end(), gallery.begin(), gallery.end());
  std::vector<double> all_emb(qe.data().begin(), qe.data().end());
  all_emb.insert(all_emb.end(), ge.data().begin(), ge.data().end());
  const auto comp = lq_compactness(
      Tensor::from_data({both.size(), qe.cols()}, std::move(all_emb)), both);
  row.values["ratio_lq"] = comp.ratio_lq;
  row.values["ratio_hq"] = comp.ratio_hq;

  row.values["gender_acc"] = gender_accuracy(ctx.student, ds, ctx.gallery_idx);
  {
    // F1 of the female class (0) over the held-out gallery
    NoGradScope no_grad;
    std::vector<int> pred, truth;
    for (std::size_t at = 0; at < ctx.gallery_idx.size(); at += 64) {
      std::vector<Image> chunk;
      for (std::size_t i = at; i < std::min(ctx.gallery_idx.size(), at + 64); ++i) {
        chunk.push_back(ds.images[ctx.gallery_idx[i]]);
        truth.push_back(ds.manifest.samples[ctx.gallery_idx[i]].gender);
      }
      Tensor batch = images_to_batch(ctx.student.config, chunk);
      auto r = forward(ctx.student, batch, false);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        pred.push_back(r.gender_logits.at(i, 1) > r.gender_logits.at(i, 0) ? 1 : 0);
      }
    }
    row.values["gender_f1_female"] = gender_f1(pred, truth, 0);
  }
  row.values["pose_cos"] = pose_cosine_probe(ctx.student, ds, ctx.probe_idx);
  return row;
}

// ---- state persistence -----------------------------------------------------------

constexpr char kStateMagic[4] = {'R', 'L', 'Q', 'S'};

void save_moments(std::ofstream& f, const AdamOptimizer& opt, ModelParams& params) {
  auto put = [&f](const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  };
  put(&opt.step_count, sizeof(opt.step_count));
  params.for_each_param([&](const std::string&, const std::string& name, Tensor& t) {
    for (const auto* buf : {&opt.m, &opt.v}) {
      const auto it = buf->find(name);
      const std::uint64_t n = it == buf->end() ? 0 : it->second.size();
      put(&n, sizeof(n));
      if (n > 0) put(it->second.data(), n * sizeof(double));
    }
    (void)t;
  });
}

void load_moments(std::ifstream& f, AdamOptimizer& opt, ModelParams& params) {
  auto get = [&f](void* p, std::size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!f) throw std::runtime_error("trainer: truncated state file");
  };
  get(&opt.step_count, sizeof(opt.step_count));
  params.for_each_param([&](const std::string&, const std::string& name, Tensor& t) {
    for (auto* buf : {&opt.m, &opt.v}) {
      std::uint64_t n = 0;
      get(&n, sizeof(n));
      if (n > 0) {
        auto& dst = (*buf)[name];
        dst.resize(n);
        get(dst.data(), n * sizeof(double));
      }
    }
    (void)t;
  });
}

}  // namespace

// ---- teacher pretraining -----------------------------------------------------------

ModelParams pretrain_teacher(const LoadedDataset& external, const ExperimentConfig& config) {
  ExperimentConfig teacher_cfg = config;
  teacher_cfg.mode = Mode::kBaseline;
  teacher_cfg.epochs = config.teacher_epochs;

  TrainContext ctx;
  ctx.cfg = teacher_cfg;
  ctx.target = &external;
  ctx.labels = LabelSpace::build(external.manifest);

  for (std::size_t i = 0; i < external.manifest.samples.size(); ++i) {
    const auto& s = external.manifest.samples[i];
    if (s.split == Split::kTrain && s.tier == Tier::kHQ) {
      ctx.train_idx.push_back(i);
      ctx.train_id_dense.push_back(ctx.labels.id_index.at(s.id));
    }
  }
  if (ctx.train_idx.empty()) {
    throw std::invalid_argument("pretrain_teacher: external manifest has no train split");
  }

  ModelConfig mc;
  mc.num_ids = static_cast<int>(ctx.labels.id_index.size());
  mc.num_clothes = 2 * ctx.labels.n_base_clothes;
  mc.norm_mean = channel_mean(external.images, ctx.train_idx);
  mc.norm_std = channel_std(external.images, ctx.train_idx, mc.norm_mean);
  ctx.student = ModelParams::init(mc, teacher_cfg.seed ^ 0x7ea0ULL);

  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, ctx.train_idx.size() / static_cast<std::size_t>(teacher_cfg.batch_size));
  ctx.main_opt.base_lr = teacher_cfg.base_lr;
  ctx.main_opt.warmup_steps = static_cast<int>(steps_per_epoch) * teacher_cfg.warmup_epochs;
  ctx.clothes_opt.base_lr = teacher_cfg.base_lr;
  ctx.clothes_opt.warmup_steps = ctx.main_opt.warmup_steps;

  for (int e = 0; e < teacher_cfg.epochs; ++e) {
    run_base_epoch(ctx, e, /*with_pose=*/false, /*with_inject=*/false);
  }
  return ctx.student.clone_frozen();
}

// ---- the run loop -------------------------------------------------------------------

RunResult run_training(const ExperimentConfig& config, const LoadedDataset& target,
                       const LoadedDataset* external, const ModelParams* teacher,
                       const PoseClusterModel* pose_model, const std::string& out_dir) {
  config.validate();
  if (cap_heads_active(config) && pose_model == nullptr) {
    throw std::invalid_argument("run_training: CAP/RLQ modes require a pose cluster model");
  }
  if (wants_external(config) && external == nullptr) {
    throw std::invalid_argument("run_training: this TAD variant requires an external dataset");
  }
  if (wants_teacher(config) && teacher == nullptr) {
    throw std::invalid_argument("run_training: this TAD variant requires a frozen teacher");
  }

  fs::create_directories(fs::path(out_dir) / "checkpoints");

  TrainContext ctx;
  ctx.cfg = config;
  ctx.target = &target;
  ctx.external = external;
  ctx.labels = LabelSpace::build(target.manifest);

  for (std::size_t i = 0; i < target.manifest.samples.size(); ++i) {
    const auto& s = target.manifest.samples[i];
    if (s.split == Split::kTrain && s.tier == Tier::kHQ) {
      ctx.train_idx.push_back(i);
      ctx.train_id_dense.push_back(ctx.labels.id_index.at(s.id));
    }
    if (s.split == Split::kQuery && s.tier == Tier::kLQ) ctx.query_idx.push_back(i);
    if (s.split == Split::kGallery && s.tier == Tier::kHQ) ctx.gallery_idx.push_back(i);
  }
  if (ctx.train_idx.empty()) throw std::invalid_argument("run_training: empty train split");
  if (ctx.query_idx.empty() || ctx.gallery_idx.empty()) {
    throw std::invalid_argument("run_training: empty query or gallery split");
  }

  // the LQ-twin path map covers the lq_aug_only injection
  for (std::size_t i = 0; i < target.manifest.samples.size(); ++i) {
    const auto& s = target.manifest.samples[i];
    if (s.tier != Tier::kLQ) continue;
    std::string base = s.path;
    const auto pos = base.rfind("_lq.png");
    if (pos != std::string::npos) {
      base.replace(pos, 7, "_hq.png");
      ctx.twin_of[base] = i;
    }
  }

  // pose cluster labels for every sample with a usable skeleton
  if (cap_heads_active(config)) {
    ctx.pose_label.assign(target.manifest.samples.size(), -1);
    for (std::size_t i = 0; i < target.manifest.samples.size(); ++i) {
      if (!target.skeletons[i].has_value()) continue;
      ctx.pose_label[i] = assign_cluster(*pose_model, pose_vector(*target.skeletons[i]));
    }
  }

  // probe subset for the disentanglement trend
  for (std::size_t i = 0; i < std::min<std::size_t>(200, ctx.train_idx.size()); ++i) {
    ctx.probe_idx.push_back(ctx.train_idx[i]);
  }

  // TAD pool: fixed subsample of the external train split, or the sharp half
  // of the target set when no external data is allowed
  if (uses_tad_epochs(config)) {
    if (config.tad_variant == TadVariant::kTargetSsNt) {
      ctx.tad_source = &target;
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t i = 0; i < target.manifest.samples.size(); ++i) {
        if (target.manifest.samples[i].split != Split::kTrain) continue;
        scored.push_back({laplacian_variance(target.images[i]), i});
      }
      std::sort(scored.begin(), scored.end());
      // above-median Laplacian variance passes as pseudo-HQ
      for (std::size_t i = scored.size() / 2; i < scored.size(); ++i) {
        ctx.tad_pool.push_back(scored[i].second);
      }
    } else {
      ctx.tad_source = external;
      std::vector<std::size_t> ext_train;
      for (std::size_t i = 0; i < external->manifest.samples.size(); ++i) {
        const auto& s = external->manifest.samples[i];
        if (s.split == Split::kTrain && s.tier == Tier::kHQ) ext_train.push_back(i);
      }
      Rng subsample_rng(config.seed, 31);
      subsample_rng.shuffle(ext_train);
      const auto keep = static_cast<std::size_t>(
          std::lround(config.external_fraction * static_cast<double>(ext_train.size())));
      ext_train.resize(std::max<std::size_t>(2, keep));
      std::sort(ext_train.begin(), ext_train.end());
      ctx.tad_pool = std::move(ext_train);
    }
  }

  // model and optimizers
  ModelConfig mc;
  mc.num_ids = static_cast<int>(ctx.labels.id_index.size());
  mc.num_clothes = 2 * ctx.labels.n_base_clothes;
  mc.num_pose_classes = pose_model ? pose_model->k + 1 : 16;
  mc.norm_mean = channel_mean(target.images, ctx.train_idx);
  mc.norm_std = channel_std(target.images, ctx.train_idx, mc.norm_mean);
  ctx.student = ModelParams::init(mc, config.seed);

  if (teacher) {
    ctx.teacher = teacher->clone_frozen();
    ctx.has_teacher = true;
  }

  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, ctx.train_idx.size() / static_cast<std::size_t>(config.batch_size));
  ctx.main_opt.base_lr = config.base_lr;
  ctx.main_opt.warmup_steps = static_cast<int>(steps_per_epoch) * config.warmup_epochs;
  ctx.clothes_opt.base_lr = config.base_lr;
  ctx.clothes_opt.warmup_steps = ctx.main_opt.warmup_steps;

  RunResult result;
  result.out_dir = out_dir;
  const auto metrics_path = fs::path(out_dir) / "metrics.jsonl";
  const auto state_path = fs::path(out_dir) / "state.bin";
  const auto state_student = fs::path(out_dir) / "checkpoints" / "state_student.bin";

  int start_epoch = 0;
  const std::uint64_t teacher_sum = ctx.has_teacher ? ctx.teacher.checksum() : 0;

  if (fs::exists(state_path)) {
    std::ifstream f(state_path, std::ios::binary);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kStateMagic, 4) != 0) {
      throw std::runtime_error("run_training: corrupt state file");
    }
    std::int32_t epoch = 0, best_epoch = 0;
    double best = 0;
    std::uint64_t saved_teacher = 0;
    f.read(reinterpret_cast<char*>(&epoch), sizeof(epoch));
    f.read(reinterpret_cast<char*>(&best), sizeof(best));
    f.read(reinterpret_cast<char*>(&best_epoch), sizeof(best_epoch));
    f.read(reinterpret_cast<char*>(&saved_teacher), sizeof(saved_teacher));
    if (saved_teacher != teacher_sum) {
      throw std::runtime_error("run_training: resume with a different teacher");
    }
    ctx.student = ModelParams::load(state_student.string());
    load_moments(f, ctx.main_opt, ctx.student);
    load_moments(f, ctx.clothes_opt, ctx.student);
    start_epoch = epoch + 1;
    result.best_cc_top1 = best;
    result.best_epoch = best_epoch;
  }

  std::ofstream metrics(metrics_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("run_training: cannot write metrics log");
  auto emit = [&](const MetricsRow& row) {
    metrics << row.to_json() << "\n";
    metrics.flush();
    result.metrics.push_back(row);
  };

  if (start_epoch == 0) {
    MetricsRow init = evaluate(ctx, -1);
    init.phase = "init";
    emit(init);
  }

  for (int e = start_epoch; e < config.epochs; ++e) {
    std::string phase;
    std::map<std::string, double> means;
    const bool tad_now = uses_tad_epochs(config) && e % 2 == 1;
    if (tad_now) {
      phase = "tad";
      means = run_tad_epoch(ctx, e);
      if (config.tad_interleave_target) {
        // optional alternative schedule: ReID batches run inside TAD epochs
        const bool with_pose = cap_heads_active(config);
        for (const auto& [k, v] : run_base_epoch(ctx, e, with_pose, inject_lq(config))) {
          means["target_" + k] = v;
        }
      }
    } else {
      const bool with_pose = cap_heads_active(config);
      phase = with_pose ? "cap" : "base";
      means = run_base_epoch(ctx, e, with_pose, inject_lq(config));
    }

    if (ctx.has_teacher && ctx.teacher.checksum() != teacher_sum) {
      throw std::logic_error("run_training: teacher parameters changed");
    }

    MetricsRow row;
    row.epoch = e;
    row.phase = phase;
    row.values = means;
    emit(row);

    if (e % config.eval_every == config.eval_every - 1 || e == config.epochs - 1) {
      MetricsRow ev = evaluate(ctx, e);
      emit(ev);
      const double cc = ev.values.at("cc_top1");
      if (cc > result.best_cc_top1) {
        result.best_cc_top1 = cc;
        result.best_epoch = e;
        ctx.student.save((fs::path(out_dir) / "checkpoints" / "best.bin").string());
      }
    }

    // resumable state; the student blob is a plain checkpoint
    ctx.student.save(state_student.string());
    std::ofstream f(state_path, std::ios::binary | std::ios::trunc);
    f.write(kStateMagic, 4);
    const std::int32_t epoch32 = e;
    const std::int32_t best_epoch32 = result.best_epoch;
    f.write(reinterpret_cast<const char*>(&epoch32), sizeof(epoch32));
    f.write(reinterpret_cast<const char*>(&result.best_cc_top1), sizeof(double));
    f.write(reinterpret_cast<const char*>(&best_epoch32), sizeof(best_epoch32));
    f.write(reinterpret_cast<const char*>(&teacher_sum), sizeof(teacher_sum));
    save_moments(f, ctx.main_opt, ctx.student);
    save_moments(f, ctx.clothes_opt, ctx.student);
  }

  ctx.student.save((fs::path(out_dir) / "checkpoints" / "final.bin").string());
  if (result.best_epoch < 0) {
    result.best_cc_top1 = result.metrics.back().values.count("cc_top1")
                              ? result.metrics.back().values.at("cc_top1")
                              : 0.0;
  }
  return result;
}

}  // namespace rlq
