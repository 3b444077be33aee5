#ifndef RLQ_TRAINER_HPP_
#define RLQ_TRAINER_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rlq/degrade.hpp"
#include "rlq/manifest.hpp"
#include "rlq/model.hpp"
#include "rlq/pose.hpp"
#include "rlq/rng.hpp"
#include "rlq/synthdata.hpp"

namespace rlq {

enum class Mode { kBaseline, kCapOnly, kTadOnly, kRlq };
enum class TadVariant { kTad, kSsMseTad, kSsMseNt, kLqAugOnly, kTargetSsNt };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);
std::string variant_name(TadVariant v);
TadVariant variant_from_name(const std::string& name);

/// Full experiment description. JSON round-trips with unknown-key rejection;
/// every run writes its resolved copy next to its outputs.
struct ExperimentConfig {
  Mode mode = Mode::kBaseline;
  TadVariant tad_variant = TadVariant::kTad;
  int epochs = 40;
  int teacher_epochs = 12;
  int batch_size = 40;
  int positives_per_id = 4;
  double base_lr = 3.5e-4;
  int warmup_epochs = 10;
  double external_fraction = 1.0;  // fixed subsample of the external set
  int eval_every = 5;
  std::uint64_t seed = 1;
  double clothes_aug_prob = 0.5;
  double triplet_margin = 0.3;
  double label_smoothing = 0.1;
  double kl_temperature = 1.0;
  double tad_temperature = 1.0;
  bool tad_detach_hq = true;
  // off by default: TAD epochs run purely on the external batch
  bool tad_interleave_target = false;
  ArtifactPolicy tad_policy;  // twin generation during TAD epochs

  void validate() const;
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& json_text);
};

/// Manifest plus decoded images and skeletons, index-aligned with
/// manifest.samples.
struct LoadedDataset {
  std::string root;
  Manifest manifest;
  std::vector<Image> images;
  std::vector<std::optional<SegMask>> masks;  // HQ originals carry masks
  std::vector<std::optional<Skeleton>> skeletons;
};

LoadedDataset load_dataset(const std::string& root);

/// Adam with linear warmup. Applies accumulated gradients of every
/// non-frozen parameter, then clears them. Moments are keyed by parameter
/// name and survive serialization for resume.
struct AdamOptimizer {
  double base_lr = 3.5e-4;
  int warmup_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int step_count = 0;
  std::map<std::string, std::vector<double>> m, v;

  double current_lr() const;
  void step(ModelParams& params);
};

/// P distinct identities x K samples per batch. Per-identity queues are
/// consumed round-robin and reshuffled when exhausted; an epoch is the batch
/// sequence that visits every sample at least once.
class PkSampler {
 public:
  PkSampler(const std::vector<int>& sample_ids, int batch_size, int positives_per_id,
            std::uint64_t seed);

  /// Batches (as indices into the ctor's sample vector) forming one epoch.
  std::vector<std::vector<std::size_t>> epoch_batches();

  std::array<std::uint64_t, 4> rng_state() const { return rng_.save_state(); }
  void restore_rng(const std::array<std::uint64_t, 4>& s) { rng_.restore_state(s); }

 private:
  void refill(int id);

  std::map<int, std::vector<std::size_t>> by_id_;
  std::map<int, std::vector<std::size_t>> queues_;
  std::vector<int> id_ring_;
  std::size_t ring_pos_ = 0;
  int num_ids_per_batch_;
  int positives_;
  std::size_t total_samples_;
  Rng rng_;
};

/// One metrics row of the JSONL log.
struct MetricsRow {
  int epoch = 0;
  std::string phase;  // "init", "cap", "base", "tad", "eval"
  std::map<std::string, double> values;
  std::string to_json() const;
};

struct RunResult {
  std::string out_dir;
  double best_cc_top1 = -1.0;
  int best_epoch = -1;
  std::vector<MetricsRow> metrics;
};

/// Baseline-mode training on the external HQ set; returns the frozen
/// teacher. Identity labels are consumed here and nowhere else.
ModelParams pretrain_teacher(const LoadedDataset& external,
                             const ExperimentConfig& config);

/// The full training loop: alternates CAP/base epochs with TAD epochs per
/// mode, evaluates on the query/gallery splits, writes metrics.jsonl and
/// checkpoints under out_dir, and resumes from out_dir/state.bin when
/// present. `pose_model` is required in cap_only/rlq modes; `external` and
/// `teacher` are required by TAD variants that use them.
RunResult run_training(const ExperimentConfig& config, const LoadedDataset& target,
                       const LoadedDataset* external, const ModelParams* teacher,
                       const PoseClusterModel* pose_model, const std::string& out_dir);

}  // namespace rlq

#endif  // RLQ_TRAINER_HPP_
