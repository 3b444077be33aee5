// rlq: single entry point for data generation, degradation, pose
// clustering, training, evaluation, ablation, and reporting.
//
// Exit codes: 0 success, 1 validation/usage error (message names the
// offending key), 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "rlq/degrade.hpp"
#include "rlq/eval.hpp"
#include "rlq/manifest.hpp"
#include "rlq/model.hpp"
#include "rlq/pose.hpp"
#include "rlq/synthdata.hpp"
#include "rlq/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 std::optional<std::uint64_t> seed) {
  rlq::DatasetConfig cfg;
  if (!config_path.empty()) cfg = rlq::DatasetConfig::from_json(slurp(config_path));
  if (seed.has_value()) cfg.seed = *seed;
  fs::create_directories(out);
  spit((fs::path(out) / "config.resolved.json").string(), cfg.to_json() + "\n");
  const auto ds = rlq::generate_dataset(cfg, out);
  std::cout << "generated " << ds.manifest.samples.size() << " records under " << out << "\n";
  return 0;
}

int cmd_degrade(const std::string& in, const std::string& out,
                const std::string& policy_path, std::uint64_t seed) {
  rlq::ArtifactPolicy policy;
  if (!policy_path.empty()) policy = rlq::ArtifactPolicy::from_json(slurp(policy_path));
  policy.rng_seed = seed;
  policy.validate();
  fs::create_directories(out);
  spit((fs::path(out) / "config.resolved.json").string(), policy.to_json() + "\n");

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(in)) {
    if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  std::ofstream sidecar(fs::path(out) / "descriptors.jsonl", std::ios::trunc);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const rlq::Image img = rlq::read_png((fs::path(in) / names[i]).string());
    rlq::Rng rng(seed, 80000 + i);  // per-image substream
    const auto [degraded, desc] = rlq::apply_policy(img, policy, rng);
    rlq::write_png((fs::path(out) / names[i]).string(), degraded);
    json row;
    row["source"] = names[i];
    row["artifact"] = json::parse(desc.to_json());
    sidecar << row.dump() << "\n";
  }
  std::cout << "degraded " << names.size() << " images into " << out << "\n";
  return 0;
}

int cmd_pose_cluster(const std::string& skeletons, int k, std::uint64_t seed,
                     const std::string& out, double min_confidence,
                     const std::string& elbow_range, const std::string& elbow_out) {
  const auto records = rlq::load_skeletons_jsonl(skeletons);
  std::vector<rlq::PoseVector> vectors;
  std::size_t noise = 0;
  for (const auto& rec : records) {
    const auto v = rlq::pose_vector(rec.skeleton, min_confidence);
    if (v.has_value()) {
      vectors.push_back(*v);
    } else {
      ++noise;
    }
  }
  std::cout << vectors.size() << " pose vectors (" << noise << " noise) from "
            << records.size() << " skeletons\n";

  if (!elbow_range.empty()) {
    const auto colon = elbow_range.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("elbow: expected LO:HI, got '" + elbow_range + "'");
    }
    const int lo = std::stoi(elbow_range.substr(0, colon));
    const int hi = std::stoi(elbow_range.substr(colon + 1));
    const auto points = rlq::elbow_scan(vectors, lo, hi, seed);
    const std::string path = elbow_out.empty() ? "elbow.csv" : elbow_out;
    spit(path, rlq::elbow_csv(points));
    std::cout << "elbow scan written to " << path << "\n";
  }

  const auto model = rlq::kmeans_fit(vectors, k, seed);
  model.save(out);
  std::cout << "cluster model (k=" << k << ") written to " << out << "\n";
  return 0;
}

rlq::ModelParams obtain_teacher(const rlq::ExperimentConfig& cfg,
                                const std::string& teacher_path,
                                const rlq::LoadedDataset* external,
                                const std::string& out) {
  if (!teacher_path.empty()) return rlq::ModelParams::load(teacher_path);
  if (external == nullptr) {
    throw std::invalid_argument("teacher: need --teacher or --external to pretrain one");
  }
  std::cout << "pretraining teacher on the external dataset (" << cfg.teacher_epochs
            << " epochs)\n";
  auto teacher = rlq::pretrain_teacher(*external, cfg);
  fs::create_directories(fs::path(out) / "checkpoints");
  teacher.save((fs::path(out) / "checkpoints" / "teacher.bin").string());
  return teacher;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& external_dir, const std::string& out,
              const std::string& pose_model_path, const std::string& teacher_path,
              std::optional<std::uint64_t> seed, std::optional<int> epochs,
              const std::string& mode_override, const std::string& variant_override,
              std::optional<double> fraction) {
  rlq::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = rlq::ExperimentConfig::from_json(slurp(config_path));
  if (seed.has_value()) cfg.seed = *seed;
  if (epochs.has_value()) cfg.epochs = *epochs;
  if (!mode_override.empty()) cfg.mode = rlq::mode_from_name(mode_override);
  if (!variant_override.empty()) cfg.tad_variant = rlq::variant_from_name(variant_override);
  if (fraction.has_value()) cfg.external_fraction = *fraction;
  cfg.validate();

  fs::create_directories(out);
  spit((fs::path(out) / "config.resolved.json").string(), cfg.to_json() + "\n");

  const auto target = rlq::load_dataset(data);
  std::optional<rlq::LoadedDataset> external;
  if (!external_dir.empty()) external = rlq::load_dataset(external_dir);

  std::optional<rlq::PoseClusterModel> pose_model;
  if (cfg.mode == rlq::Mode::kCapOnly || cfg.mode == rlq::Mode::kRlq) {
    std::string path = pose_model_path;
    if (path.empty()) path = (fs::path(data) / "pose_clusters.json").string();
    if (!fs::exists(path)) {
      throw std::invalid_argument(
          "pose-model: rlq/cap modes need a cluster model; run `rlq pose-cluster` "
          "and pass --pose-model (looked at " + path + ")");
    }
    pose_model = rlq::PoseClusterModel::load(path);
  }

  std::optional<rlq::ModelParams> teacher;
  const bool needs_teacher =
      (cfg.mode == rlq::Mode::kTadOnly || cfg.mode == rlq::Mode::kRlq) &&
      (cfg.tad_variant == rlq::TadVariant::kTad ||
       cfg.tad_variant == rlq::TadVariant::kSsMseTad);
  if (needs_teacher) {
    teacher = obtain_teacher(cfg, teacher_path, external ? &*external : nullptr, out);
  }

  const auto result = rlq::run_training(cfg, target, external ? &*external : nullptr,
                                        teacher ? &*teacher : nullptr,
                                        pose_model ? &*pose_model : nullptr, out);
  std::cout << "run complete; best CC top-1 " << result.best_cc_top1 << " at epoch "
            << result.best_epoch << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data,
             const std::string& protocol_name_str, const std::string& out) {
  auto params = rlq::ModelParams::load(checkpoint);
  const auto ds = rlq::load_dataset(data);

  std::vector<rlq::Sample> queries, gallery, both;
  std::vector<rlq::Image> q_imgs, g_imgs;
  for (std::size_t i = 0; i < ds.manifest.samples.size(); ++i) {
    const auto& s = ds.manifest.samples[i];
    if (s.split == rlq::Split::kQuery && s.tier == rlq::Tier::kLQ) {
      queries.push_back(s);
      q_imgs.push_back(ds.images[i]);
    }
    if (s.split == rlq::Split::kGallery && s.tier == rlq::Tier::kHQ) {
      gallery.push_back(s);
      g_imgs.push_back(ds.images[i]);
    }
  }
  if (queries.empty() || gallery.empty()) {
    throw std::runtime_error("eval: dataset lacks query/gallery records");
  }

  const rlq::Tensor qe = rlq::inference_embeddings(params, q_imgs);
  const rlq::Tensor ge = rlq::inference_embeddings(params, g_imgs);

  std::vector<rlq::Protocol> protocols;
  if (protocol_name_str == "all") {
    protocols = {rlq::Protocol::kCC, rlq::Protocol::kSC, rlq::Protocol::kGeneral};
  } else {
    protocols = {rlq::protocol_from_name(protocol_name_str)};
  }

  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  json j;
  for (const auto p : protocols) {
    const auto r = rlq::cmc_map(qe, queries, ge, gallery, p);
    json pj;
    pj["top1"] = r.top1;
    pj["map"] = r.mean_ap;
    pj["evaluated_queries"] = r.evaluated_queries;
    pj["dropped_queries"] = r.dropped_queries;
    j[rlq::protocol_name(p)] = pj;
    const auto csv_path = out_path.parent_path() /
                          ("cmc_" + rlq::protocol_name(p) + ".csv");
    spit(csv_path.string(), rlq::cmc_csv(r));
  }

  // compactness and a 2-D projection over the combined query/gallery pool
  both = queries;
  both.insert(both.end(), gallery.begin(), gallery.end());
  std::vector<double> all(qe.data().begin(), qe.data().end());
  all.insert(all.end(), ge.data().begin(), ge.data().end());
  const rlq::Tensor emb = rlq::Tensor::from_data({both.size(), qe.cols()}, std::move(all));
  const auto comp = rlq::lq_compactness(emb, both);
  j["compactness"] = {{"ratio_hq", comp.ratio_hq},
                      {"ratio_lq", comp.ratio_lq},
                      {"hq_collapsed", comp.hq_collapsed},
                      {"lq_collapsed", comp.lq_collapsed}};
  const auto pca = rlq::pca_project(emb, 2);
  j["pca_variance_captured"] = pca.variance_captured;
  spit((out_path.parent_path() / "pca.csv").string(), rlq::pca_csv(pca, both));

  spit(out, j.dump(2) + "\n");
  std::cout << "metrics written to " << out << "\n";
  return 0;
}

struct AblateRow {
  std::string label;
  rlq::Mode mode;
  rlq::TadVariant variant;
  bool external_dataset;
};

int cmd_ablate(const std::string& config_path, const std::string& data,
               const std::string& external_dir, const std::string& out,
               const std::string& pose_model_path) {
  rlq::ExperimentConfig base;
  if (!config_path.empty()) base = rlq::ExperimentConfig::from_json(slurp(config_path));
  (void)pose_model_path;

  const auto target = rlq::load_dataset(data);
  const auto external = rlq::load_dataset(external_dir);

  // the TAD-variant table: baseline plus the five variants
  const std::vector<AblateRow> rows = {
      {"baseline", rlq::Mode::kBaseline, rlq::TadVariant::kTad, false},
      {"lq_aug_only", rlq::Mode::kTadOnly, rlq::TadVariant::kLqAugOnly, false},
      {"ss_mse_tad", rlq::Mode::kTadOnly, rlq::TadVariant::kSsMseTad, true},
      {"ss_mse_nt", rlq::Mode::kTadOnly, rlq::TadVariant::kSsMseNt, true},
      {"target_ss_nt", rlq::Mode::kTadOnly, rlq::TadVariant::kTargetSsNt, false},
      {"tad", rlq::Mode::kTadOnly, rlq::TadVariant::kTad, true},
  };

  fs::create_directories(out);
  std::optional<rlq::ModelParams> teacher;

  std::ostringstream csv;
  csv << "variant,external_dataset,cc_top1,cc_map,general_top1,general_map\n";
  csv.precision(10);
  for (const auto& row : rows) {
    rlq::ExperimentConfig cfg = base;
    cfg.mode = row.mode;
    cfg.tad_variant = row.variant;
    cfg.validate();

    const bool needs_teacher = row.variant == rlq::TadVariant::kTad ||
                               row.variant == rlq::TadVariant::kSsMseTad;
    if (needs_teacher && row.mode != rlq::Mode::kBaseline && !teacher.has_value()) {
      std::cout << "pretraining the shared teacher\n";
      teacher = rlq::pretrain_teacher(external, cfg);
      fs::create_directories(fs::path(out) / "checkpoints");
      teacher->save((fs::path(out) / "checkpoints" / "teacher.bin").string());
    }

    const auto run_dir = fs::path(out) / row.label;
    fs::create_directories(run_dir);
    spit((run_dir / "config.resolved.json").string(), cfg.to_json() + "\n");
    std::cout << "running variant " << row.label << "\n";
    const auto result = rlq::run_training(
        cfg, target, row.external_dataset ? &external : nullptr,
        (needs_teacher && row.mode != rlq::Mode::kBaseline) ? &*teacher : nullptr,
        nullptr, run_dir.string());

    // best eval row by CC top-1
    double cc_top1 = 0, cc_map = 0, g_top1 = 0, g_map = 0;
    for (const auto& r : result.metrics) {
      if (r.phase != "eval") continue;
      if (r.values.at("cc_top1") >= cc_top1) {
        cc_top1 = r.values.at("cc_top1");
        cc_map = r.values.at("cc_map");
        g_top1 = r.values.at("general_top1");
        g_map = r.values.at("general_map");
      }
    }
    csv << row.label << "," << (row.external_dataset ? 1 : 0) << "," << cc_top1 << ","
        << cc_map << "," << g_top1 << "," << g_map << "\n";
  }
  spit((fs::path(out) / "table7.csv").string(), csv.str());
  std::cout << "variant table written to " << (fs::path(out) / "table7.csv").string() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out) {
  if (run_dirs.empty()) throw std::invalid_argument("report: no run directories given");
  fs::create_directories(out);

  struct RunSummary {
    std::string dir, mode, variant;
    std::uint64_t seed = 0;
    std::map<std::string, double> best;  // metric -> best over eval rows
    double init_ratio_lq = 0, final_ratio_lq = 0;
    double final_gender_f1 = 0;
  };

  std::vector<RunSummary> runs;
  for (const auto& dir : run_dirs) {
    RunSummary rs;
    rs.dir = dir;
    const auto cfg = json::parse(slurp((fs::path(dir) / "config.resolved.json").string()));
    rs.mode = cfg.at("mode").get<std::string>();
    rs.variant = cfg.at("tad_variant").get<std::string>();
    rs.seed = cfg.value("seed", 0);

    std::ifstream f(fs::path(dir) / "metrics.jsonl");
    if (!f) throw std::runtime_error("report: missing metrics log in " + dir);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto row = json::parse(line);
      const std::string phase = row.at("phase");
      if (phase == "init") {
        rs.init_ratio_lq = row.value("ratio_lq", 0.0);
      } else if (phase == "eval") {
        for (const auto& key : {"cc_top1", "cc_map", "sc_top1", "sc_map",
                                "general_top1", "general_map"}) {
          if (row.contains(key)) {
            rs.best[key] = std::max(rs.best[key], row.at(key).get<double>());
          }
        }
        rs.final_ratio_lq = row.value("ratio_lq", 0.0);
        rs.final_gender_f1 = row.value("gender_f1_female", 0.0);
      }
    }
    runs.push_back(std::move(rs));
  }

  // group by configuration for mean +- half-range aggregation
  std::map<std::string, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[r.mode + "/" + r.variant].push_back(&r);

  std::ostringstream csv, md;
  csv.precision(10);
  md.precision(4);
  csv << "config,runs,metric,mean,half_range\n";
  md << "# Run report\n\n| config | runs | CC top-1 | CC mAP | General top-1 | "
        "General mAP |\n|---|---|---|---|---|---|\n";
  for (const auto& [name, members] : groups) {
    auto agg = [&](const std::string& key) {
      double lo = 1e300, hi = -1e300, sum = 0;
      for (const auto* m : members) {
        const double v = m->best.count(key) ? m->best.at(key) : 0.0;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
      }
      return std::pair<double, double>{sum / static_cast<double>(members.size()),
                                       (hi - lo) / 2.0};
    };
    md << "| " << name << " | " << members.size();
    for (const auto& key : {"cc_top1", "cc_map", "sc_top1", "sc_map", "general_top1",
                            "general_map"}) {
      const auto [mean, half] = agg(key);
      csv << name << "," << members.size() << "," << key << "," << mean << "," << half << "\n";
      if (std::string(key) == "sc_top1" || std::string(key) == "sc_map") continue;
      md << " | " << mean;
      if (members.size() > 1) md << " ± " << half;
    }
    md << " |\n";
  }

  md << "\n## LQ-cluster compactness (ratio_lq, init -> final)\n\n";
  for (const auto& r : runs) {
    md << "- " << r.mode << "/" << r.variant << " seed " << r.seed << ": "
       << r.init_ratio_lq << " -> " << r.final_ratio_lq << "\n";
  }
  md << "\n## Gender F1 (female class, final eval)\n\n";
  for (const auto& r : runs) {
    md << "- " << r.mode << "/" << r.variant << " seed " << r.seed << ": "
       << r.final_gender_f1 << "\n";
  }

  // include any elbow scans living next to the runs
  for (const auto& r : runs) {
    const auto elbow = fs::path(r.dir) / "elbow.csv";
    if (fs::exists(elbow)) {
      md << "\n## Pose cluster elbow (" << r.dir << ")\n\n```\n" << slurp(elbow.string())
         << "```\n";
    }
  }

  spit((fs::path(out) / "summary.csv").string(), csv.str());
  spit((fs::path(out) / "report.md").string(), md.str());
  std::cout << "report written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RLQ toolkit: synthetic low-quality person re-identification"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render the procedural toy dataset");
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "dataset config JSON");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "override the config seed");

  // degrade
  auto* deg = app.add_subcommand("degrade", "apply synthetic artifacts to a directory");
  std::string deg_in, deg_out, deg_policy;
  std::uint64_t deg_seed = 0;
  deg->add_option("--in", deg_in, "input directory of PNGs")->required();
  deg->add_option("--out", deg_out, "output directory")->required();
  deg->add_option("--policy", deg_policy, "artifact policy JSON");
  deg->add_option("--seed", deg_seed, "rng seed");

  // pose-cluster
  auto* pc = app.add_subcommand("pose-cluster", "fit the pose k-means model");
  std::string pc_skeletons, pc_out = "pose_clusters.json", pc_elbow, pc_elbow_out;
  int pc_k = 15;
  std::uint64_t pc_seed = 0;
  double pc_minconf = 0.3;
  pc->add_option("--skeletons", pc_skeletons, "skeleton JSONL")->required();
  pc->add_option("--k", pc_k, "cluster count (plus the reserved noise cluster 0)");
  pc->add_option("--seed", pc_seed, "rng seed");
  pc->add_option("--out", pc_out, "output model JSON");
  pc->add_option("--min-confidence", pc_minconf, "noise gate for keypoints");
  pc->add_option("--elbow", pc_elbow, "also scan objectives over LO:HI");
  pc->add_option("--elbow-out", pc_elbow_out, "elbow CSV path");

  // train
  auto* tr = app.add_subcommand("train", "run a training experiment");
  std::string tr_config, tr_data, tr_external, tr_out, tr_pose, tr_teacher;
  std::string tr_mode, tr_variant;
  std::optional<std::uint64_t> tr_seed;
  std::optional<int> tr_epochs;
  std::optional<double> tr_fraction;
  tr->add_option("--config", tr_config, "experiment config JSON");
  tr->add_option("--data", tr_data, "target dataset directory")->required();
  tr->add_option("--external", tr_external, "external dataset directory");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--pose-model", tr_pose, "pose cluster model JSON");
  tr->add_option("--teacher", tr_teacher, "frozen teacher checkpoint");
  tr->add_option("--seed", tr_seed, "override seed");
  tr->add_option("--epochs", tr_epochs, "override epochs");
  tr->add_option("--mode", tr_mode, "override mode");
  tr->add_option("--tad-variant", tr_variant, "override TAD variant");
  tr->add_option("--external-fraction", tr_fraction, "override subsample fraction");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_protocol = "all", ev_out = "metrics.json";
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--protocol", ev_protocol, "cc|sc|general|all");
  ev->add_option("--out", ev_out, "metrics JSON path");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the TAD-variant table");
  std::string ab_config, ab_data, ab_external, ab_out;
  bool ab_table7 = false;
  ab->add_flag("--table7", ab_table7, "run the TAD variant table");
  ab->add_option("--config", ab_config, "base experiment config JSON");
  ab->add_option("--data", ab_data, "target dataset directory")->required();
  ab->add_option("--external", ab_external, "external dataset directory")->required();
  ab->add_option("--out", ab_out, "output directory")->required();

  // report
  auto* rp = app.add_subcommand("report", "summarize completed runs");
  std::vector<std::string> rp_runs;
  std::string rp_out;
  rp->add_option("--runs", rp_runs, "run directories")->required();
  rp->add_option("--out", rp_out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out, gen_seed);
    if (deg->parsed()) return cmd_degrade(deg_in, deg_out, deg_policy, deg_seed);
    if (pc->parsed()) {
      return cmd_pose_cluster(pc_skeletons, pc_k, pc_seed, pc_out, pc_minconf, pc_elbow,
                              pc_elbow_out);
    }
    if (tr->parsed()) {
      return cmd_train(tr_config, tr_data, tr_external, tr_out, tr_pose, tr_teacher,
                       tr_seed, tr_epochs, tr_mode, tr_variant, tr_fraction);
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_protocol, ev_out);
    if (ab->parsed()) {
      if (!ab_table7) throw std::invalid_argument("ablate: pass --table7");
      return cmd_ablate(ab_config, ab_data, ab_external, ab_out, "");
    }
    if (rp->parsed()) return cmd_report(rp_runs, rp_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
