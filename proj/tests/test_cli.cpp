#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args, const fs::path& workdir,
            std::string* out = nullptr, std::string* err = nullptr) {
  const auto out_file = workdir / "stdout.txt";
  const auto err_file = workdir / "stderr.txt";
  const std::string cmd = std::string(RLQ_BIN) + " " + args + " > " + out_file.string() +
                          " 2> " + err_file.string();
  const int ret = std::system(cmd.c_str());
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  if (out) *out = slurp(out_file);
  if (err) *err = slurp(err_file);
  return WIFEXITED(ret) ? WEXITSTATUS(ret) : -1;
}

std::string slurp_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path workdir() {
  const auto dir = fs::temp_directory_path() / "rlq_cli_tests";
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::trunc);
  f << content;
}

// small dataset shared across cases
const fs::path& dataset_dir() {
  static const fs::path dir = [] {
    const auto d = workdir() / "data";
    if (!fs::exists(d / "manifest.jsonl")) {
      write_file(workdir() / "gen.json",
                 R"({"num_ids": 4, "clothes_per_id": 2, "images_per_clothes": 4, "seed": 3})");
      const int rc = run_cli("gen-data --config " + (workdir() / "gen.json").string() +
                                 " --out " + d.string(),
                             workdir());
      REQUIRE(rc == 0);
    }
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("missing required flag exits 1 and names the flag") {
  std::string err;
  const int rc = run_cli("eval", workdir(), nullptr, &err);
  CHECK(rc == 1);
  CHECK(err.find("checkpoint") != std::string::npos);
}

TEST_CASE("unknown config key exits 1 and names the key") {
  write_file(workdir() / "bad.json", R"({"bogus_key": 1})");
  std::string err;
  const int rc = run_cli("train --config " + (workdir() / "bad.json").string() +
                             " --data " + dataset_dir().string() + " --out " +
                             (workdir() / "bad_run").string(),
                         workdir(), nullptr, &err);
  CHECK(rc == 1);
  CHECK(err.find("bogus_key") != std::string::npos);
}

TEST_CASE("gen-data is byte-identical across reruns") {
  const auto a = workdir() / "gen_a";
  const auto b = workdir() / "gen_b";
  fs::remove_all(a);
  fs::remove_all(b);
  write_file(workdir() / "gen2.json",
             R"({"num_ids": 4, "clothes_per_id": 2, "images_per_clothes": 3})");
  const std::string cfg = (workdir() / "gen2.json").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + a.string() + " --seed 7", workdir()) == 0);
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + b.string() + " --seed 7", workdir()) == 0);

  CHECK(slurp_file(a / "manifest.jsonl") == slurp_file(b / "manifest.jsonl"));
  CHECK(slurp_file(a / "skeletons.jsonl") == slurp_file(b / "skeletons.jsonl"));
  for (const auto& e : fs::directory_iterator(a / "images")) {
    const auto rel = e.path().filename();
    CHECK(slurp_file(e.path()) == slurp_file(b / "images" / rel));
  }
}

TEST_CASE("degrade writes deterministic outputs and descriptors") {
  const auto in = dataset_dir() / "images";
  const auto out1 = workdir() / "deg_a";
  const auto out2 = workdir() / "deg_b";
  fs::remove_all(out1);
  fs::remove_all(out2);
  write_file(workdir() / "policy.json",
             R"({"enabled": ["pixelation", "oof_blur"], "apply_probability": 1.0})");
  const std::string policy = (workdir() / "policy.json").string();
  REQUIRE(run_cli("degrade --in " + in.string() + " --out " + out1.string() +
                      " --policy " + policy + " --seed 5",
                  workdir()) == 0);
  REQUIRE(run_cli("degrade --in " + in.string() + " --out " + out2.string() +
                      " --policy " + policy + " --seed 5",
                  workdir()) == 0);
  CHECK(slurp_file(out1 / "descriptors.jsonl") == slurp_file(out2 / "descriptors.jsonl"));

  std::ifstream f(out1 / "descriptors.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const std::string kind = j.at("artifact").at("kind");
    CHECK((kind == "pixelation" || kind == "oof_blur"));
    ++rows;
  }
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(in)) pngs += e.path().extension() == ".png";
  CHECK(rows == pngs);
}

TEST_CASE("train writes a resolved config and a replayable run") {
  const auto out = workdir() / "train_run";
  fs::remove_all(out);
  write_file(workdir() / "exp.json",
             R"({"mode": "baseline", "epochs": 2, "batch_size": 8, "eval_every": 2,
                 "warmup_epochs": 1, "seed": 9})");
  REQUIRE(run_cli("train --config " + (workdir() / "exp.json").string() + " --data " +
                      dataset_dir().string() + " --out " + out.string(),
                  workdir()) == 0);
  CHECK(fs::exists(out / "config.resolved.json"));
  CHECK(fs::exists(out / "metrics.jsonl"));
  CHECK(fs::exists(out / "checkpoints" / "final.bin"));

  // replay from the persisted resolved config reproduces the run
  const auto replay = workdir() / "train_replay";
  fs::remove_all(replay);
  REQUIRE(run_cli("train --config " + (out / "config.resolved.json").string() +
                      " --data " + dataset_dir().string() + " --out " + replay.string(),
                  workdir()) == 0);
  CHECK(slurp_file(out / "metrics.jsonl") == slurp_file(replay / "metrics.jsonl"));
  CHECK(slurp_file(out / "checkpoints" / "final.bin") ==
        slurp_file(replay / "checkpoints" / "final.bin"));
}

TEST_CASE("eval reproduces the training log numbers exactly") {
  const auto run = workdir() / "train_run";
  REQUIRE(fs::exists(run / "metrics.jsonl"));

  const auto out = run / "report" / "metrics.json";
  REQUIRE(run_cli("eval --checkpoint " + (run / "checkpoints" / "final.bin").string() +
                      " --data " + dataset_dir().string() + " --protocol all --out " +
                      out.string(),
                  workdir()) == 0);
  const auto metrics = json::parse(slurp_file(out));

  // final eval row of the training log
  std::ifstream f(run / "metrics.jsonl");
  std::string line, last_eval;
  while (std::getline(f, line)) {
    if (line.find("\"eval\"") != std::string::npos) last_eval = line;
  }
  REQUIRE(!last_eval.empty());
  const auto row = json::parse(last_eval);
  CHECK(metrics.at("cc").at("top1").get<double>() == row.at("cc_top1").get<double>());
  CHECK(metrics.at("cc").at("map").get<double>() == row.at("cc_map").get<double>());
  CHECK(metrics.at("general").at("map").get<double>() == row.at("general_map").get<double>());
  CHECK(metrics.at("compactness").at("ratio_lq").get<double>() ==
        row.at("ratio_lq").get<double>());
  CHECK(fs::exists(run / "report" / "cmc_cc.csv"));
  CHECK(fs::exists(run / "report" / "pca.csv"));
}

TEST_CASE("ablate table has the baseline plus five variant rows") {
  const auto ext = workdir() / "external";
  if (!fs::exists(ext / "manifest.jsonl")) {
    write_file(workdir() / "gen_ext.json",
               R"({"num_ids": 4, "clothes_per_id": 2, "images_per_clothes": 4, "seed": 21})");
    REQUIRE(run_cli("gen-data --config " + (workdir() / "gen_ext.json").string() +
                        " --out " + ext.string(),
                    workdir()) == 0);
  }
  const auto out = workdir() / "ablate";
  fs::remove_all(out);
  write_file(workdir() / "ab.json",
             R"({"epochs": 2, "teacher_epochs": 1, "batch_size": 8, "eval_every": 2,
                 "warmup_epochs": 1, "seed": 4})");
  REQUIRE(run_cli("ablate --table7 --config " + (workdir() / "ab.json").string() +
                      " --data " + dataset_dir().string() + " --external " + ext.string() +
                      " --out " + out.string(),
                  workdir()) == 0);

  std::ifstream f(out / "table7.csv");
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(f, line)) {
    if (!line.empty()) rows.push_back(line);
  }
  REQUIRE(rows.size() == 7);  // header + baseline + 5 variants
  CHECK(rows[0].rfind("variant,", 0) == 0);
  CHECK(rows[1].rfind("baseline,", 0) == 0);
  const std::vector<std::string> variants = {"lq_aug_only", "ss_mse_tad", "ss_mse_nt",
                                             "target_ss_nt", "tad"};
  for (std::size_t i = 0; i < variants.size(); ++i) {
    CHECK(rows[i + 2].rfind(variants[i] + ",", 0) == 0);
  }
}

TEST_CASE("report aggregates runs and replays logged numbers") {
  // two seeds of one config
  const auto run_a = workdir() / "rep_a";
  const auto run_b = workdir() / "rep_b";
  for (const auto& [dir, seed] : {std::pair{run_a, 1}, {run_b, 2}}) {
    if (fs::exists(dir / "metrics.jsonl")) continue;
    write_file(workdir() / "rep.json",
               R"({"mode": "baseline", "epochs": 2, "batch_size": 8, "eval_every": 2,
                   "warmup_epochs": 1})");
    REQUIRE(run_cli("train --config " + (workdir() / "rep.json").string() + " --data " +
                        dataset_dir().string() + " --out " + dir.string() + " --seed " +
                        std::to_string(seed),
                    workdir()) == 0);
  }
  const auto out = workdir() / "report_out";
  fs::remove_all(out);
  REQUIRE(run_cli("report --runs " + run_a.string() + " " + run_b.string() + " --out " +
                      out.string(),
                  workdir()) == 0);

  const auto csv = slurp_file(out / "summary.csv");
  CHECK(csv.find("baseline/tad,2,cc_top1,") != std::string::npos);

  // the aggregated mean equals the mean of the logged best values
  auto best_cc = [&](const fs::path& run) {
    std::ifstream f(run / "metrics.jsonl");
    std::string line;
    double best = 0;
    while (std::getline(f, line)) {
      if (line.find("\"eval\"") == std::string::npos) continue;
      best = std::max(best, json::parse(line).at("cc_top1").get<double>());
    }
    return best;
  };
  const double want_mean = (best_cc(run_a) + best_cc(run_b)) / 2.0;
  std::istringstream rows(csv);
  std::string line;
  bool found = false;
  while (std::getline(rows, line)) {
    if (line.rfind("baseline/tad,2,cc_top1,", 0) == 0) {
      const auto rest = line.substr(std::string("baseline/tad,2,cc_top1,").size());
      const double mean = std::stod(rest.substr(0, rest.find(',')));
      CHECK(mean == doctest::Approx(want_mean).epsilon(1e-9));
      found = true;
    }
  }
  CHECK(found);
  CHECK(fs::exists(out / "report.md"));
}
