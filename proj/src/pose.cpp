#include "rlq/pose.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rlq/rng.hpp"

namespace rlq {

const std::array<std::pair<int, int>, 13> kBodyLines = {{
    {5, 7},    // left upper arm
    {6, 8},    // right upper arm
    {7, 9},    // left forearm
    {8, 10},   // right forearm
    {11, 13},  // left thigh
    {12, 14},  // right thigh
    {13, 15},  // left shin
    {14, 16},  // right shin
    {5, 6},    // shoulder line
    {11, 12},  // hip line
    {5, 11},   // left torso
    {6, 12},   // right torso
    {0, 17},   // neck: nose to shoulder midpoint
}};

namespace {

Keypoint line_endpoint(const Skeleton& s, int idx) {
  if (idx == 17) {
    const auto& l = s.keypoints[5];
    const auto& r = s.keypoints[6];
    return {(l.x + r.x) / 2.0, (l.y + r.y) / 2.0, std::min(l.confidence, r.confidence)};
  }
  return s.keypoints[static_cast<std::size_t>(idx)];
}

}  // namespace

std::optional<PoseVector> pose_vector(const Skeleton& s, double min_confidence) {
  for (const auto& [a, b] : kBodyLines) {
    if (line_endpoint(s, a).confidence < min_confidence ||
        line_endpoint(s, b).confidence < min_confidence) {
      return std::nullopt;
    }
  }

  // bounding box over confident keypoints
  double minx = std::numeric_limits<double>::infinity(), maxx = -minx;
  double miny = minx, maxy = -minx;
  for (const auto& kp : s.keypoints) {
    if (kp.confidence < min_confidence) continue;
    minx = std::min(minx, kp.x);
    maxx = std::max(maxx, kp.x);
    miny = std::min(miny, kp.y);
    maxy = std::max(maxy, kp.y);
  }
  const double w = maxx - minx, h = maxy - miny;
  const double diag = std::sqrt(w * w + h * h);
  if (diag == 0.0) return std::nullopt;  // all keypoints coincide
  const double wdiv = w == 0.0 ? 1.0 : w;
  const double hdiv = h == 0.0 ? 1.0 : h;

  PoseVector v;
  std::size_t o = 0;
  for (const auto& kp : s.keypoints) {
    if (kp.confidence < min_confidence) {
      v.values[o++] = 0.0;
      v.values[o++] = 0.0;
    } else {
      v.values[o++] = (kp.x - minx) / wdiv;
      v.values[o++] = (kp.y - miny) / hdiv;
    }
  }
  for (const auto& [a, b] : kBodyLines) {
    const Keypoint pa = line_endpoint(s, a), pb = line_endpoint(s, b);
    const double dx = pb.x - pa.x, dy = pb.y - pa.y;
    v.values[o++] = std::sqrt(dx * dx + dy * dy) / diag;
  }
  for (const auto& [a, b] : kBodyLines) {
    const Keypoint pa = line_endpoint(s, a), pb = line_endpoint(s, b);
    const double dx = pb.x - pa.x, dy = pb.y - pa.y;
    // y flipped: angles live in the conventional math frame
    v.values[o++] = std::atan2(-dy, dx);
  }
  return v;
}

namespace {

double sq_dist(const std::array<double, kPoseVectorDim>& a,
               const std::array<double, kPoseVectorDim>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kPoseVectorDim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest_centroid(const std::vector<std::array<double, kPoseVectorDim>>& centroids,
                     const std::array<double, kPoseVectorDim>& v) {
  int best = 0;
  double best_d = sq_dist(centroids[0], v);
  for (int c = 1; c < static_cast<int>(centroids.size()); ++c) {
    const double d = sq_dist(centroids[static_cast<std::size_t>(c)], v);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

PoseClusterModel kmeans_fit(const std::vector<PoseVector>& vectors, int k,
                            std::uint64_t seed, int max_iters,
                            KmeansStats* stats) {
  const std::size_t n = vectors.size();
  if (k < 2) throw std::invalid_argument("kmeans_fit: k must be at least 2");
  if (n < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("kmeans_fit: fewer vectors than clusters");
  }
  {
    std::set<std::array<double, kPoseVectorDim>> distinct;
    for (const auto& v : vectors) distinct.insert(v.values);
    if (distinct.size() < static_cast<std::size_t>(k)) {
      throw std::invalid_argument("kmeans_fit: fewer distinct vectors than clusters");
    }
  }

  Rng rng(seed);
  std::vector<std::array<double, kPoseVectorDim>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));

  // k-means++ seeding
  centroids.push_back(vectors[static_cast<std::size_t>(
                                  rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]
                          .values);
  std::vector<double> d2(n);
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(c, vectors[i].values));
      d2[i] = best;
      total += best;
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      // all points covered exactly; pick any not-yet-used point
      chosen = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    }
    centroids.push_back(vectors[chosen].values);
  }

  std::vector<int> assign(n, -1);
  KmeansStats local_stats;
  double prev_objective = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    // assignment
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest_centroid(centroids, vectors[i].values);
      if (c != assign[i]) changed = true;
      assign[i] = c;
      objective += sq_dist(centroids[static_cast<std::size_t>(c)], vectors[i].values);
    }
    if (objective > prev_objective * (1.0 + 1e-12) + 1e-12) {
      throw std::logic_error("kmeans_fit: objective increased");
    }
    prev_objective = objective;
    local_stats.objective_per_iter.push_back(objective);
    if (!changed && iter > 0) {
      converged = true;
      break;
    }

    // update
    std::vector<std::array<double, kPoseVectorDim>> sums(
        static_cast<std::size_t>(k), std::array<double, kPoseVectorDim>{});
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(assign[i]);
      ++counts[c];
      for (std::size_t j = 0; j < kPoseVectorDim; ++j) sums[c][j] += vectors[i].values[j];
    }
    std::set<std::size_t> reseeded;
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (counts[c] == 0) {
        // reseed with the point farthest from its current centroid
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (reseeded.count(i)) continue;
          const double d = sq_dist(
              centroids[static_cast<std::size_t>(assign[i])], vectors[i].values);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        centroids[c] = vectors[far_i].values;
        reseeded.insert(far_i);
      } else {
        for (std::size_t j = 0; j < kPoseVectorDim; ++j) {
          centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
        }
      }
    }
  }

  local_stats.iterations = iter;
  local_stats.converged = converged;
  if (stats) *stats = local_stats;

  PoseClusterModel model;
  model.k = k;
  model.seed = seed;
  model.centroids = std::move(centroids);
  for (std::size_t a = 0; a < model.centroids.size(); ++a) {
    for (double x : model.centroids[a]) {
      if (!std::isfinite(x)) throw std::logic_error("kmeans_fit: non-finite centroid");
    }
    for (std::size_t b = a + 1; b < model.centroids.size(); ++b) {
      if (model.centroids[a] == model.centroids[b]) {
        throw std::logic_error("kmeans_fit: duplicate centroids");
      }
    }
  }
  return model;
}

int assign_cluster(const PoseClusterModel& model,
                   const std::optional<PoseVector>& v) {
  if (!v.has_value()) return 0;
  if (model.centroids.empty()) throw std::invalid_argument("assign_cluster: unfitted model");
  return 1 + nearest_centroid(model.centroids, v->values);
}

std::vector<ElbowPoint> elbow_scan(const std::vector<PoseVector>& vectors,
                                   int k_lo, int k_hi, std::uint64_t seed) {
  if (k_lo < 2 || k_hi > 40 || k_lo > k_hi) {
    throw std::invalid_argument("elbow_scan: k range must lie within [2, 40]");
  }
  std::vector<ElbowPoint> out;

  // k=1 surrogate: total squared distance to the global mean
  std::array<double, kPoseVectorDim> mean{};
  for (const auto& v : vectors)
    for (std::size_t j = 0; j < kPoseVectorDim; ++j) mean[j] += v.values[j];
  for (auto& m : mean) m /= static_cast<double>(vectors.size());
  double total = 0.0;
  for (const auto& v : vectors) total += sq_dist(mean, v.values);
  out.push_back({1, total});

  for (int k = k_lo; k <= k_hi; ++k) {
    KmeansStats stats;
    kmeans_fit(vectors, k, seed, 100, &stats);
    out.push_back({k, stats.objective_per_iter.back()});
  }
  return out;
}

std::string elbow_csv(const std::vector<ElbowPoint>& points) {
  std::ostringstream os;
  os << "k,objective,top1_slot\n";
  os.precision(17);
  for (const auto& p : points) os << p.k << "," << p.objective << ",\n";
  return os.str();
}

// ---- persistence -----------------------------------------------------------

std::string PoseClusterModel::to_json() const {
  nlohmann::json j;
  j["k"] = k;
  j["seed"] = seed;
  auto& rows = j["centroids"] = nlohmann::json::array();
  for (const auto& c : centroids) rows.push_back(std::vector<double>(c.begin(), c.end()));
  return j.dump();
}

PoseClusterModel PoseClusterModel::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  PoseClusterModel m;
  m.k = j.at("k").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& row : j.at("centroids")) {
    const auto vals = row.get<std::vector<double>>();
    if (vals.size() != kPoseVectorDim) {
      throw std::invalid_argument("pose model: centroid dimension mismatch");
    }
    std::array<double, kPoseVectorDim> c{};
    std::copy(vals.begin(), vals.end(), c.begin());
    m.centroids.push_back(c);
  }
  if (static_cast<int>(m.centroids.size()) != m.k) {
    throw std::invalid_argument("pose model: centroid count disagrees with k");
  }
  return m;
}

void PoseClusterModel::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("pose model: cannot write " + path);
  f << to_json() << "\n";
}

PoseClusterModel PoseClusterModel::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("pose model: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

std::string skeleton_record_to_json(const SkeletonRecord& rec) {
  nlohmann::json j;
  j["image"] = rec.image;
  auto& kps = j["keypoints"] = nlohmann::json::array();
  for (const auto& kp : rec.skeleton.keypoints) {
    kps.push_back({kp.x, kp.y, kp.confidence});
  }
  return j.dump();
}

std::vector<SkeletonRecord> load_skeletons_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("skeletons: cannot read " + path);
  std::vector<SkeletonRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    SkeletonRecord rec;
    rec.image = j.at("image").get<std::string>();
    const auto& kps = j.at("keypoints");
    if (kps.size() != 17) throw std::invalid_argument("skeletons: expected 17 keypoints");
    for (std::size_t i = 0; i < 17; ++i) {
      rec.skeleton.keypoints[i] = {kps[i][0].get<double>(), kps[i][1].get<double>(),
                                   kps[i][2].get<double>()};
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void save_skeletons_jsonl(const std::string& path,
                          const std::vector<SkeletonRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("skeletons: cannot write " + path);
  for (const auto& rec : records) f << skeleton_record_to_json(rec) << "\n";
}

}  // namespace rlq
