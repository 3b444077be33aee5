#ifndef RLQ_POSE_HPP_
#define RLQ_POSE_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rlq {

/// One 2-D keypoint in COCO order with a detector confidence.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
};

/// 17 COCO keypoints: 0 nose, 1-2 eyes, 3-4 ears, 5-6 shoulders,
/// 7-8 elbows, 9-10 wrists, 11-12 hips, 13-14 knees, 15-16 ankles.
struct Skeleton {
  std::array<Keypoint, 17> keypoints;
};

constexpr std::size_t kPoseVectorDim = 60;  // 34 coords + 13 lengths + 13 angles

/// The 13 body lines (COCO index pairs; 17 denotes the shoulder midpoint):
/// upper arms, forearms, thighs, shins, shoulder line, hip line, torso sides,
/// neck. Order is fixed; the angle block mirrors this order.
extern const std::array<std::pair<int, int>, 13> kBodyLines;

/// 60-dim pose descriptor: keypoint coordinates normalized to [0, 1] by the
/// bounding box of confident keypoints, body-line lengths normalized by the
/// box diagonal, and body-line angles (radians, measured from +x with the
/// image y-axis flipped so "pointing down" is -pi/2).
struct PoseVector {
  std::array<double, kPoseVectorDim> values{};
  bool operator==(const PoseVector&) const = default;
};

/// Builds the descriptor, or nullopt (the noise sentinel, cluster 0) when any
/// body-line endpoint falls below min_confidence or the bounding box is
/// degenerate. Keypoints below the threshold (only eyes/ears can be, given a
/// non-noise result) contribute (0, 0) coordinates.
std::optional<PoseVector> pose_vector(const Skeleton& s, double min_confidence = 0.3);

/// K-means model over pose vectors. Cluster 0 is reserved for noisy poses and
/// has no centroid; clusters 1..k map to centroid rows 0..k-1.
struct PoseClusterModel {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::array<double, kPoseVectorDim>> centroids;

  std::string to_json() const;
  static PoseClusterModel from_json(const std::string& json_text);
  void save(const std::string& path) const;
  static PoseClusterModel load(const std::string& path);
};

struct KmeansStats {
  std::vector<double> objective_per_iter;  // non-increasing
  int iterations = 0;
  bool converged = false;
};

/// Lloyd iterations from a k-means++ start (L2 distance). Noise sentinels
/// must be excluded by the caller. Empty clusters are reseeded with the point
/// farthest from its current centroid. Throws when fewer than k distinct
/// vectors exist.
PoseClusterModel kmeans_fit(const std::vector<PoseVector>& vectors, int k,
                            std::uint64_t seed, int max_iters = 100,
                            KmeansStats* stats = nullptr);

/// 0 for noise; otherwise 1 + argmin_c ||v - centroid_c||, ties to the lowest
/// index.
int assign_cluster(const PoseClusterModel& model,
                   const std::optional<PoseVector>& v);

struct ElbowPoint {
  int k = 0;
  double objective = 0.0;
};

/// Objective per k for manual elbow inspection. A k=1 surrogate row (total
/// squared distance to the global mean) is prepended. k_range within [2, 40].
std::vector<ElbowPoint> elbow_scan(const std::vector<PoseVector>& vectors,
                                   int k_lo, int k_hi, std::uint64_t seed);

/// CSV with a trailing empty column for downstream accuracy numbers.
std::string elbow_csv(const std::vector<ElbowPoint>& points);

// Skeleton JSONL: one record per line,
//   {"image": <path>, "keypoints": [[x, y, c] x17]}
struct SkeletonRecord {
  std::string image;
  Skeleton skeleton;
};

std::vector<SkeletonRecord> load_skeletons_jsonl(const std::string& path);
void save_skeletons_jsonl(const std::string& path,
                          const std::vector<SkeletonRecord>& records);
std::string skeleton_record_to_json(const SkeletonRecord& rec);

}  // namespace rlq

#endif  // RLQ_POSE_HPP_
