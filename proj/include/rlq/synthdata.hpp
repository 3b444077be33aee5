#ifndef RLQ_SYNTHDATA_HPP_
#define RLQ_SYNTHDATA_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rlq/degrade.hpp"
#include "rlq/image.hpp"
#include "rlq/manifest.hpp"
#include "rlq/pose.hpp"
#include "rlq/rng.hpp"

namespace rlq {

/// Per-pixel region labels of a rendered figure.
enum class MaskLabel : std::uint8_t {
  kBackground = 0,
  kSkin = 1,
  kUpper = 2,
  kLower = 3,
};

struct SegMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  SegMask() = default;
  SegMask(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int y, int x) {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
};

/// Identity-defining body description. Gender drives the visual shoulder/hip
/// flare of the torso silhouette; the skeleton joints themselves stay
/// gender-neutral so pose clusters carry no gender information.
struct PersonSpec {
  int id = 0;
  int gender = 0;  // 0 female, 1 male
  double height_scale = 1.0;       // 0.92 .. 1.08
  double torso_mul = 1.0;          // 0.9 .. 1.1
  double leg_mul = 1.0;
  double arm_mul = 1.0;
  double body_halfwidth = 4.2;     // skeleton half width, px
  double limb_thickness = 1.8;     // capsule radius, px
  double head_radius = 3.6;
  double shoulder_flare = 1.0;     // visual multiplier on body_halfwidth
  double hip_flare = 1.0;
  std::array<std::uint8_t, 3> skin_tone = {205, 170, 145};

  /// Deterministic spec for an identity: proportions from the id substream,
  /// gender = id % 2 (balanced), gendered flare ranges.
  static PersonSpec sample(int id, std::uint64_t seed);
};

/// Joint angles in degrees. Arm/leg angles measure from straight down,
/// rotating outward; elbow/knee angles add onto the parent segment.
struct PoseAngles {
  double l_arm = 5, r_arm = 5;
  double l_elbow = 0, r_elbow = 0;
  double l_leg = 6, r_leg = 6;
  double l_knee = 0, r_knee = 0;
  double lean = 0;  // torso lean

  bool operator==(const PoseAngles&) const = default;
};

constexpr int kPoseModes = 15;  // 5 arm poses x 3 leg stances

/// Canonical mode table (no jitter). Mode 3 (arms at 90, narrow stance) is an
/// exact T-pose.
PoseAngles canonical_pose(int mode);

/// Canonical mode + Gaussian jitter on every angle.
PoseAngles sample_pose(int mode, Rng& rng, double jitter_deg = 4.0);

/// Per-image view parameters.
struct CameraView {
  int camera = 0;
  double lateral_shift = 0.0;  // px
  double brightness = 1.0;
  bool mirrored = false;
};

CameraView sample_camera(int num_cameras, Rng& rng);

struct RenderResult {
  Image image;
  Skeleton skeleton;  // exact joint coordinates, confidence 1
  SegMask mask;
};

/// Rasterizes the figure on the 64x32 canvas: capsule limbs, convex torso
/// quad with gendered flare, head disk, camera-tinted background, slight
/// per-pixel paint noise from `rng`. Throws std::invalid_argument when the
/// pose pushes a joint off-canvas.
RenderResult render(const PersonSpec& spec,
                    const std::array<std::uint8_t, 3>& upper,
                    const std::array<std::uint8_t, 3>& lower,
                    const PoseAngles& pose, const CameraView& camera, Rng& rng);

/// Garment color with a brightness floor (dark-on-dark figures would starve
/// the silhouette cues).
std::array<std::uint8_t, 3> sample_garment_color(Rng& rng);

/// Repaints the garment pixels (per the mask) with fresh random colors and
/// returns the new clothes label from `alloc`. Background and skin bytes are
/// untouched.
std::pair<Image, int> clothes_augment(const Image& img, const SegMask& mask,
                                      Rng& rng, const std::function<int()>& alloc);

struct DatasetConfig {
  int num_ids = 40;
  int clothes_per_id = 3;
  int images_per_clothes = 10;
  int num_cameras = 4;
  double train_frac = 0.6;   // remainder split evenly into query/gallery
  double pose_jitter_deg = 4.0;
  bool lq_twins = true;      // render the LQ tier next to every HQ original
  ArtifactPolicy policy;     // parameter ranges for the LQ twins
  std::uint64_t seed = 0;

  std::string to_json() const;
  static DatasetConfig from_json(const std::string& json_text);
};

struct GeneratedDataset {
  Manifest manifest;
  std::string root;
};

/// Renders the full toy dataset under `out_dir`: images/*.png, manifest.jsonl,
/// skeletons.jsonl. Each HQ original gets an LQ twin produced by a forced
/// artifact draw; twin skeleton confidences are scaled down by artifact
/// severity so harsh twins fall into the noise pose cluster.
GeneratedDataset generate_dataset(const DatasetConfig& config, const std::string& out_dir);

/// Severity-scaled keypoint confidence for an LQ twin (1 = pristine).
double artifact_confidence(const ArtifactDescriptor& d);

}  // namespace rlq

#endif  // RLQ_SYNTHDATA_HPP_
