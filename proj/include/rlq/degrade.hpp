#ifndef RLQ_DEGRADE_HPP_
#define RLQ_DEGRADE_HPP_

#include <cstdint>
#include <set>
#include <string>

#include "rlq/image.hpp"
#include "rlq/rng.hpp"

namespace rlq {

enum class Artifact { kNone, kPixelation, kOofBlur, kMotionBlur };

std::string artifact_name(Artifact a);
Artifact artifact_from_name(const std::string& name);

/// What apply_policy actually did to one image.
struct ArtifactDescriptor {
  Artifact kind = Artifact::kNone;
  int pixel_target = 0;   // pixelation
  int kernel = 0;         // oof_blur
  double sigma = 0.0;     // oof_blur
  int length = 0;         // motion_blur
  double angle_deg = 0.0; // motion_blur

  std::string to_json() const;
  static ArtifactDescriptor from_json(const std::string& json_text);
  bool operator==(const ArtifactDescriptor&) const = default;
};

/// Sampling ranges for the synthetic low-quality artifacts. Parameter ranges
/// follow the pixelation / out-of-focus / motion-blur simulation recipe:
/// pixelation resolution in [16, 64], Gaussian kernel in [5, 21] (odd),
/// motion length in [8, 20] with angle in [0, 180] degrees, each artifact
/// applied with probability 1/2 by default.
struct ArtifactPolicy {
  std::set<Artifact> enabled = {Artifact::kPixelation, Artifact::kOofBlur,
                                Artifact::kMotionBlur};
  double apply_probability = 0.5;
  int pixel_res_lo = 16, pixel_res_hi = 64;
  int oof_kernel_lo = 5, oof_kernel_hi = 21;
  int motion_len_lo = 8, motion_len_hi = 20;
  double motion_angle_lo = 0.0, motion_angle_hi = 180.0;
  std::uint64_t rng_seed = 0;

  void validate() const;  // throws std::invalid_argument
  std::string to_json() const;
  static ArtifactPolicy from_json(const std::string& json_text);
};

/// Bilinear resize with half-pixel center alignment; rounds to 8 bits once
/// per call. Shared by pixelate's down/up chain.
Image resize_bilinear(const Image& img, int out_h, int out_w);

/// Downsample to target x target and back up to the original size.
/// 16 <= target <= 64.
Image pixelate(const Image& img, int target);

/// Separable Gaussian blur; kernel odd in [5, 21], weights normalized to sum
/// one, edge replication at the borders. Interior arithmetic is float64 with
/// a single rounding at the end.
Image oof_blur(const Image& img, int kernel, double sigma);

/// Line kernel of ones rotated by `angle_deg` (bilinear rotation about the
/// kernel center), normalized, then 2-D convolution with edge replication.
/// length in [8, 20]; length 1 is accepted as the documented delta-kernel
/// identity escape hatch.
Image motion_blur(const Image& img, int length, double angle_deg);

/// With probability apply_probability, samples one enabled artifact uniformly
/// and applies it with parameters drawn uniformly from the policy ranges.
/// Gaussian sigma is kernel/6 so the kernel spans +-3 sigma; the value is
/// recorded in the descriptor. Deterministic given the rng state.
std::pair<Image, ArtifactDescriptor> apply_policy(const Image& img,
                                                  const ArtifactPolicy& policy,
                                                  Rng& rng);

/// apply_policy with the probability gate forced open: always applies exactly
/// one enabled artifact. Used to build the LQ tier.
std::pair<Image, ArtifactDescriptor> apply_forced(const Image& img,
                                                  const ArtifactPolicy& policy,
                                                  Rng& rng);

/// Variance of the 4-neighbour Laplacian over the grayscale image. The naive
/// sharpness score; deliberately crude, it backs the no-teacher target-split
/// ablation.
double laplacian_variance(const Image& img);

}  // namespace rlq

#endif  // RLQ_DEGRADE_HPP_
