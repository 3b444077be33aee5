#include "rlq/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

namespace rlq {

namespace {

constexpr int kCanvasH = 64;
constexpr int kCanvasW = 32;
constexpr double kDeg = 3.14159265358979323846 / 180.0;

struct Vec2 {
  double x = 0, y = 0;
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm2() const { return x * x + y * y; }
};

double point_segment_dist(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.norm2();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 proj = a + ab * t;
  return std::sqrt((p - proj).norm2());
}

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void paint(Image& img, SegMask& mask, int y, int x,
           const std::array<std::uint8_t, 3>& color, MaskLabel label,
           double brightness, double noise) {
  for (int c = 0; c < 3; ++c) {
    img.at(y, x, c) = clamp_u8(color[static_cast<std::size_t>(c)] * brightness + noise);
  }
  mask.at(y, x) = static_cast<std::uint8_t>(label);
}

void draw_capsule(Image& img, SegMask& mask, const Vec2& a, const Vec2& b, double r,
                  const std::array<std::uint8_t, 3>& color, MaskLabel label,
                  double brightness, Rng& rng) {
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - r)));
  const int y1 = std::min(kCanvasH - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + r)));
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - r)));
  const int x1 = std::min(kCanvasW - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (point_segment_dist({static_cast<double>(x), static_cast<double>(y)}, a, b) <= r) {
        paint(img, mask, y, x, color, label, brightness, rng.uniform(-4.0, 4.0));
      }
    }
  }
}

void draw_disk(Image& img, SegMask& mask, const Vec2& c, double r,
               const std::array<std::uint8_t, 3>& color, MaskLabel label,
               double brightness, Rng& rng) {
  draw_capsule(img, mask, c, c, r, color, label, brightness, rng);
}

// convex quad with corners in winding order
void draw_quad(Image& img, SegMask& mask, const std::array<Vec2, 4>& q,
               const std::array<std::uint8_t, 3>& color, MaskLabel label,
               double brightness, Rng& rng) {
  double miny = q[0].y, maxy = q[0].y, minx = q[0].x, maxx = q[0].x;
  for (const auto& p : q) {
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
  }
  const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
  const int y1 = std::min(kCanvasH - 1, static_cast<int>(std::ceil(maxy)));
  const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
  const int x1 = std::min(kCanvasW - 1, static_cast<int>(std::ceil(maxx)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 p{static_cast<double>(x), static_cast<double>(y)};
      bool inside = true;
      for (int i = 0; i < 4; ++i) {
        const Vec2 a = q[static_cast<std::size_t>(i)];
        const Vec2 b = q[static_cast<std::size_t>((i + 1) % 4)];
        const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if (cross < 0) {
          inside = false;
          break;
        }
      }
      if (inside) paint(img, mask, y, x, color, label, brightness, rng.uniform(-4.0, 4.0));
    }
  }
}

const std::array<std::array<std::uint8_t, 3>, 8> kCameraTints = {{
    {28, 28, 40},
    {42, 30, 30},
    {28, 42, 30},
    {38, 38, 24},
    {24, 36, 42},
    {40, 26, 40},
    {34, 34, 34},
    {22, 30, 26},
}};

}  // namespace

PersonSpec PersonSpec::sample(int id, std::uint64_t seed) {
  Rng rng(seed, 1000 + static_cast<std::uint64_t>(id));
  PersonSpec s;
  s.id = id;
  s.gender = id % 2;
  s.height_scale = rng.uniform(0.93, 1.07);
  s.torso_mul = rng.uniform(0.92, 1.08);
  s.leg_mul = rng.uniform(0.92, 1.08);
  s.arm_mul = rng.uniform(0.92, 1.08);
  s.body_halfwidth = rng.uniform(3.6, 4.7);
  s.limb_thickness = rng.uniform(1.3, 2.3);
  s.head_radius = rng.uniform(3.1, 4.4);
  if (s.gender == 1) {
    s.shoulder_flare = rng.uniform(1.35, 1.60);
    s.hip_flare = rng.uniform(0.78, 0.92);
  } else {
    s.shoulder_flare = rng.uniform(0.85, 1.00);
    s.hip_flare = rng.uniform(1.35, 1.60);
  }
  const double r = rng.uniform(186, 224);
  s.skin_tone = {clamp_u8(r), clamp_u8(r * 0.82 + rng.uniform(-6, 6)),
                 clamp_u8(r * 0.70 + rng.uniform(-6, 6))};
  return s;
}

PoseAngles canonical_pose(int mode) {
  if (mode < 0 || mode >= kPoseModes) {
    throw std::invalid_argument("canonical_pose: mode outside [0, 15)");
  }
  // arm angles keep clear of 90 degrees: a horizontal body line sits on the
  // atan2 branch cut, where jitter would flip the pose-vector angle by ~2 pi
  struct ArmSet {
    double arm_l, arm_r, elbow_l, elbow_r;
  };
  static const ArmSet arms[5] = {
      {5, 5, 8, 8},          // hanging
      {85, 85, 0, 0},        // near-T
      {140, 140, -55, -55},  // raised, forearms level
      {45, 45, 25, 25},      // mid, bent elbows
      {85, 5, 10, 8},        // asymmetric: left out
  };
  struct LegSet {
    double leg_l, leg_r, knee_l, knee_r;
  };
  static const LegSet legs[3] = {{6, 6, 0, 0}, {24, 24, 0, 0}, {20, -4, 5, -5}};

  const ArmSet& a = arms[mode / 3];
  const LegSet& l = legs[mode % 3];
  PoseAngles p;
  p.l_arm = a.arm_l;
  p.r_arm = a.arm_r;
  p.l_elbow = a.elbow_l;
  p.r_elbow = a.elbow_r;
  p.l_leg = l.leg_l;
  p.r_leg = l.leg_r;
  p.l_knee = l.knee_l;
  p.r_knee = l.knee_r;
  p.lean = 0;
  return p;
}

PoseAngles sample_pose(int mode, Rng& rng, double jitter_deg) {
  PoseAngles p = canonical_pose(mode);
  // jittered angles clamp to the renderable envelope of the 64x32 canvas
  auto clamped = [&rng](double base, double sigma, double lo, double hi) {
    return std::clamp(base + rng.normal(0, sigma), lo, hi);
  };
  // jittered arm and forearm directions must not cross the horizontal: a
  // body line crossing 90 degrees jumps across the atan2 branch cut and the
  // pose-vector angle flips by ~2 pi, shattering the mode's cluster
  const PoseAngles base = p;
  auto same_side = [](double sampled, double canonical) {
    if (canonical < 90.0) return std::min(sampled, 88.0);
    return std::max(sampled, 92.0);
  };
  p.l_arm = same_side(clamped(p.l_arm, jitter_deg, -5, 150), base.l_arm);
  p.r_arm = same_side(clamped(p.r_arm, jitter_deg, -5, 150), base.r_arm);
  p.l_elbow = clamped(p.l_elbow, jitter_deg, -60, 45);
  p.r_elbow = clamped(p.r_elbow, jitter_deg, -60, 45);
  p.l_elbow = same_side(p.l_arm + p.l_elbow, base.l_arm + base.l_elbow) - p.l_arm;
  p.r_elbow = same_side(p.r_arm + p.r_elbow, base.r_arm + base.r_elbow) - p.r_arm;
  p.l_leg = clamped(p.l_leg, jitter_deg * 0.6, -6, 25);
  p.r_leg = clamped(p.r_leg, jitter_deg * 0.6, -6, 25);
  p.l_knee = clamped(p.l_knee, jitter_deg * 0.4, -5, 5);
  p.r_knee = clamped(p.r_knee, jitter_deg * 0.4, -5, 5);
  p.lean = clamped(p.lean, jitter_deg * 0.3, -5, 5);
  return p;
}

CameraView sample_camera(int num_cameras, Rng& rng) {
  if (num_cameras < 1 || num_cameras > static_cast<int>(kCameraTints.size())) {
    throw std::invalid_argument("sample_camera: camera count outside [1, 8]");
  }
  CameraView v;
  v.camera = static_cast<int>(rng.uniform_int(0, num_cameras - 1));
  v.lateral_shift = rng.uniform(-0.6, 0.6);
  v.brightness = rng.uniform(0.9, 1.1);
  v.mirrored = rng.bernoulli(0.5);
  return v;
}

RenderResult render(const PersonSpec& spec,
                    const std::array<std::uint8_t, 3>& upper,
                    const std::array<std::uint8_t, 3>& lower,
                    const PoseAngles& pose_in, const CameraView& camera, Rng& rng) {
  PoseAngles pose = pose_in;
  if (camera.mirrored) {
    std::swap(pose.l_arm, pose.r_arm);
    std::swap(pose.l_elbow, pose.r_elbow);
    std::swap(pose.l_leg, pose.r_leg);
    std::swap(pose.l_knee, pose.r_knee);
    pose.lean = -pose.lean;
  }

  const double s = spec.height_scale;
  const double head_r = spec.head_radius * s;
  const double neck_len = 2.0 * s;
  const double torso_len = 16.0 * spec.torso_mul * s;
  const double thigh = 9.5 * spec.leg_mul * s;
  const double shin = 9.5 * spec.leg_mul * s;
  const double uarm = 4.3 * spec.arm_mul * s;
  const double farm = 3.4 * spec.arm_mul * s;
  const double halfw = spec.body_halfwidth * s;
  const double thick = spec.limb_thickness * s;

  const double cx = kCanvasW / 2.0 + camera.lateral_shift;
  const double hip_y = 3.0 * s + 2.0 * head_r + neck_len + torso_len;

  const double lean = pose.lean * kDeg;
  const Vec2 torso_center{cx, hip_y - torso_len / 2.0};
  const Vec2 up{std::sin(lean), -std::cos(lean)};
  const Vec2 hip_mid = torso_center - up * (torso_len / 2.0);
  const Vec2 shoulder_mid = torso_center + up * (torso_len / 2.0);
  const Vec2 head_center = shoulder_mid + Vec2{std::sin(lean), -std::cos(lean)} * (neck_len + head_r);

  const Vec2 shoulder_l = shoulder_mid + Vec2{-halfw, 0};
  const Vec2 shoulder_r = shoulder_mid + Vec2{halfw, 0};
  const Vec2 hip_l = hip_mid + Vec2{-halfw, 0};
  const Vec2 hip_r = hip_mid + Vec2{halfw, 0};

  auto dir_l = [](double deg) { return Vec2{-std::sin(deg * kDeg), std::cos(deg * kDeg)}; };
  auto dir_r = [](double deg) { return Vec2{std::sin(deg * kDeg), std::cos(deg * kDeg)}; };

  const Vec2 elbow_l = shoulder_l + dir_l(pose.l_arm) * uarm;
  const Vec2 wrist_l = elbow_l + dir_l(pose.l_arm + pose.l_elbow) * farm;
  const Vec2 elbow_r = shoulder_r + dir_r(pose.r_arm) * uarm;
  const Vec2 wrist_r = elbow_r + dir_r(pose.r_arm + pose.r_elbow) * farm;

  const auto shin_angle = [](double leg, double knee) {
    return std::clamp(leg + knee, -8.0, 25.0);
  };
  const Vec2 knee_l = hip_l + dir_l(pose.l_leg) * thigh;
  const Vec2 ankle_l = knee_l + dir_l(shin_angle(pose.l_leg, pose.l_knee)) * shin;
  const Vec2 knee_r = hip_r + dir_r(pose.r_leg) * thigh;
  const Vec2 ankle_r = knee_r + dir_r(shin_angle(pose.r_leg, pose.r_knee)) * shin;

  const Vec2 nose = head_center;
  const Vec2 eye_l = head_center + Vec2{-0.35 * head_r, -0.25 * head_r};
  const Vec2 eye_r = head_center + Vec2{0.35 * head_r, -0.25 * head_r};
  const Vec2 ear_l = head_center + Vec2{-0.75 * head_r, 0.0};
  const Vec2 ear_r = head_center + Vec2{0.75 * head_r, 0.0};

  const Vec2 joints[17] = {nose,   eye_l,   eye_r,   ear_l,   ear_r,  shoulder_l,
                           shoulder_r, elbow_l, elbow_r, wrist_l, wrist_r, hip_l,
                           hip_r,  knee_l,  knee_r,  ankle_l, ankle_r};
  for (const auto& j : joints) {
    if (j.x < 0.0 || j.x > kCanvasW - 1.0 || j.y < 0.0 || j.y > kCanvasH - 1.0) {
      throw std::invalid_argument("render: pose pushes joints off-canvas");
    }
  }

  RenderResult out;
  out.image = Image(kCanvasH, kCanvasW);
  out.mask = SegMask(kCanvasH, kCanvasW);
  const auto tint = kCameraTints[static_cast<std::size_t>(camera.camera)];
  for (int y = 0; y < kCanvasH; ++y) {
    for (int x = 0; x < kCanvasW; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image.at(y, x, c) = clamp_u8(tint[static_cast<std::size_t>(c)] * camera.brightness);
      }
    }
  }

  const double br = camera.brightness;
  // legs under everything
  draw_capsule(out.image, out.mask, hip_l, knee_l, thick * 1.15, lower, MaskLabel::kLower, br, rng);
  draw_capsule(out.image, out.mask, knee_l, ankle_l, thick, lower, MaskLabel::kLower, br, rng);
  draw_capsule(out.image, out.mask, hip_r, knee_r, thick * 1.15, lower, MaskLabel::kLower, br, rng);
  draw_capsule(out.image, out.mask, knee_r, ankle_r, thick, lower, MaskLabel::kLower, br, rng);

  // torso silhouette carries the gendered flare
  const std::array<Vec2, 4> torso_quad = {
      shoulder_mid + Vec2{-halfw * spec.shoulder_flare, 0},
      shoulder_mid + Vec2{halfw * spec.shoulder_flare, 0},
      hip_mid + Vec2{halfw * spec.hip_flare, 0},
      hip_mid + Vec2{-halfw * spec.hip_flare, 0},
  };
  draw_quad(out.image, out.mask, torso_quad, upper, MaskLabel::kUpper, br, rng);

  draw_capsule(out.image, out.mask, shoulder_l, elbow_l, thick, upper, MaskLabel::kUpper, br, rng);
  draw_capsule(out.image, out.mask, elbow_l, wrist_l, thick * 0.9, upper, MaskLabel::kUpper, br, rng);
  draw_capsule(out.image, out.mask, shoulder_r, elbow_r, thick, upper, MaskLabel::kUpper, br, rng);
  draw_capsule(out.image, out.mask, elbow_r, wrist_r, thick * 0.9, upper, MaskLabel::kUpper, br, rng);

  draw_capsule(out.image, out.mask, shoulder_mid, head_center, 1.2 * s, spec.skin_tone,
               MaskLabel::kSkin, br, rng);
  draw_disk(out.image, out.mask, head_center, head_r, spec.skin_tone, MaskLabel::kSkin, br, rng);

  for (int i = 0; i < 17; ++i) {
    out.skeleton.keypoints[static_cast<std::size_t>(i)] = {joints[i].x, joints[i].y, 1.0};
  }
  return out;
}

std::array<std::uint8_t, 3> sample_garment_color(Rng& rng) {
  while (true) {
    std::array<std::uint8_t, 3> c;
    int total = 0;
    for (auto& v : c) {
      v = static_cast<std::uint8_t>(rng.uniform_int(50, 255));
      total += v;
    }
    if (total >= 280) return c;
  }
}

std::pair<Image, int> clothes_augment(const Image& img, const SegMask& mask,
                                      Rng& rng, const std::function<int()>& alloc) {
  if (img.height != mask.height || img.width != mask.width) {
    throw std::invalid_argument("clothes_augment: mask/image size mismatch");
  }
  const std::array<std::uint8_t, 3> new_upper = sample_garment_color(rng);
  const std::array<std::uint8_t, 3> new_lower = sample_garment_color(rng);

  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto label = static_cast<MaskLabel>(mask.at(y, x));
      if (label == MaskLabel::kUpper) {
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = new_upper[static_cast<std::size_t>(c)];
      } else if (label == MaskLabel::kLower) {
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = new_lower[static_cast<std::size_t>(c)];
      }
    }
  }
  return {std::move(out), alloc()};
}

double artifact_confidence(const ArtifactDescriptor& d) {
  double conf = 1.0;
  switch (d.kind) {
    case Artifact::kNone:
      break;
    case Artifact::kPixelation:
      conf = 0.15 + 0.8 * (d.pixel_target - 16) / 48.0;
      break;
    case Artifact::kOofBlur:
      conf = 1.05 - 0.8 * d.kernel / 21.0;
      break;
    case Artifact::kMotionBlur:
      conf = 1.1 - 0.9 * d.length / 20.0;
      break;
  }
  return std::clamp(conf, 0.0, 1.0);
}

std::string DatasetConfig::to_json() const {
  nlohmann::json j;
  j["num_ids"] = num_ids;
  j["clothes_per_id"] = clothes_per_id;
  j["images_per_clothes"] = images_per_clothes;
  j["num_cameras"] = num_cameras;
  j["train_frac"] = train_frac;
  j["pose_jitter_deg"] = pose_jitter_deg;
  j["lq_twins"] = lq_twins;
  j["policy"] = nlohmann::json::parse(policy.to_json());
  j["seed"] = seed;
  return j.dump(2);
}

DatasetConfig DatasetConfig::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  const std::set<std::string> known = {
      "num_ids",     "clothes_per_id", "images_per_clothes", "num_cameras",
      "train_frac",  "pose_jitter_deg", "lq_twins",          "policy",
      "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("dataset config: unknown key '" + key + "'");
    }
  }
  DatasetConfig c;
  if (j.contains("num_ids")) c.num_ids = j.at("num_ids");
  if (j.contains("clothes_per_id")) c.clothes_per_id = j.at("clothes_per_id");
  if (j.contains("images_per_clothes")) c.images_per_clothes = j.at("images_per_clothes");
  if (j.contains("num_cameras")) c.num_cameras = j.at("num_cameras");
  if (j.contains("train_frac")) c.train_frac = j.at("train_frac");
  if (j.contains("pose_jitter_deg")) c.pose_jitter_deg = j.at("pose_jitter_deg");
  if (j.contains("lq_twins")) c.lq_twins = j.at("lq_twins");
  if (j.contains("policy")) c.policy = ArtifactPolicy::from_json(j.at("policy").dump());
  if (j.contains("seed")) c.seed = j.at("seed");
  return c;
}

GeneratedDataset generate_dataset(const DatasetConfig& config, const std::string& out_dir) {
  if (config.num_ids < 4) {
    throw std::invalid_argument("generate_dataset: at least 4 identities required");
  }
  if (config.clothes_per_id < 2) {
    throw std::invalid_argument(
        "generate_dataset: clothes-per-id >= 2 required for the CC protocol");
  }
  if (config.images_per_clothes < 2) {
    throw std::invalid_argument("generate_dataset: at least 2 images per clothes");
  }
  config.policy.validate();

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");

  Rng layout_rng(config.seed, 1);
  Manifest manifest;
  std::vector<SkeletonRecord> skeletons;
  char namebuf[64];

  std::uint64_t sample_counter = 0;
  for (int id = 0; id < config.num_ids; ++id) {
    const PersonSpec spec = PersonSpec::sample(id, config.seed);
    for (int slot = 0; slot < config.clothes_per_id; ++slot) {
      const int clothes_label = id * config.clothes_per_id + slot;
      Rng color_rng(config.seed, 5000 + static_cast<std::uint64_t>(clothes_label));
      const std::array<std::uint8_t, 3> upper = sample_garment_color(color_rng);
      const std::array<std::uint8_t, 3> lower = sample_garment_color(color_rng);

      // split allocation; odd remainders alternate the extra between query
      // and gallery by clothes-slot parity so both stay populated per id
      const int n = config.images_per_clothes;
      std::vector<Split> split_of(static_cast<std::size_t>(n));
      {
        const int n_train = static_cast<int>(std::lround(config.train_frac * n));
        const int rest = n - n_train;
        int n_query = rest / 2, n_gallery = rest / 2;
        if (rest % 2 == 1) {
          if (slot % 2 == 0) {
            ++n_query;
          } else {
            ++n_gallery;
          }
        }
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        layout_rng.shuffle(order);
        for (int i = 0; i < n; ++i) {
          Split s = Split::kTrain;
          if (i >= n_train) s = i < n_train + n_query ? Split::kQuery : Split::kGallery;
          split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = s;
        }
      }

      for (int im = 0; im < n; ++im) {
        const int mode = static_cast<int>(layout_rng.uniform_int(0, kPoseModes - 1));
        const CameraView view = sample_camera(config.num_cameras, layout_rng);

        Rng render_rng(config.seed, 100000 + sample_counter);
        ++sample_counter;
        const PoseAngles pose = sample_pose(mode, render_rng, config.pose_jitter_deg);
        RenderResult r = render(spec, upper, lower, pose, view, render_rng);

        std::snprintf(namebuf, sizeof(namebuf), "images/%03d_%02d_%02d_hq.png", id, slot, im);
        const std::string hq_path = namebuf;
        write_png((fs::path(out_dir) / hq_path).string(), r.image);

        // segmentation mask rides along as a grayscale PNG (label in all
        // channels); the trainer's clothes augmentation consumes it
        Image mask_img(r.mask.height, r.mask.width);
        for (int y = 0; y < r.mask.height; ++y) {
          for (int x = 0; x < r.mask.width; ++x) {
            for (int c = 0; c < 3; ++c) mask_img.at(y, x, c) = r.mask.at(y, x);
          }
        }
        std::snprintf(namebuf, sizeof(namebuf), "images/%03d_%02d_%02d_hq_mask.png", id, slot, im);
        write_png((fs::path(out_dir) / namebuf).string(), mask_img);

        Sample hq;
        hq.path = hq_path;
        hq.id = id;
        hq.clothes = clothes_label;
        hq.camera = view.camera;
        hq.gender = spec.gender;
        hq.tier = Tier::kHQ;
        hq.split = split_of[static_cast<std::size_t>(im)];
        manifest.samples.push_back(hq);
        skeletons.push_back({hq_path, r.skeleton});

        if (config.lq_twins) {
          auto [lq_img, desc] = apply_forced(r.image, config.policy, render_rng);
          std::snprintf(namebuf, sizeof(namebuf), "images/%03d_%02d_%02d_lq.png", id, slot, im);
          const std::string lq_path = namebuf;
          write_png((fs::path(out_dir) / lq_path).string(), lq_img);

          Sample lq = hq;
          lq.path = lq_path;
          lq.tier = Tier::kLQ;
          lq.artifact = desc.to_json();
          manifest.samples.push_back(lq);

          Skeleton noisy = r.skeleton;
          const double conf = artifact_confidence(desc);
          for (auto& kp : noisy.keypoints) kp.confidence *= conf;
          skeletons.push_back({lq_path, noisy});
        }
      }
    }
  }

  manifest.save_jsonl((fs::path(out_dir) / "manifest.jsonl").string());
  save_skeletons_jsonl((fs::path(out_dir) / "skeletons.jsonl").string(), skeletons);
  return {std::move(manifest), out_dir};
}

}  // namespace rlq
