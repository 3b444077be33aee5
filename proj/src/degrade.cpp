#include "rlq/degrade.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace rlq {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint8_t round_u8(double v) {
  const long r = std::lround(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0L, 255L));
}

}  // namespace

std::string artifact_name(Artifact a) {
  switch (a) {
    case Artifact::kNone: return "none";
    case Artifact::kPixelation: return "pixelation";
    case Artifact::kOofBlur: return "oof_blur";
    case Artifact::kMotionBlur: return "motion_blur";
  }
  throw std::logic_error("artifact_name: bad enum");
}

Artifact artifact_from_name(const std::string& name) {
  if (name == "none") return Artifact::kNone;
  if (name == "pixelation") return Artifact::kPixelation;
  if (name == "oof_blur") return Artifact::kOofBlur;
  if (name == "motion_blur") return Artifact::kMotionBlur;
  throw std::invalid_argument("unknown artifact: " + name);
}

std::string ArtifactDescriptor::to_json() const {
  nlohmann::json j;
  j["kind"] = artifact_name(kind);
  switch (kind) {
    case Artifact::kPixelation:
      j["target"] = pixel_target;
      break;
    case Artifact::kOofBlur:
      j["kernel"] = kernel;
      j["sigma"] = sigma;
      break;
    case Artifact::kMotionBlur:
      j["length"] = length;
      j["angle_deg"] = angle_deg;
      break;
    case Artifact::kNone:
      break;
  }
  return j.dump();
}

ArtifactDescriptor ArtifactDescriptor::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ArtifactDescriptor d;
  d.kind = artifact_from_name(j.at("kind").get<std::string>());
  switch (d.kind) {
    case Artifact::kPixelation:
      d.pixel_target = j.at("target").get<int>();
      break;
    case Artifact::kOofBlur:
      d.kernel = j.at("kernel").get<int>();
      d.sigma = j.at("sigma").get<double>();
      break;
    case Artifact::kMotionBlur:
      d.length = j.at("length").get<int>();
      d.angle_deg = j.at("angle_deg").get<double>();
      break;
    case Artifact::kNone:
      break;
  }
  return d;
}

void ArtifactPolicy::validate() const {
  if (apply_probability < 0.0 || apply_probability > 1.0) {
    throw std::invalid_argument("policy: apply_probability outside [0, 1]");
  }
  if (enabled.empty()) throw std::invalid_argument("policy: no artifact enabled");
  if (pixel_res_lo > pixel_res_hi || oof_kernel_lo > oof_kernel_hi ||
      motion_len_lo > motion_len_hi || motion_angle_lo > motion_angle_hi) {
    throw std::invalid_argument("policy: empty parameter range");
  }
  if (oof_kernel_lo % 2 == 0 || oof_kernel_hi % 2 == 0) {
    throw std::invalid_argument("policy: oof kernel bounds must be odd");
  }
  if (pixel_res_lo < 16 || pixel_res_hi > 64) {
    throw std::invalid_argument("policy: pixelation resolution outside [16, 64]");
  }
  if (oof_kernel_lo < 5 || oof_kernel_hi > 21) {
    throw std::invalid_argument("policy: oof kernel outside [5, 21]");
  }
  if (motion_len_lo < 8 || motion_len_hi > 20) {
    throw std::invalid_argument("policy: motion length outside [8, 20]");
  }
  if (motion_angle_lo < 0.0 || motion_angle_hi > 180.0) {
    throw std::invalid_argument("policy: motion angle outside [0, 180]");
  }
}

std::string ArtifactPolicy::to_json() const {
  nlohmann::json j;
  auto& en = j["enabled"] = nlohmann::json::array();
  for (auto a : enabled) en.push_back(artifact_name(a));
  j["apply_probability"] = apply_probability;
  j["pixel_res_range"] = {pixel_res_lo, pixel_res_hi};
  j["oof_kernel_range"] = {oof_kernel_lo, oof_kernel_hi};
  j["motion_len_range"] = {motion_len_lo, motion_len_hi};
  j["motion_angle_range"] = {motion_angle_lo, motion_angle_hi};
  j["rng_seed"] = rng_seed;
  return j.dump(2);
}

ArtifactPolicy ArtifactPolicy::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ArtifactPolicy p;
  const std::set<std::string> known = {
      "enabled",          "apply_probability", "pixel_res_range",
      "oof_kernel_range", "motion_len_range",  "motion_angle_range",
      "rng_seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("policy: unknown key '" + key + "'");
  }
  if (j.contains("enabled")) {
    p.enabled.clear();
    for (const auto& name : j.at("enabled")) {
      p.enabled.insert(artifact_from_name(name.get<std::string>()));
    }
  }
  if (j.contains("apply_probability")) p.apply_probability = j.at("apply_probability");
  if (j.contains("pixel_res_range")) {
    p.pixel_res_lo = j.at("pixel_res_range").at(0);
    p.pixel_res_hi = j.at("pixel_res_range").at(1);
  }
  if (j.contains("oof_kernel_range")) {
    p.oof_kernel_lo = j.at("oof_kernel_range").at(0);
    p.oof_kernel_hi = j.at("oof_kernel_range").at(1);
  }
  if (j.contains("motion_len_range")) {
    p.motion_len_lo = j.at("motion_len_range").at(0);
    p.motion_len_hi = j.at("motion_len_range").at(1);
  }
  if (j.contains("motion_angle_range")) {
    p.motion_angle_lo = j.at("motion_angle_range").at(0);
    p.motion_angle_hi = j.at("motion_angle_range").at(1);
  }
  if (j.contains("rng_seed")) p.rng_seed = j.at("rng_seed");
  p.validate();
  return p;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: bad output size");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bot = (1.0 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        out.at(y, x, c) = round_u8((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image pixelate(const Image& img, int target) {
  validate_image(img);
  if (target < 16 || target > 64) {
    throw std::invalid_argument("pixelate: target outside [16, 64]");
  }
  const Image small = resize_bilinear(img, target, target);
  return resize_bilinear(small, img.height, img.width);
}

namespace {

std::vector<double> gaussian_kernel_1d(int kernel, double sigma) {
  std::vector<double> w(kernel);
  const int half = kernel / 2;
  double total = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double d = i - half;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

Image oof_blur(const Image& img, int kernel, double sigma) {
  validate_image(img);
  if (kernel % 2 == 0) throw std::invalid_argument("oof_blur: kernel must be odd");
  if (kernel < 5 || kernel > 21) throw std::invalid_argument("oof_blur: kernel outside [5, 21]");
  if (sigma <= 0.0) throw std::invalid_argument("oof_blur: sigma must be positive");

  const auto w = gaussian_kernel_1d(kernel, sigma);
  const int half = kernel / 2;
  const int H = img.height, W = img.width;

  // horizontal pass, float64 intermediate
  std::vector<double> tmp(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k) {
          const int xx = std::clamp(x + k, 0, W - 1);
          acc += w[k + half] * img.at(y, xx, c);
        }
        tmp[(static_cast<std::size_t>(y) * W + x) * 3 + c] = acc;
      }
    }
  }
  // vertical pass, rounded once
  Image out(H, W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k) {
          const int yy = std::clamp(y + k, 0, H - 1);
          acc += w[k + half] * tmp[(static_cast<std::size_t>(yy) * W + x) * 3 + c];
        }
        out.at(y, x, c) = round_u8(acc);
      }
    }
  }
  return out;
}

namespace {

// length x length matrix: zeros with the middle row (index length/2) set to
// one, rotated about the geometric center by bilinear interpolation.
std::vector<double> motion_kernel(int length, double angle_deg) {
  const int L = length;
  std::vector<double> base(static_cast<std::size_t>(L) * L, 0.0);
  const int mid = L / 2;
  for (int x = 0; x < L; ++x) base[static_cast<std::size_t>(mid) * L + x] = 1.0;

  const double theta = angle_deg * kPi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cc = (L - 1) / 2.0;
  std::vector<double> rot(static_cast<std::size_t>(L) * L, 0.0);
  double total = 0.0;
  for (int r = 0; r < L; ++r) {
    for (int c = 0; c < L; ++c) {
      // inverse rotation of the output cell into the unrotated kernel
      const double dx = c - cc, dy = r - cc;
      const double sxf = ct * dx + st * dy + cc;
      const double syf = -st * dx + ct * dy + cc;
      const int x0 = static_cast<int>(std::floor(sxf));
      const int y0 = static_cast<int>(std::floor(syf));
      const double wx = sxf - x0, wy = syf - y0;
      double acc = 0.0;
      for (int oy = 0; oy <= 1; ++oy) {
        for (int ox = 0; ox <= 1; ++ox) {
          const int xx = x0 + ox, yy = y0 + oy;
          if (xx < 0 || xx >= L || yy < 0 || yy >= L) continue;
          const double wgt = (ox ? wx : 1.0 - wx) * (oy ? wy : 1.0 - wy);
          acc += wgt * base[static_cast<std::size_t>(yy) * L + xx];
        }
      }
      rot[static_cast<std::size_t>(r) * L + c] = acc;
      total += acc;
    }
  }
  if (total <= 0.0) throw std::logic_error("motion kernel lost all mass");
  for (auto& v : rot) v /= total;
  return rot;
}

}  // namespace

Image motion_blur(const Image& img, int length, double angle_deg) {
  validate_image(img);
  if (length != 1 && (length < 8 || length > 20)) {
    throw std::invalid_argument("motion_blur: length outside [8, 20]");
  }
  if (angle_deg < 0.0 || angle_deg > 180.0) {
    throw std::invalid_argument("motion_blur: angle outside [0, 180]");
  }
  const auto ker = motion_kernel(length, angle_deg);
  const int L = length;
  const int anchor = (L - 1) / 2;
  const int H = img.height, W = img.width;
  Image out(H, W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int r = 0; r < L; ++r) {
        const int yy = std::clamp(y + r - anchor, 0, H - 1);
        for (int c = 0; c < L; ++c) {
          const double kv = ker[static_cast<std::size_t>(r) * L + c];
          if (kv == 0.0) continue;
          const int xx = std::clamp(x + c - anchor, 0, W - 1);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += kv * img.at(yy, xx, ch);
        }
      }
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = round_u8(acc[ch]);
    }
  }
  return out;
}

namespace {

std::pair<Image, ArtifactDescriptor> apply_one(const Image& img,
                                               const ArtifactPolicy& policy,
                                               Rng& rng) {
  const std::vector<Artifact> menu(policy.enabled.begin(), policy.enabled.end());
  const auto pick = menu[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(menu.size()) - 1))];
  ArtifactDescriptor d;
  d.kind = pick;
  switch (pick) {
    case Artifact::kPixelation: {
      d.pixel_target = static_cast<int>(rng.uniform_int(policy.pixel_res_lo, policy.pixel_res_hi));
      return {pixelate(img, d.pixel_target), d};
    }
    case Artifact::kOofBlur: {
      const int n_odd = (policy.oof_kernel_hi - policy.oof_kernel_lo) / 2;
      d.kernel = policy.oof_kernel_lo + 2 * static_cast<int>(rng.uniform_int(0, n_odd));
      d.sigma = d.kernel / 6.0;
      return {oof_blur(img, d.kernel, d.sigma), d};
    }
    case Artifact::kMotionBlur: {
      d.length = static_cast<int>(rng.uniform_int(policy.motion_len_lo, policy.motion_len_hi));
      d.angle_deg = rng.uniform(policy.motion_angle_lo, policy.motion_angle_hi);
      return {motion_blur(img, d.length, d.angle_deg), d};
    }
    case Artifact::kNone:
      break;
  }
  throw std::logic_error("apply_one: bad artifact");
}

}  // namespace

std::pair<Image, ArtifactDescriptor> apply_policy(const Image& img,
                                                  const ArtifactPolicy& policy,
                                                  Rng& rng) {
  policy.validate();
  validate_image(img);
  if (!rng.bernoulli(policy.apply_probability)) {
    return {img, ArtifactDescriptor{}};
  }
  return apply_one(img, policy, rng);
}

std::pair<Image, ArtifactDescriptor> apply_forced(const Image& img,
                                                  const ArtifactPolicy& policy,
                                                  Rng& rng) {
  policy.validate();
  validate_image(img);
  return apply_one(img, policy, rng);
}

double laplacian_variance(const Image& img) {
  const int H = img.height, W = img.width;
  std::vector<double> gray(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      gray[static_cast<std::size_t>(y) * W + x] =
          0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    }
  }
  double mean = 0.0;
  std::vector<double> lap;
  lap.reserve(static_cast<std::size_t>((H - 2)) * (W - 2));
  for (int y = 1; y < H - 1; ++y) {
    for (int x = 1; x < W - 1; ++x) {
      const auto at = [&](int yy, int xx) { return gray[static_cast<std::size_t>(yy) * W + xx]; };
      const double v = at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x);
      lap.push_back(v);
      mean += v;
    }
  }
  mean /= static_cast<double>(lap.size());
  double var = 0.0;
  for (double v : lap) var += (v - mean) * (v - mean);
  return var / static_cast<double>(lap.size());
}

}  // namespace rlq
