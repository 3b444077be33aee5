#include "rlq/model.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rlq/rng.hpp"

namespace rlq {

Tensor affine(const Tensor& x, const Dense& layer) {
  Tensor ones = Tensor::full({x.rows(), 1}, 1.0);
  return add(matmul(x, layer.W), matmul(ones, layer.b));
}

Tensor maxavg_pool(const Tensor& x, std::size_t groups) {
  const std::size_t B = x.rows(), D = x.cols();
  if (D % groups != 0) {
    throw std::invalid_argument("maxavg_pool: feature dim not divisible by groups");
  }
  const std::size_t gs = D / groups;
  Tensor grouped = reshape(x, {B * groups, gs});
  Tensor mx = reshape(max_over_axis(grouped, 1), {B, groups});
  Tensor av = reshape(mean(grouped, 1), {B, groups});
  return concat_cols(mx, av);
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["input_dim"] = input_dim;
  j["b1_dim"] = b1_dim;
  j["b2_dim"] = b2_dim;
  j["branch_dim"] = branch_dim;
  j["pool_groups"] = pool_groups;
  j["num_ids"] = num_ids;
  j["num_clothes"] = num_clothes;
  j["num_pose_classes"] = num_pose_classes;
  j["norm_mean"] = norm_mean;
  j["norm_std"] = norm_std;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ModelConfig c;
  c.input_dim = j.at("input_dim");
  c.b1_dim = j.at("b1_dim");
  c.b2_dim = j.at("b2_dim");
  c.branch_dim = j.at("branch_dim");
  c.pool_groups = j.at("pool_groups");
  c.num_ids = j.at("num_ids");
  c.num_clothes = j.at("num_clothes");
  c.num_pose_classes = j.at("num_pose_classes");
  c.norm_mean = j.at("norm_mean");
  c.norm_std = j.at("norm_std");
  return c;
}

namespace {

Dense init_dense(Rng& rng, int in, int out, double weight_scale) {
  std::vector<double> w(static_cast<std::size_t>(in) * out);
  for (auto& v : w) v = rng.normal(0.0, weight_scale);
  Dense d;
  d.W = Tensor::from_data({static_cast<std::size_t>(in), static_cast<std::size_t>(out)},
                          std::move(w), true);
  d.b = Tensor::zeros({1, static_cast<std::size_t>(out)}, true);
  return d;
}

Dense copy_dense(const Dense& src, bool requires_grad) {
  Dense d;
  d.W = src.W.detach();
  d.b = src.b.detach();
  d.W.set_requires_grad(requires_grad);
  d.b.set_requires_grad(requires_grad);
  return d;
}

double he_scale(int fan_in) { return std::sqrt(2.0 / fan_in); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  if (config.num_ids <= 0 || config.num_clothes <= 0) {
    throw std::invalid_argument("ModelParams::init: class counts must be set");
  }
  Rng rng(seed);
  ModelParams p;
  p.config = config;
  p.b1 = init_dense(rng, config.input_dim, config.b1_dim, he_scale(config.input_dim));
  p.b2 = init_dense(rng, config.b1_dim, config.b2_dim, he_scale(config.b1_dim));

  // branches start as identical copies of one shared split point
  Dense block3 = init_dense(rng, config.b2_dim, config.branch_dim, he_scale(config.b2_dim));
  Dense block4 = init_dense(rng, config.branch_dim, config.branch_dim, he_scale(config.branch_dim));
  p.bot3 = copy_dense(block3, true);
  p.bot4 = copy_dense(block4, true);
  p.cal3 = copy_dense(block3, true);
  p.cal4 = copy_dense(block4, true);

  p.pose2 = init_dense(rng, config.b1_dim, config.b2_dim, he_scale(config.b1_dim));
  p.pose3 = copy_dense(block3, true);
  p.pose4 = copy_dense(block4, true);

  const int feat = config.branch_feature_dim();
  const double head_scale = std::sqrt(1.0 / feat);
  p.id_head_bot = init_dense(rng, feat, config.num_ids, head_scale);
  p.id_head_cal = init_dense(rng, feat, config.num_ids, head_scale);
  p.clothes_head = init_dense(rng, feat, config.num_clothes, head_scale);
  p.gender_head = init_dense(rng, feat, 2, head_scale);
  p.pose_head = init_dense(rng, feat, config.num_pose_classes, head_scale);
  return p;
}

namespace {

struct ParamEntry {
  const char* group;
  const char* name;
  Dense ModelParams::*dense;
};

// declaration order: the checkpoint layout contract
constexpr ParamEntry kEntries[] = {
    {"backbone", "b1", &ModelParams::b1},
    {"backbone", "b2", &ModelParams::b2},
    {"bot_branch", "bot3", &ModelParams::bot3},
    {"bot_branch", "bot4", &ModelParams::bot4},
    {"cal_branch", "cal3", &ModelParams::cal3},
    {"cal_branch", "cal4", &ModelParams::cal4},
    {"pose_branch", "pose2", &ModelParams::pose2},
    {"pose_branch", "pose3", &ModelParams::pose3},
    {"pose_branch", "pose4", &ModelParams::pose4},
    {"id_head_bot", "id_head_bot", &ModelParams::id_head_bot},
    {"id_head_cal", "id_head_cal", &ModelParams::id_head_cal},
    {"clothes_head", "clothes_head", &ModelParams::clothes_head},
    {"gender_head", "gender_head", &ModelParams::gender_head},
    {"pose_head", "pose_head", &ModelParams::pose_head},
};

const std::set<std::string> kGroups = {
    "backbone",    "bot_branch",  "cal_branch",   "pose_branch", "id_head_bot",
    "id_head_cal", "clothes_head", "gender_head", "pose_head"};

}  // namespace

void ModelParams::for_each_param(
    const std::function<void(const std::string&, const std::string&, Tensor&)>& fn) {
  for (const auto& e : kEntries) {
    fn(e.group, std::string(e.name) + ".W", (this->*e.dense).W);
    fn(e.group, std::string(e.name) + ".b", (this->*e.dense).b);
  }
}

void ModelParams::for_each_param(
    const std::function<void(const std::string&, const std::string&, const Tensor&)>& fn)
    const {
  for (const auto& e : kEntries) {
    fn(e.group, std::string(e.name) + ".W", (this->*e.dense).W);
    fn(e.group, std::string(e.name) + ".b", (this->*e.dense).b);
  }
}

ModelParams ModelParams::clone_frozen() const {
  ModelParams copy;
  copy.config = config;
  for (const auto& e : kEntries) {
    (copy.*e.dense) = copy_dense(this->*e.dense, false);
  }
  copy.frozen_groups = kGroups;
  return copy;
}

ModelParams ModelParams::clone_trainable() const {
  ModelParams copy;
  copy.config = config;
  for (const auto& e : kEntries) {
    (copy.*e.dense) = copy_dense(this->*e.dense, true);
  }
  return copy;
}

void ModelParams::set_group_frozen(const std::string& group, bool frozen) {
  if (!kGroups.count(group)) {
    throw std::invalid_argument("unknown parameter group: " + group);
  }
  if (frozen) {
    frozen_groups.insert(group);
  } else {
    frozen_groups.erase(group);
  }
  for_each_param([&](const std::string& g, const std::string&, Tensor& t) {
    if (g == group) t.set_requires_grad(!frozen);
  });
}

bool ModelParams::is_frozen(const std::string& group) const {
  return frozen_groups.count(group) > 0;
}

std::uint64_t ModelParams::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV offset basis
  auto mix = [&h](const void* ptr, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(ptr);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for_each_param([&](const std::string&, const std::string&, const Tensor& t) {
    mix(t.data().data(), t.data().size() * sizeof(double));
  });
  return h;
}

// ---- forward ----------------------------------------------------------------

ForwardResult forward(ModelParams& p, const Tensor& batch, bool with_pose) {
  if (batch.shape().size() != 2 ||
      batch.cols() != static_cast<std::size_t>(p.config.input_dim)) {
    throw std::invalid_argument("forward: batch must be [B x input_dim]");
  }
  const auto groups = static_cast<std::size_t>(p.config.pool_groups);

  Tensor h1 = relu(affine(batch, p.b1));
  Tensor h2 = relu(affine(h1, p.b2));

  Tensor bot_hidden = relu(affine(relu(affine(h2, p.bot3)), p.bot4));
  Tensor cal_hidden = relu(affine(relu(affine(h2, p.cal3)), p.cal4));

  ForwardResult out;
  out.f_bot = maxavg_pool(bot_hidden, groups);
  out.f_cal = maxavg_pool(cal_hidden, groups);
  out.id_logits_bot = affine(out.f_bot, p.id_head_bot);
  out.id_logits_cal = affine(out.f_cal, p.id_head_cal);
  out.clothes_logits = affine(out.f_cal, p.clothes_head);
  out.gender_logits = affine(out.f_bot, p.gender_head);

  if (with_pose) {
    Tensor p2 = relu(affine(h1, p.pose2));
    Tensor pose_hidden = relu(affine(relu(affine(p2, p.pose3)), p.pose4));
    out.f_pose = maxavg_pool(pose_hidden, groups);
    out.pose_logits = affine(out.f_pose, p.pose_head);
  }
  return out;
}

Tensor images_to_batch(const ModelConfig& config, const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_batch: empty batch");
  const std::size_t per = static_cast<std::size_t>(config.input_dim);
  std::vector<double> data(images.size() * per);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (static_cast<int>(img.data.size()) != config.input_dim) {
      throw std::invalid_argument("images_to_batch: image size mismatch");
    }
    for (std::size_t j = 0; j < per; ++j) {
      const int c = static_cast<int>(j % 3);
      data[i * per + j] = (img.data[j] - config.norm_mean[static_cast<std::size_t>(c)]) /
                          config.norm_std[static_cast<std::size_t>(c)];
    }
  }
  return Tensor::from_data({images.size(), per}, std::move(data));
}

Tensor inference_embeddings(ModelParams& params, const std::vector<Image>& images) {
  NoGradScope no_grad;
  Tensor batch = images_to_batch(params.config, images);
  ForwardResult r = forward(params, batch, /*with_pose=*/false);
  return l2_normalize(concat_cols(r.f_bot, r.f_cal));
}

// ---- checkpoint I/O -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'L', 'Q', '1'};

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void ModelParams::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(kMagic, 4);

  std::uint32_t count = 0;
  for_each_param([&](const std::string&, const std::string&, const Tensor&) { ++count; });
  write_pod(f, count);

  // dimension table
  for_each_param([&](const std::string&, const std::string& name, const Tensor& t) {
    write_pod(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(f, static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) write_pod(f, static_cast<std::uint64_t>(e));
  });

  // float64 buffers in declaration order
  for_each_param([&](const std::string&, const std::string&, const Tensor& t) {
    f.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  });
  if (!f) throw std::runtime_error("checkpoint: short write to " + path);

  nlohmann::json side;
  side["architecture"] = nlohmann::json::parse(config.to_json());
  side["frozen_groups"] = frozen_groups;
  std::ofstream sf(path + ".json", std::ios::trunc);
  if (!sf) throw std::runtime_error("checkpoint: cannot write sidecar for " + path);
  sf << side.dump(2) << "\n";
}

ModelParams ModelParams::load(const std::string& path) {
  std::ifstream sf(path + ".json");
  if (!sf) throw std::runtime_error("checkpoint: missing sidecar " + path + ".json");
  std::stringstream ss;
  ss << sf.rdbuf();
  const auto side = nlohmann::json::parse(ss.str());
  ModelConfig config = ModelConfig::from_json(side.at("architecture").dump());

  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }

  // seed of the param structure; every tensor is overwritten below
  ModelParams params = ModelParams::init(config, 0);

  const auto count = read_pod<std::uint32_t>(f);
  std::vector<std::pair<std::string, Shape>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(f);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(f)));
    }
    table.emplace_back(std::move(name), std::move(shape));
  }

  std::size_t idx = 0;
  params.for_each_param([&](const std::string&, const std::string& name, Tensor& t) {
    if (idx >= table.size() || table[idx].first != name || table[idx].second != t.shape()) {
      throw std::runtime_error("checkpoint: table mismatch at " + name);
    }
    auto dst = t.mutable_data();
    f.read(reinterpret_cast<char*>(dst.data()),
           static_cast<std::streamsize>(dst.size() * sizeof(double)));
    ++idx;
  });
  if (!f) throw std::runtime_error("checkpoint: truncated buffers in " + path);

  params.frozen_groups.clear();
  for (const auto& g : side.at("frozen_groups")) {
    params.set_group_frozen(g.get<std::string>(), true);
  }
  return params;
}

}  // namespace rlq
