#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rlq/model.hpp"
#include "rlq/rng.hpp"
#include "rlq/tensor.hpp"

using namespace rlq;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.num_ids = 6;
  c.num_clothes = 8;
  c.num_pose_classes = 16;
  return c;
}

Image random_image(Rng& rng) {
  Image img(64, 32);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

bool any_nonzero(std::span<const double> v) {
  for (double x : v) {
    if (x != 0.0) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("forward on zero input produces finite valid heads") {
  auto params = ModelParams::init(toy_config(), 1);
  Tensor batch = Tensor::zeros({1, static_cast<std::size_t>(params.config.input_dim)});
  GraphScope scope;
  auto r = forward(params, batch, true);

  for (const Tensor* t : {&r.f_bot, &r.f_cal, &r.f_pose, &r.id_logits_bot,
                          &r.id_logits_cal, &r.clothes_logits, &r.gender_logits,
                          &r.pose_logits}) {
    for (double v : t->data()) CHECK(std::isfinite(v));
  }
  for (const Tensor* t : {&r.id_logits_bot, &r.clothes_logits, &r.gender_logits,
                          &r.pose_logits}) {
    Tensor p = softmax(*t);
    double s = 0;
    for (double v : p.data()) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(r.pose_logits.cols() == 16);
}

TEST_CASE("inference feature is the branch concatenation") {
  auto params = ModelParams::init(toy_config(), 2);
  Rng rng(5);
  const Image img = random_image(rng);
  Tensor emb = inference_embeddings(params, {img});
  CHECK(emb.cols() == static_cast<std::size_t>(params.config.embedding_dim()));
  CHECK(emb.cols() == 2 * (2 * static_cast<std::size_t>(params.config.pool_groups)));

  double norm = 0;
  for (double v : emb.data()) norm += v * v;
  CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-9);

  Tensor again = inference_embeddings(params, {img});
  for (std::size_t i = 0; i < emb.size(); ++i) CHECK(emb.data()[i] == again.data()[i]);
}

TEST_CASE("duplicated samples produce identical rows") {
  auto params = ModelParams::init(toy_config(), 3);
  Rng rng(6);
  const Image img = random_image(rng);
  Tensor batch = images_to_batch(params.config, {img, img});
  GraphScope scope;
  auto r = forward(params, batch, true);
  for (const Tensor* t : {&r.f_bot, &r.f_cal, &r.f_pose, &r.id_logits_bot,
                          &r.clothes_logits, &r.pose_logits}) {
    const std::size_t n = t->cols();
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(t->data()[j] == t->data()[n + j]);
    }
  }
}

TEST_CASE("backbone is shared, branch heads are not") {
  auto params = ModelParams::init(toy_config(), 4);
  Rng rng(7);
  Tensor batch = images_to_batch(params.config, {random_image(rng), random_image(rng)});

  std::vector<double> cal_before;
  {
    GraphScope scope;
    auto r = forward(params, batch, false);
    cal_before.assign(r.f_cal.data().begin(), r.f_cal.data().end());
    backward(sum(r.f_bot));  // loss touching only the BOT feature
  }

  CHECK(any_nonzero(params.b1.W.grad()));
  CHECK(any_nonzero(params.b2.W.grad()));
  CHECK(any_nonzero(params.bot3.W.grad()));
  CHECK_FALSE(params.cal3.W.has_grad());
  CHECK_FALSE(params.cal4.W.has_grad());
  CHECK_FALSE(params.id_head_cal.W.has_grad());

  // a step on the shared blocks moves the CAL feature too
  auto g = params.b1.W.grad();
  auto w = params.b1.W.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.05 * g[i];
  {
    GraphScope scope;
    auto r2 = forward(params, batch, false);
    bool moved = false;
    for (std::size_t i = 0; i < cal_before.size(); ++i) {
      moved = moved || r2.f_cal.data()[i] != cal_before[i];
    }
    CHECK(moved);
  }
}

TEST_CASE("pose branch gradients stop at the first block") {
  auto params = ModelParams::init(toy_config(), 8);
  Rng rng(9);
  Tensor batch = images_to_batch(params.config, {random_image(rng), random_image(rng)});
  GraphScope scope;
  auto r = forward(params, batch, true);
  backward(sum(r.f_pose));

  CHECK(any_nonzero(params.b1.W.grad()));
  CHECK(any_nonzero(params.pose2.W.grad()));
  CHECK_FALSE(params.b2.W.has_grad());
  CHECK_FALSE(params.bot3.W.has_grad());
  CHECK_FALSE(params.cal3.W.has_grad());
}

TEST_CASE("maxavg pooling is permutation-invariant within groups") {
  Rng rng(10);
  const std::size_t B = 3, D = 16, G = 4, gs = D / G;
  std::vector<double> x(B * D);
  for (auto& v : x) v = rng.uniform(-1, 1);

  std::vector<double> shuffled = x;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < G; ++g) {
      // rotate members inside each group
      double* grp = &shuffled[b * D + g * gs];
      std::rotate(grp, grp + 1, grp + gs);
    }
  }
  Tensor a = maxavg_pool(Tensor::from_data({B, D}, x), G);
  Tensor b = maxavg_pool(Tensor::from_data({B, D}, shuffled), G);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("clone_frozen yields an immutable twin") {
  auto params = ModelParams::init(toy_config(), 11);
  Rng rng(12);
  const Image img = random_image(rng);

  Tensor before = inference_embeddings(params, {img});
  auto teacher = params.clone_frozen();
  for (const auto& g :
       {"backbone", "bot_branch", "cal_branch", "pose_branch", "id_head_bot",
        "id_head_cal", "clothes_head", "gender_head", "pose_head"}) {
    CHECK(teacher.is_frozen(g));
  }
  const std::uint64_t teacher_sum = teacher.checksum();

  Tensor teacher_out = inference_embeddings(teacher, {img});
  CHECK_FALSE(teacher_out.attached());  // frozen forward records no graph
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(teacher_out.data()[i] == before.data()[i]);
  }

  // single hand-rolled SGD step on the student
  Tensor batch = images_to_batch(params.config, {img});
  {
    GraphScope scope;
    auto r = forward(params, batch, false);
    backward(sum(r.f_bot));
  }
  auto g = params.b1.W.grad();
  auto w = params.b1.W.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.1 * g[i];

  Tensor student_out = inference_embeddings(params, {img});
  bool diverged = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    diverged = diverged || student_out.data()[i] != before.data()[i];
  }
  CHECK(diverged);
  CHECK(teacher.checksum() == teacher_sum);
  Tensor teacher_again = inference_embeddings(teacher, {img});
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(teacher_again.data()[i] == before.data()[i]);
  }
}

TEST_CASE("checkpoint round trip and byte determinism") {
  auto params = ModelParams::init(toy_config(), 13);
  params.set_group_frozen("pose_branch", true);

  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = (dir / "rlq_ckpt_a.bin").string();
  const auto p2 = (dir / "rlq_ckpt_b.bin").string();
  params.save(p1);
  params.save(p2);

  auto read_bytes = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  };
  CHECK(read_bytes(p1) == read_bytes(p2));

  auto loaded = ModelParams::load(p1);
  CHECK(loaded.checksum() == params.checksum());
  CHECK(loaded.config.num_ids == params.config.num_ids);
  CHECK(loaded.is_frozen("pose_branch"));
  CHECK_FALSE(loaded.is_frozen("backbone"));
  CHECK_FALSE(loaded.pose2.W.requires_grad());
  CHECK(loaded.b1.W.requires_grad());

  for (const auto& p : {p1, p2}) {
    std::filesystem::remove(p);
    std::filesystem::remove(p + ".json");
  }
}
