#include <random>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "xmar/ops.hpp"
#include "xmar/runtime.hpp"
#include "xmar/shapes.hpp"
#include "xmar/victim.hpp"

using namespace xmar;
using xmar::testing::random_tensor;

namespace {

Tensor<float> random_images(const ImageSpec& im, std::int64_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor<float>(im.batch_shape(batch), rng);
}

}  // namespace

TEST_CASE("build_victim is deterministic per seed") {
  const ImageSpec im{64, 64, 3};
  auto a = build_victim<float>(VictimArch::kSmallCnn, im, 10, 7);
  auto b = build_victim<float>(VictimArch::kSmallCnn, im, 10, 7);
  auto c = build_victim<float>(VictimArch::kSmallCnn, im, 10, 8);
  CHECK(a.weights == b.weights);
  CHECK_FALSE(a.weights == c.weights);
  CHECK(victim_digest(a) == victim_digest(b));
}

TEST_CASE("parameter counts match the documented formulas") {
  for (auto arch : {VictimArch::kSmallCnn, VictimArch::kPatchTransformer, VictimArch::kTwoLayer}) {
    for (const ImageSpec im : {ImageSpec{64, 64, 3}, ImageSpec{32, 48, 1}, ImageSpec{16, 16, 3}}) {
      for (int labels : {2, 10}) {
        CAPTURE(to_string(arch));
        auto m = build_victim<float>(arch, im, labels, 1);
        CHECK(m.parameter_count() == parameter_count(arch, im, labels));
      }
    }
  }
  // Worked values at the default spec.
  CHECK(parameter_count(VictimArch::kSmallCnn, {64, 64, 3}, 10) == 224 + 1168 + 3136 * 10 + 10);
  CHECK(parameter_count(VictimArch::kPatchTransformer, {64, 64, 3}, 10) ==
        6144 + 32 + 32 + 65 * 32 + 2 * 8544 + 330);
}

TEST_CASE("patch-transformer at 64x64 uses 64 patch tokens plus a class token") {
  auto m = build_victim<float>(VictimArch::kPatchTransformer, {64, 64, 3}, 10, 3);
  CHECK(m.weight("pos").shape() == Shape{65, 32});
  CHECK(m.weight("cls").shape() == Shape{1, 32});
}

TEST_CASE("invalid victim specs are rejected") {
  CHECK_THROWS_AS(build_victim<float>(VictimArch::kPatchTransformer, {60, 64, 3}, 10, 1), ConfigError);
  CHECK_THROWS_AS(build_victim<float>(VictimArch::kSmallCnn, {15, 64, 3}, 10, 1), ConfigError);
  CHECK_THROWS_AS(build_victim<float>(VictimArch::kSmallCnn, {64, 64, 0}, 10, 1), ConfigError);
  CHECK_THROWS_AS(parse_victim_arch("resnet"), ConfigError);
}

TEST_CASE("zeroed final layer gives all-zero logits") {
  for (auto arch : {VictimArch::kSmallCnn, VictimArch::kPatchTransformer, VictimArch::kTwoLayer}) {
    auto m = build_victim<float>(arch, {64, 64, 3}, 10, 5);
    m.weight("head.w").fill(0.0f);
    m.weight("head.b").fill(0.0f);
    const auto logits = m.logits(Tensor<float>(m.image.batch_shape(1)));
    CHECK(logits.shape() == Shape{1, 10});
    for (float v : logits.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("logits do not depend on the rest of the batch") {
  for (auto arch : {VictimArch::kSmallCnn, VictimArch::kPatchTransformer}) {
    CAPTURE(to_string(arch));
    auto m = build_victim<float>(arch, {64, 64, 3}, 10, 9);
    const auto batch = random_images(m.image, 4, 21);
    const auto per = static_cast<std::size_t>(m.image.pixels());
    Tensor<float> single(m.image.batch_shape(1));
    std::copy_n(batch.data().begin() + 2 * per, per, single.data().begin());
    const auto all = m.logits(batch);
    const auto one = m.logits(single);
    for (int k = 0; k < 10; ++k) CHECK(one[k] == doctest::Approx(all[2 * 10 + k]).epsilon(1e-5));
    // Querying twice is pure.
    CHECK(m.logits(batch) == all);
  }
}

TEST_CASE("input gradients of the victims match finite differences") {
  for (auto arch : {VictimArch::kSmallCnn, VictimArch::kPatchTransformer, VictimArch::kTwoLayer}) {
    CAPTURE(to_string(arch));
    const ImageSpec im{16, 16, 3};
    const auto m = cast_victim<double>(build_victim<float>(arch, im, 4, 13));
    std::mt19937_64 rng(4);
    std::vector<Tensor<double>> inputs{random_tensor<double>(im.batch_shape(2), rng, -0.9, 0.9)};
    for (int logit = 0; logit < 4; ++logit) {
      auto build = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
        const std::vector<std::vector<int>> pick{{logit}};
        return ops::sum(ops::max_over_indices(m.forward(tape, v[0]), pick));
      };
      CHECK(xmar::testing::gradcheck<double>(inputs, build, 1e-6) < 1e-3);
    }
  }
}

TEST_CASE("frozen victims never bind trainable weights") {
  auto m = build_victim<float>(VictimArch::kTwoLayer, {8, 8, 1}, 3, 1);
  m.frozen = true;
  Tape<float> tape;
  CHECK_THROWS_AS(m.bind(tape, true), Error);
  ShapesTask task;
  task.image = m.image;
  task.num_classes = 3;
  CHECK_THROWS_AS(pretrain_victim(m, task, {}), Error);
}

TEST_CASE("checked mode rejects pixels outside [-1, 1]") {
  auto m = build_victim<float>(VictimArch::kTwoLayer, {8, 8, 1}, 3, 1);
  Tensor<float> x(m.image.batch_shape(1), 0.5f);
  x[3] = 1.5f;
  runtime::set_checked(true);
  CHECK_THROWS_AS(m.logits(x), NumericError);
  runtime::set_checked(false);
  CHECK_NOTHROW(m.logits(x));
}

TEST_CASE("victim checkpoints round-trip") {
  auto m = build_victim<float>(VictimArch::kPatchTransformer, {32, 32, 3}, 10, 4);
  m.frozen = true;
  const auto ck = decode_checkpoint(encode_checkpoint(victim_to_checkpoint(m, {{"seed", 4}, {"holdout_accuracy", 0.5}})));
  CHECK(ck.meta["seed"] == 4);
  CHECK(ck.meta["arch"] == "patch-transformer");
  const auto back = victim_from_checkpoint(ck);
  CHECK(back.weights == m.weights);
  CHECK(back.image == m.image);
  CHECK(back.frozen);
  CHECK(victim_digest(back) == victim_digest(m));
}

TEST_CASE("synthetic shapes are a pure function of (seed, index) with exact balance") {
  ShapesTask task;
  task.seed = 5;
  const auto a = render_shape(task, 123);
  const auto b = render_shape(task, 123);
  CHECK(a.image == b.image);
  CHECK(a.label == 3);
  for (float v : a.image.data()) CHECK((v >= -1.0f && v <= 1.0f));
  std::vector<int> labels;
  render_batch(task, kHoldoutOffset, 50, &labels);
  std::vector<int> counts(10);
  for (int l : labels) ++counts[l];
  for (int c : counts) CHECK(c == 5);
  ShapesTask other = task;
  other.seed = 6;
  CHECK_FALSE(render_shape(other, 123).image == a.image);
}

TEST_CASE("zero pretraining epochs leave the victim at chance") {
  ShapesTask task;
  task.seed = 2;
  for (auto arch : {VictimArch::kSmallCnn, VictimArch::kPatchTransformer}) {
    auto m = build_victim<float>(arch, task.image, 10, 3);
    PretrainOptions opt;
    opt.epochs = 0;
    opt.holdout_samples = 200;
    const auto report = pretrain_victim(m, task, opt);
    CHECK(std::abs(report.holdout_accuracy - 0.1) <= 0.1);
    CHECK(m.frozen);
  }
}

TEST_CASE("pretraining is reproducible") {
  ShapesTask task;
  task.seed = 8;
  task.image = {16, 16, 3};
  PretrainOptions opt;
  opt.epochs = 1;
  opt.train_samples = 80;
  opt.holdout_samples = 40;
  auto a = build_victim<float>(VictimArch::kSmallCnn, task.image, 10, 1);
  auto b = build_victim<float>(VictimArch::kSmallCnn, task.image, 10, 1);
  const auto ra = pretrain_victim(a, task, opt);
  const auto rb = pretrain_victim(b, task, opt);
  CHECK(ra.holdout_accuracy == rb.holdout_accuracy);
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(a.weights == b.weights);
}

TEST_CASE("slow: pretraining reaches the held-out accuracy targets") {
  ShapesTask task;
  task.seed = 1;
  PretrainOptions opt;  // 5 epochs x 2000 samples
  auto cnn = build_victim<float>(VictimArch::kSmallCnn, task.image, 10, 7);
  CHECK(pretrain_victim(cnn, task, opt).holdout_accuracy >= 0.95);
  auto vit = build_victim<float>(VictimArch::kPatchTransformer, task.image, 10, 7);
  CHECK(pretrain_victim(vit, task, opt).holdout_accuracy >= 0.90);
}
