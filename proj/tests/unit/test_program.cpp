#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "xmar/ops.hpp"
#include "xmar/png_io.hpp"
#include "xmar/program.hpp"

using namespace xmar;
using xmar::testing::random_tensor;

TEST_CASE("pad_and_clip pads at the end and truncates from the end") {
  CHECK(pad_and_clip(std::vector<int>{5}, 4, 0) == TokenSequence{5, 0, 0, 0});
  CHECK(pad_and_clip(std::vector<int>{1, 2, 3, 4, 5}, 4, 0) == TokenSequence{1, 2, 3, 4});
  CHECK(pad_and_clip(std::vector<int>{}, 2, 9) == TokenSequence{9, 9});
}

TEST_CASE("patch capacity and origins") {
  CHECK(patch_capacity({384, 384, 3}, 16) == 576);
  CHECK(patch_capacity({64, 64, 3}, 8) == 64);
  CHECK_THROWS_AS(patch_capacity({64, 60, 3}, 8), ConfigError);
  CHECK(patch_origin(0, 2, 4).row == 0);
  CHECK(patch_origin(1, 2, 4).col == 2);
  CHECK(patch_origin(2, 2, 4).row == 2);
  CHECK(patch_origin(2, 2, 4).col == 0);
  // Non-square: rows advance once per full line of width w.
  CHECK(patch_origin(3, 2, 6).row == 2);
  CHECK(patch_origin(3, 2, 6).col == 0);
}

TEST_CASE("select_patch_size picks the largest multiple that holds the longest sequence") {
  CHECK(select_patch_size({384, 384, 3}, 576, 16) == 16);
  CHECK(select_patch_size({384, 384, 3}, 100, 16) == 32);
  CHECK(select_patch_size({64, 64, 3}, 60, 8) == 8);
  CHECK(select_patch_size({64, 64, 3}, 16, 8) == 16);
  CHECK(select_patch_size({64, 64, 3}, 500, 8) == 8);
  CHECK(select_patch_size({64, 64, 3}, 1, 8) == 64);
}

TEST_CASE("4x4 image with 2x2 patches places tokens in raster order") {
  auto prog = make_program<float>(4, {4, 4, 1}, 2, 0, 3, 1.0);
  const TokenSequence seq{1, 2, 3, 0};
  const auto img = embed_image(prog, seq);
  const int rows[4] = {0, 0, 2, 2}, cols[4] = {0, 2, 0, 2};
  for (int k = 0; k < 4; ++k) {
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) {
        const float expect = std::tanh(prog.theta[seq[k] * 4 + r * 2 + c]);
        CHECK(img[(rows[k] + r) * 4 + cols[k] + c] == expect);
      }
    }
  }
}

TEST_CASE("zero theta embeds to a zero image") {
  auto prog = make_program<float>(5, {16, 16, 3}, 4, 0, 1, 0.0);
  const auto img = embed_image(prog, pad_and_clip(std::vector<int>{1, 2, 3}, prog.max_tokens(), 0));
  for (float v : img.data()) CHECK(v == 0.0f);
}

TEST_CASE("embed rejects unpadded sequences and unknown tokens") {
  auto prog = make_program<float>(3, {8, 8, 1}, 4, 0, 1, 0.1);
  CHECK_THROWS_AS(embed_image(prog, TokenSequence{1, 2}), ShapeError);
  CHECK_THROWS_AS(embed_image(prog, TokenSequence{1, 2, 3, 0}), ShapeError);
  CHECK_NOTHROW(embed_image(prog, TokenSequence{1, 2, 2, 0}));
}

TEST_CASE("embed gradient matches finite differences") {
  auto prog = make_program<double>(3, {8, 8, 2}, 4, 0, 1, 0.5);
  const std::vector<TokenSequence> batch{{1, 2, 2, 0}, {0, 0, 1, 1}};
  auto build = [&](Tape<double>&, const std::vector<Var<double>>& v) {
    return xmar::testing::probe_loss(embed(prog, v[0], std::span<const TokenSequence>(batch)));
  };
  CHECK(xmar::testing::gradcheck<double>({prog.theta}, build, 1e-6) < 1e-6);
}

TEST_CASE("conceal: eps = 0 returns the base image, zero base with eps = 1 returns the embedding") {
  std::mt19937_64 rng(3);
  auto prog = make_program<float>(4, {8, 8, 3}, 4, 0, 2, 2.0);
  const TokenSequence seq{1, 3, 2, 0};
  BoundedProgram<float> b{random_tensor<float>({8, 8, 3}, rng), 0.0f};
  CHECK(conceal_image(prog, b, seq) == b.base_image);
  BoundedProgram<float> z{Tensor<float>(Shape{8, 8, 3}), 1.0f};
  CHECK(conceal_image(prog, z, seq) == embed_image(prog, seq));
}

TEST_CASE("conceal stays inside the epsilon ball and the pixel range") {
  std::mt19937_64 rng(17);
  for (int draw = 0; draw < 200; ++draw) {
    auto prog = make_program<float>(5, {8, 8, 3}, 4, 0, draw, 8.0);
    BoundedProgram<float> b{random_tensor<float>({8, 8, 3}, rng), draw % 2 ? 0.1f : 0.5f};
    std::uniform_int_distribution<int> tok(0, 4);
    TokenSequence seq(4);
    for (auto& t : seq) t = tok(rng);
    const auto out = conceal_image(prog, b, seq);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(std::abs(double(out[i]) - double(b.base_image[i])) <= double(b.epsilon));
      CHECK((out[i] >= -1.0f && out[i] <= 1.0f));
    }
  }
}

TEST_CASE("conceal gradient is eps inside the range and zero where saturated") {
  auto prog = make_program<double>(2, {4, 4, 1}, 2, 0, 1, 0.3);
  BoundedProgram<double> b{Tensor<double>(Shape{4, 4, 1}, 0.95), 0.5};
  for (int i = 0; i < 8; ++i) b.base_image[i] = -0.2;
  const std::vector<TokenSequence> batch{{1, 1, 1, 1}};
  auto build = [&](Tape<double>&, const std::vector<Var<double>>& v) {
    return xmar::testing::probe_loss(conceal(b, embed(prog, v[0], std::span<const TokenSequence>(batch))));
  };
  CHECK(xmar::testing::gradcheck<double>({prog.theta}, build, 1e-6) < 1e-6);
}

TEST_CASE("bounded program validation") {
  BoundedProgram<float> b{Tensor<float>(Shape{4, 4, 1}), 1.5f};
  CHECK_THROWS_AS(b.validate({4, 4, 1}), ConfigError);
  b.epsilon = 0.1f;
  b.base_image[0] = 2.0f;
  CHECK_THROWS_AS(b.validate({4, 4, 1}), ConfigError);
  CHECK_THROWS_AS(BoundedProgram<float>({Tensor<float>(Shape{4, 4, 3}), 0.1f}).validate({4, 4, 1}), ShapeError);
}

TEST_CASE("png pixel mapping endpoints and midpoint") {
  CHECK(pixel_byte(-1.0f) == 0);
  CHECK(pixel_byte(1.0f) == 255);
  CHECK(pixel_byte(0.0f) == 128);
  CHECK(pixel_byte(-5.0f) == 0);
  CHECK(pixel_byte(5.0f) == 255);
}

TEST_CASE("png encode/decode round trip for gray and RGB") {
  for (int c : {1, 3}) {
    Tensor<float> img(Shape{5, 7, c});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 256) / 127.5f - 1.0f;
    const auto png = encode_png(img);
    CHECK(png.size() > 8);
    const auto back = decode_png(png);
    CHECK(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(pixel_byte(back[i]) == pixel_byte(img[i]));
  }
  const auto black = decode_png(encode_png(Tensor<float>(Shape{2, 2, 1}, -1.0f)));
  for (float v : black.data()) CHECK(v == -1.0f);
  const auto white = decode_png(encode_png(Tensor<float>(Shape{2, 2, 3}, 1.0f)));
  for (float v : white.data()) CHECK(v == 1.0f);
}

TEST_CASE("png rejects other channel counts and corrupt input") {
  CHECK_THROWS_AS(encode_png(Tensor<float>(Shape{2, 2, 2})), ShapeError);
  CHECK_THROWS_AS(decode_png({1, 2, 3}), ParseError);
  auto png = encode_png(Tensor<float>(Shape{4, 4, 3}, 0.2f));
  png.resize(png.size() / 2);
  CHECK_THROWS_AS(decode_png(png), ParseError);
}

TEST_CASE("anchored png export keeps a concealed image inside the epsilon ball") {
  std::mt19937_64 rng(44);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int draw = 0; draw < 50; ++draw) {
    Tensor<float> base(Shape{8, 8, 3});
    for (auto& v : base.data()) v = static_cast<float>(byte(rng)) / 127.5f - 1.0f;
    auto prog = make_program<float>(4, {8, 8, 3}, 4, 0, draw, 3.0);
    const BoundedProgram<float> b{base, 0.1f};
    const auto out = conceal_image(prog, b, TokenSequence{1, 2, 3, 0});
    const auto back = decode_png(encode_png(out, &base));
    for (std::size_t i = 0; i < out.size(); ++i) {
      const int diff = std::abs(int(pixel_byte(back[i])) - int(pixel_byte(base[i])));
      CHECK(diff <= int(std::floor(0.1 * 127.5)));
    }
  }
  CHECK(pixel_byte_toward(0.006f, 1.0f) == 129);
  CHECK(pixel_byte_toward(0.006f, -1.0f) == 128);
  const Tensor<float> gray(Shape{2, 2, 1});
  CHECK_THROWS_AS(encode_png(Tensor<float>(Shape{2, 2, 3}), &gray), ShapeError);
}
