#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xmar/tape.hpp"
#include "xmar/victim.hpp"

namespace xmar {

using TokenSequence = std::vector<int>;

// Exactly max_tokens long: pads with pad_token, or keeps the first max_tokens.
TokenSequence pad_and_clip(std::span<const int> tokens, std::int64_t max_tokens, int pad_token);

std::int64_t patch_capacity(const ImageSpec& image, int patch);

struct PatchOrigin {
  std::int64_t row = 0;
  std::int64_t col = 0;
};

// Top-left corner of token k: col = (k*p) mod w, row = p * floor(k*p / w).
PatchOrigin patch_origin(std::int64_t k, int patch, int width);

// Largest multiple of `multiple` dividing h and w whose capacity still holds
// `longest` tokens; falls back to `multiple` itself (longer inputs are clipped).
int select_patch_size(const ImageSpec& image, std::int64_t longest, int multiple);

template <typename S>
struct AdversarialProgram {
  Tensor<S> theta;  // (|V|, p, p, c)
  ImageSpec image;
  int patch = 8;
  int pad_token = 0;

  int vocab_size() const { return theta.empty() ? 0 : static_cast<int>(theta.dim(0)); }
  std::int64_t max_tokens() const { return patch_capacity(image, patch); }
  void validate() const;
};

// theta ~ U(-init_scale, init_scale); init_scale 0 gives an all-zero program.
template <typename S>
AdversarialProgram<S> make_program(int vocab_size, const ImageSpec& image, int patch, int pad_token, std::uint64_t seed,
                                   double init_scale);

template <typename S>
struct BoundedProgram {
  Tensor<S> base_image;  // (h, w, c) in [-1, 1]
  S epsilon = S(0.1);

  void validate(const ImageSpec& image) const;
};

// Differentiable batch form. `theta` must hold program.theta's shape; every
// sequence must already be padded to max_tokens. Returns (B, h, w, c).
template <typename S>
Var<S> embed(const AdversarialProgram<S>& program, Var<S> theta, std::span<const TokenSequence> batch);

// clip(x_c + eps * embedded, -1, 1) for a (B, h, w, c) batch. The result never
// leaves the eps-ball around x_c, rounding included.
template <typename S>
Var<S> conceal(const BoundedProgram<S>& bounded, Var<S> embedded);

template <typename S>
Tensor<S> embed_image(const AdversarialProgram<S>& program, std::span<const int> padded);
template <typename S>
Tensor<S> conceal_image(const AdversarialProgram<S>& program, const BoundedProgram<S>& bounded,
                        std::span<const int> padded);

}  // namespace xmar
