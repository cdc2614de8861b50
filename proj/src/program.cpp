#include "xmar/program.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "xmar/ops.hpp"

namespace xmar {
namespace {

template <typename S>
void check_padded(const AdversarialProgram<S>& program, std::span<const int> seq) {
  if (static_cast<std::int64_t>(seq.size()) != program.max_tokens()) {
    throw ShapeError("embed: sequence has " + std::to_string(seq.size()) + " tokens, expected exactly " +
                     std::to_string(program.max_tokens()) + " (pad_and_clip first)");
  }
  for (int t : seq) {
    if (t < 0 || t >= program.vocab_size()) {
      throw ShapeError("embed: token " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(program.vocab_size()));
    }
  }
}

// (B*N, p, p, c) patches -> (B, h, w, c) image batch, token k of each image at
// patch_origin(k).
template <typename S>
Var<S> tile_patches(Var<S> patches, std::int64_t batch, const ImageSpec& im, int p) {
  const std::int64_t n = patch_capacity(im, p);
  const std::int64_t row_len = std::int64_t(p) * im.c;
  Tensor<S> out(im.batch_shape(batch));
  std::vector<std::int64_t> offsets(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    const auto o = patch_origin(k, p, im.w);
    offsets[k] = (o.row * im.w + o.col) * im.c;
  }
  const std::int64_t image_len = im.pixels();
  const std::int64_t patch_len = std::int64_t(p) * p * im.c;
  const S* src = patches.value().data().data();
  S* dst = out.data().data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t k = 0; k < n; ++k) {
      const S* ps = src + (b * n + k) * patch_len;
      S* base = dst + b * image_len + offsets[k];
      for (int r = 0; r < p; ++r) std::copy_n(ps + r * row_len, row_len, base + std::int64_t(r) * im.w * im.c);
    }
  }
  return patches.tape->record(
      std::move(out), {patches.id},
      [pi = patches.id, offsets = std::move(offsets), batch, n, row_len, image_len, patch_len, p,
       stride = std::int64_t(im.w) * im.c](Tape<S>& t, std::size_t self) {
        const S* g = t.grad(self).data().data();
        S* d = t.grad_buffer(pi)->data().data();
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t k = 0; k < n; ++k) {
            S* pd = d + (b * n + k) * patch_len;
            const S* base = g + b * image_len + offsets[k];
            for (int r = 0; r < p; ++r) {
              const S* row = base + r * stride;
              for (std::int64_t j = 0; j < row_len; ++j) pd[r * row_len + j] += row[j];
            }
          }
        }
      });
}

}  // namespace

TokenSequence pad_and_clip(std::span<const int> tokens, std::int64_t max_tokens, int pad_token) {
  if (max_tokens < 0) throw ConfigError("pad_and_clip: negative max_tokens");
  if (pad_token < 0) throw ConfigError("pad_and_clip: negative pad token");
  TokenSequence out(static_cast<std::size_t>(max_tokens), pad_token);
  std::copy_n(tokens.begin(), std::min<std::size_t>(tokens.size(), out.size()), out.begin());
  return out;
}

std::int64_t patch_capacity(const ImageSpec& image, int patch) {
  if (patch <= 0 || image.h % patch != 0 || image.w % patch != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " must divide the image " + std::to_string(image.h) +
                      "x" + std::to_string(image.w));
  }
  return std::int64_t(image.h / patch) * (image.w / patch);
}

PatchOrigin patch_origin(std::int64_t k, int patch, int width) {
  const std::int64_t off = k * patch;
  return {patch * (off / width), off % width};
}

int select_patch_size(const ImageSpec& image, std::int64_t longest, int multiple) {
  if (multiple <= 0 || image.h % multiple != 0 || image.w % multiple != 0) {
    throw ConfigError("patch multiple " + std::to_string(multiple) + " must divide the image " +
                      std::to_string(image.h) + "x" + std::to_string(image.w));
  }
  int best = multiple;
  for (int p = multiple; p <= std::min(image.h, image.w); p += multiple) {
    if (image.h % p == 0 && image.w % p == 0 && patch_capacity(image, p) >= longest) best = p;
  }
  return best;
}

template <typename S>
void AdversarialProgram<S>::validate() const {
  patch_capacity(image, patch);  // throws on indivisible dims
  const Shape expected{theta.empty() ? 0 : theta.dim(0), patch, patch, image.c};
  if (theta.rank() != 4 || theta.shape() != expected) {
    throw ShapeError("adversarial program: theta has shape " + to_string(theta.shape()) + ", expected (|V|, " +
                     std::to_string(patch) + ", " + std::to_string(patch) + ", " + std::to_string(image.c) + ")");
  }
  if (pad_token < 0 || pad_token >= vocab_size()) throw ConfigError("adversarial program: pad token out of range");
}

template <typename S>
AdversarialProgram<S> make_program(int vocab_size, const ImageSpec& image, int patch, int pad_token,
                                   std::uint64_t seed, double init_scale) {
  if (vocab_size < 1) throw ConfigError("adversarial program: empty vocabulary");
  AdversarialProgram<S> prog;
  prog.image = image;
  prog.patch = patch;
  prog.pad_token = pad_token;
  prog.theta = Tensor<S>(Shape{vocab_size, patch, patch, image.c});
  if (init_scale > 0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-init_scale, init_scale);
    for (auto& v : prog.theta.data()) v = static_cast<S>(dist(rng));
  }
  prog.validate();
  return prog;
}

template <typename S>
void BoundedProgram<S>::validate(const ImageSpec& image) const {
  if (!(epsilon >= S{0} && epsilon <= S{1})) throw ConfigError("bounded program: epsilon must lie in [0, 1]");
  if (base_image.shape() != image.shape()) {
    throw ShapeError("bounded program: base image shape " + to_string(base_image.shape()) + " differs from " +
                     to_string(image.shape()));
  }
  for (S v : base_image.data()) {
    if (!(v >= S{-1} && v <= S{1})) throw ConfigError("bounded program: base image values must lie in [-1, 1]");
  }
}

template <typename S>
Var<S> embed(const AdversarialProgram<S>& program, Var<S> theta, std::span<const TokenSequence> batch) {
  if (theta.shape() != program.theta.shape()) {
    throw ShapeError("embed: theta shape " + to_string(theta.shape()) + " differs from the program's " +
                     to_string(program.theta.shape()));
  }
  if (batch.empty()) throw ShapeError("embed: empty batch");
  std::vector<int> flat;
  flat.reserve(batch.size() * static_cast<std::size_t>(program.max_tokens()));
  for (const auto& seq : batch) {
    check_padded(program, seq);
    flat.insert(flat.end(), seq.begin(), seq.end());
  }
  auto patches = ops::tanh(ops::gather_rows<S>(theta, flat));
  return tile_patches(patches, static_cast<std::int64_t>(batch.size()), program.image, program.patch);
}

template <typename S>
Var<S> conceal(const BoundedProgram<S>& bounded, Var<S> embedded) {
  const Shape& es = embedded.shape();
  if (es.size() != 4 || Shape(es.begin() + 1, es.end()) != bounded.base_image.shape()) {
    throw ShapeError("conceal: embedded batch " + to_string(es) + " does not match base image " +
                     to_string(bounded.base_image.shape()));
  }
  const S eps = bounded.epsilon;
  const auto per = static_cast<std::size_t>(bounded.base_image.size());
  const S* xc = bounded.base_image.data().data();
  const S* e = embedded.value().data().data();
  Tensor<S> out(es);
  std::vector<unsigned char> active(out.size());
  S* o = out.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S base = xc[i % per];
    const S raw = base + eps * e[i];
    active[i] = raw >= S{-1} && raw <= S{1};
    S v = std::clamp(raw, S{-1}, S{1});
    // Rounding in base + eps*e can land one ulp outside the eps-ball.
    while (static_cast<long double>(v) - base > static_cast<long double>(eps)) v = std::nextafter(v, base);
    while (static_cast<long double>(base) - v > static_cast<long double>(eps)) v = std::nextafter(v, base);
    o[i] = v;
  }
  return embedded.tape->record(std::move(out), {embedded.id},
                               [ei = embedded.id, eps, active = std::move(active)](Tape<S>& t, std::size_t self) {
                                 const Tensor<S>& g = t.grad(self);
                                 Tensor<S>* d = t.grad_buffer(ei);
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   if (active[i]) (*d)[i] += eps * g[i];
                                 }
                               });
}

template <typename S>
Tensor<S> embed_image(const AdversarialProgram<S>& program, std::span<const int> padded) {
  Tape<S> tape;
  const std::vector<TokenSequence> batch{TokenSequence(padded.begin(), padded.end())};
  return embed(program, tape.constant(program.theta), batch).value().reshaped(program.image.shape());
}

template <typename S>
Tensor<S> conceal_image(const AdversarialProgram<S>& program, const BoundedProgram<S>& bounded,
                        std::span<const int> padded) {
  bounded.validate(program.image);
  Tape<S> tape;
  const std::vector<TokenSequence> batch{TokenSequence(padded.begin(), padded.end())};
  return conceal(bounded, embed(program, tape.constant(program.theta), batch)).value().reshaped(program.image.shape());
}

#define XMAR_INSTANTIATE_PROGRAM(S)                                                                                  \
  template struct AdversarialProgram<S>;                                                                             \
  template struct BoundedProgram<S>;                                                                                 \
  template AdversarialProgram<S> make_program<S>(int, const ImageSpec&, int, int, std::uint64_t, double);            \
  template Var<S> embed<S>(const AdversarialProgram<S>&, Var<S>, std::span<const TokenSequence>);                    \
  template Var<S> conceal<S>(const BoundedProgram<S>&, Var<S>);                                                      \
  template Tensor<S> embed_image<S>(const AdversarialProgram<S>&, std::span<const int>);                             \
  template Tensor<S> conceal_image<S>(const AdversarialProgram<S>&, const BoundedProgram<S>&, std::span<const int>);

XMAR_INSTANTIATE_PROGRAM(float)
XMAR_INSTANTIATE_PROGRAM(double)

}  // namespace xmar
