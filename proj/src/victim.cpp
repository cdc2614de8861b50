#include "xmar/victim.hpp"

#include <cmath>
#include <random>

#include "xmar/ops.hpp"
#include "xmar/runtime.hpp"

namespace xmar {
namespace {

std::int64_t cnn_flat_features(const ImageSpec& im) {
  const std::int64_t fh = ((im.h - 2) / 2 - 2) / 2;
  const std::int64_t fw = ((im.w - 2) / 2 - 2) / 2;
  return 16 * fh * fw;
}

void validate(VictimArch arch, const ImageSpec& im, int num_labels, const TransformerDims& dims) {
  if (im.h <= 0 || im.w <= 0 || im.c <= 0) throw ConfigError("victim: image dimensions must be positive");
  if (num_labels < 1) throw ConfigError("victim: num_labels must be positive");
  switch (arch) {
    case VictimArch::kSmallCnn:
      if (im.h < 16 || im.w < 16) {
        throw ConfigError("victim: small-cnn needs h, w >= 16, got " + std::to_string(im.h) + "x" + std::to_string(im.w));
      }
      break;
    case VictimArch::kPatchTransformer:
      if (im.h % dims.patch != 0 || im.w % dims.patch != 0) {
        throw ConfigError("victim: patch-transformer needs h and w divisible by patch " + std::to_string(dims.patch) +
                          ", got " + std::to_string(im.h) + "x" + std::to_string(im.w));
      }
      if (dims.dim % dims.heads != 0) throw ConfigError("victim: transformer dim must be divisible by heads");
      break;
    case VictimArch::kTwoLayer:
      break;
  }
}

}  // namespace

std::string to_string(VictimArch arch) {
  switch (arch) {
    case VictimArch::kSmallCnn: return "small-cnn";
    case VictimArch::kPatchTransformer: return "patch-transformer";
    case VictimArch::kTwoLayer: return "two-layer";
  }
  return "?";
}

VictimArch parse_victim_arch(const std::string& name) {
  if (name == "small-cnn") return VictimArch::kSmallCnn;
  if (name == "patch-transformer") return VictimArch::kPatchTransformer;
  if (name == "two-layer") return VictimArch::kTwoLayer;
  throw ConfigError("unknown victim arch '" + name + "' (expected small-cnn, patch-transformer, two-layer)");
}

std::int64_t parameter_count(VictimArch arch, const ImageSpec& im, int labels, const TransformerDims& d) {
  const std::int64_t c = im.c, L = labels;
  switch (arch) {
    case VictimArch::kSmallCnn:
      return (9 * c * 8 + 8) + (9 * 8 * 16 + 16) + cnn_flat_features(im) * L + L;
    case VictimArch::kPatchTransformer: {
      const std::int64_t D = d.dim, P = d.patch;
      const std::int64_t n = std::int64_t(im.h / d.patch) * (im.w / d.patch);
      return P * P * c * D + D + D + (n + 1) * D + d.blocks * (8 * D * D + 11 * D) + D * L + L;
    }
    case VictimArch::kTwoLayer:
      return (9 * c * 4 + 4) + 4 * std::int64_t(im.h) * im.w * L + L;
  }
  return 0;
}

template <typename S>
std::int64_t VictimModel<S>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : weights) n += static_cast<std::int64_t>(t.size());
  return n;
}

template <typename S>
Tensor<S>& VictimModel<S>::weight(const std::string& name) {
  for (auto& [n, t] : weights)
    if (n == name) return t;
  throw Error("victim: no weight named '" + name + "'");
}

template <typename S>
const Tensor<S>& VictimModel<S>::weight(const std::string& name) const {
  return const_cast<VictimModel*>(this)->weight(name);
}

template <typename S>
std::vector<Var<S>> VictimModel<S>::bind(Tape<S>& tape, bool trainable) const {
  if (trainable && frozen) throw Error("victim: frozen weights cannot be bound as trainable");
  std::vector<Var<S>> out;
  out.reserve(weights.size());
  for (const auto& [name, t] : weights) out.push_back(tape.leaf(t, trainable));
  return out;
}

template <typename S>
Var<S> VictimModel<S>::forward(Tape<S>& tape, Var<S> images) const {
  auto bound = bind(tape, false);
  return forward(tape, bound, images);
}

template <typename S>
Var<S> VictimModel<S>::forward(Tape<S>& /*tape*/, std::span<const Var<S>> w, Var<S> images) const {
  const Shape& xs = images.shape();
  if (xs.size() != 4 || xs[1] != image.h || xs[2] != image.w || xs[3] != image.c) {
    throw ShapeError("victim forward: expected images (B, " + std::to_string(image.h) + ", " + std::to_string(image.w) +
                     ", " + std::to_string(image.c) + "), got " + to_string(xs));
  }
  if (runtime::checked()) {
    for (S v : images.value().data()) {
      if (!(v >= S{-1} && v <= S{1})) throw NumericError("victim forward: pixel value outside [-1, 1]");
    }
  }
  if (w.size() != weights.size()) throw Error("victim forward: weight binding does not match the model");
  const std::int64_t batch = xs[0];
  using ops::Padding;

  switch (arch) {
    case VictimArch::kSmallCnn: {
      auto h = ops::maxpool2d(ops::relu(ops::conv2d(images, w[0], w[1])), 2);
      h = ops::maxpool2d(ops::relu(ops::conv2d(h, w[2], w[3])), 2);
      h = ops::reshape(h, Shape{batch, cnn_flat_features(image)});
      return ops::dense(h, w[4], w[5]);
    }
    case VictimArch::kTwoLayer: {
      auto h = ops::tanh(ops::conv2d(images, w[0], w[1], 1, Padding::kSame));
      h = ops::reshape(h, Shape{batch, std::int64_t(4) * image.h * image.w});
      return ops::dense(h, w[2], w[3]);
    }
    case VictimArch::kPatchTransformer: {
      const std::int64_t D = dims.dim;
      const std::int64_t n = std::int64_t(image.h / dims.patch) * (image.w / dims.patch);
      const std::int64_t dh = D / dims.heads;
      const S attn_scale = S(1) / std::sqrt(static_cast<S>(dh));
      auto patches = ops::conv2d(images, w[0], w[1], dims.patch, Padding::kValid);
      patches = ops::reshape(patches, Shape{batch, n, D});
      const std::vector<int> zeros(static_cast<std::size_t>(batch), 0);
      auto cls = ops::reshape(ops::gather_rows<S>(w[2], zeros), Shape{batch, 1, D});
      const std::vector<Var<S>> parts{cls, patches};
      auto x = ops::add(ops::concat<S>(parts, 1), w[3]);
      std::size_t k = 4;
      for (int b = 0; b < dims.blocks; ++b, k += 12) {
        auto h = ops::layernorm(x, w[k], w[k + 1]);
        auto qkv = ops::dense(h, w[k + 2], w[k + 3]);
        std::vector<Var<S>> heads;
        for (int hd = 0; hd < dims.heads; ++hd) {
          auto q = ops::slice(qkv, 2, hd * dh, dh);
          auto kk = ops::slice(qkv, 2, D + hd * dh, dh);
          auto v = ops::slice(qkv, 2, 2 * D + hd * dh, dh);
          auto att = ops::softmax(ops::scale(ops::matmul(q, kk, true), attn_scale), -1);
          heads.push_back(ops::matmul(att, v));
        }
        x = ops::add(x, ops::dense(ops::concat<S>(heads, 2), w[k + 4], w[k + 5]));
        h = ops::layernorm(x, w[k + 6], w[k + 7]);
        h = ops::dense(ops::relu(ops::dense(h, w[k + 8], w[k + 9])), w[k + 10], w[k + 11]);
        x = ops::add(x, h);
      }
      auto cls_out = ops::reshape(ops::slice(x, 1, 0, 1), Shape{batch, D});
      return ops::dense(cls_out, w[k], w[k + 1]);
    }
  }
  throw Error("victim forward: unknown arch");
}

template <typename S>
Tensor<S> VictimModel<S>::logits(const Tensor<S>& images) const {
  Tape<S> tape;
  return forward(tape, tape.constant(images)).value();
}

template <typename S>
VictimModel<S> build_victim(VictimArch arch, const ImageSpec& image, int num_labels, std::uint64_t seed,
                            const TransformerDims& dims) {
  validate(arch, image, num_labels, dims);
  VictimModel<S> m;
  m.arch = arch;
  m.image = image;
  m.num_labels = num_labels;
  m.dims = dims;
  std::mt19937_64 rng(seed);
  // bound = sqrt(gain / fan_in): gain 6 ahead of a relu, 3 for linear layers,
  // 1 for the class token and position tables.
  auto uniform = [&](Shape shape, double fan_in, double gain) {
    const double bound = std::sqrt(gain / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<S>(dist(rng));
    return t;
  };
  auto add = [&](std::string name, Tensor<S> t) { m.weights.emplace_back(std::move(name), std::move(t)); };
  const std::int64_t c = image.c, L = num_labels;
  switch (arch) {
    case VictimArch::kSmallCnn:
      add("conv1.w", uniform({3, 3, c, 8}, 9.0 * c, 6));
      add("conv1.b", Tensor<S>(Shape{8}));
      add("conv2.w", uniform({3, 3, 8, 16}, 72.0, 6));
      add("conv2.b", Tensor<S>(Shape{16}));
      add("head.w", uniform({cnn_flat_features(image), L}, double(cnn_flat_features(image)), 3));
      add("head.b", Tensor<S>(Shape{L}));
      break;
    case VictimArch::kTwoLayer:
      add("conv1.w", uniform({3, 3, c, 4}, 9.0 * c, 3));
      add("conv1.b", Tensor<S>(Shape{4}));
      add("head.w", uniform({std::int64_t(4) * image.h * image.w, L}, 4.0 * image.h * image.w, 3));
      add("head.b", Tensor<S>(Shape{L}));
      break;
    case VictimArch::kPatchTransformer: {
      const std::int64_t D = dims.dim, P = dims.patch;
      const std::int64_t n = std::int64_t(image.h / dims.patch) * (image.w / dims.patch);
      const std::int64_t hidden = D * dims.mlp_ratio;
      add("embed.w", uniform({P, P, c, D}, double(P * P * c), 3));
      add("embed.b", Tensor<S>(Shape{D}));
      add("cls", uniform({1, D}, double(D), 1));
      add("pos", uniform({n + 1, D}, double(D), 1));
      for (int b = 0; b < dims.blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        add(p + "ln1.g", Tensor<S>(Shape{D}, S{1}));
        add(p + "ln1.b", Tensor<S>(Shape{D}));
        add(p + "qkv.w", uniform({D, 3 * D}, double(D), 3));
        add(p + "qkv.b", Tensor<S>(Shape{3 * D}));
        add(p + "proj.w", uniform({D, D}, double(D), 3));
        add(p + "proj.b", Tensor<S>(Shape{D}));
        add(p + "ln2.g", Tensor<S>(Shape{D}, S{1}));
        add(p + "ln2.b", Tensor<S>(Shape{D}));
        add(p + "mlp1.w", uniform({D, hidden}, double(D), 6));
        add(p + "mlp1.b", Tensor<S>(Shape{hidden}));
        add(p + "mlp2.w", uniform({hidden, D}, double(hidden), 3));
        add(p + "mlp2.b", Tensor<S>(Shape{D}));
      }
      add("head.w", uniform({D, L}, double(D), 3));
      add("head.b", Tensor<S>(Shape{L}));
      break;
    }
  }
  return m;
}

Checkpoint victim_to_checkpoint(const VictimModel<float>& model, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.meta = extra;
  ck.meta["kind"] = "victim";
  ck.meta["arch"] = to_string(model.arch);
  ck.meta["image_spec"] = {{"h", model.image.h}, {"w", model.image.w}, {"c", model.image.c}};
  ck.meta["num_labels"] = model.num_labels;
  ck.meta["transformer"] = {{"patch", model.dims.patch},
                            {"dim", model.dims.dim},
                            {"heads", model.dims.heads},
                            {"blocks", model.dims.blocks},
                            {"mlp_ratio", model.dims.mlp_ratio}};
  ck.meta["frozen"] = model.frozen;
  for (const auto& [name, t] : model.weights) ck.add(name, t);
  return ck;
}

VictimModel<float> victim_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "victim") throw ParseError("checkpoint is not a victim model");
  VictimModel<float> m;
  m.arch = parse_victim_arch(ck.meta.at("arch").get<std::string>());
  const auto& im = ck.meta.at("image_spec");
  m.image = ImageSpec{im.at("h").get<int>(), im.at("w").get<int>(), im.at("c").get<int>()};
  m.num_labels = ck.meta.at("num_labels").get<int>();
  if (ck.meta.contains("transformer")) {
    const auto& t = ck.meta["transformer"];
    m.dims = TransformerDims{t.at("patch").get<int>(), t.at("dim").get<int>(), t.at("heads").get<int>(),
                             t.at("blocks").get<int>(), t.at("mlp_ratio").get<int>()};
  }
  m.frozen = ck.meta.value("frozen", true);
  m.weights = ck.arrays;
  // Shapes must agree with a freshly built model of the same spec.
  const auto ref = build_victim<float>(m.arch, m.image, m.num_labels, 0, m.dims);
  if (ref.weights.size() != m.weights.size()) throw ParseError("victim checkpoint: wrong number of weight arrays");
  for (std::size_t i = 0; i < ref.weights.size(); ++i) {
    if (ref.weights[i].first != m.weights[i].first || ref.weights[i].second.shape() != m.weights[i].second.shape()) {
      throw ParseError("victim checkpoint: array '" + m.weights[i].first + "' does not match the architecture");
    }
  }
  return m;
}

std::string victim_digest(const VictimModel<float>& model) { return weights_digest(model.weights); }

template class VictimModel<float>;
template class VictimModel<double>;
template VictimModel<float> build_victim<float>(VictimArch, const ImageSpec&, int, std::uint64_t, const TransformerDims&);
template VictimModel<double> build_victim<double>(VictimArch, const ImageSpec&, int, std::uint64_t,
                                                  const TransformerDims&);

}  // namespace xmar
