#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmar/checkpoint.hpp"
#include "xmar/tape.hpp"

namespace xmar {

// Pixel range is always [-1, 1].
struct ImageSpec {
  int h = 64;
  int w = 64;
  int c = 3;

  Shape shape() const { return {h, w, c}; }
  Shape batch_shape(std::int64_t batch) const { return {batch, h, w, c}; }
  std::int64_t pixels() const { return std::int64_t(h) * w * c; }
  bool operator==(const ImageSpec&) const = default;
};

enum class VictimArch {
  kSmallCnn,          // conv3x3(c->8) relu pool2, conv3x3(8->16) relu pool2, dense
  kPatchTransformer,  // patch embed + class token, pre-norm transformer blocks
  kTwoLayer,          // conv3x3(c->4, same) tanh, dense; test-scale victim
};

std::string to_string(VictimArch arch);
VictimArch parse_victim_arch(const std::string& name);

struct TransformerDims {
  int patch = 8;
  int dim = 32;
  int heads = 4;
  int blocks = 2;
  int mlp_ratio = 2;
};

// Trainable parameter count implied by the architecture:
//   small-cnn:   (9c*8 + 8) + (9*8*16 + 16) + F*L + L,
//                F = 16 * floor((floor((h-2)/2) - 2)/2) * floor((floor((w-2)/2) - 2)/2)
//   transformer: P*P*c*D + D  (patch embed)  + D (class token) + (N+1)*D (positions)
//                + blocks * (8*D*D + 11*D) + D*L + L,   N = (h/P)*(w/P)
//   two-layer:   (9c*4 + 4) + 4*h*w*L + L
std::int64_t parameter_count(VictimArch arch, const ImageSpec& image, int num_labels, const TransformerDims& dims = {});

template <typename S>
class VictimModel {
 public:
  VictimArch arch = VictimArch::kSmallCnn;
  ImageSpec image;
  int num_labels = 10;
  TransformerDims dims;
  NamedTensors<S> weights;
  bool frozen = false;

  std::int64_t parameter_count() const;

  // Puts the weights on the tape, as trainable leaves or as constants.
  std::vector<Var<S>> bind(Tape<S>& tape, bool trainable) const;

  // images: (B, h, w, c) -> logits (B, num_labels).
  Var<S> forward(Tape<S>& tape, std::span<const Var<S>> bound, Var<S> images) const;
  Var<S> forward(Tape<S>& tape, Var<S> images) const;

  Tensor<S> logits(const Tensor<S>& images) const;

  Tensor<S>& weight(const std::string& name);
  const Tensor<S>& weight(const std::string& name) const;
};

// Fan-in scaled uniform init (He bound ahead of a relu, LeCun bound elsewhere),
// zero biases, unit layer-norm gains.
template <typename S>
VictimModel<S> build_victim(VictimArch arch, const ImageSpec& image, int num_labels, std::uint64_t seed,
                            const TransformerDims& dims = {});

template <typename To, typename From>
VictimModel<To> cast_victim(const VictimModel<From>& m) {
  VictimModel<To> out;
  out.arch = m.arch;
  out.image = m.image;
  out.num_labels = m.num_labels;
  out.dims = m.dims;
  out.frozen = m.frozen;
  for (const auto& [name, t] : m.weights) out.weights.emplace_back(name, cast<To>(t));
  return out;
}

// Victim <-> XMAR container. `extra` is merged into the metadata (pretraining
// seed, held-out accuracy, ...).
Checkpoint victim_to_checkpoint(const VictimModel<float>& model, const nlohmann::json& extra = nlohmann::json::object());
VictimModel<float> victim_from_checkpoint(const Checkpoint& ckpt);

std::string victim_digest(const VictimModel<float>& model);

extern template class VictimModel<float>;
extern template class VictimModel<double>;

}  // namespace xmar
