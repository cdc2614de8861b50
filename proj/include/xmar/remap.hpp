#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmar/tape.hpp"

namespace xmar {

enum class RemapMode { kMax, kLinear, kMean };

std::string to_string(RemapMode mode);
RemapMode parse_remap_mode(const std::string& name);

// Target label t owns the source labels assignments[t], all disjoint and of
// equal size m.
struct ManyToOneMapping {
  int num_sources = 0;
  std::vector<std::vector<int>> assignments;

  int num_targets() const { return static_cast<int>(assignments.size()); }
  int m() const { return assignments.empty() ? 0 : static_cast<int>(assignments[0].size()); }
  void validate() const;

  nlohmann::json to_json() const;
  static ManyToOneMapping from_json(const nlohmann::json& j);
};

// min(requested, floor(num_sources / num_targets)); error when that is zero.
int default_m(int num_sources, int num_targets, int requested = 10);

// Sources sorted by descending score (ties: lower index first) and dealt to
// targets 0, 1, ..., T-1, 0, 1, ... until each holds m.
ManyToOneMapping build_roundrobin(std::span<const double> base_scores, int num_targets, int m);

// (B, |L_X|) -> (B, |L_T|).
template <typename S>
Var<S> aggregate_max(const ManyToOneMapping& mapping, Var<S> logits);
template <typename S>
Var<S> aggregate_mean(const ManyToOneMapping& mapping, Var<S> logits);

// The q highest-scoring source labels, best first (ties: lower index first).
std::vector<int> top_q_labels(std::span<const double> base_scores, int q);

template <typename S>
struct LinearHead {
  Tensor<S> weight;  // (|L_T|, q)
  Tensor<S> bias;    // (|L_T|), only used when use_bias
  bool use_bias = false;
  std::vector<int> accessible;  // q source indices

  int q() const { return static_cast<int>(accessible.size()); }
  int num_targets() const { return weight.empty() ? 0 : static_cast<int>(weight.dim(0)); }
  void validate(int num_sources) const;
};

// Weight ~ U(-1/sqrt(q), 1/sqrt(q)), bias zero.
template <typename S>
LinearHead<S> make_linear_head(int num_targets, std::vector<int> accessible, int num_sources, bool use_bias,
                               std::uint64_t seed);

// Z' = W softmax(Z[:, accessible]) (+ b). `weight`/`bias` are the head's
// tensors as bound on the tape.
template <typename S>
Var<S> linear_map(const LinearHead<S>& head, Var<S> weight, std::optional<Var<S>> bias, Var<S> logits,
                  int num_sources);

// Max mode: argmax over assigned sources only, reported as the owning target;
// ties resolve to the lower target index, matching argmax of aggregate_max.
template <typename S>
int infer_target_label(const ManyToOneMapping& mapping, std::span<const S> logits);

// Linear (or any score) mode: plain argmax, ties to the lower index.
template <typename S>
int argmax(std::span<const S> scores);

}  // namespace xmar
