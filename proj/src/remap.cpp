#include "xmar/remap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "xmar/ops.hpp"

namespace xmar {
namespace {

std::vector<int> rank_sources(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::string to_string(RemapMode mode) {
  switch (mode) {
    case RemapMode::kMax: return "max";
    case RemapMode::kLinear: return "linear";
    case RemapMode::kMean: return "mean";
  }
  return "?";
}

RemapMode parse_remap_mode(const std::string& name) {
  if (name == "max") return RemapMode::kMax;
  if (name == "linear") return RemapMode::kLinear;
  if (name == "mean") return RemapMode::kMean;
  throw ConfigError("unknown remap mode '" + name + "' (expected max, linear, mean)");
}

void ManyToOneMapping::validate() const {
  if (assignments.empty()) throw ConfigError("label mapping: no target labels");
  const int mm = m();
  if (mm < 1) throw ConfigError("label mapping: empty source subset");
  if (static_cast<std::int64_t>(mm) * num_targets() > num_sources) {
    throw ConfigError("label mapping: m * targets exceeds the number of source labels");
  }
  std::set<int> seen;
  for (const auto& group : assignments) {
    if (static_cast<int>(group.size()) != mm) throw ConfigError("label mapping: subsets differ in size");
    for (int s : group) {
      if (s < 0 || s >= num_sources) throw ConfigError("label mapping: source label " + std::to_string(s) + " out of range");
      if (!seen.insert(s).second) throw ConfigError("label mapping: source label " + std::to_string(s) + " assigned twice");
    }
  }
}

nlohmann::json ManyToOneMapping::to_json() const {
  return {{"num_sources", num_sources}, {"assignments", assignments}};
}

ManyToOneMapping ManyToOneMapping::from_json(const nlohmann::json& j) {
  ManyToOneMapping m;
  m.num_sources = j.at("num_sources").get<int>();
  m.assignments = j.at("assignments").get<std::vector<std::vector<int>>>();
  m.validate();
  return m;
}

int default_m(int num_sources, int num_targets, int requested) {
  if (num_targets < 1) throw ConfigError("label mapping: need at least one target label");
  const int m = std::min(requested, num_sources / num_targets);
  if (m < 1) {
    throw ConfigError("label mapping: " + std::to_string(num_targets) + " target labels but only " +
                      std::to_string(num_sources) + " source labels");
  }
  return m;
}

ManyToOneMapping build_roundrobin(std::span<const double> base_scores, int num_targets, int m) {
  const auto sources = static_cast<std::int64_t>(base_scores.size());
  if (num_targets < 1 || m < 1) throw ConfigError("build_roundrobin: targets and m must be positive");
  if (std::int64_t(m) * num_targets > sources) {
    throw ConfigError("build_roundrobin: need " + std::to_string(std::int64_t(m) * num_targets) +
                      " source labels, victim has " + std::to_string(sources));
  }
  ManyToOneMapping mapping;
  mapping.num_sources = static_cast<int>(sources);
  mapping.assignments.assign(static_cast<std::size_t>(num_targets), {});
  const auto order = rank_sources(base_scores);
  for (int i = 0; i < m * num_targets; ++i) mapping.assignments[i % num_targets].push_back(order[i]);
  return mapping;
}

template <typename S>
Var<S> aggregate_max(const ManyToOneMapping& mapping, Var<S> logits) {
  return ops::max_over_indices(logits, mapping.assignments);
}

template <typename S>
Var<S> aggregate_mean(const ManyToOneMapping& mapping, Var<S> logits) {
  return ops::mean_over_indices(logits, mapping.assignments);
}

std::vector<int> top_q_labels(std::span<const double> base_scores, int q) {
  if (q < 1 || q > static_cast<int>(base_scores.size())) {
    throw ConfigError("top_q_labels: q=" + std::to_string(q) + " outside [1, " + std::to_string(base_scores.size()) + "]");
  }
  auto order = rank_sources(base_scores);
  order.resize(static_cast<std::size_t>(q));
  return order;
}

template <typename S>
void LinearHead<S>::validate(int num_sources) const {
  if (accessible.empty()) throw ConfigError("linear head: no accessible labels");
  std::set<int> seen;
  for (int s : accessible) {
    if (s < 0 || s >= num_sources) {
      throw ConfigError("linear head: accessible label " + std::to_string(s) + " out of range [0, " +
                        std::to_string(num_sources) + ")");
    }
    if (!seen.insert(s).second) throw ConfigError("linear head: accessible label " + std::to_string(s) + " repeated");
  }
  if (weight.rank() != 2 || weight.dim(1) != q()) {
    throw ShapeError("linear head: weight shape " + to_string(weight.shape()) + " does not match q=" +
                     std::to_string(q()));
  }
  if (use_bias && bias.shape() != Shape{weight.dim(0)}) throw ShapeError("linear head: bias shape mismatch");
}

template <typename S>
LinearHead<S> make_linear_head(int num_targets, std::vector<int> accessible, int num_sources, bool use_bias,
                               std::uint64_t seed) {
  if (num_targets < 1) throw ConfigError("linear head: need at least one target label");
  LinearHead<S> head;
  head.accessible = std::move(accessible);
  head.use_bias = use_bias;
  const int q = head.q();
  if (q < 1) throw ConfigError("linear head: no accessible labels");
  head.weight = Tensor<S>(Shape{num_targets, q});
  head.bias = Tensor<S>(Shape{num_targets});
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(q));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : head.weight.data()) v = static_cast<S>(dist(rng));
  head.validate(num_sources);
  return head;
}

template <typename S>
Var<S> linear_map(const LinearHead<S>& head, Var<S> weight, std::optional<Var<S>> bias, Var<S> logits,
                  int num_sources) {
  head.validate(num_sources);
  if (logits.shape().size() != 2 || logits.shape()[1] != num_sources) {
    throw ShapeError("linear_map: logits " + to_string(logits.shape()) + " do not have " + std::to_string(num_sources) +
                     " columns");
  }
  std::vector<std::vector<int>> columns;
  for (int s : head.accessible) columns.push_back({s});
  auto p = ops::softmax(ops::max_over_indices(logits, columns), -1);
  auto z = ops::matmul(p, weight, true);
  if (head.use_bias) {
    if (!bias) throw Error("linear_map: head uses a bias but none was bound");
    z = ops::add(z, *bias);
  }
  return z;
}

template <typename S>
int infer_target_label(const ManyToOneMapping& mapping, std::span<const S> logits) {
  if (static_cast<int>(logits.size()) != mapping.num_sources) {
    throw ShapeError("infer_target_label: got " + std::to_string(logits.size()) + " logits, mapping expects " +
                     std::to_string(mapping.num_sources));
  }
  int best_target = -1;
  S best = S{0};
  for (int t = 0; t < mapping.num_targets(); ++t) {
    for (int s : mapping.assignments[t]) {
      if (best_target < 0 || logits[s] > best) {
        best = logits[s];
        best_target = t;
      }
    }
  }
  return best_target;
}

template <typename S>
int argmax(std::span<const S> scores) {
  if (scores.empty()) throw ShapeError("argmax: empty scores");
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

#define XMAR_INSTANTIATE_REMAP(S)                                                                  \
  template Var<S> aggregate_max<S>(const ManyToOneMapping&, Var<S>);                               \
  template Var<S> aggregate_mean<S>(const ManyToOneMapping&, Var<S>);                              \
  template struct LinearHead<S>;                                                                   \
  template LinearHead<S> make_linear_head<S>(int, std::vector<int>, int, bool, std::uint64_t);     \
  template Var<S> linear_map<S>(const LinearHead<S>&, Var<S>, std::optional<Var<S>>, Var<S>, int); \
  template int infer_target_label<S>(const ManyToOneMapping&, std::span<const S>);                 \
  template int argmax<S>(std::span<const S>);

XMAR_INSTANTIATE_REMAP(float)
XMAR_INSTANTIATE_REMAP(double)

}  // namespace xmar
