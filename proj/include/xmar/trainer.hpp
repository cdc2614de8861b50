#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "xmar/adam.hpp"
#include "xmar/checkpoint.hpp"
#include "xmar/dataset.hpp"
#include "xmar/program.hpp"
#include "xmar/remap.hpp"
#include "xmar/victim.hpp"

namespace xmar {

struct TrainConfig {
  int batch_size = 4;
  std::optional<double> lr;             // default 1e-3, or 1e-3 / epsilon when bounded
  double lambda = 1e-4;                 // L2 on theta (and the linear head)
  std::optional<std::int64_t> max_steps;  // default 100k, or 200k when bounded
  int m = 10;                           // sources per target, clipped to |L_X| / |L_T|
  std::int64_t eval_every = 1000;
  std::uint64_t seed = 0;
  RemapMode remap = RemapMode::kMax;
  std::optional<double> epsilon;        // set iff bounded
  int q = 0;                            // linear mode: accessible source labels
  std::vector<int> accessible;          // linear mode: explicit list (default: top-q base logits)
  bool head_bias = false;
  double theta_init = 0.01;             // theta ~ U(-theta_init, theta_init)
  std::int64_t patience = 0;            // evals without test improvement; 0 = off
  std::int64_t train_eval_limit = 0;    // train accuracy over the first N examples; 0 = all
  std::int64_t checkpoint_every = 0;    // steps; 0 = only at the end

  bool bounded() const { return epsilon.has_value(); }
  double effective_lr() const { return lr.value_or(bounded() ? 1e-3 / *epsilon : 1e-3); }
  std::int64_t effective_max_steps() const { return max_steps.value_or(bounded() ? 200000 : 100000); }
  void validate() const;
  nlohmann::json to_json() const;
};

struct RunMetrics {
  std::int64_t step = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  double elapsed_s = 0;

  nlohmann::json to_json() const;
};

// Everything between a token sequence and the target-label scores.
template <typename S>
struct ReprogramModel {
  AdversarialProgram<S> program;
  std::optional<BoundedProgram<S>> bounded;
  RemapMode mode = RemapMode::kMax;
  ManyToOneMapping mapping;           // max and mean modes
  std::optional<LinearHead<S>> head;  // linear mode
  int num_targets = 0;
};

// Builds program and label mapping. Round-robin order and default accessible
// labels come from the victim's logits on the base image (or a zero image).
ReprogramModel<float> setup_reprogram(const VictimModel<float>& victim, const TrainConfig& config, int vocab_size,
                                      int num_targets, int patch, int pad_token,
                                      const std::optional<Tensor<float>>& base_image);

template <typename S>
struct BoundParams {
  Var<S> theta;
  std::optional<Var<S>> head_weight;
  std::optional<Var<S>> head_bias;
};

template <typename S>
BoundParams<S> bind_params(Tape<S>& tape, const ReprogramModel<S>& model, bool trainable);

// Reprogrammed victim input for a padded batch: (B, h, w, c).
template <typename S>
Var<S> program_images(const ReprogramModel<S>& model, const BoundParams<S>& params,
                      std::span<const TokenSequence> padded);

// (B, |L_T|) scores after label remapping.
template <typename S>
Var<S> target_scores(const ReprogramModel<S>& model, const VictimModel<S>& victim, const BoundParams<S>& params,
                     std::span<const TokenSequence> padded);

template <typename S>
struct LossOutput {
  Var<S> loss;
  Var<S> scores;
};

// Mean cross-entropy over the batch + lambda * (|theta|^2 [+ |head|^2]).
template <typename S>
LossOutput<S> compute_loss(const ReprogramModel<S>& model, const VictimModel<S>& victim, const BoundParams<S>& params,
                           std::span<const TokenSequence> padded, std::span<const int> labels, double lambda);

template <typename S>
std::vector<int> predict(const ReprogramModel<S>& model, const VictimModel<S>& victim,
                         std::span<const TokenSequence> padded);

std::vector<TokenSequence> pad_batch(const ReprogramModel<float>& model, std::span<const Example* const> examples);

// Fraction of examples whose inferred target label matches; `limit` > 0 uses
// only the first `limit` examples.
double evaluate(const ReprogramModel<float>& model, const VictimModel<float>& victim, const LabeledDataset& data,
                std::size_t limit = 0, int batch_size = 32);

struct TrainState {
  ReprogramModel<float> model;
  AdamState<float> adam;
  std::int64_t step = 0;
  double loss_sum = 0;  // since the last eval
  std::int64_t loss_count = 0;
  double best_test = -1;
  std::int64_t evals_since_best = 0;
};

TrainState init_train_state(ReprogramModel<float> model);

struct TrainHooks {
  std::function<void(const RunMetrics&)> on_metrics;
  std::function<void(const TrainState&)> on_checkpoint;
  std::vector<double>* step_losses = nullptr;
};

// Indices of the examples used at `step`: a pure function of (seed, step), so
// a resumed run sees the same data order. Shuffled once per pass.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch_size, std::size_t n);

// Runs from state.step to max_steps (or early stop). Victim weights are never
// touched.
std::vector<RunMetrics> train(TrainState& state, const VictimModel<float>& victim, const LabeledDataset& train_set,
                              const LabeledDataset& test_set, const TrainConfig& config, const TrainHooks& hooks = {});

// Program checkpoint: theta, head, Adam moments, base image, and metadata
// (step, accumulators, mapping, config echo, plus `extra`).
Checkpoint train_state_to_checkpoint(const TrainState& state, const TrainConfig& config,
                                     const nlohmann::json& extra = nlohmann::json::object());
TrainState train_state_from_checkpoint(const Checkpoint& ckpt);

}  // namespace xmar
