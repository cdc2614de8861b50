#include "xmar/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "xmar/ops.hpp"

namespace xmar {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<Tensor<float>*> param_list(ReprogramModel<float>& m) {
  std::vector<Tensor<float>*> out{&m.program.theta};
  if (m.head) {
    out.push_back(&m.head->weight);
    if (m.head->use_bias) out.push_back(&m.head->bias);
  }
  return out;
}

std::vector<const Tensor<float>*> const_params(ReprogramModel<float>& m) {
  auto p = param_list(m);
  return {p.begin(), p.end()};
}

template <typename S>
Var<S> squared_norm(Var<S> x) {
  return ops::sum(ops::mul(x, x));
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (lr && !(*lr >= 0)) throw ConfigError("lr must be non-negative");
  if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  if (max_steps && *max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (m < 1) throw ConfigError("m must be positive");
  if (eval_every < 1) throw ConfigError("eval_every must be positive");
  if (epsilon) {
    if (!(*epsilon >= 0 && *epsilon <= 1)) throw ConfigError("epsilon must lie in [0, 1]");
    if (*epsilon == 0 && !lr) throw ConfigError("epsilon = 0 needs an explicit lr (default lr is 0.001 / epsilon)");
  }
  if (remap == RemapMode::kLinear) {
    if (q < 1 && accessible.empty()) throw ConfigError("linear remap needs q or accessible_labels");
    if (q >= 1 && !accessible.empty() && static_cast<int>(accessible.size()) != q) {
      throw ConfigError("q does not match the length of accessible_labels");
    }
  }
  if (!(theta_init >= 0)) throw ConfigError("theta_init must be non-negative");
  if (patience < 0 || train_eval_limit < 0 || checkpoint_every < 0) {
    throw ConfigError("patience, train_eval_limit and checkpoint_every must be non-negative");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"batch_size", batch_size},
                      {"lr", effective_lr()},
                      {"lambda", lambda},
                      {"max_steps", effective_max_steps()},
                      {"m", m},
                      {"eval_every", eval_every},
                      {"seed", seed},
                      {"remap", to_string(remap)},
                      {"bounded", bounded()},
                      {"q", q},
                      {"accessible_labels", accessible},
                      {"head_bias", head_bias},
                      {"theta_init", theta_init},
                      {"patience", patience},
                      {"train_eval_limit", train_eval_limit},
                      {"checkpoint_every", checkpoint_every}};
  if (epsilon) j["epsilon"] = *epsilon;
  return j;
}

nlohmann::json RunMetrics::to_json() const {
  return {{"step", step}, {"train_loss", train_loss}, {"train_acc", train_acc}, {"test_acc", test_acc},
          {"elapsed_s", elapsed_s}};
}

ReprogramModel<float> setup_reprogram(const VictimModel<float>& victim, const TrainConfig& config, int vocab_size,
                                      int num_targets, int patch, int pad_token,
                                      const std::optional<Tensor<float>>& base_image) {
  config.validate();
  if (config.bounded() != base_image.has_value()) {
    throw ConfigError("a base image is required exactly when epsilon is set");
  }
  ReprogramModel<float> model;
  model.num_targets = num_targets;
  model.mode = config.remap;
  model.program = make_program<float>(vocab_size, victim.image, patch, pad_token, mix(config.seed),
                                      config.theta_init);
  Tensor<float> base = base_image ? *base_image : Tensor<float>(victim.image.shape());
  if (base_image) {
    model.bounded = BoundedProgram<float>{*base_image, static_cast<float>(*config.epsilon)};
    model.bounded->validate(victim.image);
  }
  const Tensor<float> logits = victim.logits(base.reshaped(victim.image.batch_shape(1)));
  const std::vector<double> scores(logits.data().begin(), logits.data().end());
  if (config.remap == RemapMode::kLinear) {
    auto accessible = config.accessible.empty() ? top_q_labels(scores, config.q) : config.accessible;
    model.head = make_linear_head<float>(num_targets, std::move(accessible), victim.num_labels, config.head_bias,
                                         mix(config.seed + 1));
  } else {
    model.mapping = build_roundrobin(scores, num_targets, default_m(victim.num_labels, num_targets, config.m));
  }
  return model;
}

template <typename S>
BoundParams<S> bind_params(Tape<S>& tape, const ReprogramModel<S>& model, bool trainable) {
  BoundParams<S> p{tape.leaf(model.program.theta, trainable), std::nullopt, std::nullopt};
  if (model.head) {
    p.head_weight = tape.leaf(model.head->weight, trainable);
    if (model.head->use_bias) p.head_bias = tape.leaf(model.head->bias, trainable);
  }
  return p;
}

template <typename S>
Var<S> program_images(const ReprogramModel<S>& model, const BoundParams<S>& params,
                      std::span<const TokenSequence> padded) {
  auto images = embed(model.program, params.theta, padded);
  if (model.bounded) images = conceal(*model.bounded, images);
  return images;
}

template <typename S>
Var<S> target_scores(const ReprogramModel<S>& model, const VictimModel<S>& victim, const BoundParams<S>& params,
                     std::span<const TokenSequence> padded) {
  Tape<S>& tape = *params.theta.tape;
  auto logits = victim.forward(tape, program_images(model, params, padded));
  switch (model.mode) {
    case RemapMode::kMax: return aggregate_max(model.mapping, logits);
    case RemapMode::kMean: return aggregate_mean(model.mapping, logits);
    case RemapMode::kLinear:
      if (!model.head || !params.head_weight) throw Error("linear remap without a head");
      return linear_map(*model.head, *params.head_weight, params.head_bias, logits, victim.num_labels);
  }
  throw Error("unknown remap mode");
}

template <typename S>
LossOutput<S> compute_loss(const ReprogramModel<S>& model, const VictimModel<S>& victim, const BoundParams<S>& params,
                           std::span<const TokenSequence> padded, std::span<const int> labels, double lambda) {
  if (padded.empty()) throw Error("compute_loss: empty batch");
  for (int l : labels) {
    if (l < 0 || l >= model.num_targets) {
      throw Error("compute_loss: label " + std::to_string(l) + " outside [0, " + std::to_string(model.num_targets) + ")");
    }
  }
  auto scores = target_scores(model, victim, params, padded);
  auto loss = ops::cross_entropy(scores, labels);
  if (lambda != 0) {
    auto reg = squared_norm(params.theta);
    if (params.head_weight) reg = ops::add(reg, squared_norm(*params.head_weight));
    if (params.head_bias) reg = ops::add(reg, squared_norm(*params.head_bias));
    loss = ops::add(loss, ops::scale(reg, static_cast<S>(lambda)));
  }
  return {loss, scores};
}

template <typename S>
std::vector<int> predict(const ReprogramModel<S>& model, const VictimModel<S>& victim,
                         std::span<const TokenSequence> padded) {
  Tape<S> tape;
  const auto params = bind_params(tape, model, false);
  auto logits = victim.forward(tape, program_images(model, params, padded));
  std::vector<int> out;
  if (model.mode == RemapMode::kMax) {
    const auto k = static_cast<std::size_t>(victim.num_labels);
    for (std::size_t b = 0; b < padded.size(); ++b) {
      out.push_back(infer_target_label(model.mapping, std::span<const S>(logits.value().data().data() + b * k, k)));
    }
    return out;
  }
  const auto scores = model.mode == RemapMode::kMean
                          ? aggregate_mean(model.mapping, logits).value()
                          : linear_map(*model.head, *params.head_weight, params.head_bias, logits, victim.num_labels)
                                .value();
  const auto t = static_cast<std::size_t>(model.num_targets);
  for (std::size_t b = 0; b < padded.size(); ++b) {
    out.push_back(argmax<S>(std::span<const S>(scores.data().data() + b * t, t)));
  }
  return out;
}

std::vector<TokenSequence> pad_batch(const ReprogramModel<float>& model, std::span<const Example* const> examples) {
  std::vector<TokenSequence> out;
  out.reserve(examples.size());
  for (const Example* ex : examples) {
    out.push_back(pad_and_clip(ex->tokens, model.program.max_tokens(), model.program.pad_token));
  }
  return out;
}

double evaluate(const ReprogramModel<float>& model, const VictimModel<float>& victim, const LabeledDataset& data,
                std::size_t limit, int batch_size) {
  const std::size_t n = limit > 0 ? std::min(limit, data.size()) : data.size();
  if (n == 0) throw Error("evaluate: empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    std::vector<const Example*> exs;
    for (std::size_t i = start; i < end; ++i) exs.push_back(&data.examples[i]);
    const auto preds = predict(model, victim, std::span<const TokenSequence>(pad_batch(model, exs)));
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == exs[i]->label;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

TrainState init_train_state(ReprogramModel<float> model) {
  TrainState s;
  s.model = std::move(model);
  s.adam = AdamState<float>(const_params(s.model));
  return s;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch_size, std::size_t n) {
  if (n == 0) throw Error("batch_indices: empty dataset");
  std::vector<std::size_t> out;
  std::int64_t cached_pass = -1;
  std::vector<std::size_t> perm(n);
  for (int j = 0; j < batch_size; ++j) {
    const std::uint64_t pos = static_cast<std::uint64_t>(step) * batch_size + j;
    const auto pass = static_cast<std::int64_t>(pos / n);
    if (pass != cached_pass) {
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(mix(seed) ^ mix(static_cast<std::uint64_t>(pass) + 0x5eed));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_pass = pass;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

std::vector<RunMetrics> train(TrainState& state, const VictimModel<float>& victim, const LabeledDataset& train_set,
                              const LabeledDataset& test_set, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (!victim.frozen) throw Error("train: victim must be frozen");
  if (train_set.examples.empty() || test_set.examples.empty()) throw Error("train: empty train or test split");
  if (train_set.num_labels() != state.model.num_targets) {
    throw Error("train: dataset has " + std::to_string(train_set.num_labels()) + " labels, program expects " +
                std::to_string(state.model.num_targets));
  }
  const double lr = config.effective_lr();
  const std::int64_t max_steps = config.effective_max_steps();
  const auto started = std::chrono::steady_clock::now();
  std::vector<RunMetrics> metrics;
  auto params = param_list(state.model);

  while (state.step < max_steps) {
    const auto idx = batch_indices(config.seed, state.step, config.batch_size, train_set.size());
    std::vector<const Example*> exs;
    std::vector<int> labels;
    for (std::size_t i : idx) {
      exs.push_back(&train_set.examples[i]);
      labels.push_back(train_set.examples[i].label);
    }
    const auto padded = pad_batch(state.model, exs);
    Tape<float> tape;
    const auto bound = bind_params(tape, state.model, true);
    const auto out = compute_loss(state.model, victim, bound, std::span<const TokenSequence>(padded), labels,
                                  config.lambda);
    tape.backward(out.loss);
    std::vector<const Tensor<float>*> grads{&tape.grad(bound.theta)};
    if (bound.head_weight) grads.push_back(&tape.grad(*bound.head_weight));
    if (bound.head_bias) grads.push_back(&tape.grad(*bound.head_bias));
    adam_step(params, grads, state.adam, lr);

    const double loss = out.loss.value().item();
    ++state.step;
    state.loss_sum += loss;
    ++state.loss_count;
    if (hooks.step_losses) hooks.step_losses->push_back(loss);

    bool stop = false;
    if (state.step % config.eval_every == 0 || state.step == max_steps) {
      if (state.model.bounded) {
        Tape<float> check;
        const auto images = program_images(state.model, bind_params(check, state.model, false),
                                           std::span<const TokenSequence>(padded))
                                .value();
        const auto& xc = state.model.bounded->base_image;
        for (std::size_t i = 0; i < images.size(); ++i) {
          if (std::abs(double(images[i]) - double(xc[i % xc.size()])) > double(state.model.bounded->epsilon)) {
            throw NumericError("bounded program left the epsilon ball at step " + std::to_string(state.step));
          }
        }
      }
      RunMetrics m;
      m.step = state.step;
      m.train_loss = state.loss_sum / static_cast<double>(state.loss_count);
      m.train_acc = evaluate(state.model, victim, train_set, static_cast<std::size_t>(config.train_eval_limit));
      m.test_acc = evaluate(state.model, victim, test_set);
      m.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      state.loss_sum = 0;
      state.loss_count = 0;
      metrics.push_back(m);
      if (hooks.on_metrics) hooks.on_metrics(m);
      if (m.test_acc > state.best_test) {
        state.best_test = m.test_acc;
        state.evals_since_best = 0;
      } else {
        ++state.evals_since_best;
      }
      stop = config.patience > 0 && state.evals_since_best >= config.patience;
    }
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
    if (stop) break;
  }
  return metrics;
}

Checkpoint train_state_to_checkpoint(const TrainState& state, const TrainConfig& config, const nlohmann::json& extra) {
  const auto& m = state.model;
  Checkpoint ck;
  ck.meta = extra;
  ck.meta["kind"] = "program";
  ck.meta["step"] = state.step;
  ck.meta["adam_step"] = state.adam.step;
  ck.meta["loss_sum"] = state.loss_sum;
  ck.meta["loss_count"] = state.loss_count;
  ck.meta["best_test"] = state.best_test;
  ck.meta["evals_since_best"] = state.evals_since_best;
  ck.meta["image_spec"] = {{"h", m.program.image.h}, {"w", m.program.image.w}, {"c", m.program.image.c}};
  ck.meta["patch"] = m.program.patch;
  ck.meta["pad_token"] = m.program.pad_token;
  ck.meta["remap"] = to_string(m.mode);
  ck.meta["num_targets"] = m.num_targets;
  ck.meta["config"] = config.to_json();
  if (m.mode != RemapMode::kLinear) ck.meta["mapping"] = m.mapping.to_json();
  ck.add("theta", m.program.theta);
  if (m.head) {
    ck.meta["accessible_labels"] = m.head->accessible;
    ck.meta["head_bias"] = m.head->use_bias;
    ck.add("head.weight", m.head->weight);
    if (m.head->use_bias) ck.add("head.bias", m.head->bias);
  }
  if (m.bounded) {
    ck.meta["epsilon"] = static_cast<double>(m.bounded->epsilon);
    ck.add("base_image", m.bounded->base_image);
  }
  for (std::size_t i = 0; i < state.adam.first_moment.size(); ++i) {
    ck.add("adam.m." + std::to_string(i), state.adam.first_moment[i]);
    ck.add("adam.v." + std::to_string(i), state.adam.second_moment[i]);
  }
  return ck;
}

TrainState train_state_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "program") throw ParseError("checkpoint is not a reprogramming program");
  ReprogramModel<float> m;
  const auto& im = ck.meta.at("image_spec");
  m.program.image = ImageSpec{im.at("h").get<int>(), im.at("w").get<int>(), im.at("c").get<int>()};
  m.program.patch = ck.meta.at("patch").get<int>();
  m.program.pad_token = ck.meta.at("pad_token").get<int>();
  m.program.theta = ck.array("theta");
  m.program.validate();
  m.mode = parse_remap_mode(ck.meta.at("remap").get<std::string>());
  m.num_targets = ck.meta.at("num_targets").get<int>();
  if (m.mode == RemapMode::kLinear) {
    LinearHead<float> head;
    head.accessible = ck.meta.at("accessible_labels").get<std::vector<int>>();
    head.use_bias = ck.meta.at("head_bias").get<bool>();
    head.weight = ck.array("head.weight");
    head.bias = head.use_bias ? ck.array("head.bias") : Tensor<float>(Shape{head.weight.dim(0)});
    m.head = std::move(head);
  } else {
    m.mapping = ManyToOneMapping::from_json(ck.meta.at("mapping"));
  }
  if (ck.meta.contains("epsilon")) {
    m.bounded = BoundedProgram<float>{ck.array("base_image"), static_cast<float>(ck.meta["epsilon"].get<double>())};
    m.bounded->validate(m.program.image);
  }
  TrainState s = init_train_state(std::move(m));
  for (std::size_t i = 0; i < s.adam.first_moment.size(); ++i) {
    const auto& fm = ck.array("adam.m." + std::to_string(i));
    const auto& sm = ck.array("adam.v." + std::to_string(i));
    if (fm.shape() != s.adam.first_moment[i].shape() || sm.shape() != s.adam.second_moment[i].shape()) {
      throw ParseError("program checkpoint: optimizer state does not match the parameters");
    }
    s.adam.first_moment[i] = fm;
    s.adam.second_moment[i] = sm;
  }
  s.adam.step = ck.meta.at("adam_step").get<std::int64_t>();
  s.step = ck.meta.at("step").get<std::int64_t>();
  s.loss_sum = ck.meta.at("loss_sum").get<double>();
  s.loss_count = ck.meta.at("loss_count").get<std::int64_t>();
  s.best_test = ck.meta.at("best_test").get<double>();
  s.evals_since_best = ck.meta.at("evals_since_best").get<std::int64_t>();
  return s;
}

#define XMAR_INSTANTIATE_TRAINER(S)                                                                                 \
  template BoundParams<S> bind_params<S>(Tape<S>&, const ReprogramModel<S>&, bool);                                  \
  template Var<S> program_images<S>(const ReprogramModel<S>&, const BoundParams<S>&, std::span<const TokenSequence>); \
  template Var<S> target_scores<S>(const ReprogramModel<S>&, const VictimModel<S>&, const BoundParams<S>&,           \
                                   std::span<const TokenSequence>);                                                 \
  template LossOutput<S> compute_loss<S>(const ReprogramModel<S>&, const VictimModel<S>&, const BoundParams<S>&,     \
                                         std::span<const TokenSequence>, std::span<const int>, double);             \
  template std::vector<int> predict<S>(const ReprogramModel<S>&, const VictimModel<S>&, std::span<const TokenSequence>);

XMAR_INSTANTIATE_TRAINER(float)
XMAR_INSTANTIATE_TRAINER(double)

}  // namespace xmar
