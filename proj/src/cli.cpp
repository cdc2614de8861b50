#include "xmar/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "xmar/checkpoint.hpp"
#include "xmar/png_io.hpp"
#include "xmar/runtime.hpp"
#include "xmar/tfidf.hpp"
#include "xmar/timing.hpp"

namespace xmar::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int to_int(std::int64_t v, const std::string& key) {
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("key '" + key + "' is out of range");
  return static_cast<int>(v);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Write-then-rename, so an interrupted run never leaves a torn checkpoint.
void save_atomic(const fs::path& path, const Checkpoint& ck) {
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp, ck);
  fs::rename(tmp, path);
}

json dataset_json(const DatasetSplit& task) {
  return {{"format", task.train.format},
          {"source", task.train.source},
          {"train_size", task.train.size()},
          {"test_size", task.test.size()},
          {"num_labels", task.train.num_labels()},
          {"vocab_size", task.vocab.size()}};
}

double max_linf(const Tensor<float>& a, const Tensor<float>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

// Keys whose change would alter the optimisation trajectory.
json trajectory_keys(json train_config) {
  for (const char* k : {"max_steps", "patience", "checkpoint_every", "eval_every", "train_eval_limit"}) {
    train_config.erase(k);
  }
  return train_config;
}

void check_resume_compatible(const Checkpoint& ck, const TrainConfig& cfg, const std::string& victim_digest_hex,
                             int vocab_size, int patch) {
  if (ck.meta.value("victim_sha256", "") != victim_digest_hex) {
    throw ConfigError("resume: checkpoint was trained against a different victim");
  }
  const json saved = trajectory_keys(ck.meta.at("config"));
  const json now = trajectory_keys(cfg.to_json());
  for (const auto& [key, value] : now.items()) {
    if (!saved.contains(key) || saved[key] != value) {
      throw ConfigError("resume: setting '" + key + "' differs from the checkpoint");
    }
  }
  if (ck.meta.at("patch").get<int>() != patch) throw ConfigError("resume: patch size differs from the checkpoint");
  if (ck.array("theta").dim(0) != vocab_size) throw ConfigError("resume: vocabulary differs from the checkpoint");
}

}  // namespace

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      // shared
      "seed", "out_dir",
      // pretrain-victim
      "arch", "num_labels", "image_h", "image_w", "image_c", "victim_patch", "victim_dim", "victim_heads",
      "victim_blocks", "victim_mlp_ratio", "epochs", "train_samples", "holdout_samples", "pretrain_batch",
      "pretrain_lr", "task_seed", "shapes_noise",
      // data
      "dataset_format", "dataset_path", "train_path", "test_path", "train_size", "test_size", "split_seed",
      "vocab_max", "dataset_cache",
      // reprogram / eval
      "victim_checkpoint", "batch_size", "lr", "lambda", "max_steps", "m", "eval_every", "remap", "bounded",
      "epsilon", "base_image", "q", "accessible_labels", "head_bias", "theta_init", "patience", "train_eval_limit",
      "checkpoint_every", "patch", "patch_multiple", "export_samples",
      // baseline
      "holdout_fraction", "sgd_lr", "sgd_epochs",
      // bench-timing
      "timing_lengths", "timing_repeats", "timing_inner", "timing_batch", "timing_patch", "timing_channels",
      "timing_backward"};
  return keys;
}

DataSettings DataSettings::from_config(const FlatConfig& cfg) {
  DataSettings d;
  d.format = cfg.get("dataset_format");
  if (d.format == "splice" || d.format == "cache") {
    d.path = cfg.get("dataset_path");
  } else if (d.format == "dna-tsv" || d.format == "text-csv") {
    d.train_path = cfg.get("train_path");
    d.test_path = cfg.get("test_path");
  } else {
    throw ConfigError("dataset_format must be splice, dna-tsv, text-csv or cache, got '" + d.format + "'");
  }
  d.cache = cfg.get_or("dataset_cache", "");
  d.train_size = cfg.get_int_or("train_size", d.train_size);
  d.test_size = cfg.get_int_or("test_size", d.test_size);
  d.split_seed = static_cast<std::uint64_t>(cfg.get_int_or("split_seed", 0));
  d.vocab_max = to_int(cfg.get_int_or("vocab_max", d.vocab_max), "vocab_max");
  return d;
}

DatasetSplit load_task(const DataSettings& data) {
  if (data.format == "cache") return load_dataset_cache(data.path);
  if (!data.cache.empty() && fs::exists(data.cache)) return load_dataset_cache(data.cache);
  DatasetSplit out;
  if (data.format == "splice") {
    out = split_dataset(load_splice(data.path), data.train_size, data.test_size, data.split_seed, Vocab::dna());
  } else if (data.format == "dna-tsv") {
    out.train = load_dna_tsv(data.train_path, "train");
    out.test = load_dna_tsv(data.test_path, "test");
    out.vocab = Vocab::dna();
  } else if (data.format == "text-csv") {
    out = load_text_csv(data.train_path, data.test_path, data.vocab_max);
  } else {
    throw ConfigError("unknown dataset_format '" + data.format + "'");
  }
  if (!data.cache.empty()) save_dataset_cache(data.cache, out);
  return out;
}

PretrainSettings PretrainSettings::from_config(const FlatConfig& cfg) {
  PretrainSettings s;
  s.arch = parse_victim_arch(cfg.get("arch"));
  s.num_labels = to_int(cfg.get_int_or("num_labels", 10), "num_labels");
  s.image = {to_int(cfg.get_int_or("image_h", 64), "image_h"), to_int(cfg.get_int_or("image_w", 64), "image_w"),
             to_int(cfg.get_int_or("image_c", 3), "image_c")};
  s.dims.patch = to_int(cfg.get_int_or("victim_patch", s.dims.patch), "victim_patch");
  s.dims.dim = to_int(cfg.get_int_or("victim_dim", s.dims.dim), "victim_dim");
  s.dims.heads = to_int(cfg.get_int_or("victim_heads", s.dims.heads), "victim_heads");
  s.dims.blocks = to_int(cfg.get_int_or("victim_blocks", s.dims.blocks), "victim_blocks");
  s.dims.mlp_ratio = to_int(cfg.get_int_or("victim_mlp_ratio", s.dims.mlp_ratio), "victim_mlp_ratio");
  s.seed = static_cast<std::uint64_t>(cfg.get_int_or("seed", 0));
  s.task.seed = static_cast<std::uint64_t>(cfg.get_int_or("task_seed", 1));
  s.task.num_classes = s.num_labels;
  s.task.image = s.image;
  s.task.noise = cfg.get_double_or("shapes_noise", s.task.noise);
  s.options.epochs = to_int(cfg.get_int_or("epochs", s.options.epochs), "epochs");
  s.options.train_samples = to_int(cfg.get_int_or("train_samples", s.options.train_samples), "train_samples");
  s.options.holdout_samples = to_int(cfg.get_int_or("holdout_samples", s.options.holdout_samples), "holdout_samples");
  s.options.batch_size = to_int(cfg.get_int_or("pretrain_batch", s.options.batch_size), "pretrain_batch");
  s.options.lr = cfg.get_double_or("pretrain_lr", s.options.lr);
  s.options.seed = s.seed;
  s.out_dir = cfg.get("out_dir");
  if (s.num_labels < 1 || s.num_labels > kShapeClassCount) {
    throw ConfigError("num_labels must lie in [1, " + std::to_string(kShapeClassCount) + "] for the shapes task");
  }
  if (s.options.epochs < 0 || s.options.train_samples < 1 || s.options.holdout_samples < 1 ||
      s.options.batch_size < 1 || !(s.options.lr >= 0)) {
    throw ConfigError("pretraining options must be positive (epochs may be 0)");
  }
  return s;
}

ExperimentConfig ExperimentConfig::from_config(const FlatConfig& cfg) {
  ExperimentConfig e;
  e.victim_checkpoint = cfg.get("victim_checkpoint");
  e.data = DataSettings::from_config(cfg);
  TrainConfig& t = e.train;
  t.batch_size = to_int(cfg.get_int_or("batch_size", t.batch_size), "batch_size");
  t.lr = cfg.get_double_opt("lr");
  t.lambda = cfg.get_double_or("lambda", t.lambda);
  t.max_steps = cfg.get_int_opt("max_steps");
  t.m = to_int(cfg.get_int_or("m", t.m), "m");
  t.eval_every = cfg.get_int_or("eval_every", t.eval_every);
  t.seed = static_cast<std::uint64_t>(cfg.get_int_or("seed", 0));
  t.remap = parse_remap_mode(cfg.get_or("remap", "max"));
  if (cfg.get_bool_or("bounded", false)) {
    t.epsilon = cfg.get_double("epsilon");
    e.base_image = cfg.get("base_image");
  } else if (cfg.has("epsilon") || cfg.has("base_image")) {
    throw ConfigError("epsilon and base_image need 'bounded = true'");
  }
  t.q = to_int(cfg.get_int_or("q", 0), "q");
  for (auto v : cfg.get_int_list_or("accessible_labels", {})) t.accessible.push_back(to_int(v, "accessible_labels"));
  if (t.remap == RemapMode::kLinear && t.q == 0 && t.accessible.empty()) {
    throw ConfigError("remap = linear needs key 'q' (or 'accessible_labels')");
  }
  if (t.q == 0) t.q = static_cast<int>(t.accessible.size());
  t.head_bias = cfg.get_bool_or("head_bias", false);
  t.theta_init = cfg.get_double_or("theta_init", t.theta_init);
  t.patience = cfg.get_int_or("patience", 0);
  t.train_eval_limit = cfg.get_int_or("train_eval_limit", 0);
  t.checkpoint_every = cfg.get_int_or("checkpoint_every", 0);
  t.validate();
  if (auto p = cfg.get_int_opt("patch")) e.patch = to_int(*p, "patch");
  e.patch_multiple = to_int(cfg.get_int_or("patch_multiple", 8), "patch_multiple");
  e.export_samples = to_int(cfg.get_int_or("export_samples", 4), "export_samples");
  e.out_dir = cfg.get_or("out_dir", "");
  if (e.patch_multiple < 1 || e.export_samples < 0) throw ConfigError("patch_multiple and export_samples out of range");
  return e;
}

TokenSequence tokenize_input(const Vocab& vocab, const std::string& format, const std::string& input) {
  TokenSequence out;
  if (format == "text-csv") {
    for (const auto& w : tokenize_words(input)) out.push_back(vocab.lookup(w));
    return out;
  }
  for (char ch : input) {
    if (std::isspace(static_cast<unsigned char>(ch))) continue;
    out.push_back(vocab.lookup(std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(ch))))));
  }
  return out;
}

json pretrain_victim_cmd(const FlatConfig& cfg) {
  cfg.reject_unknown(known_keys());
  const auto s = PretrainSettings::from_config(cfg);
  const auto started = std::chrono::steady_clock::now();
  auto model = build_victim<float>(s.arch, s.image, s.num_labels, s.seed, s.dims);
  const auto report = pretrain_victim(model, s.task, s.options);
  const json extra = {{"seed", s.seed},
                      {"task_seed", s.task.seed},
                      {"holdout_accuracy", report.holdout_accuracy},
                      {"epoch_loss", report.epoch_loss},
                      {"run_config", cfg.to_json()}};
  const Checkpoint ck = victim_to_checkpoint(model, extra);
  fs::create_directories(s.out_dir);
  const fs::path path = fs::path(s.out_dir) / "victim.xmar";
  save_atomic(path, ck);
  json out = {{"command", "pretrain-victim"},
              {"checkpoint", path.string()},
              {"arch", to_string(s.arch)},
              {"parameter_count", model.parameter_count()},
              {"holdout_accuracy", report.holdout_accuracy},
              {"epoch_loss", report.epoch_loss},
              {"steps", report.steps},
              {"victim_sha256", victim_digest(model)},
              {"elapsed_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()},
              {"config", cfg.to_json()}};
  // A held-out shapes image, handy as the base image of a bounded run.
  const fs::path sample = fs::path(s.out_dir) / "shapes_sample.png";
  write_file(sample, encode_png(render_shape(s.task, kHoldoutOffset).image));
  out["shapes_sample"] = sample.string();
  write_text(fs::path(s.out_dir) / "pretrain_report.json", out.dump(2) + "\n");
  write_text(fs::path(s.out_dir) / "config.txt", cfg.to_text());
  return out;
}

json reprogram_cmd(const FlatConfig& cfg, const std::optional<std::string>& resume) {
  cfg.reject_unknown(known_keys());
  const auto ex = ExperimentConfig::from_config(cfg);
  const fs::path out_dir = cfg.get("out_dir");
  const auto started = std::chrono::steady_clock::now();

  const VictimModel<float> victim = victim_from_checkpoint(load_checkpoint(ex.victim_checkpoint));
  if (!victim.frozen) throw Error(ex.victim_checkpoint + ": victim is not frozen (run pretrain-victim)");
  const std::string digest = victim_digest(victim);
  const DatasetSplit task = load_task(ex.data);
  std::optional<Tensor<float>> base;
  if (ex.base_image) {
    base = decode_png(read_file(*ex.base_image));
    if (base->shape() != victim.image.shape()) {
      throw ConfigError("base_image " + *ex.base_image + " has shape " + to_string(base->shape()) +
                        ", victim expects " + to_string(victim.image.shape()));
    }
  }
  const std::int64_t longest = std::max(longest_sequence(task.train), longest_sequence(task.test));
  const int patch = ex.patch ? *ex.patch : select_patch_size(victim.image, longest, ex.patch_multiple);

  TrainState state;
  if (resume) {
    const Checkpoint ck = load_checkpoint(*resume);
    check_resume_compatible(ck, ex.train, digest, task.vocab.size(), patch);
    state = train_state_from_checkpoint(ck);
  } else {
    state = init_train_state(
        setup_reprogram(victim, ex.train, task.vocab.size(), task.train.num_labels(), patch, Vocab::kPad, base));
  }

  fs::create_directories(out_dir);
  write_text(out_dir / "config.txt", cfg.to_text());
  const json extra = {{"vocab", task.vocab.to_json()},
                      {"dataset_format", task.train.format},
                      {"label_names", task.train.label_names},
                      {"victim_sha256", digest},
                      {"run_config", cfg.to_json()}};
  std::ofstream metrics_out(out_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics_out) throw Error("cannot write " + (out_dir / "metrics.jsonl").string());
  TrainHooks hooks;
  hooks.on_metrics = [&](const RunMetrics& m) {
    const std::string line = m.to_json().dump();
    metrics_out << line << "\n" << std::flush;
    std::cerr << line << "\n";
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    save_atomic(out_dir / "checkpoint.xmar", train_state_to_checkpoint(s, ex.train, extra));
  };
  const auto metrics = train(state, victim, task.train, task.test, ex.train, hooks);
  const fs::path program_path = out_dir / "program.xmar";
  const Checkpoint final_ck = train_state_to_checkpoint(state, ex.train, extra);
  save_atomic(program_path, final_ck);

  RunMetrics last;
  if (!metrics.empty() && metrics.back().step == state.step) {
    last = metrics.back();
  } else {
    last.step = state.step;
    last.train_acc = evaluate(state.model, victim, task.train, static_cast<std::size_t>(ex.train.train_eval_limit));
    last.test_acc = evaluate(state.model, victim, task.test);
  }

  json samples = json::array();
  const auto& model = state.model;
  for (int i = 0; i < ex.export_samples && i < static_cast<int>(task.test.size()); ++i) {
    const auto padded = pad_and_clip(task.test.examples[i].tokens, model.program.max_tokens(), model.program.pad_token);
    const Tensor<float> img = model.bounded ? conceal_image(model.program, *model.bounded, padded)
                                            : embed_image(model.program, padded);
    const fs::path p = out_dir / ("sample_" + std::to_string(i) + ".png");
    const auto png = encode_png(img, model.bounded ? &model.bounded->base_image : nullptr);
    write_file(p, png);
    json s = {{"path", p.string()}, {"label", task.test.examples[i].label}};
    if (model.bounded) s["linf_to_base"] = max_linf(decode_png(png), model.bounded->base_image);
    samples.push_back(s);
  }

  json out = {{"command", "reprogram"},
              {"checkpoint", program_path.string()},
              {"program_sha256", sha256_hex(encode_checkpoint(final_ck))},
              {"victim_sha256", digest},
              {"victim_unchanged", victim_digest(victim) == digest},
              {"steps", state.step},
              {"final_train_acc", last.train_acc},
              {"final_test_acc", last.test_acc},
              {"best_test_acc", state.best_test},
              {"majority_rate", majority_rate(task.test)},
              {"patch", model.program.patch},
              {"max_tokens", model.program.max_tokens()},
              {"remap", to_string(model.mode)},
              {"dataset", dataset_json(task)},
              {"samples", samples},
              {"elapsed_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()},
              {"train_config", ex.train.to_json()},
              {"config", cfg.to_json()}};
  if (resume) out["resumed_from"] = *resume;
  write_text(out_dir / "summary.json", out.dump(2) + "\n");
  return out;
}

json eval_cmd(const FlatConfig& cfg, const std::string& checkpoint) {
  cfg.reject_unknown(known_keys());
  const auto ex = ExperimentConfig::from_config(cfg);
  const VictimModel<float> victim = victim_from_checkpoint(load_checkpoint(ex.victim_checkpoint));
  const Checkpoint ck = load_checkpoint(checkpoint);
  const std::string digest = victim_digest(victim);
  if (ck.meta.value("victim_sha256", digest) != digest) {
    throw ConfigError(checkpoint + " was trained against a different victim than " + ex.victim_checkpoint);
  }
  const TrainState state = train_state_from_checkpoint(ck);
  const DatasetSplit task = load_task(ex.data);
  if (task.train.num_labels() != state.model.num_targets) {
    throw ConfigError("dataset has " + std::to_string(task.train.num_labels()) + " labels, program expects " +
                      std::to_string(state.model.num_targets));
  }
  json out = {{"command", "eval"},
              {"checkpoint", checkpoint},
              {"step", state.step},
              {"train_acc", evaluate(state.model, victim, task.train)},
              {"test_acc", evaluate(state.model, victim, task.test)},
              {"majority_rate", majority_rate(task.test)},
              {"victim_sha256", digest},
              {"dataset", dataset_json(task)},
              {"config", cfg.to_json()}};
  if (!ex.out_dir.empty()) {
    fs::create_directories(ex.out_dir);
    write_text(fs::path(ex.out_dir) / "eval_report.json", out.dump(2) + "\n");
  }
  return out;
}

json export_image_cmd(const std::string& checkpoint, const std::string& input, const std::string& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const TrainState state = train_state_from_checkpoint(ck);
  if (!ck.meta.contains("vocab")) throw ParseError(checkpoint + ": no vocabulary stored");
  const Vocab vocab = Vocab::from_json(ck.meta.at("vocab"));
  const auto tokens = tokenize_input(vocab, ck.meta.value("dataset_format", "splice"), input);
  const auto& model = state.model;
  const auto padded = pad_and_clip(tokens, model.program.max_tokens(), model.program.pad_token);
  const Tensor<float> img =
      model.bounded ? conceal_image(model.program, *model.bounded, padded) : embed_image(model.program, padded);
  const auto png = encode_png(img, model.bounded ? &model.bounded->base_image : nullptr);
  write_file(out, png);
  json report = {{"command", "export-image"},
                 {"checkpoint", checkpoint},
                 {"out", out},
                 {"tokens", tokens.size()},
                 {"max_tokens", model.program.max_tokens()},
                 {"clipped", static_cast<std::int64_t>(tokens.size()) > model.program.max_tokens()},
                 {"image", {model.program.image.h, model.program.image.w, model.program.image.c}},
                 {"bounded", model.bounded.has_value()}};
  if (model.bounded) {
    report["epsilon"] = model.bounded->epsilon;
    report["linf_to_base"] = max_linf(decode_png(png), model.bounded->base_image);
  }
  if (ck.meta.contains("run_config")) report["config"] = ck.meta["run_config"];
  return report;
}

json baseline_cmd(const FlatConfig& cfg) {
  cfg.reject_unknown(known_keys());
  const auto data = DataSettings::from_config(cfg);
  const DatasetSplit task = load_task(data);
  SgdOptions opts;
  opts.lr = cfg.get_double_or("sgd_lr", opts.lr);
  opts.epochs = to_int(cfg.get_int_or("sgd_epochs", opts.epochs), "sgd_epochs");
  opts.seed = static_cast<std::uint64_t>(cfg.get_int_or("seed", 0));
  const double frac = cfg.get_double_or("holdout_fraction", 0.1);
  if (!(opts.lr > 0) || opts.epochs < 1) throw ConfigError("sgd_lr and sgd_epochs must be positive");
  const double unigram = tfidf_accuracy(fit_tfidf(task.train, 1, opts), task.test);
  const NSelection sel = select_n(task.train, frac, opts);
  const double ngram = tfidf_accuracy(sel.model, task.test);
  json out = {{"command", "baseline"},
              {"unigram_test_acc", unigram},
              {"best_n", sel.best_n},
              {"ngram_test_acc", ngram},
              {"holdout_accuracy", sel.holdout_accuracy},
              {"holdout_fraction", frac},
              {"majority_rate", majority_rate(task.test)},
              {"dataset", dataset_json(task)},
              {"config", cfg.to_json()}};
  if (const auto dir = cfg.get_or("out_dir", ""); !dir.empty()) {
    fs::create_directories(dir);
    write_text(fs::path(dir) / "baseline_report.json", out.dump(2) + "\n");
  }
  return out;
}

json bench_timing_cmd(const FlatConfig& cfg) {
  cfg.reject_unknown(known_keys());
  TimingOptions opt;
  opt.lengths = cfg.get_int_list_or("timing_lengths", opt.lengths);
  opt.repeats = to_int(cfg.get_int_or("timing_repeats", opt.repeats), "timing_repeats");
  opt.inner = to_int(cfg.get_int_or("timing_inner", opt.inner), "timing_inner");
  opt.batch = to_int(cfg.get_int_or("timing_batch", opt.batch), "timing_batch");
  opt.patch = to_int(cfg.get_int_or("timing_patch", opt.patch), "timing_patch");
  opt.channels = to_int(cfg.get_int_or("timing_channels", opt.channels), "timing_channels");
  opt.backward = cfg.get_bool_or("timing_backward", opt.backward);
  opt.seed = static_cast<std::uint64_t>(cfg.get_int_or("seed", 0));
  const TimingReport report = measure_embed_timing(opt);
  double worst = 0;
  std::fprintf(stderr, "%8s %14s %12s\n", "N", "image", "median_ms");
  for (const auto& p : report.points) {
    const std::string im = std::to_string(p.image.h) + "x" + std::to_string(p.image.w) + "x" + std::to_string(p.image.c);
    std::fprintf(stderr, "%8lld %14s %12.4f\n", static_cast<long long>(p.tokens), im.c_str(), p.median_s * 1e3);
  }
  std::fprintf(stderr, "%8s %8s %8s\n", "N", "2N", "ratio");
  for (const auto& r : report.ratios) {
    std::fprintf(stderr, "%8lld %8lld %8.3f\n", static_cast<long long>(r.n), static_cast<long long>(2 * r.n), r.ratio);
    worst = std::max(worst, r.ratio);
  }
  json out = {{"command", "bench-timing"},
              {"options", opt.to_json()},
              {"timing", report.to_json()},
              {"max_ratio", worst},
              {"within_linear_bound", worst <= 3.0},
              {"threads", runtime::threads()},
              {"config", cfg.to_json()}};
  if (const auto dir = cfg.get_or("out_dir", ""); !dir.empty()) {
    fs::create_directories(dir);
    write_text(fs::path(dir) / "timing_report.json", out.dump(2) + "\n");
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"xmar: reprogram frozen image classifiers for sequence tasks"};
  app.require_subcommand(1);
  std::string config, checkpoint, resume, input, out;

  auto* pre = app.add_subcommand("pretrain-victim", "Build and pretrain a victim on the synthetic shapes task");
  pre->add_option("--config", config, "flat key = value config file")->required();
  auto* rep = app.add_subcommand("reprogram", "Train an adversarial program against a frozen victim");
  rep->add_option("--config", config, "flat key = value config file")->required();
  rep->add_option("--resume", resume, "program checkpoint to continue from");
  auto* ev = app.add_subcommand("eval", "Evaluate a program checkpoint on the configured dataset");
  ev->add_option("--config", config, "flat key = value config file")->required();
  ev->add_option("--checkpoint", checkpoint, "program checkpoint")->required();
  auto* exp = app.add_subcommand("export-image", "Render the reprogrammed image for one input sequence");
  exp->add_option("--checkpoint", checkpoint, "program checkpoint")->required();
  exp->add_option("--input", input, "raw input sequence or text")->required();
  exp->add_option("--out", out, "output PNG path")->required();
  auto* base = app.add_subcommand("baseline", "TF-IDF n-gram + logistic SGD baselines");
  base->add_option("--config", config, "flat key = value config file")->required();
  auto* bench = app.add_subcommand("bench-timing", "Time the program transform at growing sequence lengths");
  bench->add_option("--config", config, "flat key = value config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  runtime::configure_from_env();
  try {
    auto load = [&] { return config.empty() ? FlatConfig() : FlatConfig::load(config); };
    json report;
    if (pre->parsed()) {
      report = pretrain_victim_cmd(load());
    } else if (rep->parsed()) {
      report = reprogram_cmd(load(), resume.empty() ? std::nullopt : std::optional<std::string>(resume));
    } else if (ev->parsed()) {
      report = eval_cmd(load(), checkpoint);
    } else if (exp->parsed()) {
      report = export_image_cmd(checkpoint, input, out);
    } else if (base->parsed()) {
      report = baseline_cmd(load());
    } else {
      report = bench_timing_cmd(load());
    }
    std::cout << report.dump(2) << std::endl;
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntimeError;
  }
}

}  // namespace xmar::cli
