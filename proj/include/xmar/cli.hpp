#pragma once

// Command implementations behind the `xmar` executable. Every command takes a
// flat config, writes its artifacts under out_dir (when set) and returns the
// JSON report it also prints.

#include <optional>
#include <string>

#include "json.hpp"
#include "xmar/dataset.hpp"
#include "xmar/flat_config.hpp"
#include "xmar/shapes.hpp"
#include "xmar/trainer.hpp"

namespace xmar::cli {

enum ExitCode { kOk = 0, kRuntimeError = 1, kConfigError = 2 };

// Every key any command understands; anything else is rejected.
const std::set<std::string>& known_keys();

struct DataSettings {
  std::string format;  // splice, dna-tsv, text-csv, cache
  std::string path;    // splice file or cache file
  std::string train_path;
  std::string test_path;
  std::string cache;  // optional: written after loading raw files
  std::int64_t train_size = 2700;
  std::int64_t test_size = 490;
  std::uint64_t split_seed = 0;
  int vocab_max = 10000;

  static DataSettings from_config(const FlatConfig& cfg);
};

DatasetSplit load_task(const DataSettings& data);

struct PretrainSettings {
  VictimArch arch = VictimArch::kSmallCnn;
  int num_labels = 10;
  ImageSpec image;
  TransformerDims dims;
  ShapesTask task;
  PretrainOptions options;
  std::uint64_t seed = 0;
  std::string out_dir;

  static PretrainSettings from_config(const FlatConfig& cfg);
};

struct ExperimentConfig {
  std::string victim_checkpoint;
  DataSettings data;
  TrainConfig train;
  std::optional<std::string> base_image;  // PNG, required when bounded
  std::optional<int> patch;               // default: select_patch_size
  int patch_multiple = 8;
  int export_samples = 4;
  std::string out_dir;

  static ExperimentConfig from_config(const FlatConfig& cfg);
};

nlohmann::json pretrain_victim_cmd(const FlatConfig& cfg);
nlohmann::json reprogram_cmd(const FlatConfig& cfg, const std::optional<std::string>& resume = std::nullopt);
nlohmann::json eval_cmd(const FlatConfig& cfg, const std::string& checkpoint);
nlohmann::json export_image_cmd(const std::string& checkpoint, const std::string& input, const std::string& out);
nlohmann::json baseline_cmd(const FlatConfig& cfg);
nlohmann::json bench_timing_cmd(const FlatConfig& cfg);

// Tokenizes raw input the way the program's training data was tokenized.
TokenSequence tokenize_input(const Vocab& vocab, const std::string& format, const std::string& input);

// Full front end: parses argv, dispatches, maps errors to exit codes.
int run(int argc, char** argv);

}  // namespace xmar::cli
