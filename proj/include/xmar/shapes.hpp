#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmar/victim.hpp"

namespace xmar {

// Procedural 10-class image task used to pretrain victims. Sample i has label
// i % num_classes and is a pure function of (seed, i).
struct ShapesTask {
  std::uint64_t seed = 0;
  int num_classes = 10;
  ImageSpec image;
  double noise = 0.08;
};

inline constexpr int kShapeClassCount = 10;
const char* shape_class_name(int label);

struct ShapeSample {
  Tensor<float> image;  // (h, w, c) in [-1, 1]
  int label = 0;
};

ShapeSample render_shape(const ShapesTask& task, std::uint64_t index);

// Renders samples [first, first + count) into one (count, h, w, c) batch.
Tensor<float> render_batch(const ShapesTask& task, std::uint64_t first, std::int64_t count, std::vector<int>* labels);

// Held-out samples are drawn from a disjoint index range.
inline constexpr std::uint64_t kHoldoutOffset = 1'000'000'000;

struct PretrainOptions {
  int epochs = 5;
  int train_samples = 2000;
  int holdout_samples = 500;
  int batch_size = 16;
  double lr = 2e-3;
  std::uint64_t seed = 0;  // shuffling
};

struct PretrainReport {
  double holdout_accuracy = 0;
  std::vector<double> epoch_loss;
  std::int64_t steps = 0;
};

double shapes_accuracy(const VictimModel<float>& model, const ShapesTask& task, std::uint64_t first, int count);

// Trains all victim weights with Adam on cross-entropy, then freezes the model.
PretrainReport pretrain_victim(VictimModel<float>& model, const ShapesTask& task, const PretrainOptions& options);

}  // namespace xmar
