#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "xmar/dataset.hpp"

namespace xmar {

using SparseVector = std::vector<std::pair<int, double>>;

struct SgdOptions {
  double lr = 0.01;
  int epochs = 50;
  std::uint64_t seed = 0;
};

// n-grams of lengths 1..n over token ids, smoothed idf, L2-normalised rows,
// multinomial logistic regression trained by constant-rate SGD.
struct TfidfModel {
  int n = 1;
  int num_labels = 0;
  std::map<std::vector<int>, int> features;
  std::vector<double> idf;
  std::vector<double> weight;  // (features, labels), row-major
  std::vector<double> bias;    // (labels)

  SparseVector transform(const TokenSequence& tokens) const;
  std::vector<double> scores(const TokenSequence& tokens) const;
  int predict(const TokenSequence& tokens) const;
};

// tf = count / document token count, idf = ln((1 + D) / (1 + df)) + 1.
TfidfModel fit_tfidf(const LabeledDataset& train, int n, const SgdOptions& options = {});

double tfidf_accuracy(const TfidfModel& model, const LabeledDataset& data);

struct NSelection {
  int best_n = 1;
  std::vector<double> holdout_accuracy;  // index n-1
  TfidfModel model;                      // refit on the full train set
};

// Tries n = 1..3 on train-minus-holdout, keeps the best (ties: smaller n).
NSelection select_n(const LabeledDataset& train, double holdout_fraction, const SgdOptions& options = {});

}  // namespace xmar
