#include "xmar/tfidf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xmar {
namespace {

// Raw n-gram counts for one document.
std::map<std::vector<int>, int> count_ngrams(const TokenSequence& tokens, int n) {
  std::map<std::vector<int>, int> counts;
  for (int len = 1; len <= n; ++len) {
    for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
      ++counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + len)];
    }
  }
  return counts;
}

}  // namespace

SparseVector TfidfModel::transform(const TokenSequence& tokens) const {
  SparseVector out;
  if (tokens.empty()) return out;
  const double doc_len = static_cast<double>(tokens.size());
  for (const auto& [gram, count] : count_ngrams(tokens, n)) {
    auto it = features.find(gram);
    if (it == features.end()) continue;
    out.emplace_back(it->second, count / doc_len * idf[it->second]);
  }
  double norm = 0;
  for (const auto& [f, v] : out) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& [f, v] : out) v /= norm;
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> TfidfModel::scores(const TokenSequence& tokens) const {
  std::vector<double> z(bias);
  for (const auto& [f, v] : transform(tokens)) {
    const double* row = weight.data() + static_cast<std::size_t>(f) * num_labels;
    for (int l = 0; l < num_labels; ++l) z[l] += row[l] * v;
  }
  return z;
}

int TfidfModel::predict(const TokenSequence& tokens) const {
  const auto z = scores(tokens);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

TfidfModel fit_tfidf(const LabeledDataset& train, int n, const SgdOptions& options) {
  if (n < 1 || n > 3) throw ConfigError("fit_tfidf: n must be 1, 2 or 3, got " + std::to_string(n));
  if (train.examples.empty()) throw Error("fit_tfidf: empty train set");
  TfidfModel model;
  model.n = n;
  model.num_labels = train.num_labels();
  if (model.num_labels < 1) throw Error("fit_tfidf: dataset has no labels");

  std::map<std::vector<int>, int> df;
  for (const auto& ex : train.examples)
    for (const auto& [gram, count] : count_ngrams(ex.tokens, n)) ++df[gram];
  const double docs = static_cast<double>(train.size());
  for (const auto& [gram, d] : df) {
    model.features.emplace(gram, static_cast<int>(model.idf.size()));
    model.idf.push_back(std::log((1.0 + docs) / (1.0 + d)) + 1.0);
  }
  model.weight.assign(model.idf.size() * model.num_labels, 0.0);
  model.bias.assign(model.num_labels, 0.0);

  std::vector<SparseVector> x;
  x.reserve(train.size());
  for (const auto& ex : train.examples) x.push_back(model.transform(ex.tokens));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options.seed);
  std::vector<double> z(model.num_labels);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      std::copy(model.bias.begin(), model.bias.end(), z.begin());
      for (const auto& [f, v] : x[i]) {
        const double* row = model.weight.data() + static_cast<std::size_t>(f) * model.num_labels;
        for (int l = 0; l < model.num_labels; ++l) z[l] += row[l] * v;
      }
      const double mx = *std::max_element(z.begin(), z.end());
      double total = 0;
      for (double& v : z) total += (v = std::exp(v - mx));
      for (double& v : z) v /= total;
      z[train.examples[i].label] -= 1.0;  // z now holds dL/dscores
      for (const auto& [f, v] : x[i]) {
        double* row = model.weight.data() + static_cast<std::size_t>(f) * model.num_labels;
        for (int l = 0; l < model.num_labels; ++l) row[l] -= options.lr * z[l] * v;
      }
      for (int l = 0; l < model.num_labels; ++l) model.bias[l] -= options.lr * z[l];
    }
  }
  return model;
}

double tfidf_accuracy(const TfidfModel& model, const LabeledDataset& data) {
  if (data.examples.empty()) throw Error("tfidf_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : data.examples) correct += model.predict(ex.tokens) == ex.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

NSelection select_n(const LabeledDataset& train, double holdout_fraction, const SgdOptions& options) {
  if (!(holdout_fraction > 0 && holdout_fraction <= 0.5)) {
    throw ConfigError("select_n: holdout fraction must lie in (0, 0.5]");
  }
  if (train.size() < 2) throw Error("select_n: need at least two training examples");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto held = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(train.size()))), 1,
      train.size() - 1);
  LabeledDataset fit_part = train, hold_part = train;
  fit_part.examples.clear();
  hold_part.examples.clear();
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < held ? hold_part : fit_part).examples.push_back(train.examples[order[i]]);
  }
  NSelection out;
  double best = -1;
  for (int n = 1; n <= 3; ++n) {
    const double acc = tfidf_accuracy(fit_tfidf(fit_part, n, options), hold_part);
    out.holdout_accuracy.push_back(acc);
    if (acc > best) {
      best = acc;
      out.best_n = n;
    }
  }
  out.model = fit_tfidf(train, out.best_n, options);
  return out;
}

}  // namespace xmar
