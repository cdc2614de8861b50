#include <cmath>
#include <random>

#include "doctest.h"
#include "xmar/tfidf.hpp"

using namespace xmar;

namespace {

LabeledDataset make_dataset(std::vector<Example> examples, int labels) {
  LabeledDataset ds;
  ds.examples = std::move(examples);
  for (int i = 0; i < labels; ++i) ds.label_names.push_back(std::to_string(i));
  return ds;
}

// Class 0 joins "A C" / "G T" pairs, class 1 joins "C A" / "T G": every document
// has equal unigram counts, only the order differs.
LabeledDataset order_corpus(std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < size; ++i) {
    const int label = i % 2;
    TokenSequence seq;
    for (int k = 0; k < 6; ++k) {
      const bool first = rng() % 2 == 0;
      const int a = first ? 2 : 4, b = first ? 3 : 5;
      seq.push_back(label == 0 ? a : b);
      seq.push_back(label == 0 ? b : a);
    }
    out.push_back({seq, label});
  }
  return make_dataset(std::move(out), 2);
}

// Label 1 iff token 9 appears anywhere in A/C noise.
LabeledDataset keyword_corpus(std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < size; ++i) {
    const int label = i % 2;
    TokenSequence seq;
    for (int k = 0; k < 10; ++k) seq.push_back(2 + static_cast<int>(rng() % 2));
    if (label == 1) seq[rng() % 10] = 9;
    out.push_back({seq, label});
  }
  return make_dataset(std::move(out), 2);
}

}  // namespace

TEST_CASE("a single document gets unit idf") {
  const auto ds = make_dataset({{{2, 2, 3}, 0}}, 1);
  const auto m = fit_tfidf(ds, 1, {0.01, 0, 0});
  REQUIRE(m.idf.size() == 2);
  CHECK(m.idf[0] == doctest::Approx(1.0));
  CHECK(m.idf[1] == doctest::Approx(1.0));
  const auto x = m.transform({2, 2, 3});
  REQUIRE(x.size() == 2);
  CHECK(x[0].second == doctest::Approx(2.0 / std::sqrt(5.0)));
  CHECK(x[1].second == doctest::Approx(1.0 / std::sqrt(5.0)));
}

TEST_CASE("tf-idf weights match a hand-computed corpus") {
  // Docs: [2 3], [2 2], [4]. df(2)=2, df(3)=1, df(4)=1, D=3.
  const auto ds = make_dataset({{{2, 3}, 0}, {{2, 2}, 1}, {{4}, 0}}, 2);
  const auto m = fit_tfidf(ds, 1, {0.01, 0, 0});
  const double idf2 = std::log(4.0 / 3.0) + 1.0, idf3 = std::log(2.0) + 1.0;
  CHECK(m.idf[m.features.at({2})] == doctest::Approx(idf2));
  CHECK(m.idf[m.features.at({3})] == doctest::Approx(idf3));
  const auto x = m.transform({2, 3});
  const double norm = std::sqrt(0.25 * idf2 * idf2 + 0.25 * idf3 * idf3);
  CHECK(x[0].second == doctest::Approx(0.5 * idf2 / norm));
  CHECK(x[1].second == doctest::Approx(0.5 * idf3 / norm));
  // Unseen n-grams vanish; an all-unseen document maps to the zero vector.
  CHECK(m.transform({7, 8}).empty());
  const auto bi = fit_tfidf(ds, 2, {0.01, 0, 0});
  CHECK(bi.features.count({2, 3}) == 1);
  CHECK(bi.features.count({2, 2}) == 1);
  CHECK(bi.features.size() == 5);
}

TEST_CASE("unigram features are invariant to repeating a document") {
  std::mt19937_64 rng(3);
  const auto ds = keyword_corpus(1, 40);
  const auto m = fit_tfidf(ds, 1, {0.05, 3, 1});
  for (int draw = 0; draw < 50; ++draw) {
    TokenSequence doc;
    for (int k = 0; k < 1 + draw % 7; ++k) doc.push_back(2 + static_cast<int>(rng() % 8));
    TokenSequence twice = doc;
    twice.insert(twice.end(), doc.begin(), doc.end());
    const auto a = m.transform(doc), b = m.transform(twice);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i].second == doctest::Approx(a[i].second));
  }
}

TEST_CASE("identical documents with different labels cap accuracy at one half") {
  const auto ds = make_dataset({{{2, 3, 4}, 0}, {{2, 3, 4}, 1}, {{2, 3, 4}, 0}, {{2, 3, 4}, 1}}, 2);
  const auto m = fit_tfidf(ds, 2, {0.1, 20, 0});
  CHECK(tfidf_accuracy(m, ds) <= 0.5);
}

TEST_CASE("order-only corpus needs n >= 2") {
  const auto train = order_corpus(1, 200), test = order_corpus(2, 100);
  const auto sel = select_n(train, 0.25, {0.1, 30, 0});
  CHECK(sel.best_n >= 2);
  CHECK(sel.holdout_accuracy[0] < sel.holdout_accuracy[1]);
  CHECK(tfidf_accuracy(sel.model, test) >= 0.95);
  CHECK(tfidf_accuracy(fit_tfidf(train, 1, {0.1, 30, 0}), test) <= 0.65);
}

TEST_CASE("keyword corpus is solved by unigrams and ties keep the smaller n") {
  const auto train = keyword_corpus(3, 200), test = keyword_corpus(4, 100);
  const auto sel = select_n(train, 0.2, {0.5, 30, 0});
  CHECK(sel.holdout_accuracy[0] == 1.0);
  CHECK(sel.best_n == 1);
  CHECK(tfidf_accuracy(sel.model, test) == 1.0);
}

TEST_CASE("select_n holdout size and argument checks") {
  const auto ds = make_dataset({{{2}, 0}, {{3}, 1}, {{2}, 0}, {{3}, 1}}, 2);
  const auto sel = select_n(ds, 0.5, {0.1, 5, 0});
  REQUIRE(sel.holdout_accuracy.size() == 3);
  for (double a : sel.holdout_accuracy) CHECK(std::fmod(a * 2.0, 1.0) == 0.0);
  CHECK_THROWS_AS(select_n(ds, 0.0, {}), ConfigError);
  CHECK_THROWS_AS(select_n(ds, 0.6, {}), ConfigError);
  CHECK_THROWS_AS(fit_tfidf(ds, 4, {}), ConfigError);
}

TEST_CASE("fitting is deterministic per seed") {
  const auto ds = keyword_corpus(5, 60);
  const auto a = fit_tfidf(ds, 2, {0.05, 5, 9});
  const auto b = fit_tfidf(ds, 2, {0.05, 5, 9});
  CHECK(a.weight == b.weight);
  CHECK(a.bias == b.bias);
}
