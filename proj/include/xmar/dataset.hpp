#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "xmar/program.hpp"

namespace xmar {

// Index 0 is always PAD and 1 is always UNK.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab();

  // Nucleobase vocabulary: PAD, UNK, A, C, G, T, D, N, S, R.
  static Vocab dna();

  int add(const std::string& token);
  int lookup(const std::string& token) const;  // UNK when absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json to_json() const { return tokens_; }
  static Vocab from_json(const nlohmann::json& j);
  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Example {
  TokenSequence tokens;
  int label = 0;
  bool operator==(const Example&) const = default;
};

struct LabeledDataset {
  std::vector<Example> examples;
  std::vector<std::string> label_names;
  std::string split = "all";  // train, test or all
  std::string source;         // file path
  std::string format;         // splice, dna-tsv, text-csv

  int num_labels() const { return static_cast<int>(label_names.size()); }
  std::size_t size() const { return examples.size(); }
  void validate() const;
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset test;
  Vocab vocab;
};

// UCI splice records: CLASS,NAME,SEQUENCE with whitespace ignored.
// Labels: EI = 0, IE = 1, N = 2. Uses Vocab::dna().
LabeledDataset load_splice(const std::string& path);

// Seeded shuffle, then the first train_size examples go to train and the next
// test_size to test.
DatasetSplit split_dataset(const LabeledDataset& all, std::int64_t train_size, std::int64_t test_size,
                           std::uint64_t seed, const Vocab& vocab);

// Header "sequence<TAB>label", label 0 or 1. Uses Vocab::dna().
LabeledDataset load_dna_tsv(const std::string& path, const std::string& split = "all");

// Lowercase and split on runs of non-alphanumeric characters.
std::vector<std::string> tokenize_words(const std::string& text);

// Top max_size tokens by frequency, ties in lexicographic order.
Vocab build_word_vocab(const std::vector<std::vector<std::string>>& documents, int max_size);

struct TextRows {
  std::vector<std::vector<std::string>> documents;
  std::vector<int> labels;
};

// CSV rows "label,text" with RFC 4180 quoting; labels are 0-based.
TextRows read_text_csv(const std::string& path);

// Vocabulary built from the train file only.
DatasetSplit load_text_csv(const std::string& train_path, const std::string& test_path, int max_size = 10000);

std::int64_t longest_sequence(const LabeledDataset& dataset);

// Share of the most frequent label; what always guessing it would score.
double majority_rate(const LabeledDataset& dataset);

// Internal cache: XMAR container with the vocab and label names in the
// metadata and one token array per split (row-major, -1 padded).
void save_dataset_cache(const std::string& path, const DatasetSplit& data);
DatasetSplit load_dataset_cache(const std::string& path);

}  // namespace xmar
