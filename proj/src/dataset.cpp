#include "xmar/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "xmar/checkpoint.hpp"

namespace xmar {
namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string strip_spaces(const std::string& s) {
  std::string out;
  for (char ch : s)
    if (!std::isspace(static_cast<unsigned char>(ch))) out += ch;
  return out;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& why) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + why);
}

TokenSequence encode_dna(const std::string& seq, const Vocab& vocab, const std::string& path, std::size_t line) {
  TokenSequence out;
  out.reserve(seq.size());
  for (char raw : seq) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    const std::string tok(1, ch);
    if (!vocab.contains(tok)) parse_fail(path, line, std::string("unexpected character '") + raw + "' in sequence");
    out.push_back(vocab.lookup(tok));
  }
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& path,
                                                std::vector<std::size_t>* row_lines) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false, field_quoted = false, row_started = false;
  std::size_t line = 1, row_line = 1, quote_line = 1;
  auto end_field = [&] {
    row.push_back(field);
    field.clear();
    field_quoted = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    if (row_lines) row_lines->push_back(row_line);
    row_started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (!row_started) {
      row_started = true;
      row_line = line;
    }
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      if (!field.empty() || field_quoted) parse_fail(path, line, "quote inside an unquoted field");
      in_quotes = field_quoted = true;
      quote_line = line;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      const bool blank = row.empty() && field.empty() && !field_quoted;
      if (blank) {
        row_started = false;
      } else {
        end_row();
      }
      ++line;
    } else {
      if (field_quoted) parse_fail(path, line, "text after closing quote");
      field += ch;
    }
  }
  if (in_quotes) parse_fail(path, quote_line, "unterminated quoted field");
  if (row_started && (!row.empty() || !field.empty() || field_quoted)) end_row();
  return rows;
}

Tensor<float> token_matrix(const LabeledDataset& ds) {
  const auto longest = std::max<std::int64_t>(1, longest_sequence(ds));
  Tensor<float> t(Shape{static_cast<std::int64_t>(ds.size()), longest}, -1.0f);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& tok = ds.examples[i].tokens;
    for (std::size_t j = 0; j < tok.size(); ++j) t[i * longest + j] = static_cast<float>(tok[j]);
  }
  return t;
}

}  // namespace

Vocab::Vocab() {
  add("<pad>");
  add("<unk>");
}

Vocab Vocab::dna() {
  Vocab v;
  for (const char* b : {"A", "C", "G", "T", "D", "N", "S", "R"}) v.add(b);
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocab::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw Error("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw ParseError("vocab: reserved entries <pad>, <unk> missing");
  }
  Vocab v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (v.add(tokens[i]) != static_cast<int>(i)) throw ParseError("vocab: duplicate token '" + tokens[i] + "'");
  }
  return v;
}

void LabeledDataset::validate() const {
  if (examples.empty()) throw Error("dataset " + source + " (" + split + "): no examples");
  for (const auto& ex : examples) {
    if (ex.label < 0 || ex.label >= num_labels()) {
      throw Error("dataset " + source + ": label " + std::to_string(ex.label) + " out of range");
    }
  }
}

LabeledDataset load_splice(const std::string& path) {
  const Vocab vocab = Vocab::dna();
  const std::map<std::string, int> classes{{"EI", 0}, {"IE", 1}, {"N", 2}};
  LabeledDataset ds;
  ds.label_names = {"EI", "IE", "N"};
  ds.source = path;
  ds.format = "splice";
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip_spaces(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(strip_spaces(f));
    if (fields.size() != 3) {
      parse_fail(path, lineno, "expected 3 comma-separated fields (class,name,sequence), got " +
                                   std::to_string(fields.size()));
    }
    auto cls = classes.find(fields[0]);
    if (cls == classes.end()) parse_fail(path, lineno, "unknown class '" + fields[0] + "'");
    if (fields[2].empty()) parse_fail(path, lineno, "empty sequence");
    ds.examples.push_back({encode_dna(fields[2], vocab, path, lineno), cls->second});
  }
  ds.validate();
  return ds;
}

DatasetSplit split_dataset(const LabeledDataset& all, std::int64_t train_size, std::int64_t test_size,
                           std::uint64_t seed, const Vocab& vocab) {
  if (train_size < 1 || test_size < 1) throw ConfigError("split: train and test sizes must be positive");
  if (train_size + test_size > static_cast<std::int64_t>(all.size())) {
    throw ConfigError("split: " + std::to_string(train_size) + " + " + std::to_string(test_size) +
                      " examples requested, dataset has " + std::to_string(all.size()));
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  DatasetSplit out;
  out.vocab = vocab;
  for (LabeledDataset* part : {&out.train, &out.test}) {
    part->label_names = all.label_names;
    part->source = all.source;
    part->format = all.format;
  }
  out.train.split = "train";
  out.test.split = "test";
  for (std::int64_t i = 0; i < train_size + test_size; ++i) {
    (i < train_size ? out.train : out.test).examples.push_back(all.examples[order[i]]);
  }
  return out;
}

LabeledDataset load_dna_tsv(const std::string& path, const std::string& split) {
  const Vocab vocab = Vocab::dna();
  LabeledDataset ds;
  ds.label_names = {"0", "1"};
  ds.source = path;
  ds.format = "dna-tsv";
  ds.split = split;
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      if (line != "sequence\tlabel") parse_fail(path, lineno, "expected header 'sequence<TAB>label'");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      parse_fail(path, lineno, "expected exactly two tab-separated fields");
    }
    const std::string seq = strip_spaces(line.substr(0, tab));
    const std::string label = strip_spaces(line.substr(tab + 1));
    if (seq.empty()) parse_fail(path, lineno, "empty sequence");
    if (label != "0" && label != "1") parse_fail(path, lineno, "label must be 0 or 1, got '" + label + "'");
    ds.examples.push_back({encode_dna(seq, vocab, path, lineno), label == "1" ? 1 : 0});
  }
  if (header) parse_fail(path, 1, "missing header");
  ds.validate();
  return ds;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isalnum(ch)) {
      cur += static_cast<char>(std::tolower(ch));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab build_word_vocab(const std::vector<std::vector<std::string>>& documents, int max_size) {
  if (max_size < 0) throw ConfigError("vocab: max_size must be non-negative");
  std::map<std::string, std::int64_t> counts;
  for (const auto& doc : documents)
    for (const auto& tok : doc) ++counts[tok];
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < max_size; ++i) v.add(ranked[i].first);
  return v;
}

TextRows read_text_csv(const std::string& path) {
  std::vector<std::size_t> lines;
  const auto rows = parse_csv(read_text(path), path, &lines);
  TextRows out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 2) parse_fail(path, lines[r], "expected label,text");
    const std::string label = strip_spaces(row[0]);
    if (label.empty() || !std::all_of(label.begin(), label.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      parse_fail(path, lines[r], "label '" + row[0] + "' is not a non-negative integer");
    }
    std::string text = row[1];
    for (std::size_t i = 2; i < row.size(); ++i) text += " " + row[i];
    out.labels.push_back(std::stoi(label));
    out.documents.push_back(tokenize_words(text));
  }
  if (out.labels.empty()) throw ParseError(path + ": no rows");
  return out;
}

DatasetSplit load_text_csv(const std::string& train_path, const std::string& test_path, int max_size) {
  const TextRows train = read_text_csv(train_path);
  const TextRows test = read_text_csv(test_path);
  const int k = *std::max_element(train.labels.begin(), train.labels.end()) + 1;
  std::vector<bool> present(static_cast<std::size_t>(k));
  for (int l : train.labels) present[l] = true;
  if (std::find(present.begin(), present.end(), false) != present.end()) {
    throw ParseError(train_path + ": labels are not contiguous from 0");
  }
  for (int l : test.labels) {
    if (l >= k) throw ParseError(test_path + ": label " + std::to_string(l) + " not seen in the train split");
  }
  DatasetSplit out;
  out.vocab = build_word_vocab(train.documents, max_size);
  auto fill = [&](LabeledDataset& ds, const TextRows& rows, const std::string& path, const std::string& split) {
    for (int i = 0; i < k; ++i) ds.label_names.push_back(std::to_string(i));
    ds.source = path;
    ds.format = "text-csv";
    ds.split = split;
    for (std::size_t i = 0; i < rows.labels.size(); ++i) {
      TokenSequence seq;
      for (const auto& tok : rows.documents[i]) seq.push_back(out.vocab.lookup(tok));
      ds.examples.push_back({std::move(seq), rows.labels[i]});
    }
    ds.validate();
  };
  fill(out.train, train, train_path, "train");
  fill(out.test, test, test_path, "test");
  return out;
}

double majority_rate(const LabeledDataset& dataset) {
  if (dataset.examples.empty()) throw Error("majority_rate: empty dataset");
  std::map<int, std::size_t> counts;
  for (const auto& ex : dataset.examples) ++counts[ex.label];
  std::size_t best = 0;
  for (const auto& [label, n] : counts) best = std::max(best, n);
  return static_cast<double>(best) / static_cast<double>(dataset.size());
}

std::int64_t longest_sequence(const LabeledDataset& dataset) {
  if (dataset.examples.empty()) throw Error("longest_sequence: empty dataset");
  std::size_t best = 0;
  for (const auto& ex : dataset.examples) best = std::max(best, ex.tokens.size());
  return static_cast<std::int64_t>(best);
}

void save_dataset_cache(const std::string& path, const DatasetSplit& data) {
  Checkpoint ck;
  ck.meta["kind"] = "dataset";
  ck.meta["vocab"] = data.vocab.to_json();
  for (const LabeledDataset* ds : {&data.train, &data.test}) {
    ck.meta[ds->split] = {{"label_names", ds->label_names}, {"source", ds->source}, {"format", ds->format}};
    std::vector<float> labels;
    for (const auto& ex : ds->examples) labels.push_back(static_cast<float>(ex.label));
    ck.add(ds->split + ".tokens", token_matrix(*ds));
    const auto count = static_cast<std::int64_t>(labels.size());
    ck.add(ds->split + ".labels", Tensor<float>(Shape{count}, std::move(labels)));
  }
  save_checkpoint(path, ck);
}

DatasetSplit load_dataset_cache(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "dataset") throw ParseError(path + ": not a dataset cache");
  DatasetSplit out;
  out.vocab = Vocab::from_json(ck.meta.at("vocab"));
  for (LabeledDataset* ds : {&out.train, &out.test}) {
    const std::string split = ds == &out.train ? "train" : "test";
    const auto& m = ck.meta.at(split);
    ds->split = split;
    ds->label_names = m.at("label_names").get<std::vector<std::string>>();
    ds->source = m.at("source").get<std::string>();
    ds->format = m.at("format").get<std::string>();
    const auto& tokens = ck.array(split + ".tokens");
    const auto& labels = ck.array(split + ".labels");
    const auto width = static_cast<std::size_t>(tokens.dim(1));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      Example ex;
      ex.label = static_cast<int>(labels[i]);
      for (std::size_t j = 0; j < width && tokens[i * width + j] >= 0; ++j) {
        ex.tokens.push_back(static_cast<int>(tokens[i * width + j]));
      }
      ds->examples.push_back(std::move(ex));
    }
    ds->validate();
  }
  return out;
}

}  // namespace xmar
