#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpcalib/errors.hpp"
#include "dpcalib/rng.hpp"
#include "dpcalib/textmetrics.hpp"

namespace dpcalib {

struct RawExample {
  int label = 0;
  TokenSeq tokens;
};

// Token -> feature index map over the top-V most frequent training tokens.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(const std::vector<RawExample>& examples, std::size_t max_size) {
    std::unordered_map<std::string, long> counts;
    for (const auto& ex : examples)
      for (const auto& t : ex.tokens) ++counts[t];
    // Order by frequency, ties lexicographic, so the mapping is deterministic.
    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > max_size) ranked.resize(max_size);
    Vocabulary v;
    v.tokens_.reserve(ranked.size());
    for (const auto& [tok, cnt] : ranked) {
      v.index_[tok] = static_cast<int>(v.tokens_.size());
      v.tokens_.push_back(tok);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int index_of(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& token_at(std::size_t i) const { return tokens_.at(i); }

  void set_tokens(std::vector<std::string> tokens) {
    tokens_ = std::move(tokens);
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Example {
  // Sparse bag-of-words counts, sorted by feature index.
  std::vector<std::pair<int, double>> features;
  int label = 0;
  TokenSeq tokens;
};

inline Example featurize(const RawExample& raw, const Vocabulary& vocab) {
  std::map<int, double> counts;
  for (const auto& t : raw.tokens) {
    const int idx = vocab.index_of(t);
    if (idx >= 0) counts[idx] += 1.0;
  }
  Example ex;
  ex.features.assign(counts.begin(), counts.end());
  ex.label = raw.label;
  ex.tokens = raw.tokens;
  return ex;
}

struct Dataset {
  Vocabulary vocab;
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  int num_classes = 2;

  void validate() const {
    const int vsize = static_cast<int>(vocab.size());
    for (const auto* split : {&train, &validation, &test}) {
      for (const auto& ex : *split) {
        if (ex.label < 0 || ex.label >= num_classes)
          throw DataError("Dataset: label out of range");
        for (const auto& [idx, val] : ex.features)
          if (idx < 0 || idx >= vsize) throw DataError("Dataset: feature index out of range");
      }
    }
  }
};

// TSV ingestion: one example per line, `label<TAB>text`, UTF-8. Errors carry
// the offending line number.
inline std::vector<RawExample> load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<RawExample> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected label<TAB>text");
    const std::string label_str = line.substr(0, tab);
    int label = 0;
    try {
      std::size_t pos = 0;
      label = std::stoi(label_str, &pos);
      if (pos != label_str.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad label '" + label_str + "'");
    }
    if (label < 0) throw DataError(path + ":" + std::to_string(line_no) + ": negative label");
    RawExample ex;
    ex.label = label;
    ex.tokens = tokenize(line.substr(tab + 1));
    out.push_back(std::move(ex));
  }
  return out;
}

// Seeded shuffle split for single-file ingestion.
struct RawSplits {
  std::vector<RawExample> train, validation, test;
};

inline RawSplits split_raw(std::vector<RawExample> raws, double val_frac, double test_frac,
                           std::uint64_t seed) {
  if (val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0)
    throw DataError("split_raw: fractions must be nonnegative and sum to < 1");
  RngStream rng(seed);
  for (std::size_t i = raws.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(raws[i - 1], raws[j]);
  }
  const std::size_t n = raws.size();
  const std::size_t n_test = static_cast<std::size_t>(test_frac * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
  RawSplits s;
  s.test.assign(raws.begin(), raws.begin() + n_test);
  s.validation.assign(raws.begin() + n_test, raws.begin() + n_test + n_val);
  s.train.assign(raws.begin() + n_test + n_val, raws.end());
  return s;
}

inline Dataset make_dataset(const RawSplits& splits, std::size_t vocab_size) {
  if (splits.train.empty()) throw DataError("make_dataset: empty training split");
  Dataset d;
  d.vocab = Vocabulary::build(splits.train, vocab_size);
  int max_label = 0;
  for (const auto* raws : {&splits.train, &splits.validation, &splits.test})
    for (const auto& r : *raws) max_label = std::max(max_label, r.label);
  d.num_classes = max_label + 1;
  if (d.num_classes < 2) d.num_classes = 2;
  for (const auto& r : splits.train) d.train.push_back(featurize(r, d.vocab));
  for (const auto& r : splits.validation) d.validation.push_back(featurize(r, d.vocab));
  for (const auto& r : splits.test) d.test.push_back(featurize(r, d.vocab));
  d.validate();
  return d;
}

}  // namespace dpcalib
