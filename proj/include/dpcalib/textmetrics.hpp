#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dpcalib/errors.hpp"

namespace dpcalib {

using TokenSeq = std::vector<std::string>;

// Shared tokenizer for training data and reconstruction scoring: ASCII
// lowercase, split on whitespace and punctuation (both dropped).
inline TokenSeq tokenize(const std::string& text) {
  TokenSeq tokens;
  std::string current;
  for (const char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!current.empty()) {
        tokens.push_back(current);
        current.clear();
      }
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

// |set(a) & set(b)| / |set(a) | set(b)|; two empty texts count as identical.
inline double jaccard(const TokenSeq& a, const TokenSeq& b) {
  const std::unordered_set<std::string> sa(a.begin(), a.end());
  const std::unordered_set<std::string> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Token -> vector table used by the cosine metric; sequences are pooled by
// averaging their in-vocabulary token vectors.
class EmbeddingTable {
 public:
  EmbeddingTable(std::unordered_map<std::string, Eigen::VectorXd> vectors, Eigen::Index dim)
      : vectors_(std::move(vectors)), dim_(dim) {
    for (const auto& [token, v] : vectors_) {
      if (v.size() != dim_) throw DataError("EmbeddingTable: inconsistent dimension for '" + token + "'");
      if (v.norm() == 0.0) throw DataError("EmbeddingTable: zero vector for '" + token + "'");
    }
  }

  // File format: one `token v1 v2 ... vD` per line, space-separated.
  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    std::unordered_map<std::string, Eigen::VectorXd> vectors;
    Eigen::Index dim = -1;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string token;
      ss >> token;
      std::vector<double> vals;
      double v;
      while (ss >> v) vals.push_back(v);
      if (token.empty() || vals.empty())
        throw DataError(path + ":" + std::to_string(line_no) + ": malformed embedding line");
      if (dim < 0) dim = static_cast<Eigen::Index>(vals.size());
      if (static_cast<Eigen::Index>(vals.size()) != dim)
        throw DataError(path + ":" + std::to_string(line_no) + ": dimension mismatch");
      Eigen::VectorXd vec(dim);
      for (Eigen::Index i = 0; i < dim; ++i) vec[i] = vals[static_cast<std::size_t>(i)];
      vectors[token] = std::move(vec);
    }
    if (vectors.empty()) throw DataError("embedding file is empty: " + path);
    return EmbeddingTable(std::move(vectors), dim);
  }

  Eigen::Index dim() const { return dim_; }

  bool contains(const std::string& token) const { return vectors_.count(token) > 0; }

  // Mean of in-vocabulary token vectors; false if every token is unknown.
  bool pool(const TokenSeq& tokens, Eigen::VectorXd* out) const {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
    long n = 0;
    for (const auto& t : tokens) {
      const auto it = vectors_.find(t);
      if (it == vectors_.end()) continue;
      sum += it->second;
      ++n;
    }
    if (n == 0) return false;
    *out = sum / static_cast<double>(n);
    return true;
  }

 private:
  std::unordered_map<std::string, Eigen::VectorXd> vectors_;
  Eigen::Index dim_;
};

inline double cosine_similarity(const TokenSeq& a, const TokenSeq& b, const EmbeddingTable& emb) {
  Eigen::VectorXd va, vb;
  if (!emb.pool(a, &va)) throw DataError("cosine_similarity: first sequence is fully out of vocabulary");
  if (!emb.pool(b, &vb)) throw DataError("cosine_similarity: second sequence is fully out of vocabulary");
  const double na = va.norm(), nb = vb.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return va.dot(vb) / (na * nb);
}

// Exact-match METEOR: 10PR/(R+9P) * (1 - 0.5 (chunks/matches)^3), with P/R
// from unigram matches under a greedy in-order alignment (each candidate
// token takes the earliest unused occurrence in the reference). No stemming
// or synonymy: the score for divergent-but-related wording is lower than
// reference METEOR would give.
inline double meteor_lite(const TokenSeq& candidate, const TokenSeq& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::unordered_map<std::string, std::vector<std::size_t>> positions;
  for (std::size_t j = 0; j < reference.size(); ++j) positions[reference[j]].push_back(j);
  std::vector<bool> used(reference.size(), false);
  // Alignment as (candidate index, reference index), in candidate order.
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const auto it = positions.find(candidate[i]);
    if (it == positions.end()) continue;
    for (const std::size_t j : it->second) {
      if (!used[j]) {
        used[j] = true;
        matches.emplace_back(i, j);
        break;
      }
    }
  }
  if (matches.empty()) return 0.0;
  const double m = static_cast<double>(matches.size());
  const double precision = m / static_cast<double>(candidate.size());
  const double recall = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
  std::size_t chunks = 1;
  for (std::size_t k = 1; k < matches.size(); ++k) {
    const bool contiguous = matches[k].first == matches[k - 1].first + 1 &&
                            matches[k].second == matches[k - 1].second + 1;
    if (!contiguous) ++chunks;
  }
  const double frag = static_cast<double>(chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS(a, b) / max(|a|, |b|); two empty texts count as identical.
inline double rouge_l(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  return static_cast<double>(lcs_length(a, b)) /
         static_cast<double>(std::max(a.size(), b.size()));
}

}  // namespace dpcalib
