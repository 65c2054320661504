#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmv/rng.hpp"

namespace lmv {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TermCount {
  int term = 0;
  int count = 0;
};

// Sparse document-term counts plus the vocabulary. Immutable after
// construction; documents keep their input order. Repeated occurrences of a
// term within a document are stored once with a count multiplier.
class Corpus {
 public:
  Corpus(std::vector<std::vector<TermCount>> docs, std::vector<std::string> vocab)
      : docs_(std::move(docs)), vocab_(std::move(vocab)) {
    if (docs_.empty()) throw CorpusError("corpus is empty");
    const int v = static_cast<int>(vocab_.size());
    lengths_.resize(docs_.size());
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      auto& doc = docs_[d];
      std::sort(doc.begin(), doc.end(),
                [](const TermCount& x, const TermCount& y) { return x.term < y.term; });
      std::int64_t n = 0;
      for (std::size_t i = 0; i < doc.size(); ++i) {
        if (doc[i].term < 0 || doc[i].term >= v)
          throw CorpusError("document " + std::to_string(d) + ": term index " +
                            std::to_string(doc[i].term) + " out of range [0, " +
                            std::to_string(v) + ")");
        if (doc[i].count < 1)
          throw CorpusError("document " + std::to_string(d) + ": count for term " +
                            std::to_string(doc[i].term) + " must be positive");
        if (i > 0 && doc[i].term == doc[i - 1].term)
          throw CorpusError("document " + std::to_string(d) + ": duplicate term index " +
                            std::to_string(doc[i].term));
        n += doc[i].count;
      }
      if (n == 0)
        throw CorpusError("document " + std::to_string(d) + " has no words (zero-length documents are rejected)");
      lengths_[d] = n;
    }
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
  }

  int num_docs() const { return static_cast<int>(docs_.size()); }
  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<TermCount>& doc(int d) const { return docs_[d]; }
  std::int64_t doc_length(int d) const { return lengths_[d]; }  // N_d
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::string& term(int v) const { return vocab_[v]; }

  std::int64_t total_tokens() const {
    std::int64_t t = 0;
    for (auto n : lengths_) t += n;
    return t;
  }

  std::optional<int> term_index(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::vector<TermCount>> docs_;
  std::vector<std::string> vocab_;
  std::vector<std::int64_t> lengths_;
  std::unordered_map<std::string, int> index_;
};

enum class CorpusFormat { ldac, tsv };

inline std::vector<std::string> load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open vocabulary file: " + path);
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty())
      throw CorpusError(path + ":" + std::to_string(vocab.size() + 1) + ": empty vocabulary entry");
    vocab.push_back(line);
  }
  if (vocab.empty()) throw CorpusError("vocabulary file is empty: " + path);
  return vocab;
}

namespace detail {

inline int parse_int(const std::string& tok, const std::string& where) {
  std::size_t pos = 0;
  int v;
  try {
    v = std::stoi(tok, &pos);
  } catch (const std::exception&) {
    throw CorpusError(where + ": malformed integer '" + tok + "'");
  }
  if (pos != tok.size()) throw CorpusError(where + ": malformed integer '" + tok + "'");
  return v;
}

// One line per document: "M idx:cnt idx:cnt ...". Indices are 0-based.
inline std::vector<std::vector<TermCount>> parse_ldac(std::istream& in, const std::string& name) {
  std::vector<std::vector<TermCount>> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    int m = parse_int(tok, where);
    if (m < 0) throw CorpusError(where + ": negative term count");
    std::vector<TermCount> doc;
    doc.reserve(m);
    for (int i = 0; i < m; ++i) {
      if (!(ls >> tok)) throw CorpusError(where + ": expected " + std::to_string(m) + " idx:cnt pairs");
      auto colon = tok.find(':');
      if (colon == std::string::npos) throw CorpusError(where + ": token '" + tok + "' is not idx:cnt");
      int idx = parse_int(tok.substr(0, colon), where);
      int cnt = parse_int(tok.substr(colon + 1), where);
      if (idx < 0) throw CorpusError(where + ": negative term index");
      if (cnt < 1) throw CorpusError(where + ": count must be positive for term " + std::to_string(idx));
      doc.push_back({idx, cnt});
    }
    if (ls >> tok) throw CorpusError(where + ": trailing token '" + tok + "'");
    docs.push_back(std::move(doc));
  }
  return docs;
}

// doc_id, term, count triples; terms resolved against the vocabulary.
inline std::vector<std::vector<TermCount>> parse_tsv(std::istream& in, const std::string& name,
                                                     const Corpus*, const std::vector<std::string>& vocab) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<int>(i));
  std::vector<std::vector<int>> counts;  // dense per doc, merged
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    std::istringstream ls(line);
    std::string doc_tok, term_tok, cnt_tok;
    if (!(ls >> doc_tok >> term_tok >> cnt_tok)) throw CorpusError(where + ": expected doc_id, term, count");
    std::string extra;
    if (ls >> extra) throw CorpusError(where + ": trailing token '" + extra + "'");
    int d = parse_int(doc_tok, where);
    if (d < 0) throw CorpusError(where + ": negative doc id");
    auto it = index.find(term_tok);
    if (it == index.end()) throw CorpusError(where + ": unknown term '" + term_tok + "'");
    int cnt = parse_int(cnt_tok, where);
    if (cnt < 1) throw CorpusError(where + ": count must be positive");
    if (d >= static_cast<int>(counts.size())) counts.resize(d + 1, std::vector<int>(vocab.size(), 0));
    counts[d][it->second] += cnt;
  }
  std::vector<std::vector<TermCount>> docs(counts.size());
  for (std::size_t d = 0; d < counts.size(); ++d) {
    for (std::size_t v = 0; v < counts[d].size(); ++v)
      if (counts[d][v] > 0) docs[d].push_back({static_cast<int>(v), counts[d][v]});
    if (docs[d].empty())
      throw CorpusError(name + ": document " + std::to_string(d) + " has no words");
  }
  return docs;
}

}  // namespace detail

// Load a corpus. For ldac the vocabulary file is optional (term names are
// synthesized when absent); for tsv it is required.
inline Corpus load_corpus(const std::string& path, CorpusFormat format,
                          const std::string& vocab_path = "") {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file: " + path);
  std::vector<std::string> vocab;
  if (!vocab_path.empty()) vocab = load_vocabulary(vocab_path);

  std::vector<std::vector<TermCount>> docs;
  if (format == CorpusFormat::ldac) {
    docs = detail::parse_ldac(in, path);
    if (vocab.empty()) {
      int max_idx = -1;
      for (const auto& d : docs)
        for (const auto& tc : d) max_idx = std::max(max_idx, tc.term);
      for (int v = 0; v <= max_idx; ++v) vocab.push_back("term" + std::to_string(v));
    }
  } else {
    if (vocab.empty()) throw CorpusError("tsv corpus format requires a vocabulary file");
    docs = detail::parse_tsv(in, path, nullptr, vocab);
  }
  if (docs.empty()) throw CorpusError("corpus is empty: " + path);
  return Corpus(std::move(docs), std::move(vocab));
}

inline void save_corpus_ldac(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file: " + path);
  for (int d = 0; d < corpus.num_docs(); ++d) {
    const auto& doc = corpus.doc(d);
    out << doc.size();
    for (const auto& tc : doc) out << ' ' << tc.term << ':' << tc.count;
    out << '\n';
  }
}

inline void save_vocabulary(const std::vector<std::string>& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write vocabulary file: " + path);
  for (const auto& t : vocab) out << t << '\n';
}

struct FoldSplit {
  std::vector<int> train;
  std::vector<int> test;
};

// Partition documents into k folds (sizes differ by at most one) and return
// one (train, test) pair per fold. Deterministic given the seed.
inline std::vector<FoldSplit> split_folds(const Corpus& corpus, int k, std::uint64_t seed) {
  const int d = corpus.num_docs();
  if (k < 2) throw std::invalid_argument("split_folds: k must be at least 2");
  if (k > d) throw std::invalid_argument("split_folds: k exceeds the number of documents");
  std::vector<int> perm(d);
  for (int i = 0; i < d; ++i) perm[i] = i;
  CounterRng rng(CounterRng::derive_key({seed, 0xf01d5ULL}));
  rng.shuffle(perm);

  std::vector<std::vector<int>> folds(k);
  for (int i = 0; i < d; ++i) folds[i % k].push_back(perm[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());

  std::vector<FoldSplit> out(k);
  for (int f = 0; f < k; ++f) {
    out[f].test = folds[f];
    for (int g = 0; g < k; ++g)
      if (g != f) out[f].train.insert(out[f].train.end(), folds[g].begin(), folds[g].end());
    std::sort(out[f].train.begin(), out[f].train.end());
  }
  return out;
}

// Corpus restricted to the given documents (new ids follow the given order).
inline Corpus subcorpus(const Corpus& corpus, const std::vector<int>& docs) {
  std::vector<std::vector<TermCount>> rows;
  rows.reserve(docs.size());
  for (int d : docs) rows.push_back(corpus.doc(d));
  return Corpus(std::move(rows), corpus.vocab());
}

}  // namespace lmv
