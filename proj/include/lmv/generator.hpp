#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmv/citation_graph.hpp"
#include "lmv/corpus.hpp"
#include "lmv/model.hpp"
#include "lmv/rng.hpp"

namespace lmv {

struct GroundTruth {
  Matrix beta;        // K x V topic-word simplex rows
  Matrix theta;       // D x K membership simplex rows
  Vector tau;         // D visibilities in (0, 1)
  Matrix B;           // K x K blockmodel in [0, 1)
  int words_per_doc = 100;
  int num_train = 0;  // leading documents used for training

  int num_topics() const { return static_cast<int>(beta.rows()); }
  int vocab_size() const { return static_cast<int>(beta.cols()); }
  int num_docs() const { return static_cast<int>(theta.rows()); }
};

namespace detail {

inline Vector dirichlet_draw(CounterRng& rng, int size, double concentration) {
  Vector v(size);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    v(i) = rng.gamma(concentration);
    sum += v(i);
  }
  return v / sum;
}

inline int categorical_draw(CounterRng& rng, const Vector& probs) {
  double u = rng.uniform();
  double cum = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    cum += probs(i);
    if (u < cum) return i;
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace detail

// One corpus + citation graph from the generative process: words via
// theta/beta multinomials, each ordered pair via sender/receiver indicators
// and a Bernoulli(tau_d' B_sr) coin. Deterministic given the seed.
inline std::pair<Corpus, CitationGraph> sample_dataset(const GroundTruth& truth,
                                                       std::uint64_t seed) {
  const int d_total = truth.num_docs();
  const int k = truth.num_topics();
  const int v = truth.vocab_size();
  if (truth.tau.size() != d_total || truth.B.rows() != k || truth.B.cols() != k)
    throw std::invalid_argument("sample_dataset: inconsistent ground truth shapes");

  CounterRng word_rng(CounterRng::derive_key({seed, 0x30c5ULL}));
  std::vector<std::vector<TermCount>> docs(d_total);
  std::vector<int> counts(v);
  for (int d = 0; d < d_total; ++d) {
    std::fill(counts.begin(), counts.end(), 0);
    const Vector theta_d = truth.theta.row(d).transpose();
    for (int n = 0; n < truth.words_per_doc; ++n) {
      const int z = detail::categorical_draw(word_rng, theta_d);
      const int w = detail::categorical_draw(word_rng, truth.beta.row(z).transpose());
      counts[w] += 1;
    }
    for (int w = 0; w < v; ++w)
      if (counts[w] > 0) docs[d].push_back({w, counts[w]});
  }
  std::vector<std::string> vocab(v);
  for (int w = 0; w < v; ++w) vocab[w] = "term" + std::to_string(w);

  CounterRng link_rng(CounterRng::derive_key({seed, 0x11e4ULL}));
  std::vector<std::pair<int, int>> edges;
  for (int d = 0; d < d_total; ++d) {
    const Vector theta_d = truth.theta.row(d).transpose();
    for (int dp = 0; dp < d_total; ++dp) {
      if (dp == d) continue;
      const int s = detail::categorical_draw(link_rng, theta_d);
      const int r = detail::categorical_draw(link_rng, truth.theta.row(dp).transpose());
      if (link_rng.bernoulli(truth.tau(dp) * truth.B(s, r))) edges.emplace_back(d, dp);
    }
  }
  return {Corpus(std::move(docs), std::move(vocab)),
          CitationGraph(d_total, std::move(edges))};
}

enum class S7Scale { paper, desk };

// Simulation-study preset: K = 6 topics over a 100-term vocabulary drawn from
// symmetric Dirichlet(0.1), memberships from Dirichlet(0.05), visibilities
// from Beta(1,1), 100 words per document, and a fixed sparse blockmodel with
// strong diagonal. Scale `paper` has 3000 documents (2000 train), scale
// `desk` 600 (400 train); nothing else differs between the two.
inline GroundTruth s7_preset(S7Scale scale, std::uint64_t seed) {
  const int k = 6, v = 100;
  const int d_total = scale == S7Scale::paper ? 3000 : 600;
  GroundTruth truth;
  truth.words_per_doc = 100;
  truth.num_train = scale == S7Scale::paper ? 2000 : 400;

  truth.B = Matrix::Zero(k, k);
  truth.B(0, 0) = 0.3;
  truth.B(1, 1) = 0.3;
  truth.B(2, 2) = 0.3;
  truth.B(3, 3) = 0.2;
  truth.B(4, 4) = 0.2;
  truth.B(5, 5) = 0.2;
  truth.B(0, 2) = 0.02;
  truth.B(0, 5) = 0.03;
  truth.B(1, 4) = 0.05;
  truth.B(2, 3) = 0.05;
  truth.B(3, 0) = 0.04;
  truth.B(3, 5) = 0.02;
  truth.B(4, 1) = 0.04;
  truth.B(5, 0) = 0.02;
  truth.B(5, 2) = 0.03;

  CounterRng rng(CounterRng::derive_key({seed, 0x57e5ULL}));
  truth.beta.resize(k, v);
  for (int i = 0; i < k; ++i) truth.beta.row(i) = detail::dirichlet_draw(rng, v, 0.1).transpose();
  truth.theta.resize(d_total, k);
  for (int d = 0; d < d_total; ++d)
    truth.theta.row(d) = detail::dirichlet_draw(rng, k, 0.05).transpose();
  truth.tau.resize(d_total);
  for (int d = 0; d < d_total; ++d) truth.tau(d) = rng.beta(1.0, 1.0);
  return truth;
}

// Best estimated-to-true topic assignment by total dot-product overlap of the
// normalized topics. Exhaustive over permutations up to K = 10, greedy above.
// Returns p with p[t] = estimated topic matched to true topic t.
inline std::vector<int> match_topics(const Matrix& lambda, const Matrix& beta_true) {
  const int k = static_cast<int>(lambda.rows());
  Matrix lbar(k, lambda.cols());
  for (int i = 0; i < k; ++i) lbar.row(i) = lambda.row(i) / lambda.row(i).sum();
  Matrix sim = lbar * beta_true.transpose();  // sim(est, true)

  std::vector<int> best(k), perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  if (k <= 10) {
    double best_score = -1.0;
    do {
      double score = 0.0;
      for (int t = 0; t < k; ++t) score += sim(perm[t], t);
      if (score > best_score) {
        best_score = score;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }
  std::vector<char> used(k, 0);
  for (int t = 0; t < k; ++t) {
    int arg = -1;
    for (int e = 0; e < k; ++e)
      if (!used[e] && (arg < 0 || sim(e, t) > sim(arg, t))) arg = e;
    used[arg] = 1;
    best[t] = arg;
  }
  return best;
}

inline void save_ground_truth(const std::string& path, const GroundTruth& truth) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["words_per_doc"] = truth.words_per_doc;
  j["num_train"] = truth.num_train;
  j["beta"] = detail::matrix_to_json(truth.beta);
  j["theta"] = detail::matrix_to_json(truth.theta);
  j["tau"] = detail::vector_to_json(truth.tau);
  j["B"] = detail::matrix_to_json(truth.B);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ground truth: " + path);
  out << j.dump() << '\n';
}

inline GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ground truth: " + path);
  nlohmann::json j;
  in >> j;
  GroundTruth truth;
  truth.words_per_doc = j["words_per_doc"].get<int>();
  truth.num_train = j["num_train"].get<int>();
  truth.beta = detail::matrix_from_json(j["beta"]);
  truth.theta = detail::matrix_from_json(j["theta"]);
  truth.tau = detail::vector_from_json(j["tau"]);
  truth.B = detail::matrix_from_json(j["B"]);
  return truth;
}

}  // namespace lmv
