#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "lmv/corpus.hpp"
#include "lmv/model.hpp"
#include "lmv/vb_engine.hpp"

namespace lmv {

struct HeldoutPosterior {
  Vector gamma;        // K
  Vector proportions;  // normalized gamma
  int iterations = 0;
  bool converged = false;
};

// Variational inference for a new document from its words alone: alternate
// the phi softmax and gamma = alpha + sum phi until gamma stabilizes.
inline HeldoutPosterior infer_heldout(const std::vector<TermCount>& words, const Matrix& lambda,
                                      const Vector& alpha, double tol = 1e-6, int max_iter = 200) {
  const int k = static_cast<int>(lambda.rows());
  HeldoutPosterior out;
  std::int64_t n_d = 0;
  for (const auto& tc : words) n_d += tc.count;
  out.gamma = alpha.array() + static_cast<double>(n_d) / k;
  if (words.empty()) {
    out.gamma = alpha;
    out.proportions = out.gamma / out.gamma.sum();
    out.converged = true;
    return out;
  }
  const Matrix elog_beta = dirichlet_elog_rows(lambda);
  for (int it = 1; it <= max_iter; ++it) {
    const Matrix phi = update_phi(dirichlet_elog(out.gamma), elog_beta, words);
    Vector gamma_new = alpha + phi_weighted_sum(phi, words);
    const double rel = (gamma_new - out.gamma).cwiseAbs().maxCoeff() / out.gamma.cwiseAbs().maxCoeff();
    out.gamma = std::move(gamma_new);
    out.iterations = it;
    if (rel < tol) {
      out.converged = true;
      break;
    }
  }
  out.proportions = out.gamma / out.gamma.sum();
  return out;
}

// Posterior predictive probability that the held-out document cites training
// document d': E[tau_d'] gamma_bar^T E[B] gamma_bar_d'.
inline double predict_link_prob(const Vector& props_new, const Vector& props_train,
                                double tau_mean, const Matrix& b_mean) {
  return tau_mean * props_new.dot(b_mean * props_train);
}

// Scores against every training document of a fitted state.
inline Vector score_against_training(const HeldoutPosterior& heldout,
                                     const VariationalState& state) {
  const int d_total = state.num_docs();
  const Matrix b_mean = state.blockmodel_mean();
  const Vector tau = state.visibility_mean();
  Vector scores(d_total);
  const Vector left = b_mean.transpose() * heldout.proportions;
  for (int d = 0; d < d_total; ++d) {
    const Vector props = state.gamma.row(d).transpose() / state.gamma.row(d).sum();
    scores(d) = tau(d) * left.dot(props);
  }
  return scores;
}

// Ranks with average-rank tie handling (rank 1 = highest score). With all
// scores tied this reproduces the random-guess baseline (n+1)/2 exactly.
inline std::vector<double> average_ranks(const Vector& scores) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int i, int j) { return scores(i) > scores(j); });
  std::vector<double> rank(n);
  int pos = 0;
  while (pos < n) {
    int tie_end = pos;
    while (tie_end + 1 < n && scores(idx[tie_end + 1]) == scores(idx[pos])) ++tie_end;
    const double avg = (pos + tie_end) / 2.0 + 1.0;
    for (int t = pos; t <= tie_end; ++t) rank[idx[t]] = avg;
    pos = tie_end + 1;
  }
  return rank;
}

// Mean rank of the documents the held-out document actually cited.
inline double predictive_rank(const Vector& scores, const std::vector<int>& cited) {
  if (cited.empty())
    throw std::invalid_argument("predictive_rank: the test document cites no training document");
  const auto ranks = average_ranks(scores);
  double total = 0.0;
  for (int d : cited) total += ranks[d];
  return total / static_cast<double>(cited.size());
}

// term-score_kv = lbar_kv log( lbar_kv / geomean_k lbar_kv ), computed in
// log space; downweights terms probable under every topic.
inline Matrix term_score(const Matrix& lambda) {
  const int k = static_cast<int>(lambda.rows());
  const int v = static_cast<int>(lambda.cols());
  Matrix lbar(k, v);
  for (int i = 0; i < k; ++i) lbar.row(i) = lambda.row(i) / lambda.row(i).sum();
  Matrix log_lbar = lbar.array().log().matrix();
  Vector mean_log = log_lbar.colwise().mean();
  Matrix score(k, v);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < v; ++j) score(i, j) = lbar(i, j) * (log_lbar(i, j) - mean_log(j));
  return score;
}

struct Recommendation {
  int doc_id = 0;
  double score = 0.0;
  double tau = 0.0;
  Vector proportions;
};

// Top-n training documents by predictive link probability.
inline std::vector<Recommendation> recommend(const HeldoutPosterior& heldout,
                                             const VariationalState& state, int top_n) {
  const Vector scores = score_against_training(heldout, state);
  const int n = static_cast<int>(scores.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) { return scores(i) > scores(j); });
  const Vector tau = state.visibility_mean();
  std::vector<Recommendation> out;
  const int take = std::min(top_n, n);
  out.reserve(take);
  for (int r = 0; r < take; ++r) {
    const int d = idx[r];
    Recommendation rec;
    rec.doc_id = d;
    rec.score = scores(d);
    rec.tau = tau(d);
    rec.proportions = state.gamma.row(d).transpose() / state.gamma.row(d).sum();
    out.push_back(std::move(rec));
  }
  return out;
}

// Hard sender/receiver topics by argmax; ties go to the lowest index.
// Indices are 0-based here; reports print them 1-based.
inline std::pair<int, int> assign_hard_topics(const Vector& kappa, const Vector& nu) {
  int s = 0, r = 0;
  for (int i = 1; i < kappa.size(); ++i)
    if (kappa(i) > kappa(s)) s = i;
  for (int j = 1; j < nu.size(); ++j)
    if (nu(j) > nu(r)) r = j;
  return {s, r};
}

// Tokenize free text against the training vocabulary; out-of-vocabulary
// tokens are dropped and counted.
inline std::pair<std::vector<TermCount>, int> words_from_text(const std::string& text,
                                                              const Corpus& corpus) {
  std::istringstream in(text);
  std::string tok;
  std::map<int, int> counts;
  int oov = 0;
  while (in >> tok) {
    auto idx = corpus.term_index(tok);
    if (idx)
      counts[*idx] += 1;
    else
      ++oov;
  }
  std::vector<TermCount> words;
  words.reserve(counts.size());
  for (auto [term, count] : counts) words.push_back({term, count});
  return {std::move(words), oov};
}

}  // namespace lmv
