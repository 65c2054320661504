#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lmv/citation_graph.hpp"
#include "lmv/corpus.hpp"
#include "lmv/model.hpp"
#include "lmv/special_functions.hpp"

namespace lmv {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// contiguous chunks of [0, n), one per worker; fn(worker, begin, end)
inline void parallel_chunks(std::int64_t n, int threads,
                            const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
  if (threads <= 1 || n < 2) {
    fn(0, 0, n);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    std::int64_t begin = w * chunk;
    std::int64_t end = std::min<std::int64_t>(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fn, w, begin, end);
  }
  for (auto& t : pool) t.join();
}

inline void check_finite(double value, const char* term) {
  if (!std::isfinite(value))
    throw NumericalError(std::string("lower bound term '") + term + "' is not finite");
}

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace detail

// E[log theta] under Dirichlet(params): psi(x_i) - psi(sum x).
inline Vector dirichlet_elog(const Vector& params) {
  Vector out(params.size());
  double psi_sum = digamma(params.sum());
  for (Eigen::Index i = 0; i < params.size(); ++i) out(i) = digamma(params(i)) - psi_sum;
  return out;
}

inline Matrix dirichlet_elog_rows(const Matrix& params) {
  Matrix out(params.rows(), params.cols());
  for (Eigen::Index r = 0; r < params.rows(); ++r) {
    double psi_sum = digamma(params.row(r).sum());
    for (Eigen::Index c = 0; c < params.cols(); ++c)
      out(r, c) = digamma(params(r, c)) - psi_sum;
  }
  return out;
}

inline constexpr double kOneMinusEps = 1.0 - 1e-12;

// Expected blockmodel scale: tau_bar * B_bar, clamped away from one before
// it hits log(1 - x) or a denominator.
inline double clamped_tb(double tau_mean, double b_mean) {
  return std::min(tau_mean * b_mean, kOneMinusEps);
}

// varsigma(i, j) of one pair: the linked branch is
// psi(a)-psi(a+b)+psi(g)-psi(g+h), the unlinked branch log(1 - E[tau]E[B]).
inline double varsigma(double a_ij, double b_ij, double g_dp, double h_dp, bool linked,
                       bool tau_fixed_one = false) {
  if (linked) {
    double v = digamma(a_ij) - digamma(a_ij + b_ij);
    if (!tau_fixed_one) v += digamma(g_dp) - digamma(g_dp + h_dp);
    return v;
  }
  double tau_mean = tau_fixed_one ? 1.0 : g_dp / (g_dp + h_dp);
  double b_mean = a_ij / (a_ij + b_ij);
  return std::log1p(-clamped_tb(tau_mean, b_mean));
}

namespace detail {

inline void softmax_inplace(Vector& logits) {
  double m = logits.maxCoeff();
  logits = (logits.array() - m).exp();
  logits /= logits.sum();
}

}  // namespace detail

struct PairUpdateOptions {
  double tol = 1e-6;
  int max_iter = 100;
};

// Alternate the kappa and nu softmax updates against a fixed varsigma matrix
// until the largest coordinate change drops below tol. When a previous
// posterior is supplied the iteration resumes from it, so the pair objective
// can only improve on the warm value.
inline PairPosterior update_pair_core(const Vector& elog_theta_d, const Vector& elog_theta_dp,
                                      const Matrix& sigma, const PairUpdateOptions& opts = {},
                                      const Vector* warm_kappa = nullptr,
                                      const Vector* warm_nu = nullptr) {
  PairPosterior pp;
  if (warm_kappa && warm_nu) {
    pp.kappa = *warm_kappa;
    pp.nu = *warm_nu;
  } else {
    pp.kappa = elog_theta_d;
    detail::softmax_inplace(pp.kappa);
    pp.nu = elog_theta_dp;
    detail::softmax_inplace(pp.nu);
  }
  pp.converged = false;
  for (int it = 1; it <= opts.max_iter; ++it) {
    Vector kappa_new = elog_theta_d + sigma * pp.nu;
    detail::softmax_inplace(kappa_new);
    Vector nu_new = elog_theta_dp + sigma.transpose() * kappa_new;
    detail::softmax_inplace(nu_new);
    double change = std::max((kappa_new - pp.kappa).cwiseAbs().maxCoeff(),
                             (nu_new - pp.nu).cwiseAbs().maxCoeff());
    pp.kappa = std::move(kappa_new);
    pp.nu = std::move(nu_new);
    pp.iterations = it;
    if (change < opts.tol) {
      pp.converged = true;
      break;
    }
  }
  return pp;
}

// Batch-mode storage of every masked pair posterior, used purely to resume
// the pair iterations across outer iterations. O(P K) memory; corpora too
// large for this are out of reach for the batch sweep anyway.
struct PairWarmStore {
  int k = 0;
  bool filled = false;
  std::vector<std::int64_t> sender_base;  // pair index offset per sender
  std::vector<double> data;               // per pair: kappa then nu

  double* slot(int sender, std::int64_t local) {
    return data.data() + (sender_base[sender] + local) * 2 * k;
  }
};

inline PairWarmStore make_pair_warm_store(const CitationGraph& graph, int k) {
  PairWarmStore warm;
  warm.k = k;
  warm.sender_base.resize(graph.num_docs() + 1);
  std::int64_t total = 0;
  for (int d = 0; d < graph.num_docs(); ++d) {
    warm.sender_base[d] = total;
    total += graph.masked_count_as_sender(d);
  }
  warm.sender_base[graph.num_docs()] = total;
  warm.data.resize(static_cast<std::size_t>(total) * 2 * k);
  return warm;
}

// Convenience form building E[log theta] and varsigma from raw parameters.
inline PairPosterior update_pair(const Vector& gamma_d, const Vector& gamma_dp, const Matrix& a,
                                 const Matrix& b, double g_dp, double h_dp, bool linked,
                                 bool tau_fixed_one = false, const PairUpdateOptions& opts = {}) {
  const int k = static_cast<int>(gamma_d.size());
  Matrix sigma(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      sigma(i, j) = varsigma(a(i, j), b(i, j), g_dp, h_dp, linked, tau_fixed_one);
  return update_pair_core(dirichlet_elog(gamma_d), dirichlet_elog(gamma_dp), sigma, opts);
}

// One softmax row per unique term of the document.
inline Matrix update_phi(const Vector& elog_theta_d, const Matrix& elog_beta,
                         const std::vector<TermCount>& terms) {
  const int k = static_cast<int>(elog_theta_d.size());
  Matrix phi(static_cast<int>(terms.size()), k);
  for (std::size_t u = 0; u < terms.size(); ++u) {
    Vector row = elog_theta_d + elog_beta.col(terms[u].term);
    detail::softmax_inplace(row);
    phi.row(u) = row.transpose();
  }
  return phi;
}

// gamma_d = alpha + sum_n phi_dn + sum_{d'} kappa_dd' + sum_{d'} nu_d'd
inline Vector update_gamma_batch(const Vector& alpha, const Vector& phi_weighted_sum,
                                 const Vector& kappa_sum, const Vector& nu_sum) {
  return alpha + phi_weighted_sum + kappa_sum + nu_sum;
}

// Count-weighted phi sums per document: P_d = sum_v c_dv phi_dv.
inline Vector phi_weighted_sum(const Matrix& phi_d, const std::vector<TermCount>& terms) {
  Vector out = Vector::Zero(phi_d.cols());
  for (std::size_t u = 0; u < terms.size(); ++u)
    out += terms[u].count * phi_d.row(static_cast<int>(u)).transpose();
  return out;
}

// lambda_kv = eta_v + sum_d c_dv phi_dvk
inline Matrix update_lambda_batch(const Vector& eta, const Corpus& corpus,
                                  const std::vector<Matrix>& phi) {
  const int k = static_cast<int>(phi.front().cols());
  Matrix lambda = Matrix::Zero(k, eta.size());
  for (int d = 0; d < corpus.num_docs(); ++d) {
    const auto& terms = corpus.doc(d);
    for (std::size_t u = 0; u < terms.size(); ++u)
      lambda.col(terms[u].term) += terms[u].count * phi[d].row(static_cast<int>(u)).transpose();
  }
  lambda.array().rowwise() += eta.transpose().array();
  return lambda;
}

// Shared algebra of the nonconjugate fixed-point update for a Beta(x, y)
// posterior with prior (x0, y0), conjugate-style evidence L on the first
// shape and the Fisher-weighted correction driven by the ratio sum R.
inline std::pair<double, double> ncvmp_propose(double x, double y, double x0, double y0, double l,
                                               double r) {
  const double s = x + y;
  const double tx = trigamma(x), ty = trigamma(y), ts = trigamma(s);
  const double det = tx * ty - ts * (tx + ty);
  const double pre = 1.0 / (det * s * s);
  return {x0 + l + pre * (s * ts - y * ty) * r, y0 + pre * (x * tx - s * ts) * r};
}

// Per-receiver nonlink kappa nu' sums. Memory is O(D K^2); it is what lets
// the nested (a,b)/(g,h) loop refresh its denominators exactly.
struct PairStats {
  Matrix kappa_row_sum;             // D x K
  Matrix nu_col_sum;                // D x K
  Matrix link_kv;                   // K x K
  std::vector<Matrix> nonlink_kv;   // per receiver, K x K
  double entropy = 0.0;             // -sum kappa log kappa + nu log nu
  std::int64_t pairs = 0;
  bool all_pairs_converged = true;
};

// NCVMP proposals for the whole blockmodel.
inline std::pair<Matrix, Matrix> ncvmp_update_ab(const Matrix& a, const Matrix& b, double a0,
                                                 double b0, const Matrix& link_kv,
                                                 const std::vector<Matrix>& nonlink_kv,
                                                 const Vector& tau_mean) {
  const int k = static_cast<int>(a.rows());
  Matrix ahat(k, k), bhat(k, k);
  Matrix ratio = Matrix::Zero(k, k);
  Matrix b_mean = (a.array() / (a.array() + b.array())).matrix();
  for (std::size_t dp = 0; dp < nonlink_kv.size(); ++dp) {
    if (nonlink_kv[dp].size() == 0) continue;
    const double tau = tau_mean(static_cast<Eigen::Index>(dp));
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        ratio(i, j) += nonlink_kv[dp](i, j) * tau / (1.0 - clamped_tb(tau, b_mean(i, j)));
  }
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      auto [x, y] = ncvmp_propose(a(i, j), b(i, j), a0, b0, link_kv(i, j), ratio(i, j));
      ahat(i, j) = x;
      bhat(i, j) = y;
    }
  return {ahat, bhat};
}

// NCVMP proposal for one document's visibility posterior.
inline std::pair<double, double> ncvmp_update_gh(double g_dp, double h_dp, double g0, double h0,
                                                 int in_degree, const Matrix& nonlink_kv_dp,
                                                 const Matrix& b_mean) {
  double ratio = 0.0;
  if (nonlink_kv_dp.size() != 0) {
    const double tau = g_dp / (g_dp + h_dp);
    for (Eigen::Index i = 0; i < b_mean.rows(); ++i)
      for (Eigen::Index j = 0; j < b_mean.cols(); ++j)
        ratio += nonlink_kv_dp(i, j) * b_mean(i, j) / (1.0 - clamped_tb(tau, b_mean(i, j)));
  }
  return ncvmp_propose(g_dp, h_dp, g0, h0, in_degree, ratio);
}

// sum_{d'} sum_{ij} C_d'(i,j) log(1 - tau_bar_d' B_bar_ij), the nonlink pair
// term shared by the (a,b) and (g,h) block objectives.
inline double pair_nonlink_bound_term(const Matrix& a, const Matrix& b, const Vector& tau_mean,
                                      const std::vector<Matrix>& nonlink_kv) {
  Matrix b_mean = (a.array() / (a.array() + b.array())).matrix();
  double total = 0.0;
  for (std::size_t dp = 0; dp < nonlink_kv.size(); ++dp) {
    if (nonlink_kv[dp].size() == 0) continue;
    const double tau = tau_mean(static_cast<Eigen::Index>(dp));
    for (Eigen::Index i = 0; i < b_mean.rows(); ++i)
      for (Eigen::Index j = 0; j < b_mean.cols(); ++j)
        total += nonlink_kv[dp](i, j) * std::log1p(-clamped_tb(tau, b_mean(i, j)));
  }
  return total;
}

// All (a,b)-dependent terms of the bound, holding kappa/nu fixed.
inline double ab_block_objective(const Matrix& a, const Matrix& b, double a0, double b0,
                                 const Matrix& link_kv, const std::vector<Matrix>& nonlink_kv,
                                 const Vector& tau_mean) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j), bij = b(i, j);
      const double da = digamma(aij) - digamma(aij + bij);
      const double db = digamma(bij) - digamma(aij + bij);
      total += log_beta(aij, bij) + (a0 - aij) * da + (b0 - bij) * db + link_kv(i, j) * da;
    }
  return total + pair_nonlink_bound_term(a, b, tau_mean, nonlink_kv);
}

// All (g,h)-dependent terms of the bound, holding kappa/nu fixed.
inline double gh_block_objective(const Vector& g, const Vector& h, double g0, double h0,
                                 const std::vector<int>& in_degree, const Matrix& a,
                                 const Matrix& b, const std::vector<Matrix>& nonlink_kv) {
  double total = 0.0;
  for (Eigen::Index dp = 0; dp < g.size(); ++dp) {
    const double gd = g(dp), hd = h(dp);
    const double dg = digamma(gd) - digamma(gd + hd);
    const double dh = digamma(hd) - digamma(gd + hd);
    total += log_beta(gd, hd) + (g0 - gd) * dg + (h0 - hd) * dh +
             in_degree[static_cast<std::size_t>(dp)] * dg;
  }
  Vector tau_mean = (g.array() / (g.array() + h.array())).matrix();
  return total + pair_nonlink_bound_term(a, b, tau_mean, nonlink_kv);
}

namespace detail {

inline double ab_cell_terms(double aij, double bij, double a0, double b0, double link) {
  const double da = digamma(aij) - digamma(aij + bij);
  const double db = digamma(bij) - digamma(aij + bij);
  return log_beta(aij, bij) + (a0 - aij) * da + (b0 - bij) * db + link * da;
}

inline double gh_cell_terms(double gd, double hd, double g0, double h0, int in_degree) {
  const double dg = digamma(gd) - digamma(gd + hd);
  const double dh = digamma(hd) - digamma(gd + hd);
  return log_beta(gd, hd) + (g0 - gd) * dg + (h0 - hd) * dh + in_degree * dg;
}

}  // namespace detail

// Bound change of a candidate (a,b) move, accumulated as per-term differences
// so the accept/reject sign is resolved at the scale of the moved cells.
inline double ab_block_delta(const Matrix& a_old, const Matrix& b_old, const Matrix& a_new,
                             const Matrix& b_new, double a0, double b0, const Matrix& link_kv,
                             const std::vector<Matrix>& nonlink_kv, const Vector& tau_mean) {
  double delta = 0.0;
  for (Eigen::Index i = 0; i < a_old.rows(); ++i)
    for (Eigen::Index j = 0; j < a_old.cols(); ++j)
      delta += detail::ab_cell_terms(a_new(i, j), b_new(i, j), a0, b0, link_kv(i, j)) -
               detail::ab_cell_terms(a_old(i, j), b_old(i, j), a0, b0, link_kv(i, j));
  Matrix mean_old = (a_old.array() / (a_old.array() + b_old.array())).matrix();
  Matrix mean_new = (a_new.array() / (a_new.array() + b_new.array())).matrix();
  for (std::size_t dp = 0; dp < nonlink_kv.size(); ++dp) {
    if (nonlink_kv[dp].size() == 0) continue;
    const double tau = tau_mean(static_cast<Eigen::Index>(dp));
    for (Eigen::Index i = 0; i < mean_old.rows(); ++i)
      for (Eigen::Index j = 0; j < mean_old.cols(); ++j)
        delta += nonlink_kv[dp](i, j) * (std::log1p(-clamped_tb(tau, mean_new(i, j))) -
                                         std::log1p(-clamped_tb(tau, mean_old(i, j))));
  }
  return delta;
}

// Same for a candidate (g,h) move.
inline double gh_block_delta(const Vector& g_old, const Vector& h_old, const Vector& g_new,
                             const Vector& h_new, double g0, double h0,
                             const std::vector<int>& in_degree, const Matrix& a, const Matrix& b,
                             const std::vector<Matrix>& nonlink_kv) {
  double delta = 0.0;
  const Matrix b_mean = (a.array() / (a.array() + b.array())).matrix();
  for (Eigen::Index dp = 0; dp < g_old.size(); ++dp) {
    delta += detail::gh_cell_terms(g_new(dp), h_new(dp), g0, h0, in_degree[dp]) -
             detail::gh_cell_terms(g_old(dp), h_old(dp), g0, h0, in_degree[dp]);
    if (nonlink_kv[static_cast<std::size_t>(dp)].size() == 0) continue;
    const double tau_old = g_old(dp) / (g_old(dp) + h_old(dp));
    const double tau_new = g_new(dp) / (g_new(dp) + h_new(dp));
    for (Eigen::Index i = 0; i < b_mean.rows(); ++i)
      for (Eigen::Index j = 0; j < b_mean.cols(); ++j)
        delta += nonlink_kv[static_cast<std::size_t>(dp)](i, j) *
                 (std::log1p(-clamped_tb(tau_new, b_mean(i, j))) -
                  std::log1p(-clamped_tb(tau_old, b_mean(i, j))));
  }
  return delta;
}

// One pass over all masked pairs: optimize each pair's kappa/nu at the
// current global parameters and fold them into running sums. A warm store
// carries the posteriors across sweeps.
inline PairStats sweep_pairs(const CitationGraph& graph, const VariationalState& state,
                             const Matrix& elog_theta, const PairUpdateOptions& opts,
                             int threads = 1, PairWarmStore* warm = nullptr) {
  const int d_total = graph.num_docs();
  const int k = state.num_topics();

  Matrix psi_a_diff(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      psi_a_diff(i, j) = digamma(state.a(i, j)) - digamma(state.a(i, j) + state.b(i, j));
  Vector tau_mean = state.visibility_mean();
  Vector tau_term(d_total);
  for (int dp = 0; dp < d_total; ++dp)
    tau_term(dp) = state.tau_fixed_one ? 0.0 : digamma(state.g(dp)) - digamma(state.g(dp) + state.h(dp));
  Matrix b_mean = state.blockmodel_mean();
  // per-receiver unlinked varsigma, shared by every pair with that receiver
  std::vector<Matrix> sigma_nonlink(d_total);
  for (int dp = 0; dp < d_total; ++dp) {
    sigma_nonlink[dp].resize(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        sigma_nonlink[dp](i, j) = std::log1p(-clamped_tb(tau_mean(dp), b_mean(i, j)));
  }

  const int workers = std::max(1, threads);
  std::vector<PairStats> partial(workers);
  for (auto& p : partial) {
    p.kappa_row_sum = Matrix::Zero(d_total, k);
    p.nu_col_sum = Matrix::Zero(d_total, k);
    p.link_kv = Matrix::Zero(k, k);
    p.nonlink_kv.assign(d_total, Matrix::Zero(k, k));
  }

  detail::parallel_chunks(d_total, workers, [&](int w, std::int64_t begin, std::int64_t end) {
    PairStats& st = partial[w];
    Vector warm_kappa(k), warm_nu(k);
    for (int d = static_cast<int>(begin); d < static_cast<int>(end); ++d) {
      const Vector elog_d = elog_theta.row(d).transpose();
      std::int64_t local = 0;
      for (int dp = 0; dp < d_total; ++dp) {
        if (!graph.in_mask(d, dp)) continue;
        const bool linked = graph.has_link(d, dp);
        const Vector elog_dp = elog_theta.row(dp).transpose();
        double* slot = warm ? warm->slot(d, local) : nullptr;
        const bool resume = warm && warm->filled;
        if (resume) {
          for (int i = 0; i < k; ++i) {
            warm_kappa(i) = slot[i];
            warm_nu(i) = slot[k + i];
          }
        }
        PairPosterior pp;
        if (linked) {
          Matrix sigma = (psi_a_diff.array() + tau_term(dp)).matrix();
          pp = update_pair_core(elog_d, elog_dp, sigma, opts, resume ? &warm_kappa : nullptr,
                                resume ? &warm_nu : nullptr);
        } else {
          pp = update_pair_core(elog_d, elog_dp, sigma_nonlink[dp], opts,
                                resume ? &warm_kappa : nullptr, resume ? &warm_nu : nullptr);
        }
        if (slot) {
          for (int i = 0; i < k; ++i) {
            slot[i] = pp.kappa(i);
            slot[k + i] = pp.nu(i);
          }
        }
        st.all_pairs_converged &= pp.converged;
        st.kappa_row_sum.row(d) += pp.kappa.transpose();
        st.nu_col_sum.row(dp) += pp.nu.transpose();
        if (linked)
          st.link_kv += pp.kappa * pp.nu.transpose();
        else
          st.nonlink_kv[dp] += pp.kappa * pp.nu.transpose();
        for (int i = 0; i < k; ++i)
          st.entropy -= detail::xlogx(pp.kappa(i)) + detail::xlogx(pp.nu(i));
        ++st.pairs;
        ++local;
      }
    }
  });
  if (warm) warm->filled = true;

  PairStats stats = std::move(partial[0]);
  for (int w = 1; w < workers; ++w) {
    stats.kappa_row_sum += partial[w].kappa_row_sum;
    stats.nu_col_sum += partial[w].nu_col_sum;
    stats.link_kv += partial[w].link_kv;
    for (int dp = 0; dp < d_total; ++dp) stats.nonlink_kv[dp] += partial[w].nonlink_kv[dp];
    stats.entropy += partial[w].entropy;
    stats.pairs += partial[w].pairs;
    stats.all_pairs_converged &= partial[w].all_pairs_converged;
  }
  return stats;
}

// The approximate lower bound evaluated at the current state with kappa/nu
// frozen at the sweep statistics. Every term is checked for finiteness.
inline double lower_bound_from_stats(const VariationalState& state, const Corpus& corpus,
                                     const CitationGraph& graph, const Hyperparameters& hyper,
                                     const PairStats& stats) {
  const int k = state.num_topics();
  const int v = state.vocab_size();
  const int d_total = state.num_docs();
  const Matrix elog_beta = dirichlet_elog_rows(state.lambda);
  const Matrix elog_theta = dirichlet_elog_rows(state.gamma);

  Matrix word_sums = Matrix::Zero(k, v);  // sum_d c_dv phi_dvk
  Matrix doc_sums = Matrix::Zero(d_total, k);
  double phi_entropy = 0.0;
  for (int d = 0; d < d_total; ++d) {
    const auto& terms = corpus.doc(d);
    for (std::size_t u = 0; u < terms.size(); ++u) {
      const double c = terms[u].count;
      word_sums.col(terms[u].term) += c * state.phi[d].row(static_cast<int>(u)).transpose();
      doc_sums.row(d) += c * state.phi[d].row(static_cast<int>(u));
      for (int i = 0; i < k; ++i) phi_entropy -= c * detail::xlogx(state.phi[d](static_cast<int>(u), i));
    }
  }

  double topics = 0.0;  // lambda cross terms and Dirichlet normalizers
  for (int i = 0; i < k; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < v; ++j) {
      topics += (hyper.eta(j) + word_sums(i, j) - state.lambda(i, j)) * elog_beta(i, j) +
                log_gamma(state.lambda(i, j));
      row_sum += state.lambda(i, j);
    }
    topics -= log_gamma(row_sum);
  }
  detail::check_finite(topics, "topics");

  double proportions = 0.0;  // gamma cross terms and normalizers
  for (int d = 0; d < d_total; ++d) {
    double row_sum = 0.0;
    for (int i = 0; i < k; ++i) {
      proportions += (hyper.alpha(i) + doc_sums(d, i) + stats.kappa_row_sum(d, i) +
                      stats.nu_col_sum(d, i) - state.gamma(d, i)) *
                         elog_theta(d, i) +
                     log_gamma(state.gamma(d, i));
      row_sum += state.gamma(d, i);
    }
    proportions -= log_gamma(row_sum);
  }
  detail::check_finite(proportions, "proportions");

  const double constants =
      d_total * (log_gamma(hyper.alpha.sum()) -
                 hyper.alpha.unaryExpr([](double x) { return lmv::log_gamma(x); }).sum()) +
      k * (log_gamma(hyper.eta.sum()) -
           hyper.eta.unaryExpr([](double x) { return lmv::log_gamma(x); }).sum());
  detail::check_finite(constants, "prior constants");

  double blockmodel = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double aij = state.a(i, j), bij = state.b(i, j);
      const double da = digamma(aij) - digamma(aij + bij);
      const double db = digamma(bij) - digamma(aij + bij);
      blockmodel += log_beta(aij, bij) - log_beta(hyper.a0, hyper.b0) + (hyper.a0 - aij) * da +
                    (hyper.b0 - bij) * db + stats.link_kv(i, j) * da;
    }
  detail::check_finite(blockmodel, "blockmodel");

  double visibility = 0.0;
  if (!state.tau_fixed_one) {
    for (int dp = 0; dp < d_total; ++dp) {
      const double gd = state.g(dp), hd = state.h(dp);
      const double dg = digamma(gd) - digamma(gd + hd);
      const double dh = digamma(hd) - digamma(gd + hd);
      visibility += log_beta(gd, hd) - log_beta(hyper.g0, hyper.h0) + (hyper.g0 - gd) * dg +
                    (hyper.h0 - hd) * dh + graph.masked_in_degree(dp) * dg;
    }
  }
  detail::check_finite(visibility, "visibility");

  const double nonlink = pair_nonlink_bound_term(state.a, state.b, state.visibility_mean(),
                                                 stats.nonlink_kv);
  detail::check_finite(nonlink, "nonlink pairs");
  detail::check_finite(stats.entropy, "pair entropy");
  detail::check_finite(phi_entropy, "phi entropy");

  return topics + proportions + constants + blockmodel + visibility + nonlink + stats.entropy +
         phi_entropy;
}

// Standalone evaluation: re-optimizes every pair posterior at the current
// state, then scores the bound.
inline double lower_bound(const VariationalState& state, const Corpus& corpus,
                          const CitationGraph& graph, const Hyperparameters& hyper,
                          const PairUpdateOptions& pair_opts = {}, int threads = 1) {
  const Matrix elog_theta = dirichlet_elog_rows(state.gamma);
  PairStats stats = sweep_pairs(graph, state, elog_theta, pair_opts, threads);
  return lower_bound_from_stats(state, corpus, graph, hyper, stats);
}

// ------------------------- plain LDA -------------------------

struct LdaOptions {
  double tol = 1e-5;
  int max_iter = 100;
  std::uint64_t seed = 1;
};

// LDA-only part of the bound (no pair, blockmodel or visibility terms).
inline double lda_lower_bound(const VariationalState& state, const Corpus& corpus,
                              const Hyperparameters& hyper) {
  const int k = state.num_topics();
  const int v = state.vocab_size();
  const int d_total = state.num_docs();
  const Matrix elog_beta = dirichlet_elog_rows(state.lambda);
  const Matrix elog_theta = dirichlet_elog_rows(state.gamma);

  double total = d_total * (log_gamma(hyper.alpha.sum()) -
                            hyper.alpha.unaryExpr([](double x) { return lmv::log_gamma(x); }).sum()) +
                 k * (log_gamma(hyper.eta.sum()) -
                      hyper.eta.unaryExpr([](double x) { return lmv::log_gamma(x); }).sum());

  Matrix word_sums = Matrix::Zero(k, v);
  for (int d = 0; d < d_total; ++d) {
    const auto& terms = corpus.doc(d);
    Vector doc_sum = Vector::Zero(k);
    for (std::size_t u = 0; u < terms.size(); ++u) {
      const double c = terms[u].count;
      word_sums.col(terms[u].term) += c * state.phi[d].row(static_cast<int>(u)).transpose();
      doc_sum += c * state.phi[d].row(static_cast<int>(u)).transpose();
      for (int i = 0; i < k; ++i) total -= c * detail::xlogx(state.phi[d](static_cast<int>(u), i));
    }
    double row_sum = 0.0;
    for (int i = 0; i < k; ++i) {
      total += (hyper.alpha(i) + doc_sum(i) - state.gamma(d, i)) * elog_theta(d, i) +
               log_gamma(state.gamma(d, i));
      row_sum += state.gamma(d, i);
    }
    total -= log_gamma(row_sum);
  }
  for (int i = 0; i < k; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < v; ++j) {
      total += (hyper.eta(j) + word_sums(i, j) - state.lambda(i, j)) * elog_beta(i, j) +
               log_gamma(state.lambda(i, j));
      row_sum += state.lambda(i, j);
    }
    total -= log_gamma(row_sum);
  }
  detail::check_finite(total, "lda bound");
  return total;
}

// Coordinate ascent for LDA alone; used for initialization and as a baseline.
inline std::pair<VariationalState, FitReport> fit_lda(const Corpus& corpus,
                                                      const Hyperparameters& hyper,
                                                      const LdaOptions& opts = {}) {
  VariationalState state = make_initial_state(corpus, hyper, true, opts.seed);
  FitReport report;
  double prev = 0.0;
  const auto start = std::chrono::steady_clock::now();
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    const Matrix elog_theta = dirichlet_elog_rows(state.gamma);
    const Matrix elog_beta = dirichlet_elog_rows(state.lambda);
    for (int d = 0; d < corpus.num_docs(); ++d)
      state.phi[d] = update_phi(elog_theta.row(d).transpose(), elog_beta, corpus.doc(d));
    for (int d = 0; d < corpus.num_docs(); ++d)
      state.gamma.row(d) = update_gamma_batch(hyper.alpha, phi_weighted_sum(state.phi[d], corpus.doc(d)),
                                              Vector::Zero(hyper.num_topics),
                                              Vector::Zero(hyper.num_topics))
                               .transpose();
    state.lambda = update_lambda_batch(hyper.eta, corpus, state.phi);
    const double bound = lda_lower_bound(state, corpus, hyper);
    report.bound_trace.push_back(bound);
    report.wall_clock.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    report.iterations = iter;
    if (iter >= 2 && std::abs(bound - prev) < opts.tol * std::abs(prev)) {
      report.converged = true;
      break;
    }
    prev = bound;
  }
  return {std::move(state), std::move(report)};
}

// ------------------------- batch LMV -------------------------

struct BatchOptions {
  bool tau_fixed_one = false;
  double tol = 1e-5;          // relative bound change
  int max_outer = 200;
  double pair_tol = 1e-6;
  int pair_max_iter = 100;
  double nested_tol = 1e-6;   // relative change of (a,b,g,h)
  int nested_max_cycles = 50;
  double step_floor = 1e-4;   // below this the block update is skipped
  std::optional<VariationalState> init;
  bool lda_init = true;
  int lda_max_iter = 100;
  std::uint64_t seed = 1;
  int restarts = 1;           // independent inits, keep the best bound
  bool warm_start_pairs = true;  // carry pair posteriors across iterations
  int threads = 1;
};

namespace detail {

// Natural-gradient step with halving: shrink s until the interpolated shapes
// are positive and the block delta is a strict increase; give up below the
// floor and keep the current values.
template <typename Param>
bool accept_block_step(Param& x, Param& y, const Param& xhat, const Param& yhat, double step_floor,
                       const std::function<double(const Param&, const Param&, const Param&,
                                                  const Param&)>& delta) {
  double s = 1.0;
  while (s >= step_floor) {
    Param xc = (1.0 - s) * x + s * xhat;
    Param yc = (1.0 - s) * y + s * yhat;
    if ((xc.array() <= 0.0).any() || (yc.array() <= 0.0).any()) {
      s *= 0.5;
      continue;
    }
    if (delta(x, y, xc, yc) > 0.0) {
      x = std::move(xc);
      y = std::move(yc);
      return true;
    }
    s *= 0.5;
  }
  return false;
}

template <typename Param>
double proposal_rel_change(const Param& x, const Param& y, const Param& xhat, const Param& yhat) {
  return std::max(((xhat - x).cwiseAbs().array() / x.cwiseAbs().array()).maxCoeff(),
                  ((yhat - y).cwiseAbs().array() / y.cwiseAbs().array()).maxCoeff());
}

}  // namespace detail

namespace detail {

inline std::pair<VariationalState, FitReport> fit_batch_single(const Corpus& corpus,
                                                               const CitationGraph& graph,
                                                               const Hyperparameters& hyper,
                                                               const BatchOptions& opts) {

  VariationalState state;
  if (opts.init) {
    state = *opts.init;
    state.tau_fixed_one = opts.tau_fixed_one;
  } else if (opts.lda_init) {
    LdaOptions lda_opts;
    lda_opts.seed = opts.seed;
    lda_opts.max_iter = opts.lda_max_iter;
    state = fit_lda(corpus, hyper, lda_opts).first;
    state.tau_fixed_one = opts.tau_fixed_one;
    state.a = Matrix::Constant(hyper.num_topics, hyper.num_topics, hyper.a0);
    state.b = Matrix::Constant(hyper.num_topics, hyper.num_topics, hyper.b0);
    state.g = Vector::Constant(corpus.num_docs(), hyper.g0);
    state.h = Vector::Constant(corpus.num_docs(), hyper.h0);
  } else {
    state = make_initial_state(corpus, hyper, opts.tau_fixed_one, opts.seed);
  }

  ensure_phi(state, corpus);

  std::vector<int> in_degree(graph.num_docs());
  for (int dp = 0; dp < graph.num_docs(); ++dp) in_degree[dp] = graph.masked_in_degree(dp);

  const PairUpdateOptions pair_opts{opts.pair_tol, opts.pair_max_iter};
  FitReport report;
  double prev = 0.0;
  const auto start = std::chrono::steady_clock::now();
  PairWarmStore warm;
  if (opts.warm_start_pairs) warm = make_pair_warm_store(graph, hyper.num_topics);

  for (int iter = 1; iter <= opts.max_outer; ++iter) {
    Matrix elog_theta = dirichlet_elog_rows(state.gamma);
    Matrix elog_beta = dirichlet_elog_rows(state.lambda);

    // step 1: pair posteriors and their running sums
    PairStats stats = sweep_pairs(graph, state, elog_theta, pair_opts, opts.threads,
                                  opts.warm_start_pairs ? &warm : nullptr);

    // step 2: phi
    for (int d = 0; d < corpus.num_docs(); ++d)
      state.phi[d] = update_phi(elog_theta.row(d).transpose(), elog_beta, corpus.doc(d));

    // step 3: gamma
    for (int d = 0; d < corpus.num_docs(); ++d)
      state.gamma.row(d) =
          update_gamma_batch(hyper.alpha, phi_weighted_sum(state.phi[d], corpus.doc(d)),
                             stats.kappa_row_sum.row(d).transpose(),
                             stats.nu_col_sum.row(d).transpose())
              .transpose();

    // step 4: lambda
    state.lambda = update_lambda_batch(hyper.eta, corpus, state.phi);

    // step 5: nested natural-gradient loop over (a,b) and (g,h); a block is
    // attempted only while its proposal still moves it materially
    for (int cycle = 0; cycle < opts.nested_max_cycles; ++cycle) {
      bool progress = false;
      auto [ahat, bhat] = ncvmp_update_ab(state.a, state.b, hyper.a0, hyper.b0, stats.link_kv,
                                          stats.nonlink_kv, state.visibility_mean());
      if (detail::proposal_rel_change<Matrix>(state.a, state.b, ahat, bhat) >= opts.nested_tol) {
        progress |= detail::accept_block_step<Matrix>(
            state.a, state.b, ahat, bhat, opts.step_floor,
            [&](const Matrix& x, const Matrix& y, const Matrix& xc, const Matrix& yc) {
              return ab_block_delta(x, y, xc, yc, hyper.a0, hyper.b0, stats.link_kv,
                                    stats.nonlink_kv, state.visibility_mean());
            });
      }
      if (!opts.tau_fixed_one) {
        Vector ghat(state.g.size()), hhat(state.h.size());
        const Matrix b_mean = state.blockmodel_mean();
        for (int dp = 0; dp < graph.num_docs(); ++dp) {
          auto [x, y] = ncvmp_update_gh(state.g(dp), state.h(dp), hyper.g0, hyper.h0,
                                        in_degree[dp], stats.nonlink_kv[dp], b_mean);
          ghat(dp) = x;
          hhat(dp) = y;
        }
        if (detail::proposal_rel_change<Vector>(state.g, state.h, ghat, hhat) >= opts.nested_tol) {
          progress |= detail::accept_block_step<Vector>(
              state.g, state.h, ghat, hhat, opts.step_floor,
              [&](const Vector& x, const Vector& y, const Vector& xc, const Vector& yc) {
                return gh_block_delta(x, y, xc, yc, hyper.g0, hyper.h0, in_degree, state.a,
                                      state.b, stats.nonlink_kv);
              });
        }
      }
      if (!progress) break;
    }

    const double bound = lower_bound_from_stats(state, corpus, graph, hyper, stats);
    report.bound_trace.push_back(bound);
    report.wall_clock.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    report.iterations = iter;
    if (iter >= 2 && std::abs(bound - prev) < opts.tol * std::abs(prev)) {
      report.converged = true;
      break;
    }
    prev = bound;
  }

  report.B_hat = state.blockmodel_mean();
  report.tau_hat = state.visibility_mean();
  return {std::move(state), std::move(report)};
}

}  // namespace detail

// Coordinate ascent for the full model. Cycles pair posteriors, phi, gamma,
// lambda, then the nested (a,b)/(g,h) natural-gradient loop with accept/reject
// against the bound. With tau_fixed_one the visibility block is pinned at one,
// which reduces the model to the pairwise link-LDA variant. Restarts rerun
// the fit from independently seeded initializations and keep the best bound,
// the usual answer to the multi-modality of the posterior surface.
inline std::pair<VariationalState, FitReport> fit_batch(const Corpus& corpus,
                                                        const CitationGraph& graph,
                                                        const Hyperparameters& hyper,
                                                        const BatchOptions& opts = {}) {
  if (graph.num_docs() != corpus.num_docs())
    throw std::invalid_argument("fit_batch: corpus and graph disagree on the document count");
  hyper.validate();
  if (opts.max_outer < 1) throw std::invalid_argument("fit_batch: max_outer must be positive");
  if (opts.init) validate_state_shapes(*opts.init, corpus, hyper);
  const int restarts = opts.init ? 1 : std::max(1, opts.restarts);
  std::pair<VariationalState, FitReport> best;
  for (int r = 0; r < restarts; ++r) {
    BatchOptions single = opts;
    single.restarts = 1;
    single.seed = opts.seed + static_cast<std::uint64_t>(r);
    auto run = detail::fit_batch_single(corpus, graph, hyper, single);
    if (r == 0 || run.second.bound_trace.back() > best.second.bound_trace.back())
      best = std::move(run);
  }
  return best;
}

}  // namespace lmv
