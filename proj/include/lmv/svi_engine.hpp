#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lmv/citation_graph.hpp"
#include "lmv/corpus.hpp"
#include "lmv/model.hpp"
#include "lmv/vb_engine.hpp"

namespace lmv {

// Robbins-Monro schedule A1 / (sweep + m/M + A2)^v, clamped into (0, 1].
struct StepSchedule {
  double a1 = 1.0;
  double a2 = 5.0;
  double exponent = 0.501;          // must lie in (0.5, 1]
  int minibatches_per_sweep = 1;    // M

  void validate() const {
    if (a1 <= 0.0 || a2 <= 0.0) throw std::invalid_argument("step schedule: A1, A2 must be positive");
    if (!(exponent > 0.5 && exponent <= 1.0))
      throw std::invalid_argument("step schedule: exponent must lie in (0.5, 1]");
    if (minibatches_per_sweep < 1)
      throw std::invalid_argument("step schedule: minibatches per sweep must be positive");
  }

  double step(int sweep, int minibatch) const {
    const double t = sweep + static_cast<double>(minibatch) / minibatches_per_sweep + a2;
    return std::min(1.0, a1 / std::pow(t, exponent));
  }
};

inline double step_size(const StepSchedule& sched, int sweep, int minibatch) {
  return sched.step(sweep, minibatch);
}

// Horvitz-Thompson estimate of the batch gamma update from the sampled pairs
// touching document d: alpha + sum phi + sum kappa/pi + sum nu/pi.
inline Vector ht_gamma_estimate(const Vector& alpha, const Vector& phi_sum,
                                const std::vector<std::pair<Vector, double>>& row_kappa_pi,
                                const std::vector<std::pair<Vector, double>>& col_nu_pi) {
  Vector out = alpha + phi_sum;
  for (const auto& [kappa, pi] : row_kappa_pi) out += kappa / pi;
  for (const auto& [nu, pi] : col_nu_pi) out += nu / pi;
  return out;
}

// lambda_hat_kv = eta_v + (D/|S|) sum_{d in S} sum_v c phi
inline Matrix ht_lambda_estimate(const Vector& eta, const Corpus& corpus,
                                 const std::vector<int>& minibatch,
                                 const std::vector<Matrix>& phi, int num_docs) {
  const int k = phi.empty() ? 0 : static_cast<int>(phi.front().cols());
  Matrix lambda = Matrix::Zero(k, eta.size());
  for (std::size_t s = 0; s < minibatch.size(); ++s) {
    const auto& terms = corpus.doc(minibatch[s]);
    for (std::size_t u = 0; u < terms.size(); ++u)
      lambda.col(terms[u].term) +=
          terms[u].count * phi[minibatch[s]].row(static_cast<int>(u)).transpose();
  }
  lambda *= static_cast<double>(num_docs) / static_cast<double>(minibatch.size());
  lambda.array().rowwise() += eta.transpose().array();
  return lambda;
}

struct SviOptions {
  int minibatch_size = 200;
  int n0 = 100;
  double epsilon = 0.05;            // diag(B) stopping tolerance
  StepSchedule schedule;            // minibatches_per_sweep is filled in
  int max_sweeps = 200;
  bool tau_fixed_one = false;
  double pair_tol = 1e-6;
  int pair_max_iter = 100;
  double step_floor = 1e-8;         // positivity halving floor
  std::optional<VariationalState> init;
  bool lda_init = true;
  int lda_max_iter = 100;
  std::uint64_t seed = 1;
  int restarts = 1;                 // independent runs, keep the best exact bound
  int threads = 1;
  // invoked at every sweep boundary, e.g. to write a rolling checkpoint
  std::function<void(const VariationalState&, int)> sweep_callback;
};

namespace detail {

// interpolate shapes with per-block halving until both stay positive
template <typename Param>
bool interpolate_positive(Param& x, Param& y, const Param& xhat, const Param& yhat, double s_t,
                          double floor) {
  double s = s_t;
  while (s >= floor) {
    Param xc = (1.0 - s) * x + s * xhat;
    Param yc = (1.0 - s) * y + s * yhat;
    if ((xc.array() > 0.0).all() && (yc.array() > 0.0).all()) {
      x = std::move(xc);
      y = std::move(yc);
      return true;
    }
    s *= 0.5;
  }
  return false;
}

}  // namespace detail

namespace detail {

inline std::pair<VariationalState, FitReport> fit_svi_single(const Corpus& corpus,
                                                             const CitationGraph& graph,
                                                             const Hyperparameters& hyper,
                                                             const SviOptions& opts) {
  const int d_total = corpus.num_docs();
  const int k = hyper.num_topics;
  if (opts.minibatch_size < 1 || opts.minibatch_size > d_total)
    throw std::invalid_argument("fit_svi: minibatch size must lie in [1, D]");

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
    state.a = Matrix::Constant(k, k, hyper.a0);
    state.b = Matrix::Constant(k, k, hyper.b0);
    state.g = Vector::Constant(d_total, hyper.g0);
    state.h = Vector::Constant(d_total, hyper.h0);
  } else {
    state = make_initial_state(corpus, hyper, opts.tau_fixed_one, opts.seed);
  }

  ensure_phi(state, corpus);

  const int m_per_sweep = (d_total + opts.minibatch_size - 1) / opts.minibatch_size;
  StepSchedule sched = opts.schedule;
  sched.minibatches_per_sweep = m_per_sweep;
  sched.validate();

  const PairUpdateOptions pair_opts{opts.pair_tol, opts.pair_max_iter};
  const PairUniverse mask(graph);
  FitReport report;
  Vector prev_diag = state.blockmodel_mean().diagonal();
  const auto start = std::chrono::steady_clock::now();

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    std::vector<int> order(d_total);
    for (int i = 0; i < d_total; ++i) order[i] = i;
    CounterRng sweep_rng(CounterRng::derive_key({opts.seed, 0x5eedULL, static_cast<std::uint64_t>(sweep)}));
    sweep_rng.shuffle(order);
    std::int64_t pairs_this_sweep = 0;

    for (int m = 0; m < m_per_sweep; ++m) {
      const int begin = m * opts.minibatch_size;
      const int end = std::min(d_total, begin + opts.minibatch_size);
      std::vector<int> batch(order.begin() + begin, order.begin() + end);
      std::sort(batch.begin(), batch.end());
      std::vector<char> in_batch(d_total, 0);
      for (int s : batch) in_batch[s] = 1;

      CounterRng pair_rng(CounterRng::derive_key(
          {opts.seed, 0xbe32ULL, static_cast<std::uint64_t>(sweep), static_cast<std::uint64_t>(m)}));
      const std::vector<PairSample> sampled = sample_pairs(graph, mask, batch, opts.n0, pair_rng);
      pairs_this_sweep += static_cast<std::int64_t>(sampled.size());
      const double s_t = sched.step(sweep, m);

      const Matrix elog_theta = dirichlet_elog_rows(state.gamma);
      const Matrix elog_beta = dirichlet_elog_rows(state.lambda);

      // pair-local posteriors at the current global parameters
      Matrix psi_a_diff(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
          psi_a_diff(i, j) = digamma(state.a(i, j)) - digamma(state.a(i, j) + state.b(i, j));
      const Matrix b_mean_sample = state.blockmodel_mean();
      const Vector tau_mean_all = state.visibility_mean();
      std::map<int, Matrix> sigma_nonlink;  // per receiver seen in the sample
      for (const auto& pair : sampled) {
        if (pair.linked || sigma_nonlink.count(pair.cited)) continue;
        Matrix sigma(k, k);
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j)
            sigma(i, j) = std::log1p(-clamped_tb(tau_mean_all(pair.cited), b_mean_sample(i, j)));
        sigma_nonlink.emplace(pair.cited, std::move(sigma));
      }
      std::vector<PairPosterior> posteriors(sampled.size());
      detail::parallel_chunks(
          static_cast<std::int64_t>(sampled.size()), opts.threads,
          [&](int, std::int64_t begin, std::int64_t end) {
            for (std::int64_t p = begin; p < end; ++p) {
              const auto& pair = sampled[static_cast<std::size_t>(p)];
              if (pair.linked) {
                const double tau_term =
                    state.tau_fixed_one
                        ? 0.0
                        : digamma(state.g(pair.cited)) -
                              digamma(state.g(pair.cited) + state.h(pair.cited));
                Matrix sigma = (psi_a_diff.array() + tau_term).matrix();
                posteriors[static_cast<std::size_t>(p)] =
                    update_pair_core(elog_theta.row(pair.citing).transpose(),
                                     elog_theta.row(pair.cited).transpose(), sigma, pair_opts);
              } else {
                posteriors[static_cast<std::size_t>(p)] = update_pair_core(
                    elog_theta.row(pair.citing).transpose(),
                    elog_theta.row(pair.cited).transpose(), sigma_nonlink.at(pair.cited),
                    pair_opts);
              }
            }
          });

      // HT accumulators: gamma pieces for documents in S, link and weighted
      // nonlink kappa nu' sums for receivers in S
      Matrix row_kappa_pi = Matrix::Zero(d_total, k);
      Matrix col_nu_pi = Matrix::Zero(d_total, k);
      Matrix link_kv = Matrix::Zero(k, k);
      std::map<int, Matrix> nonlink_kv;  // receiver in S -> sum kappa nu^T / pi
      for (std::size_t p = 0; p < sampled.size(); ++p) {
        const auto& pair = sampled[p];
        const auto& pp = posteriors[p];
        if (in_batch[pair.citing]) row_kappa_pi.row(pair.citing) += pp.kappa.transpose() / pair.pi;
        if (in_batch[pair.cited]) {
          col_nu_pi.row(pair.cited) += pp.nu.transpose() / pair.pi;
          if (pair.linked) {
            link_kv += pp.kappa * pp.nu.transpose();
          } else {
            auto [it, inserted] = nonlink_kv.try_emplace(pair.cited, Matrix::Zero(k, k));
            it->second += pp.kappa * pp.nu.transpose() / pair.pi;
          }
        }
      }

      // phi for documents in the minibatch
      for (int d : batch)
        state.phi[d] = update_phi(elog_theta.row(d).transpose(), elog_beta, corpus.doc(d));

      // gamma interpolation, minibatch documents only
      for (int d : batch) {
        Vector gamma_hat = hyper.alpha + phi_weighted_sum(state.phi[d], corpus.doc(d)) +
                           row_kappa_pi.row(d).transpose() + col_nu_pi.row(d).transpose();
        state.gamma.row(d) = ((1.0 - s_t) * state.gamma.row(d).transpose() + s_t * gamma_hat).transpose();
      }

      // lambda interpolation
      const Matrix lambda_hat = ht_lambda_estimate(hyper.eta, corpus, batch, state.phi, d_total);
      state.lambda = (1.0 - s_t) * state.lambda + s_t * lambda_hat;

      // blockmodel interpolation with HT-weighted sums
      {
        const double scale = static_cast<double>(d_total) / static_cast<double>(batch.size());
        const Matrix b_mean = state.blockmodel_mean();
        Matrix ratio = Matrix::Zero(k, k);
        for (const auto& [dp, kv] : nonlink_kv) {
          const double tau = tau_mean_all(dp);
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              ratio(i, j) += kv(i, j) * tau / (1.0 - clamped_tb(tau, b_mean(i, j)));
        }
        Matrix ahat(k, k), bhat(k, k);
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            auto [x, y] = ncvmp_propose(state.a(i, j), state.b(i, j), hyper.a0, hyper.b0,
                                        scale * link_kv(i, j), scale * ratio(i, j));
            ahat(i, j) = x;
            bhat(i, j) = y;
          }
        detail::interpolate_positive<Matrix>(state.a, state.b, ahat, bhat, s_t, opts.step_floor);
      }

      // visibility interpolation for receivers in the minibatch
      if (!opts.tau_fixed_one) {
        const Matrix b_mean = state.blockmodel_mean();
        Vector ghat = state.g, hhat = state.h;
        Matrix empty;
        for (int dp : batch) {
          auto it = nonlink_kv.find(dp);
          auto [x, y] = ncvmp_update_gh(state.g(dp), state.h(dp), hyper.g0, hyper.h0,
                                        graph.masked_in_degree(dp),
                                        it == nonlink_kv.end() ? empty : it->second, b_mean);
          ghat(dp) = x;
          hhat(dp) = y;
        }
        Vector gnew = state.g, hnew = state.h;
        if (detail::interpolate_positive<Vector>(gnew, hnew, ghat, hhat, s_t, opts.step_floor)) {
          for (int dp : batch) {
            state.g(dp) = gnew(dp);
            state.h(dp) = hnew(dp);
          }
        }
      }
    }

    // sweep boundary: stop once the blockmodel diagonal settles
    const Vector diag = state.blockmodel_mean().diagonal();
    const double denom = prev_diag.norm();
    const double rel = denom > 0.0 ? (diag - prev_diag).norm() / denom : 1.0;
    report.diag_rel_trace.push_back(rel);
    report.pairs_sampled.push_back(pairs_this_sweep);
    report.wall_clock.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    report.iterations = sweep + 1;
    prev_diag = diag;
    if (opts.sweep_callback) opts.sweep_callback(state, sweep);
    if (rel < opts.epsilon) {
      report.converged = true;
      break;
    }
  }

  report.B_hat = state.blockmodel_mean();
  report.tau_hat = state.visibility_mean();
  return {std::move(state), std::move(report)};
}

}  // namespace detail

// Stochastic variational inference: minibatch sweeps without replacement,
// Bernoulli pair subsampling, Horvitz-Thompson corrected natural-gradient
// interpolation, and the diag(B) sweep-level stopping rule. Restarts rerun
// the procedure from independent initializations and keep the state with the
// best exact bound; the selection pass costs one full pair sweep per run, so
// leave restarts at one for corpora where a batch pass is not feasible.
inline std::pair<VariationalState, FitReport> fit_svi(const Corpus& corpus,
                                                      const CitationGraph& graph,
                                                      const Hyperparameters& hyper,
                                                      const SviOptions& opts = {}) {
  if (graph.num_docs() != corpus.num_docs())
    throw std::invalid_argument("fit_svi: corpus and graph disagree on the document count");
  hyper.validate();
  if (opts.max_sweeps < 1) throw std::invalid_argument("fit_svi: max_sweeps must be positive");
  if (opts.init) validate_state_shapes(*opts.init, corpus, hyper);
  const int restarts = opts.init ? 1 : std::max(1, opts.restarts);
  std::pair<VariationalState, FitReport> best;
  double best_bound = 0.0;
  for (int r = 0; r < restarts; ++r) {
    SviOptions single = opts;
    single.restarts = 1;
    single.seed = opts.seed + static_cast<std::uint64_t>(r);
    auto run = detail::fit_svi_single(corpus, graph, hyper, single);
    if (restarts == 1) return run;
    const double bound = lower_bound(run.first, corpus, graph, hyper,
                                     {opts.pair_tol, opts.pair_max_iter}, opts.threads);
    if (r == 0 || bound > best_bound) {
      best_bound = bound;
      best = std::move(run);
    }
  }
  return best;
}

}  // namespace lmv
