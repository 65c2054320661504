#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmv/corpus.hpp"
#include "lmv/rng.hpp"
#include "lmv/special_functions.hpp"

namespace lmv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Hyperparameters {
  int num_topics = 0;  // K
  Vector alpha;        // K, Dirichlet prior on topic proportions
  Vector eta;          // V, Dirichlet prior on topics
  double a0 = 1.0, b0 = 1.0;  // Beta prior on blockmodel entries
  double g0 = 1.0, h0 = 1.0;  // Beta prior on visibilities

  static Hyperparameters symmetric(int num_topics, int vocab_size, double alpha_value,
                                   double eta_value, double a0 = 1.0, double b0 = 1.0,
                                   double g0 = 1.0, double h0 = 1.0) {
    Hyperparameters hp;
    hp.num_topics = num_topics;
    hp.alpha = Vector::Constant(num_topics, alpha_value);
    hp.eta = Vector::Constant(vocab_size, eta_value);
    hp.a0 = a0;
    hp.b0 = b0;
    hp.g0 = g0;
    hp.h0 = h0;
    hp.validate();
    return hp;
  }

  void validate() const {
    if (num_topics < 1) throw std::invalid_argument("hyperparameters: K must be positive");
    if (alpha.size() != num_topics) throw std::invalid_argument("hyperparameters: alpha size != K");
    if ((alpha.array() <= 0).any()) throw std::invalid_argument("hyperparameters: alpha must be positive");
    if (eta.size() < 1 || (eta.array() <= 0).any())
      throw std::invalid_argument("hyperparameters: eta must be positive");
    if (a0 <= 0 || b0 <= 0 || g0 <= 0 || h0 <= 0)
      throw std::invalid_argument("hyperparameters: beta shapes must be positive");
  }
};

// Per-pair sender/receiver posteriors; transient, never all materialized.
struct PairPosterior {
  Vector kappa;
  Vector nu;
  bool converged = true;
  int iterations = 0;
};

struct VariationalState {
  Matrix lambda;             // K x V, q(beta_k) = Dirichlet(lambda_k)
  Matrix gamma;              // D x K, q(theta_d) = Dirichlet(gamma_d)
  std::vector<Matrix> phi;   // per doc: unique-terms x K simplex rows
  Matrix a, b;               // K x K, q(B_ij) = Beta(a_ij, b_ij)
  Vector g, h;               // D, q(tau_d) = Beta(g_d, h_d)
  bool tau_fixed_one = false;

  int num_topics() const { return static_cast<int>(lambda.rows()); }
  int num_docs() const { return static_cast<int>(gamma.rows()); }
  int vocab_size() const { return static_cast<int>(lambda.cols()); }

  Matrix blockmodel_mean() const { return (a.array() / (a.array() + b.array())).matrix(); }

  Vector visibility_mean() const {
    if (tau_fixed_one) return Vector::Ones(g.size());
    return (g.array() / (g.array() + h.array())).matrix();
  }
};

// Fallback initialization: lambda = eta plus a little seeded noise, gamma
// spreads the document mass evenly, Beta posteriors start at the prior.
inline VariationalState make_initial_state(const Corpus& corpus, const Hyperparameters& hyper,
                                           bool tau_fixed_one, std::uint64_t seed) {
  const int k = hyper.num_topics;
  const int v = corpus.vocab_size();
  const int d_total = corpus.num_docs();
  VariationalState s;
  s.tau_fixed_one = tau_fixed_one;
  CounterRng rng(CounterRng::derive_key({seed, 0x1417ULL}));
  s.lambda.resize(k, v);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < v; ++j) s.lambda(i, j) = hyper.eta(j) + 0.1 * rng.uniform_pos();
  s.gamma.resize(d_total, k);
  for (int d = 0; d < d_total; ++d)
    s.gamma.row(d) = hyper.alpha.transpose().array() +
                     static_cast<double>(corpus.doc_length(d)) / static_cast<double>(k);
  s.phi.resize(d_total);
  for (int d = 0; d < d_total; ++d)
    s.phi[d] = Matrix::Constant(static_cast<int>(corpus.doc(d).size()), k, 1.0 / k);
  s.a = Matrix::Constant(k, k, hyper.a0);
  s.b = Matrix::Constant(k, k, hyper.b0);
  s.g = Vector::Constant(d_total, hyper.g0);
  s.h = Vector::Constant(d_total, hyper.h0);
  return s;
}

// phi is transient (not checkpointed); give a resumed state uniform rows.
inline void ensure_phi(VariationalState& state, const Corpus& corpus) {
  const int k = state.num_topics();
  bool ok = static_cast<int>(state.phi.size()) == corpus.num_docs();
  for (int d = 0; ok && d < corpus.num_docs(); ++d)
    ok = state.phi[d].rows() == static_cast<Eigen::Index>(corpus.doc(d).size()) &&
         state.phi[d].cols() == k;
  if (ok) return;
  state.phi.assign(corpus.num_docs(), Matrix());
  for (int d = 0; d < corpus.num_docs(); ++d)
    state.phi[d] = Matrix::Constant(static_cast<int>(corpus.doc(d).size()), k, 1.0 / k);
}

// Shape check for a state against the data it is about to be fitted with,
// e.g. when resuming from a checkpoint.
inline void validate_state_shapes(const VariationalState& state, const Corpus& corpus,
                                  const Hyperparameters& hyper) {
  if (state.num_topics() != hyper.num_topics)
    throw std::invalid_argument("state topic count does not match the hyperparameters");
  if (state.vocab_size() != corpus.vocab_size())
    throw std::invalid_argument("state vocabulary size does not match the corpus");
  if (state.num_docs() != corpus.num_docs() || state.g.size() != corpus.num_docs() ||
      state.h.size() != corpus.num_docs())
    throw std::invalid_argument("state document count does not match the corpus");
  if (state.a.rows() != hyper.num_topics || state.a.cols() != hyper.num_topics ||
      state.b.rows() != hyper.num_topics || state.b.cols() != hyper.num_topics)
    throw std::invalid_argument("state blockmodel shape does not match the hyperparameters");
}

struct FitReport {
  std::vector<double> bound_trace;      // batch: approximate lower bound per iteration
  std::vector<double> diag_rel_trace;   // svi: relative change of diag(B) per sweep
  std::vector<double> wall_clock;       // seconds per iteration / sweep
  std::vector<std::int64_t> pairs_sampled;  // svi: pairs drawn per sweep
  Matrix B_hat;
  Vector tau_hat;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw std::runtime_error("checkpoint: expected matrix");
  const auto rows = j.size();
  const auto cols = j[0].size();
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (j[i].size() != cols) throw std::runtime_error("checkpoint: ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

}  // namespace detail

struct Checkpoint {
  VariationalState state;
  Hyperparameters hyper;
  std::uint64_t seed = 0;
};

// Versioned JSON checkpoint: all global variational parameters plus the
// hyperparameters and rng seed. phi is transient and recomputed on resume.
inline void save_checkpoint(const std::string& path, const VariationalState& state,
                            const Hyperparameters& hyper, std::uint64_t seed) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["seed"] = seed;
  j["tau_fixed_one"] = state.tau_fixed_one;
  j["K"] = hyper.num_topics;
  j["alpha"] = detail::vector_to_json(hyper.alpha);
  j["eta"] = detail::vector_to_json(hyper.eta);
  j["a0"] = hyper.a0;
  j["b0"] = hyper.b0;
  j["g0"] = hyper.g0;
  j["h0"] = hyper.h0;
  j["lambda"] = detail::matrix_to_json(state.lambda);
  j["gamma"] = detail::matrix_to_json(state.gamma);
  j["a"] = detail::matrix_to_json(state.a);
  j["b"] = detail::matrix_to_json(state.b);
  j["g"] = detail::vector_to_json(state.g);
  j["h"] = detail::vector_to_json(state.h);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported format version");
  Checkpoint ck;
  ck.seed = j["seed"].get<std::uint64_t>();
  ck.hyper.num_topics = j["K"].get<int>();
  ck.hyper.alpha = detail::vector_from_json(j["alpha"]);
  ck.hyper.eta = detail::vector_from_json(j["eta"]);
  ck.hyper.a0 = j["a0"].get<double>();
  ck.hyper.b0 = j["b0"].get<double>();
  ck.hyper.g0 = j["g0"].get<double>();
  ck.hyper.h0 = j["h0"].get<double>();
  ck.hyper.validate();
  ck.state.tau_fixed_one = j["tau_fixed_one"].get<bool>();
  ck.state.lambda = detail::matrix_from_json(j["lambda"]);
  ck.state.gamma = detail::matrix_from_json(j["gamma"]);
  ck.state.a = detail::matrix_from_json(j["a"]);
  ck.state.b = detail::matrix_from_json(j["b"]);
  ck.state.g = detail::vector_from_json(j["g"]);
  ck.state.h = detail::vector_from_json(j["h"]);
  return ck;
}

}  // namespace lmv
