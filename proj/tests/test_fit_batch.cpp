#include <catch2/catch.hpp>

#include <cmath>

#include "lmv/generator.hpp"
#include "lmv/vb_engine.hpp"
#include "reference_pllda.hpp"

using lmv::BatchOptions;
using lmv::CitationGraph;
using lmv::Corpus;
using lmv::fit_batch;
using lmv::GroundTruth;
using lmv::Hyperparameters;
using lmv::Matrix;
using lmv::Vector;

namespace {

GroundTruth small_truth(int d_total, int k, int v, std::uint64_t seed) {
  GroundTruth truth;
  lmv::CounterRng rng(lmv::CounterRng::derive_key({seed, 0xabcdULL}));
  truth.beta.resize(k, v);
  for (int i = 0; i < k; ++i) truth.beta.row(i) = lmv::detail::dirichlet_draw(rng, v, 0.1).transpose();
  truth.theta.resize(d_total, k);
  for (int d = 0; d < d_total; ++d)
    truth.theta.row(d) = lmv::detail::dirichlet_draw(rng, k, 0.1).transpose();
  truth.tau.resize(d_total);
  for (int d = 0; d < d_total; ++d) truth.tau(d) = rng.beta(1.0, 1.0);
  truth.B = Matrix::Constant(k, k, 0.05);
  for (int i = 0; i < k; ++i) truth.B(i, i) = 0.4;
  truth.words_per_doc = 40;
  truth.num_train = d_total;
  return truth;
}

}  // namespace

TEST_CASE("batch bound trace is non-decreasing") {
  auto truth = small_truth(30, 3, 20, 5);
  auto [corpus, graph] = lmv::sample_dataset(truth, 17);
  Hyperparameters hyper = Hyperparameters::symmetric(3, 20, 1.0 / 3, 0.1);

  for (std::uint64_t seed : {1ULL, 2ULL}) {
    BatchOptions opts;
    opts.seed = seed;
    opts.max_outer = 40;
    auto [state, report] = fit_batch(corpus, graph, hyper, opts);
    REQUIRE(report.bound_trace.size() >= 2);
    for (std::size_t t = 1; t < report.bound_trace.size(); ++t)
      CHECK(report.bound_trace[t] >= report.bound_trace[t - 1] - 1e-10);
    // shape parameters stay positive through every accepted update
    CHECK((state.a.array() > 0).all());
    CHECK((state.b.array() > 0).all());
    CHECK((state.g.array() > 0).all());
    CHECK((state.h.array() > 0).all());
    for (int d = 0; d < state.num_docs(); ++d)
      for (int u = 0; u < state.phi[d].rows(); ++u)
        CHECK(state.phi[d].row(u).sum() == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("batch fit converges on an easy instance") {
  auto truth = small_truth(25, 2, 15, 9);
  auto [corpus, graph] = lmv::sample_dataset(truth, 3);
  Hyperparameters hyper = Hyperparameters::symmetric(2, 15, 0.5, 0.1);
  BatchOptions opts;
  opts.max_outer = 200;
  auto [state, report] = fit_batch(corpus, graph, hyper, opts);
  CHECK(report.converged);
  CHECK(report.iterations < 200);
  CHECK(report.B_hat.rows() == 2);
  CHECK((report.B_hat.array() > 0).all());
  CHECK((report.B_hat.array() < 1).all());
  CHECK((report.tau_hat.array() > 0).all());
  CHECK((report.tau_hat.array() < 1).all());
}

TEST_CASE("tau-pinned fit leaves visibility parameters at the prior") {
  auto truth = small_truth(20, 2, 15, 2);
  auto [corpus, graph] = lmv::sample_dataset(truth, 8);
  Hyperparameters hyper = Hyperparameters::symmetric(2, 15, 0.5, 0.1);
  BatchOptions opts;
  opts.tau_fixed_one = true;
  opts.max_outer = 10;
  auto [state, report] = fit_batch(corpus, graph, hyper, opts);
  CHECK((state.g.array() == hyper.g0).all());
  CHECK((state.h.array() == hyper.h0).all());
  CHECK((report.tau_hat.array() == 1.0).all());
}

TEST_CASE("tau-pinned batch fit tracks the dense reference implementation") {
  auto truth = small_truth(20, 3, 25, 11);
  auto [corpus, graph] = lmv::sample_dataset(truth, 21);
  REQUIRE(graph.num_links() > 0);
  Hyperparameters hyper = Hyperparameters::symmetric(3, 25, 1.0 / 3, 0.1);

  lmv::VariationalState init = lmv::make_initial_state(corpus, hyper, true, 4);
  refimpl::ReferencePllda reference(corpus, graph, hyper, init);

  for (int t = 1; t <= 5; ++t) {
    reference.iterate();
    BatchOptions opts;
    opts.tau_fixed_one = true;
    opts.init = init;
    opts.max_outer = t;
    opts.tol = 0.0;  // never stop early
    auto [state, report] = fit_batch(corpus, graph, hyper, opts);
    REQUIRE(report.iterations == t);
    CHECK((state.lambda - reference.lambda()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((state.gamma - reference.gamma()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((state.a - reference.a()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((state.b - reference.b()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("plain LDA fit is monotone and converges") {
  auto truth = small_truth(30, 3, 20, 6);
  auto [corpus, graph] = lmv::sample_dataset(truth, 13);
  Hyperparameters hyper = Hyperparameters::symmetric(3, 20, 1.0 / 3, 0.1);
  lmv::LdaOptions opts;
  opts.max_iter = 100;
  auto [state, report] = lmv::fit_lda(corpus, hyper, opts);
  CHECK(report.converged);
  for (std::size_t t = 1; t < report.bound_trace.size(); ++t)
    CHECK(report.bound_trace[t] >= report.bound_trace[t - 1] - 1e-10);
  // lambda mass identity
  double mass = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int v = 0; v < 20; ++v) mass += state.lambda(i, v) - hyper.eta(v);
  CHECK(mass == Approx(corpus.total_tokens()).margin(1e-6));
}

TEST_CASE("tau-pinned fit recovers the blockmodel of tau-free data") {
  // data generated with every visibility at one: the pinned variant is the
  // correctly specified model and recovers B at full strength (no halving)
  auto truth = lmv::s7_preset(lmv::S7Scale::desk, 1);
  lmv::GroundTruth pinned;
  const int d_total = 400;
  pinned.beta = truth.beta;
  pinned.theta = truth.theta.topRows(d_total);
  pinned.tau = Vector::Ones(d_total);
  pinned.B = truth.B;
  pinned.words_per_doc = truth.words_per_doc;
  pinned.num_train = d_total;
  auto [corpus, graph] = lmv::sample_dataset(pinned, 7);

  Hyperparameters hyper = Hyperparameters::symmetric(6, 100, 0.05, 0.1);
  BatchOptions opts;
  opts.tau_fixed_one = true;
  opts.restarts = 2;
  auto [state, report] = fit_batch(corpus, graph, hyper, opts);
  auto match = lmv::match_topics(state.lambda, pinned.beta);
  Matrix b_hat = state.blockmodel_mean();
  for (int t = 0; t < 6; ++t)
    CHECK(std::abs(b_hat(match[t], match[t]) - pinned.B(t, t)) <= 0.05);
}

TEST_CASE("fits still converge without the pair warm store") {
  auto truth = small_truth(25, 2, 15, 4);
  auto [corpus, graph] = lmv::sample_dataset(truth, 6);
  Hyperparameters hyper = Hyperparameters::symmetric(2, 15, 0.5, 0.1);
  BatchOptions opts;
  opts.warm_start_pairs = false;
  auto [state, report] = fit_batch(corpus, graph, hyper, opts);
  CHECK(report.converged);
  CHECK((state.a.array() > 0).all());
  CHECK((report.B_hat.array() > 0).all());
}

TEST_CASE("warm-started sweeps settle onto the same pair posteriors") {
  auto truth = small_truth(18, 3, 20, 3);
  auto [corpus, graph] = lmv::sample_dataset(truth, 12);
  Hyperparameters hyper = Hyperparameters::symmetric(3, 20, 1.0 / 3, 0.1);
  lmv::VariationalState state = lmv::make_initial_state(corpus, hyper, false, 9);
  const Matrix elog_theta = lmv::dirichlet_elog_rows(state.gamma);

  auto warm = lmv::make_pair_warm_store(graph, 3);
  auto first = lmv::sweep_pairs(graph, state, elog_theta, {}, 1, &warm);
  REQUIRE(warm.filled);
  // a second sweep at the same state resumes from converged posteriors and
  // reproduces the same sums
  auto second = lmv::sweep_pairs(graph, state, elog_theta, {}, 1, &warm);
  CHECK((first.kappa_row_sum - second.kappa_row_sum).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((first.nu_col_sum - second.nu_col_sum).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((first.link_kv - second.link_kv).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(first.entropy == Approx(second.entropy).margin(1e-9));
}

TEST_CASE("multithreaded pair sweep matches the single-threaded sums") {
  auto truth = small_truth(24, 3, 20, 14);
  auto [corpus, graph] = lmv::sample_dataset(truth, 31);
  Hyperparameters hyper = Hyperparameters::symmetric(3, 20, 1.0 / 3, 0.1);
  lmv::VariationalState state = lmv::make_initial_state(corpus, hyper, false, 2);
  const Matrix elog_theta = lmv::dirichlet_elog_rows(state.gamma);
  auto s1 = lmv::sweep_pairs(graph, state, elog_theta, {}, 1);
  auto s3 = lmv::sweep_pairs(graph, state, elog_theta, {}, 3);
  CHECK(s1.pairs == s3.pairs);
  CHECK((s1.kappa_row_sum - s3.kappa_row_sum).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((s1.nu_col_sum - s3.nu_col_sum).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((s1.link_kv - s3.link_kv).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(s1.entropy == Approx(s3.entropy).margin(1e-9));
}
