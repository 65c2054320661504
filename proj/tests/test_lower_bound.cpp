#include <catch2/catch.hpp>

#include <cmath>

#include "lmv/citation_graph.hpp"
#include "lmv/corpus.hpp"
#include "lmv/vb_engine.hpp"

using lmv::CitationGraph;
using lmv::Corpus;
using lmv::digamma;
using lmv::Hyperparameters;
using lmv::log_gamma;
using lmv::Matrix;
using lmv::VariationalState;
using lmv::Vector;

namespace {

Corpus one_doc_corpus() {
  std::vector<std::vector<lmv::TermCount>> docs{{{0, 1}}};
  return Corpus(std::move(docs), {"w0", "w1"});
}

}  // namespace

TEST_CASE("one document, no pairs: bound matches the closed form") {
  Corpus corpus = one_doc_corpus();
  CitationGraph graph(1, {});
  Hyperparameters hyper = Hyperparameters::symmetric(2, 2, 0.4, 0.3);

  VariationalState state;
  state.lambda = Matrix(2, 2);
  state.lambda << 1.0, 2.0, 2.0, 1.0;
  state.gamma = Matrix(1, 2);
  state.gamma << 1.5, 0.5;
  state.phi.resize(1);
  state.phi[0] = Matrix(1, 2);
  state.phi[0] << 0.3, 0.7;
  state.a = Matrix::Constant(2, 2, hyper.a0);
  state.b = Matrix::Constant(2, 2, hyper.b0);
  state.g = Vector::Constant(1, hyper.g0);
  state.h = Vector::Constant(1, hyper.h0);

  // hand-computed one-document bound: LDA terms only, since the matched
  // Beta(1,1) posteriors contribute zero KL and there are no pairs
  double expected = 0.0;
  for (int k = 0; k < 2; ++k) {
    double row = state.lambda.row(k).sum();
    for (int v = 0; v < 2; ++v) {
      double w = (v == 0) ? state.phi[0](0, k) : 0.0;
      expected += (hyper.eta(v) + w - state.lambda(k, v)) * (digamma(state.lambda(k, v)) - digamma(row));
      expected += log_gamma(state.lambda(k, v));
    }
    expected -= log_gamma(row);
  }
  double gsum = state.gamma.row(0).sum();
  for (int k = 0; k < 2; ++k) {
    expected += (hyper.alpha(k) + state.phi[0](0, k) - state.gamma(0, k)) *
                (digamma(state.gamma(0, k)) - digamma(gsum));
    expected += log_gamma(state.gamma(0, k));
  }
  expected -= log_gamma(gsum);
  expected += log_gamma(hyper.alpha.sum()) - 2 * log_gamma(0.4);
  expected += 2 * (log_gamma(hyper.eta.sum()) - 2 * log_gamma(0.3));
  expected -= 0.3 * std::log(0.3) + 0.7 * std::log(0.7);

  CHECK(lmv::lower_bound(state, corpus, graph, hyper) == Approx(expected).margin(1e-10));
  // identical to the LDA-only bound: prior-matched blockmodel and visibility
  // posteriors contribute nothing
  CHECK(lmv::lda_lower_bound(state, corpus, hyper) == Approx(expected).margin(1e-10));
}

TEST_CASE("stats-based and standalone evaluations agree at a fixed state") {
  std::vector<std::vector<lmv::TermCount>> docs{{{0, 2}}, {{1, 3}}, {{0, 1}, {1, 2}}};
  Corpus corpus(std::move(docs), {"w0", "w1"});
  CitationGraph graph(3, {{0, 1}, {2, 0}});
  Hyperparameters hyper = Hyperparameters::symmetric(2, 2, 0.5, 0.2);
  VariationalState state = lmv::make_initial_state(corpus, hyper, false, 3);

  auto stats = lmv::sweep_pairs(graph, state, lmv::dirichlet_elog_rows(state.gamma), {});
  double from_stats = lmv::lower_bound_from_stats(state, corpus, graph, hyper, stats);
  double standalone = lmv::lower_bound(state, corpus, graph, hyper);
  CHECK(from_stats == Approx(standalone).margin(1e-10));
}

TEST_CASE("re-optimizing pair posteriors never lowers the bound") {
  std::vector<std::vector<lmv::TermCount>> docs{{{0, 2}}, {{1, 1}}, {{0, 1}, {1, 1}}, {{1, 4}}};
  Corpus corpus(std::move(docs), {"w0", "w1"});
  CitationGraph graph(4, {{0, 1}, {2, 3}, {3, 0}});
  Hyperparameters hyper = Hyperparameters::symmetric(2, 2, 0.5, 0.2);

  lmv::BatchOptions opts;
  opts.max_outer = 3;
  opts.lda_init = false;
  opts.seed = 11;
  auto [state, report] = lmv::fit_batch(corpus, graph, hyper, opts);

  // stale kappa/nu from the last sweep vs freshly optimized ones
  auto stats = lmv::sweep_pairs(graph, state, lmv::dirichlet_elog_rows(state.gamma), {});
  double fresh = lmv::lower_bound_from_stats(state, corpus, graph, hyper, stats);
  CHECK(fresh >= report.bound_trace.back() - 1e-9);
}

TEST_CASE("non-finite state is reported with the offending term") {
  Corpus corpus = one_doc_corpus();
  CitationGraph graph(1, {});
  Hyperparameters hyper = Hyperparameters::symmetric(2, 2, 0.4, 0.3);
  VariationalState state = lmv::make_initial_state(corpus, hyper, false, 1);
  state.lambda(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(lmv::lower_bound(state, corpus, graph, hyper), lmv::NumericalError);
  CHECK_THROWS_WITH(lmv::lower_bound(state, corpus, graph, hyper), Catch::Contains("topics"));
}

TEST_CASE("tau-pinned bound drops the visibility terms") {
  std::vector<std::vector<lmv::TermCount>> docs{{{0, 2}}, {{1, 3}}};
  Corpus corpus(std::move(docs), {"w0", "w1"});
  CitationGraph graph(2, {{0, 1}});
  Hyperparameters hyper = Hyperparameters::symmetric(2, 2, 0.5, 0.2);
  VariationalState state = lmv::make_initial_state(corpus, hyper, true, 5);
  state.g = Vector::Constant(2, 42.0);  // must be ignored entirely
  state.h = Vector::Constant(2, 17.0);
  double pinned = lmv::lower_bound(state, corpus, graph, hyper);
  state.g = Vector::Constant(2, 1.0);
  state.h = Vector::Constant(2, 1.0);
  CHECK(lmv::lower_bound(state, corpus, graph, hyper) == Approx(pinned).margin(1e-12));
}
