#include <catch2/catch.hpp>

#include "lmv/generator.hpp"
#include "lmv/model.hpp"
#include "test_util.hpp"

using lmv::Hyperparameters;
using lmv::VariationalState;

TEST_CASE("checkpoint round trips every parameter exactly") {
  auto truth = lmv::s7_preset(lmv::S7Scale::desk, 6);
  auto [corpus, graph] = lmv::sample_dataset(truth, 2);
  Hyperparameters hyper = Hyperparameters::symmetric(6, 100, 1.0 / 6, 0.1);
  VariationalState state = lmv::make_initial_state(corpus, hyper, false, 77);
  state.gamma(3, 2) = 1.2345678901234567e-3;  // exercise full double precision
  state.a(1, 4) = 9.87654321098765e100;

  testutil::TempDir tmp("ckpt");
  lmv::save_checkpoint(tmp.path("ck.json"), state, hyper, 424242);
  auto ck = lmv::load_checkpoint(tmp.path("ck.json"));

  CHECK(ck.seed == 424242);
  CHECK(ck.hyper.num_topics == 6);
  CHECK((ck.hyper.alpha - hyper.alpha).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ck.hyper.eta - hyper.eta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ck.hyper.a0 == hyper.a0);
  CHECK(ck.state.tau_fixed_one == state.tau_fixed_one);
  CHECK((ck.state.lambda - state.lambda).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ck.state.gamma - state.gamma).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ck.state.a - state.a).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ck.state.b - state.b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ck.state.g - state.g).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ck.state.h - state.h).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint rejects unknown versions and missing files") {
  testutil::TempDir tmp("ckpt");
  CHECK_THROWS(lmv::load_checkpoint(tmp.path("missing.json")));
  testutil::write_file(tmp.path("bad.json"), "{\"format_version\": 99}");
  CHECK_THROWS_WITH(lmv::load_checkpoint(tmp.path("bad.json")), Catch::Contains("version"));
}
