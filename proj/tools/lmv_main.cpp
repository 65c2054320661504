// Command-line front end: fit the model (batch or subsampled), simulate
// datasets from the generative process, evaluate predictive ranks, build
// recommendation lists and export topic term tables.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lmv/citation_graph.hpp"
#include "lmv/corpus.hpp"
#include "lmv/generator.hpp"
#include "lmv/inference_eval.hpp"
#include "lmv/model.hpp"
#include "lmv/svi_engine.hpp"
#include "lmv/vb_engine.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNoConvergence = 4;

struct DataArgs {
  std::string corpus_path;
  std::string format = "ldac";
  std::string vocab_path;
  std::string links_path;
  std::string times_path;
};

struct ModelArgs {
  int k = 6;
  double eta = 0.5;
  double alpha = -1.0;  // < 0 means 1/K
  double a0 = 1.0, b0 = 1.0, g0 = 1.0, h0 = 1.0;
  bool tau_fixed_one = false;
};

struct AlgoArgs {
  std::string algo = "batch";
  int minibatch = 200;
  int n0 = 100;
  double epsilon = 0.05;
  double tol = 1e-5;
  int max_outer = 200;
  int max_sweeps = 200;
  double a1 = 1.0, a2 = 5.0, v = 0.501;
  std::uint64_t seed = 1;
  int restarts = 1;
  int threads = 1;
  bool no_lda_init = false;
  bool no_warm_pairs = false;
  std::string init_checkpoint;
};

void add_data_options(CLI::App* cmd, DataArgs& d, bool need_links) {
  cmd->add_option("--corpus", d.corpus_path, "document-term counts file")->required();
  cmd->add_option("--format", d.format, "corpus format: ldac or tsv")
      ->check(CLI::IsMember({"ldac", "tsv"}));
  cmd->add_option("--vocab", d.vocab_path, "vocabulary file, one term per line");
  auto* links = cmd->add_option("--links", d.links_path, "edge list: citing_id cited_id");
  if (need_links) links->required();
  cmd->add_option("--times", d.times_path, "publication times: doc_id period");
}

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--k", m.k, "number of topics")->check(CLI::PositiveNumber);
  cmd->add_option("--eta", m.eta, "symmetric topic Dirichlet prior");
  cmd->add_option("--alpha", m.alpha, "symmetric membership Dirichlet prior (default 1/K)");
  cmd->add_option("--a0", m.a0, "blockmodel Beta prior shape");
  cmd->add_option("--b0", m.b0, "blockmodel Beta prior shape");
  cmd->add_option("--g0", m.g0, "visibility Beta prior shape");
  cmd->add_option("--h0", m.h0, "visibility Beta prior shape");
  cmd->add_flag("--tau-fixed-one", m.tau_fixed_one,
                "pin every visibility at one (pairwise link-LDA variant)");
}

void add_algo_options(CLI::App* cmd, AlgoArgs& a) {
  cmd->set_config("--config", "", "TOML-style key=value file; flags take precedence");
  cmd->add_option("--algo", a.algo, "batch or svi")->check(CLI::IsMember({"batch", "svi"}));
  cmd->add_option("--minibatch", a.minibatch, "svi minibatch size");
  cmd->add_option("--n0", a.n0, "pair sampling floor parameter");
  cmd->add_option("--epsilon", a.epsilon, "svi stopping tolerance on diag(B)");
  cmd->add_option("--tol", a.tol, "batch stopping tolerance on the bound");
  cmd->add_option("--max-outer", a.max_outer, "batch iteration cap");
  cmd->add_option("--max-sweeps", a.max_sweeps, "svi sweep cap");
  cmd->add_option("--a1", a.a1, "step schedule numerator");
  cmd->add_option("--a2", a.a2, "step schedule offset");
  cmd->add_option("--v", a.v, "step schedule exponent in (0.5, 1]");
  cmd->add_option("--seed", a.seed, "rng seed");
  cmd->add_option("--restarts", a.restarts, "independent inits, keep the best bound");
  cmd->add_option("--threads", a.threads, "worker pool cap (1 = reproducibility reference)");
  cmd->add_flag("--no-lda-init", a.no_lda_init, "skip the LDA-based initialization");
  cmd->add_flag("--no-warm-pairs", a.no_warm_pairs,
                "batch: do not store pair posteriors across iterations (saves memory, "
                "loses the strict bound monotonicity guarantee)");
  cmd->add_option("--init-checkpoint", a.init_checkpoint, "resume from a checkpoint file");
}

lmv::Corpus load_corpus_args(const DataArgs& d) {
  auto format = d.format == "tsv" ? lmv::CorpusFormat::tsv : lmv::CorpusFormat::ldac;
  if (format == lmv::CorpusFormat::tsv && d.vocab_path.empty())
    throw CLI::ValidationError("--vocab", "tsv corpus format requires a vocabulary file");
  return lmv::load_corpus(d.corpus_path, format, d.vocab_path);
}

lmv::Hyperparameters make_hyper(const ModelArgs& m, int vocab_size) {
  const double alpha = m.alpha > 0 ? m.alpha : 1.0 / m.k;
  return lmv::Hyperparameters::symmetric(m.k, vocab_size, alpha, m.eta, m.a0, m.b0, m.g0, m.h0);
}

void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << header << '\n';
  char buf[64];
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
}

nlohmann::json report_to_json(const lmv::FitReport& report, const std::string& algo, int k) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["algo"] = algo;
  j["K"] = k;
  j["converged"] = report.converged;
  j["iterations"] = report.iterations;
  j["bound_trace"] = report.bound_trace;
  j["diag_rel_trace"] = report.diag_rel_trace;
  j["pairs_sampled"] = report.pairs_sampled;
  j["B_hat"] = lmv::detail::matrix_to_json(report.B_hat);
  j["tau_hat"] = lmv::detail::vector_to_json(report.tau_hat);
  return j;
}

// ---------------------------------------------------------------- fit

int cmd_fit(const DataArgs& data, const ModelArgs& model, const AlgoArgs& algo,
            const std::string& out_dir) {
  lmv::Corpus corpus = load_corpus_args(data);
  lmv::CitationGraph graph =
      lmv::load_citation_graph(data.links_path, corpus.num_docs(), data.times_path);
  lmv::Hyperparameters hyper = make_hyper(model, corpus.vocab_size());

  std::optional<lmv::VariationalState> init;
  if (!algo.init_checkpoint.empty()) init = lmv::load_checkpoint(algo.init_checkpoint).state;

  ensure_dir(out_dir);
  lmv::VariationalState state;
  lmv::FitReport report;
  if (algo.algo == "svi") {
    lmv::SviOptions opts;
    opts.minibatch_size = std::min(algo.minibatch, corpus.num_docs());
    opts.n0 = algo.n0;
    opts.epsilon = algo.epsilon;
    opts.schedule.a1 = algo.a1;
    opts.schedule.a2 = algo.a2;
    opts.schedule.exponent = algo.v;
    opts.max_sweeps = algo.max_sweeps;
    opts.tau_fixed_one = model.tau_fixed_one;
    opts.seed = algo.seed;
    opts.restarts = algo.restarts;
    opts.threads = algo.threads;
    opts.lda_init = !algo.no_lda_init;
    opts.init = init;
    // rolling per-sweep checkpoint for long runs
    opts.sweep_callback = [&](const lmv::VariationalState& s, int) {
      lmv::save_checkpoint(out_dir + "/checkpoint_last_sweep.json", s, hyper, algo.seed);
    };
    std::tie(state, report) = lmv::fit_svi(corpus, graph, hyper, opts);
    std::vector<std::vector<double>> rows;
    for (std::size_t s = 0; s < report.diag_rel_trace.size(); ++s)
      rows.push_back({static_cast<double>(s), report.diag_rel_trace[s],
                      static_cast<double>(report.pairs_sampled[s]), report.wall_clock[s]});
    write_csv(out_dir + "/diag_trace.csv", "sweep,diag_rel_change,pairs_sampled,wall_clock_s",
              rows);
  } else {
    lmv::BatchOptions opts;
    opts.tau_fixed_one = model.tau_fixed_one;
    opts.tol = algo.tol;
    opts.max_outer = algo.max_outer;
    opts.seed = algo.seed;
    opts.restarts = algo.restarts;
    opts.threads = algo.threads;
    opts.lda_init = !algo.no_lda_init;
    opts.warm_start_pairs = !algo.no_warm_pairs;
    opts.init = init;
    std::tie(state, report) = lmv::fit_batch(corpus, graph, hyper, opts);
    std::vector<std::vector<double>> rows;
    for (std::size_t t = 0; t < report.bound_trace.size(); ++t)
      rows.push_back({static_cast<double>(t + 1), report.bound_trace[t], report.wall_clock[t]});
    write_csv(out_dir + "/bound_trace.csv", "iteration,lower_bound,wall_clock_s", rows);
  }

  lmv::save_checkpoint(out_dir + "/checkpoint.json", state, hyper, algo.seed);
  std::ofstream rep(out_dir + "/report.json");
  rep << report_to_json(report, algo.algo, hyper.num_topics).dump() << '\n';
  std::fprintf(stdout, "fit: %s, %d iterations, converged=%s\n", algo.algo.c_str(),
               report.iterations, report.converged ? "true" : "false");
  return report.converged ? kExitOk : kExitNoConvergence;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const std::string& preset, const std::string& scale, std::uint64_t truth_seed,
                 std::uint64_t data_seed, const std::string& truth_file,
                 const std::string& out_dir) {
  lmv::GroundTruth truth;
  if (!truth_file.empty()) {
    truth = lmv::load_ground_truth(truth_file);
  } else if (preset == "s7") {
    truth = lmv::s7_preset(scale == "paper" ? lmv::S7Scale::paper : lmv::S7Scale::desk,
                           truth_seed);
  } else {
    throw CLI::ValidationError("--preset", "unknown preset: " + preset);
  }
  auto [corpus, graph] = lmv::sample_dataset(truth, data_seed);
  ensure_dir(out_dir);

  lmv::save_corpus_ldac(corpus, out_dir + "/corpus.ldac");
  lmv::save_vocabulary(corpus.vocab(), out_dir + "/vocab.txt");
  lmv::save_edges_tsv(graph, out_dir + "/links.tsv");
  lmv::save_ground_truth(out_dir + "/truth.json", truth);

  // train/test split: the leading num_train documents train the model, the
  // rest are held out with their links into the training block
  std::vector<int> train_ids(truth.num_train);
  std::iota(train_ids.begin(), train_ids.end(), 0);
  lmv::Corpus train = lmv::subcorpus(corpus, train_ids);
  lmv::CitationGraph train_graph = lmv::induced_subgraph(graph, train_ids);
  lmv::save_corpus_ldac(train, out_dir + "/train.ldac");
  lmv::save_edges_tsv(train_graph, out_dir + "/train_links.tsv");

  std::vector<int> test_ids(truth.num_docs() - truth.num_train);
  std::iota(test_ids.begin(), test_ids.end(), truth.num_train);
  lmv::Corpus test = lmv::subcorpus(corpus, test_ids);
  lmv::save_corpus_ldac(test, out_dir + "/test.ldac");
  std::ofstream tl(out_dir + "/test_links.tsv");
  for (std::size_t t = 0; t < test_ids.size(); ++t)
    for (int cited : graph.out_links(test_ids[t]))
      if (cited < truth.num_train) tl << t << '\t' << cited << '\n';

  nlohmann::json split;
  split["num_docs"] = truth.num_docs();
  split["num_train"] = truth.num_train;
  std::ofstream sp(out_dir + "/split.json");
  sp << split.dump() << '\n';
  std::fprintf(stdout, "simulate: %d documents, %lld links\n", corpus.num_docs(),
               static_cast<long long>(graph.num_links()));
  return kExitOk;
}

// ---------------------------------------------------------------- eval

std::vector<std::vector<int>> load_test_links(const std::string& path, int num_test,
                                              int num_train) {
  std::ifstream in(path);
  if (!in) throw lmv::GraphError("cannot open test link file: " + path);
  std::vector<std::vector<int>> cited(num_test);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long t, d;
    if (!(ls >> t >> d))
      throw lmv::GraphError(path + ":" + std::to_string(line_no) + ": expected test_id train_id");
    if (t < 0 || t >= num_test || d < 0 || d >= num_train)
      throw lmv::GraphError(path + ":" + std::to_string(line_no) + ": id out of range");
    cited[static_cast<int>(t)].push_back(static_cast<int>(d));
  }
  return cited;
}

struct RankOutcome {
  std::vector<std::vector<double>> rows;  // test_doc, cited_doc, rank, score
  double mean_rank = 0.0;
  int used = 0;
};

RankOutcome rank_test_docs(const lmv::Corpus& test, const std::vector<std::vector<int>>& cited,
                           const lmv::VariationalState& state, const lmv::Hyperparameters& hyper) {
  RankOutcome out;
  double total = 0.0;
  for (int t = 0; t < test.num_docs(); ++t) {
    if (cited[t].empty()) continue;
    auto heldout = lmv::infer_heldout(test.doc(t), state.lambda, hyper.alpha);
    lmv::Vector scores = lmv::score_against_training(heldout, state);
    auto ranks = lmv::average_ranks(scores);
    double doc_rank = 0.0;
    for (int d : cited[t]) {
      out.rows.push_back({static_cast<double>(t), static_cast<double>(d), ranks[d], scores(d)});
      doc_rank += ranks[d];
    }
    total += doc_rank / cited[t].size();
    ++out.used;
  }
  out.mean_rank = out.used ? total / out.used : 0.0;
  return out;
}

int cmd_eval(const std::string& checkpoint_path, const DataArgs& test_data,
             const std::string& test_links_path, const std::string& out_dir) {
  auto ck = lmv::load_checkpoint(checkpoint_path);
  lmv::Corpus test = load_corpus_args(test_data);
  if (test.vocab_size() > ck.state.vocab_size())
    throw lmv::CorpusError("test corpus vocabulary exceeds the fitted vocabulary");
  auto cited = load_test_links(test_links_path, test.num_docs(), ck.state.num_docs());

  RankOutcome outcome = rank_test_docs(test, cited, ck.state, ck.hyper);
  ensure_dir(out_dir);
  write_csv(out_dir + "/ranks.csv", "test_doc_id,cited_doc_id,rank,score", outcome.rows);
  const double baseline = (ck.state.num_docs() + 1) / 2.0;
  write_csv(out_dir + "/rank_summary.csv", "n_test_used,n_train,mean_rank,baseline",
            {{static_cast<double>(outcome.used), static_cast<double>(ck.state.num_docs()),
              outcome.mean_rank, baseline}});
  std::fprintf(stdout, "eval: %d test documents, mean predictive rank %.4f (baseline %.4f)\n",
               outcome.used, outcome.mean_rank, baseline);
  return kExitOk;
}

int cmd_eval_folds(const DataArgs& data, const ModelArgs& model, const AlgoArgs& algo, int folds,
                   const std::string& out_dir) {
  lmv::Corpus corpus = load_corpus_args(data);
  lmv::CitationGraph graph =
      lmv::load_citation_graph(data.links_path, corpus.num_docs(), data.times_path);
  lmv::Hyperparameters hyper = make_hyper(model, corpus.vocab_size());
  auto splits = lmv::split_folds(corpus, folds, algo.seed);

  ensure_dir(out_dir);
  std::vector<std::vector<double>> all_rows, summary;
  bool all_converged = true;
  for (int f = 0; f < folds; ++f) {
    const auto& split = splits[f];
    lmv::Corpus train = lmv::subcorpus(corpus, split.train);
    lmv::CitationGraph train_graph = lmv::induced_subgraph(graph, split.train);

    lmv::VariationalState state;
    lmv::FitReport report;
    if (algo.algo == "svi") {
      lmv::SviOptions opts;
      opts.minibatch_size = std::min(algo.minibatch, train.num_docs());
      opts.n0 = algo.n0;
      opts.epsilon = algo.epsilon;
      opts.schedule.a1 = algo.a1;
      opts.schedule.a2 = algo.a2;
      opts.schedule.exponent = algo.v;
      opts.max_sweeps = algo.max_sweeps;
      opts.tau_fixed_one = model.tau_fixed_one;
      opts.seed = algo.seed + f;
      opts.restarts = algo.restarts;
      opts.threads = algo.threads;
      std::tie(state, report) = lmv::fit_svi(train, train_graph, hyper, opts);
    } else {
      lmv::BatchOptions opts;
      opts.tau_fixed_one = model.tau_fixed_one;
      opts.tol = algo.tol;
      opts.max_outer = algo.max_outer;
      opts.seed = algo.seed + f;
      opts.restarts = algo.restarts;
      opts.threads = algo.threads;
      opts.warm_start_pairs = !algo.no_warm_pairs;
      std::tie(state, report) = lmv::fit_batch(train, train_graph, hyper, opts);
    }
    all_converged &= report.converged;

    // map original ids into the fold's training index space
    std::vector<int> train_pos(corpus.num_docs(), -1);
    for (std::size_t i = 0; i < split.train.size(); ++i) train_pos[split.train[i]] = static_cast<int>(i);
    lmv::Corpus test = lmv::subcorpus(corpus, split.test);
    std::vector<std::vector<int>> cited(test.num_docs());
    for (std::size_t t = 0; t < split.test.size(); ++t)
      for (int dp : graph.out_links(split.test[t]))
        if (train_pos[dp] >= 0) cited[t].push_back(train_pos[dp]);

    RankOutcome outcome = rank_test_docs(test, cited, state, hyper);
    for (auto row : outcome.rows) {
      row.insert(row.begin(), static_cast<double>(f));
      all_rows.push_back(std::move(row));
    }
    const double baseline = (train.num_docs() + 1) / 2.0;
    summary.push_back({static_cast<double>(f), static_cast<double>(outcome.used),
                       static_cast<double>(train.num_docs()), outcome.mean_rank, baseline});
    std::fprintf(stdout, "fold %d: mean predictive rank %.4f over %d test docs (baseline %.4f)\n",
                 f, outcome.mean_rank, outcome.used, baseline);
  }
  write_csv(out_dir + "/ranks.csv", "fold,test_doc_id,cited_doc_id,rank,score", all_rows);
  write_csv(out_dir + "/rank_summary.csv", "fold,n_test_used,n_train,mean_rank,baseline", summary);
  return all_converged ? kExitOk : kExitNoConvergence;
}

// ---------------------------------------------------------------- recommend

int cmd_recommend(const std::string& checkpoint_path, const DataArgs& train_data,
                  const std::string& query_path, int top_n, const std::string& titles_path,
                  const std::string& out_dir) {
  auto ck = lmv::load_checkpoint(checkpoint_path);
  lmv::Corpus train = load_corpus_args(train_data);
  if (train.num_docs() != ck.state.num_docs())
    throw lmv::CorpusError("training corpus does not match the checkpoint document count");
  if (train.vocab_size() != ck.state.vocab_size())
    throw lmv::CorpusError("training vocabulary does not match the checkpoint vocabulary size");

  std::ifstream qf(query_path);
  if (!qf) throw lmv::CorpusError("cannot open query file: " + query_path);
  std::stringstream buffer;
  buffer << qf.rdbuf();
  auto [words, oov] = lmv::words_from_text(buffer.str(), train);
  if (words.empty()) throw lmv::CorpusError("query has no in-vocabulary tokens");
  if (oov > 0) std::fprintf(stderr, "warning: dropped %d out-of-vocabulary tokens\n", oov);

  auto heldout = lmv::infer_heldout(words, ck.state.lambda, ck.hyper.alpha);
  auto recs = lmv::recommend(heldout, ck.state, top_n);

  std::optional<lmv::CitationGraph> graph;
  if (!train_data.links_path.empty())
    graph = lmv::load_citation_graph(train_data.links_path, train.num_docs(), train_data.times_path);
  std::vector<std::string> titles(train.num_docs());
  if (!titles_path.empty()) {
    std::ifstream tf(titles_path);
    if (!tf) throw lmv::CorpusError("cannot open titles file: " + titles_path);
    std::string line;
    while (std::getline(tf, line)) {
      auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      int id = std::stoi(line.substr(0, tab));
      if (id >= 0 && id < train.num_docs()) titles[id] = line.substr(tab + 1);
    }
  }

  nlohmann::json j;
  j["query_tokens_used"] = static_cast<int>(words.size());
  j["oov_dropped"] = oov;
  nlohmann::json items = nlohmann::json::array();
  std::fprintf(stdout, "%-5s %-10s %-8s %-8s %s\n", "rank", "doc_id", "score", "tau",
               "citations/title");
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const auto& rec = recs[r];
    nlohmann::json item;
    item["doc_id"] = rec.doc_id;
    item["score"] = rec.score;
    item["tau"] = rec.tau;
    item["proportions"] = lmv::detail::vector_to_json(rec.proportions);
    nlohmann::json meta;
    if (graph) meta["citations"] = static_cast<int>(graph->in_links(rec.doc_id).size());
    if (graph && graph->has_times()) meta["time"] = graph->time(rec.doc_id);
    if (!titles[rec.doc_id].empty()) meta["title"] = titles[rec.doc_id];
    item["metadata"] = meta;
    items.push_back(std::move(item));
    std::fprintf(stdout, "%-5zu %-10d %-8.4f %-8.4f %d %s\n", r + 1, rec.doc_id, rec.score,
                 rec.tau, graph ? static_cast<int>(graph->in_links(rec.doc_id).size()) : 0,
                 titles[rec.doc_id].c_str());
  }
  j["items"] = std::move(items);
  ensure_dir(out_dir);
  std::ofstream out(out_dir + "/recommendations.json");
  out << j.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- terms

int cmd_terms(const std::string& checkpoint_path, const std::string& vocab_path, int top_m,
              const std::string& out_dir) {
  auto ck = lmv::load_checkpoint(checkpoint_path);
  std::vector<std::string> vocab = lmv::load_vocabulary(vocab_path);
  if (static_cast<int>(vocab.size()) != ck.state.vocab_size())
    throw lmv::CorpusError("vocabulary size does not match the checkpoint");

  lmv::Matrix score = lmv::term_score(ck.state.lambda);
  ensure_dir(out_dir);
  std::ofstream out(out_dir + "/terms.csv");
  out << "topic,rank,term,score\n";
  char buf[64];
  for (int k = 0; k < score.rows(); ++k) {
    std::vector<int> idx(score.cols());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int i, int j) { return score(k, i) > score(k, j); });
    std::fprintf(stdout, "topic %d:", k + 1);
    for (int r = 0; r < top_m && r < static_cast<int>(idx.size()); ++r) {
      std::snprintf(buf, sizeof(buf), "%.17g", score(k, idx[r]));
      out << (k + 1) << ',' << (r + 1) << ',' << vocab[idx[r]] << ',' << buf << '\n';
      std::fprintf(stdout, " %s", vocab[idx[r]].c_str());
    }
    std::fprintf(stdout, "\n");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint topic and citation model with per-article visibility"};
  app.require_subcommand(1);

  DataArgs data;
  ModelArgs model;
  AlgoArgs algo;
  std::string out_dir = "out";

  auto* fit = app.add_subcommand("fit", "fit the model on a corpus and citation graph");
  add_data_options(fit, data, true);
  add_model_options(fit, model);
  add_algo_options(fit, algo);
  fit->add_option("--out", out_dir, "output directory");

  std::string preset = "s7", scale = "desk", truth_file;
  std::uint64_t truth_seed = 1, data_seed = 1;
  auto* simulate = app.add_subcommand("simulate", "sample a synthetic corpus and graph");
  simulate->add_option("--preset", preset, "generator preset (s7)");
  simulate->add_option("--scale", scale, "preset scale")->check(CLI::IsMember({"desk", "paper"}));
  simulate->add_option("--truth-seed", truth_seed, "seed for topics/memberships/visibilities");
  simulate->add_option("--seed", data_seed, "seed for words and links");
  simulate->add_option("--truth-file", truth_file, "sample from an existing ground truth json");
  simulate->add_option("--out", out_dir, "output directory");

  std::string checkpoint_path, test_links_path;
  int folds = 0;
  auto* eval = app.add_subcommand("eval", "predictive-rank evaluation");
  eval->add_option("--checkpoint", checkpoint_path, "fitted checkpoint (checkpoint mode)");
  eval->add_option("--test-links", test_links_path, "test-to-train links (checkpoint mode)");
  eval->add_option("--folds", folds, "fold count (cross-validation mode)");
  add_data_options(eval, data, false);
  add_model_options(eval, model);
  add_algo_options(eval, algo);
  eval->add_option("--out", out_dir, "output directory");

  std::string query_path, titles_path;
  int top_n = 15;
  auto* recommend = app.add_subcommand("recommend", "rank articles for a text query");
  recommend->add_option("--checkpoint", checkpoint_path, "fitted checkpoint")->required();
  recommend->add_option("--query", query_path, "query text file")->required();
  recommend->add_option("--top", top_n, "list length");
  recommend->add_option("--titles", titles_path, "optional titles: doc_id<TAB>title");
  add_data_options(recommend, data, false);
  recommend->add_option("--out", out_dir, "output directory");

  std::string vocab_path;
  int top_m = 7;
  auto* terms = app.add_subcommand("terms", "top terms per topic by term score");
  terms->add_option("--checkpoint", checkpoint_path, "fitted checkpoint")->required();
  terms->add_option("--vocab", vocab_path, "vocabulary file")->required();
  terms->add_option("--top", top_m, "terms per topic");
  terms->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (fit->parsed()) return cmd_fit(data, model, algo, out_dir);
    if (simulate->parsed()) return cmd_simulate(preset, scale, truth_seed, data_seed, truth_file, out_dir);
    if (eval->parsed()) {
      if (folds > 0) {
        if (data.links_path.empty())
          throw CLI::ValidationError("--links", "cross-validation mode requires --links");
        return cmd_eval_folds(data, model, algo, folds, out_dir);
      }
      if (checkpoint_path.empty() || test_links_path.empty())
        throw CLI::ValidationError("--checkpoint",
                                   "checkpoint mode requires --checkpoint and --test-links");
      return cmd_eval(checkpoint_path, data, test_links_path, out_dir);
    }
    if (recommend->parsed())
      return cmd_recommend(checkpoint_path, data, query_path, top_n, titles_path, out_dir);
    if (terms->parsed()) return cmd_terms(checkpoint_path, vocab_path, top_m, out_dir);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const lmv::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNoConvergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  }
  return kExitOk;
}
