#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmv/rng.hpp"

namespace lmv {

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

// Directed citation adjacency with an optional publication time per document.
// When times are present, only ordered pairs (d, d') with time(d') <= time(d)
// enter the likelihood; absent links between the others are not data.
class CitationGraph {
 public:
  CitationGraph(int num_docs, std::vector<std::pair<int, int>> edges,
                std::optional<std::vector<std::int64_t>> times = std::nullopt)
      : num_docs_(num_docs), out_links_(num_docs), in_links_(num_docs), times_(std::move(times)) {
    if (num_docs < 1) throw GraphError("graph needs at least one document");
    if (times_ && static_cast<int>(times_->size()) != num_docs)
      throw GraphError("times must cover every document");
    for (auto [d, dp] : edges) {
      if (d < 0 || d >= num_docs || dp < 0 || dp >= num_docs)
        throw GraphError("edge (" + std::to_string(d) + ", " + std::to_string(dp) + ") out of range");
      if (d == dp) throw GraphError("self-loop on document " + std::to_string(d));
      if (times_ && (*times_)[dp] > (*times_)[d])
        throw GraphError("link (" + std::to_string(d) + ", " + std::to_string(dp) +
                         ") cites a later document");
      out_links_[d].push_back(dp);
      in_links_[dp].push_back(d);
    }
    for (int d = 0; d < num_docs; ++d) {
      std::sort(out_links_[d].begin(), out_links_[d].end());
      if (std::adjacent_find(out_links_[d].begin(), out_links_[d].end()) != out_links_[d].end())
        throw GraphError("duplicate edge out of document " + std::to_string(d));
      std::sort(in_links_[d].begin(), in_links_[d].end());
      num_links_ += static_cast<std::int64_t>(out_links_[d].size());
    }
  }

  int num_docs() const { return num_docs_; }
  std::int64_t num_links() const { return num_links_; }
  const std::vector<int>& out_links(int d) const { return out_links_[d]; }
  const std::vector<int>& in_links(int d) const { return in_links_[d]; }
  bool has_times() const { return times_.has_value(); }
  std::int64_t time(int d) const { return (*times_)[d]; }
  const std::optional<std::vector<std::int64_t>>& times() const { return times_; }

  bool has_link(int d, int dp) const {
    const auto& row = out_links_[d];
    return std::binary_search(row.begin(), row.end(), dp);
  }

  // Likelihood mask over ordered pairs.
  bool in_mask(int d, int dp) const {
    if (d == dp) return false;
    if (!times_) return true;
    return (*times_)[dp] <= (*times_)[d];
  }

  std::int64_t count_masked_pairs() const {
    const std::int64_t d = num_docs_;
    if (!times_) return d * (d - 1);
    std::vector<std::int64_t> sorted(*times_);
    std::sort(sorted.begin(), sorted.end());
    std::int64_t total = 0;
    for (int i = 0; i < num_docs_; ++i) {
      auto upper = std::upper_bound(sorted.begin(), sorted.end(), (*times_)[i]);
      total += (upper - sorted.begin()) - 1;  // receivers no later than i, minus i itself
    }
    return total;
  }

  // All observed links satisfy the mask, so the masked in-degree is the
  // plain in-degree.
  int masked_in_degree(int dp) const { return static_cast<int>(in_links_[dp].size()); }

  int masked_count_as_sender(int d) const {
    if (!times_) return num_docs_ - 1;
    int c = 0;
    for (int dp = 0; dp < num_docs_; ++dp) c += (dp != d && in_mask(d, dp));
    return c;
  }

  int masked_count_as_receiver(int dp) const {
    if (!times_) return num_docs_ - 1;
    int c = 0;
    for (int d = 0; d < num_docs_; ++d) c += (d != dp && in_mask(d, dp));
    return c;
  }

 private:
  int num_docs_ = 0;
  std::int64_t num_links_ = 0;
  std::vector<std::vector<int>> out_links_;
  std::vector<std::vector<int>> in_links_;
  std::optional<std::vector<std::int64_t>> times_;
};

// Thin view naming the set of ordered pairs admitted to the likelihood.
class PairUniverse {
 public:
  explicit PairUniverse(const CitationGraph& graph) : graph_(&graph) {}
  bool contains(int d, int dp) const { return graph_->in_mask(d, dp); }
  std::int64_t count() const { return graph_->count_masked_pairs(); }
  const CitationGraph& graph() const { return *graph_; }

 private:
  const CitationGraph* graph_;
};

// BFS over directed edges from source. lengths[source] = 0; unreachable
// documents get kUnreachable. max_depth < 0 means unbounded.
inline std::vector<int> shortest_path_lengths_from(const CitationGraph& graph, int source,
                                                   int max_depth = -1) {
  if (source < 0 || source >= graph.num_docs()) throw GraphError("invalid BFS source");
  std::vector<int> dist(graph.num_docs(), kUnreachable);
  dist[source] = 0;
  std::deque<int> queue{source};
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    if (max_depth >= 0 && dist[u] >= max_depth) continue;
    for (int v : graph.out_links(u)) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

// BFS over reversed edges: lengths[d] = shortest path length from d to target.
inline std::vector<int> shortest_path_lengths_to(const CitationGraph& graph, int target,
                                                 int max_depth = -1) {
  if (target < 0 || target >= graph.num_docs()) throw GraphError("invalid BFS target");
  std::vector<int> dist(graph.num_docs(), kUnreachable);
  dist[target] = 0;
  std::deque<int> queue{target};
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    if (max_depth >= 0 && dist[u] >= max_depth) continue;
    for (int v : graph.in_links(u)) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

// Pair inclusion probability from the shortest path length d -> d'. Linked
// pairs have length 1 and probability one; short paths keep 1/l; everything
// else, including unreachable pairs, sits at the 1/n0 floor.
inline double inclusion_probability(int path_length, int n0) {
  if (n0 < 1) throw std::invalid_argument("inclusion_probability: n0 must be positive");
  if (path_length != kUnreachable && path_length < 1)
    throw std::invalid_argument("inclusion_probability: path length must be positive");
  if (path_length != kUnreachable && path_length < n0) return 1.0 / path_length;
  return 1.0 / n0;
}

struct PairSample {
  int citing = 0;
  int cited = 0;
  double pi = 1.0;
  bool linked = false;
};

// One Bernoulli(pi) trial per masked pair with an endpoint in the minibatch;
// each qualifying ordered pair is visited exactly once. Links are always
// included. Deterministic given the rng stream.
inline std::vector<PairSample> sample_pairs(const CitationGraph& graph, const PairUniverse& mask,
                                            const std::vector<int>& minibatch, int n0,
                                            CounterRng& rng) {
  const int d_total = graph.num_docs();
  std::vector<int> batch(minibatch);
  std::sort(batch.begin(), batch.end());
  batch.erase(std::unique(batch.begin(), batch.end()), batch.end());
  std::vector<char> in_batch(d_total, 0);
  for (int s : batch) {
    if (s < 0 || s >= d_total) throw GraphError("minibatch document out of range");
    in_batch[s] = 1;
  }

  std::vector<PairSample> out;
  const int depth = n0 - 1;  // beyond this, pi is the constant floor
  for (int s : batch) {
    // rows: (s, dp)
    auto fwd = shortest_path_lengths_from(graph, s, depth);
    for (int dp = 0; dp < d_total; ++dp) {
      if (dp == s || !mask.contains(s, dp)) continue;
      bool linked = graph.has_link(s, dp);
      double pi = linked ? 1.0 : inclusion_probability(fwd[dp], n0);
      if (pi >= 1.0 || rng.bernoulli(pi)) out.push_back({s, dp, pi, linked});
    }
    // columns: (d, s) for senders outside the minibatch (pairs with both ends
    // inside were already visited above)
    auto rev = shortest_path_lengths_to(graph, s, depth);
    for (int d = 0; d < d_total; ++d) {
      if (d == s || in_batch[d] || !mask.contains(d, s)) continue;
      bool linked = graph.has_link(d, s);
      double pi = linked ? 1.0 : inclusion_probability(rev[d], n0);
      if (pi >= 1.0 || rng.bernoulli(pi)) out.push_back({d, s, pi, linked});
    }
  }
  return out;
}

inline CitationGraph load_citation_graph(const std::string& edge_path, int num_docs,
                                         const std::string& time_path = "") {
  std::ifstream in(edge_path);
  if (!in) throw GraphError("cannot open edge file: " + edge_path);
  std::vector<std::pair<int, int>> edges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long d, dp;
    if (!(ls >> d >> dp))
      throw GraphError(edge_path + ":" + std::to_string(line_no) + ": expected citing_id cited_id");
    edges.emplace_back(static_cast<int>(d), static_cast<int>(dp));
  }

  std::optional<std::vector<std::int64_t>> times;
  if (!time_path.empty()) {
    std::ifstream tin(time_path);
    if (!tin) throw GraphError("cannot open time file: " + time_path);
    std::vector<std::int64_t> t(num_docs);
    std::vector<char> seen(num_docs, 0);
    int tline = 0;
    while (std::getline(tin, line)) {
      ++tline;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream ls(line);
      long long d, period;
      if (!(ls >> d >> period))
        throw GraphError(time_path + ":" + std::to_string(tline) + ": expected doc_id period");
      if (d < 0 || d >= num_docs)
        throw GraphError(time_path + ":" + std::to_string(tline) + ": doc id out of range");
      t[d] = period;
      seen[d] = 1;
    }
    for (int d = 0; d < num_docs; ++d)
      if (!seen[d]) throw GraphError(time_path + ": missing time for document " + std::to_string(d));
    times = std::move(t);
  }
  return CitationGraph(num_docs, std::move(edges), std::move(times));
}

inline void save_edges_tsv(const CitationGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw GraphError("cannot write edge file: " + path);
  for (int d = 0; d < graph.num_docs(); ++d)
    for (int dp : graph.out_links(d)) out << d << '\t' << dp << '\n';
}

// Graph induced on the given documents; new ids follow the given order.
inline CitationGraph induced_subgraph(const CitationGraph& graph, const std::vector<int>& docs) {
  std::vector<int> new_id(graph.num_docs(), -1);
  for (std::size_t i = 0; i < docs.size(); ++i) new_id[docs[i]] = static_cast<int>(i);
  std::vector<std::pair<int, int>> edges;
  for (int d : docs)
    for (int dp : graph.out_links(d))
      if (new_id[dp] >= 0) edges.emplace_back(new_id[d], new_id[dp]);
  std::optional<std::vector<std::int64_t>> times;
  if (graph.has_times()) {
    std::vector<std::int64_t> t;
    t.reserve(docs.size());
    for (int d : docs) t.push_back(graph.time(d));
    times = std::move(t);
  }
  return CitationGraph(static_cast<int>(docs.size()), std::move(edges), std::move(times));
}

}  // namespace lmv
