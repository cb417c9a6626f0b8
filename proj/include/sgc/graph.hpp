#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <utility>
#include <vector>

#include "sgc/core/types.hpp"

namespace sgc {

enum class DistanceMetric { euclidean, cosine };

// Directed neighbor graph: edge (i, j) means j is one of i's k nearest
// nodes. Neighbors are stored nearest-first per node.
struct KnnGraph {
  int num_nodes = 0;
  int k = 0;
  std::vector<std::pair<int, int>> edges;

  std::vector<int> out_degree() const {
    std::vector<int> deg(num_nodes, 0);
    for (const auto& [i, j] : edges) ++deg[i];
    return deg;
  }
};

// Full score matrix: euclidean distances or cosine similarities. Entries are
// accumulated left-to-right with plain loops so the values are reproducible
// and shared exactly with any reference that does the same.
template <typename S>
Mat<S> pairwise_scores(const Mat<S>& features, DistanceMetric metric) {
  const Index n = features.rows(), d = features.cols();
  check(n >= 1, "pairwise_scores: need at least one row");
  Mat<S> out(n, n);
  if (metric == DistanceMetric::euclidean) {
    for (Index i = 0; i < n; ++i) {
      out(i, i) = S(0);
      for (Index j = i + 1; j < n; ++j) {
        S acc = S(0);
        for (Index c = 0; c < d; ++c) {
          const S diff = features(i, c) - features(j, c);
          acc += diff * diff;
        }
        const S dist = std::sqrt(acc);
        out(i, j) = dist;
        out(j, i) = dist;
      }
    }
    return out;
  }
  // cosine
  std::vector<S> norm(std::size_t(n), S(0));
  for (Index i = 0; i < n; ++i) {
    S acc = S(0);
    for (Index c = 0; c < d; ++c) acc += features(i, c) * features(i, c);
    norm[std::size_t(i)] = std::sqrt(acc);
  }
  for (Index i = 0; i < n; ++i) {
    out(i, i) = S(1);
    for (Index j = i + 1; j < n; ++j) {
      S sim;
      if (norm[std::size_t(i)] == S(0) || norm[std::size_t(j)] == S(0)) {
        sim = S(-1);  // degenerate rows rank last
      } else {
        S dot = S(0);
        for (Index c = 0; c < d; ++c) dot += features(i, c) * features(j, c);
        sim = dot / (norm[std::size_t(i)] * norm[std::size_t(j)]);
      }
      out(i, j) = sim;
      out(j, i) = sim;
    }
  }
  return out;
}

// k nearest neighbors per node under the metric; ties broken by lower node
// index. Self loops are never candidates.
template <typename S>
KnnGraph knn_graph(const Mat<S>& features, int k, DistanceMetric metric) {
  const int n = int(features.rows());
  if (k < 1 || k >= n)
    throw std::invalid_argument("knn_graph: k must satisfy 1 <= k <= N-1 (k=" +
                                std::to_string(k) + ", N=" + std::to_string(n) + ")");
  const Mat<S> scores = pairwise_scores(features, metric);
  const bool ascending = metric == DistanceMetric::euclidean;

  KnnGraph g;
  g.num_nodes = n;
  g.k = k;
  g.edges.reserve(std::size_t(n) * std::size_t(k));
  std::vector<std::pair<S, int>> cand;
  cand.reserve(std::size_t(n) - 1);
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) cand.push_back({scores(i, j), j});
    std::sort(cand.begin(), cand.end(), [ascending](const auto& a, const auto& b) {
      if (a.first != b.first) return ascending ? a.first < b.first : a.first > b.first;
      return a.second < b.second;
    });
    for (int r = 0; r < k; ++r) g.edges.push_back({i, cand[std::size_t(r)].second});
  }
  return g;
}

// Adds the reverse of every edge (deduplicated). The result is no longer a
// fixed-out-degree graph; aggregation handles per-node degrees.
inline KnnGraph symmetrized(const KnnGraph& g) {
  std::set<std::pair<int, int>> seen(g.edges.begin(), g.edges.end());
  KnnGraph out = g;
  for (const auto& [i, j] : g.edges)
    if (seen.insert({j, i}).second) out.edges.push_back({j, i});
  return out;
}

// Debug export: one "i j" line per edge.
inline void export_edge_list(const KnnGraph& g, std::ostream& os) {
  for (const auto& [i, j] : g.edges) os << i << ' ' << j << '\n';
}

}  // namespace sgc
