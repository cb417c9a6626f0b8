#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/core/tape.hpp"
#include "sgc/core/types.hpp"
#include "sgc/graph.hpp"

namespace sgc {

enum class GnnLayerKind { gcn, sage, gin };
enum class GnnActivation { relu, identity };
enum class PoolingKind { global_mean, topk_score };

template <typename S>
struct GnnLayer {
  GnnLayerKind kind = GnnLayerKind::gcn;
  Mat<S> weight;  // (in x out); sage uses (2*in x out) for [self || message]
  Mat<S> bias;    // (1 x out)
};

template <typename S>
struct GnnStack {
  std::vector<GnnLayer<S>> layers;
  GnnActivation activation = GnnActivation::relu;
  PoolingKind pooling = PoolingKind::global_mean;
  Mat<S> score_weights;  // (out x 1), only for topk_score
  int k_pool = 0;

  int input_dim() const {
    const auto& l = layers.front();
    return int(l.kind == GnnLayerKind::sage ? l.weight.rows() / 2 : l.weight.rows());
  }
  int output_dim() const { return int(layers.back().weight.cols()); }
};

template <typename S>
GnnStack<S> make_gnn_stack(GnnLayerKind kind, int num_layers, int in_dim,
                           int hidden_dim, Rng& rng,
                           GnnActivation act = GnnActivation::relu,
                           PoolingKind pooling = PoolingKind::global_mean,
                           int k_pool = 0) {
  GnnStack<S> st;
  st.activation = act;
  st.pooling = pooling;
  st.k_pool = k_pool;
  int in = in_dim;
  for (int l = 0; l < num_layers; ++l) {
    GnnLayer<S> layer;
    layer.kind = kind;
    const int rows = kind == GnnLayerKind::sage ? 2 * in : in;
    layer.weight.resize(rows, hidden_dim);
    const double limit = std::sqrt(6.0 / double(rows + hidden_dim));
    fill_uniform(layer.weight, rng, -limit, limit);
    layer.bias = Mat<S>::Zero(1, hidden_dim);
    st.layers.push_back(std::move(layer));
    in = hidden_dim;
  }
  if (pooling == PoolingKind::topk_score) {
    st.score_weights.resize(hidden_dim, 1);
    const double limit = std::sqrt(6.0 / double(hidden_dim + 1));
    fill_uniform(st.score_weights, rng, -limit, limit);
  }
  return st;
}

// Edge weights for one aggregation kind over a batch of graphs laid out as
// consecutive row blocks. gcn adds a normalized self edge; sage divides by
// the neighbor count; gin sums unweighted.
template <typename S>
BatchAdjacency<S> build_adjacency(const std::vector<KnnGraph>& graphs,
                                  GnnLayerKind kind) {
  BatchAdjacency<S> adj;
  int offset = 0;
  for (const auto& g : graphs) {
    const std::vector<int> deg = g.out_degree();
    if (kind == GnnLayerKind::gcn) {
      for (int i = 0; i < g.num_nodes; ++i)
        adj.edges.push_back({offset + i, offset + i, S(1) / S(deg[i] + 1)});
      for (const auto& [i, j] : g.edges)
        adj.edges.push_back({offset + i, offset + j,
                             S(1) / (std::sqrt(S(deg[i] + 1)) * std::sqrt(S(deg[j] + 1)))});
    } else if (kind == GnnLayerKind::sage) {
      for (const auto& [i, j] : g.edges)
        adj.edges.push_back({offset + i, offset + j, S(1) / S(deg[i])});
    } else {  // gin
      for (const auto& [i, j] : g.edges)
        adj.edges.push_back({offset + i, offset + j, S(1)});
    }
    offset += g.num_nodes;
  }
  adj.rows = offset;
  return adj;
}

// Neighborhood messages for a single graph (row i combines features of i's
// neighbors; the gcn variant folds in the normalized self term).
template <typename S>
Mat<S> aggregate(const KnnGraph& graph, const Mat<S>& node_features,
                 GnnLayerKind kind) {
  check(int(node_features.rows()) == graph.num_nodes,
        "aggregate: feature rows must match graph nodes");
  const BatchAdjacency<S> adj = build_adjacency<S>({graph}, kind);
  Mat<S> out = Mat<S>::Zero(node_features.rows(), node_features.cols());
  for (const auto& e : adj.edges) out.row(e.dst) += e.w * node_features.row(e.src);
  return out;
}

namespace detail {

template <typename S>
int activation_t(Tape<S>& t, int x, GnnActivation act) {
  return act == GnnActivation::relu ? t.relu(x) : x;
}

}  // namespace detail

// Tape forward over a batch of graphs. `bind` turns a parameter matrix into
// a tape node (trainable leaf for the student, constant for the teacher).
// The adjacency objects must outlive the tape.
template <typename S, typename Bind>
int gnn_forward_t(Tape<S>& t, const GnnStack<S>& stack,
                  const std::vector<BatchAdjacency<S>>& layer_adj, int x,
                  Bind&& bind) {
  check(stack.layers.size() == layer_adj.size(),
        "gnn_forward: one adjacency per layer");
  int h = x;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const GnnLayer<S>& layer = stack.layers[l];
    const int w = bind(t, layer.weight);
    const int b = bind(t, layer.bias);
    const int msg = t.sparse_aggregate(h, layer_adj[l]);
    int combined;
    switch (layer.kind) {
      case GnnLayerKind::gcn: combined = msg; break;
      case GnnLayerKind::sage: combined = t.concat_cols(h, msg); break;
      default: combined = t.add(h, msg); break;  // gin, epsilon = 0
    }
    h = detail::activation_t(t, t.add_rowvec(t.matmul(combined, w), b),
                             stack.activation);
  }
  return h;
}

// Single-graph forward returning plain values.
template <typename S>
Mat<S> gnn_forward(const GnnStack<S>& stack, const KnnGraph& graph,
                   const Mat<S>& node_features) {
  check(int(node_features.rows()) == graph.num_nodes,
        "gnn_forward: feature rows must match graph nodes");
  check(int(node_features.cols()) == stack.input_dim(),
        "gnn_forward: feature width must match first layer");
  std::vector<BatchAdjacency<S>> adj;
  adj.reserve(stack.layers.size());
  for (const auto& layer : stack.layers)
    adj.push_back(build_adjacency<S>({graph}, layer.kind));
  Tape<S> t;
  const int x = t.constant(node_features);
  const auto bind = [](Tape<S>& tp, const Mat<S>& m) { return tp.constant(m); };
  const int y = gnn_forward_t(t, stack, adj, x, bind);
  return t.val(y);
}

// Column-wise mean over all nodes -> (1 x D).
template <typename S>
Mat<S> global_mean_pool(const Mat<S>& node_features) {
  if (node_features.rows() == 0)
    throw std::invalid_argument("global_mean_pool: empty graph");
  return node_features.colwise().mean();
}

template <typename S>
struct TopkSelection {
  Mat<S> features;           // k_pool rows, each gated by its score
  std::vector<int> indices;  // selected node ids, best score first
};

// Scores s_i = sigmoid(v_i . w); keeps the k_pool best (ties to the lower
// index) and gates each kept row by its score so w stays trainable.
template <typename S>
TopkSelection<S> topk_score_pool(const Mat<S>& node_features,
                                 const Mat<S>& score_weights, int k_pool) {
  const int n = int(node_features.rows());
  if (k_pool < 1 || k_pool > n)
    throw std::invalid_argument("topk_score_pool: need 1 <= k_pool <= N (k_pool=" +
                                std::to_string(k_pool) + ", N=" + std::to_string(n) + ")");
  check(score_weights.rows() == node_features.cols() && score_weights.cols() == 1,
        "topk_score_pool: score weights must be (D x 1)");
  std::vector<std::pair<S, int>> scored(std::size_t(n), {S(0), 0});
  for (int i = 0; i < n; ++i) {
    const S raw = (node_features.row(i) * score_weights)(0, 0);
    scored[std::size_t(i)] = {S(1) / (S(1) + std::exp(-raw)), i};
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  TopkSelection<S> sel;
  sel.features.resize(k_pool, node_features.cols());
  for (int r = 0; r < k_pool; ++r) {
    sel.indices.push_back(scored[std::size_t(r)].second);
    sel.features.row(r) = node_features.row(scored[std::size_t(r)].second) * scored[std::size_t(r)].first;
  }
  return sel;
}

// Pooled readout on the tape for a batch of equally sized graphs. topk gates
// the selected rows and mean-pools them into the graph feature.
template <typename S, typename Bind>
int pool_t(Tape<S>& t, const GnnStack<S>& stack, int h, int batch,
           int nodes_per_graph, Bind&& bind) {
  if (stack.pooling == PoolingKind::global_mean)
    return t.row_group_mean(h, nodes_per_graph);
  check(stack.k_pool >= 1 && stack.k_pool <= nodes_per_graph,
        "pool_t: invalid k_pool");
  const int sw = bind(t, stack.score_weights);
  const int scores = t.sigmoid(t.matmul(h, sw));  // (B*N x 1)
  const Mat<S>& sv = t.val(scores);
  std::vector<int> take;
  take.reserve(std::size_t(batch) * std::size_t(stack.k_pool));
  std::vector<std::pair<S, int>> scored(std::size_t(nodes_per_graph), {S(0), 0});
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < nodes_per_graph; ++i)
      scored[std::size_t(i)] = {sv(b * nodes_per_graph + i, 0), i};
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& bq) {
      if (a.first != bq.first) return a.first > bq.first;
      return a.second < bq.second;
    });
    for (int r = 0; r < stack.k_pool; ++r)
      take.push_back(b * nodes_per_graph + scored[std::size_t(r)].second);
  }
  const int gated = t.rowwise_scale(h, scores);
  return t.row_group_mean(t.gather_rows(gated, take), stack.k_pool);
}

template <typename S>
void visit_params(GnnStack<S>& st, const std::string& prefix, auto&& fn) {
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    fn(prefix + ".layer" + std::to_string(l) + ".weight", st.layers[l].weight, true);
    fn(prefix + ".layer" + std::to_string(l) + ".bias", st.layers[l].bias, false);
  }
  if (st.pooling == PoolingKind::topk_score)
    fn(prefix + ".score_weights", st.score_weights, true);
}

}  // namespace sgc
