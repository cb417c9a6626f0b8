#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/gnn.hpp"
#include "sgc/graph.hpp"

using sgc::GnnActivation;
using sgc::GnnLayerKind;
using sgc::GnnStack;
using sgc::KnnGraph;
using sgc::Mat;
using sgc::PoolingKind;
using sgc::Rng;

namespace {

template <typename S>
using Vec = sgc::Vec<S>;

// Independent dense-adjacency reference. Builds the full N x N matrix and
// applies each layer's update with explicit matrix algebra.
template <typename S>
Mat<S> dense_reference(const GnnStack<S>& stack, const KnnGraph& g,
                       const Mat<S>& x) {
  const int n = g.num_nodes;
  Mat<S> a = Mat<S>::Zero(n, n);
  for (const auto& [i, j] : g.edges) a(i, j) = S(1);
  Mat<S> h = x;
  for (const auto& layer : stack.layers) {
    Mat<S> combined;
    if (layer.kind == GnnLayerKind::gcn) {
      Mat<S> at = a + Mat<S>::Identity(n, n);
      Vec<S> r = at.rowwise().sum();
      Mat<S> norm(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          norm(i, j) = at(i, j) / (std::sqrt(r(i)) * std::sqrt(r(j)));
      combined = norm * h;
    } else if (layer.kind == GnnLayerKind::sage) {
      Vec<S> deg = a.rowwise().sum();
      Mat<S> m = a * h;
      for (int i = 0; i < n; ++i)
        if (deg(i) > S(0)) m.row(i) /= deg(i);
      combined.resize(n, 2 * h.cols());
      combined.leftCols(h.cols()) = h;
      combined.rightCols(h.cols()) = m;
    } else {
      combined = h + a * h;
    }
    Mat<S> out = combined * layer.weight;
    out.rowwise() += layer.bias.row(0);
    h = stack.activation == GnnActivation::relu ? out.cwiseMax(S(0)).eval() : out;
  }
  return h;
}

KnnGraph random_graph(int n, int k, Rng& rng) {
  Mat<double> f(n, 4);
  sgc::fill_uniform(f, rng, -1.0, 1.0);
  return sgc::knn_graph(f, k, sgc::DistanceMetric::euclidean);
}

}  // namespace

TEST_CASE("aggregate: worked examples") {
  KnnGraph g;
  g.num_nodes = 2;
  g.k = 1;
  g.edges = {{0, 1}};
  Mat<double> f(2, 1);
  f << 0, 5;
  auto msg = sgc::aggregate(g, f, GnnLayerKind::sage);
  CHECK(msg(0, 0) == Catch::Approx(5.0));  // mean of the single neighbor
  CHECK(msg(1, 0) == 0.0);                 // no outgoing edges: empty mean = 0

  KnnGraph empty;
  empty.num_nodes = 3;
  empty.k = 0;
  Mat<double> fe(3, 2);
  fe.setConstant(7.0);
  CHECK(sgc::aggregate(empty, fe, GnnLayerKind::gin).isZero());
  CHECK(sgc::aggregate(empty, fe, GnnLayerKind::sage).isZero());

  KnnGraph g2;
  g2.num_nodes = 3;
  g2.k = 2;
  g2.edges = {{0, 1}, {0, 2}};
  Mat<double> f2(3, 1);
  f2 << 0, 2, 4;
  CHECK(sgc::aggregate(g2, f2, GnnLayerKind::gin)(0, 0) == Catch::Approx(6.0));
}

TEST_CASE("aggregate: gcn self-loop normalization") {
  // single node, no edges: message = x / (0+1)
  KnnGraph g;
  g.num_nodes = 1;
  Mat<double> f(1, 2);
  f << 3, -1;
  auto msg = sgc::aggregate(g, f, GnnLayerKind::gcn);
  CHECK(msg(0, 0) == Catch::Approx(3.0));
  CHECK(msg(0, 1) == Catch::Approx(-1.0));
}

TEST_CASE("gnn_forward: sage identity weights on an edgeless graph") {
  KnnGraph g;
  g.num_nodes = 4;
  Mat<double> x(4, 3);
  Rng rng(5);
  sgc::fill_uniform(x, rng, -1.0, 1.0);

  GnnStack<double> st;
  st.activation = GnnActivation::identity;
  sgc::GnnLayer<double> layer;
  layer.kind = GnnLayerKind::sage;
  layer.weight = Mat<double>::Zero(6, 3);
  layer.weight.topRows(3) = Mat<double>::Identity(3, 3);
  layer.bias = Mat<double>::Zero(1, 3);
  st.layers.push_back(layer);

  auto y = sgc::gnn_forward(st, g, x);
  CHECK((y - x).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("gnn_forward: zero weights and relu give zero output") {
  Rng rng(9);
  auto g = random_graph(6, 2, rng);
  Mat<double> x(6, 4);
  sgc::fill_uniform(x, rng, -1.0, 1.0);
  for (auto kind : {GnnLayerKind::gcn, GnnLayerKind::sage, GnnLayerKind::gin}) {
    auto st = sgc::make_gnn_stack<double>(kind, 2, 4, 4, rng);
    for (auto& l : st.layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
    CHECK(sgc::gnn_forward(st, g, x).isZero());
  }
}

TEST_CASE("gnn_forward: matches dense reference on random graphs") {
  int checked = 0;
  for (int seed = 0; seed < 15; ++seed) {
    Rng rng(300 + seed);
    const int n = 2 + int(rng.below(15));
    const int k = 1 + int(rng.below(std::uint64_t(std::min(4, n - 1))));
    const int d = 2 + int(rng.below(6));
    auto g = random_graph(n, k, rng);
    Mat<double> x(n, d);
    sgc::fill_uniform(x, rng, -1.0, 1.0);
    for (auto kind : {GnnLayerKind::gcn, GnnLayerKind::sage, GnnLayerKind::gin}) {
      auto st = sgc::make_gnn_stack<double>(kind, 2, d, d, rng);
      const auto got = sgc::gnn_forward(st, g, x);
      const auto want = dense_reference(st, g, x);
      const double rel = (got - want).cwiseAbs().maxCoeff() /
                         std::max(1e-12, want.cwiseAbs().maxCoeff());
      INFO("seed " << seed << " kind " << int(kind));
      REQUIRE(rel < 1e-5);
      ++checked;
    }
  }
  CHECK(checked == 45);
}

TEST_CASE("gnn_forward: symmetrized graphs still match the dense reference") {
  Rng rng(77);
  auto g = sgc::symmetrized(random_graph(9, 2, rng));
  Mat<double> x(9, 3);
  sgc::fill_uniform(x, rng, -1.0, 1.0);
  for (auto kind : {GnnLayerKind::gcn, GnnLayerKind::sage, GnnLayerKind::gin}) {
    auto st = sgc::make_gnn_stack<double>(kind, 2, 3, 3, rng);
    const auto got = sgc::gnn_forward(st, g, x);
    const auto want = dense_reference(st, g, x);
    REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("global_mean_pool: examples and permutation invariance") {
  Mat<double> f(2, 2);
  f << 1, 3, 3, 5;
  auto p = sgc::global_mean_pool(f);
  CHECK(p(0, 0) == Catch::Approx(2.0));
  CHECK(p(0, 1) == Catch::Approx(4.0));

  Mat<double> same(3, 2);
  same << 7, 1, 7, 1, 7, 1;
  CHECK(sgc::global_mean_pool(same)(0, 0) == Catch::Approx(7.0));

  Rng rng(4);
  Mat<double> x(6, 3);
  sgc::fill_uniform(x, rng, -1.0, 1.0);
  auto perm = sgc::permutation(6, rng);
  Mat<double> px(6, 3);
  for (int i = 0; i < 6; ++i) px.row(perm[i]) = x.row(i);
  CHECK((sgc::global_mean_pool(x) - sgc::global_mean_pool(px)).cwiseAbs().maxCoeff() <
        1e-12);

  Mat<double> empty(0, 3);
  CHECK_THROWS_AS(sgc::global_mean_pool(empty), std::invalid_argument);
}

TEST_CASE("pooled gnn output is invariant to node relabeling") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(900 + trial);
    const int n = 3 + int(rng.below(10));
    const int d = 3;
    Mat<double> feats(n, d);
    sgc::fill_uniform(feats, rng, -1.0, 1.0);
    const auto g = sgc::knn_graph(feats, 2, sgc::DistanceMetric::euclidean);
    auto st = sgc::make_gnn_stack<double>(GnnLayerKind::sage, 2, d, d, rng);

    const auto pooled = sgc::global_mean_pool(sgc::gnn_forward(st, g, feats));

    auto perm = sgc::permutation(n, rng);
    Mat<double> pf(n, d);
    for (int i = 0; i < n; ++i) pf.row(perm[i]) = feats.row(i);
    KnnGraph pg;
    pg.num_nodes = n;
    pg.k = g.k;
    for (const auto& [i, j] : g.edges) pg.edges.push_back({perm[i], perm[j]});
    const auto pooled_p = sgc::global_mean_pool(sgc::gnn_forward(st, pg, pf));

    REQUIRE((pooled - pooled_p).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("topk_score_pool: selection, gating and tie-breaks") {
  Mat<double> f(3, 1);
  f << 1, 2, 3;
  Mat<double> w(1, 1);
  w << 1;
  auto sel = sgc::topk_score_pool(f, w, 2);
  CHECK(sel.indices == std::vector<int>{2, 1});
  const double s2 = 1.0 / (1.0 + std::exp(-3.0));
  CHECK(sel.features(0, 0) == Catch::Approx(3.0 * s2));

  auto all = sgc::topk_score_pool(f, w, 3);
  CHECK(all.indices == std::vector<int>{2, 1, 0});

  Mat<double> wz = Mat<double>::Zero(1, 1);
  auto tie = sgc::topk_score_pool(f, wz, 2);
  CHECK(tie.indices == std::vector<int>{0, 1});  // constant 0.5 scores
  CHECK(tie.features(0, 0) == Catch::Approx(0.5));

  CHECK_THROWS_AS(sgc::topk_score_pool(f, w, 4), std::invalid_argument);
  CHECK_THROWS_AS(sgc::topk_score_pool(f, w, 0), std::invalid_argument);
}

TEST_CASE("gnn_forward_t gradients match finite differences") {
  Rng rng(55);
  const int n = 5, d = 3;
  Mat<double> feats(n, d);
  sgc::fill_uniform(feats, rng, -1.0, 1.0);
  const auto g = sgc::knn_graph(feats, 2, sgc::DistanceMetric::euclidean);
  Mat<double> probs(1, d);
  probs << 0.2, 0.5, 0.3;

  for (auto kind : {GnnLayerKind::gcn, GnnLayerKind::sage, GnnLayerKind::gin}) {
    auto st = sgc::make_gnn_stack<double>(kind, 2, d, d, rng);
    std::vector<sgc::BatchAdjacency<double>> adj;
    for (const auto& l : st.layers) adj.push_back(sgc::build_adjacency<double>({g}, l.kind));

    std::vector<Mat<double>*> params{&feats};
    for (auto& l : st.layers) {
      params.push_back(&l.weight);
      params.push_back(&l.bias);
    }
    std::vector<Mat<double>> grads;
    for (auto* p : params) grads.push_back(Mat<double>::Zero(p->rows(), p->cols()));

    auto run = [&](bool grad_pass) {
      sgc::Tape<double> t;
      std::size_t next = 1;
      auto bind = [&](sgc::Tape<double>& tp, const Mat<double>& m) {
        return grad_pass ? tp.param(m, &grads[next++]) : tp.constant(m);
      };
      const int x = grad_pass ? t.param(feats, &grads[0]) : t.constant(feats);
      const int h = sgc::gnn_forward_t(t, st, adj, x, bind);
      const int pooled = t.row_group_mean(h, n);
      const int loss = t.softmax_cross_entropy(pooled, probs, 1.0);
      const double v = t.scalar(loss);
      if (grad_pass) t.backward(loss);
      return v;
    };
    run(true);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Mat<double>& p = *params[pi];
      for (sgc::Index i = 0; i < p.size(); ++i) {
        const double keep = p.data()[i];
        p.data()[i] = keep + 1e-5;
        const double fp = run(false);
        p.data()[i] = keep - 1e-5;
        const double fm = run(false);
        p.data()[i] = keep;
        const double fd = (fp - fm) / 2e-5;
        const double an = grads[pi].data()[i];
        REQUIRE(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}) < 1e-6);
      }
    }
  }
}
