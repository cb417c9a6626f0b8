#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "sgc/core/types.hpp"

namespace sgc {

// Adjacency prepared for one batch of graphs: a flat edge list over global
// node rows with a per-edge weight. Aggregation kinds (mean / sum / gcn)
// differ only in the weights and whether a self edge is present.
template <typename S>
struct BatchAdjacency {
  struct Edge {
    int dst;  // row receiving the message
    int src;  // row the feature is read from
    S w;
  };
  std::vector<Edge> edges;
  int rows = 0;
};

// Reverse-mode tape over row-major matrices. Nodes are created in forward
// order; backward() sweeps ids from the root downward, releasing value and
// gradient storage as it passes so peak memory stays close to the forward
// footprint. Values must not be read after backward().
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----

  // Trainable leaf: views external storage, accumulates its gradient into
  // *sink during backward. The tape never mutates the parameter itself.
  int param(const Mat<S>& value, Mat<S>* sink) {
    const int id = new_node(&value, true);
    nodes_[id].backward = [this, id, sink]() {
      if (nodes_[id].has_grad) *sink += nodes_[id].grad;
    };
    return id;
  }

  // Constant leaf viewing external storage; no gradient ever flows into it.
  int constant(const Mat<S>& value) { return new_node(&value, false); }

  int constant_copy(Mat<S> value) {
    const int id = new_node(nullptr, false);
    nodes_[id].owned = std::move(value);
    return id;
  }

  // ---- access ----

  const Mat<S>& val(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  S scalar(int id) const { return val(id)(0, 0); }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // ---- ops ----

  int matmul(int a, int b) {
    check(val(a).cols() == val(b).rows(), "matmul: inner dimensions differ");
    const int id = make(val(a) * val(b), {a, b});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, b]() {
      const Mat<S>& g = grad(id);
      if (nodes_[a].requires_grad) acc_grad(a, g * val(b).transpose());
      if (nodes_[b].requires_grad) acc_grad(b, val(a).transpose() * g);
    };
    return id;
  }

  int add(int a, int b) {
    check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "add: shape mismatch");
    const int id = make(val(a) + val(b), {a, b});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, b]() {
      const Mat<S>& g = grad(id);
      if (nodes_[a].requires_grad) acc_grad(a, g);
      if (nodes_[b].requires_grad) acc_grad(b, g);
    };
    return id;
  }

  // y = ca*A + cb*B for scalars/matrices of equal shape. A coefficient that
  // is exactly zero contributes nothing to the value and seeds no gradient,
  // so a disabled branch stays bitwise-invisible to the enabled one.
  int axpby(int a, int b, S ca, S cb) {
    check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "axpby: shape mismatch");
    Mat<S> y;
    if (ca == S(0) && cb == S(0)) y = Mat<S>::Zero(val(a).rows(), val(a).cols());
    else if (ca == S(0)) y = cb * val(b);
    else if (cb == S(0)) y = ca * val(a);
    else y = ca * val(a) + cb * val(b);
    const int id = make(std::move(y), {a, b});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, b, ca, cb]() {
      const Mat<S>& g = grad(id);
      if (ca != S(0) && nodes_[a].requires_grad) acc_grad(a, ca * g);
      if (cb != S(0) && nodes_[b].requires_grad) acc_grad(b, cb * g);
    };
    return id;
  }

  int scale(int a, S c) {
    const int id = make(c * val(a), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, c]() {
      if (nodes_[a].requires_grad) acc_grad(a, c * grad(id));
    };
    return id;
  }

  // y = A + v broadcast over rows (v is 1 x C)
  int add_rowvec(int a, int v) {
    check(val(v).rows() == 1 && val(v).cols() == val(a).cols(),
          "add_rowvec: bias must be 1 x cols(A)");
    const int id = make(val(a).rowwise() + val(v).row(0), {a, v});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, v]() {
      const Mat<S>& g = grad(id);
      if (nodes_[a].requires_grad) acc_grad(a, g);
      if (nodes_[v].requires_grad) acc_grad(v, g.colwise().sum());
    };
    return id;
  }

  int gather_rows(int a, std::vector<int> idx) {
    Mat<S> y(Index(idx.size()), val(a).cols());
    for (std::size_t r = 0; r < idx.size(); ++r) y.row(Index(r)) = val(a).row(idx[r]);
    const int id = make(std::move(y), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, idx = std::move(idx)]() {
      if (!nodes_[a].requires_grad) return;
      const Mat<S>& g = grad(id);
      Mat<S>& ga = grad(a);
      for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(Index(r));
    };
    return id;
  }

  int slice_cols(int a, Index start, Index n) {
    const int id = make(val(a).middleCols(start, n), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, start, n]() {
      if (nodes_[a].requires_grad) grad(a).middleCols(start, n) += grad(id);
    };
    return id;
  }

  int slice_rows(int a, Index start, Index n) {
    const int id = make(val(a).middleRows(start, n), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, start, n]() {
      if (nodes_[a].requires_grad) grad(a).middleRows(start, n) += grad(id);
    };
    return id;
  }

  int concat_rows(int a, int b) {
    check(val(a).cols() == val(b).cols(), "concat_rows: column mismatch");
    Mat<S> y(val(a).rows() + val(b).rows(), val(a).cols());
    y.topRows(val(a).rows()) = val(a);
    y.bottomRows(val(b).rows()) = val(b);
    const Index ra = val(a).rows(), rb = val(b).rows();
    const int id = make(std::move(y), {a, b});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, b, ra, rb]() {
      const Mat<S>& g = grad(id);
      if (nodes_[a].requires_grad) acc_grad(a, g.topRows(ra));
      if (nodes_[b].requires_grad) acc_grad(b, g.bottomRows(rb));
    };
    return id;
  }

  // y = a with p (T x C) added to every consecutive block of T rows.
  int add_tiled_rows(int a, int p, int reps) {
    const Index tr = val(p).rows();
    check(val(a).rows() == tr * reps && val(a).cols() == val(p).cols(),
          "add_tiled_rows: shape mismatch");
    Mat<S> y = val(a);
    for (int b = 0; b < reps; ++b) y.middleRows(Index(b) * tr, tr) += val(p);
    const int id = make(std::move(y), {a, p});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, p, reps, tr]() {
      const Mat<S>& g = grad(id);
      if (nodes_[a].requires_grad) acc_grad(a, g);
      if (nodes_[p].requires_grad) {
        Mat<S>& gp = grad(p);
        for (int b = 0; b < reps; ++b) gp += g.middleRows(Index(b) * tr, tr);
      }
    };
    return id;
  }

  int concat_cols(int a, int b) {
    check(val(a).rows() == val(b).rows(), "concat_cols: row mismatch");
    Mat<S> y(val(a).rows(), val(a).cols() + val(b).cols());
    y.leftCols(val(a).cols()) = val(a);
    y.rightCols(val(b).cols()) = val(b);
    const Index ca = val(a).cols(), cb = val(b).cols();
    const int id = make(std::move(y), {a, b});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, b, ca, cb]() {
      const Mat<S>& g = grad(id);
      if (nodes_[a].requires_grad) acc_grad(a, g.leftCols(ca));
      if (nodes_[b].requires_grad) acc_grad(b, g.rightCols(cb));
    };
    return id;
  }

  int relu(int a) {
    const int id = make(val(a).cwiseMax(S(0)), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a]() {
      if (!nodes_[a].requires_grad) return;
      acc_grad(a, (val(a).array() > S(0)).template cast<S>().matrix().cwiseProduct(grad(id)));
    };
    return id;
  }

  // exact gelu: x * Phi(x)
  int gelu(int a) {
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
      const S v = x.data()[i];
      y.data()[i] = S(0.5) * v * (S(1) + S(std::erf(double(v) * M_SQRT1_2)));
    }
    const int id = make(std::move(y), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a]() {
      if (!nodes_[a].requires_grad) return;
      const Mat<S>& x = val(a);
      const Mat<S>& g = grad(id);
      Mat<S> dx(x.rows(), x.cols());
      const double inv_sqrt2pi = 0.3989422804014327;
      for (Index i = 0; i < x.size(); ++i) {
        const double v = double(x.data()[i]);
        const double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        dx.data()[i] = g.data()[i] * S(phi + v * pdf);
      }
      acc_grad(a, std::move(dx));
    };
    return id;
  }

  int sigmoid(int a) {
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i)
      y.data()[i] = S(1) / (S(1) + S(std::exp(-double(x.data()[i]))));
    const int id = make(std::move(y), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a]() {
      if (!nodes_[a].requires_grad) return;
      const Mat<S>& y = val(id);
      acc_grad(a, grad(id).cwiseProduct(
                      (y.array() * (S(1) - y.array())).matrix()));
    };
    return id;
  }

  // Row-wise layer norm with learnable gain/bias (1 x C each).
  int layer_norm(int x, int gamma, int beta, S eps = S(1e-5)) {
    const Mat<S>& xv = val(x);
    const Index r = xv.rows(), c = xv.cols();
    Mat<S> xhat(r, c);
    Vec<S> inv_std(r);
    for (Index i = 0; i < r; ++i) {
      const S mu = xv.row(i).mean();
      const S var = (xv.row(i).array() - mu).square().sum() / S(c);
      const S is = S(1) / std::sqrt(var + eps);
      inv_std(i) = is;
      xhat.row(i) = (xv.row(i).array() - mu) * is;
    }
    Mat<S> y = ((xhat.array().rowwise() * val(gamma).row(0).array()).rowwise() +
                val(beta).row(0).array())
                   .matrix();
    const int id = make(std::move(y), {x, gamma, beta});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, x, gamma, beta, xhat = std::move(xhat),
                           inv_std = std::move(inv_std)]() {
      const Mat<S>& g = grad(id);
      const Index r = g.rows(), c = g.cols();
      if (nodes_[gamma].requires_grad)
        acc_grad(gamma, g.cwiseProduct(xhat).colwise().sum());
      if (nodes_[beta].requires_grad) acc_grad(beta, g.colwise().sum());
      if (!nodes_[x].requires_grad) return;
      Mat<S> dx(r, c);
      for (Index i = 0; i < r; ++i) {
        auto gi = g.row(i).cwiseProduct(val(gamma).row(0));  // d xhat
        const S m1 = gi.mean();
        const S m2 = gi.cwiseProduct(xhat.row(i)).mean();
        dx.row(i) =
            (((gi.array() - m1) - xhat.row(i).array() * m2) * inv_std(i)).matrix();
      }
      acc_grad(x, std::move(dx));
    };
    return id;
  }

  // Multi-head scaled dot-product attention. q, k, v are (B*T x D) with the
  // heads laid out as contiguous column blocks of width D/heads.
  int attention(int q, int k, int v, int batch, int tokens, int heads) {
    const Index d = val(q).cols();
    check(d % heads == 0, "attention: dim not divisible by heads");
    const Index hd = d / heads;
    const S inv_sqrt = S(1) / std::sqrt(S(hd));
    Mat<S> y(val(q).rows(), d);
    // probs for all (image, head) pairs stacked: (B*heads*T) x T
    Mat<S> probs(Index(batch) * heads * tokens, tokens);
    for (int b = 0; b < batch; ++b) {
      const Index r0 = Index(b) * tokens;
      for (int h = 0; h < heads; ++h) {
        const Index c0 = Index(h) * hd;
        auto qh = val(q).block(r0, c0, tokens, hd);
        auto kh = val(k).block(r0, c0, tokens, hd);
        auto vh = val(v).block(r0, c0, tokens, hd);
        Mat<S> s = qh * kh.transpose() * inv_sqrt;
        for (Index i = 0; i < s.rows(); ++i) {
          const S mx = s.row(i).maxCoeff();
          s.row(i) = (s.row(i).array() - mx).exp();
          s.row(i) /= s.row(i).sum();
        }
        probs.middleRows((Index(b) * heads + h) * tokens, tokens) = s;
        y.block(r0, c0, tokens, hd).noalias() = s * vh;
      }
    }
    const int id = make(std::move(y), {q, k, v});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, q, k, v, batch, tokens, heads, hd,
                           inv_sqrt, probs = std::move(probs)]() {
      const Mat<S>& g = grad(id);
      Mat<S>&gq = grad(q), &gk = grad(k), &gv = grad(v);
      for (int b = 0; b < batch; ++b) {
        const Index r0 = Index(b) * tokens;
        for (int h = 0; h < heads; ++h) {
          const Index c0 = Index(h) * hd;
          auto p = probs.middleRows((Index(b) * heads + h) * tokens, tokens);
          auto kh = val(k).block(r0, c0, tokens, hd);
          auto qh = val(q).block(r0, c0, tokens, hd);
          auto vh = val(v).block(r0, c0, tokens, hd);
          auto gy = g.block(r0, c0, tokens, hd);
          gv.block(r0, c0, tokens, hd).noalias() += p.transpose() * gy;
          Mat<S> dp = gy * vh.transpose();
          // softmax backward: ds = p .* (dp - rowsum(dp .* p))
          Mat<S> ds(tokens, tokens);
          for (Index i = 0; i < Index(tokens); ++i) {
            const S dot = dp.row(i).cwiseProduct(p.row(i)).sum();
            ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
          }
          gq.block(r0, c0, tokens, hd).noalias() += ds * kh * inv_sqrt;
          gk.block(r0, c0, tokens, hd).noalias() += ds.transpose() * qh * inv_sqrt;
        }
      }
      nodes_[q].has_grad = nodes_[k].has_grad = nodes_[v].has_grad = true;
    };
    return id;
  }

  // Mean over each consecutive group of `group` rows -> (rows/group x C).
  int row_group_mean(int a, int group) {
    const Mat<S>& x = val(a);
    check(x.rows() % group == 0, "row_group_mean: rows not divisible by group");
    const Index out_rows = x.rows() / group;
    Mat<S> y(out_rows, x.cols());
    for (Index b = 0; b < out_rows; ++b)
      y.row(b) = x.middleRows(b * group, group).colwise().mean();
    const int id = make(std::move(y), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, group]() {
      if (!nodes_[a].requires_grad) return;
      const Mat<S>& g = grad(id);
      Mat<S>& ga = grad(a);
      const S inv = S(1) / S(group);
      for (Index b = 0; b < g.rows(); ++b)
        ga.middleRows(b * group, group).rowwise() += g.row(b) * inv;
      nodes_[a].has_grad = true;
    };
    return id;
  }

  // Message passing: y[dst] = sum_e w_e * x[src_e]. The edge set is fixed
  // data (neighbor selection is not differentiated through).
  int sparse_aggregate(int a, const BatchAdjacency<S>& adj) {
    const Mat<S>& x = val(a);
    check(adj.rows == int(x.rows()), "sparse_aggregate: row mismatch");
    Mat<S> y = Mat<S>::Zero(x.rows(), x.cols());
    for (const auto& e : adj.edges) y.row(e.dst) += e.w * x.row(e.src);
    const int id = make(std::move(y), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, &adj]() {
      if (!nodes_[a].requires_grad) return;
      const Mat<S>& g = grad(id);
      Mat<S>& ga = grad(a);
      for (const auto& e : adj.edges) ga.row(e.src) += e.w * g.row(e.dst);
      nodes_[a].has_grad = true;
    };
    return id;
  }

  // y_r = x_r / max(||x_r||, eps)
  int l2_normalize_rows(int a, S eps = S(1e-12)) {
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), x.cols());
    Vec<S> norms(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
      const S n = std::max(x.row(i).norm(), eps);
      norms(i) = n;
      y.row(i) = x.row(i) / n;
    }
    const int id = make(std::move(y), {a});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, norms = std::move(norms)]() {
      if (!nodes_[a].requires_grad) return;
      const Mat<S>& g = grad(id);
      const Mat<S>& y = val(id);
      Mat<S> dx(g.rows(), g.cols());
      for (Index i = 0; i < g.rows(); ++i) {
        const S dot = g.row(i).cwiseProduct(y.row(i)).sum();
        dx.row(i) = (g.row(i) - dot * y.row(i)) / norms(i);
      }
      acc_grad(a, std::move(dx));
    };
    return id;
  }

  // y = x * normalize_rows(V)^T with V (out x in); the per-row gain of the
  // weight normalization is fixed at 1.
  int weight_norm_linear(int x, int v) {
    const Mat<S>& vv = val(v);
    Mat<S> vn(vv.rows(), vv.cols());
    Vec<S> norms(vv.rows());
    for (Index i = 0; i < vv.rows(); ++i) {
      const S n = std::max(vv.row(i).norm(), S(1e-12));
      norms(i) = n;
      vn.row(i) = vv.row(i) / n;
    }
    Mat<S> y = val(x) * vn.transpose();
    const int id = make(std::move(y), {x, v});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, x, v, vn = std::move(vn),
                           norms = std::move(norms)]() {
      const Mat<S>& g = grad(id);
      if (nodes_[x].requires_grad) acc_grad(x, g * vn);
      if (!nodes_[v].requires_grad) return;
      Mat<S> dvn = g.transpose() * val(x);  // (out x in)
      Mat<S> dv(dvn.rows(), dvn.cols());
      for (Index i = 0; i < dvn.rows(); ++i) {
        const S dot = dvn.row(i).cwiseProduct(vn.row(i)).sum();
        dv.row(i) = (dvn.row(i) - dot * vn.row(i)) / norms(i);
      }
      acc_grad(v, std::move(dv));
    };
    return id;
  }

  // y_r = x_r * s_r for a column of per-row gates s (R x 1).
  int rowwise_scale(int a, int s) {
    check(val(s).cols() == 1 && val(s).rows() == val(a).rows(),
          "rowwise_scale: gate must be rows(A) x 1");
    Mat<S> y = (val(a).array().colwise() * val(s).col(0).array()).matrix();
    const int id = make(std::move(y), {a, s});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, a, s]() {
      const Mat<S>& g = grad(id);
      if (nodes_[a].requires_grad)
        acc_grad(a, (g.array().colwise() * val(s).col(0).array()).matrix());
      if (nodes_[s].requires_grad) {
        Mat<S> dsv(g.rows(), 1);
        for (Index i = 0; i < g.rows(); ++i)
          dsv(i, 0) = g.row(i).cwiseProduct(val(a).row(i)).sum();
        acc_grad(s, std::move(dsv));
      }
    };
    return id;
  }

  // Mean over rows of -sum_c p(r,c) * log softmax(logits(r,:) * inv_temp)_c.
  // Teacher probabilities are plain data: no gradient flows into them.
  int softmax_cross_entropy(int logits, const Mat<S>& probs, S inv_temp) {
    const Mat<S>& z = val(logits);
    check(z.rows() == probs.rows() && z.cols() == probs.cols(),
          "softmax_cross_entropy: shape mismatch");
    Mat<S> sm(z.rows(), z.cols());
    S total = S(0);
    for (Index i = 0; i < z.rows(); ++i) {
      Eigen::Array<S, 1, Eigen::Dynamic> row = z.row(i).array() * inv_temp;
      const S mx = row.maxCoeff();
      const S lse = mx + std::log((row - mx).exp().sum());
      total -= (probs.row(i).array() * (row - lse)).sum();
      sm.row(i) = (row - lse).exp();
    }
    Mat<S> y(1, 1);
    y(0, 0) = total / S(z.rows());
    const int id = make(std::move(y), {logits});
    if (!nodes_[id].requires_grad) return id;
    nodes_[id].backward = [this, id, logits, probs, inv_temp,
                           sm = std::move(sm)]() {
      if (!nodes_[logits].requires_grad) return;
      const S seed = grad(id)(0, 0);
      acc_grad(logits, (sm - probs) * (seed * inv_temp / S(sm.rows())));
    };
    return id;
  }

  // ---- backward ----

  void backward(int root) {
    check(!swept_, "backward: tape already consumed");
    check(val(root).rows() == 1 && val(root).cols() == 1,
          "backward: root must be scalar");
    check(nodes_[root].requires_grad, "backward: root has no gradient path");
    swept_ = true;
    grad(root).setOnes();
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.has_grad && n.backward) n.backward();
      // storage for this node is dead from here on
      n.owned.resize(0, 0);
      n.grad.resize(0, 0);
      n.backward = nullptr;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> owned;
    const Mat<S>* external = nullptr;
    Mat<S> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void()> backward;
  };

  int new_node(const Mat<S>* external, bool req) {
    Node n;
    n.external = external;
    n.requires_grad = req;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  int make(Mat<S> value, std::initializer_list<int> parents) {
    Node n;
    n.owned = std::move(value);
    for (int p : parents) n.requires_grad |= nodes_[p].requires_grad;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  Mat<S>& grad(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Mat<S>::Zero(val(id).rows(), val(id).cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  template <typename Expr>
  void acc_grad(int id, const Expr& delta) {
    grad(id) += delta;
  }

  void acc_grad(int id, Mat<S>&& delta) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = std::move(delta);
      n.has_grad = true;
    } else {
      n.grad += delta;
    }
  }

  std::vector<Node> nodes_;
  bool swept_ = false;
};

}  // namespace sgc
