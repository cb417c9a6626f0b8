#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/core/tape.hpp"
#include "sgc/core/types.hpp"

namespace sgc {

struct HeadConfig {
  std::vector<int> hidden = {2048, 2048};
  int bottleneck = 256;
  int output_dim = 4096;  // prototype count; full-scale runs use 65536

  void validate() const {
    if (output_dim < 2) throw ConfigError("head: output_dim must be >= 2");
    if (bottleneck < 1) throw ConfigError("head: bottleneck must be >= 1");
    for (int h : hidden)
      if (h < 1) throw ConfigError("head: hidden widths must be >= 1");
  }
};

// MLP with gelu between hidden layers, a linear bottleneck, unit-length
// normalization, and a weight-normalized final linear without bias.
template <typename S>
struct HeadParams {
  HeadConfig cfg;
  std::vector<Mat<S>> weights;  // hidden layers then bottleneck
  std::vector<Mat<S>> biases;
  Mat<S> prototypes;  // (output_dim x bottleneck), rows normalized at use
};

template <typename S>
HeadParams<S> init_head(const HeadConfig& cfg, int in_dim, Rng& rng) {
  cfg.validate();
  HeadParams<S> p;
  p.cfg = cfg;
  std::vector<int> widths = cfg.hidden;
  widths.push_back(cfg.bottleneck);
  int in = in_dim;
  for (const int out : widths) {
    Mat<S> w(in, out);
    fill_trunc_normal(w, rng, 0.02);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Mat<S>::Zero(1, out));
    in = out;
  }
  p.prototypes.resize(cfg.output_dim, cfg.bottleneck);
  fill_trunc_normal(p.prototypes, rng, 0.02);
  return p;
}

template <typename S, typename Bind>
int project_t(Tape<S>& t, const HeadParams<S>& p, int x, Bind&& bind) {
  check(t.val(x).cols() == p.weights.front().rows(),
        "project: feature width does not match head input");
  int h = x;
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    h = t.add_rowvec(t.matmul(h, bind(t, p.weights[i])), bind(t, p.biases[i]));
    if (i + 1 < p.weights.size()) h = t.gelu(h);
  }
  h = t.l2_normalize_rows(h);
  return t.weight_norm_linear(h, bind(t, p.prototypes));
}

// Plain-value projection of one or more feature rows -> logits.
template <typename S>
Mat<S> project(const HeadParams<S>& p, const Mat<S>& features) {
  Tape<S> t;
  const auto bind = [](Tape<S>& tp, const Mat<S>& m) { return tp.constant(m); };
  return t.val(project_t(t, p, t.constant(features), bind));
}

struct DistanceConfig {
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double center_momentum = 0.9;
  bool plain_kl = false;  // ablation: skip centering entirely

  void validate() const {
    if (student_temp <= 0 || teacher_temp <= 0)
      throw ConfigError("distance: temperatures must be positive");
    if (center_momentum < 0 || center_momentum >= 1)
      throw ConfigError("distance: center_momentum must be in [0,1)");
  }
};

// Sharpened target distribution: softmax((teacher - center) / teacher_temp).
template <typename S>
Mat<S> teacher_probs(const Mat<S>& teacher_logits, const Mat<S>& center,
                     const DistanceConfig& cfg) {
  Mat<S> z = teacher_logits;
  if (!cfg.plain_kl) z.rowwise() -= center.row(0);
  z /= S(cfg.teacher_temp);
  for (Index i = 0; i < z.rows(); ++i) {
    const S mx = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - mx).exp();
    z.row(i) /= z.row(i).sum();
  }
  return z;
}

// H = -sum_c softmax((t - center)/tau_t)_c * log softmax(s/tau_s)_c,
// averaged over rows. The teacher side is plain data.
template <typename S>
S distance_h(const Mat<S>& student_logits, const Mat<S>& teacher_logits,
             const DistanceConfig& cfg, const Mat<S>& center) {
  cfg.validate();
  check(student_logits.cols() == teacher_logits.cols() &&
            student_logits.rows() == teacher_logits.rows(),
        "distance_h: logit shapes differ");
  const Mat<S> probs = teacher_probs(teacher_logits, center, cfg);
  S total = S(0);
  for (Index i = 0; i < student_logits.rows(); ++i) {
    Eigen::Array<S, 1, Eigen::Dynamic> srow =
        student_logits.row(i).array() / S(cfg.student_temp);
    const S mx = srow.maxCoeff();
    const S lse = mx + std::log((srow - mx).exp().sum());
    total -= (probs.row(i).array() * (srow - lse)).sum();
  }
  return total / S(student_logits.rows());
}

// Mean of distance_h over the two cross-view pairs (student view a against
// teacher view b, a != b). Shared by the class-token and graph branches.
template <typename S>
S cross_view_loss(const std::vector<Mat<S>>& student_logits,
                  const std::vector<Mat<S>>& teacher_logits,
                  const DistanceConfig& cfg, const Mat<S>& center) {
  if (student_logits.size() < 2 || teacher_logits.size() < 2)
    throw std::invalid_argument("cross_view_loss: need two views per network");
  const S a = distance_h(student_logits[0], teacher_logits[1], cfg, center);
  const S b = distance_h(student_logits[1], teacher_logits[0], cfg, center);
  return S(0.5) * (a + b);
}

template <typename S>
S ssl_cls_loss(const std::vector<Mat<S>>& student_cls_logits,
               const std::vector<Mat<S>>& teacher_cls_logits,
               const DistanceConfig& cfg, const Mat<S>& center) {
  return cross_view_loss(student_cls_logits, teacher_cls_logits, cfg, center);
}

template <typename S>
S sgc_loss(const std::vector<Mat<S>>& student_pooled,
           const std::vector<Mat<S>>& teacher_pooled, const HeadParams<S>& head,
           const DistanceConfig& cfg, const Mat<S>& sgc_center) {
  std::vector<Mat<S>> s{project(head, student_pooled[0]), project(head, student_pooled[1])};
  std::vector<Mat<S>> t{project(head, teacher_pooled[0]), project(head, teacher_pooled[1])};
  return cross_view_loss(s, t, cfg, sgc_center);
}

// Ablation branch: the pooled graph feature is replaced by the plain mean of
// the patch tokens.
template <typename S>
S patch_mean_loss(const std::vector<Mat<S>>& student_patches_per_view,
                  const std::vector<Mat<S>>& teacher_patches_per_view,
                  const HeadParams<S>& head, const DistanceConfig& cfg,
                  const Mat<S>& center) {
  auto mean_rows = [](const Mat<S>& m) -> Mat<S> { return m.colwise().mean(); };
  std::vector<Mat<S>> s{mean_rows(student_patches_per_view[0]),
                        mean_rows(student_patches_per_view[1])};
  std::vector<Mat<S>> t{mean_rows(teacher_patches_per_view[0]),
                        mean_rows(teacher_patches_per_view[1])};
  return sgc_loss(s, t, head, cfg, center);
}

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.3;

  void validate() const {
    if (alpha < 0 || beta < 0)
      throw ConfigError("loss weights: alpha and beta must be >= 0");
    if (alpha == 0 && beta == 0)
      throw ConfigError("loss weights: alpha and beta cannot both be zero");
  }
};

template <typename S>
S combined_loss(S l_ssl, S l_sgc, const LossWeights& w) {
  return S(w.alpha) * l_ssl + S(w.beta) * l_sgc;
}

template <typename S>
struct CenterState {
  Mat<S> cls_center;  // (1 x output_dim)
  Mat<S> sgc_center;
};

template <typename S>
CenterState<S> init_centers(int output_dim) {
  CenterState<S> c;
  c.cls_center = Mat<S>::Zero(1, output_dim);
  c.sgc_center = Mat<S>::Zero(1, output_dim);
  return c;
}

// center' = momentum * center + (1 - momentum) * batch mean of the logits.
template <typename S>
Mat<S> update_center(const Mat<S>& center, const Mat<S>& teacher_logit_batch,
                     double momentum) {
  if (teacher_logit_batch.rows() == 0)
    throw std::invalid_argument("update_center: empty batch");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("update_center: momentum must be in [0,1)");
  return S(momentum) * center +
         S(1.0 - momentum) * teacher_logit_batch.colwise().mean();
}

template <typename S>
void visit_params(HeadParams<S>& p, const std::string& prefix, auto&& fn) {
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    fn(prefix + ".fc" + std::to_string(i) + ".weight", p.weights[i], true);
    fn(prefix + ".fc" + std::to_string(i) + ".bias", p.biases[i], false);
  }
  fn(prefix + ".prototypes", p.prototypes, true);
}

}  // namespace sgc
