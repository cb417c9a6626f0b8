#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/gnn.hpp"
#include "sgc/graph.hpp"
#include "sgc/objective.hpp"

using sgc::DistanceConfig;
using sgc::HeadConfig;
using sgc::LossWeights;
using sgc::Mat;
using sgc::Rng;

namespace {

// High-precision reference for H: softmax cross-entropy with teacher
// centering and temperature sharpening, computed in long double.
long double h_oracle(const std::vector<long double>& s,
                     const std::vector<long double>& t, long double tau_s,
                     long double tau_t, const std::vector<long double>& c) {
  const std::size_t n = s.size();
  std::vector<long double> p(n), q(n);
  long double zt = 0, zs = 0;
  for (std::size_t i = 0; i < n; ++i) zt += std::exp((t[i] - c[i]) / tau_t);
  for (std::size_t i = 0; i < n; ++i) p[i] = std::exp((t[i] - c[i]) / tau_t) / zt;
  for (std::size_t i = 0; i < n; ++i) zs += std::exp(s[i] / tau_s);
  long double loss = 0;
  for (std::size_t i = 0; i < n; ++i) loss -= p[i] * (s[i] / tau_s - std::log(zs));
  return loss;
}

long double entropy(const std::vector<long double>& p) {
  long double h = 0;
  for (const long double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

DistanceConfig unit_temps() {
  DistanceConfig cfg;
  cfg.student_temp = 1.0;
  cfg.teacher_temp = 1.0;
  return cfg;
}

}  // namespace

TEST_CASE("project: shape, zero input, determinism") {
  HeadConfig cfg;
  cfg.hidden = {32};
  cfg.bottleneck = 8;
  cfg.output_dim = 4096;
  Rng rng(2);
  auto head = sgc::init_head<double>(cfg, 16, rng);

  Mat<double> f(1, 16);
  sgc::fill_uniform(f, rng, -1.0, 1.0);
  const auto logits = sgc::project(head, f);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 4096);

  Mat<double> zero = Mat<double>::Zero(1, 16);
  CHECK(sgc::project(head, zero).isZero());  // zero bottleneck -> zero logits

  const auto again = sgc::project(head, f);
  CHECK((logits - again).cwiseAbs().maxCoeff() == 0.0);

  Mat<double> bad(1, 7);
  bad.setZero();
  CHECK_THROWS_AS(sgc::project(head, bad), sgc::ShapeError);
}

TEST_CASE("project: prototype rows are used unit-normalized") {
  HeadConfig cfg;
  cfg.hidden = {};
  cfg.bottleneck = 4;
  cfg.output_dim = 8;
  Rng rng(3);
  auto head = sgc::init_head<double>(cfg, 4, rng);
  head.prototypes *= 37.0;  // scaling the raw prototypes must not change logits
  const Mat<double> ones = Mat<double>::Ones(1, 4);
  const auto a = sgc::project(head, ones);
  auto head2 = head;
  head2.prototypes /= 37.0;
  const auto b = sgc::project(head2, ones);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  for (sgc::Index i = 0; i < a.cols(); ++i) CHECK(std::abs(a(0, i)) <= 1.0 + 1e-12);
}

TEST_CASE("distance_h: uniform case equals ln 2") {
  const Mat<double> z = Mat<double>::Zero(1, 2);
  const double v = sgc::distance_h(z, z, unit_temps(), z);
  CHECK(v == Catch::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("distance_h: centering with the teacher's own logits flattens it") {
  Mat<double> s(1, 2), t(1, 2);
  s << 2, 0;
  t << 5, -3;
  // center == teacher logits -> teacher distribution is uniform
  const double v = sgc::distance_h(s, t, unit_temps(), t);
  const double lse = std::log(std::exp(2.0) + 1.0);
  const double expect = -0.5 * ((2.0 - lse) + (0.0 - lse));
  CHECK(v == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("distance_h: matches the high-precision oracle") {
  Mat<double> s(1, 2), t(1, 2), c = Mat<double>::Zero(1, 2);
  s << 2, 0;
  t << 2, 0;
  const double got = sgc::distance_h(s, t, unit_temps(), c);
  const long double want = h_oracle({2.0L, 0.0L}, {2.0L, 0.0L}, 1.0L, 1.0L, {0.0L, 0.0L});
  CHECK(got == Catch::Approx(double(want)).epsilon(1e-10));

  // random cases with the working temperatures
  Rng rng(11);
  DistanceConfig cfg;  // defaults: 0.1 / 0.04
  for (int trial = 0; trial < 20; ++trial) {
    Mat<double> sr(1, 5), tr(1, 5), cr(1, 5);
    sgc::fill_uniform(sr, rng, -1.0, 1.0);
    sgc::fill_uniform(tr, rng, -1.0, 1.0);
    sgc::fill_uniform(cr, rng, -0.5, 0.5);
    std::vector<long double> sv(5), tv(5), cv(5);
    for (int i = 0; i < 5; ++i) {
      sv[i] = sr(0, i);
      tv[i] = tr(0, i);
      cv[i] = cr(0, i);
    }
    const double got2 = sgc::distance_h(sr, tr, cfg, cr);
    const long double want2 = h_oracle(sv, tv, 0.1L, 0.04L, cv);
    REQUIRE(got2 == Catch::Approx(double(want2)).epsilon(1e-9));
  }
}

TEST_CASE("teacher softmax rows sum to one") {
  Rng rng(23);
  DistanceConfig cfg;
  Mat<float> logits(1000, 16), center(1, 16);
  sgc::fill_uniform(logits, rng, -3.0, 3.0);
  sgc::fill_uniform(center, rng, -1.0, 1.0);
  const auto p = sgc::teacher_probs(logits, center, cfg);
  for (sgc::Index i = 0; i < p.rows(); ++i)
    REQUIRE(std::abs(p.row(i).sum() - 1.0f) < 1e-6f);
  CHECK(p.minCoeff() >= 0.0f);
}

TEST_CASE("distance_h is bounded below by the teacher entropy") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Mat<double> s(1, 4), t(1, 4), c = Mat<double>::Zero(1, 4);
    sgc::fill_uniform(s, rng, -2.0, 2.0);
    sgc::fill_uniform(t, rng, -2.0, 2.0);
    const auto cfg = unit_temps();
    const auto p = sgc::teacher_probs(t, c, cfg);
    std::vector<long double> pv(4);
    for (int i = 0; i < 4; ++i) pv[i] = p(0, i);
    const double h = sgc::distance_h(s, t, cfg, c);
    REQUIRE(h >= double(entropy(pv)) - 1e-7);
  }
  // equality iff the student softmax equals the teacher distribution
  Mat<double> z(1, 3), c3 = Mat<double>::Zero(1, 3);
  z << 0.5, -1.0, 2.0;
  const auto cfg = unit_temps();
  const auto p = sgc::teacher_probs(z, c3, cfg);
  std::vector<long double> pv{p(0, 0), p(0, 1), p(0, 2)};
  CHECK(sgc::distance_h(z, z, cfg, c3) == Catch::Approx(double(entropy(pv))).epsilon(1e-7));
  Mat<double> other = z;
  other(0, 0) += 0.3;
  CHECK(sgc::distance_h(other, z, cfg, c3) > double(entropy(pv)) + 1e-6);
}

TEST_CASE("lower teacher temperature sharpens the distribution") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    Mat<double> t(1, 6), c = Mat<double>::Zero(1, 6);
    sgc::fill_uniform(t, rng, -1.0, 1.0);
    t(0, 0) += 0.5;  // guarantee non-uniform
    DistanceConfig hot = unit_temps(), cold = unit_temps();
    cold.teacher_temp = 0.5;
    auto ph = sgc::teacher_probs(t, c, hot);
    auto pc = sgc::teacher_probs(t, c, cold);
    std::vector<long double> hv(6), cv(6);
    for (int i = 0; i < 6; ++i) {
      hv[i] = ph(0, i);
      cv[i] = pc(0, i);
    }
    REQUIRE(entropy(cv) < entropy(hv));
  }
}

TEST_CASE("ssl_cls_loss: reductions and symmetry") {
  DistanceConfig cfg = unit_temps();
  Mat<double> a(1, 3), c = Mat<double>::Zero(1, 3);
  a << 1, 0, -1;
  // identical views and networks: the mean over cross pairs is the self term
  const double self_h = sgc::distance_h(a, a, cfg, c);
  CHECK(sgc::ssl_cls_loss<double>({a, a}, {a, a}, cfg, c) ==
        Catch::Approx(self_h).epsilon(1e-12));

  Mat<double> b(1, 3);
  b << -2, 1, 0;
  const double fwd = sgc::ssl_cls_loss<double>({a, b}, {a, b}, cfg, c);
  const double swapped = sgc::ssl_cls_loss<double>({b, a}, {b, a}, cfg, c);
  CHECK(fwd == Catch::Approx(swapped).epsilon(1e-12));

  CHECK_THROWS_AS(sgc::ssl_cls_loss<double>({a}, {a}, cfg, c), std::invalid_argument);
}

TEST_CASE("ssl_cls_loss: two-view two-prototype case fully unrolled") {
  DistanceConfig cfg = unit_temps();
  Mat<double> s1(1, 2), s2(1, 2), t1(1, 2), t2(1, 2), c(1, 2);
  s1 << 0.3, -0.2;
  s2 << -1.0, 0.4;
  t1 << 0.8, 0.1;
  t2 << -0.3, 0.9;
  c << 0.05, -0.1;
  const long double pair_a =
      h_oracle({0.3L, -0.2L}, {-0.3L, 0.9L}, 1.0L, 1.0L, {0.05L, -0.1L});
  const long double pair_b =
      h_oracle({-1.0L, 0.4L}, {0.8L, 0.1L}, 1.0L, 1.0L, {0.05L, -0.1L});
  const double got = sgc::ssl_cls_loss<double>({s1, s2}, {t1, t2}, cfg, c);
  CHECK(got == Catch::Approx(double(0.5L * (pair_a + pair_b))).epsilon(1e-12));
}

TEST_CASE("sgc_loss: single-node graphs collapse to projected distance_h") {
  Rng rng(41);
  HeadConfig hc;
  hc.hidden = {8};
  hc.bottleneck = 4;
  hc.output_dim = 16;
  auto head = sgc::init_head<double>(hc, 3, rng);
  DistanceConfig cfg = unit_temps();
  Mat<double> c = Mat<double>::Zero(1, 16);

  sgc::KnnGraph g;
  g.num_nodes = 1;
  auto st = sgc::make_gnn_stack<double>(sgc::GnnLayerKind::gin, 1, 3, 3, rng);
  Mat<double> xs1(1, 3), xs2(1, 3), xt1(1, 3), xt2(1, 3);
  sgc::fill_uniform(xs1, rng, -1.0, 1.0);
  sgc::fill_uniform(xs2, rng, -1.0, 1.0);
  sgc::fill_uniform(xt1, rng, -1.0, 1.0);
  sgc::fill_uniform(xt2, rng, -1.0, 1.0);

  auto pooled = [&](const Mat<double>& x) {
    return sgc::global_mean_pool(sgc::gnn_forward(st, g, x));
  };
  const double loss =
      sgc::sgc_loss<double>({pooled(xs1), pooled(xs2)}, {pooled(xt1), pooled(xt2)},
                            head, cfg, c);
  const double direct =
      0.5 * (sgc::distance_h(sgc::project(head, pooled(xs1)),
                             sgc::project(head, pooled(xt2)), cfg, c) +
             sgc::distance_h(sgc::project(head, pooled(xs2)),
                             sgc::project(head, pooled(xt1)), cfg, c));
  CHECK(loss == Catch::Approx(direct).epsilon(1e-12));
}

TEST_CASE("patch_mean_loss: equals sgc_loss through an identity gnn with mean pooling") {
  Rng rng(43);
  HeadConfig hc;
  hc.hidden = {8};
  hc.bottleneck = 4;
  hc.output_dim = 16;
  auto head = sgc::init_head<double>(hc, 3, rng);
  DistanceConfig cfg = unit_temps();
  Mat<double> c = Mat<double>::Zero(1, 16);

  const int n = 5;
  Mat<double> s1(n, 3), s2(n, 3), t1(n, 3), t2(n, 3);
  sgc::fill_uniform(s1, rng, -1.0, 1.0);
  sgc::fill_uniform(s2, rng, -1.0, 1.0);
  sgc::fill_uniform(t1, rng, -1.0, 1.0);
  sgc::fill_uniform(t2, rng, -1.0, 1.0);

  const double pm = sgc::patch_mean_loss<double>({s1, s2}, {t1, t2}, head, cfg, c);

  // identity gnn: sage layer, [I; 0] weights, no edges, linear activation
  sgc::GnnStack<double> st;
  st.activation = sgc::GnnActivation::identity;
  sgc::GnnLayer<double> layer;
  layer.kind = sgc::GnnLayerKind::sage;
  layer.weight = Mat<double>::Zero(6, 3);
  layer.weight.topRows(3) = Mat<double>::Identity(3, 3);
  layer.bias = Mat<double>::Zero(1, 3);
  st.layers.push_back(layer);
  sgc::KnnGraph g;
  g.num_nodes = n;
  auto pooled = [&](const Mat<double>& x) {
    return sgc::global_mean_pool(sgc::gnn_forward(st, g, x));
  };
  const double via_gnn = sgc::sgc_loss<double>(
      {pooled(s1), pooled(s2)}, {pooled(t1), pooled(t2)}, head, cfg, c);
  CHECK(pm == Catch::Approx(via_gnn).epsilon(1e-12));

  // single patch: mean is the patch itself
  Mat<double> one(1, 3);
  one << 0.2, -0.4, 1.0;
  const double single = sgc::patch_mean_loss<double>({one, one}, {one, one}, head, cfg, c);
  const auto logits = sgc::project(head, one);
  CHECK(single == Catch::Approx(sgc::distance_h(logits, logits, cfg, c)).epsilon(1e-12));

  // permuting patch rows changes nothing
  Mat<double> s1p = s1.colwise().reverse();
  CHECK(sgc::patch_mean_loss<double>({s1p, s2}, {t1, t2}, head, cfg, c) ==
        Catch::Approx(pm).epsilon(1e-12));
}

TEST_CASE("combined_loss: arithmetic and bilinearity") {
  LossWeights w;
  w.alpha = 1.0;
  w.beta = 0.3;
  CHECK(sgc::combined_loss(2.0, 1.0, w) == Catch::Approx(2.3));

  w.beta = 0.0;
  CHECK(sgc::combined_loss(2.0, 99.0, w) == Catch::Approx(2.0));

  w.alpha = 0.0;
  w.beta = 1.0;
  CHECK(sgc::combined_loss(123.0, 7.0, w) == Catch::Approx(7.0));

  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    LossWeights ww;
    ww.alpha = rng.uniform(0.01, 2);
    ww.beta = rng.uniform(0.01, 2);
    CHECK(sgc::combined_loss(a, b, ww) == Catch::Approx(ww.alpha * a + ww.beta * b));
    LossWeights w2 = ww;
    w2.alpha *= 2;
    CHECK(sgc::combined_loss(a, b, w2) ==
          Catch::Approx(sgc::combined_loss(a, b, ww) + ww.alpha * a));
  }

  LossWeights bad;
  bad.alpha = 0;
  bad.beta = 0;
  CHECK_THROWS_AS(bad.validate(), sgc::ConfigError);
  bad.alpha = -1;
  bad.beta = 1;
  CHECK_THROWS_AS(bad.validate(), sgc::ConfigError);
}

TEST_CASE("update_center: momentum arithmetic and fixed point") {
  Mat<double> center = Mat<double>::Zero(1, 2);
  Mat<double> batch(3, 2);
  batch << 1, 4, 1, 4, 1, 4;
  const auto mean_now = sgc::update_center(center, batch, 0.0);
  CHECK(mean_now(0, 0) == Catch::Approx(1.0));
  CHECK(mean_now(0, 1) == Catch::Approx(4.0));

  Mat<double> c0 = Mat<double>::Zero(1, 1), ones = Mat<double>::Ones(4, 1);
  CHECK(sgc::update_center(c0, ones, 0.9)(0, 0) == Catch::Approx(0.1));

  // constant teacher output: center converges geometrically to it
  Mat<double> c = Mat<double>::Zero(1, 2);
  Mat<double> target(2, 2);
  target << 3, -2, 3, -2;
  for (int i = 0; i < 100; ++i) c = sgc::update_center(c, target, 0.9);
  CHECK(c(0, 0) == Catch::Approx(3.0).epsilon(1e-4));
  CHECK(c(0, 1) == Catch::Approx(-2.0).epsilon(1e-4));

  Mat<double> empty(0, 2);
  CHECK_THROWS_AS(sgc::update_center(c, empty, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(sgc::update_center(c, target, 1.0), std::invalid_argument);
}

TEST_CASE("plain-kl mode skips centering") {
  DistanceConfig cfg = unit_temps();
  cfg.plain_kl = true;
  Mat<double> t(1, 2), c(1, 2);
  t << 1, 0;
  c << 100, -100;  // would dominate if applied
  const auto p = sgc::teacher_probs(t, c, cfg);
  const double e1 = std::exp(1.0);
  CHECK(p(0, 0) == Catch::Approx(e1 / (e1 + 1.0)));
}
