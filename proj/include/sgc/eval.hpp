#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sgc/augment.hpp"
#include "sgc/core/rng.hpp"
#include "sgc/core/serialize.hpp"
#include "sgc/dataset.hpp"
#include "sgc/schedule.hpp"
#include "sgc/vit.hpp"

namespace sgc {

struct ProbeConfig {
  int epochs = 100;
  int batch_size = 128;
  double lr = 5e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool cosine_schedule = false;  // default: constant lr
  bool augment_train = true;     // one seeded random-resized-crop pass
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("probe: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("probe: batch_size must be >= 1");
    if (lr <= 0) throw ConfigError("probe: lr must be positive");
  }

  std::uint64_t digest() const {
    std::uint64_t h = fnv1a64("probe-config");
    const double vals[] = {double(epochs), double(batch_size), lr, momentum,
                           weight_decay, cosine_schedule ? 1.0 : 0.0,
                           augment_train ? 1.0 : 0.0, double(seed)};
    return fnv1a64(vals, sizeof vals, h);
  }
};

// Concatenated class-token outputs of the last four blocks (frozen encoder).
template <typename S>
Mat<S> extract_probe_features(const EncoderParams<S>& encoder,
                              const ImageBatch<S>& images) {
  if (encoder.cfg.depth < 4)
    throw std::invalid_argument(
        "extract_probe_features: encoder depth must be >= 4 (have " +
        std::to_string(encoder.cfg.depth) + ")");
  const TokenSequence<S> seq = encode(encoder, images);
  const int d = encoder.cfg.embed_dim;
  Mat<S> out(images.batch, 4 * d);
  const std::size_t first = seq.per_block_cls.size() - 4;
  for (int blk = 0; blk < 4; ++blk)
    out.middleCols(Index(blk) * d, d) = seq.per_block_cls[first + std::size_t(blk)];
  return out;
}

// Per class, floor(fraction * count) indices drawn without replacement.
// Throws NotApplicableError when any class would receive zero samples.
inline std::vector<int> stratified_subset(const std::vector<int>& labels,
                                          double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("stratified_subset: fraction must be in (0,1]");
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(int(i));
  std::vector<int> out;
  for (auto& [cls, idx] : by_class) {
    const int take = int(std::floor(fraction * double(idx.size())));
    if (take == 0)
      throw NotApplicableError("stratified_subset: fraction " +
                               std::to_string(fraction) + " empties class " +
                               std::to_string(cls) + " (" +
                               std::to_string(idx.size()) + " samples)");
    Rng rng(derive_seed(seed, "subset", std::uint64_t(cls)));
    // Fisher-Yates prefix: the first `take` entries are a uniform sample
    std::vector<int> pool = idx;
    for (int i = 0; i < take; ++i) {
      const int j = i + int(rng.below(std::uint64_t(pool.size() - std::size_t(i))));
      std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
    }
    out.insert(out.end(), pool.begin(), pool.begin() + take);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct ProbeResult {
  double top1 = 0.0;
  std::vector<double> per_class;  // accuracy per class id on the test set
  int train_size = 0;
  int test_size = 0;
  std::uint64_t config_digest = 0;
};

// Single linear layer trained with SGD + momentum on frozen features;
// deterministic under the config seed.
template <typename S>
ProbeResult linear_probe(const Mat<S>& train_x, const std::vector<int>& train_y,
                         const Mat<S>& test_x, const std::vector<int>& test_y,
                         const ProbeConfig& cfg) {
  cfg.validate();
  check(train_x.rows() == Index(train_y.size()),
        "linear_probe: features/labels length mismatch");
  check(test_x.rows() == Index(test_y.size()),
        "linear_probe: test features/labels length mismatch");
  int num_classes = 0;
  for (const int y : train_y) num_classes = std::max(num_classes, y + 1);
  for (const int y : test_y) num_classes = std::max(num_classes, y + 1);
  {
    std::vector<bool> seen(std::size_t(num_classes), false);
    int distinct = 0;
    for (const int y : train_y)
      if (!seen[std::size_t(y)]) {
        seen[std::size_t(y)] = true;
        ++distinct;
      }
    if (distinct < 2)
      throw std::invalid_argument("linear_probe: need at least two classes");
  }

  const Index d = train_x.cols();
  Mat<S> w = Mat<S>::Zero(d, num_classes);
  Mat<S> b = Mat<S>::Zero(1, num_classes);
  Mat<S> vw = Mat<S>::Zero(d, num_classes);
  Mat<S> vb = Mat<S>::Zero(1, num_classes);

  const int n = int(train_x.rows());
  const int bs = std::min(cfg.batch_size, n);
  const int steps_per_epoch = std::max(1, n / bs);
  const LrSchedule sched{cfg.lr, 0.0, 0, long(cfg.epochs) * steps_per_epoch};
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "probe.order", std::uint64_t(epoch)));
    const std::vector<int> perm = permutation(n, rng);
    for (int s = 0; s < steps_per_epoch; ++s) {
      const int cur = (s == steps_per_epoch - 1) ? n - s * bs : bs;
      Mat<S> logits(cur, num_classes);
      Mat<S> gw = Mat<S>::Zero(d, num_classes);
      Mat<S> gb = Mat<S>::Zero(1, num_classes);
      for (int i = 0; i < cur; ++i) {
        const int idx = perm[std::size_t(s) * bs + i];
        logits.row(i) = train_x.row(idx) * w + b.row(0);
        const S mx = logits.row(i).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (logits.row(i).array() - mx).exp();
        e /= e.sum();
        e(train_y[std::size_t(idx)]) -= S(1);
        e /= S(cur);
        gw.noalias() += train_x.row(idx).transpose() * e.matrix();
        gb += e.matrix();
      }
      if (cfg.weight_decay > 0) gw += S(cfg.weight_decay) * w;
      const double lr = cfg.cosine_schedule ? lr_at(step, sched) : cfg.lr;
      vw = S(cfg.momentum) * vw + gw;
      vb = S(cfg.momentum) * vb + gb;
      w -= S(lr) * vw;
      b -= S(lr) * vb;
      ++step;
    }
  }

  ProbeResult res;
  res.train_size = n;
  res.test_size = int(test_x.rows());
  res.config_digest = cfg.digest();
  std::vector<int> correct(std::size_t(num_classes), 0), total(std::size_t(num_classes), 0);
  int hits = 0;
  for (Index i = 0; i < test_x.rows(); ++i) {
    Mat<S> logits = test_x.row(i) * w + b;
    Index pred;
    logits.row(0).maxCoeff(&pred);
    const int y = test_y[std::size_t(i)];
    ++total[std::size_t(y)];
    if (int(pred) == y) {
      ++hits;
      ++correct[std::size_t(y)];
    }
  }
  res.top1 = test_x.rows() > 0 ? double(hits) / double(test_x.rows()) : 0.0;
  for (int c = 0; c < num_classes; ++c)
    res.per_class.push_back(total[std::size_t(c)] > 0
                                ? double(correct[std::size_t(c)]) / total[std::size_t(c)]
                                : 0.0);
  return res;
}

// Features for a whole dataset split, in batches. Train extraction applies
// one seeded random-resized-crop pass per image; test extraction only
// resizes. Both apply the same normalization as pretraining.
template <typename S>
Mat<S> dataset_probe_features(const EncoderParams<S>& encoder, const Dataset& ds,
                              bool train_augment, int out_size,
                              std::uint64_t seed) {
  check(ds.size() > 0, "dataset_probe_features: empty dataset");
  const int d = encoder.cfg.embed_dim;
  Mat<S> out(ds.size(), 4 * d);
  const int chunk = 64;
  AugmentationConfig crop_cfg = AugmentationConfig::identity(out_size);
  crop_cfg.crop_min_scale = 0.5;
  crop_cfg.normalize = true;
  for (int start = 0; start < ds.size(); start += chunk) {
    const int cur = std::min(chunk, ds.size() - start);
    std::vector<Image> views;
    views.reserve(std::size_t(cur));
    for (int i = 0; i < cur; ++i) {
      const Image& im = ds.images[std::size_t(start + i)];
      if (train_augment) {
        Rng rng = sample_rng(seed, "probe.aug", 0, std::uint64_t(start + i));
        Image v = random_resized_crop(im, crop_cfg, rng);
        for (float& p : v.px) p = (p - 0.5f) * 2.0f;
        views.push_back(std::move(v));
      } else {
        Image v = resize_bilinear(im, out_size, out_size);
        for (float& p : v.px) p = (p - 0.5f) * 2.0f;
        views.push_back(std::move(v));
      }
    }
    out.middleRows(start, cur) =
        extract_probe_features(encoder, to_image_batch<S>(views));
  }
  return out;
}

// ---- feature cache ----

template <typename S>
void save_feature_cache(const std::string& path, const Mat<S>& features,
                        const std::vector<int>& labels) {
  BlobWriter w(kKindFeatureCache);
  w.add_mat("features", features);
  Mat<double> lab(Index(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) lab(Index(i), 0) = labels[i];
  w.add_mat("labels", lab);
  w.write(path);
}

template <typename S>
bool load_feature_cache(const std::string& path, Mat<S>& features,
                        std::vector<int>& labels) {
  if (!std::filesystem::exists(path)) return false;
  BlobReader r(path);
  if (r.kind() != kKindFeatureCache) return false;
  features = r.get_mat<S>("features");
  const Mat<double> lab = r.get_mat<double>("labels");
  labels.resize(std::size_t(lab.rows()));
  for (Index i = 0; i < lab.rows(); ++i) labels[std::size_t(i)] = int(lab(i, 0));
  return true;
}

}  // namespace sgc
