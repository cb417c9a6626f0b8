#pragma once

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "sgc/augment.hpp"
#include "sgc/core/serialize.hpp"
#include "sgc/core/tape.hpp"
#include "sgc/dataset.hpp"
#include "sgc/gnn.hpp"
#include "sgc/graph.hpp"
#include "sgc/objective.hpp"
#include "sgc/optim.hpp"
#include "sgc/schedule.hpp"
#include "sgc/vit.hpp"

namespace sgc {

enum class TrainMethod { dino_baseline, dino_sgc, dino_patch_mean };

inline const char* method_name(TrainMethod m) {
  switch (m) {
    case TrainMethod::dino_baseline: return "dino_baseline";
    case TrainMethod::dino_patch_mean: return "dino_patch_mean";
    default: return "dino_sgc";
  }
}

struct GraphConfig {
  int k = 20;
  DistanceMetric metric = DistanceMetric::euclidean;
  bool symmetrize = false;

  void validate() const {
    if (k < 1) throw ConfigError("graph: invalid-k, need k >= 1");
  }
};

struct GnnConfig {
  int layers = 2;
  GnnLayerKind kind = GnnLayerKind::gcn;
  int hidden = 0;  // 0: use the encoder width
  GnnActivation activation = GnnActivation::relu;
  PoolingKind pooling = PoolingKind::global_mean;
  int k_pool = 16;

  void validate() const {
    if (layers < 1) throw ConfigError("gnn: need at least one layer");
    if (pooling == PoolingKind::topk_score && k_pool < 1)
      throw ConfigError("gnn: k_pool must be >= 1");
  }
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  double base_lr = 5e-4;
  double final_lr = 0.0;
  int warmup_epochs = 10;
  double weight_decay = 0.04;
  double ema_momentum = 0.996;
  bool ema_cosine = false;
  int checkpoint_every = 1;  // epochs
  std::uint64_t seed = 0;
  TrainMethod method = TrainMethod::dino_sgc;
  LossWeights weights;
  DistanceConfig distance;
  GraphConfig graph;
  GnnConfig gnn;
  HeadConfig head;
  EncoderConfig encoder;
  AugmentationConfig aug;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (warmup_epochs >= epochs)
      throw ConfigError("train: warmup_epochs must be < epochs");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (ema_momentum < 0 || ema_momentum >= 1)
      throw ConfigError("train: ema_momentum must be in [0,1)");
    if (base_lr < 0 || weight_decay < 0)
      throw ConfigError("train: base_lr and weight_decay must be >= 0");
    if (checkpoint_every < 1)
      throw ConfigError("train: checkpoint_every must be >= 1");
    weights.validate();
    distance.validate();
    graph.validate();
    gnn.validate();
    encoder.validate();
    head.validate();
    aug.validate();
  }
};

// One network: encoder, graph stack and the two projection heads.
template <typename S>
struct ModelParams {
  EncoderParams<S> encoder;
  GnnStack<S> gnn;
  HeadParams<S> head_cls;
  HeadParams<S> head_sgc;
};

template <typename S>
void visit_params(ModelParams<S>& m, auto&& fn) {
  visit_params(m.encoder, "encoder", fn);
  visit_params(m.gnn, "gnn", fn);
  visit_params(m.head_cls, "head_cls", fn);
  visit_params(m.head_sgc, "head_sgc", fn);
}

// teacher' = m * teacher + (1 - m) * student, elementwise per parameter.
// m = 1 freezes the teacher (test use only).
template <typename S>
void ema_update(ModelParams<S>& teacher, const ModelParams<S>& student, double m) {
  check(m >= 0.0 && m <= 1.0, "ema_update: momentum must be in [0,1]");
  std::vector<Mat<S>*> tp;
  std::vector<const Mat<S>*> sp;
  visit_params(teacher, [&](const std::string&, Mat<S>& v, bool) { tp.push_back(&v); });
  visit_params(const_cast<ModelParams<S>&>(student),
               [&](const std::string&, Mat<S>& v, bool) { sp.push_back(&v); });
  check(tp.size() == sp.size(), "ema_update: parameter lists differ");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    check(tp[i]->rows() == sp[i]->rows() && tp[i]->cols() == sp[i]->cols(),
          "ema_update: parameter shape mismatch");
    *tp[i] = S(m) * (*tp[i]) + S(1.0 - m) * (*sp[i]);
  }
}

struct MetricsRow {
  long step = 0;
  int epoch = 0;
  double lr = 0, loss_total = 0, loss_cls = 0, loss_sgc = 0, ema_momentum = 0;

  std::string to_json() const {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "{\"step\":%ld,\"epoch\":%d,\"lr\":%.9g,\"loss_total\":%.9g,"
                  "\"loss_cls\":%.9g,\"loss_sgc\":%.9g,\"ema_momentum\":%.9g}",
                  step, epoch, lr, loss_total, loss_cls, loss_sgc, ema_momentum);
    return buf;
  }
};

template <typename S>
struct SslState {
  TrainConfig cfg;
  int image_size = 0, channels = 3;
  ModelParams<S> student;
  ModelParams<S> teacher;
  CenterState<S> centers;
  ParamRegistry<S> registry;  // student parameters only
  AdamW<S> opt;
  long step = 0;
  int epochs_done = 0;
  LrSchedule lr_schedule;
  long total_steps = std::numeric_limits<long>::max();  // for the ema ramp
  double ema_override = -1.0;  // >= 0 forces the momentum (freeze tests)

  SslState() = default;
  SslState(const SslState&) = delete;
  SslState& operator=(const SslState&) = delete;

  void rebuild_registry() {
    registry = ParamRegistry<S>();
    visit_params(student, [&](const std::string& name, Mat<S>& v, bool decay) {
      registry.add(name, v, decay);
    });
  }

  // The optimizer must track every student parameter and none of the
  // teacher's.
  bool teacher_isolated() {
    if (opt.first_moments().size() != registry.size()) return false;
    bool ok = true;
    visit_params(teacher, [&](const std::string&, Mat<S>& v, bool) {
      if (registry.contains(v)) ok = false;
    });
    return ok;
  }
};

// Builds student and teacher (identical at start) with independent named
// init streams per component, so disabling one branch cannot shift another
// branch's initialization.
template <typename S>
void init_state(SslState<S>& st, const TrainConfig& cfg, int image_size,
                int channels) {
  cfg.validate();
  st.cfg = cfg;
  st.image_size = image_size;
  st.channels = channels;

  Rng enc_rng = named_rng(cfg.seed, "init.encoder");
  st.student.encoder =
      init_encoder<S>(cfg.encoder, image_size, image_size, channels, enc_rng);

  const int d = cfg.encoder.embed_dim;
  const int gnn_hidden = cfg.gnn.hidden > 0 ? cfg.gnn.hidden : d;
  Rng gnn_rng = named_rng(cfg.seed, "init.gnn");
  st.student.gnn =
      make_gnn_stack<S>(cfg.gnn.kind, cfg.gnn.layers, d, gnn_hidden, gnn_rng,
                        cfg.gnn.activation, cfg.gnn.pooling, cfg.gnn.k_pool);

  Rng hc_rng = named_rng(cfg.seed, "init.head_cls");
  st.student.head_cls = init_head<S>(cfg.head, d, hc_rng);
  const int sgc_in = cfg.method == TrainMethod::dino_patch_mean ? d : gnn_hidden;
  Rng hs_rng = named_rng(cfg.seed, "init.head_sgc");
  st.student.head_sgc = init_head<S>(cfg.head, sgc_in, hs_rng);

  st.teacher = st.student;
  st.centers = init_centers<S>(cfg.head.output_dim);
  st.rebuild_registry();
  st.opt.weight_decay = cfg.weight_decay;
  st.opt.init(st.registry);
  st.step = 0;
  st.epochs_done = 0;
  st.lr_schedule = {cfg.base_lr, cfg.final_lr, 0, std::numeric_limits<long>::max()};
}

struct Batch {
  std::vector<const Image*> images;
  std::vector<std::uint64_t> sample_indices;  // dataset positions, for rng
  int epoch = 0;
};

namespace detail {

// Per-image KNN graphs over consecutive row blocks of patch tokens.
template <typename S>
std::vector<KnnGraph> batch_graphs(const Mat<S>& patches, int batch, int n,
                                   const GraphConfig& gc) {
  std::vector<KnnGraph> graphs;
  graphs.reserve(std::size_t(batch));
  for (int b = 0; b < batch; ++b) {
    Mat<S> block = patches.middleRows(Index(b) * n, n);
    KnnGraph g = knn_graph(block, gc.k, gc.metric);
    graphs.push_back(gc.symmetrize ? symmetrized(g) : std::move(g));
  }
  return graphs;
}

}  // namespace detail

struct ViewOutputs {
  int cls_logits = -1;
  int sgc_logits = -1;
};

// Forward for one view on the given tape: class-token logits plus, when the
// method has a second branch, projected pooled-graph (or patch-mean) logits.
// Adjacencies are appended to `adj_storage`, which must outlive the tape
// (deque: growth never invalidates references captured by the tape).
template <typename S, typename Bind>
ViewOutputs view_forward(Tape<S>& t, ModelParams<S>& model, const TrainConfig& cfg,
                         const Mat<S>& patch_matrix, int batch, Bind&& bind,
                         std::deque<BatchAdjacency<S>>* adj_storage) {
  ViewOutputs out;
  const EncoderNodes enc = encode_t(t, model.encoder, patch_matrix, batch, bind);
  out.cls_logits = project_t(t, model.head_cls, enc.cls, bind);

  if (cfg.method == TrainMethod::dino_sgc) {
    const int n = model.encoder.tokens - 1;
    const auto graphs = detail::batch_graphs(t.val(enc.patches), batch, n, cfg.graph);
    int x = enc.patches;
    for (const auto& layer : model.gnn.layers) {
      adj_storage->push_back(build_adjacency<S>(graphs, layer.kind));
      const BatchAdjacency<S>& adj = adj_storage->back();
      const int w = bind(t, layer.weight);
      const int b = bind(t, layer.bias);
      const int msg = t.sparse_aggregate(x, adj);
      int combined;
      switch (layer.kind) {
        case GnnLayerKind::gcn: combined = msg; break;
        case GnnLayerKind::sage: combined = t.concat_cols(x, msg); break;
        default: combined = t.add(x, msg); break;  // gin, epsilon = 0
      }
      x = model.gnn.activation == GnnActivation::relu
              ? t.relu(t.add_rowvec(t.matmul(combined, w), b))
              : t.add_rowvec(t.matmul(combined, w), b);
    }
    const int pooled = pool_t(t, model.gnn, x, batch, n, bind);
    out.sgc_logits = project_t(t, model.head_sgc, pooled, bind);
  } else if (cfg.method == TrainMethod::dino_patch_mean) {
    const int n = model.encoder.tokens - 1;
    const int pooled = t.row_group_mean(enc.patches, n);
    out.sgc_logits = project_t(t, model.head_sgc, pooled, bind);
  }
  return out;
}

// One optimizer step: both views through teacher and student, combined loss,
// backward, AdamW on the student, EMA onto the teacher, center updates.
template <typename S>
MetricsRow train_step(SslState<S>& st, const Batch& batch) {
  const TrainConfig& cfg = st.cfg;
  check(!batch.images.empty(), "train_step: empty batch");
  const int bsz = int(batch.images.size());

  // two augmented views per image, replayable from (seed, epoch, index)
  std::vector<Image> view_a, view_b;
  view_a.reserve(batch.images.size());
  view_b.reserve(batch.images.size());
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    Rng rng = sample_rng(cfg.seed, "aug", std::uint64_t(batch.epoch),
                         batch.sample_indices[i]);
    auto [va, vb] = make_views(*batch.images[i], cfg.aug, rng);
    view_a.push_back(std::move(va));
    view_b.push_back(std::move(vb));
  }
  const ImageBatch<S> ia = to_image_batch<S>(view_a);
  const ImageBatch<S> ib = to_image_batch<S>(view_b);
  const Mat<S> pa = extract_patches(ia, cfg.encoder.patch_size);
  const Mat<S> pb = extract_patches(ib, cfg.encoder.patch_size);

  const auto const_bind = [](Tape<S>& tp, const Mat<S>& m) { return tp.constant(m); };

  // teacher forward: plain values, no gradient structure exists at all
  Mat<S> t_cls[2], t_sgc[2];
  const bool has_sgc_branch = cfg.method != TrainMethod::dino_baseline;
  for (int v = 0; v < 2; ++v) {
    Tape<S> tt;
    std::deque<BatchAdjacency<S>> adj;
    auto outs = view_forward(tt, st.teacher, cfg, v == 0 ? pa : pb, bsz,
                             const_bind, &adj);
    t_cls[v] = tt.val(outs.cls_logits);
    if (has_sgc_branch) t_sgc[v] = tt.val(outs.sgc_logits);
  }

  // sharpened teacher targets under the current centers
  const Mat<S> probs_cls[2] = {
      teacher_probs(t_cls[0], st.centers.cls_center, cfg.distance),
      teacher_probs(t_cls[1], st.centers.cls_center, cfg.distance)};
  Mat<S> probs_sgc[2];
  if (has_sgc_branch) {
    probs_sgc[0] = teacher_probs(t_sgc[0], st.centers.sgc_center, cfg.distance);
    probs_sgc[1] = teacher_probs(t_sgc[1], st.centers.sgc_center, cfg.distance);
  }

  // student forward and loss on one tape
  st.registry.zero_grads();
  Tape<S> ts;
  auto bind = [&st](Tape<S>& tp, const Mat<S>& m) {
    return tp.param(m, st.registry.grad_sink(m));
  };
  std::deque<BatchAdjacency<S>> student_adj;
  const auto sa = view_forward(ts, st.student, cfg, pa, bsz, bind, &student_adj);
  const auto sb = view_forward(ts, st.student, cfg, pb, bsz, bind, &student_adj);

  const S inv_ts = S(1.0 / cfg.distance.student_temp);
  const int ce_a = ts.softmax_cross_entropy(sa.cls_logits, probs_cls[1], inv_ts);
  const int ce_b = ts.softmax_cross_entropy(sb.cls_logits, probs_cls[0], inv_ts);
  const int l_cls = ts.axpby(ce_a, ce_b, S(0.5), S(0.5));

  int loss;
  S l_sgc_value = S(0);
  if (has_sgc_branch) {
    const int se_a = ts.softmax_cross_entropy(sa.sgc_logits, probs_sgc[1], inv_ts);
    const int se_b = ts.softmax_cross_entropy(sb.sgc_logits, probs_sgc[0], inv_ts);
    const int l_sgc = ts.axpby(se_a, se_b, S(0.5), S(0.5));
    l_sgc_value = ts.scalar(l_sgc);
    loss = ts.axpby(l_cls, l_sgc, S(cfg.weights.alpha), S(cfg.weights.beta));
  } else {
    loss = ts.scale(l_cls, S(cfg.weights.alpha));
  }

  MetricsRow row;
  row.step = st.step;
  row.epoch = batch.epoch;
  row.loss_cls = double(ts.scalar(l_cls));
  row.loss_sgc = double(l_sgc_value);
  row.loss_total = double(ts.scalar(loss));
  if (!std::isfinite(row.loss_total) || !std::isfinite(row.loss_cls) ||
      !std::isfinite(row.loss_sgc))
    throw std::runtime_error(
        "non-finite loss at step " + std::to_string(st.step) +
        " (cls=" + std::to_string(row.loss_cls) +
        ", sgc=" + std::to_string(row.loss_sgc) + ")");

  ts.backward(loss);

  row.lr = lr_at(st.step, st.lr_schedule);
  st.opt.step(st.registry, row.lr);

  const double m = st.ema_override >= 0
                       ? st.ema_override
                       : ema_momentum_at(st.step, cfg.ema_momentum, st.total_steps,
                                         cfg.ema_cosine);
  ema_update(st.teacher, st.student, m);
  row.ema_momentum = m;

  // center updates from this step's teacher outputs (both views)
  Mat<S> cls_cat(t_cls[0].rows() + t_cls[1].rows(), t_cls[0].cols());
  cls_cat.topRows(t_cls[0].rows()) = t_cls[0];
  cls_cat.bottomRows(t_cls[1].rows()) = t_cls[1];
  st.centers.cls_center =
      update_center(st.centers.cls_center, cls_cat, cfg.distance.center_momentum);
  if (has_sgc_branch) {
    Mat<S> sgc_cat(t_sgc[0].rows() + t_sgc[1].rows(), t_sgc[0].cols());
    sgc_cat.topRows(t_sgc[0].rows()) = t_sgc[0];
    sgc_cat.bottomRows(t_sgc[1].rows()) = t_sgc[1];
    st.centers.sgc_center =
        update_center(st.centers.sgc_center, sgc_cat, cfg.distance.center_momentum);
  }

  ++st.step;
  check(st.teacher_isolated(), "train_step: teacher leaked into the optimizer");
  return row;
}

// ---- checkpointing ----

template <typename S>
void save_checkpoint(SslState<S>& st, const std::string& config_text,
                     const std::string& path) {
  BlobWriter w(kKindCheckpoint);
  w.add_bytes("config", config_text);
  w.add_i64("meta.step", st.step);
  w.add_i64("meta.epoch", st.epochs_done);
  w.add_i64("meta.seed", std::int64_t(st.cfg.seed));
  w.add_i64("meta.image_size", st.image_size);
  w.add_i64("meta.channels", st.channels);
  w.add_i64("opt.t", st.opt.steps_taken());
  visit_params(st.student, [&](const std::string& name, Mat<S>& v, bool) {
    w.add_mat("student." + name, v);
  });
  visit_params(st.teacher, [&](const std::string& name, Mat<S>& v, bool) {
    w.add_mat("teacher." + name, v);
  });
  w.add_mat("center.cls", st.centers.cls_center);
  w.add_mat("center.sgc", st.centers.sgc_center);
  auto& m = st.opt.first_moments();
  auto& v2 = st.opt.second_moments();
  for (std::size_t i = 0; i < st.registry.size(); ++i) {
    w.add_mat("opt.m." + st.registry.entries()[i].name, m[i]);
    w.add_mat("opt.v." + st.registry.entries()[i].name, v2[i]);
  }
  w.write(path);
}

// Restores parameters, centers and optimizer state into a state that was
// initialized with the same configuration.
template <typename S>
void load_checkpoint(SslState<S>& st, const BlobReader& r) {
  st.step = r.get_i64("meta.step");
  st.epochs_done = int(r.get_i64("meta.epoch"));
  visit_params(st.student, [&](const std::string& name, Mat<S>& v, bool) {
    r.load_into("student." + name, v);
  });
  visit_params(st.teacher, [&](const std::string& name, Mat<S>& v, bool) {
    r.load_into("teacher." + name, v);
  });
  r.load_into("center.cls", st.centers.cls_center);
  r.load_into("center.sgc", st.centers.sgc_center);
  st.opt.set_steps(r.get_i64("opt.t"));
  auto& m = st.opt.first_moments();
  auto& v2 = st.opt.second_moments();
  for (std::size_t i = 0; i < st.registry.size(); ++i) {
    r.load_into("opt.m." + st.registry.entries()[i].name, m[i]);
    r.load_into("opt.v." + st.registry.entries()[i].name, v2[i]);
  }
}

// ---- full training loop ----

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::string final_checkpoint;
};

// Epochs x steps of train_step with shuffled batches, appending one JSONL
// metrics row per step and a checkpoint every `checkpoint_every` epochs.
// `stop_after_epoch` interrupts the session early (schedules still span the
// full config); resuming from epoch e continues with rows identical to an
// uninterrupted run of the same config.
template <typename S>
TrainResult train(SslState<S>& st, const Dataset& data,
                  const std::string& out_dir, const std::string& config_text,
                  std::ostream* progress = nullptr, int stop_after_epoch = -1) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = st.cfg;
  check(data.size() > 0, "train: dataset is empty");
  fs::create_directories(out_dir);

  const int n = data.size();
  const int bs = std::min(cfg.batch_size, n);
  const int steps_per_epoch = std::max(1, n / cfg.batch_size);
  st.lr_schedule = {cfg.base_lr, cfg.final_lr,
                    long(cfg.warmup_epochs) * steps_per_epoch,
                    long(cfg.epochs) * steps_per_epoch};
  st.total_steps = long(cfg.epochs) * steps_per_epoch;

  std::ofstream metrics_out(fs::path(out_dir) / "metrics.jsonl", std::ios::app);
  if (!metrics_out) throw std::runtime_error("train: cannot write metrics log");

  const int last_epoch =
      stop_after_epoch >= 0 ? std::min(stop_after_epoch, cfg.epochs) : cfg.epochs;
  TrainResult result;
  for (int epoch = st.epochs_done; epoch < last_epoch; ++epoch) {
    Rng order_rng(derive_seed(cfg.seed, "order", std::uint64_t(epoch)));
    const std::vector<int> perm = permutation(n, order_rng);
    for (int s = 0; s < steps_per_epoch; ++s) {
      Batch batch;
      batch.epoch = epoch;
      for (int i = 0; i < bs; ++i) {
        const int idx = perm[std::size_t(s) * bs + i];
        batch.images.push_back(&data.images[std::size_t(idx)]);
        batch.sample_indices.push_back(std::uint64_t(idx));
      }
      MetricsRow row = train_step(st, batch);
      metrics_out << row.to_json() << "\n";
      result.metrics.push_back(row);
    }
    metrics_out.flush();
    st.epochs_done = epoch + 1;
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == last_epoch) {
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_epoch_%04d.bin", epoch + 1);
      const std::string path = (fs::path(out_dir) / name).string();
      save_checkpoint(st, config_text, path);
      result.final_checkpoint = path;
    }
    if (progress)
      (*progress) << "epoch " << (epoch + 1) << "/" << cfg.epochs
                  << " loss_total=" << result.metrics.back().loss_total << "\n";
  }
  return result;
}

}  // namespace sgc
