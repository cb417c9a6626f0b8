#pragma once

#include <string>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/core/tape.hpp"
#include "sgc/core/types.hpp"

namespace sgc {

struct EncoderConfig {
  int patch_size = 4;
  int embed_dim = 192;
  int depth = 4;
  int heads = 3;
  double mlp_ratio = 4.0;

  int mlp_dim() const { return int(mlp_ratio * embed_dim + 0.5); }

  void validate() const {
    if (patch_size < 1 || embed_dim < 1 || depth < 1 || heads < 1)
      throw ConfigError("encoder: patch_size, embed_dim, depth, heads must be positive");
    if (embed_dim % heads != 0)
      throw ConfigError("encoder: embed_dim must be divisible by heads");
  }
};

// Pixels live in one row per image, HWC order.
template <typename S>
struct ImageBatch {
  int batch = 0, height = 0, width = 0, channels = 0;
  Mat<S> pixels;

  void validate() const {
    check(pixels.rows() == batch && pixels.cols() == Index(height) * width * channels,
          "ImageBatch: pixel buffer shape mismatch");
    check(pixels.allFinite(), "ImageBatch: pixel values must be finite");
  }
};

inline int patch_count(const EncoderConfig& cfg, int height, int width) {
  if (height % cfg.patch_size != 0 || width % cfg.patch_size != 0)
    throw ShapeError("patchify: image " + std::to_string(height) + "x" +
                     std::to_string(width) + " not divisible by patch size " +
                     std::to_string(cfg.patch_size));
  return (height / cfg.patch_size) * (width / cfg.patch_size);
}

template <typename S>
struct EncoderBlock {
  Mat<S> ln1_gain, ln1_bias;
  Mat<S> qkv_weight, qkv_bias;    // (D x 3D)
  Mat<S> proj_weight, proj_bias;  // (D x D)
  Mat<S> ln2_gain, ln2_bias;
  Mat<S> fc1_weight, fc1_bias;    // (D x mlp)
  Mat<S> fc2_weight, fc2_bias;    // (mlp x D)
};

template <typename S>
struct EncoderParams {
  EncoderConfig cfg;
  int tokens = 0;  // 1 + patches; fixed by the image size at init
  Mat<S> patch_weight, patch_bias;  // (P*P*C x D), (1 x D)
  Mat<S> cls_token;                 // (1 x D)
  Mat<S> pos_embed;                 // (tokens x D)
  std::vector<EncoderBlock<S>> blocks;
  Mat<S> norm_gain, norm_bias;      // final layer norm
};

template <typename S>
EncoderParams<S> init_encoder(const EncoderConfig& cfg, int height, int width,
                              int channels, Rng& rng) {
  cfg.validate();
  const int n = patch_count(cfg, height, width);
  const int d = cfg.embed_dim;
  EncoderParams<S> p;
  p.cfg = cfg;
  p.tokens = 1 + n;
  const int pd = cfg.patch_size * cfg.patch_size * channels;
  p.patch_weight.resize(pd, d);
  fill_trunc_normal(p.patch_weight, rng, 0.02);
  p.patch_bias = Mat<S>::Zero(1, d);
  p.cls_token.resize(1, d);
  fill_trunc_normal(p.cls_token, rng, 0.02);
  p.pos_embed.resize(p.tokens, d);
  fill_trunc_normal(p.pos_embed, rng, 0.02);
  const int m = cfg.mlp_dim();
  for (int bidx = 0; bidx < cfg.depth; ++bidx) {
    EncoderBlock<S> b;
    b.ln1_gain = Mat<S>::Ones(1, d);
    b.ln1_bias = Mat<S>::Zero(1, d);
    b.qkv_weight.resize(d, 3 * d);
    fill_trunc_normal(b.qkv_weight, rng, 0.02);
    b.qkv_bias = Mat<S>::Zero(1, 3 * d);
    b.proj_weight.resize(d, d);
    fill_trunc_normal(b.proj_weight, rng, 0.02);
    b.proj_bias = Mat<S>::Zero(1, d);
    b.ln2_gain = Mat<S>::Ones(1, d);
    b.ln2_bias = Mat<S>::Zero(1, d);
    b.fc1_weight.resize(d, m);
    fill_trunc_normal(b.fc1_weight, rng, 0.02);
    b.fc1_bias = Mat<S>::Zero(1, m);
    b.fc2_weight.resize(m, d);
    fill_trunc_normal(b.fc2_weight, rng, 0.02);
    b.fc2_bias = Mat<S>::Zero(1, d);
    p.blocks.push_back(std::move(b));
  }
  p.norm_gain = Mat<S>::Ones(1, d);
  p.norm_bias = Mat<S>::Zero(1, d);
  return p;
}

// Flattens each P x P patch (row-major patch grid, then y, x, channel within
// the patch) into one row: (B*N x P*P*C).
template <typename S>
Mat<S> extract_patches(const ImageBatch<S>& images, int patch) {
  const int gh = images.height / patch, gw = images.width / patch;
  const int n = gh * gw;
  const int c = images.channels;
  Mat<S> out(Index(images.batch) * n, Index(patch) * patch * c);
  for (int b = 0; b < images.batch; ++b) {
    const auto row = images.pixels.row(b);
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px) {
        const Index r = Index(b) * n + Index(py) * gw + px;
        Index col = 0;
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x)
            for (int ch = 0; ch < c; ++ch)
              out(r, col++) = row[((py * patch + y) * images.width +
                                   (px * patch + x)) * c + ch];
      }
  }
  return out;
}

template <typename S>
void validate_encoder_shapes(const EncoderParams<S>& p) {
  const int d = p.cfg.embed_dim;
  check(p.cls_token.cols() == d && p.pos_embed.cols() == d &&
            p.pos_embed.rows() == p.tokens && p.patch_weight.cols() == d &&
            int(p.blocks.size()) == p.cfg.depth,
        "encoder: parameter shapes inconsistent with config");
  const int m = p.cfg.mlp_dim();
  for (const auto& b : p.blocks)
    check(b.qkv_weight.rows() == d && b.qkv_weight.cols() == 3 * d &&
              b.proj_weight.rows() == d && b.proj_weight.cols() == d &&
              b.fc1_weight.rows() == d && b.fc1_weight.cols() == m &&
              b.fc2_weight.rows() == m && b.fc2_weight.cols() == d,
          "encoder: block parameter shapes inconsistent with config");
}

struct EncoderNodes {
  int cls = -1;      // (B x D)
  int patches = -1;  // (B*N x D)
};

// Forward on the tape. `patch_matrix` is the pre-extracted (B*N x P*P*C)
// pixel matrix and must outlive the tape. When `block_tokens` is given, the
// post-block token ids are collected for the probe path.
template <typename S, typename Bind>
EncoderNodes encode_t(Tape<S>& t, const EncoderParams<S>& p,
                      const Mat<S>& patch_matrix, int batch, Bind&& bind,
                      std::vector<int>* block_tokens = nullptr) {
  validate_encoder_shapes(p);
  const int n = p.tokens - 1;
  const int tok = p.tokens;
  check(patch_matrix.rows() == Index(batch) * n &&
            patch_matrix.cols() == p.patch_weight.rows(),
        "encode: patch matrix shape mismatch (image size vs encoder init?)");

  const int px = t.constant(patch_matrix);
  const int pe = t.add_rowvec(t.matmul(px, bind(t, p.patch_weight)),
                              bind(t, p.patch_bias));
  const int cls_b = t.gather_rows(bind(t, p.cls_token), std::vector<int>(batch, 0));
  // interleave to [cls, patch_0 .. patch_{n-1}] per image
  std::vector<int> order(std::size_t(batch) * tok);
  for (int b = 0; b < batch; ++b) {
    order[std::size_t(b) * tok] = b;
    for (int q = 0; q < n; ++q)
      order[std::size_t(b) * tok + 1 + q] = batch + b * n + q;
  }
  int x = t.gather_rows(t.concat_rows(cls_b, pe), std::move(order));
  x = t.add_tiled_rows(x, bind(t, p.pos_embed), batch);

  for (const auto& blk : p.blocks) {
    int h = t.layer_norm(x, bind(t, blk.ln1_gain), bind(t, blk.ln1_bias));
    const int qkv = t.add_rowvec(t.matmul(h, bind(t, blk.qkv_weight)),
                                 bind(t, blk.qkv_bias));
    const int d = p.cfg.embed_dim;
    const int att = t.attention(t.slice_cols(qkv, 0, d), t.slice_cols(qkv, d, d),
                                t.slice_cols(qkv, 2 * d, d), batch, tok,
                                p.cfg.heads);
    x = t.add(x, t.add_rowvec(t.matmul(att, bind(t, blk.proj_weight)),
                              bind(t, blk.proj_bias)));
    h = t.layer_norm(x, bind(t, blk.ln2_gain), bind(t, blk.ln2_bias));
    h = t.gelu(t.add_rowvec(t.matmul(h, bind(t, blk.fc1_weight)),
                            bind(t, blk.fc1_bias)));
    x = t.add(x, t.add_rowvec(t.matmul(h, bind(t, blk.fc2_weight)),
                              bind(t, blk.fc2_bias)));
    if (block_tokens) block_tokens->push_back(x);
  }
  const int y = t.layer_norm(x, bind(t, p.norm_gain), bind(t, p.norm_bias));

  std::vector<int> cls_rows(std::size_t(batch), 0);
  std::vector<int> patch_rows(std::size_t(batch) * n);
  for (int b = 0; b < batch; ++b) {
    cls_rows[std::size_t(b)] = b * tok;
    for (int q = 0; q < n; ++q) patch_rows[std::size_t(b) * n + q] = b * tok + 1 + q;
  }
  EncoderNodes nodes;
  nodes.cls = t.gather_rows(y, std::move(cls_rows));
  nodes.patches = t.gather_rows(y, std::move(patch_rows));
  return nodes;
}

// Per-token outputs for one batch, plus the class-token output of every
// block (final layer norm applied) for probing.
template <typename S>
struct TokenSequence {
  int batch = 0;
  int n_patches = 0;
  Mat<S> cls;                       // (B x D)
  Mat<S> patches;                   // (B*N x D)
  std::vector<Mat<S>> per_block_cls;  // depth entries of (B x D)
};

// (B*N x D) patch embeddings with positional embeddings added.
template <typename S>
Mat<S> patchify(const EncoderParams<S>& p, const ImageBatch<S>& images) {
  images.validate();
  const int n = patch_count(p.cfg, images.height, images.width);
  check(1 + n == p.tokens, "patchify: encoder was initialized for a different image size");
  const Mat<S> pm = extract_patches(images, p.cfg.patch_size);
  Mat<S> emb = pm * p.patch_weight;
  emb.rowwise() += p.patch_bias.row(0);
  for (int b = 0; b < images.batch; ++b)
    emb.middleRows(Index(b) * n, n) += p.pos_embed.bottomRows(n);
  return emb;
}

template <typename S>
TokenSequence<S> encode(const EncoderParams<S>& p, const ImageBatch<S>& images) {
  images.validate();
  const int n = patch_count(p.cfg, images.height, images.width);
  check(1 + n == p.tokens, "encode: encoder was initialized for a different image size");
  const Mat<S> pm = extract_patches(images, p.cfg.patch_size);
  Tape<S> t;
  const auto bind = [](Tape<S>& tp, const Mat<S>& m) { return tp.constant(m); };
  std::vector<int> block_tokens;
  const EncoderNodes nodes = encode_t(t, p, pm, images.batch, bind, &block_tokens);

  TokenSequence<S> seq;
  seq.batch = images.batch;
  seq.n_patches = n;
  seq.cls = t.val(nodes.cls);
  seq.patches = t.val(nodes.patches);
  std::vector<int> cls_rows(std::size_t(images.batch), 0);
  for (int b = 0; b < images.batch; ++b) cls_rows[std::size_t(b)] = b * p.tokens;
  for (const int bt : block_tokens) {
    const int ln = t.layer_norm(bt, t.constant(p.norm_gain), t.constant(p.norm_bias));
    seq.per_block_cls.push_back(t.val(t.gather_rows(ln, cls_rows)));
  }
  return seq;
}

template <typename S>
void visit_params(EncoderParams<S>& p, const std::string& prefix, auto&& fn) {
  fn(prefix + ".patch.weight", p.patch_weight, true);
  fn(prefix + ".patch.bias", p.patch_bias, false);
  fn(prefix + ".cls", p.cls_token, true);
  fn(prefix + ".pos", p.pos_embed, true);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string bp = prefix + ".block" + std::to_string(i);
    fn(bp + ".ln1.gain", b.ln1_gain, false);
    fn(bp + ".ln1.bias", b.ln1_bias, false);
    fn(bp + ".qkv.weight", b.qkv_weight, true);
    fn(bp + ".qkv.bias", b.qkv_bias, false);
    fn(bp + ".proj.weight", b.proj_weight, true);
    fn(bp + ".proj.bias", b.proj_bias, false);
    fn(bp + ".ln2.gain", b.ln2_gain, false);
    fn(bp + ".ln2.bias", b.ln2_bias, false);
    fn(bp + ".fc1.weight", b.fc1_weight, true);
    fn(bp + ".fc1.bias", b.fc1_bias, false);
    fn(bp + ".fc2.weight", b.fc2_weight, true);
    fn(bp + ".fc2.bias", b.fc2_bias, false);
  }
  fn(prefix + ".norm.gain", p.norm_gain, false);
  fn(prefix + ".norm.bias", p.norm_bias, false);
}

}  // namespace sgc
