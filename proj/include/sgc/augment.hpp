#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/core/types.hpp"
#include "sgc/vit.hpp"

namespace sgc {

// One image, HWC float pixels in [0, 1] (normalization may shift this).
struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<float> px;

  static Image blank(int h, int w, int c) {
    Image im;
    im.height = h;
    im.width = w;
    im.channels = c;
    im.px.assign(std::size_t(h) * w * c, 0.0f);
    return im;
  }
  float& at(int y, int x, int c) { return px[std::size_t(y * width + x) * channels + c]; }
  float at(int y, int x, int c) const {
    return px[std::size_t(y * width + x) * channels + c];
  }
};

// Two global views; each view applies random resized crop, horizontal flip,
// color jitter, grayscale and blur with the probabilities below.
struct AugmentationConfig {
  int out_size = 32;
  double crop_min_scale = 0.5;
  double crop_max_scale = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  double hflip_prob = 0.5;
  double jitter_prob = 0.8;
  double jitter_strength = 0.4;
  double hue_strength = 0.1;
  double gray_prob = 0.2;
  double blur_prob_a = 1.0;  // student-view convention from the training recipe
  double blur_prob_b = 0.1;
  bool normalize = true;  // (x - 0.5) / 0.5 as the last step

  void validate() const {
    if (out_size < 1) throw ConfigError("aug: out_size must be positive");
    if (crop_min_scale <= 0 || crop_min_scale > crop_max_scale || crop_max_scale > 1.0)
      throw ConfigError("aug: need 0 < crop_min_scale <= crop_max_scale <= 1");
  }

  static AugmentationConfig identity(int size) {
    AugmentationConfig a;
    a.out_size = size;
    a.crop_min_scale = a.crop_max_scale = 1.0;
    a.aspect_min = a.aspect_max = 1.0;
    a.hflip_prob = a.jitter_prob = a.gray_prob = 0.0;
    a.blur_prob_a = a.blur_prob_b = 0.0;
    a.normalize = false;
    return a;
  }
};

// Bilinear resample with half-pixel centers; exact copy when sizes match.
inline Image resize_bilinear(const Image& src, int oh, int ow) {
  if (oh == src.height && ow == src.width) return src;
  Image dst = Image::blank(oh, ow, src.channels);
  const float sy = float(src.height) / float(oh);
  const float sx = float(src.width) / float(ow);
  for (int y = 0; y < oh; ++y) {
    const float fy = std::max(0.0f, (y + 0.5f) * sy - 0.5f);
    const int y0 = std::min(int(fy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float wy = fy - float(y0);
    for (int x = 0; x < ow; ++x) {
      const float fx = std::max(0.0f, (x + 0.5f) * sx - 0.5f);
      const int x0 = std::min(int(fx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const float wx = fx - float(x0);
      for (int c = 0; c < src.channels; ++c) {
        const float top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        const float bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        dst.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

inline Image crop(const Image& src, int top, int left, int h, int w) {
  Image dst = Image::blank(h, w, src.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < src.channels; ++c)
        dst.at(y, x, c) = src.at(top + y, left + x, c);
  return dst;
}

inline void hflip_inplace(Image& im) {
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width / 2; ++x)
      for (int c = 0; c < im.channels; ++c)
        std::swap(im.at(y, x, c), im.at(y, im.width - 1 - x, c));
}

namespace detail {

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  const float d = mx - mn;
  s = mx == 0.0f ? 0.0f : d / mx;
  if (d == 0.0f) {
    h = 0.0f;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0f) / 6.0f;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0f) / 6.0f;
  } else {
    h = ((r - g) / d + 4.0f) / 6.0f;
  }
  if (h < 0) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = h * 6.0f;
  const int i = int(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace detail

inline void color_jitter_inplace(Image& im, float brightness, float contrast,
                                 float saturation, float hue_shift) {
  for (float& v : im.px) v *= brightness;
  float mean_luma = 0.0f;
  const int n = im.height * im.width;
  for (int i = 0; i < n; ++i) {
    if (im.channels == 3)
      mean_luma += 0.299f * im.px[i * 3] + 0.587f * im.px[i * 3 + 1] +
                   0.114f * im.px[i * 3 + 2];
    else
      mean_luma += im.px[std::size_t(i) * im.channels];
  }
  mean_luma /= float(n);
  for (float& v : im.px) v = contrast * v + (1 - contrast) * mean_luma;
  if (im.channels == 3) {
    for (int i = 0; i < n; ++i) {
      float* p = &im.px[std::size_t(i) * 3];
      const float luma = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
      for (int c = 0; c < 3; ++c) p[c] = saturation * p[c] + (1 - saturation) * luma;
      if (hue_shift != 0.0f) {
        float h, s, v;
        detail::rgb_to_hsv(std::clamp(p[0], 0.0f, 1.0f), std::clamp(p[1], 0.0f, 1.0f),
                           std::clamp(p[2], 0.0f, 1.0f), h, s, v);
        h = h + hue_shift;
        h -= std::floor(h);
        detail::hsv_to_rgb(h, s, v, p[0], p[1], p[2]);
      }
    }
  }
  for (float& v : im.px) v = std::clamp(v, 0.0f, 1.0f);
}

inline void grayscale_inplace(Image& im) {
  if (im.channels != 3) return;
  const int n = im.height * im.width;
  for (int i = 0; i < n; ++i) {
    float* p = &im.px[std::size_t(i) * 3];
    const float luma = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    p[0] = p[1] = p[2] = luma;
  }
}

inline void gaussian_blur_inplace(Image& im, float sigma) {
  const int radius = std::max(1, int(2.5f * sigma + 0.5f));
  std::vector<float> kernel(std::size_t(2 * radius + 1), 0.0f);
  float sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[std::size_t(i + radius)] = std::exp(-0.5f * (i * i) / (sigma * sigma));
    sum += kernel[std::size_t(i + radius)];
  }
  for (float& k : kernel) k /= sum;
  Image tmp = im;
  // horizontal
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int xi = std::clamp(x + i, 0, im.width - 1);
          acc += kernel[std::size_t(i + radius)] * im.at(y, xi, c);
        }
        tmp.at(y, x, c) = acc;
      }
  // vertical
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int yi = std::clamp(y + i, 0, im.height - 1);
          acc += kernel[std::size_t(i + radius)] * tmp.at(yi, x, c);
        }
        im.at(y, x, c) = acc;
      }
}

// Crop-box sampling: rejection over (area scale, log-uniform aspect), center
// fallback after ten tries.
inline Image random_resized_crop(const Image& im, const AugmentationConfig& cfg,
                                 Rng& rng) {
  const int H = im.height, W = im.width;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = double(H) * W * rng.uniform(cfg.crop_min_scale, cfg.crop_max_scale);
    const double ratio =
        std::exp(rng.uniform(std::log(cfg.aspect_min), std::log(cfg.aspect_max)));
    const int w = int(std::sqrt(area * ratio) + 0.5);
    const int h = int(std::sqrt(area / ratio) + 0.5);
    if (w > 0 && h > 0 && w <= W && h <= H) {
      const int top = int(rng.below(std::uint64_t(H - h + 1)));
      const int left = int(rng.below(std::uint64_t(W - w + 1)));
      return resize_bilinear(crop(im, top, left, h, w), cfg.out_size, cfg.out_size);
    }
  }
  const int side = std::min(H, W);
  return resize_bilinear(crop(im, (H - side) / 2, (W - side) / 2, side, side),
                         cfg.out_size, cfg.out_size);
}

inline Image augment_view(const Image& im, const AugmentationConfig& cfg,
                          double blur_prob, Rng& rng) {
  Image v = random_resized_crop(im, cfg, rng);
  if (cfg.hflip_prob > 0 && rng.bernoulli(cfg.hflip_prob)) hflip_inplace(v);
  if (cfg.jitter_prob > 0 && rng.bernoulli(cfg.jitter_prob)) {
    const float s = float(cfg.jitter_strength);
    const float b = float(rng.uniform(std::max(0.0f, 1 - s), 1 + s));
    const float c = float(rng.uniform(std::max(0.0f, 1 - s), 1 + s));
    const float sat = float(rng.uniform(std::max(0.0f, 1 - s), 1 + s));
    const float h = float(rng.uniform(-cfg.hue_strength, cfg.hue_strength));
    color_jitter_inplace(v, b, c, sat, h);
  }
  if (cfg.gray_prob > 0 && rng.bernoulli(cfg.gray_prob)) grayscale_inplace(v);
  if (blur_prob > 0 && rng.bernoulli(blur_prob))
    gaussian_blur_inplace(v, float(rng.uniform(0.1, 2.0)));
  if (cfg.normalize)
    for (float& p : v.px) p = (p - 0.5f) * 2.0f;
  return v;
}

// Two independently augmented views of one image; deterministic given the
// rng state (view a consumes first, then view b).
inline std::pair<Image, Image> make_views(const Image& im,
                                          const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  Image a = augment_view(im, cfg, cfg.blur_prob_a, rng);
  Image b = augment_view(im, cfg, cfg.blur_prob_b, rng);
  return {std::move(a), std::move(b)};
}

template <typename S>
ImageBatch<S> to_image_batch(const std::vector<Image>& images) {
  check(!images.empty(), "to_image_batch: empty image list");
  const Image& first = images.front();
  ImageBatch<S> batch;
  batch.batch = int(images.size());
  batch.height = first.height;
  batch.width = first.width;
  batch.channels = first.channels;
  batch.pixels.resize(batch.batch, Index(first.px.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    check(images[i].height == first.height && images[i].width == first.width &&
              images[i].channels == first.channels,
          "to_image_batch: mixed image shapes");
    for (std::size_t j = 0; j < images[i].px.size(); ++j)
      batch.pixels(Index(i), Index(j)) = S(images[i].px[j]);
  }
  return batch;
}

}  // namespace sgc
