#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sgc/augment.hpp"
#include "sgc/core/rng.hpp"
#include "sgc/core/types.hpp"

namespace sgc {

struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  int skipped_files = 0;

  int size() const { return int(images.size()); }
  int num_classes() const { return int(class_names.size()); }
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

// ---- PPM/PGM io (binary P6 / P5, maxval 255) ----

namespace detail {

inline bool ppm_token(std::istream& is, std::string& tok) {
  tok.clear();
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      while (is.get(ch) && ch != '\n') {}
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) return true;
      continue;
    }
    tok.push_back(ch);
  }
  return !tok.empty();
}

}  // namespace detail

inline std::optional<Image> read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  std::string magic, ws, hs, maxs;
  if (!detail::ppm_token(is, magic) || (magic != "P6" && magic != "P5")) return std::nullopt;
  if (!detail::ppm_token(is, ws) || !detail::ppm_token(is, hs) ||
      !detail::ppm_token(is, maxs))
    return std::nullopt;
  int w = 0, h = 0, maxv = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxv = std::stoi(maxs);
  } catch (...) {
    return std::nullopt;
  }
  if (w < 1 || h < 1 || maxv < 1 || maxv > 255) return std::nullopt;
  const int c = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> buf(std::size_t(w) * h * c);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (std::size_t(is.gcount()) != buf.size()) return std::nullopt;  // truncated
  Image im = Image::blank(h, w, c);
  for (std::size_t i = 0; i < buf.size(); ++i) im.px[i] = float(buf[i]) / float(maxv);
  return im;
}

inline void write_ppm(const Image& im, const std::filesystem::path& path) {
  check(im.channels == 3 || im.channels == 1, "write_ppm: need 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  os << (im.channels == 3 ? "P6" : "P5") << "\n"
     << im.width << " " << im.height << "\n255\n";
  for (const float v : im.px) {
    const float cl = std::clamp(v, 0.0f, 1.0f);
    os.put(char(int(cl * 255.0f + 0.5f)));
  }
}

// ---- directory-of-images loader ----

// Layout: root/split/class_name/files. Classes and files are ordered
// lexicographically so labels are stable; undecodable files are skipped with
// a warning and counted.
inline Dataset load_image_folder(const std::filesystem::path& root,
                                 const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path dir = root / split;
  if (!fs::is_directory(dir))
    throw std::runtime_error("dataset not found: " + dir.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw std::runtime_error("dataset has no class directories: " + dir.string());

  Dataset ds;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    ds.class_names.push_back(class_dirs[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[label]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw std::runtime_error("empty class directory: " + class_dirs[label].string());
    for (const auto& f : files) {
      auto im = read_ppm(f);
      if (!im) {
        std::cerr << "warning: skipping undecodable file " << f.string() << "\n";
        ++ds.skipped_files;
        continue;
      }
      ds.images.push_back(std::move(*im));
      ds.labels.push_back(int(label));
    }
  }
  return ds;
}

// ---- synthetic class-conditional generator ----

struct SyntheticSpec {
  int num_classes = 10;
  int samples_per_class = 300;
  int test_samples_per_class = 60;
  int image_size = 32;
  double noise = 0.18;

  void validate() const {
    if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
    if (samples_per_class < 1 || image_size < 4)
      throw ConfigError("synthetic: invalid samples_per_class or image_size");
    if (noise < 0) throw ConfigError("synthetic: noise must be >= 0");
  }
};

namespace detail {

// Class identity is carried by a full-image hue plus an oriented stripe
// pattern, both of which survive any crop covering half the image. Hue,
// saturation, brightness, stripe phase/angle and pixel noise all vary per
// sample, so neighboring classes overlap and the task stays off the ceiling
// at desk scale.
inline Image synth_image(const SyntheticSpec& spec, int cls, Rng& rng) {
  const int s = spec.image_size;
  Image im = Image::blank(s, s, 3);
  const double class_gap = 1.0 / double(spec.num_classes);
  double hue = double(cls) * class_gap + rng.normal() * 0.4 * class_gap;
  hue -= std::floor(hue);
  float br, bg, bb;
  sgc::detail::hsv_to_rgb(float(hue), float(rng.uniform(0.55, 0.95)),
                          float(rng.uniform(0.55, 0.95)), br, bg, bb);
  const double theta =
      M_PI * double(cls) / double(spec.num_classes) + rng.normal() * 0.06;
  const double freq = 3.0 + double(cls % 3) * 2.0;
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double u = double(x) / s, v = double(y) / s;
      const float stripe =
          0.5f + 0.5f * float(std::sin(2.0 * M_PI * freq * (u * ct + v * st) + phase));
      const float base[3] = {br, bg, bb};
      for (int c = 0; c < 3; ++c) {
        const float val = base[c] * (0.6f + 0.4f * stripe) +
                          float(spec.noise * rng.normal());
        im.at(y, x, c) = std::clamp(val, 0.0f, 1.0f);
      }
    }
  return im;
}

inline Dataset synth_split(const SyntheticSpec& spec, int per_class,
                           std::uint64_t seed, const std::string& tag) {
  Dataset ds;
  for (int c = 0; c < spec.num_classes; ++c)
    ds.class_names.push_back("class" + std::to_string(c));
  for (int c = 0; c < spec.num_classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      Rng rng = sample_rng(seed, tag, std::uint64_t(c), std::uint64_t(i));
      ds.images.push_back(synth_image(spec, c, rng));
      ds.labels.push_back(c);
    }
  return ds;
}

}  // namespace detail

inline SplitDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SplitDataset out;
  out.train = detail::synth_split(spec, spec.samples_per_class, seed, "synth.train");
  out.test = detail::synth_split(spec, spec.test_samples_per_class, seed, "synth.test");
  return out;
}

struct DatasetSpec {
  enum class Kind { image_folder, synthetic_clusters };
  Kind kind = Kind::synthetic_clusters;
  std::string root;
  SyntheticSpec synth;
};

inline SplitDataset load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == DatasetSpec::Kind::image_folder) {
    SplitDataset out;
    out.train = load_image_folder(spec.root, "train");
    out.test = load_image_folder(spec.root, "test");
    return out;
  }
  return generate_synthetic(spec.synth, seed);
}

}  // namespace sgc
