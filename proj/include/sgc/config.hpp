#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/dataset.hpp"
#include "sgc/eval.hpp"
#include "sgc/train.hpp"

namespace sgc {

// Everything one run needs: pretraining, dataset and probe settings.
struct FullConfig {
  TrainConfig train;
  DatasetSpec data;
  ProbeConfig probe;
  bool probe_teacher = true;  // probe the EMA network by default

  void validate() const {
    train.validate();
    probe.validate();
    if (data.kind == DatasetSpec::Kind::synthetic_clusters) data.synth.validate();
  }
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline double parse_num(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline int parse_int(const std::string& v, const std::string& key) {
  const double d = parse_num(v, key);
  if (d != std::floor(d))
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return int(d);
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(item, key));
  }
  return out;
}

inline std::string fmt_num(double d) {
  if (d == std::floor(d) && std::abs(d) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", d);
    return buf;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", d);
  return buf;
}

struct KeyHandler {
  std::function<void(FullConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const FullConfig&)> get;
  const char* comment = nullptr;  // appended to the normalized dump
};

inline const std::vector<std::pair<std::string, KeyHandler>>& key_table() {
  using H = KeyHandler;
  static const std::vector<std::pair<std::string, KeyHandler>> table = {
      {"run.seed",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          const double d = parse_num(v, k);
          c.train.seed = std::uint64_t(d);
          c.probe.seed = std::uint64_t(d);
        },
        [](const FullConfig& c) { return std::to_string(c.train.seed); }}},
      {"run.method",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          if (v == "dino_baseline") c.train.method = TrainMethod::dino_baseline;
          else if (v == "dino_sgc") c.train.method = TrainMethod::dino_sgc;
          else if (v == "dino_patch_mean") c.train.method = TrainMethod::dino_patch_mean;
          else throw ConfigError("config: key '" + k + "' expects dino_baseline|dino_sgc|dino_patch_mean");
        },
        [](const FullConfig& c) { return std::string(method_name(c.train.method)); }}},
      {"data.kind",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          if (v == "synthetic_clusters") c.data.kind = DatasetSpec::Kind::synthetic_clusters;
          else if (v == "image_folder") c.data.kind = DatasetSpec::Kind::image_folder;
          else throw ConfigError("config: key '" + k + "' expects synthetic_clusters|image_folder");
        },
        [](const FullConfig& c) {
          return std::string(c.data.kind == DatasetSpec::Kind::image_folder
                                 ? "image_folder"
                                 : "synthetic_clusters");
        }}},
      {"data.root",
       H{[](FullConfig& c, const std::string& v, const std::string&) { c.data.root = v; },
        [](const FullConfig& c) { return c.data.root; }}},
      {"data.classes",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.data.synth.num_classes = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.data.synth.num_classes); }}},
      {"data.per_class",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.data.synth.samples_per_class = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.data.synth.samples_per_class); }}},
      {"data.test_per_class",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.data.synth.test_samples_per_class = parse_int(v, k);
        },
        [](const FullConfig& c) {
          return std::to_string(c.data.synth.test_samples_per_class);
        }}},
      {"data.image_size",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.data.synth.image_size = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.data.synth.image_size); }}},
      {"data.noise",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.data.synth.noise = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.data.synth.noise); }}},
      {"encoder.patch",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.encoder.patch_size = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.encoder.patch_size); }}},
      {"encoder.dim",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.encoder.embed_dim = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.encoder.embed_dim); }}},
      {"encoder.depth",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.encoder.depth = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.encoder.depth); }}},
      {"encoder.heads",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.encoder.heads = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.encoder.heads); }}},
      {"encoder.mlp_ratio",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.encoder.mlp_ratio = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.encoder.mlp_ratio); }}},
      {"graph.k",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.graph.k = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.graph.k); },
        "neighbors per patch token"}},
      {"graph.metric",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          if (v == "euclidean") c.train.graph.metric = DistanceMetric::euclidean;
          else if (v == "cosine") c.train.graph.metric = DistanceMetric::cosine;
          else throw ConfigError("config: key '" + k + "' expects euclidean|cosine");
        },
        [](const FullConfig& c) {
          return std::string(c.train.graph.metric == DistanceMetric::cosine
                                 ? "cosine"
                                 : "euclidean");
        }}},
      {"graph.symmetrize",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.graph.symmetrize = parse_bool(v, k);
        },
        [](const FullConfig& c) {
          return std::string(c.train.graph.symmetrize ? "true" : "false");
        }}},
      {"gnn.layers",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.gnn.layers = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.gnn.layers); }}},
      {"gnn.kind",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          if (v == "gcn") c.train.gnn.kind = GnnLayerKind::gcn;
          else if (v == "sage") c.train.gnn.kind = GnnLayerKind::sage;
          else if (v == "gin") c.train.gnn.kind = GnnLayerKind::gin;
          else throw ConfigError("config: key '" + k + "' expects gcn|sage|gin");
        },
        [](const FullConfig& c) {
          switch (c.train.gnn.kind) {
            case GnnLayerKind::sage: return std::string("sage");
            case GnnLayerKind::gin: return std::string("gin");
            default: return std::string("gcn");
          }
        }}},
      {"gnn.hidden",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.gnn.hidden = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.gnn.hidden); },
        "0 uses encoder.dim"}},
      {"gnn.activation",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          if (v == "relu") c.train.gnn.activation = GnnActivation::relu;
          else if (v == "identity") c.train.gnn.activation = GnnActivation::identity;
          else throw ConfigError("config: key '" + k + "' expects relu|identity");
        },
        [](const FullConfig& c) {
          return std::string(c.train.gnn.activation == GnnActivation::identity
                                 ? "identity"
                                 : "relu");
        }}},
      {"gnn.pooling",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          if (v == "global_mean") c.train.gnn.pooling = PoolingKind::global_mean;
          else if (v == "topk_score") c.train.gnn.pooling = PoolingKind::topk_score;
          else throw ConfigError("config: key '" + k + "' expects global_mean|topk_score");
        },
        [](const FullConfig& c) {
          return std::string(c.train.gnn.pooling == PoolingKind::topk_score
                                 ? "topk_score"
                                 : "global_mean");
        }}},
      {"gnn.k_pool",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.gnn.k_pool = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.gnn.k_pool); }}},
      {"head.hidden",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.head.hidden = parse_int_list(v, k);
        },
        [](const FullConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.train.head.hidden.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(c.train.head.hidden[i]);
          }
          return out;
        }}},
      {"head.bottleneck",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.head.bottleneck = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.head.bottleneck); }}},
      {"head.output_dim",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.head.output_dim = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.head.output_dim); },
        "desk default; full-scale runs use 65536"}},
      {"loss.alpha",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.weights.alpha = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.weights.alpha); }}},
      {"loss.beta",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.weights.beta = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.weights.beta); }}},
      {"loss.student_temp",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.distance.student_temp = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.distance.student_temp); }}},
      {"loss.teacher_temp",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.distance.teacher_temp = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.distance.teacher_temp); }}},
      {"loss.center_momentum",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.distance.center_momentum = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.distance.center_momentum); }}},
      {"loss.plain_kl",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.distance.plain_kl = parse_bool(v, k);
        },
        [](const FullConfig& c) {
          return std::string(c.train.distance.plain_kl ? "true" : "false");
        }}},
      {"train.epochs",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.epochs = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.epochs); }}},
      {"train.batch_size",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.batch_size = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.batch_size); }}},
      {"train.base_lr",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.base_lr = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.base_lr); }}},
      {"train.final_lr",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.final_lr = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.final_lr); }}},
      {"train.warmup_epochs",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.warmup_epochs = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.warmup_epochs); }}},
      {"train.weight_decay",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.weight_decay = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.weight_decay); }}},
      {"train.ema_momentum",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.ema_momentum = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.ema_momentum); }}},
      {"train.ema_cosine",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.ema_cosine = parse_bool(v, k);
        },
        [](const FullConfig& c) {
          return std::string(c.train.ema_cosine ? "true" : "false");
        }}},
      {"train.checkpoint_every",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.checkpoint_every = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.checkpoint_every); }}},
      {"aug.out_size",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.out_size = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.train.aug.out_size); },
        "0 uses data.image_size"}},
      {"aug.crop_min",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.crop_min_scale = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.crop_min_scale); }}},
      {"aug.crop_max",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.crop_max_scale = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.crop_max_scale); }}},
      {"aug.hflip_prob",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.hflip_prob = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.hflip_prob); }}},
      {"aug.jitter_prob",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.jitter_prob = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.jitter_prob); }}},
      {"aug.jitter_strength",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.jitter_strength = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.jitter_strength); }}},
      {"aug.hue_strength",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.hue_strength = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.hue_strength); }}},
      {"aug.gray_prob",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.gray_prob = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.gray_prob); }}},
      {"aug.blur_prob_a",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.blur_prob_a = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.blur_prob_a); }}},
      {"aug.blur_prob_b",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.blur_prob_b = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.train.aug.blur_prob_b); }}},
      {"aug.normalize",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.train.aug.normalize = parse_bool(v, k);
        },
        [](const FullConfig& c) {
          return std::string(c.train.aug.normalize ? "true" : "false");
        }}},
      {"probe.epochs",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.probe.epochs = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.probe.epochs); }}},
      {"probe.batch_size",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.probe.batch_size = parse_int(v, k);
        },
        [](const FullConfig& c) { return std::to_string(c.probe.batch_size); }}},
      {"probe.lr",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.probe.lr = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.probe.lr); }}},
      {"probe.momentum",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.probe.momentum = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.probe.momentum); }}},
      {"probe.weight_decay",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.probe.weight_decay = parse_num(v, k);
        },
        [](const FullConfig& c) { return fmt_num(c.probe.weight_decay); }}},
      {"probe.cosine_schedule",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.probe.cosine_schedule = parse_bool(v, k);
        },
        [](const FullConfig& c) {
          return std::string(c.probe.cosine_schedule ? "true" : "false");
        }}},
      {"probe.augment",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          c.probe.augment_train = parse_bool(v, k);
        },
        [](const FullConfig& c) {
          return std::string(c.probe.augment_train ? "true" : "false");
        }}},
      {"probe.network",
       H{[](FullConfig& c, const std::string& v, const std::string& k) {
          if (v == "teacher") c.probe_teacher = true;
          else if (v == "student") c.probe_teacher = false;
          else throw ConfigError("config: key '" + k + "' expects teacher|student");
        },
        [](const FullConfig& c) {
          return std::string(c.probe_teacher ? "teacher" : "student");
        }}},
  };
  return table;
}

}  // namespace cfgdetail

// Parses "key = value" lines ('#' comments, blank lines allowed), rejecting
// unknown keys, filling defaults, then validating every module invariant.
inline FullConfig parse_config(const std::string& text) {
  FullConfig cfg;
  std::map<std::string, const cfgdetail::KeyHandler*> handlers;
  for (const auto& [key, h] : cfgdetail::key_table()) handlers[key] = &h;

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = cfgdetail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " is not of the form key = value");
    const std::string key = cfgdetail::trim(line.substr(0, eq));
    const std::string value = cfgdetail::trim(line.substr(eq + 1));
    auto it = handlers.find(key);
    if (it == handlers.end())
      throw ConfigError("config: unknown key '" + key + "' at line " +
                        std::to_string(lineno));
    it->second->set(cfg, value, key);
  }
  cfg.validate();
  return cfg;
}

// Normalized dump: every key in table order with its effective value.
// parse(dump(parse(text))) == parse(text).
inline std::string dump_config(const FullConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& [key, h] : cfgdetail::key_table()) {
    const std::string sec = key.substr(0, key.find('.'));
    if (sec != section) {
      if (!out.empty()) out += "\n";
      section = sec;
    }
    out += key + " = " + h.get(cfg);
    if (h.comment) out += "  # " + std::string(h.comment);
    out += "\n";
  }
  return out;
}

inline std::uint64_t config_digest(const FullConfig& cfg) {
  const std::string d = dump_config(cfg);
  return fnv1a64(d.data(), d.size());
}

inline std::string digest_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Architecture fields that must match for a checkpoint to be resumable.
inline void check_resume_compatible(const FullConfig& current,
                                    const FullConfig& saved) {
  for (const auto& [key, h] : cfgdetail::key_table()) {
    const std::string sec = key.substr(0, key.find('.'));
    if (sec != "encoder" && sec != "gnn" && sec != "head" && sec != "graph" &&
        key != "run.method")
      continue;
    if (h.get(current) != h.get(saved))
      throw ConfigError("resume: config mismatch on '" + key + "' (checkpoint has " +
                        h.get(saved) + ", current config has " + h.get(current) + ")");
  }
}

}  // namespace sgc
