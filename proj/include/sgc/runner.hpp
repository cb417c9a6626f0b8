#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "sgc/config.hpp"
#include "sgc/eval.hpp"
#include "sgc/sweep.hpp"
#include "sgc/train.hpp"

namespace sgc {

// End-to-end training from a full configuration. Writes the normalized
// config, a metrics log and periodic checkpoints under out_dir; returns the
// final checkpoint path. `resume_from` restores a compatible checkpoint.
inline std::string run_training(const FullConfig& cfg, const std::string& out_dir,
                                std::ostream* progress = nullptr,
                                int stop_after_epoch = -1,
                                const std::string& resume_from = "") {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir);
  const std::string config_text = dump_config(cfg);
  {
    std::ofstream os(fs::path(out_dir) / "config.txt");
    os << config_text;
  }
  const SplitDataset data = load_dataset(cfg.data, cfg.train.seed);
  const int image_size = data.train.images.front().height;
  const int channels = data.train.images.front().channels;

  FullConfig effective = cfg;
  if (effective.train.aug.out_size == 0)
    effective.train.aug.out_size = image_size;

  SslState<float> st;
  init_state(st, effective.train, effective.train.aug.out_size, channels);
  if (!resume_from.empty()) {
    BlobReader r(resume_from);
    const FullConfig saved = parse_config(r.get_bytes("config"));
    check_resume_compatible(effective, saved);
    load_checkpoint(st, r);
  }
  const TrainResult res =
      train(st, data.train, out_dir, dump_config(effective), progress,
            stop_after_epoch);
  return res.final_checkpoint.empty() ? resume_from : res.final_checkpoint;
}

struct ProbeRunResult {
  bool applicable = true;
  double accuracy = 0.0;
  int subset_size = 0;
  std::string network;
};

// Loads a checkpoint, extracts frozen features (cached by checkpoint digest)
// and runs the limited-data linear evaluation for one (fraction, seed) pair.
inline ProbeRunResult run_probe(const std::string& checkpoint_path,
                                double fraction, std::uint64_t seed,
                                const std::string& cache_dir,
                                const std::optional<FullConfig>& config_override =
                                    std::nullopt) {
  namespace fs = std::filesystem;
  BlobReader r(checkpoint_path);
  const FullConfig cfg =
      config_override ? *config_override : parse_config(r.get_bytes("config"));
  const int image_size = int(r.get_i64("meta.image_size"));
  const int channels = int(r.get_i64("meta.channels"));

  FullConfig effective = cfg;
  if (effective.train.aug.out_size == 0) effective.train.aug.out_size = image_size;
  SslState<float> st;
  init_state(st, effective.train, image_size, channels);
  load_checkpoint(st, r);

  const EncoderParams<float>& encoder =
      cfg.probe_teacher ? st.teacher.encoder : st.student.encoder;

  const SplitDataset data = load_dataset(cfg.data, cfg.train.seed);

  ProbeConfig probe = cfg.probe;
  probe.seed = seed;

  // features cached per checkpoint content, network and probe augmentation
  fs::create_directories(cache_dir);
  const std::uint64_t ck = file_digest(checkpoint_path);
  char key[128];
  std::snprintf(key, sizeof key, "%016llx_%s_aug%d_s%llu",
                static_cast<unsigned long long>(ck),
                cfg.probe_teacher ? "teacher" : "student",
                probe.augment_train ? 1 : 0,
                static_cast<unsigned long long>(seed));
  const std::string train_cache =
      (fs::path(cache_dir) / (std::string("feat_train_") + key + ".bin")).string();
  const std::string test_cache =
      (fs::path(cache_dir) / (std::string("feat_test_") + key + ".bin")).string();

  Mat<float> train_x, test_x;
  std::vector<int> train_y, test_y;
  if (!load_feature_cache(train_cache, train_x, train_y)) {
    train_x = dataset_probe_features(encoder, data.train, probe.augment_train,
                                     image_size, seed);
    train_y = data.train.labels;
    save_feature_cache(train_cache, train_x, train_y);
  }
  if (!load_feature_cache(test_cache, test_x, test_y)) {
    test_x = dataset_probe_features(encoder, data.test, false, image_size, seed);
    test_y = data.test.labels;
    save_feature_cache(test_cache, test_x, test_y);
  }

  ProbeRunResult out;
  out.network = cfg.probe_teacher ? "teacher" : "student";
  std::vector<int> subset;
  try {
    subset = stratified_subset(train_y, fraction, seed);
  } catch (const NotApplicableError&) {
    out.applicable = false;
    return out;
  }
  Mat<float> sx(Index(subset.size()), train_x.cols());
  std::vector<int> sy;
  sy.reserve(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    sx.row(Index(i)) = train_x.row(subset[i]);
    sy.push_back(train_y[std::size_t(subset[i])]);
  }
  out.subset_size = int(subset.size());
  out.accuracy = linear_probe(sx, sy, test_x, test_y, probe).top1;
  return out;
}

inline void append_results_csv(const std::string& path, const std::string& dataset,
                               double fraction, std::uint64_t seed,
                               const std::string& method,
                               const std::string& accuracy_cell) {
  namespace fs = std::filesystem;
  const bool fresh = !fs::exists(path);
  std::ofstream os(path, std::ios::app);
  if (fresh) os << "dataset,fraction,seed,method,accuracy\n";
  char frac[32];
  std::snprintf(frac, sizeof frac, "%g", fraction);
  os << dataset << ',' << frac << ',' << seed << ',' << method << ','
     << accuracy_cell << "\n";
}

}  // namespace sgc
