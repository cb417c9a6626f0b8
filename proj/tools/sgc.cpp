// Command-line front end: pretraining, linear probing, ablation sweeps and
// metrics export. See README.md for the config format.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sgc/runner.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

sgc::FullConfig load_config(const std::string& config_path,
                            std::int64_t seed_override) {
  sgc::FullConfig cfg =
      sgc::parse_config(config_path.empty() ? "" : read_file(config_path));
  if (seed_override >= 0) {
    cfg.train.seed = std::uint64_t(seed_override);
    cfg.probe.seed = std::uint64_t(seed_override);
  }
  return cfg;
}

std::string default_out_dir(const std::string& command,
                            const sgc::FullConfig& cfg) {
  const char* root = std::getenv("SGC_OUT_ROOT");
  const std::string base = root && *root ? root : "runs";
  return (fs::path(base) /
          (command + "-" + sgc::digest_hex(sgc::config_digest(cfg))))
      .string();
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_path, const sgc::FullConfig& cfg,
                    bool deterministic) {
  json m;
  m["command"] = command;
  m["config_path"] = config_path.empty() ? "<defaults>" : config_path;
  m["config_digest"] = sgc::digest_hex(sgc::config_digest(cfg));
  m["output_dir"] = out_dir;
  m["seed"] = cfg.train.seed;
  m["deterministic"] = deterministic;
  m["created_unix"] = std::int64_t(std::time(nullptr));
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "manifest.json");
  os << m.dump(2) << "\n";
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoull(item));
  return out;
}

std::string dataset_label(const sgc::FullConfig& cfg) {
  if (cfg.data.kind == sgc::DatasetSpec::Kind::image_folder)
    return fs::path(cfg.data.root).filename().string();
  return "synthetic";
}

int cmd_train(const std::string& config_path, std::string out_dir,
              std::int64_t seed, bool deterministic, const std::string& resume,
              int stop_after_epoch) {
  const sgc::FullConfig cfg = load_config(config_path, seed);
  if (out_dir.empty()) out_dir = default_out_dir("train", cfg);
  write_manifest(out_dir, "train", config_path, cfg, deterministic);
  const std::string final_ckpt =
      sgc::run_training(cfg, out_dir, &std::cerr, stop_after_epoch, resume);
  std::cout << "final checkpoint: " << final_ckpt << "\n";
  return 0;
}

int cmd_probe(const std::string& checkpoint, const std::string& config_path,
              std::string out_dir, const std::string& fractions_s,
              const std::string& seeds_s, bool deterministic) {
  std::optional<sgc::FullConfig> override_cfg;
  if (!config_path.empty()) override_cfg = load_config(config_path, -1);
  sgc::BlobReader reader(checkpoint);
  const sgc::FullConfig cfg =
      override_cfg ? *override_cfg : sgc::parse_config(reader.get_bytes("config"));
  if (out_dir.empty()) out_dir = default_out_dir("probe", cfg);
  write_manifest(out_dir, "probe", config_path, cfg, deterministic);

  const auto fractions = parse_double_list(fractions_s);
  const auto seeds = parse_seed_list(seeds_s);
  const std::string csv = (fs::path(out_dir) / "results.csv").string();
  const std::string label = dataset_label(cfg);
  for (const double fraction : fractions) {
    for (const std::uint64_t s : seeds) {
      const auto res = sgc::run_probe(checkpoint, fraction, s,
                                      (fs::path(out_dir) / "cache").string(),
                                      override_cfg);
      json row;
      row["dataset"] = label;
      row["fraction"] = fraction;
      row["seed"] = s;
      row["method"] = sgc::method_name(cfg.train.method);
      row["network"] = res.network;
      if (res.applicable) {
        row["accuracy"] = res.accuracy;
        row["subset_size"] = res.subset_size;
      } else {
        row["accuracy"] = "NA";
      }
      std::cout << row.dump() << "\n";
      char cell[32];
      if (res.applicable)
        std::snprintf(cell, sizeof cell, "%.6f", res.accuracy);
      sgc::append_results_csv(csv, label, fraction, s,
                              sgc::method_name(cfg.train.method),
                              res.applicable ? cell : "NA");
    }
  }
  std::cout << "results: " << csv << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, std::string out_dir,
              const std::string& axis_s, const std::string& values_s,
              std::int64_t seed, bool dry_run, bool deterministic) {
  const sgc::FullConfig base = load_config(config_path, seed);
  sgc::SweepSpec spec;
  spec.axis = sgc::parse_axis(axis_s);
  if (!values_s.empty()) {
    std::stringstream ss(values_s);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) spec.values.push_back(item);
  }
  if (out_dir.empty()) out_dir = default_out_dir("sweep", base);
  write_manifest(out_dir, "sweep", config_path, base, deterministic);

  const auto table = sgc::run_sweep(
      base, spec, dry_run,
      [&](const sgc::FullConfig& cfg, const std::string& value) -> std::string {
        const std::string run_dir =
            (fs::path(out_dir) / axis_s / value).string();
        std::cerr << "[sweep] " << axis_s << " = " << value << "\n";
        const std::string ckpt = sgc::run_training(cfg, run_dir, &std::cerr);
        const auto res = sgc::run_probe(ckpt, 1.0, cfg.probe.seed,
                                        (fs::path(run_dir) / "cache").string());
        sgc::append_results_csv((fs::path(out_dir) / "results.csv").string(),
                                dataset_label(cfg), 1.0, cfg.probe.seed,
                                sgc::method_name(cfg.train.method),
                                res.applicable ? std::to_string(res.accuracy)
                                               : "NA");
        char cell[32];
        std::snprintf(cell, sizeof cell, "%.4f", res.accuracy);
        return res.applicable ? std::string(cell) : std::string("NA");
      });

  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "sweep.csv");
    os << table.to_csv();
  }
  {
    std::ofstream os(fs::path(out_dir) / "sweep.txt");
    os << table.to_text();
  }
  std::cout << table.to_text();
  return 0;
}

int cmd_export_metrics(const std::string& run_dir, const std::string& format) {
  const fs::path log = fs::path(run_dir) / "metrics.jsonl";
  std::ifstream is(log);
  if (!is) throw std::runtime_error("no metrics log at " + log.string());
  std::vector<json> rows;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(json::parse(line));
  if (format == "csv") {
    std::cout << "step,epoch,lr,loss_total,loss_cls,loss_sgc,ema_momentum\n";
    for (const auto& r : rows)
      std::cout << r["step"] << ',' << r["epoch"] << ',' << r["lr"] << ','
                << r["loss_total"] << ',' << r["loss_cls"] << ','
                << r["loss_sgc"] << ',' << r["ema_momentum"] << "\n";
  } else {
    // aligned per-epoch summary: the last row of each epoch
    std::map<int, json> last;
    for (const auto& r : rows) last[r["epoch"].get<int>()] = r;
    std::printf("%-8s%-10s%-14s%-14s%-14s\n", "epoch", "lr", "loss_total",
                "loss_cls", "loss_sgc");
    for (const auto& [epoch, r] : last)
      std::printf("%-8d%-10.4g%-14.6g%-14.6g%-14.6g\n", epoch,
                  r["lr"].get<double>(), r["loss_total"].get<double>(),
                  r["loss_cls"].get<double>(), r["loss_sgc"].get<double>());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised ViT pretraining with a semantic graph consistency regularizer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, resume, fractions = "1.0";
  std::string seeds = "0", axis, values, run_dir, format = "csv";
  std::int64_t seed = -1;
  bool deterministic = false, dry_run = false;
  int stop_after_epoch = -1;

  auto* train = app.add_subcommand("train", "pretrain a student-teacher model");
  train->add_option("--config", config_path, "config file (key = value lines)");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--seed", seed, "override run.seed");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--stop-after-epoch", stop_after_epoch,
                    "end the session early (for later resume)");
  train->add_flag("--deterministic", deterministic,
                  "strict single-threaded deterministic mode (always on; recorded)");

  auto* probe = app.add_subcommand("probe", "linear evaluation of a checkpoint");
  probe->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  probe->add_option("--config", config_path, "override the embedded config");
  probe->add_option("--out", out_dir, "output directory");
  probe->add_option("--fractions", fractions, "training fractions, e.g. 0.01,0.1,1.0");
  probe->add_option("--seeds", seeds, "subset/probe seeds, e.g. 0,1,2");
  probe->add_flag("--deterministic", deterministic, "recorded in the manifest");

  auto* sweep = app.add_subcommand("sweep", "ablation sweep over one axis");
  sweep->add_option("--axis", axis,
                    "k_neighbors|gnn_layer|projection_dim|alpha_beta|metric")
      ->required();
  sweep->add_option("--values", values, "comma-separated axis values");
  sweep->add_option("--config", config_path, "base config file");
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--seed", seed, "override run.seed");
  sweep->add_flag("--dry-run", dry_run, "emit the table skeleton without training");
  sweep->add_flag("--deterministic", deterministic, "recorded in the manifest");

  auto* exp = app.add_subcommand("export-metrics", "convert a metrics log");
  exp->add_option("--run", run_dir, "run directory containing metrics.jsonl")
      ->required();
  exp->add_option("--format", format, "csv|text");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train)
      return cmd_train(config_path, out_dir, seed, deterministic, resume,
                       stop_after_epoch);
    if (*probe)
      return cmd_probe(checkpoint, config_path, out_dir, fractions, seeds,
                       deterministic);
    if (*sweep)
      return cmd_sweep(config_path, out_dir, axis, values, seed, dry_run,
                       deterministic);
    if (*exp) return cmd_export_metrics(run_dir, format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
