#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sgc/config.hpp"

namespace sgc {

enum class SweepAxis { k_neighbors, gnn_layer, projection_dim, alpha_beta, metric };

inline const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::k_neighbors: return "k_neighbors";
    case SweepAxis::gnn_layer: return "gnn_layer";
    case SweepAxis::projection_dim: return "projection_dim";
    case SweepAxis::alpha_beta: return "alpha_beta";
    default: return "metric";
  }
}

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "k_neighbors") return SweepAxis::k_neighbors;
  if (s == "gnn_layer") return SweepAxis::gnn_layer;
  if (s == "projection_dim") return SweepAxis::projection_dim;
  if (s == "alpha_beta") return SweepAxis::alpha_beta;
  if (s == "metric") return SweepAxis::metric;
  throw ConfigError(
      "sweep: unknown axis '" + s +
      "' (expected k_neighbors|gnn_layer|projection_dim|alpha_beta|metric)");
}

// Default value lists for each ablation axis.
inline std::vector<std::string> default_axis_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::k_neighbors: return {"3", "5", "10", "20", "30"};
    case SweepAxis::gnn_layer: return {"no-gnn", "gcn", "sage", "gin"};
    case SweepAxis::projection_dim:
      return {"512", "1024", "4096", "16384", "65536", "262144"};
    case SweepAxis::alpha_beta:
      return {"1/0", "0/1", "1/0.1", "1/0.3", "1/0.5", "1/1"};
    default: return {"3", "5", "10", "20"};  // cosine-metric K list
  }
}

inline const char* axis_label(SweepAxis a) {
  switch (a) {
    case SweepAxis::k_neighbors: return "K";
    case SweepAxis::gnn_layer: return "GNN Layer";
    case SweepAxis::projection_dim: return "Dimension";
    case SweepAxis::alpha_beta: return "alpha/beta";
    default: return "K (cosine)";
  }
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::k_neighbors;
  std::vector<std::string> values;  // empty: use the axis defaults

  std::vector<std::string> effective_values() const {
    return values.empty() ? default_axis_values(axis) : values;
  }

  void validate() const {
    if (!values.empty() && values.front().empty())
      throw ConfigError("sweep: empty value");
  }
};

// Applies one axis value to a run configuration.
inline void apply_axis_value(FullConfig& cfg, SweepAxis axis,
                             const std::string& value) {
  switch (axis) {
    case SweepAxis::k_neighbors:
      cfg.train.graph.k = cfgdetail::parse_int(value, "sweep.k_neighbors");
      cfg.train.method = TrainMethod::dino_sgc;
      break;
    case SweepAxis::gnn_layer:
      if (value == "no-gnn") {
        cfg.train.method = TrainMethod::dino_baseline;
      } else {
        cfg.train.method = TrainMethod::dino_sgc;
        if (value == "gcn") cfg.train.gnn.kind = GnnLayerKind::gcn;
        else if (value == "sage") cfg.train.gnn.kind = GnnLayerKind::sage;
        else if (value == "gin") cfg.train.gnn.kind = GnnLayerKind::gin;
        else throw ConfigError("sweep: unknown gnn layer '" + value + "'");
      }
      break;
    case SweepAxis::projection_dim:
      cfg.train.head.output_dim = cfgdetail::parse_int(value, "sweep.projection_dim");
      break;
    case SweepAxis::alpha_beta: {
      const auto slash = value.find('/');
      if (slash == std::string::npos)
        throw ConfigError("sweep: alpha_beta values look like '1/0.3', got '" +
                          value + "'");
      cfg.train.weights.alpha =
          cfgdetail::parse_num(value.substr(0, slash), "sweep.alpha");
      cfg.train.weights.beta =
          cfgdetail::parse_num(value.substr(slash + 1), "sweep.beta");
      cfg.train.method = cfg.train.weights.beta == 0.0 ? TrainMethod::dino_baseline
                                                       : TrainMethod::dino_sgc;
      break;
    }
    default:
      cfg.train.graph.metric = DistanceMetric::cosine;
      cfg.train.graph.k = cfgdetail::parse_int(value, "sweep.metric");
      cfg.train.method = TrainMethod::dino_sgc;
      break;
  }
  cfg.validate();
}

struct SweepTable {
  SweepAxis axis = SweepAxis::k_neighbors;
  std::vector<std::string> values;
  std::vector<std::string> accuracies;  // "NA" for dry runs / not-applicable

  // axis values as columns, accuracy row; alpha_beta carries two value rows
  std::string to_csv() const {
    std::ostringstream os;
    if (axis == SweepAxis::alpha_beta) {
      os << "alpha";
      for (const auto& v : values) os << ',' << v.substr(0, v.find('/'));
      os << "\nbeta";
      for (const auto& v : values) os << ',' << v.substr(v.find('/') + 1);
    } else {
      os << axis_label(axis);
      for (const auto& v : values) os << ',' << v;
    }
    os << "\naccuracy";
    for (const auto& a : accuracies) os << ',' << a;
    os << "\n";
    return os.str();
  }

  std::string to_text() const {
    std::vector<std::vector<std::string>> rows;
    if (axis == SweepAxis::alpha_beta) {
      std::vector<std::string> ra{"alpha"}, rb{"beta"};
      for (const auto& v : values) {
        ra.push_back(v.substr(0, v.find('/')));
        rb.push_back(v.substr(v.find('/') + 1));
      }
      rows.push_back(ra);
      rows.push_back(rb);
    } else {
      std::vector<std::string> r{axis_label(axis)};
      for (const auto& v : values) r.push_back(v);
      rows.push_back(r);
    }
    std::vector<std::string> acc{"accuracy"};
    for (const auto& a : accuracies) acc.push_back(a);
    rows.push_back(acc);

    std::vector<std::size_t> width(rows[0].size(), 0);
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size(); ++c)
        width[c] = std::max(width[c], r[c].size());
    std::ostringstream os;
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) {
        os << r[c];
        if (c + 1 < r.size())
          os << std::string(width[c] - r[c].size() + 2, ' ');
      }
      os << "\n";
    }
    return os.str();
  }
};

// Executes one training + probe per axis value via `run_one` (which returns
// an accuracy cell as text, e.g. "0.8125" or "NA"). With dry_run the table
// skeleton is produced without executing anything.
inline SweepTable run_sweep(
    const FullConfig& base, const SweepSpec& spec, bool dry_run,
    const std::function<std::string(const FullConfig&, const std::string&)>& run_one) {
  spec.validate();
  SweepTable table;
  table.axis = spec.axis;
  table.values = spec.effective_values();
  for (const auto& v : table.values) {
    if (dry_run) {
      FullConfig cfg = base;
      apply_axis_value(cfg, spec.axis, v);  // still validates the cell
      table.accuracies.push_back("NA");
      continue;
    }
    FullConfig cfg = base;
    apply_axis_value(cfg, spec.axis, v);
    table.accuracies.push_back(run_one(cfg, v));
  }
  return table;
}

}  // namespace sgc
