#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "sgc/sweep.hpp"

using sgc::FullConfig;
using sgc::SweepAxis;
using sgc::SweepSpec;

namespace {

std::string golden(const std::string& name) {
  const std::string path = std::string(GOLDEN_DIR) + "/" + name;
  std::ifstream is(path);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string header_lines(const std::string& csv) {
  // all lines before the accuracy row
  std::string out;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("accuracy", 0) == 0) break;
    out += line + "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("sweep tables mirror the ablation axes (golden headers)") {
  const FullConfig base = sgc::parse_config("");
  for (const auto axis :
       {SweepAxis::k_neighbors, SweepAxis::gnn_layer, SweepAxis::projection_dim,
        SweepAxis::alpha_beta, SweepAxis::metric}) {
    SweepSpec spec;
    spec.axis = axis;
    const auto table = sgc::run_sweep(base, spec, /*dry_run=*/true, nullptr);
    const std::string want =
        golden(std::string("sweep_header_") + sgc::axis_name(axis) + ".csv");
    INFO("axis " << sgc::axis_name(axis));
    CHECK(header_lines(table.to_csv()) == want);
  }
}

TEST_CASE("sweep tables: one accuracy per value, order preserved, no holes") {
  const FullConfig base = sgc::parse_config("");
  SweepSpec spec;
  spec.axis = SweepAxis::k_neighbors;
  spec.values = {"7", "3", "11"};
  int calls = 0;
  const auto table = sgc::run_sweep(
      base, spec, false,
      [&](const FullConfig& cfg, const std::string& v) {
        ++calls;
        CHECK(std::to_string(cfg.train.graph.k) == v);
        return "0." + v;
      });
  CHECK(calls == 3);
  CHECK(table.values == std::vector<std::string>{"7", "3", "11"});
  CHECK(table.accuracies == std::vector<std::string>{"0.7", "0.3", "0.11"});
  const std::string csv = table.to_csv();
  CHECK(csv == "K,7,3,11\naccuracy,0.7,0.3,0.11\n");
}

TEST_CASE("axis values adjust the run configuration") {
  const FullConfig base = sgc::parse_config("");

  FullConfig k = base;
  sgc::apply_axis_value(k, SweepAxis::k_neighbors, "30");
  CHECK(k.train.graph.k == 30);

  FullConfig nognn = base;
  sgc::apply_axis_value(nognn, SweepAxis::gnn_layer, "no-gnn");
  CHECK(nognn.train.method == sgc::TrainMethod::dino_baseline);

  FullConfig sage = base;
  sgc::apply_axis_value(sage, SweepAxis::gnn_layer, "sage");
  CHECK(sage.train.gnn.kind == sgc::GnnLayerKind::sage);
  CHECK(sage.train.method == sgc::TrainMethod::dino_sgc);

  FullConfig dim = base;
  sgc::apply_axis_value(dim, SweepAxis::projection_dim, "65536");
  CHECK(dim.train.head.output_dim == 65536);

  FullConfig ab = base;
  sgc::apply_axis_value(ab, SweepAxis::alpha_beta, "1/0.5");
  CHECK(ab.train.weights.alpha == 1.0);
  CHECK(ab.train.weights.beta == 0.5);

  FullConfig ab0 = base;
  sgc::apply_axis_value(ab0, SweepAxis::alpha_beta, "1/0");
  CHECK(ab0.train.method == sgc::TrainMethod::dino_baseline);

  FullConfig cos = base;
  sgc::apply_axis_value(cos, SweepAxis::metric, "3");
  CHECK(cos.train.graph.metric == sgc::DistanceMetric::cosine);
  CHECK(cos.train.graph.k == 3);

  CHECK_THROWS_AS(sgc::apply_axis_value(k, SweepAxis::gnn_layer, "mlp"),
                  sgc::ConfigError);
  CHECK_THROWS_AS(sgc::apply_axis_value(k, SweepAxis::alpha_beta, "0.3"),
                  sgc::ConfigError);
}

TEST_CASE("aligned-text table renders all cells") {
  sgc::SweepTable t;
  t.axis = SweepAxis::gnn_layer;
  t.values = {"no-gnn", "gcn", "sage", "gin"};
  t.accuracies = {"0.71", "0.78", "0.79", "0.77"};
  const std::string text = t.to_text();
  CHECK(text.find("GNN Layer") != std::string::npos);
  CHECK(text.find("no-gnn") != std::string::npos);
  CHECK(text.find("0.79") != std::string::npos);
  // two lines
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("axis parsing") {
  CHECK(sgc::parse_axis("alpha_beta") == SweepAxis::alpha_beta);
  CHECK_THROWS_AS(sgc::parse_axis("bogus"), sgc::ConfigError);
}
