#include <catch2/catch_amalgamated.hpp>

#include "sgc/config.hpp"

using sgc::FullConfig;

TEST_CASE("empty config yields the documented defaults") {
  const FullConfig cfg = sgc::parse_config("");
  CHECK(cfg.train.graph.k == 20);
  CHECK(cfg.train.graph.metric == sgc::DistanceMetric::euclidean);
  CHECK(cfg.train.weights.alpha == 1.0);
  CHECK(cfg.train.weights.beta == 0.3);
  CHECK(cfg.train.ema_momentum == 0.996);
  CHECK(cfg.train.gnn.layers == 2);
  CHECK(cfg.train.gnn.kind == sgc::GnnLayerKind::gcn);
  CHECK(cfg.train.gnn.pooling == sgc::PoolingKind::global_mean);
  CHECK(cfg.train.head.output_dim == 4096);
  CHECK(cfg.train.batch_size == 128);
  CHECK(cfg.train.base_lr == 5e-4);
  CHECK(cfg.train.warmup_epochs == 10);
  CHECK(cfg.train.weight_decay == 0.04);
  CHECK(cfg.train.distance.student_temp == 0.1);
  CHECK(cfg.train.distance.teacher_temp == 0.04);
  CHECK(cfg.train.distance.center_momentum == 0.9);
  CHECK(cfg.probe.epochs == 100);
  CHECK(cfg.probe.lr == 5e-4);
  CHECK(cfg.probe.momentum == 0.9);
  CHECK(cfg.probe.weight_decay == 0.0);
  // the dump records the full-scale head dimension alongside the desk value
  const std::string dump = sgc::dump_config(cfg);
  CHECK(dump.find("head.output_dim = 4096") != std::string::npos);
  CHECK(dump.find("65536") != std::string::npos);
}

TEST_CASE("config round trip: parse(dump(parse(x))) == parse(x)") {
  const std::string text =
      "run.seed = 17\n"
      "run.method = dino_patch_mean\n"
      "graph.k = 5\n"
      "graph.metric = cosine\n"
      "gnn.kind = sage\n"
      "head.hidden = 64,32\n"
      "loss.beta = 0.5\n"
      "train.epochs = 20\n"
      "train.warmup_epochs = 2\n";
  const FullConfig once = sgc::parse_config(text);
  const FullConfig twice = sgc::parse_config(sgc::dump_config(once));
  CHECK(sgc::dump_config(once) == sgc::dump_config(twice));
  CHECK(sgc::config_digest(once) == sgc::config_digest(twice));
  CHECK(once.train.graph.metric == sgc::DistanceMetric::cosine);
  CHECK(once.train.head.hidden == std::vector<int>{64, 32});
}

TEST_CASE("config rejects invalid values and unknown keys") {
  CHECK_THROWS_WITH(sgc::parse_config("graph.k = 0\n"),
                    Catch::Matchers::ContainsSubstring("invalid-k"));
  CHECK_THROWS_WITH(sgc::parse_config("foo = 1\n"),
                    Catch::Matchers::ContainsSubstring("foo"));
  CHECK_THROWS_WITH(sgc::parse_config("gnn.kind = transformer\n"),
                    Catch::Matchers::ContainsSubstring("gcn|sage|gin"));
  CHECK_THROWS_WITH(sgc::parse_config("just some words\n"),
                    Catch::Matchers::ContainsSubstring("key = value"));
  CHECK_THROWS_WITH(sgc::parse_config("train.epochs = 5\ntrain.warmup_epochs = 9\n"),
                    Catch::Matchers::ContainsSubstring("warmup"));
  CHECK_THROWS_WITH(sgc::parse_config("loss.alpha = 0\nloss.beta = 0\n"),
                    Catch::Matchers::ContainsSubstring("alpha"));
}

TEST_CASE("config digest tracks content") {
  const FullConfig a = sgc::parse_config("graph.k = 20\n");
  const FullConfig b = sgc::parse_config("");
  CHECK(sgc::config_digest(a) == sgc::config_digest(b));  // same effective config
  const FullConfig c = sgc::parse_config("graph.k = 21\n");
  CHECK(sgc::config_digest(a) != sgc::config_digest(c));
}

TEST_CASE("resume compatibility: architecture keys are pinned") {
  const FullConfig saved = sgc::parse_config("encoder.dim = 96\n");
  const FullConfig same_arch = sgc::parse_config("encoder.dim = 96\ntrain.base_lr = 0.01\n");
  CHECK_NOTHROW(sgc::check_resume_compatible(same_arch, saved));
  const FullConfig other = sgc::parse_config("encoder.dim = 192\n");
  CHECK_THROWS_WITH(sgc::check_resume_compatible(other, saved),
                    Catch::Matchers::ContainsSubstring("encoder.dim"));
}

TEST_CASE("comments and blank lines are ignored") {
  const FullConfig cfg = sgc::parse_config(
      "# a comment\n"
      "\n"
      "graph.k = 7  # trailing comment\n");
  CHECK(cfg.train.graph.k == 7);
}
