#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dpcalib/trainer.hpp"
#include "support.hpp"

using namespace dpcalib;

namespace {

Example sparse_example(std::vector<std::pair<int, double>> features, int label) {
  Example ex;
  ex.features = std::move(features);
  ex.label = label;
  return ex;
}

// Central finite differences over every coordinate.
Eigen::VectorXd fd_gradient(const ModelParams& p, const Example& ex, double h = 1e-4) {
  Eigen::VectorXd g(p.theta.size());
  ModelParams probe = p;
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) {
    probe.theta[i] = p.theta[i] + h;
    const double up = per_sample_loss(probe, ex);
    probe.theta[i] = p.theta[i] - h;
    const double down = per_sample_loss(probe, ex);
    probe.theta[i] = p.theta[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Example random_example(RngStream& rng, int vocab, int classes) {
  std::vector<std::pair<int, double>> feats;
  int idx = 0;
  while (idx < vocab) {
    idx += 1 + static_cast<int>(rng.uniform_index(3));
    if (idx >= vocab) break;
    feats.emplace_back(idx, 1.0 + rng.uniform_index(3));
  }
  if (feats.empty()) feats.emplace_back(0, 1.0);
  return sparse_example(std::move(feats), static_cast<int>(rng.uniform_index(classes)));
}

}  // namespace

TEST_CASE("gradient: softmax symmetry at the zero-parameter point") {
  // Logits all equal, two classes, label 0: weight-row gradients are
  // -x/2 for the true class and +x/2 for the other.
  ModelShape shape{4, 2, 0};
  const ModelParams p = ModelParams::zeros(shape);
  const Example ex = sparse_example({{1, 2.0}, {3, 1.0}}, 0);
  const Eigen::VectorXd g = per_sample_gradient(p, ex);
  auto w = Eigen::Map<const Eigen::Matrix<double, 2, 4, Eigen::RowMajor>>(g.data());
  REQUIRE(w(0, 1) == Catch::Approx(-1.0));   // -0.5 * 2
  REQUIRE(w(0, 3) == Catch::Approx(-0.5));
  REQUIRE(w(1, 1) == Catch::Approx(1.0));
  REQUIRE(w(1, 3) == Catch::Approx(0.5));
  REQUIRE(w(0, 0) == 0.0);
  REQUIRE(g[8] == Catch::Approx(-0.5));  // bias, class 0
  REQUIRE(g[9] == Catch::Approx(0.5));
}

TEST_CASE("gradient: zero feature vector moves only the bias") {
  ModelShape shape{3, 2, 0};
  ModelParams p = ModelParams::zeros(shape);
  p.theta.setRandom();
  const Example ex = sparse_example({}, 1);
  const Eigen::VectorXd g = per_sample_gradient(p, ex);
  REQUIRE(g.head(6).norm() == 0.0);
  REQUIRE(g.tail(2).norm() > 0.0);
}

TEST_CASE("gradient matches central finite differences (linear and MLP)") {
  RngStream rng(2025);
  for (const int hidden : {0, 5}) {
    for (int rep = 0; rep < 100; ++rep) {
      ModelShape shape{10, 3, hidden};
      ModelParams p = init_params(shape, rng.next_u64());
      for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] += 0.4 * rng.gaussian();
      const Example ex = random_example(rng, 10, 3);
      const Eigen::VectorXd analytic = per_sample_gradient(p, ex);
      const Eigen::VectorXd fd = fd_gradient(p, ex);
      const double rel = (analytic - fd).norm() / std::max(analytic.norm(), 1e-8);
      REQUIRE(rel < 1e-5);
    }
  }
}

TEST_CASE("no-noise training solves separable data (reference SGD oracle)") {
  // 200 points, 20 features, linearly separable by construction.
  testsupport::SynthConfig cfg;
  cfg.n_examples = 200;
  cfg.vocab_size = 20;
  cfg.tokens_per_example = 6;
  cfg.topical_fraction = 1.0;
  cfg.seed = 3;
  Dataset data = testsupport::make_synth_dataset(cfg, 0.0, 0.0);

  TrainConfig tc;
  tc.learning_rate = 0.5;
  tc.lot_size = 20;
  tc.epochs = 50;
  tc.seed = 1;
  const TrainResult r = private_train(data, tc);
  REQUIRE(evaluate(r.params, data.train).accuracy >= 0.95);

  // Independent plain-SGD reference reaches the same regime.
  ModelShape shape{static_cast<int>(data.vocab.size()), data.num_classes, 0};
  ModelParams ref = ModelParams::zeros(shape);
  RngStream order_rng(99);
  for (int epoch = 0; epoch < 50; ++epoch) {
    for (int step = 0; step < 10; ++step) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(ref.theta.size());
      for (int i = 0; i < 20; ++i) {
        const auto& ex = data.train[order_rng.uniform_index(data.train.size())];
        sum += per_sample_gradient(ref, ex);
      }
      ref.theta -= 0.5 * sum / 20.0;
    }
  }
  REQUIRE(evaluate(ref, data.train).accuracy >= 0.95);
}

TEST_CASE("high-concentration vmf training tracks normalized-gradient descent") {
  testsupport::SynthConfig cfg;
  cfg.n_examples = 300;
  cfg.vocab_size = 40;
  cfg.topical_fraction = 0.95;
  cfg.seed = 11;
  Dataset data = testsupport::make_synth_dataset(cfg, 0.0, 0.0);

  TrainConfig tc;
  tc.learning_rate = 0.3;
  tc.lot_size = 30;
  tc.epochs = 30;
  tc.seed = 5;
  tc.noise = NoiseSpec{NoiseKind::Vmf, 1e8};
  const double acc_vmf = evaluate(private_train(data, tc).params, data.train).accuracy;

  // Reference: identical loop shape, each gradient deterministically scaled
  // to norm 1 (what kappa -> infinity converges to).
  ModelShape shape{static_cast<int>(data.vocab.size()), data.num_classes, 0};
  ModelParams ref = ModelParams::zeros(shape);
  RngStream order_rng(5);
  const long steps_per_epoch = (300 + 29) / 30;
  for (int epoch = 0; epoch < 30; ++epoch) {
    for (long step = 0; step < steps_per_epoch; ++step) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(ref.theta.size());
      int used = 0;
      for (int i = 0; i < 30; ++i) {
        const auto& ex = data.train[order_rng.uniform_index(data.train.size())];
        const Eigen::VectorXd g = per_sample_gradient(ref, ex);
        if (g.norm() > 0) {
          sum += g / g.norm();
          ++used;
        }
      }
      if (used > 0) ref.theta -= 0.3 * sum / used;
    }
  }
  const double acc_ref = evaluate(ref, data.train).accuracy;
  REQUIRE(std::abs(acc_vmf - acc_ref) <= 0.02 + 1e-12);
}

TEST_CASE("overwhelming gaussian noise reduces to the majority baseline") {
  testsupport::SynthConfig cfg;
  cfg.n_examples = 400;
  cfg.vocab_size = 40;
  cfg.seed = 13;
  Dataset data = testsupport::make_synth_dataset(cfg, 0.0, 0.0);
  long majority = 0;
  for (const auto& ex : data.train) majority += ex.label;
  const double majority_frac =
      std::max(majority, static_cast<long>(data.train.size()) - majority) /
      static_cast<double>(data.train.size());

  double acc_sum = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.lot_size = 40;
    tc.epochs = 3;
    tc.seed = seed;
    tc.noise = NoiseSpec{NoiseKind::Gaussian, 100.0};
    acc_sum += evaluate(private_train(data, tc).params, data.train).accuracy;
  }
  const double mean_acc = acc_sum / 5.0;
  // Statistically indistinguishable from always guessing the majority class.
  REQUIRE(std::abs(mean_acc - majority_frac) < 0.08);
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
  testsupport::SynthConfig cfg;
  cfg.n_examples = 120;
  cfg.vocab_size = 30;
  Dataset data = testsupport::make_synth_dataset(cfg, 0.1, 0.1);
  for (const NoiseKind kind : {NoiseKind::None, NoiseKind::Gaussian, NoiseKind::Vmf}) {
    TrainConfig tc;
    tc.learning_rate = 0.2;
    tc.lot_size = 16;
    tc.epochs = 3;
    tc.seed = 77;
    tc.noise.kind = kind;
    tc.noise.parameter = kind == NoiseKind::None ? 0.0 : 1.0;
    const TrainResult a = private_train(data, tc);
    const TrainResult b = private_train(data, tc);
    REQUIRE((a.params.theta - b.params.theta).norm() == 0.0);
    REQUIRE(a.epochs.back().validation.accuracy == b.epochs.back().validation.accuracy);
  }
}

TEST_CASE("divergence guard aborts with a diagnostic") {
  testsupport::SynthConfig cfg;
  cfg.n_examples = 60;
  cfg.vocab_size = 20;
  Dataset data = testsupport::make_synth_dataset(cfg, 0.0, 0.0);
  TrainConfig tc;
  tc.learning_rate = 1e308;
  tc.lot_size = 10;
  tc.epochs = 1;
  REQUIRE_THROWS_AS(private_train(data, tc), NumericError);
}

TEST_CASE("mcc: perfect, inverted, random, degenerate") {
  Eigen::MatrixXd perfect(2, 2);
  perfect << 50, 0, 0, 50;
  REQUIRE(mcc_from_confusion(perfect) == Catch::Approx(1.0));

  Eigen::MatrixXd inverted(2, 2);
  inverted << 0, 50, 50, 0;
  REQUIRE(mcc_from_confusion(inverted) == Catch::Approx(-1.0));

  // Random predictions on balanced labels: near zero for large n.
  RngStream rng(8);
  Eigen::MatrixXd random_cm = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < 100000; ++i)
    random_cm(static_cast<int>(rng.uniform_index(2)), static_cast<int>(rng.uniform_index(2))) += 1;
  REQUIRE(std::abs(mcc_from_confusion(random_cm)) < 0.02);

  // Single predicted class: zero denominator, reported as 0 by convention.
  Eigen::MatrixXd degenerate(2, 2);
  degenerate << 60, 0, 40, 0;
  REQUIRE(mcc_from_confusion(degenerate) == 0.0);
}

TEST_CASE("evaluate and train_test_gap") {
  // A model that reads the answer off feature 0/1 counts.
  ModelShape shape{2, 2, 0};
  ModelParams p = ModelParams::zeros(shape);
  auto w = Eigen::Map<Eigen::Matrix<double, 2, 2, Eigen::RowMajor>>(p.theta.data());
  w(0, 0) = 2.0;
  w(1, 1) = 2.0;

  Dataset data;
  data.num_classes = 2;
  data.vocab = Vocabulary();
  data.vocab.set_tokens({"zero", "one"});
  data.train = {sparse_example({{0, 1.0}}, 0), sparse_example({{1, 1.0}}, 1)};
  data.test = data.train;
  REQUIRE(evaluate(p, data.train).accuracy == 1.0);
  REQUIRE(evaluate(p, data.train).mcc == Catch::Approx(1.0));
  REQUIRE(train_test_gap(p, data) == 0.0);

  // Overfit memorizer pattern: all right on train, half right on test.
  data.test = {sparse_example({{0, 1.0}}, 0), sparse_example({{0, 1.0}}, 1)};
  REQUIRE(train_test_gap(p, data) == Catch::Approx(50.0));

  // Negative gap is possible.
  data.train = {sparse_example({{0, 1.0}}, 1), sparse_example({{1, 1.0}}, 0)};
  data.test = {sparse_example({{0, 1.0}}, 0)};
  REQUIRE(train_test_gap(p, data) == Catch::Approx(-100.0));

  REQUIRE_THROWS_AS(evaluate(p, {}), DataError);
}

TEST_CASE("model save/load round trip") {
  testsupport::SynthConfig cfg;
  cfg.n_examples = 80;
  cfg.vocab_size = 25;
  Dataset data = testsupport::make_synth_dataset(cfg, 0.0, 0.0);
  TrainConfig tc;
  tc.epochs = 2;
  tc.lot_size = 16;
  const TrainResult r = private_train(data, tc);

  const std::string path = "roundtrip.model";
  save_model(r.params, data.vocab, path);
  const LoadedModel loaded = load_model(path);
  REQUIRE(loaded.params.shape.vocab_size == r.params.shape.vocab_size);
  REQUIRE((loaded.params.theta - r.params.theta).norm() == 0.0);
  REQUIRE(loaded.vocab.tokens() == data.vocab.tokens());

  // Same parameters serialize to identical bytes.
  const std::string path2 = "roundtrip2.model";
  save_model(r.params, data.vocab, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  REQUIRE(s1.str() == s2.str());
  std::remove(path.c_str());
  std::remove(path2.c_str());

  REQUIRE_THROWS_AS(load_model("does-not-exist.model"), DataError);
}

TEST_CASE("tsv ingestion reports the offending line") {
  const std::string path = "bad.tsv";
  {
    std::ofstream out(path);
    out << "1\tgood line\n";
    out << "oops no tab\n";
  }
  try {
    load_tsv(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("vocabulary keeps the most frequent tokens deterministically") {
  std::vector<RawExample> raws;
  RawExample a;
  a.label = 0;
  a.tokens = {"common", "common", "rare1", "beta", "alpha"};
  raws.push_back(a);
  const Vocabulary v = Vocabulary::build(raws, 3);
  REQUIRE(v.size() == 3);
  REQUIRE(v.index_of("common") == 0);
  // Frequency-1 ties break lexicographically.
  REQUIRE(v.index_of("alpha") == 1);
  REQUIRE(v.index_of("beta") == 2);
  REQUIRE(v.index_of("rare1") == -1);
}
