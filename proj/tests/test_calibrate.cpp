#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dpcalib/calibrate.hpp"
#include "support.hpp"

using namespace dpcalib;

namespace {

Dataset small_dataset() {
  testsupport::SynthConfig synth;
  synth.n_examples = 240;
  synth.vocab_size = 60;
  synth.tokens_per_example = 7;
  synth.seed = 77;
  return testsupport::make_synth_dataset(synth, 0.15, 0.15);
}

CalibrationConfig small_config() {
  CalibrationConfig cfg;
  cfg.train.learning_rate = 0.4;
  cfg.train.lot_size = 24;
  cfg.train.epochs = 2;
  cfg.seeds = {11, 12};
  cfg.attack.train = cfg.train;
  cfg.attack.num_references = 2;
  cfg.attack.probe_count = 6;
  cfg.attack.inversion_budget = 30;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("calibration produces one row per grid point plus the baseline") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.target_epsilons = {5.0};
  cfg.vmf_kappas = {100.0};
  const TradeoffTable table = run_calibration(data, cfg);
  REQUIRE(table.rows.size() == 3);
  REQUIRE(table.rows[0].mechanism == "none");
  REQUIRE_FALSE(table.rows[0].noise_param.has_value());
  REQUIRE(table.rows[1].mechanism == "gaussian");
  REQUIRE(table.rows[1].target_epsilon == 5.0);
  REQUIRE(table.rows[1].noise_param.has_value());
  REQUIRE(table.rows[2].mechanism == "vmf");
  REQUIRE(table.rows[2].noise_param == 100.0);
  for (const auto& row : table.rows) {
    REQUIRE(row.n_seeds == 2);
    REQUIRE(row.utility.has_value());
    REQUIRE(row.error.empty());
    REQUIRE_FALSE(row.wall_time_s.has_value());  // timings are opt-in
    REQUIRE_FALSE(row.cosine.has_value());       // no embedding table given
  }
}

TEST_CASE("two mechanisms, three levels each: seven rows with the baseline") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.seeds = {11};
  cfg.attack.num_references = 1;
  cfg.attack.probe_count = 4;
  cfg.target_epsilons = {2.0, 20.0, 200.0};
  cfg.vmf_kappas = {1.0, 100.0, 10000.0};
  const TradeoffTable table = run_calibration(data, cfg);
  REQUIRE(table.rows.size() == 7);
}

TEST_CASE("csv emit: exact schema, empty cells, round trip") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.vmf_kappas = {50.0};
  const TradeoffTable table = run_calibration(data, cfg);

  const std::string csv = tradeoff_csv(table);
  REQUIRE(csv.rfind("mechanism,noise_param,target_epsilon,utility_name,utility,auc,leakage,"
                    "jaccard,cosine,meteor,rouge_l,n_seeds,wall_time_s\n", 0) == 0);
  REQUIRE(csv.find("NaN") == std::string::npos);
  REQUIRE(csv.find("nan") == std::string::npos);

  emit(table, "tradeoff_test.csv", "tradeoff_test.svg");
  const TradeoffTable reloaded = load_tradeoff_csv("tradeoff_test.csv");
  REQUIRE(reloaded.rows.size() == table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& a = table.rows[i];
    const auto& b = reloaded.rows[i];
    REQUIRE(a.mechanism == b.mechanism);
    REQUIRE(a.noise_param == b.noise_param);
    REQUIRE(a.target_epsilon == b.target_epsilon);
    REQUIRE(a.utility_name == b.utility_name);
    REQUIRE(a.utility == b.utility);
    REQUIRE(a.auc == b.auc);
    REQUIRE(a.leakage == b.leakage);
    REQUIRE(a.jaccard == b.jaccard);
    REQUIRE(a.cosine == b.cosine);
    REQUIRE(a.meteor == b.meteor);
    REQUIRE(a.rouge_l == b.rouge_l);
    REQUIRE(a.n_seeds == b.n_seeds);
    REQUIRE(a.wall_time_s == b.wall_time_s);
  }
  // Emitting again reproduces the file byte for byte.
  const std::string first = slurp("tradeoff_test.csv");
  emit(table, "tradeoff_test.csv");
  REQUIRE(slurp("tradeoff_test.csv") == first);

  const std::string svg = slurp("tradeoff_test.svg");
  REQUIRE(svg.find("<svg") != std::string::npos);
  REQUIRE(svg.find("firebrick") != std::string::npos);

  // Sidecar carries the per-seed spread and the vmf guarantee metadata.
  const std::string spread = slurp("tradeoff_test.csv.spread");
  REQUIRE(spread.find("vmf_batch_d2_epsilon") != std::string::npos);
  REQUIRE(spread.find("vmf,50,") != std::string::npos);
  REQUIRE(spread.find(",50,100,") != std::string::npos);  // kappa, 2*kappa

  std::remove("tradeoff_test.csv");
  std::remove("tradeoff_test.csv.spread");
  std::remove("tradeoff_test.svg");

  REQUIRE_THROWS_AS(emit(TradeoffTable{}, "x.csv"), DataError);
  REQUIRE_THROWS_AS(emit(table, "/nonexistent-dir/x.csv"), DataError);
}

TEST_CASE("rerunning the calibration reproduces the csv byte for byte") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.target_epsilons = {5.0};
  cfg.vmf_kappas = {10.0};
  const std::string a = tradeoff_csv(run_calibration(data, cfg));
  const std::string b = tradeoff_csv(run_calibration(data, cfg));
  REQUIRE(a == b);
}

TEST_CASE("work pool results are independent of the job count") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.vmf_kappas = {10.0, 1000.0};
  cfg.jobs = 1;
  const std::string serial = tradeoff_csv(run_calibration(data, cfg));
  cfg.jobs = 4;
  const std::string parallel = tradeoff_csv(run_calibration(data, cfg));
  REQUIRE(serial == parallel);
}

TEST_CASE("baseline utility dominance (soft check, reported not asserted)") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.target_epsilons = {2.0};
  cfg.vmf_kappas = {100000.0};
  const TradeoffTable table = run_calibration(data, cfg);
  const double base = *table.rows[0].utility;
  int dominated = 0, total = 0;
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    ++total;
    if (base >= *table.rows[i].utility - 1e-12) ++dominated;
  }
  std::cout << "[soft check] baseline dominates or ties " << dominated << "/" << total
            << " noised rows (noise can act as a regularizer, so this is informational)\n";
  REQUIRE(total == 2);
}

TEST_CASE("a failing grid point is recorded in-row and the run continues") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.target_epsilons = {};
  cfg.vmf_kappas = {100.0};
  TradeoffTable table = run_calibration(data, cfg);
  REQUIRE(table.rows.size() == 2);

  // An attack stage that cannot be satisfied (more reference folds than
  // training examples) fails every job; the run still completes with the
  // diagnostics captured per row instead of aborting the sweep.
  CalibrationConfig broken = cfg;
  broken.attack.num_references = 100000;
  TradeoffTable t2 = run_calibration(data, broken);
  REQUIRE(t2.rows.size() == 2);
  for (const auto& row : t2.rows) {
    REQUIRE_FALSE(row.error.empty());
    REQUIRE_FALSE(row.utility.has_value());
  }
  // The CSV renders the failed rows as empty cells, never NaN.
  const std::string csv = tradeoff_csv(t2);
  REQUIRE(csv.find("NaN") == std::string::npos);
  REQUIRE(csv.find("none,,,accuracy,,,,,,,,2,") != std::string::npos);
}

TEST_CASE("utility metric can be switched to mcc") {
  const Dataset data = small_dataset();
  CalibrationConfig cfg = small_config();
  cfg.utility_metric = "mcc";
  cfg.vmf_kappas = {100.0};
  const TradeoffTable table = run_calibration(data, cfg);
  for (const auto& row : table.rows) {
    REQUIRE(row.utility_name == "mcc");
    REQUIRE(*row.utility >= -1.0);
    REQUIRE(*row.utility <= 1.0);
  }
}
