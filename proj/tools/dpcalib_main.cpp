// dpcalib: private training, privacy accounting, calibration attacks and
// reconstruction scoring for the Gaussian and VMF gradient mechanisms.
//
// Subcommands: train, accountant, attack, score, calibrate.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dpcalib/accountant.hpp"
#include "dpcalib/attacks.hpp"
#include "dpcalib/calibrate.hpp"
#include "dpcalib/dataset.hpp"
#include "dpcalib/errors.hpp"
#include "dpcalib/textmetrics.hpp"
#include "dpcalib/trainer.hpp"

namespace {

using namespace dpcalib;

struct CommonTrainFlags {
  std::string data_path;
  std::string val_path, test_path;
  double val_frac = 0.1, test_frac = 0.1;
  double learning_rate = 0.5;
  long lot_size = 32;
  long epochs = 10;
  long vocab_size = 2000;
  int hidden_dim = 0;
  std::string noise_kind = "none";
  double noise_param = 0.0;
  std::uint64_t seed = 1;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags* f) {
  cmd->add_option("--data", f->data_path, "training TSV (label<TAB>text per line)")->required();
  cmd->add_option("--val", f->val_path, "validation TSV (default: split from --data)");
  cmd->add_option("--test", f->test_path, "test TSV (default: split from --data)");
  cmd->add_option("--val-frac", f->val_frac, "validation fraction when splitting --data");
  cmd->add_option("--test-frac", f->test_frac, "test fraction when splitting --data");
  cmd->add_option("--lr", f->learning_rate, "learning rate");
  cmd->add_option("--lot", f->lot_size, "lot (batch) size");
  cmd->add_option("--epochs", f->epochs, "training epochs");
  cmd->add_option("--vocab", f->vocab_size, "bag-of-words vocabulary size");
  cmd->add_option("--hidden", f->hidden_dim, "hidden layer width (0 = linear model)");
  cmd->add_option("--noise", f->noise_kind, "mechanism: none | gaussian | vmf");
  cmd->add_option("--noise-param", f->noise_param, "sigma (gaussian) or kappa (vmf)");
  cmd->add_option("--seed", f->seed, "root random seed");
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "none") return NoiseKind::None;
  if (s == "gaussian") return NoiseKind::Gaussian;
  if (s == "vmf") return NoiseKind::Vmf;
  throw UsageError("unknown noise kind '" + s + "' (expected none|gaussian|vmf)");
}

Dataset load_dataset(const CommonTrainFlags& f) {
  RawSplits splits;
  if (!f.val_path.empty() || !f.test_path.empty()) {
    splits.train = load_tsv(f.data_path);
    if (!f.val_path.empty()) splits.validation = load_tsv(f.val_path);
    if (!f.test_path.empty()) splits.test = load_tsv(f.test_path);
  } else {
    splits = split_raw(load_tsv(f.data_path), f.val_frac, f.test_frac, f.seed ^ 0x5f5f5f5fULL);
  }
  return make_dataset(splits, static_cast<std::size_t>(f.vocab_size));
}

TrainConfig to_train_config(const CommonTrainFlags& f) {
  TrainConfig cfg;
  cfg.learning_rate = f.learning_rate;
  cfg.lot_size = f.lot_size;
  cfg.epochs = f.epochs;
  cfg.hidden_dim = f.hidden_dim;
  cfg.seed = f.seed;
  cfg.noise.kind = parse_noise_kind(f.noise_kind);
  cfg.noise.parameter = f.noise_param;
  return cfg;
}

std::string fmt(double v) { return calibrate_detail::format_double(v); }

int cmd_train(const CommonTrainFlags& flags, const std::string& model_out) {
  const Dataset data = load_dataset(flags);
  const TrainConfig cfg = to_train_config(flags);
  const TrainResult result = private_train(data, cfg);
  save_model(result.params, data.vocab, model_out);
  const EvalMetrics train_m = evaluate(result.params, data.train);
  std::cout << "train accuracy=" << fmt(train_m.accuracy) << " mcc=" << fmt(train_m.mcc)
            << " loss=" << fmt(train_m.mean_loss) << "\n";
  if (!data.validation.empty()) {
    const EvalMetrics vm = evaluate(result.params, data.validation);
    std::cout << "validation accuracy=" << fmt(vm.accuracy) << " mcc=" << fmt(vm.mcc)
              << " loss=" << fmt(vm.mean_loss) << "\n";
  }
  if (!data.test.empty()) {
    const EvalMetrics tm = evaluate(result.params, data.test);
    std::cout << "test accuracy=" << fmt(tm.accuracy) << " mcc=" << fmt(tm.mcc)
              << " loss=" << fmt(tm.mean_loss) << "\n";
    std::cout << "train_test_gap_points=" << fmt(train_test_gap(result.params, data)) << "\n";
  }
  if (result.zero_gradients > 0)
    std::cout << "zero_gradients_mapped_to_uniform=" << result.zero_gradients << "\n";
  std::cout << "model written to " << model_out << "\n";
  return 0;
}

int cmd_accountant(long n, long batch, long epochs, double delta,
                   const std::vector<double>& targets) {
  DatasetShape shape{n, batch, epochs};
  shape.validate();
  std::cout << "target_epsilon,sigma\n";
  for (const double eps : targets) {
    PrivacyBudget budget{eps, delta, shape.sample_rate(), shape.steps()};
    try {
      const double sigma = sigma_for_target_epsilon(budget);
      std::cout << fmt(eps) << "," << fmt(sigma) << "\n";
    } catch (const NumericError&) {
      std::cout << fmt(eps) << ",infeasible\n";
    }
  }
  return 0;
}

int cmd_attack(const std::string& model_path, const CommonTrainFlags& flags,
               const std::string& embeddings_path, long probes, long budget, long references) {
  const LoadedModel model = load_model(model_path);
  // Rebuild the training splits (pass the same --data/--seed/split flags as
  // `train`, so the member set matches what the model was fitted on) and
  // featurize against the model's own vocabulary so gradient coordinates map
  // back to the right tokens.
  RawSplits splits = split_raw(load_tsv(flags.data_path), flags.val_frac, flags.test_frac,
                               flags.seed ^ 0x5f5f5f5fULL);
  Dataset data;
  data.vocab = model.vocab;
  data.num_classes = model.params.shape.num_classes;
  for (const auto& r : splits.train) data.train.push_back(featurize(r, data.vocab));
  for (const auto& r : splits.validation) data.validation.push_back(featurize(r, data.vocab));
  for (const auto& r : splits.test) data.test.push_back(featurize(r, data.vocab));

  AttackConfig cfg;
  cfg.train = to_train_config(flags);
  cfg.probe_count = probes;
  cfg.inversion_budget = budget;
  cfg.num_references = references;

  std::optional<EmbeddingTable> emb;
  if (!embeddings_path.empty()) emb = EmbeddingTable::load(embeddings_path);

  NoiseSpec spec;
  spec.kind = parse_noise_kind(flags.noise_kind);
  spec.parameter = flags.noise_param;
  const SingleAttackOutcome outcome =
      attack_model(model.params, data, spec, flags.seed, cfg, emb ? &*emb : nullptr);

  std::cout << "mechanism,noise_param,auc,auc_reference,leakage,leakage_fixed,jaccard,cosine,"
               "meteor,rouge_l\n";
  std::cout << noise_kind_name(spec.kind) << ","
            << (spec.kind == NoiseKind::None ? "" : fmt(spec.parameter)) << ","
            << fmt(outcome.mia.auc) << "," << fmt(outcome.auc_reference) << ","
            << fmt(outcome.mia.leakage) << "," << fmt(outcome.mia.leakage_fixed) << ","
            << fmt(outcome.jaccard) << "," << (outcome.cosine ? fmt(*outcome.cosine) : "") << ","
            << fmt(outcome.meteor) << "," << fmt(outcome.rouge_l) << "\n";
  return 0;
}

int cmd_score(const std::string& metric, const std::string& a, const std::string& b,
              const std::string& embeddings_path) {
  const TokenSeq ta = tokenize(a), tb = tokenize(b);
  const auto need_embeddings = [&]() {
    if (embeddings_path.empty())
      throw UsageError("score: cosine requires --embeddings");
    return EmbeddingTable::load(embeddings_path);
  };
  if (metric == "jaccard") {
    std::cout << fmt(jaccard(ta, tb)) << "\n";
  } else if (metric == "meteor") {
    std::cout << fmt(meteor_lite(ta, tb)) << "\n";
  } else if (metric == "rouge_l") {
    std::cout << fmt(rouge_l(ta, tb)) << "\n";
  } else if (metric == "cosine") {
    std::cout << fmt(cosine_similarity(ta, tb, need_embeddings())) << "\n";
  } else if (metric == "all") {
    std::cout << "jaccard=" << fmt(jaccard(ta, tb)) << "\n";
    std::cout << "meteor=" << fmt(meteor_lite(ta, tb)) << "\n";
    std::cout << "rouge_l=" << fmt(rouge_l(ta, tb)) << "\n";
    if (!embeddings_path.empty()) {
      const std::string cos = fmt(cosine_similarity(ta, tb, need_embeddings()));
      std::cout << "cosine=" << cos << "\n";
    }
  } else {
    throw UsageError("score: unknown metric '" + metric + "'");
  }
  return 0;
}

int cmd_calibrate(const CommonTrainFlags& flags, const std::vector<double>& target_eps,
                  const std::vector<double>& kappas, long n_seeds, double delta,
                  const std::string& utility_metric, const std::string& csv_out,
                  const std::string& svg_out, const std::string& embeddings_path, int jobs,
                  bool timings, long probes, long budget, long references) {
  const Dataset data = load_dataset(flags);
  CalibrationConfig cfg;
  cfg.train = to_train_config(flags);
  cfg.train.noise = NoiseSpec{};
  cfg.target_epsilons = target_eps;
  cfg.vmf_kappas = kappas;
  cfg.delta = delta;
  cfg.utility_metric = utility_metric;
  cfg.jobs = jobs;
  cfg.record_wall_time = timings;
  cfg.attack.train = cfg.train;
  cfg.attack.probe_count = probes;
  cfg.attack.inversion_budget = budget;
  cfg.attack.num_references = references;
  for (long s = 0; s < n_seeds; ++s)
    cfg.seeds.push_back(flags.seed + static_cast<std::uint64_t>(s));

  std::optional<EmbeddingTable> emb;
  if (!embeddings_path.empty()) emb = EmbeddingTable::load(embeddings_path);

  const TradeoffTable table = run_calibration(data, cfg, emb ? &*emb : nullptr);
  emit(table, csv_out, svg_out);
  std::cout << "wrote " << csv_out << " (" << table.rows.size() << " rows)";
  if (!svg_out.empty()) std::cout << " and " << svg_out;
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy calibration toolkit for Gaussian and VMF noised training"};
  app.require_subcommand(1);
  // One config option for the whole tool; keys live in a section per
  // subcommand ([train], [calibrate], ...). Command-line flags win over
  // config values.
  app.set_config("--config", "",
                 "key=value config file with [train]/[calibrate] sections (flags win)");

  // train
  auto* train = app.add_subcommand("train", "train a private classifier on a TSV dataset");
  train->fallthrough();
  CommonTrainFlags train_flags;
  std::string model_out = "model.dpcalib";
  add_train_flags(train, &train_flags);
  train->add_option("--out", model_out, "model output path");

  // accountant
  auto* acc = app.add_subcommand("accountant", "map target epsilons to noise multipliers");
  acc->fallthrough();
  long acc_n = 0, acc_batch = 128, acc_epochs = 1;
  double acc_delta = 1e-5;
  std::vector<double> acc_eps{1.0, 10.0, 100.0};
  acc->add_option("--n", acc_n, "training-set size")->required();
  acc->add_option("--batch", acc_batch, "lot size");
  acc->add_option("--epochs", acc_epochs, "epochs");
  acc->add_option("--delta", acc_delta, "target delta");
  acc->add_option("--eps", acc_eps, "target epsilon list");

  // attack
  auto* attack = app.add_subcommand("attack", "attack a trained model");
  attack->fallthrough();
  CommonTrainFlags attack_flags;
  std::string attack_model, attack_emb;
  long attack_probes = 32, attack_budget = 300, attack_refs = 5;
  attack->add_option("--model", attack_model, "model file from `train`")->required();
  add_train_flags(attack, &attack_flags);
  attack->add_option("--embeddings", attack_emb, "embedding table for the cosine metric");
  attack->add_option("--probes", attack_probes, "gradient-inversion probe count");
  attack->add_option("--budget", attack_budget, "inversion iteration budget");
  attack->add_option("--references", attack_refs, "reference models for MIA-R");

  // score
  auto* score = app.add_subcommand("score", "reconstruction metrics for a text pair");
  score->fallthrough();
  std::string score_metric = "all", score_a, score_b, score_emb;
  score->add_option("--metric", score_metric, "jaccard | cosine | meteor | rouge_l | all");
  score->add_option("--a", score_a, "first text")->required();
  score->add_option("--b", score_b, "second text")->required();
  score->add_option("--embeddings", score_emb, "embedding table for cosine");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "noise sweep producing the tradeoff CSV");
  cal->fallthrough();
  CommonTrainFlags cal_flags;
  std::vector<double> cal_eps, cal_kappas;
  long cal_seeds = 3;
  double cal_delta = 1e-5;
  std::string cal_metric = "accuracy", cal_csv = "tradeoff.csv", cal_svg, cal_emb;
  int cal_jobs = 1;
  bool cal_timings = false;
  long cal_probes = 32, cal_budget = 300, cal_refs = 3;
  add_train_flags(cal, &cal_flags);
  cal->add_option("--target-eps", cal_eps, "Gaussian grid as target epsilons");
  cal->add_option("--kappas", cal_kappas, "VMF grid as concentrations");
  cal->add_option("--seeds", cal_seeds, "seeds per grid point");
  cal->add_option("--delta", cal_delta, "accountant delta");
  cal->add_option("--utility", cal_metric, "utility metric: accuracy | mcc");
  cal->add_option("--out", cal_csv, "output CSV path");
  cal->add_option("--plot", cal_svg, "optional SVG scatter path");
  cal->add_option("--embeddings", cal_emb, "embedding table for cosine");
  cal->add_option("--jobs", cal_jobs, "parallel jobs");
  cal->add_flag("--timings", cal_timings, "record wall time (breaks byte-identical reruns)");
  cal->add_option("--probes", cal_probes, "inversion probe count");
  cal->add_option("--budget", cal_budget, "inversion iteration budget");
  cal->add_option("--references", cal_refs, "reference models for MIA-R");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags, model_out);
    if (acc->parsed()) return cmd_accountant(acc_n, acc_batch, acc_epochs, acc_delta, acc_eps);
    if (attack->parsed())
      return cmd_attack(attack_model, attack_flags, attack_emb, attack_probes, attack_budget,
                        attack_refs);
    if (score->parsed()) return cmd_score(score_metric, score_a, score_b, score_emb);
    if (cal->parsed())
      return cmd_calibrate(cal_flags, cal_eps, cal_kappas, cal_seeds, cal_delta, cal_metric,
                           cal_csv, cal_svg, cal_emb, cal_jobs, cal_timings, cal_probes,
                           cal_budget, cal_refs);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
