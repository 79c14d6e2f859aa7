#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dpcalib/dataset.hpp"
#include "dpcalib/errors.hpp"
#include "dpcalib/mechanisms.hpp"
#include "dpcalib/rng.hpp"
#include "dpcalib/stats.hpp"
#include "dpcalib/textmetrics.hpp"
#include "dpcalib/trainer.hpp"

namespace dpcalib {

// ---------------------------------------------------------------------------
// Membership inference.

// Rank AUC of member scores against non-member scores, ties counted 1/2.
// Matches the brute-force pairwise definition exactly.
inline double auc_from_scores(const std::vector<double>& member_scores,
                              const std::vector<double>& nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty())
    throw DataError("auc_from_scores: both score sets must be nonempty");
  struct Entry {
    double score;
    bool member;
  };
  std::vector<Entry> all;
  all.reserve(member_scores.size() + nonmember_scores.size());
  for (const double s : member_scores) all.push_back({s, true});
  for (const double s : nonmember_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j + 1 < all.size() && all[j + 1].score == all[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (all[k].member) rank_sum += avg_rank;
    i = j + 1;
  }
  const double n_in = static_cast<double>(member_scores.size());
  const double n_out = static_cast<double>(nonmember_scores.size());
  return (rank_sum - n_in * (n_in + 1.0) / 2.0) / (n_in * n_out);
}

// Maximum of TPR - FPR over all score thresholds (decision rule: member if
// score >= t). Always in [0, 1]: the empty rule achieves 0.
inline double youden_leakage(const std::vector<double>& member_scores,
                             const std::vector<double>& nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty())
    throw DataError("youden_leakage: both score sets must be nonempty");
  struct Entry {
    double score;
    bool member;
  };
  std::vector<Entry> all;
  for (const double s : member_scores) all.push_back({s, true});
  for (const double s : nonmember_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });
  const double n_in = static_cast<double>(member_scores.size());
  const double n_out = static_cast<double>(nonmember_scores.size());
  double tp = 0, fp = 0, best = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j + 1 < all.size() && all[j + 1].score == all[i].score) ++j;
    for (std::size_t k = i; k <= j; ++k) (all[k].member ? tp : fp) += 1.0;
    best = std::max(best, tp / n_in - fp / n_out);
    i = j + 1;
  }
  return best;
}

struct MiaResult {
  double auc = 0.5;
  // TPR - FPR at the maximizing threshold (Youden realization).
  double leakage = 0.0;
  // TPR - FPR at the fixed threshold "loss <= mean member loss"; may be
  // negative, unlike the maximized form.
  double leakage_fixed = 0.0;
};

// Vanilla loss-threshold membership inference: score(sample) = -loss.
inline MiaResult mia_loss_threshold(const ModelParams& target,
                                    const std::vector<Example>& in_samples,
                                    const std::vector<Example>& out_samples) {
  if (in_samples.empty() || out_samples.empty())
    throw DataError("mia_loss_threshold: both sample sets must be nonempty");
  std::vector<double> in_scores, out_scores;
  in_scores.reserve(in_samples.size());
  out_scores.reserve(out_samples.size());
  double in_loss_sum = 0.0;
  for (const auto& ex : in_samples) {
    const double l = per_sample_loss(target, ex);
    in_scores.push_back(-l);
    in_loss_sum += l;
  }
  for (const auto& ex : out_samples) out_scores.push_back(-per_sample_loss(target, ex));
  MiaResult r;
  r.auc = auc_from_scores(in_scores, out_scores);
  r.leakage = youden_leakage(in_scores, out_scores);
  const double threshold = -(in_loss_sum / static_cast<double>(in_samples.size()));
  double tp = 0, fp = 0;
  for (const double s : in_scores) tp += (s >= threshold) ? 1.0 : 0.0;
  for (const double s : out_scores) fp += (s >= threshold) ? 1.0 : 0.0;
  r.leakage_fixed = tp / static_cast<double>(in_scores.size()) -
                    fp / static_cast<double>(out_scores.size());
  return r;
}

// Reference-model membership inference: score(sample) = mean reference loss
// minus target loss. References must share the target's shape.
inline MiaResult mia_reference(const ModelParams& target,
                               const std::vector<ModelParams>& references,
                               const std::vector<Example>& in_samples,
                               const std::vector<Example>& out_samples) {
  if (references.empty()) throw DataError("mia_reference: needs at least one reference model");
  if (in_samples.empty() || out_samples.empty())
    throw DataError("mia_reference: both sample sets must be nonempty");
  for (const auto& ref : references) {
    if (ref.theta.size() != target.theta.size() || ref.shape.num_classes != target.shape.num_classes)
      throw DataError("mia_reference: reference model shape mismatch");
  }
  const auto score = [&](const Example& ex) {
    double ref_loss = 0.0;
    for (const auto& ref : references) ref_loss += per_sample_loss(ref, ex);
    ref_loss /= static_cast<double>(references.size());
    return ref_loss - per_sample_loss(target, ex);
  };
  std::vector<double> in_scores, out_scores;
  for (const auto& ex : in_samples) in_scores.push_back(score(ex));
  for (const auto& ex : out_samples) out_scores.push_back(score(ex));
  MiaResult r;
  r.auc = auc_from_scores(in_scores, out_scores);
  r.leakage = youden_leakage(in_scores, out_scores);
  double tp = 0, fp = 0;
  for (const double s : in_scores) tp += (s >= 0.0) ? 1.0 : 0.0;
  for (const double s : out_scores) fp += (s >= 0.0) ? 1.0 : 0.0;
  r.leakage_fixed = tp / static_cast<double>(in_scores.size()) -
                    fp / static_cast<double>(out_scores.size());
  return r;
}

// ---------------------------------------------------------------------------
// Gradient inversion against the surrogate.

struct InversionResult {
  Eigen::VectorXd features;    // reconstructed bag-of-words vector (size V)
  std::vector<int> token_ids;  // reconstructed token multiset, most confident first
  bool converged = false;
  double objective = std::numeric_limits<double>::infinity();
  long iterations = 0;
};

namespace inversion_detail {

// First-layer (weights, bias) blocks of a flattened gradient.
struct FirstLayer {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w;
  Eigen::VectorXd b;
};

inline FirstLayer first_layer(const Eigen::VectorXd& flat, const ModelShape& shape) {
  const int rows = shape.hidden_dim == 0 ? shape.num_classes : shape.hidden_dim;
  const Eigen::Index w_size = static_cast<Eigen::Index>(rows) * shape.vocab_size;
  return {Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
              flat.data(), rows, shape.vocab_size),
          flat.segment(w_size, rows)};
}

// A single-sample first-layer gradient is d x^T (d = bias gradient), so the
// least-squares factor x = W_grad^T d / (d^T d) recovers the input exactly
// from a clean gradient.
inline Eigen::VectorXd rank_one_estimate(const Eigen::VectorXd& shared, const ModelShape& shape) {
  const FirstLayer fl = first_layer(shared, shape);
  const double dd = fl.b.squaredNorm();
  if (dd == 0.0) return Eigen::VectorXd::Zero(shape.vocab_size);
  return fl.w.transpose() * fl.b / dd;
}

// Simulated flattened gradient of the linear model at input x with the given
// label, plus the pieces the objective gradient needs.
struct Simulated {
  Eigen::VectorXd grad;
  Eigen::VectorXd probs;
  Eigen::VectorXd d;
};

inline Simulated simulate_linear(const ModelParams& model, const Eigen::VectorXd& x, int label) {
  const auto& s = model.shape;
  const auto w = model_detail::weight_block(model.theta, 0, s.num_classes, s.vocab_size);
  Eigen::VectorXd logits =
      model.theta.segment(static_cast<Eigen::Index>(s.num_classes) * s.vocab_size, s.num_classes) +
      w * x;
  Simulated sim;
  sim.probs = model_detail::softmax(std::move(logits));
  sim.d = sim.probs;
  sim.d[label] -= 1.0;
  sim.grad.resize(model.theta.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> wg(
      sim.grad.data(), s.num_classes, s.vocab_size);
  wg = sim.d * x.transpose();
  sim.grad.segment(static_cast<Eigen::Index>(s.num_classes) * s.vocab_size, s.num_classes) = sim.d;
  return sim;
}

}  // namespace inversion_detail

// Reconstructs the input behind a (possibly noised) single-sample or lot
// gradient. Clean gradients are inverted exactly through the rank-1
// structure of the first layer; noised gradients start from that estimate
// and run gradient matching (Adam on the dummy input, objective
// 1 - cos(simulated, shared) -- direction is what both mechanisms leave
// observable) for at most `iteration_budget` steps. If the objective never
// reaches `tolerance`, the best effort is returned flagged non-converged.
inline InversionResult gradient_inversion(const Eigen::VectorXd& shared_gradient,
                                          const ModelParams& model, const NoiseSpec& noise_used,
                                          long iteration_budget, double tolerance = 1e-6) {
  const ModelShape& shape = model.shape;
  if (shared_gradient.size() != shape.param_count())
    throw DataError("gradient_inversion: gradient size does not match the model shape");
  InversionResult out;
  out.features = inversion_detail::rank_one_estimate(shared_gradient, shape);

  const bool clean = noise_used.kind == NoiseKind::None;
  if (clean || shape.hidden_dim != 0) {
    // Exact for a clean single-sample gradient; best-effort (still the
    // rank-1 projection) for a noised MLP gradient.
    out.converged = clean;
    out.objective = clean ? 0.0 : std::numeric_limits<double>::infinity();
    return out;
  }

  // Iterative gradient matching on the linear surrogate. The label is read
  // off the shared bias gradient: the true class is the one pushed negative.
  const auto fl = inversion_detail::first_layer(shared_gradient, shape);
  Eigen::Index label_idx = 0;
  fl.b.minCoeff(&label_idx);
  const int label = static_cast<int>(label_idx);

  const double shared_norm = shared_gradient.norm();
  if (shared_norm == 0.0) {
    out.converged = false;
    return out;
  }
  const Eigen::VectorXd target_dir = shared_gradient / shared_norm;
  const auto w = model_detail::weight_block(model.theta, 0, shape.num_classes, shape.vocab_size);

  Eigen::VectorXd x = out.features;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(x.size());
  const double lr = 0.05, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  Eigen::VectorXd best_x = x;
  double best_obj = std::numeric_limits<double>::infinity();

  for (long it = 1; it <= iteration_budget; ++it) {
    const auto sim = inversion_detail::simulate_linear(model, x, label);
    const double un = sim.grad.norm();
    if (un == 0.0) break;
    const double cos = sim.grad.dot(target_dir) / un;
    const double obj = 1.0 - cos;
    if (obj < best_obj) {
      best_obj = obj;
      best_x = x;
    }
    if (best_obj <= tolerance) break;

    // d(1 - cos)/du = -(t - cos * u/||u||) / ||u||, u = simulated gradient.
    const Eigen::VectorXd gu = -(target_dir - sim.grad * (cos / un)) / un;
    const auto gu_w = inversion_detail::first_layer(gu, shape);
    // Chain rule through u = [d x^T, d] and d = softmax(Wx + b) - onehot:
    // grad_x = Gw^T d + W^T (s .* q) - (s . q) W^T s, q = Gw x + gb.
    const Eigen::VectorXd q = gu_w.w * x + gu_w.b;
    const Eigen::VectorXd sq = sim.probs.cwiseProduct(q);
    Eigen::VectorXd gx = gu_w.w.transpose() * sim.d + w.transpose() * sq -
                         (sim.probs.dot(q)) * (w.transpose() * sim.probs);

    m = beta1 * m + (1.0 - beta1) * gx;
    v = beta2 * v + (1.0 - beta2) * gx.cwiseProduct(gx);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(it));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(it));
    const Eigen::VectorXd denom =
        (v / bc2).cwiseSqrt() + Eigen::VectorXd::Constant(x.size(), adam_eps);
    x -= (lr / bc1) * m.cwiseQuotient(denom);
    out.iterations = it;
  }
  out.features = best_x;
  out.objective = best_obj;
  out.converged = best_obj <= tolerance;
  return out;
}

// Reconstructed token multiset: repeatedly take the feature with the largest
// remaining mass. The count comes from the reconstruction itself (the clean
// gradient reveals the exact bag size); `max_tokens` bounds it, standing in
// for the sequence length visible in a federated exchange.
inline std::vector<int> reconstruction_token_ids(const Eigen::VectorXd& features,
                                                 std::size_t max_tokens) {
  double mass = 0.0;
  for (Eigen::Index i = 0; i < features.size(); ++i) mass += std::max(0.0, features[i]);
  std::size_t k = static_cast<std::size_t>(std::llround(mass));
  k = std::min(std::max<std::size_t>(k, 1), max_tokens);
  Eigen::VectorXd residual = features;
  std::vector<int> ids;
  ids.reserve(k);
  for (std::size_t taken = 0; taken < k; ++taken) {
    Eigen::Index best;
    if (residual.maxCoeff(&best) <= 0.0 && !ids.empty()) break;
    ids.push_back(static_cast<int>(best));
    residual[best] -= 1.0;
  }
  return ids;
}

// The bag-of-words surrogate shares no token order, so before scoring, the
// reconstructed multiset is arranged in its reference-optimal order: walk the
// reference, emitting each token the bag can still cover, then append the
// unmatched remainder. Clean exact reconstructions then score 1 under the
// sequence metrics; noise degrades them smoothly.
inline TokenSeq arrange_tokens_for_reference(const std::vector<int>& token_ids,
                                             const Vocabulary& vocab, const TokenSeq& reference) {
  std::unordered_map<std::string, long> bag;
  for (const int id : token_ids) ++bag[vocab.token_at(static_cast<std::size_t>(id))];
  TokenSeq arranged;
  arranged.reserve(token_ids.size());
  for (const auto& t : reference) {
    auto it = bag.find(t);
    if (it != bag.end() && it->second > 0) {
      arranged.push_back(t);
      --it->second;
    }
  }
  // Remainder in deterministic (id) order.
  for (const int id : token_ids) {
    const std::string& t = vocab.token_at(static_cast<std::size_t>(id));
    auto it = bag.find(t);
    if (it != bag.end() && it->second > 0) {
      arranged.push_back(t);
      --it->second;
    }
  }
  return arranged;
}

// ---------------------------------------------------------------------------
// Attack sweep.

struct AttackConfig {
  TrainConfig train;            // noise overridden per grid point
  long num_references = 5;      // reference models for MIA-R
  long probe_count = 32;        // gradient-inversion probe sentences
  long inversion_budget = 300;  // Adam iterations per probe
  long mia_max_samples = 200;   // cap per member/non-member side
  double inversion_tolerance = 1e-6;
};

struct AttackReport {
  NoiseSpec noise;
  std::vector<std::uint64_t> seeds;
  double auc = 0.5;            // vanilla MIA
  double auc_reference = 0.5;  // MIA-R
  double leakage = 0.0;        // Youden TPR-FPR
  double leakage_fixed = 0.0;  // TPR-FPR at the zero-gap threshold
  double jaccard = 0.0;
  double meteor = 0.0;
  double rouge_l = 0.0;
  std::optional<double> cosine;  // only with an embedding table
};

namespace attack_detail {

inline std::vector<std::size_t> seeded_sample(std::size_t population, std::size_t count,
                                              RngStream rng) {
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  idx.resize(std::min(population, count));
  return idx;
}

}  // namespace attack_detail

struct SingleAttackOutcome {
  MiaResult mia;
  double auc_reference = 0.5;
  double jaccard = 0.0;
  double meteor = 0.0;
  double rouge_l = 0.0;
  std::optional<double> cosine;
};

// One grid point, one seed: train a target on one fold of the training
// split, train reference models (without noise) on the remaining folds, run
// both MIA variants against held-out data, and invert (possibly noised)
// single-sample gradients of a fixed probe set. Reconstruction metrics are
// medians over the probes.
inline SingleAttackOutcome attack_single(const Dataset& data, const NoiseSpec& spec,
                                         std::uint64_t seed, const AttackConfig& cfg,
                                         const EmbeddingTable* embeddings = nullptr) {
  if (data.train.empty()) throw DataError("attack_single: empty training split");
  const std::vector<Example>& out_pool = data.test.empty() ? data.validation : data.test;
  if (out_pool.empty()) throw DataError("attack_single: needs a held-out split for non-members");

  RngStream root(seed);
  const long folds = cfg.num_references + 1;
  if (static_cast<long>(data.train.size()) < folds)
    throw DataError("attack_single: training split smaller than the fold count");

  // Disjoint folds: fold 0 trains the target, the rest train references.
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream fold_rng = root.substream(10);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = fold_rng.uniform_index(i);
    std::swap(order[i - 1], order[j]);
  }
  const std::size_t fold_size = order.size() / static_cast<std::size_t>(folds);

  const auto fold_examples = [&](long f) {
    std::vector<Example> ex;
    const std::size_t begin = static_cast<std::size_t>(f) * fold_size;
    const std::size_t end = (f == folds - 1) ? order.size() : begin + fold_size;
    for (std::size_t i = begin; i < end; ++i) ex.push_back(data.train[order[i]]);
    return ex;
  };

  Dataset target_data;
  target_data.vocab = data.vocab;
  target_data.num_classes = data.num_classes;
  target_data.train = fold_examples(0);

  TrainConfig target_cfg = cfg.train;
  target_cfg.noise = spec;
  target_cfg.seed = root.substream(11).key();
  if (target_cfg.lot_size > static_cast<long>(target_data.train.size()))
    target_cfg.lot_size = static_cast<long>(target_data.train.size());
  const TrainResult target = private_train(target_data, target_cfg);

  SingleAttackOutcome outcome;

  // Membership inference: members from the target's fold, non-members from
  // the held-out pool.
  const auto in_idx = attack_detail::seeded_sample(
      target_data.train.size(), static_cast<std::size_t>(cfg.mia_max_samples), root.substream(12));
  const auto out_idx = attack_detail::seeded_sample(
      out_pool.size(), static_cast<std::size_t>(cfg.mia_max_samples), root.substream(13));
  std::vector<Example> in_samples, out_samples;
  for (const auto i : in_idx) in_samples.push_back(target_data.train[i]);
  for (const auto i : out_idx) out_samples.push_back(out_pool[i]);
  outcome.mia = mia_loss_threshold(target.params, in_samples, out_samples);

  if (cfg.num_references > 0) {
    std::vector<ModelParams> references;
    references.reserve(cfg.num_references);
    for (long f = 1; f < folds; ++f) {
      Dataset ref_data;
      ref_data.vocab = data.vocab;
      ref_data.num_classes = data.num_classes;
      ref_data.train = fold_examples(f);
      TrainConfig ref_cfg = cfg.train;
      ref_cfg.noise = NoiseSpec{};  // references train without privacy
      ref_cfg.seed = root.substream(14, static_cast<std::uint64_t>(f)).key();
      if (ref_cfg.lot_size > static_cast<long>(ref_data.train.size()))
        ref_cfg.lot_size = static_cast<long>(ref_data.train.size());
      references.push_back(private_train(ref_data, ref_cfg).params);
    }
    outcome.auc_reference =
        mia_reference(target.params, references, in_samples, out_samples).auc;
  }

  // Gradient inversion over a fixed probe set of held-out sentences.
  const auto probe_idx = attack_detail::seeded_sample(
      out_pool.size(), static_cast<std::size_t>(cfg.probe_count), root.substream(15));
  std::vector<double> jac, met, rou, cos;
  for (std::size_t pi = 0; pi < probe_idx.size(); ++pi) {
    const Example& probe = out_pool[probe_idx[pi]];
    if (probe.tokens.empty()) continue;
    const Eigen::VectorXd grad = per_sample_gradient(target.params, probe);
    RngStream noise_rng = root.substream(16, pi);
    const Eigen::VectorXd shared =
        dp_noise_step({grad}, spec, noise_rng).gradient;
    const InversionResult inv = gradient_inversion(shared, target.params, spec,
                                                   cfg.inversion_budget, cfg.inversion_tolerance);
    const std::vector<int> ids =
        reconstruction_token_ids(inv.features, 2 * probe.tokens.size() + 8);
    const TokenSeq recon = arrange_tokens_for_reference(ids, data.vocab, probe.tokens);
    jac.push_back(jaccard(recon, probe.tokens));
    met.push_back(meteor_lite(recon, probe.tokens));
    rou.push_back(rouge_l(recon, probe.tokens));
    if (embeddings != nullptr) {
      Eigen::VectorXd tmp;
      const bool a_ok = embeddings->pool(recon, &tmp);
      const bool b_ok = embeddings->pool(probe.tokens, &tmp);
      if (a_ok && b_ok) cos.push_back(cosine_similarity(recon, probe.tokens, *embeddings));
    }
  }
  if (jac.empty()) throw DataError("attack_single: no usable probes in the held-out split");
  outcome.jaccard = median(jac);
  outcome.meteor = median(met);
  outcome.rouge_l = median(rou);
  if (!cos.empty()) outcome.cosine = median(cos);
  return outcome;
}

// Attacks an already-trained model (e.g. one loaded from a model file). The
// member set is the training split the model was fitted on, so callers must
// rebuild the same splits that produced it. Reference models for MIA-R are
// trained on disjoint folds of the validation split (never on the target's
// members or the non-member evaluation pool); gradient-inversion probes come
// from the test split and are noised with the given spec before inversion.
inline SingleAttackOutcome attack_model(const ModelParams& target, const Dataset& data,
                                        const NoiseSpec& spec, std::uint64_t seed,
                                        const AttackConfig& cfg,
                                        const EmbeddingTable* embeddings = nullptr) {
  if (data.train.empty()) throw DataError("attack_model: empty training split");
  if (data.test.empty()) throw DataError("attack_model: needs a test split for non-members");
  RngStream root(seed);

  SingleAttackOutcome outcome;
  const auto in_idx = attack_detail::seeded_sample(
      data.train.size(), static_cast<std::size_t>(cfg.mia_max_samples), root.substream(12));
  const auto out_idx = attack_detail::seeded_sample(
      data.test.size(), static_cast<std::size_t>(cfg.mia_max_samples), root.substream(13));
  std::vector<Example> in_samples, out_samples;
  for (const auto i : in_idx) in_samples.push_back(data.train[i]);
  for (const auto i : out_idx) out_samples.push_back(data.test[i]);
  outcome.mia = mia_loss_threshold(target, in_samples, out_samples);

  if (cfg.num_references > 0) {
    if (static_cast<long>(data.validation.size()) < 2 * cfg.num_references)
      throw DataError("attack_model: validation split too small to train " +
                      std::to_string(cfg.num_references) + " reference models");
    const std::size_t fold_size = data.validation.size() / static_cast<std::size_t>(cfg.num_references);
    std::vector<ModelParams> references;
    for (long f = 0; f < cfg.num_references; ++f) {
      Dataset ref_data;
      ref_data.vocab = data.vocab;
      ref_data.num_classes = data.num_classes;
      const std::size_t begin = static_cast<std::size_t>(f) * fold_size;
      const std::size_t end = (f == cfg.num_references - 1) ? data.validation.size() : begin + fold_size;
      ref_data.train.assign(data.validation.begin() + begin, data.validation.begin() + end);
      TrainConfig ref_cfg = cfg.train;
      ref_cfg.noise = NoiseSpec{};
      ref_cfg.hidden_dim = target.shape.hidden_dim;
      ref_cfg.seed = root.substream(14, static_cast<std::uint64_t>(f)).key();
      if (ref_cfg.lot_size > static_cast<long>(ref_data.train.size()))
        ref_cfg.lot_size = static_cast<long>(ref_data.train.size());
      references.push_back(private_train(ref_data, ref_cfg).params);
    }
    outcome.auc_reference = mia_reference(target, references, in_samples, out_samples).auc;
  }

  const auto probe_idx = attack_detail::seeded_sample(
      data.test.size(), static_cast<std::size_t>(cfg.probe_count), root.substream(15));
  std::vector<double> jac, met, rou, cos;
  for (std::size_t pi = 0; pi < probe_idx.size(); ++pi) {
    const Example& probe = data.test[probe_idx[pi]];
    if (probe.tokens.empty()) continue;
    const Eigen::VectorXd grad = per_sample_gradient(target, probe);
    RngStream noise_rng = root.substream(16, pi);
    const Eigen::VectorXd shared = dp_noise_step({grad}, spec, noise_rng).gradient;
    const InversionResult inv =
        gradient_inversion(shared, target, spec, cfg.inversion_budget, cfg.inversion_tolerance);
    const std::vector<int> ids =
        reconstruction_token_ids(inv.features, 2 * probe.tokens.size() + 8);
    const TokenSeq recon = arrange_tokens_for_reference(ids, data.vocab, probe.tokens);
    jac.push_back(jaccard(recon, probe.tokens));
    met.push_back(meteor_lite(recon, probe.tokens));
    rou.push_back(rouge_l(recon, probe.tokens));
    if (embeddings != nullptr) {
      Eigen::VectorXd tmp;
      if (embeddings->pool(recon, &tmp) && embeddings->pool(probe.tokens, &tmp))
        cos.push_back(cosine_similarity(recon, probe.tokens, *embeddings));
    }
  }
  if (jac.empty()) throw DataError("attack_model: no usable probes in the test split");
  outcome.jaccard = median(jac);
  outcome.meteor = median(met);
  outcome.rouge_l = median(rou);
  if (!cos.empty()) outcome.cosine = median(cos);
  return outcome;
}

// Full sweep: per noise level, run attack_single per seed and aggregate
// medians. Grid points are independent; reports come back in grid order.
inline std::vector<AttackReport> sweep_attack(const Dataset& data,
                                              const std::vector<NoiseSpec>& grid,
                                              const std::vector<std::uint64_t>& seeds,
                                              const AttackConfig& cfg,
                                              const EmbeddingTable* embeddings = nullptr) {
  if (grid.empty()) throw DataError("sweep_attack: empty noise grid");
  if (seeds.empty()) throw DataError("sweep_attack: empty seed list");
  std::vector<AttackReport> reports;
  reports.reserve(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> auc, auc_ref, leak, leak_fixed, jac, met, rou, cos;
    for (const auto seed : seeds) {
      SingleAttackOutcome one;
      const std::string where = "sweep_attack: grid point " + std::to_string(g) + " (" +
                                noise_kind_name(grid[g].kind) + "): ";
      try {
        one = attack_single(data, grid[g], seed, cfg, embeddings);
      } catch (const NumericError& e) {
        throw NumericError(where + e.what());
      } catch (const std::exception& e) {
        throw DataError(where + e.what());
      }
      auc.push_back(one.mia.auc);
      auc_ref.push_back(one.auc_reference);
      leak.push_back(one.mia.leakage);
      leak_fixed.push_back(one.mia.leakage_fixed);
      jac.push_back(one.jaccard);
      met.push_back(one.meteor);
      rou.push_back(one.rouge_l);
      if (one.cosine) cos.push_back(*one.cosine);
    }
    AttackReport report;
    report.noise = grid[g];
    report.seeds = seeds;
    report.auc = median(auc);
    report.auc_reference = median(auc_ref);
    report.leakage = median(leak);
    report.leakage_fixed = median(leak_fixed);
    report.jaccard = median(jac);
    report.meteor = median(met);
    report.rouge_l = median(rou);
    if (!cos.empty()) report.cosine = median(cos);
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace dpcalib
