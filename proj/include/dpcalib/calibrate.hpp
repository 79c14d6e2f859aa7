#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dpcalib/accountant.hpp"
#include "dpcalib/attacks.hpp"
#include "dpcalib/dataset.hpp"
#include "dpcalib/errors.hpp"
#include "dpcalib/trainer.hpp"

namespace dpcalib {

// One noise level of the privacy/utility tradeoff sweep. Optional fields
// print as empty CSV cells (never "NaN").
struct TradeoffRow {
  std::string mechanism;                 // "none" | "gaussian" | "vmf"
  std::optional<double> noise_param;     // sigma or kappa; empty for baseline
  std::optional<double> target_epsilon;  // Gaussian rows resolved via the accountant
  std::string utility_name;              // "accuracy" | "mcc"
  std::optional<double> utility;
  std::optional<double> auc;
  std::optional<double> leakage;
  std::optional<double> jaccard;
  std::optional<double> cosine;
  std::optional<double> meteor;
  std::optional<double> rouge_l;
  long n_seeds = 0;
  std::optional<double> wall_time_s;
  // Spread across seeds and failure notes live in the sidecar, not the CSV.
  std::optional<double> utility_min, utility_max;
  std::string error;
};

struct TradeoffTable {
  std::vector<TradeoffRow> rows;
};

struct CalibrationConfig {
  TrainConfig train;                  // noise field is per grid point
  std::vector<double> target_epsilons;  // Gaussian grid, resolved to sigma
  std::vector<double> vmf_kappas;
  std::vector<std::uint64_t> seeds;
  double delta = 1e-5;
  std::string utility_metric = "accuracy";  // or "mcc"
  AttackConfig attack;
  int jobs = 1;
  bool record_wall_time = false;  // timings break byte-for-byte reruns
};

namespace calibrate_detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_cell(const std::optional<double>& v) {
  if (!v.has_value() || !std::isfinite(*v)) return "";
  return format_double(*v);
}

struct GridPoint {
  NoiseSpec noise;
  std::optional<double> target_epsilon;
};

}  // namespace calibrate_detail

// Runs the full calibration experiment: a no-noise baseline plus one row per
// Gaussian target-epsilon (resolved to sigma through the accountant) and per
// VMF concentration. Each (row, seed) job trains a model for utility and
// runs the attack suite; rows aggregate by median. Jobs execute in a work
// pool; results merge in grid order, so the output is independent of the
// thread count.
inline TradeoffTable run_calibration(const Dataset& data, const CalibrationConfig& cfg,
                                     const EmbeddingTable* embeddings = nullptr) {
  if (cfg.seeds.empty()) throw DataError("run_calibration: empty seed list");
  if (data.train.empty()) throw DataError("run_calibration: empty training split");
  cfg.train.validate();

  DatasetShape shape{static_cast<long>(data.train.size()), cfg.train.lot_size, cfg.train.epochs};
  shape.validate();

  std::vector<calibrate_detail::GridPoint> grid;
  grid.push_back({NoiseSpec{}, std::nullopt});
  for (const double eps : cfg.target_epsilons) {
    PrivacyBudget budget{eps, cfg.delta, shape.sample_rate(), shape.steps()};
    const double sigma = sigma_for_target_epsilon(budget);
    grid.push_back({NoiseSpec{NoiseKind::Gaussian, sigma}, eps});
  }
  for (const double kappa : cfg.vmf_kappas) {
    if (!(kappa > 0.0)) throw NumericError("run_calibration: vmf kappa must be > 0");
    grid.push_back({NoiseSpec{NoiseKind::Vmf, kappa}, std::nullopt});
  }

  struct JobResult {
    double utility = 0.0;
    SingleAttackOutcome attack;
    bool failed = false;
    std::string error;
  };
  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<JobResult> results(grid.size() * n_seeds);

  const auto run_job = [&](std::size_t g, std::size_t s) {
    JobResult& r = results[g * n_seeds + s];
    try {
      TrainConfig tc = cfg.train;
      tc.noise = grid[g].noise;
      tc.seed = RngStream(cfg.seeds[s]).substream(100, g).key();
      const TrainResult trained = private_train(data, tc);
      const auto& eval_split = !data.validation.empty() ? data.validation
                               : !data.test.empty()    ? data.test
                                                       : data.train;
      const EvalMetrics m = evaluate(trained.params, eval_split);
      r.utility = (cfg.utility_metric == "mcc") ? m.mcc : m.accuracy;
      r.attack = attack_single(data, grid[g].noise, cfg.seeds[s], cfg.attack, embeddings);
    } catch (const std::exception& e) {
      r.failed = true;
      r.error = e.what();
    }
  };

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (std::size_t s = 0; s < n_seeds; ++s) jobs.emplace_back(g, s);

  const int workers = std::max(1, cfg.jobs);
  if (workers == 1) {
    for (const auto& [g, s] : jobs) run_job(g, s);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t mine;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= jobs.size()) return;
            mine = next++;
          }
          run_job(jobs[mine].first, jobs[mine].second);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  TradeoffTable table;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    TradeoffRow row;
    row.mechanism = noise_kind_name(grid[g].noise.kind);
    if (grid[g].noise.kind != NoiseKind::None) row.noise_param = grid[g].noise.parameter;
    row.target_epsilon = grid[g].target_epsilon;
    row.utility_name = cfg.utility_metric;
    row.n_seeds = static_cast<long>(n_seeds);

    std::vector<double> util, auc, leak, jac, cos, met, rou;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const JobResult& r = results[g * n_seeds + s];
      if (r.failed) {
        if (!row.error.empty()) row.error += "; ";
        row.error += "seed " + std::to_string(cfg.seeds[s]) + ": " + r.error;
        continue;
      }
      util.push_back(r.utility);
      auc.push_back(r.attack.mia.auc);
      leak.push_back(r.attack.mia.leakage);
      jac.push_back(r.attack.jaccard);
      met.push_back(r.attack.meteor);
      rou.push_back(r.attack.rouge_l);
      if (r.attack.cosine) cos.push_back(*r.attack.cosine);
    }
    if (!util.empty()) {
      row.utility = median(util);
      row.utility_min = *std::min_element(util.begin(), util.end());
      row.utility_max = *std::max_element(util.begin(), util.end());
      row.auc = median(auc);
      row.leakage = median(leak);
      row.jaccard = median(jac);
      row.meteor = median(met);
      row.rouge_l = median(rou);
      if (!cos.empty()) row.cosine = median(cos);
    }
    if (cfg.record_wall_time) row.wall_time_s = elapsed;
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline const char* kTradeoffCsvHeader =
    "mechanism,noise_param,target_epsilon,utility_name,utility,auc,leakage,jaccard,cosine,"
    "meteor,rouge_l,n_seeds,wall_time_s";

inline std::string tradeoff_csv(const TradeoffTable& table) {
  std::string out = kTradeoffCsvHeader;
  out += "\n";
  for (const auto& r : table.rows) {
    using calibrate_detail::format_cell;
    out += r.mechanism;
    out += ",";
    out += format_cell(r.noise_param);
    out += ",";
    out += format_cell(r.target_epsilon);
    out += ",";
    out += r.utility_name;
    out += ",";
    out += format_cell(r.utility);
    out += ",";
    out += format_cell(r.auc);
    out += ",";
    out += format_cell(r.leakage);
    out += ",";
    out += format_cell(r.jaccard);
    out += ",";
    out += format_cell(r.cosine);
    out += ",";
    out += format_cell(r.meteor);
    out += ",";
    out += format_cell(r.rouge_l);
    out += ",";
    out += std::to_string(r.n_seeds);
    out += ",";
    out += format_cell(r.wall_time_s);
    out += "\n";
  }
  return out;
}

// Minimal scatter of utility against ROUGE-L, one marker family per
// mechanism, mirroring the tradeoff-plot layout (top-left is best).
inline std::string tradeoff_svg(const TradeoffTable& table) {
  const double width = 640, height = 480, margin = 60;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\">\n";
  svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  const auto xpix = [&](double rouge) { return margin + rouge * (width - 2 * margin); };
  const auto ypix = [&](double util) { return height - margin - util * (height - 2 * margin); };
  svg += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(height - margin) +
         "\" x2=\"" + std::to_string(width - margin) + "\" y2=\"" +
         std::to_string(height - margin) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(margin) +
         "\" x2=\"" + std::to_string(margin) + "\" y2=\"" + std::to_string(height - margin) +
         "\" stroke=\"black\"/>\n";
  svg += "<text x=\"300\" y=\"470\" font-size=\"14\">rouge_l</text>\n";
  svg += "<text x=\"12\" y=\"240\" font-size=\"14\" transform=\"rotate(-90 12,240)\">utility</text>\n";
  for (const auto& r : table.rows) {
    if (!r.utility || !r.rouge_l) continue;
    const double u = std::clamp(*r.utility, 0.0, 1.0);
    const double x = xpix(std::clamp(*r.rouge_l, 0.0, 1.0));
    const double y = ypix(u);
    if (r.mechanism == "gaussian") {
      svg += "<circle cx=\"" + std::to_string(x) + "\" cy=\"" + std::to_string(y) +
             "\" r=\"5\" fill=\"steelblue\"/>\n";
    } else if (r.mechanism == "vmf") {
      svg += "<polygon points=\"" + std::to_string(x) + "," + std::to_string(y - 6) + " " +
             std::to_string(x - 5) + "," + std::to_string(y + 4) + " " + std::to_string(x + 5) +
             "," + std::to_string(y + 4) + "\" fill=\"firebrick\"/>\n";
    } else {
      svg += "<rect x=\"" + std::to_string(x - 4) + "\" y=\"" + std::to_string(y - 4) +
             "\" width=\"8\" height=\"8\" fill=\"dimgray\"/>\n";
    }
  }
  svg += "<circle cx=\"480\" cy=\"40\" r=\"5\" fill=\"steelblue\"/>"
         "<text x=\"492\" y=\"45\" font-size=\"13\">gaussian</text>\n";
  svg += "<polygon points=\"480,74 475,84 485,84\" fill=\"firebrick\"/>"
         "<text x=\"492\" y=\"84\" font-size=\"13\">vmf</text>\n";
  svg += "<rect x=\"476\" y=\"112\" width=\"8\" height=\"8\" fill=\"dimgray\"/>"
         "<text x=\"492\" y=\"122\" font-size=\"13\">baseline</text>\n";
  svg += "</svg>\n";
  return svg;
}

// Writes the CSV (exact column schema above), a sidecar with per-seed spread
// and any per-row failure notes, and optionally an SVG scatter plot.
inline void emit(const TradeoffTable& table, const std::string& csv_path,
                 const std::string& svg_path = "") {
  if (table.rows.empty()) throw DataError("emit: empty tradeoff table");
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw DataError("emit: cannot write " + csv_path);
    out << tradeoff_csv(table);
    if (!out) throw DataError("emit: failed while writing " + csv_path);
  }
  {
    std::ofstream side(csv_path + ".spread", std::ios::binary);
    if (!side) throw DataError("emit: cannot write " + csv_path + ".spread");
    side << "mechanism,noise_param,utility_min,utility_max,"
            "vmf_batch_d2_epsilon,vmf_pure_dp_epsilon,error\n";
    for (const auto& r : table.rows) {
      std::string d2_eps, pure_eps;
      if (r.mechanism == "vmf" && r.noise_param) {
        const VmfGuarantee g = vmf_guarantee_metadata(*r.noise_param);
        d2_eps = calibrate_detail::format_double(g.batch_d2_epsilon);
        pure_eps = calibrate_detail::format_double(g.pure_dp_epsilon);
      }
      side << r.mechanism << "," << calibrate_detail::format_cell(r.noise_param) << ","
           << calibrate_detail::format_cell(r.utility_min) << ","
           << calibrate_detail::format_cell(r.utility_max) << "," << d2_eps << "," << pure_eps
           << ",\"" << r.error << "\"\n";
    }
  }
  if (!svg_path.empty()) {
    std::ofstream out(svg_path, std::ios::binary);
    if (!out) throw DataError("emit: cannot write " + svg_path);
    out << tradeoff_svg(table);
  }
}

// Reloads an emitted CSV; emit followed by load round-trips the table fields
// that the CSV carries.
inline TradeoffTable load_tradeoff_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tradeoff csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (line != kTradeoffCsvHeader) throw DataError(path + ": unexpected header");
  TradeoffTable table;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 13) cells.push_back("");
    if (cells.size() != 13) throw DataError(path + ":" + std::to_string(line_no) + ": bad row");
    const auto parse_opt = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return std::stod(s);
    };
    TradeoffRow r;
    r.mechanism = cells[0];
    r.noise_param = parse_opt(cells[1]);
    r.target_epsilon = parse_opt(cells[2]);
    r.utility_name = cells[3];
    r.utility = parse_opt(cells[4]);
    r.auc = parse_opt(cells[5]);
    r.leakage = parse_opt(cells[6]);
    r.jaccard = parse_opt(cells[7]);
    r.cosine = parse_opt(cells[8]);
    r.meteor = parse_opt(cells[9]);
    r.rouge_l = parse_opt(cells[10]);
    r.n_seeds = std::stol(cells[11]);
    r.wall_time_s = parse_opt(cells[12]);
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace dpcalib
