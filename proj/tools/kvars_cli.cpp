// Batch CLI for VAR time-series clustering: simulate, cluster, select,
// evaluate, score. Exit codes: 0 ok, 2 usage/invalid input, 3 I/O failure,
// 4 numeric degeneracy, 5 no restart passed the log-likelihood threshold.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kmle/kmle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitThreshold = 5;

int exit_code_for(const kmle::Error& e) {
  switch (e.code()) {
    case kmle::errc::io_failure:
      return kExitIo;
    case kmle::errc::rank_deficient:
    case kmle::errc::singular_sigma:
    case kmle::errc::degenerate_cluster:
      return kExitNumeric;
    default:
      return kExitUsage;
  }
}

// start:step:end (inclusive) or a single value.
std::vector<int> parse_grid(const std::string& text) {
  std::vector<int> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t colon = text.find(':', pos);
    const std::string tok = text.substr(pos, colon == std::string::npos ? std::string::npos : colon - pos);
    try {
      std::size_t used = 0;
      parts.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      kmle::fail(kmle::errc::invalid_argument, "bad grid component '" + tok + "' in '" + text + "'");
    }
    if (colon == std::string::npos) break;
    pos = colon + 1;
  }
  if (parts.size() == 1) return parts;
  if (parts.size() != 3)
    kmle::fail(kmle::errc::invalid_argument, "grid must be a value or start:step:end, got '" + text + "'");
  const int start = parts[0], step = parts[1], end = parts[2];
  if (step <= 0 || end < start)
    kmle::fail(kmle::errc::invalid_argument, "grid needs step > 0 and end >= start, got '" + text + "'");
  std::vector<int> grid;
  for (int v = start; v <= end; v += step) grid.push_back(v);
  return grid;
}

std::pair<int, int> parse_cell(const std::string& text) {
  const std::size_t comma = text.find(',');
  if (comma == std::string::npos)
    kmle::fail(kmle::errc::invalid_argument, "expected K,p but got '" + text + "'");
  try {
    return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
  } catch (const std::exception&) {
    kmle::fail(kmle::errc::invalid_argument, "expected K,p but got '" + text + "'");
  }
}

struct RunFlags {
  std::uint64_t seed = 0;
  int threads = 0;
  double tol = 1e-6;
  int max_iter = 200;
  std::string stop = "loglik";
  bool ridge = false;
  int restarts = 1;
  std::optional<double> loglik_threshold;
};

void add_run_flags(CLI::App* cmd, RunFlags& flags, bool with_restarts = true) {
  cmd->add_option("--seed", flags.seed, "RNG seed");
  cmd->add_option("--threads", flags.threads, "worker threads (0 = all cores)");
  cmd->add_option("--tol", flags.tol, "stopping tolerance");
  cmd->add_option("--max-iter", flags.max_iter, "iteration cap");
  cmd->add_option("--stop", flags.stop, "stopping rule: loglik or param")
      ->check(CLI::IsMember({"loglik", "param"}));
  cmd->add_flag("--ridge", flags.ridge, "jitter singular matrices instead of failing");
  if (with_restarts) {
    cmd->add_option("--restarts", flags.restarts, "independent restarts; best log-likelihood wins");
    cmd->add_option("--loglik-threshold", flags.loglik_threshold,
                    "discard restarts with final log-likelihood below this value");
  }
}

kmle::StopRule stop_rule_of(const RunFlags& flags) {
  kmle::StopRule rule;
  rule.mode = flags.stop == "param" ? kmle::StopMode::ParamTol : kmle::StopMode::LogLikTol;
  rule.epsilon = flags.tol;
  rule.max_iters = flags.max_iter;
  return rule;
}

int cmd_simulate(const kmle::synth::GenSpec& spec, const fs::path& out_dir) {
  const kmle::synth::SynthData data = kmle::synth::gen_dataset(spec);
  kmle::io::write_dataset(out_dir, data.dataset);
  kmle::io::write_text(out_dir / "truth.json", kmle::io::truth_to_json(data).dump(2) + "\n");
  std::printf("wrote %d series (m=%d, T=%d, K=%d) to %s\n", data.dataset.n(), data.dataset.m,
              data.dataset.t_len, spec.k, out_dir.string().c_str());
  return kExitOk;
}

int cmd_cluster(const fs::path& data_dir, int k, int p, const std::string& init, const RunFlags& flags,
                const fs::path& out_path) {
  const kmle::Dataset ds = kmle::io::read_dataset(data_dir);
  kmle::kvars::KvarsConfig cfg;
  cfg.k = k;
  cfg.p = p;
  cfg.init = init == "oracle" ? kmle::kvars::InitMode::Oracle : kmle::kvars::InitMode::Rnd;
  cfg.stop = stop_rule_of(flags);
  cfg.seed = flags.seed;
  cfg.restarts = flags.restarts;
  cfg.ridge = flags.ridge;
  cfg.threads = flags.threads;

  std::optional<std::vector<int>> truth;
  if (cfg.init == kmle::kvars::InitMode::Oracle) {
    auto raw = kmle::io::read_labels_file(data_dir / "truth.json");
    for (int& v : raw) --v;  // truth.json labels are 1-based
    truth = std::move(raw);
  }

  auto runs = kmle::kvars::run_kvars_restarts(ds, cfg, truth ? &*truth : nullptr);
  std::vector<kmle::kvars::KvarsRun> kept;
  for (auto& run : runs)
    if (!flags.loglik_threshold || run.fit.final_loglik() >= *flags.loglik_threshold)
      kept.push_back(std::move(run));
  if (kept.empty()) {
    std::fprintf(stderr, "error: no restart reached log-likelihood %.17g\n", *flags.loglik_threshold);
    return kExitThreshold;
  }
  const kmle::kvars::KvarsRun& best = kmle::kvars::best_run(kept);
  kmle::io::write_text(out_path, kmle::io::result_to_json(best, flags.seed).dump(2) + "\n");
  std::printf("loglik=%.6f iters=%d stop=%s tau_stable=%d theta_stable=%d -> %s\n",
              best.fit.final_loglik(), best.fit.iters, kmle::stop_reason_name(best.fit.stop_reason),
              best.fit.certificate.tau_stable ? 1 : 0, best.fit.certificate.theta_stable ? 1 : 0,
              out_path.string().c_str());
  return kExitOk;
}

int cmd_select(const fs::path& data_dir, const std::string& k_grid_text, const std::string& p_grid_text,
               const std::string& mode, const std::string& start_text, const RunFlags& flags,
               const fs::path& csv_path, const fs::path& best_path) {
  const kmle::Dataset ds = kmle::io::read_dataset(data_dir);
  const std::vector<int> k_grid = parse_grid(k_grid_text);
  const std::vector<int> p_grid = parse_grid(p_grid_text);
  kmle::bic::BicConfig cfg;
  cfg.restarts = flags.restarts;
  cfg.seed = flags.seed;
  cfg.stop = stop_rule_of(flags);
  cfg.ridge = flags.ridge;
  cfg.threads = flags.threads;

  kmle::bic::BicTable table;
  if (mode == "cyclic") {
    const auto start = start_text.empty() ? std::pair<int, int>{k_grid.front(), p_grid.front()}
                                          : parse_cell(start_text);
    table = kmle::bic::cyclic_descent(ds, k_grid, p_grid, start, cfg);
  } else {
    table = kmle::bic::grid_search(ds, k_grid, p_grid, cfg);
  }
  kmle::io::write_text(csv_path, kmle::io::bic_table_csv(table));
  kmle::io::write_text(best_path, kmle::io::best_cell_json(table).dump(2) + "\n");
  const auto* best = table.best();
  std::printf("best K=%d p=%d bic=%.6f -> %s, %s\n", best->k, best->p, best->bic,
              csv_path.string().c_str(), best_path.string().c_str());
  return kExitOk;
}

int cmd_evaluate(const fs::path& file_a, const fs::path& file_b, const std::string& out) {
  const auto u = kmle::io::read_labels_file(file_a);
  const auto v = kmle::io::read_labels_file(file_b);
  if (u.size() != v.size())
    kmle::fail(kmle::errc::length_mismatch, "label files have " + std::to_string(u.size()) + " and " +
                                                std::to_string(v.size()) + " entries");
  const json report = kmle::io::metrics_report(u, v);
  std::printf("%s\n", report.dump(2).c_str());
  if (!out.empty()) kmle::io::write_text(out, report.dump(2) + "\n");
  return kExitOk;
}

int cmd_score(const fs::path& data_dir, const fs::path& model_path, const fs::path& out_path) {
  const kmle::Dataset ds = kmle::io::read_dataset(data_dir);
  const auto models = kmle::io::read_models(model_path);
  int p_common = 0;
  for (const auto& vp : models) {
    if (vp.m() != ds.m)
      kmle::fail(kmle::errc::mixed_dims, "model dimension " + std::to_string(vp.m()) +
                                             " does not match dataset dimension " + std::to_string(ds.m));
    p_common = std::max(p_common, vp.p);
  }
  if (p_common < 1 || p_common > ds.t_len - 2)
    kmle::fail(kmle::errc::order_too_large, "model order incompatible with series length");

  Eigen::MatrixXd scores(ds.n(), static_cast<Eigen::Index>(models.size()));
  std::vector<int> labels(static_cast<std::size_t>(ds.n()));
  kmle::parallel_for(static_cast<std::size_t>(ds.n()), 0, [&](std::size_t n) {
    const kmle::RegressorBlock blk = kmle::build_regressors(ds.series[n], p_common);
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t k = 0; k < models.size(); ++k) {
      const double d = kmle::kvars::score_block(blk, models[k]);
      scores(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = d;
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    labels[n] = arg + 1;
  });
  kmle::io::write_text(out_path, kmle::io::scores_csv(scores, labels));
  std::printf("wrote %dx%zu score matrix to %s\n", ds.n(), models.size(), out_path.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hard clustering of vector autoregressive time series by classification likelihood"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a labeled synthetic VAR dataset");
  kmle::synth::GenSpec spec;
  std::string sim_out = "dataset";
  std::string noise = "gaussian";
  double snr_db = 0.0;
  sim->add_option("--out", sim_out, "output dataset directory")->required();
  sim->add_option("--m", spec.m, "series dimension");
  sim->add_option("--p", spec.p, "true block order");
  sim->add_option("--k", spec.k, "number of clusters");
  sim->add_option("--nc", spec.n_per_cluster, "series per cluster");
  sim->add_option("--t", spec.t, "series length");
  sim->add_option("--noise", noise, "driving noise: gaussian or t")->check(CLI::IsMember({"gaussian", "t"}));
  sim->add_option("--dof", spec.dof, "Student-t degrees of freedom");
  auto* snr_opt = sim->add_option("--snr-db", snr_db, "target VSNR in dB");
  sim->add_option("--radius", spec.target_spectral_radius, "companion spectral radius in (0,1)");
  sim->add_option("--seed", spec.seed, "RNG seed");

  // cluster
  auto* clu = app.add_subcommand("cluster", "fit K VAR cluster models to a dataset");
  std::string clu_dir;
  int clu_k = 2, clu_p = 1;
  std::string clu_init = "random";
  std::string clu_out = "result.json";
  RunFlags clu_flags;
  clu->add_option("data_dir", clu_dir, "dataset directory")->required();
  clu->add_option("--k", clu_k, "number of clusters")->required();
  clu->add_option("--p", clu_p, "block order")->required();
  clu->add_option("--init", clu_init, "initialisation: random or oracle")
      ->check(CLI::IsMember({"random", "oracle"}));
  clu->add_option("--out", clu_out, "result JSON path");
  add_run_flags(clu, clu_flags);

  // select
  auto* sel = app.add_subcommand("select", "choose (K, p) by BIC over a grid");
  std::string sel_dir, sel_kgrid, sel_pgrid;
  std::string sel_mode = "grid", sel_start;
  std::string sel_csv = "bic.csv", sel_best = "best.json";
  RunFlags sel_flags;
  sel_flags.restarts = 5;
  sel->add_option("data_dir", sel_dir, "dataset directory")->required();
  sel->add_option("--k-grid", sel_kgrid, "K grid, value or start:step:end")->required();
  sel->add_option("--p-grid", sel_pgrid, "p grid, value or start:step:end")->required();
  sel->add_option("--mode", sel_mode, "search mode: grid or cyclic")->check(CLI::IsMember({"grid", "cyclic"}));
  sel->add_option("--start", sel_start, "cyclic start cell K,p (default: grid corner)");
  sel->add_option("--out-csv", sel_csv, "BIC table CSV path");
  sel->add_option("--out-best", sel_best, "best-cell JSON path");
  add_run_flags(sel, sel_flags);

  // evaluate
  auto* eva = app.add_subcommand("evaluate", "agreement measures between two label files");
  std::string eva_a, eva_b, eva_out;
  eva->add_option("labels_a", eva_a, "first label file (JSON)")->required();
  eva->add_option("labels_b", eva_b, "second label file (JSON)")->required();
  eva->add_option("--out", eva_out, "also write the report here");

  // score
  auto* sco = app.add_subcommand("score", "per-series score matrix under fitted models");
  std::string sco_dir, sco_model, sco_out = "scores.csv";
  sco->add_option("data_dir", sco_dir, "dataset directory")->required();
  sco->add_option("model", sco_model, "result or truth JSON with cluster models")->required();
  sco->add_option("--out", sco_out, "scores CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sim->parsed()) {
      if (noise == "t") spec.noise = kmle::synth::NoiseKind::StudentT;
      if (snr_opt->count() > 0) spec.target_snr_db = snr_db;
      return cmd_simulate(spec, sim_out);
    }
    if (clu->parsed()) return cmd_cluster(clu_dir, clu_k, clu_p, clu_init, clu_flags, clu_out);
    if (sel->parsed())
      return cmd_select(sel_dir, sel_kgrid, sel_pgrid, sel_mode, sel_start, sel_flags, sel_csv, sel_best);
    if (eva->parsed()) return cmd_evaluate(eva_a, eva_b, eva_out);
    if (sco->parsed()) return cmd_score(sco_dir, sco_model, sco_out);
  } catch (const kmle::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitUsage;
}
