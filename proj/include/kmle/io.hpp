#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmle/core.hpp"
#include "kmle/engine.hpp"
#include "kmle/errors.hpp"
#include "kmle/kvars.hpp"
#include "kmle/metrics.hpp"
#include "kmle/model_select.hpp"
#include "kmle/synth.hpp"

namespace kmle::io {

namespace fs = std::filesystem;
using nlohmann::json;

// All numeric text uses '.' as the decimal separator and enough digits to
// round-trip doubles exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_failure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(errc::io_failure, "cannot write " + path.string());
  out << text;
  if (!out) fail(errc::io_failure, "write failed for " + path.string());
}

inline json parse_json(const fs::path& path) {
  json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) fail(errc::io_failure, "malformed JSON in " + path.string());
  return j;
}

// ---- dataset directory: manifest.json + one headerless CSV per series ----
// Each CSV has T rows of m comma-separated values; row t is Y_t'.

inline void write_series_csv(const fs::path& path, const Eigen::MatrixXd& series) {
  std::ostringstream out;
  for (Eigen::Index t = 0; t < series.cols(); ++t) {
    for (Eigen::Index i = 0; i < series.rows(); ++i) {
      if (i) out << ',';
      out << format_double(series(i, t));
    }
    out << '\n';
  }
  write_text(path, out.str());
}

inline Eigen::MatrixXd read_series_csv(const fs::path& path, int m, int t_len) {
  std::ifstream in(path);
  if (!in) fail(errc::io_failure, "cannot open " + path.string());
  Eigen::MatrixXd series(m, t_len);
  std::string line;
  int t = 0;
  while (std::getline(in, line)) {
    if (line.empty() && t == t_len) break;
    if (t >= t_len) fail(errc::io_failure, path.string() + ": more rows than the manifest declares");
    std::stringstream ls(line);
    std::string fieldtext;
    int i = 0;
    while (std::getline(ls, fieldtext, ',')) {
      if (i >= m) fail(errc::io_failure, path.string() + ": too many columns in row " + std::to_string(t + 1));
      char* end = nullptr;
      series(i, t) = std::strtod(fieldtext.c_str(), &end);
      if (end == fieldtext.c_str()) fail(errc::io_failure, path.string() + ": bad number '" + fieldtext + "'");
      ++i;
    }
    if (i != m) fail(errc::io_failure, path.string() + ": expected " + std::to_string(m) + " columns");
    ++t;
  }
  if (t != t_len) fail(errc::io_failure, path.string() + ": expected " + std::to_string(t_len) + " rows");
  return series;
}

inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(errc::io_failure, "cannot create " + dir.string());
  json manifest;
  manifest["m"] = ds.m;
  manifest["T"] = ds.t_len;
  manifest["N"] = ds.n();
  std::vector<std::string> files;
  for (int i = 0; i < ds.n(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "series_%04d.csv", i);
    files.emplace_back(name);
    write_series_csv(dir / name, ds.series[static_cast<std::size_t>(i)]);
  }
  manifest["files"] = files;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Dataset read_dataset(const fs::path& dir) {
  const json manifest = parse_json(dir / "manifest.json");
  for (const char* key : {"m", "T", "N", "files"})
    if (!manifest.contains(key)) fail(errc::io_failure, "manifest missing field '" + std::string(key) + "'");
  const int m = manifest["m"].get<int>();
  const int t_len = manifest["T"].get<int>();
  const auto files = manifest["files"].get<std::vector<std::string>>();
  if (static_cast<int>(files.size()) != manifest["N"].get<int>())
    fail(errc::io_failure, "manifest N does not match its file list");
  std::vector<Eigen::MatrixXd> series;
  series.reserve(files.size());
  for (const auto& f : files) series.push_back(read_series_csv(dir / f, m, t_len));
  return validate_dataset(std::move(series), files);
}

// ---- model parameters ----

inline json matrix_to_json(const Eigen::MatrixXd& mat) {
  json j;
  j["rows"] = static_cast<int>(mat.rows());
  j["cols"] = static_cast<int>(mat.cols());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(mat.size()));
  for (Eigen::Index i = 0; i < mat.rows(); ++i)
    for (Eigen::Index c = 0; c < mat.cols(); ++c) data.push_back(mat(i, c));
  j["data"] = std::move(data);  // row-major
  return j;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    fail(errc::io_failure, "matrix JSON needs rows/cols/data");
  const int rows = j["rows"].get<int>();
  const int cols = j["cols"].get<int>();
  const auto data = j["data"].get<std::vector<double>>();
  if (static_cast<int>(data.size()) != rows * cols) fail(errc::io_failure, "matrix data length mismatch");
  Eigen::MatrixXd mat(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) mat(i, c) = data[static_cast<std::size_t>(i * cols + c)];
  return mat;
}

inline json params_to_json(const kvars::VarParams& vp) {
  json j;
  j["p"] = vp.p;
  j["A"] = matrix_to_json(vp.a);
  j["Sigma"] = matrix_to_json(vp.sigma);
  return j;
}

inline kvars::VarParams params_from_json(const json& j, bool ridge = false) {
  if (!j.contains("p") || !j.contains("A") || !j.contains("Sigma"))
    fail(errc::io_failure, "cluster JSON needs p/A/Sigma");
  return kvars::make_var_params(matrix_from_json(j["A"]), matrix_from_json(j["Sigma"]), j["p"].get<int>(),
                                kvars::SolveOptions{ridge, 0});
}

// Accepts the "clusters" array of a result file or the "models" array of a
// truth file.
inline std::vector<kvars::VarParams> read_models(const fs::path& path) {
  const json j = parse_json(path);
  const char* key = j.contains("clusters") ? "clusters" : (j.contains("models") ? "models" : nullptr);
  if (key == nullptr) fail(errc::io_failure, path.string() + " has neither 'clusters' nor 'models'");
  std::vector<kvars::VarParams> models;
  for (const auto& cj : j[key]) models.push_back(params_from_json(cj));
  if (models.empty()) fail(errc::io_failure, path.string() + " lists no models");
  return models;
}

// ---- labels ----
// Accepts a bare JSON array or any object with a "labels" array.

inline std::vector<int> read_labels_file(const fs::path& path) {
  const json j = parse_json(path);
  const json* arr = nullptr;
  if (j.is_array())
    arr = &j;
  else if (j.is_object() && j.contains("labels"))
    arr = &j["labels"];
  if (arr == nullptr || !arr->is_array())
    fail(errc::io_failure, path.string() + " holds no label array");
  std::vector<int> labels;
  labels.reserve(arr->size());
  for (const auto& v : *arr) {
    if (!v.is_number_integer()) fail(errc::io_failure, path.string() + ": labels must be integers");
    labels.push_back(v.get<int>());
  }
  return labels;
}

inline std::vector<int> to_one_based(const std::vector<int>& labels) {
  std::vector<int> out(labels);
  for (int& v : out) ++v;
  return out;
}

// ---- clustering result ----

inline json result_to_json(const kvars::KvarsRun& run, std::uint64_t cli_seed) {
  json j;
  j["labels"] = to_one_based(run.fit.assignment.labels);
  json clusters = json::array();
  for (const auto& vp : run.fit.params) clusters.push_back(params_to_json(vp));
  j["clusters"] = std::move(clusters);
  j["loglik_trace"] = run.fit.trace;
  j["loglik"] = run.fit.final_loglik();
  j["iters"] = run.fit.iters;
  j["stop_reason"] = stop_reason_name(run.fit.stop_reason);
  j["certificate"] = {{"tau_stable", run.fit.certificate.tau_stable},
                      {"theta_stable", run.fit.certificate.theta_stable}};
  j["seed"] = cli_seed;
  j["restart"] = run.restart;
  return j;
}

// ---- synthetic truth ----

inline json truth_to_json(const synth::SynthData& data) {
  json j;
  j["labels"] = to_one_based(data.truth.labels);
  json models = json::array();
  for (const auto& vp : data.models) models.push_back(params_to_json(vp));
  j["models"] = std::move(models);
  j["achieved_snr_db"] = data.snr_db;
  json spec;
  spec["m"] = data.spec.m;
  spec["p"] = data.spec.p;
  spec["t"] = data.spec.t;
  spec["k"] = data.spec.k;
  spec["n_per_cluster"] = data.spec.n_per_cluster;
  spec["noise"] = data.spec.noise == synth::NoiseKind::StudentT ? "t" : "gaussian";
  if (data.spec.noise == synth::NoiseKind::StudentT) spec["dof"] = data.spec.dof;
  if (data.spec.target_snr_db) spec["target_snr_db"] = *data.spec.target_snr_db;
  spec["target_spectral_radius"] = data.spec.target_spectral_radius;
  spec["seed"] = data.spec.seed;
  j["spec"] = std::move(spec);
  return j;
}

// ---- BIC table ----

inline std::string bic_table_csv(const bic::BicTable& table) {
  std::ostringstream out;
  out << "K,p,bic,loglik,status\n";
  for (const auto& row : table.cells)
    for (const auto& cell : row) {
      if (!cell.evaluated()) continue;
      out << cell.k << ',' << cell.p << ',' << format_double(cell.bic) << ','
          << format_double(cell.loglik) << ',' << cell.status << '\n';
    }
  return out.str();
}

inline json best_cell_json(const bic::BicTable& table) {
  const bic::BicCell* best = table.best();
  if (best == nullptr) fail(errc::degenerate_cluster, "no grid cell produced a finite score");
  json j;
  j["K"] = best->k;
  j["p"] = best->p;
  j["bic"] = best->bic;
  j["loglik"] = best->loglik;
  return j;
}

// ---- evaluation report ----

inline json metrics_report(const std::vector<int>& u, const std::vector<int>& v) {
  if (u.size() != v.size()) fail(errc::length_mismatch, "label vectors differ in length");
  const auto tab = metrics::contingency(u, v);
  json j;
  j["ri"] = metrics::rand_index(u, v);
  j["ari"] = metrics::ari(u, v);
  j["nmi_sqrt"] = metrics::nmi_sqrt(u, v);
  j["nmi_max"] = metrics::nmi_max(u, v);
  j["nid"] = metrics::nid(u, v);
  j["n"] = static_cast<int>(u.size());
  j["k_u"] = tab.k_u();
  j["k_v"] = tab.k_v();
  return j;
}

// ---- per-series score matrix ----

inline std::string scores_csv(const Eigen::MatrixXd& scores, const std::vector<int>& labels_one_based) {
  std::ostringstream out;
  out << "series";
  for (Eigen::Index k = 0; k < scores.cols(); ++k) out << ",D_" << (k + 1);
  out << ",label\n";
  for (Eigen::Index n = 0; n < scores.rows(); ++n) {
    out << (n + 1);
    for (Eigen::Index k = 0; k < scores.cols(); ++k) out << ',' << format_double(scores(n, k));
    out << ',' << labels_one_based[static_cast<std::size_t>(n)] << '\n';
  }
  return out.str();
}

}  // namespace kmle::io
