#pragma once

// Command implementations for the `knnres` tool. Kept in a header so the
// test suite can drive the commands in-process.

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "knnres/knnres.hpp"

namespace knnres::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kDiverged = 1, kUsage = 2 };

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// helpers

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidData("cannot open '" + path + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw InvalidArgument("bad list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

inline std::vector<std::string> parse_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!detail::trim(item).empty()) out.push_back(detail::trim(item));
  return out;
}

inline const char* loss_name(LossKind k) { return k == LossKind::Sinkhorn ? "sinkhorn" : "mmd"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "sinkhorn") return LossKind::Sinkhorn;
  if (s == "mmd") return LossKind::Mmd;
  throw InvalidArgument("unknown loss '" + s + "'");
}

inline const char* penalty_name(PenaltyMode p) {
  switch (p) {
    case PenaltyMode::Auto: return "auto";
    case PenaltyMode::Fd: return "fd";
    case PenaltyMode::HutchinsonQuadratic: return "hutch-qf";
    case PenaltyMode::HutchinsonAlg3: return "hutch-alg3";
  }
  return "?";
}

inline PenaltyMode parse_penalty(const std::string& s) {
  if (s == "auto") return PenaltyMode::Auto;
  if (s == "fd") return PenaltyMode::Fd;
  if (s == "hutch-qf") return PenaltyMode::HutchinsonQuadratic;
  if (s == "hutch-alg3") return PenaltyMode::HutchinsonAlg3;
  throw InvalidArgument("unknown penalty mode '" + s + "'");
}

/// Documented defaults for low-dimensional (shape) data.
inline TrainConfig low_dim_defaults() {
  TrainConfig c;
  c.fd_epsilon = 0.005;
  c.lambda = 1e-5;
  c.sigma = 0.001;
  return c;
}

/// Documented defaults for high-dimensional (cytometry-like) data.
inline TrainConfig high_dim_defaults() {
  TrainConfig c;
  c.fd_epsilon = 0.05;
  c.lambda = 0.1;
  c.sigma = 0.04;
  c.hutchinson_k = 5;
  return c;
}

inline json config_to_json(const TrainConfig& c) {
  return json{
      {"loss", loss_name(c.loss)},
      {"sigma", c.sigma},
      {"sinkhorn_eps", c.sigma * c.sigma},
      {"sinkhorn_max_iters", c.sinkhorn_max_iters},
      {"sinkhorn_tol", c.sinkhorn_tol},
      {"lambda", c.lambda},
      {"fd_epsilon", c.fd_epsilon},
      {"penalty", penalty_name(c.penalty)},
      {"hutchinson_k", c.hutchinson_k},
      {"fd_dim_threshold", c.fd_dim_threshold},
      {"batch_size", c.batch_size},
      {"max_epochs", c.max_epochs},
      {"convergence_patience", c.convergence_patience},
      {"convergence_tol", c.convergence_tol},
      {"seed", c.seed},
      {"hidden", c.hidden},
      {"leaky_slope", c.leaky_slope},
      {"lr", c.lr},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"adam_eps", c.adam_eps},
      {"weight_decay", c.weight_decay},
      {"plateau_factor", c.plateau_factor},
      {"plateau_patience", c.plateau_patience},
      {"min_lr", c.min_lr},
      {"plateau_threshold", c.plateau_threshold},
  };
}

/// Overlays every key present in j onto c.
inline void apply_config_json(TrainConfig& c, const json& j) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
  if (j.contains("penalty")) c.penalty = parse_penalty(j.at("penalty").get<std::string>());
  get("sigma", c.sigma);
  get("sinkhorn_max_iters", c.sinkhorn_max_iters);
  get("sinkhorn_tol", c.sinkhorn_tol);
  get("lambda", c.lambda);
  get("fd_epsilon", c.fd_epsilon);
  get("hutchinson_k", c.hutchinson_k);
  get("fd_dim_threshold", c.fd_dim_threshold);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("convergence_patience", c.convergence_patience);
  get("convergence_tol", c.convergence_tol);
  get("seed", c.seed);
  get("hidden", c.hidden);
  get("leaky_slope", c.leaky_slope);
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("weight_decay", c.weight_decay);
  get("plateau_factor", c.plateau_factor);
  get("plateau_patience", c.plateau_patience);
  get("min_lr", c.min_lr);
  get("plateau_threshold", c.plateau_threshold);
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidData("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

inline void write_history(const fs::path& path, const LossReport& r) {
  std::ofstream out(path);
  if (!out) throw InvalidData("cannot write '" + path.string() + "'");
  out << "epoch,step,l1,l2,total,lr,grad_norm,wall_time\n";
  char buf[256];
  for (const auto& s : r.steps) {
    std::snprintf(buf, sizeof buf, "%d,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", s.epoch, s.step, s.l1, s.l2,
                  s.total, s.lr, s.grad_norm, s.wall_time);
    out << buf;
  }
}

// Lattice lines over the bounding box of the first two coordinates (other
// coordinates held at the target mean), pushed through the warp. One row per
// vertex: line id, orientation, vertex index, original x/y, warped x/y.
inline void write_grid_warp(const fs::path& path, const ResidualNet& net, const PointSet& target, int lines,
                            int samples) {
  detail::require(target.dim() >= 2, "--grid-warp needs d >= 2");
  const RowVector lo = target.matrix().colwise().minCoeff();
  const RowVector hi = target.matrix().colwise().maxCoeff();
  const RowVector mean = target.matrix().colwise().mean();
  std::ofstream out(path);
  if (!out) throw InvalidData("cannot write '" + path.string() + "'");
  out << "line,orientation,vertex,x,y,warped_x,warped_y\n";
  int id = 0;
  char buf[256];
  for (int orient = 0; orient < 2; ++orient) {
    for (int l = 0; l < lines; ++l, ++id) {
      Matrix pts = mean.replicate(samples, 1);
      const double fixed = lo(1 - orient) + (hi(1 - orient) - lo(1 - orient)) * l / std::max(1, lines - 1);
      for (int s = 0; s < samples; ++s) {
        pts(s, orient) = lo(orient) + (hi(orient) - lo(orient)) * s / std::max(1, samples - 1);
        pts(s, 1 - orient) = fixed;
      }
      const Matrix warped = forward_matrix(net, pts);
      for (int s = 0; s < samples; ++s) {
        std::snprintf(buf, sizeof buf, "%d,%s,%d,%.17g,%.17g,%.17g,%.17g\n", id, orient == 0 ? "h" : "v", s, pts(s, 0),
                      pts(s, 1), warped(s, 0), warped(s, 1));
        out << buf;
      }
    }
  }
}

// Per-point origin and displacement phi(y) - y.
inline void write_field(const fs::path& path, const PointSet& target, const PointSet& aligned) {
  std::vector<std::string> names;
  for (Eigen::Index c = 0; c < target.dim(); ++c) names.push_back("x" + std::to_string(c));
  for (Eigen::Index c = 0; c < target.dim(); ++c) names.push_back("dx" + std::to_string(c));
  Matrix rows(target.size(), 2 * target.dim());
  rows << target.matrix(), aligned.matrix() - target.matrix();
  std::ofstream out(path);
  if (!out) throw InvalidData("cannot write '" + path.string() + "'");
  write_csv(out, rows, names);
}

inline json file_entry(const std::string& path, const PointSet& ps) {
  return json{{"path", path}, {"sha256", sha256_file(path)}, {"rows", ps.size()}, {"cols", ps.dim()}};
}

inline json hamming_json(const PointSet& before, const PointSet& after, const std::vector<int>& ks) {
  json h = json::object();
  for (int k : ks) {
    if (k < 1 || k >= before.size()) continue;
    const long v = hamming_loss(build_knn_graph(before, k), build_knn_graph(after, k));
    h[std::to_string(k)] = v;
  }
  return h;
}

// ---------------------------------------------------------------------------
// register

struct RegisterArgs {
  std::string reference, target, ground_truth, out = "knnres_out", config_file;
  std::string loss = "sinkhorn", penalty = "auto", profile = "auto", hidden, preprocess, columns, hamming_k = "5";
  std::string delimiter = ",";
  double sigma = 0, lambda = 0, fd_eps = 0, lr = 0, min_lr = 0, plateau_factor = 0, conv_tol = 0, sinkhorn_tol = 0,
         weight_decay = 0;
  int hutchinson_k = 0, batch = 0, epochs = 0, plateau_patience = 0, conv_patience = 0, sinkhorn_iters = 0;
  std::uint64_t seed = 0;
  bool grid_warp = false, field = false, shared_stats = false, header = false, no_header = false;
  int grid_lines = 21, grid_samples = 101;
};

inline void add_register_options(CLI::App& sub, RegisterArgs& a) {
  sub.add_option("--reference", a.reference, "Reference point set (CSV)");
  sub.add_option("--target", a.target, "Target point set to warp (CSV)");
  sub.add_option("--ground-truth", a.ground_truth, "Row-aligned ground truth for the warped target (RMSE)");
  sub.add_option("--out", a.out, "Output directory");
  sub.add_option("--config", a.config_file, "JSON config or a previous run manifest");
  sub.add_option("--profile", a.profile, "Default set: auto, lowd, highd")->check(CLI::IsMember({"auto", "lowd", "highd"}));
  sub.add_option("--loss", a.loss, "Alignment loss")->check(CLI::IsMember({"sinkhorn", "mmd"}));
  sub.add_option("--sigma", a.sigma, "Sinkhorn blur (eps = sigma^2) or MMD bandwidth");
  sub.add_option("--lambda", a.lambda, "Weight of the orthogonality penalty");
  sub.add_option("--fd-eps", a.fd_eps, "Finite-difference / Rademacher step");
  sub.add_option("--hutchinson-k", a.hutchinson_k, "Rademacher directions per point");
  sub.add_option("--penalty-mode", a.penalty, "auto, fd, hutch-qf, hutch-alg3")
      ->check(CLI::IsMember({"auto", "fd", "hutch-qf", "hutch-alg3"}));
  sub.add_option("--batch", a.batch, "Mini-batch size");
  sub.add_option("--epochs", a.epochs, "Maximum epochs");
  sub.add_option("--seed", a.seed, "Run seed");
  sub.add_option("--hidden", a.hidden, "Hidden widths, e.g. 50,50");
  sub.add_option("--lr", a.lr, "Initial learning rate");
  sub.add_option("--min-lr", a.min_lr, "Scheduler floor");
  sub.add_option("--plateau-factor", a.plateau_factor, "Scheduler reduction factor");
  sub.add_option("--plateau-patience", a.plateau_patience, "Scheduler patience (epochs)");
  sub.add_option("--convergence-patience", a.conv_patience, "Stop after this many stale epochs");
  sub.add_option("--convergence-tol", a.conv_tol, "Relative epoch-mean improvement threshold");
  sub.add_option("--sinkhorn-iters", a.sinkhorn_iters, "Sinkhorn iteration cap");
  sub.add_option("--sinkhorn-tol", a.sinkhorn_tol, "Sinkhorn potential tolerance");
  sub.add_option("--weight-decay", a.weight_decay, "L2 term added to gradients");
  sub.add_option("--preprocess", a.preprocess, "Steps: log1p,standardize,minmax,drop_zero_rows[:t]");
  sub.add_flag("--shared-stats", a.shared_stats, "Fit preprocessing on the reference and reuse it for the target");
  sub.add_option("--columns", a.columns, "Comma-separated header names to load");
  sub.add_option("--delimiter", a.delimiter, "CSV delimiter");
  sub.add_flag("--header", a.header, "Input files have a header row");
  sub.add_flag("--no-header", a.no_header, "Input files have no header row");
  sub.add_option("--hamming-k", a.hamming_k, "k values for the kNN Hamming loss, e.g. 3,5,10");
  sub.add_flag("--grid-warp", a.grid_warp, "Write the warped lattice (grid_warp.csv)");
  sub.add_option("--grid-lines", a.grid_lines, "Lattice lines per direction");
  sub.add_flag("--field", a.field, "Write per-point displacement vectors (field.csv)");
}

inline CsvOptions csv_options(const std::string& delimiter, bool header, bool no_header, const std::string& columns) {
  CsvOptions o;
  if (delimiter.size() != 1) throw InvalidArgument("--delimiter must be a single character");
  o.delimiter = delimiter[0];
  if (header) o.has_header = true;
  if (no_header) o.has_header = false;
  o.columns = parse_names(columns);
  return o;
}

inline int cmd_register(const CLI::App& sub, RegisterArgs a, std::ostream& out, std::ostream& err) {
  json replay;
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    if (!in) {
      err << "error: cannot open config '" << a.config_file << "'\n";
      return kUsage;
    }
    try {
      in >> replay;
    } catch (const std::exception& e) {
      err << "error: config '" << a.config_file << "' is not valid JSON: " << e.what() << "\n";
      return kUsage;
    }
  }
  const json cfg_json = replay.contains("config") ? replay["config"] : replay;
  auto from_replay = [&](const char* section, const char* key) -> std::string {
    if (replay.contains(section) && replay[section].contains(key) && replay[section][key].contains("path"))
      return replay[section][key]["path"].get<std::string>();
    return {};
  };
  if (a.reference.empty()) a.reference = from_replay("inputs", "reference");
  if (a.target.empty()) a.target = from_replay("inputs", "target");
  if (a.ground_truth.empty()) a.ground_truth = from_replay("inputs", "ground_truth");
  if (!sub.count("--preprocess") && replay.contains("preprocess")) {
    std::string steps;
    for (const auto& s : replay["preprocess"]["steps"]) steps += (steps.empty() ? "" : ",") + s.get<std::string>();
    a.preprocess = steps;
    a.shared_stats = a.shared_stats || replay["preprocess"].value("shared_stats", false);
  }
  if (!sub.count("--hamming-k") && replay.contains("hamming_k")) {
    std::string ks;
    for (const auto& k : replay["hamming_k"]) ks += (ks.empty() ? "" : ",") + std::to_string(k.get<int>());
    a.hamming_k = ks;
  }
  if (a.reference.empty() || a.target.empty()) {
    err << "error: --reference and --target are required\n";
    return kUsage;
  }
  for (const auto* p : {&a.reference, &a.target}) {
    if (!fs::exists(*p)) {
      err << "error: input file not found: " << *p << "\n";
      return kUsage;
    }
  }
  if (!a.ground_truth.empty() && !fs::exists(a.ground_truth)) {
    err << "error: input file not found: " << a.ground_truth << "\n";
    return kUsage;
  }

  try {
    const CsvOptions copt = csv_options(a.delimiter, a.header, a.no_header, a.columns);
    const Table ref_tab = load_pointset(a.reference, copt);
    const Table tgt_tab = load_pointset(a.target, copt);
    if (ref_tab.points.dim() != tgt_tab.points.dim()) {
      err << "error: reference has " << ref_tab.points.dim() << " columns, target has " << tgt_tab.points.dim() << "\n";
      return kUsage;
    }
    const Eigen::Index d = ref_tab.points.dim();

    // defaults < config file < flags
    std::string profile = a.profile;
    if (profile == "auto") profile = d <= 6 ? "lowd" : "highd";
    TrainConfig cfg = profile == "lowd" ? low_dim_defaults() : high_dim_defaults();
    apply_config_json(cfg, cfg_json);
    if (sub.count("--loss")) cfg.loss = parse_loss(a.loss);
    if (sub.count("--penalty-mode")) cfg.penalty = parse_penalty(a.penalty);
    if (sub.count("--sigma")) cfg.sigma = a.sigma;
    if (sub.count("--lambda")) cfg.lambda = a.lambda;
    if (sub.count("--fd-eps")) cfg.fd_epsilon = a.fd_eps;
    if (sub.count("--hutchinson-k")) cfg.hutchinson_k = a.hutchinson_k;
    if (sub.count("--batch")) cfg.batch_size = a.batch;
    if (sub.count("--epochs")) cfg.max_epochs = a.epochs;
    if (sub.count("--seed")) cfg.seed = a.seed;
    if (sub.count("--hidden")) cfg.hidden = parse_list<int>(a.hidden);
    if (sub.count("--lr")) cfg.lr = a.lr;
    if (sub.count("--min-lr")) cfg.min_lr = a.min_lr;
    if (sub.count("--plateau-factor")) cfg.plateau_factor = a.plateau_factor;
    if (sub.count("--plateau-patience")) cfg.plateau_patience = a.plateau_patience;
    if (sub.count("--convergence-patience")) cfg.convergence_patience = a.conv_patience;
    if (sub.count("--convergence-tol")) cfg.convergence_tol = a.conv_tol;
    if (sub.count("--sinkhorn-iters")) cfg.sinkhorn_max_iters = a.sinkhorn_iters;
    if (sub.count("--sinkhorn-tol")) cfg.sinkhorn_tol = a.sinkhorn_tol;
    if (sub.count("--weight-decay")) cfg.weight_decay = a.weight_decay;
    cfg.validate();

    std::vector<PrepStep> steps;
    for (const auto& s : parse_names(a.preprocess)) steps.push_back(parse_prep_step(s));
    auto [ref_pre, tgt_pre] = preprocess_pair(ref_tab.points, tgt_tab.points, steps, a.shared_stats);
    for (const auto& w : ref_pre.warnings) err << "warning (reference): " << w << "\n";
    for (const auto& w : tgt_pre.warnings) err << "warning (target): " << w << "\n";
    const std::vector<int> ks = parse_list<int>(a.hamming_k);

    fs::create_directories(a.out);
    const fs::path dir(a.out);
    json manifest;
    manifest["knnres_version"] = kVersion;
    manifest["command"] = "register";
    manifest["seed"] = cfg.seed;
    manifest["profile"] = profile;
    manifest["config"] = config_to_json(cfg);
    manifest["penalty_resolved"] = penalty_name(resolve_penalty(cfg, d));
    manifest["conventions"] = {{"sinkhorn_cost", "0.5*|x-y|^2"},
                               {"sinkhorn_eps", "sigma^2"},
                               {"scheduler_monitor", "epoch-mean total loss"},
                               {"penalty_points", "target batch"}};
    manifest["inputs"]["reference"] = file_entry(a.reference, ref_tab.points);
    manifest["inputs"]["target"] = file_entry(a.target, tgt_tab.points);
    if (!ref_tab.names.empty()) manifest["columns"] = ref_tab.names;
    json prep_steps = json::array();
    for (const auto& s : steps) {
      std::string name = prep_name(s.kind);
      if (s.kind == PrepKind::DropZeroRows) name += ":" + std::to_string(s.threshold);
      prep_steps.push_back(name);
    }
    manifest["preprocess"] = {{"steps", prep_steps}, {"shared_stats", a.shared_stats}};
    manifest["hamming_k"] = ks;
    manifest["threads"] = thread_count();

    TrainResult res;
    try {
      res = train(ref_pre.points, tgt_pre.points, cfg);
    } catch (const TrainingDiverged& e) {
      manifest["status"] = "diverged";
      manifest["error"] = e.what();
      manifest["outputs"] = {{"loss_history", "loss_history.csv"}};
      write_history(dir / "loss_history.csv", e.report());
      write_json(dir / "manifest.json", manifest);
      err << "error: " << e.what() << "\n";
      return kDiverged;
    }

    const PointSet aligned = transform(res.net, tgt_pre.points);
    json outputs = {{"aligned", "aligned.csv"}, {"loss_history", "loss_history.csv"}, {"net", "net.txt"}};
    save_pointset((dir / "aligned.csv").string(), aligned, ref_tab.names);
    write_history(dir / "loss_history.csv", res.report);
    {
      std::ofstream nf(dir / "net.txt");
      save_net(res.net, nf);
    }
    if (a.grid_warp) {
      write_grid_warp(dir / "grid_warp.csv", res.net, tgt_pre.points, a.grid_lines, a.grid_samples);
      outputs["grid_warp"] = "grid_warp.csv";
    }
    if (a.field) {
      write_field(dir / "field.csv", tgt_pre.points, aligned);
      outputs["field"] = "field.csv";
    }
    manifest["outputs"] = outputs;

    json metrics;
    const auto& last = res.report.steps.back();
    metrics["final_l1"] = last.l1;
    metrics["final_l2"] = last.l2;
    metrics["final_total"] = last.total;
    metrics["final_epoch_mean_total"] = res.report.epoch_mean_total.back();
    metrics["epochs_run"] = res.report.epochs_run;
    metrics["stop_reason"] = res.report.stop_reason;
    metrics["hamming"] = hamming_json(tgt_pre.points, aligned, ks);
    if (!a.ground_truth.empty()) {
      const Table gt = load_pointset(a.ground_truth, copt);
      manifest["inputs"]["ground_truth"] = file_entry(a.ground_truth, gt.points);
      const PointSet gt_pre = steps.empty() ? gt.points : apply_preprocess(gt.points, ref_pre.fitted);
      if (gt_pre.size() == aligned.size() && gt_pre.dim() == aligned.dim()) {
        metrics["rmse"] = rmse(aligned, gt_pre);
        metrics["rmse_before"] = rmse(tgt_pre.points, gt_pre);
      } else {
        err << "warning: ground truth shape does not match the aligned set; RMSE skipped\n";
      }
    }
    manifest["metrics"] = metrics;
    manifest["status"] = "ok";
    write_json(dir / "manifest.json", manifest);
    out << metrics.dump(2) << "\n";
    return kOk;
  } catch (const InvalidData& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string shape = "ring", deform = "rbf", out = "knnres_synth", translate;
  int m = 100, d = 2, level = 2, components = 3;
  double scale = 0.5, angle = 0.0, noise = 0.0, spread = 0.05;
  std::uint64_t seed = 0;
};

inline void add_synth_options(CLI::App& sub, SynthArgs& a) {
  sub.add_option("--shape", a.shape, "ring, grid, two-moons, gaussian-mixture")
      ->check(CLI::IsMember({"ring", "grid", "two-moons", "gaussian-mixture"}));
  sub.add_option("--m", a.m, "Number of points");
  sub.add_option("--d", a.d, "Dimension");
  sub.add_option("--deform", a.deform, "rbf, scale, rotate, translate")
      ->check(CLI::IsMember({"rbf", "scale", "rotate", "translate"}));
  sub.add_option("--level", a.level, "RBF deformation level 0..5");
  sub.add_option("--scale", a.scale, "Scale factor about the centroid");
  sub.add_option("--angle", a.angle, "Rotation angle (radians)");
  sub.add_option("--translate", a.translate, "Translation vector, comma separated");
  sub.add_option("--noise", a.noise, "Shape jitter before normalisation");
  sub.add_option("--components", a.components, "Mixture components");
  sub.add_option("--spread", a.spread, "Mixture component std");
  sub.add_option("--seed", a.seed, "Seed");
  sub.add_option("--out", a.out, "Output directory");
}

inline ShapeKind parse_shape(const std::string& s) {
  if (s == "ring") return ShapeKind::Ring;
  if (s == "grid") return ShapeKind::Grid;
  if (s == "two-moons") return ShapeKind::TwoMoons;
  return ShapeKind::GaussianMixture;
}

inline int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  if (a.deform == "rbf" && (a.level < 0 || a.level > 5)) {
    err << "error: --level must be in 0..5\n";
    return kUsage;
  }
  try {
    ShapeOptions so;
    so.noise = a.noise;
    so.mixture_components = a.components;
    so.mixture_spread = a.spread;
    const PointSet ref = make_shape(parse_shape(a.shape), a.m, a.d, a.seed, so);

    DeformSpec spec;
    spec.seed = detail::mix_seed(a.seed, 77);
    json sj;
    if (a.deform == "rbf") {
      spec = level_spec(a.level, spec.seed);
      sj = {{"kind", "rbf"},
            {"level", a.level},
            {"n_centers", spec.rbf.n_centers},
            {"kernel_width", spec.rbf.kernel_width},
            {"coeff_std", spec.rbf.coeff_std}};
    } else if (a.deform == "scale") {
      spec.kind = DeformKind::Scale;
      spec.scale = a.scale;
      sj = {{"kind", "scale"}, {"scale", a.scale}, {"center", "centroid"}};
    } else if (a.deform == "rotate") {
      spec.kind = DeformKind::Rotate;
      spec.angle = a.angle;
      sj = {{"kind", "rotate"}, {"angle", a.angle}, {"center", "centroid"}};
    } else {
      spec.kind = DeformKind::Translate;
      const auto v = parse_list<double>(a.translate);
      if (static_cast<int>(v.size()) != a.d) {
        err << "error: --translate needs " << a.d << " components\n";
        return kUsage;
      }
      spec.translation = Eigen::Map<const RowVector>(v.data(), a.d);
      sj = {{"kind", "translate"}, {"vector", v}};
    }
    sj["seed"] = spec.seed;
    const PointSet tgt = deform(ref, spec);

    fs::create_directories(a.out);
    const fs::path dir(a.out);
    save_pointset((dir / "reference.csv").string(), ref);
    save_pointset((dir / "target.csv").string(), tgt);
    const json meta = {{"knnres_version", kVersion},
                       {"shape", a.shape},
                       {"m", a.m},
                       {"d", a.d},
                       {"seed", a.seed},
                       {"deform", sj},
                       {"correspondence", "row i of target.csv is row i of reference.csv, deformed"},
                       {"mean_displacement", (tgt.matrix() - ref.matrix()).rowwise().norm().mean()}};
    write_json(dir / "spec.json", meta);
    out << meta.dump(2) << "\n";
    return kOk;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidData& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string aligned, truth, before, k = "5", pca_out, out, delimiter = ",", columns;
  bool header = false, no_header = false;
};

inline void add_eval_options(CLI::App& sub, EvalArgs& a) {
  sub.add_option("--aligned", a.aligned, "Warped target (CSV)")->required();
  sub.add_option("--truth", a.truth, "Row-aligned ground truth, for RMSE");
  sub.add_option("--before", a.before, "Target before warping, for the kNN Hamming loss");
  sub.add_option("--k", a.k, "k values for the Hamming loss, e.g. 3,5,10");
  sub.add_option("--pca-out", a.pca_out, "Write 2-component PCA projections (CSV)");
  sub.add_option("--out", a.out, "Write metrics JSON here as well as stdout");
  sub.add_option("--delimiter", a.delimiter, "CSV delimiter");
  sub.add_option("--columns", a.columns, "Comma-separated header names to load");
  sub.add_flag("--header", a.header, "Input files have a header row");
  sub.add_flag("--no-header", a.no_header, "Input files have no header row");
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  for (const auto* p : {&a.aligned, &a.truth, &a.before}) {
    if (!p->empty() && !fs::exists(*p)) {
      err << "error: input file not found: " << *p << "\n";
      return kUsage;
    }
  }
  try {
    const CsvOptions copt = csv_options(a.delimiter, a.header, a.no_header, a.columns);
    const PointSet aligned = load_pointset(a.aligned, copt).points;
    json metrics;
    metrics["aligned"] = {{"path", a.aligned}, {"rows", aligned.size()}, {"cols", aligned.dim()}};
    std::optional<PointSet> truth, before;
    if (!a.truth.empty()) {
      truth = load_pointset(a.truth, copt).points;
      if (truth->size() != aligned.size() || truth->dim() != aligned.dim())
        throw InvalidData("aligned and truth differ in shape");
      metrics["rmse"] = rmse(aligned, *truth);
    }
    if (!a.before.empty()) {
      before = load_pointset(a.before, copt).points;
      if (before->size() != aligned.size() || before->dim() != aligned.dim())
        throw InvalidData("aligned and before differ in shape");
      json h = json::object(), hn = json::object();
      for (int k : parse_list<int>(a.k)) {
        const auto g0 = build_knn_graph(*before, k), g1 = build_knn_graph(aligned, k);
        h[std::to_string(k)] = hamming_loss(g0, g1);
        hn[std::to_string(k)] = hamming_loss_normalized(g0, g1);
      }
      metrics["hamming"] = h;
      metrics["hamming_normalized"] = hn;
    }
    if (!a.pca_out.empty()) {
      const PointSet& basis_src = truth ? *truth : aligned;
      const int nc = std::min<int>(2, static_cast<int>(basis_src.dim()));
      const auto pca = pca_project(basis_src, nc);
      std::ofstream pf(a.pca_out);
      if (!pf) throw InvalidData("cannot write '" + a.pca_out + "'");
      pf << "set";
      for (int c = 0; c < nc; ++c) pf << ",pc" << (c + 1);
      pf << "\n";
      auto emit = [&](const char* name, const PointSet& ps) {
        const Matrix proj = (ps.matrix().rowwise() - pca.mean) * pca.basis;
        char buf[64];
        for (Eigen::Index r = 0; r < proj.rows(); ++r) {
          pf << name;
          for (int c = 0; c < nc; ++c) {
            std::snprintf(buf, sizeof buf, ",%.17g", proj(r, c));
            pf << buf;
          }
          pf << "\n";
        }
      };
      if (truth) emit("truth", *truth);
      if (before) emit("before", *before);
      emit("aligned", aligned);
      metrics["pca_out"] = a.pca_out;
      metrics["pca_explained_variance"] = std::vector<double>(pca.explained_variance.data(),
                                                              pca.explained_variance.data() + nc);
    }
    if (!a.out.empty()) write_json(a.out, metrics);
    out << metrics.dump(2) << "\n";
    return kOk;
  } catch (const InvalidData& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

// ---------------------------------------------------------------------------

/// Entry point shared by main() and the tests. args excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"knnres: topology-preserving point-set registration"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  RegisterArgs ra;
  SynthArgs sa;
  EvalArgs ea;
  auto* reg = app.add_subcommand("register", "Train a warp aligning --target to --reference");
  add_register_options(*reg, ra);
  auto* syn = app.add_subcommand("synth", "Generate a synthetic reference/target pair");
  add_synth_options(*syn, sa);
  auto* ev = app.add_subcommand("eval", "Compute RMSE / kNN Hamming metrics");
  add_eval_options(*ev, ea);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  if (reg->parsed()) return cmd_register(*reg, ra, out, err);
  if (syn->parsed()) return cmd_synth(sa, out, err);
  return cmd_eval(ea, out, err);
}

}  // namespace knnres::cli
