#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "knnres/core.hpp"
#include "knnres/errors.hpp"
#include "knnres/jacreg.hpp"
#include "knnres/losses.hpp"
#include "knnres/net.hpp"
#include "knnres/optim.hpp"

namespace knnres {

enum class LossKind { Sinkhorn, Mmd };

enum class PenaltyMode {
  Auto,                 // FD up to fd_dim_threshold dimensions, quadratic-form Hutchinson above
  Fd,
  HutchinsonQuadratic,
  HutchinsonAlg3,
};

struct TrainConfig {
  LossKind loss = LossKind::Sinkhorn;
  double sigma = 0.001;  // Sinkhorn blur (eps = sigma^2) or MMD bandwidth
  int sinkhorn_max_iters = 500;
  double sinkhorn_tol = 1e-6;

  double lambda = 1e-5;
  double fd_epsilon = 0.005;  // FD step, also the Rademacher scale
  PenaltyMode penalty = PenaltyMode::Auto;
  int hutchinson_k = 5;  // 0 disables Hutchinson under Auto
  int fd_dim_threshold = 6;

  int batch_size = 256;
  int max_epochs = 3000;
  int convergence_patience = 100;
  double convergence_tol = 1e-5;
  std::uint64_t seed = 0;

  std::vector<int> hidden = {50, 50};
  double leaky_slope = 0.01;

  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;

  double plateau_factor = 0.7;
  int plateau_patience = 50;
  double min_lr = 5e-5;
  double plateau_threshold = 1e-6;

  void validate() const {
    detail::require(sigma > 0, "sigma must be positive");
    detail::require(lambda >= 0, "lambda must be >= 0");
    detail::require(fd_epsilon > 0, "fd_epsilon must be positive");
    detail::require(batch_size >= 1, "batch_size must be >= 1");
    detail::require(max_epochs >= 1, "max_epochs must be >= 1");
    detail::require(convergence_patience >= 1, "convergence_patience must be >= 1");
    detail::require(sinkhorn_max_iters >= 1, "sinkhorn_max_iters must be >= 1");
    detail::require(hutchinson_k >= 0, "hutchinson_k must be >= 0");
    detail::require(lr > 0 && min_lr > 0, "learning rates must be positive");
    detail::require(plateau_factor > 0 && plateau_factor < 1, "plateau_factor must be in (0, 1)");
    if (penalty == PenaltyMode::HutchinsonQuadratic || penalty == PenaltyMode::HutchinsonAlg3)
      detail::require(hutchinson_k >= 2, "Hutchinson penalty needs hutchinson_k >= 2");
  }
};

/// The penalty actually applied for data of dimension d.
inline PenaltyMode resolve_penalty(const TrainConfig& cfg, Eigen::Index d) {
  if (cfg.penalty != PenaltyMode::Auto) return cfg.penalty;
  if (d <= cfg.fd_dim_threshold || cfg.hutchinson_k < 2) return PenaltyMode::Fd;
  return PenaltyMode::HutchinsonQuadratic;
}

struct StepRecord {
  int epoch = 0;
  long step = 0;
  double l1 = 0, l2 = 0, total = 0;
  double lr = 0;
  double grad_norm = 0;
  double wall_time = 0;  // seconds since train() started

  // Wall time is excluded: two runs of the same config compare equal.
  bool operator==(const StepRecord& o) const {
    return epoch == o.epoch && step == o.step && l1 == o.l1 && l2 == o.l2 && total == o.total && lr == o.lr &&
           grad_norm == o.grad_norm;
  }
};

struct LossReport {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_total;
  int epochs_run = 0;
  bool converged = false;
  std::string stop_reason;
};

struct TotalLoss {
  double total = 0, l1 = 0, l2 = 0;
  ParamGradient grad;
  bool sinkhorn_converged = true;
};

/// L = L1 + lambda * L2 on one pair of batches. L1 compares x_batch with
/// phi(y_batch); L2 is the orthogonality penalty at the y_batch points.
/// `penalty_seed` drives the Rademacher draws.
inline TotalLoss total_loss(const ResidualNet& net, const PointSet& x_batch, const PointSet& y_batch,
                            const TrainConfig& cfg, std::uint64_t penalty_seed = 0) {
  detail::require(x_batch.dim() == y_batch.dim(), "total_loss: batches differ in dimension");
  detail::check_net_input(net, y_batch.dim());

  const PointSet moved = forward(net, y_batch);
  LossValue align;
  if (cfg.loss == LossKind::Sinkhorn) {
    SinkhornConfig sc;
    sc.sigma = cfg.sigma;
    sc.max_iters = cfg.sinkhorn_max_iters;
    sc.tol = cfg.sinkhorn_tol;
    align = sinkhorn_divergence(x_batch, moved, sc);
  } else {
    align = mmd(x_batch, moved, MmdConfig{cfg.sigma});
  }

  TotalLoss out;
  out.l1 = align.value;
  out.sinkhorn_converged = align.converged;
  out.grad = backward(net, y_batch.matrix(), align.grad).params;

  if (cfg.lambda > 0) {
    PenaltyValue pen;
    switch (resolve_penalty(cfg, y_batch.dim())) {
      case PenaltyMode::Fd:
        pen = orth_penalty_fd(net, y_batch, FdConfig{cfg.fd_epsilon});
        break;
      case PenaltyMode::HutchinsonAlg3:
        pen = orth_penalty_hutchinson(net, y_batch, {cfg.fd_epsilon, cfg.hutchinson_k, HutchinsonMode::Alg3Literal},
                                      penalty_seed);
        break;
      default:
        pen = orth_penalty_hutchinson(net, y_batch,
                                      {cfg.fd_epsilon, cfg.hutchinson_k, HutchinsonMode::QuadraticForm}, penalty_seed);
        break;
    }
    out.l2 = pen.value;
    pen.grad *= cfg.lambda;
    out.grad += pen.grad;
  }
  out.total = out.l1 + cfg.lambda * out.l2;
  return out;
}

/// Thrown when the loss turns non-finite; carries the history up to then.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, LossReport report)
      : DivergenceError(what), report_(std::move(report)) {}
  const LossReport& report() const { return report_; }

 private:
  LossReport report_;
};

struct TrainResult {
  ResidualNet net;
  LossReport report;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Draws fixed-size batches without replacement from a shuffled permutation,
// reshuffling once too few indices remain. A batch covering the whole set is
// the set in its natural order.
class BatchSampler {
 public:
  BatchSampler(Eigen::Index n, Eigen::Index batch, std::uint64_t seed)
      : batch_(std::min(n, batch)), perm_(static_cast<std::size_t>(n)), rng_(seed) {
    std::iota(perm_.begin(), perm_.end(), Eigen::Index{0});
    reshuffle();
  }

  std::vector<Eigen::Index> next() {
    if (pos_ + static_cast<std::size_t>(batch_) > perm_.size()) reshuffle();
    std::vector<Eigen::Index> out(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  perm_.begin() + static_cast<std::ptrdiff_t>(pos_ + static_cast<std::size_t>(batch_)));
    pos_ += static_cast<std::size_t>(batch_);
    return out;
  }

  void reshuffle() {
    if (batch_ < static_cast<Eigen::Index>(perm_.size())) std::shuffle(perm_.begin(), perm_.end(), rng_);
    pos_ = 0;
  }

 private:
  Eigen::Index batch_;
  std::vector<Eigen::Index> perm_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Fits phi so that phi(target) matches the reference distribution.
///
/// Each epoch reshuffles both sets and runs ceil(max(n, m) / b) Adam steps on
/// batch pairs. The plateau scheduler sees the epoch-mean total loss. Training
/// stops after max_epochs or once the epoch mean has failed to improve by a
/// relative convergence_tol for convergence_patience epochs.
inline TrainResult train(const PointSet& reference, const PointSet& target, const TrainConfig& cfg) {
  detail::require(reference.dim() == target.dim(), "train: reference and target differ in dimension");
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult res{init_net(static_cast<int>(target.dim()), cfg.hidden, cfg.leaky_slope, detail::mix_seed(cfg.seed, 0)),
                  {}};
  AdamState adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.eps = cfg.adam_eps;
  adam.weight_decay = cfg.weight_decay;
  PlateauState plateau;
  plateau.lr = cfg.lr;
  plateau.factor = cfg.plateau_factor;
  plateau.patience = cfg.plateau_patience;
  plateau.min_lr = cfg.min_lr;
  plateau.threshold = cfg.plateau_threshold;

  const Eigen::Index b = cfg.batch_size;
  detail::BatchSampler ref_batches(reference.size(), b, detail::mix_seed(cfg.seed, 1));
  detail::BatchSampler tgt_batches(target.size(), b, detail::mix_seed(cfg.seed, 2));
  const Eigen::Index larger = std::max(reference.size(), target.size());
  const Eigen::Index per_epoch = (larger + b - 1) / b;

  auto& report = res.report;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (epoch > 0) {
      ref_batches.reshuffle();
      tgt_batches.reshuffle();
    }
    double sum = 0;
    for (Eigen::Index s = 0; s < per_epoch; ++s, ++step) {
      const PointSet xb = reference.rows(ref_batches.next());
      const PointSet yb = target.rows(tgt_batches.next());
      TotalLoss tl = total_loss(res.net, xb, yb, cfg, detail::mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(step)));
      const double gnorm = flatten(tl.grad).norm();
      StepRecord rec{epoch, step, tl.l1, tl.l2, tl.total, adam.lr, gnorm,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
      report.steps.push_back(rec);
      if (!std::isfinite(tl.total) || !std::isfinite(gnorm)) {
        report.epochs_run = epoch + 1;
        report.stop_reason = "diverged";
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + " (L1=" + std::to_string(tl.l1) +
                                   ", L2=" + std::to_string(tl.l2) + ")",
                               report);
      }
      adam_step(res.net, tl.grad, adam);
      sum += tl.total;
    }
    const double mean = sum / static_cast<double>(per_epoch);
    report.epoch_mean_total.push_back(mean);
    report.epochs_run = epoch + 1;
    adam.lr = plateau_step(plateau, mean);

    const double rel = std::isfinite(best) ? (best - mean) / std::max(std::abs(best), 1e-300) : 1.0;
    if (rel >= cfg.convergence_tol) {
      best = mean;
      stale = 0;
    } else if (++stale >= cfg.convergence_patience) {
      report.converged = true;
      report.stop_reason = "converged";
      return res;
    }
  }
  report.stop_reason = "max_epochs";
  return res;
}

/// Applies a trained warp to arbitrary points.
inline PointSet transform(const ResidualNet& net, const PointSet& y) { return forward(net, y); }

}  // namespace knnres
