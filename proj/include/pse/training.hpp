#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pse/checkpoint.hpp"
#include "pse/cloud_io.hpp"
#include "pse/config.hpp"
#include "pse/dataset.hpp"
#include "pse/embedder.hpp"
#include "pse/geometry.hpp"
#include "pse/losses.hpp"
#include "pse/restorer.hpp"

namespace pse {

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double total = 0;
  double shape = 0;
  double dist = 0;
  double conform = 0;
  double mean_dq = 0;
};

struct TrainResult {
  CheckpointData checkpoint;
  std::vector<EpochLog> log;
};

inline constexpr double kDivergenceLimit = 1e6;

namespace detail {

inline double mean_offset_norm(std::span<const double> dq, std::size_t rows) {
  double s = 0;
  for (std::size_t i = 0; i < rows; ++i)
    s += std::sqrt(dq[i * 3 + 0] * dq[i * 3 + 0] + dq[i * 3 + 1] * dq[i * 3 + 1] +
                   dq[i * 3 + 2] * dq[i * 3 + 2]);
  return s / static_cast<double>(rows);
}

}  // namespace detail

/// Joint training of the embedder and restorer: one Adam step per mini-batch
/// over the union of both parameter sets, gradients averaged across the
/// batch. Deterministic for a fixed seed; strictly single-threaded.
inline TrainResult train(const TrainConfig& cfg, const std::vector<PointCloud>& dataset) {
  cfg.validate();
  if (dataset.empty()) throw invalid_argument_error("train: empty dataset");
  for (const auto& c : dataset)
    if (c.count() != cfg.N)
      throw invalid_argument_error("train: dataset cloud has " +
                                   std::to_string(c.count()) + " points, config N=" +
                                   std::to_string(cfg.N));

  TrainResult result;
  result.checkpoint.config = cfg;
  ParamStore<double>& store = result.checkpoint.params;
  Rng rng(cfg.seed);
  init_embedder_params(store, cfg, rng);
  init_restorer_params(store, cfg, rng);
  result.checkpoint.adam = AdamState<double>(store);
  AdamState<double>& adam = result.checkpoint.adam;

  const AugmentConfig aug;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    // Fisher-Yates over the visiting order, driven by the training stream.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    std::size_t seen = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      GradAccumulator<double> acc(store);
      for (std::size_t b = start; b < stop; ++b) {
        PointCloud cloud = dataset[order[b]];
        if (cfg.augment) cloud = augment(cloud, aug, rng);
        cloud = normalize_unit_sphere(cloud).first;

        Graph<double> g;
        ParamBinding<double> binding(store, g);
        EmbedGraph<double> eg = embed_graph(g, binding, cloud, cfg);
        RestoreGraph<double> rg = restore_graph(binding, eg.Q, cfg);
        TotalLoss<double> L = total_loss(cloud, eg.Q, rg.R, eg.delta_Q, cfg.weights());

        const double total = L.total.val()[0];
        if (!std::isfinite(total) || total > kDivergenceLimit)
          throw data_error("training diverged at epoch " + std::to_string(epoch) +
                           ": loss=" + std::to_string(total));

        log.total += total;
        log.shape += L.shape.val()[0];
        log.dist += L.dist.val()[0];
        log.conform += L.conform.val()[0];
        log.mean_dq += detail::mean_offset_norm(eg.delta_Q.val(), cfg.n);
        ++seen;

        g.backward(L.total);
        acc.accumulate(binding.grads());
      }
      acc.scale(1.0 / static_cast<double>(stop - start));
      adam_step(store, adam, acc.sums, lr);
    }

    const double inv = 1.0 / static_cast<double>(seen);
    log.total *= inv;
    log.shape *= inv;
    log.dist *= inv;
    log.conform *= inv;
    log.mean_dq *= inv;
    result.log.push_back(log);
  }

  result.checkpoint.trained_epochs = cfg.epochs;
  result.checkpoint.rng_state = rng.state();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ShapeEval {
  MetricsReport metrics;       // emd, hd, cd of the restored cloud vs original
  double mean_dq = 0;          // mean embedding offset magnitude
  double max_dq = 0;           // largest embedding offset magnitude
  double cd_q_qprime = 0;      // chamfer between embedded cloud and FPS baseline
  double cd_baseline = 0;      // chamfer of the duplication baseline vs original
};

struct EvalReport {
  std::vector<ShapeEval> shapes;
  double mean_emd = 0;
  double mean_hd = 0;
  double mean_cd = 0;
  double mean_cd_baseline = 0;
  double mean_cd_q_qprime = 0;
  double mean_dq = 0;
  double max_dq = 0;
};

/// Duplication baseline: r stacked copies of the plain FPS points.
inline PointCloud duplication_baseline(const PointCloud& q_prime, std::size_t r) {
  PointCloud out;
  out.pts.reserve(q_prime.count() * r);
  for (const Vec3& p : q_prime.pts)
    for (std::size_t s = 0; s < r; ++s) out.pts.push_back(p);
  return out;
}

inline EvalReport evaluate(const ParamStore<double>& store, const TrainConfig& cfg,
                           const std::vector<PointCloud>& dataset) {
  if (dataset.empty()) throw invalid_argument_error("evaluate: empty dataset");
  EvalReport report;
  for (const auto& P : dataset) {
    if (P.count() != cfg.N)
      throw invalid_argument_error("evaluate: cloud has " + std::to_string(P.count()) +
                                   " points, config N=" + std::to_string(cfg.N));
    EmbedResult er = embed(store, P, cfg);
    RestoreResult rr = restore(store, er.Q, cfg);

    ShapeEval se;
    se.metrics = compute_metrics(P, rr.R);
    for (const Vec3& d : er.delta_Q) {
      const double len = norm(d);
      se.mean_dq += len;
      se.max_dq = std::max(se.max_dq, len);
    }
    se.mean_dq /= static_cast<double>(er.delta_Q.size());
    se.cd_q_qprime = chamfer(er.Q, er.Q_prime);
    se.cd_baseline = chamfer(P, duplication_baseline(er.Q_prime, cfg.r));
    report.shapes.push_back(se);

    report.mean_emd += se.metrics.emd;
    report.mean_hd += se.metrics.hd;
    report.mean_cd += se.metrics.cd;
    report.mean_cd_baseline += se.cd_baseline;
    report.mean_cd_q_qprime += se.cd_q_qprime;
    report.mean_dq += se.mean_dq;
    report.max_dq = std::max(report.max_dq, se.max_dq);
  }
  const double inv = 1.0 / static_cast<double>(report.shapes.size());
  report.mean_emd *= inv;
  report.mean_hd *= inv;
  report.mean_cd *= inv;
  report.mean_cd_baseline *= inv;
  report.mean_cd_q_qprime *= inv;
  report.mean_dq *= inv;
  return report;
}

// ---------------------------------------------------------------------------
// Offset permutation experiment
// ---------------------------------------------------------------------------

/// Q' plus a uniformly random non-identity row permutation of the offsets.
/// With a single row there is nothing to permute and the output equals Q.
inline PointCloud perturb_embedding(const EmbedResult& result, Rng& rng) {
  const std::size_t n = result.Q_prime.count();
  if (result.delta_Q.size() != n)
    throw invalid_argument_error("perturb_embedding: offset row count mismatch");
  std::vector<std::size_t> perm(n);
  for (;;) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.below(i)]);
    bool identity = true;
    for (std::size_t i = 0; i < n && identity; ++i) identity = perm[i] == i;
    if (!identity || n <= 1) break;
  }
  PointCloud out;
  out.pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.pts.push_back(result.Q_prime[i] + result.delta_Q[perm[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write " + path);
  os << "epoch,lr,total,shape,dist,conform,mean_dq\n";
  for (const EpochLog& e : log)
    os << e.epoch << ',' << csv_fixed(e.lr) << ',' << csv_fixed(e.total) << ','
       << csv_fixed(e.shape) << ',' << csv_fixed(e.dist) << ',' << csv_fixed(e.conform)
       << ',' << csv_fixed(e.mean_dq) << '\n';
  if (!os) throw data_error("write failed: " + path);
}

inline void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write " + path);
  os << "shape,emd,hd,cd,cd_baseline,cd_q_qprime,mean_dq,max_dq\n";
  for (std::size_t i = 0; i < report.shapes.size(); ++i) {
    const ShapeEval& s = report.shapes[i];
    os << i << ',' << csv_fixed(s.metrics.emd) << ',' << csv_fixed(s.metrics.hd) << ','
       << csv_fixed(s.metrics.cd) << ',' << csv_fixed(s.cd_baseline) << ','
       << csv_fixed(s.cd_q_qprime) << ',' << csv_fixed(s.mean_dq) << ','
       << csv_fixed(s.max_dq) << '\n';
  }
  os << "mean," << csv_fixed(report.mean_emd) << ',' << csv_fixed(report.mean_hd) << ','
     << csv_fixed(report.mean_cd) << ',' << csv_fixed(report.mean_cd_baseline) << ','
     << csv_fixed(report.mean_cd_q_qprime) << ',' << csv_fixed(report.mean_dq) << ','
     << csv_fixed(report.max_dq) << '\n';
  if (!os) throw data_error("write failed: " + path);
}

}  // namespace pse
