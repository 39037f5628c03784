#pragma once

// Sample-quality metrics: BEV occupancy JSD and MMD, masked pixel errors,
// and a Fréchet distance between Gaussian feature summaries.

#include "eqdiff/range_codec.hpp"
#include "eqdiff/tensor.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace eqdiff {

struct BevConfig {
  std::int64_t bins = 64;
  double extent = 50.0;  // meters, half-width of the square BEV window
};

// Normalized BEV occupancy histogram over a set of clouds; flattened bins*bins.
inline std::vector<double> occupancy_histogram(const std::vector<PointCloud>& clouds,
                                               const BevConfig& cfg) {
  std::vector<double> h(cfg.bins * cfg.bins, 0.0);
  double total = 0;
  for (const auto& pc : clouds) {
    auto grid = bev_rasterize(pc, cfg.bins, cfg.extent);
    for (std::int64_t i = 0; i < cfg.bins * cfg.bins; ++i) {
      h[i] += grid.counts[i];
      total += grid.counts[i];
    }
  }
  if (total == 0) throw DataError("occupancy histogram: no points fall inside the BEV extent");
  for (double& v : h) v /= total;
  return h;
}

// Jensen-Shannon divergence in nats between two distributions on the same
// support. 0*log(0) terms contribute zero.
inline double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("jsd: distribution size mismatch");
  auto klterm = [](double a, double m) { return a > 0.0 ? a * std::log(a / m) : 0.0; };
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (m > 0.0) d += 0.5 * klterm(p[i], m) + 0.5 * klterm(q[i], m);
  }
  return d;
}

// MMD score used for BEV comparison: each cloud becomes a per-cloud occupancy
// probability map; the score is the mean over the reference set of the minimum
// squared L2 distance to any candidate map.
inline std::vector<double> occupancy_probability(const PointCloud& pc, const BevConfig& cfg) {
  auto grid = bev_rasterize(pc, cfg.bins, cfg.extent);
  double total = 0;
  for (auto c : grid.counts) total += c;
  std::vector<double> p(cfg.bins * cfg.bins, 0.0);
  if (total > 0)
    for (std::int64_t i = 0; i < cfg.bins * cfg.bins; ++i) p[i] = grid.counts[i] / total;
  return p;
}

inline double mmd(const std::vector<PointCloud>& reference, const std::vector<PointCloud>& candidate,
                  const BevConfig& cfg) {
  if (reference.empty() || candidate.empty()) throw DataError("mmd: empty cloud set");
  std::vector<std::vector<double>> cand;
  for (const auto& pc : candidate) cand.push_back(occupancy_probability(pc, cfg));
  double acc = 0;
  for (const auto& pc : reference) {
    auto r = occupancy_probability(pc, cfg);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : cand) {
      double d = 0;
      for (std::size_t i = 0; i < r.size(); ++i) {
        double t = r[i] - c[i];
        d += t * t;
      }
      best = std::min(best, d);
    }
    acc += best;
  }
  return acc / reference.size();
}

struct MaskedError {
  double mae = 0;
  double rmse = 0;
  std::int64_t count = 0;
};

// Error over pixels where mask is true, on one channel of [H,W,C] tensors.
inline MaskedError masked_error(const Tensor& a, const Tensor& b, const std::vector<bool>& mask,
                                std::int64_t channel) {
  if (a.shape != b.shape || a.shape.size() != 3) throw ShapeError("masked_error: need matching [H,W,C]");
  std::int64_t H = a.shape[0], W = a.shape[1], C = a.shape[2];
  if (channel < 0 || channel >= C) throw ShapeError("masked_error: channel out of range");
  if (static_cast<std::int64_t>(mask.size()) != H * W)
    throw ShapeError("masked_error: mask size mismatch");
  MaskedError e;
  double sq = 0;
  for (std::int64_t i = 0; i < H * W; ++i) {
    if (!mask[i]) continue;
    double d = (*a.data)[i * C + channel] - (*b.data)[i * C + channel];
    e.mae += std::abs(d);
    sq += d * d;
    ++e.count;
  }
  if (e.count == 0) throw DataError("masked_error: mask selects no pixels");
  e.mae /= e.count;
  e.rmse = std::sqrt(sq / e.count);
  return e;
}

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline GaussianSummary gaussian_summary(const std::vector<std::vector<double>>& feats) {
  if (feats.size() < 2) throw DataError("gaussian summary needs at least two feature vectors");
  const std::int64_t n = static_cast<std::int64_t>(feats.size());
  const std::int64_t d = static_cast<std::int64_t>(feats[0].size());
  GaussianSummary g;
  g.mean = Eigen::VectorXd::Zero(d);
  for (const auto& f : feats) {
    if (static_cast<std::int64_t>(f.size()) != d) throw ShapeError("gaussian summary: ragged features");
    g.mean += Eigen::Map<const Eigen::VectorXd>(f.data(), d);
  }
  g.mean /= static_cast<double>(n);
  g.cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& f : feats) {
    Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(f.data(), d) - g.mean;
    g.cov += c * c.transpose();
  }
  g.cov /= static_cast<double>(n - 1);
  return g;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw NumericError("matrix square root: input is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (std::int64_t i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8) throw NumericError("matrix square root: negative eigenvalue " + std::to_string(ev[i]));
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Fréchet distance between two Gaussians:
//   |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})
// computed with the symmetric product so only self-adjoint solves appear.
inline double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mean.size() != b.mean.size()) throw ShapeError("frechet: dimension mismatch");
  Eigen::MatrixXd s1h = detail::psd_sqrt(a.cov);
  Eigen::MatrixXd inner = detail::psd_sqrt(s1h * b.cov * s1h);
  double d2 = (a.mean - b.mean).squaredNorm() + (a.cov + b.cov).trace() - 2.0 * inner.trace();
  return std::max(d2, 0.0);  // clip tiny negatives from roundoff
}

struct MetricReport {
  double jsd = std::nan("");
  double mmd = std::nan("");
  double mae_depth = std::nan("");
  double rmse_depth = std::nan("");
  double mae_intensity = std::nan("");
  double rmse_intensity = std::nan("");
  double frechet = std::nan("");
  std::int64_t bev_bins = 0;
  double bev_extent = 0;
  std::int64_t n_reference = 0;
  std::int64_t n_candidate = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    auto put = [&](const char* k, double v) {
      if (!std::isnan(v)) j[k] = v;
    };
    put("jsd", jsd);
    put("mmd", mmd);
    put("mae_depth", mae_depth);
    put("rmse_depth", rmse_depth);
    put("mae_intensity", mae_intensity);
    put("rmse_intensity", rmse_intensity);
    put("frechet", frechet);
    j["bev_bins"] = bev_bins;
    j["bev_extent"] = bev_extent;
    j["n_reference"] = n_reference;
    j["n_candidate"] = n_candidate;
    return j;
  }
};

}  // namespace eqdiff
