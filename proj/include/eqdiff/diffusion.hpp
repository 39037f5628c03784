#pragma once

// Continuous-time DDPM machinery on the alpha-cosine schedule: forward
// corruption, exact Gaussian posterior stepping, MSE training loss,
// ancestral sampling and RePaint densification.

#include "eqdiff/tensor.hpp"
#include "eqdiff/util.hpp"

#include <functional>
#include <optional>

namespace eqdiff {

struct AlphaSigma {
  double alpha, sigma;
};

// alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2), so alpha^2 + sigma^2 = 1.
inline AlphaSigma alpha_sigma(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DataError("alpha_sigma: t must lie in [0,1], got " + std::to_string(t));
  return {std::cos(M_PI * t / 2.0), std::sin(M_PI * t / 2.0)};
}

inline Tensor forward_noise(const Tensor& x, double t, const Tensor& eps) {
  require_same_shape(x, eps, "forward_noise");
  auto [a, s] = alpha_sigma(t);
  return add(scale(x, a), scale(eps, s));
}

// x_hat = (x_t - sigma_t eps_hat) / alpha_t, clamped to [-1,1].
inline Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, double t) {
  if (!(t > 0.0)) throw DataError("predict_x0: t must be positive");
  auto [a, s] = alpha_sigma(t);
  if (a < 1e-8)
    throw NumericError("predict_x0: alpha_t below 1e-8 at t=" + std::to_string(t) +
                       "; use the posterior step directly");
  return clamp_value(scale(sub(x_t, scale(eps_hat, s)), 1.0 / a), -1.0, 1.0);
}

namespace detail {
// Shared by posterior_step and the sampler; no alpha guard because the
// clamp bounds the blow-up at t -> 1 and the terminal step discards it.
inline Tensor x0_clamped(const Tensor& x_t, const Tensor& eps_hat, double a, double s) {
  return clamp_value(scale(sub(x_t, scale(eps_hat, s)), 1.0 / a), -1.0, 1.0);
}
}  // namespace detail

// One reverse step x_t -> x_s through the exact conditional q(x_s | x_t, x0).
// `noise` may be null for the deterministic (mean-only) step.
inline Tensor posterior_step(const Tensor& x_t, const Tensor& eps_hat, double t, double s,
                             const Tensor* noise = nullptr) {
  if (!(s >= 0.0 && s < t && t <= 1.0))
    throw DataError("posterior_step: need 0 <= s < t <= 1, got s=" + std::to_string(s) +
                    " t=" + std::to_string(t));
  require_same_shape(x_t, eps_hat, "posterior_step");
  auto [at, st] = alpha_sigma(t);
  auto [as, ss] = alpha_sigma(s);
  Tensor x0 = detail::x0_clamped(x_t, eps_hat, at, st);
  if (s == 0.0) return x0;  // zero terminal variance
  double a_ts = at / as;
  double var_ts = st * st - a_ts * a_ts * ss * ss;
  double coef_xt = a_ts * ss * ss / (st * st);
  double coef_x0 = as * var_ts / (st * st);
  Tensor mean = add(scale(x_t, coef_xt), scale(x0, coef_x0));
  if (!noise) return mean;
  require_same_shape(x_t, *noise, "posterior_step noise");
  double std_dev = std::sqrt(std::max(0.0, var_ts * ss * ss / (st * st)));
  return add(mean, scale(*noise, std_dev));
}

// eps-prediction denoiser: (x_t, t) -> eps_hat, conditioning closed over.
using DenoiserFn = std::function<Tensor(const Tensor&, double)>;

// Eq-2-style per-element MSE between the true noise and the prediction.
inline Tensor training_loss(const DenoiserFn& denoiser, const Tensor& x, double t, const Tensor& eps) {
  Tensor x_t = forward_noise(x, t, eps);
  Tensor eps_hat = denoiser(x_t, t);
  return mse_loss(eps, eps_hat);  // non-finite values throw NumericError
}

struct SamplerConfig {
  std::int64_t steps = 256;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw DataError("SamplerConfig: steps must be >= 1");
  }
};

inline Tensor gaussian_tensor(Shape shape, GaussianRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : *t.data) v = rng.normal();
  return t;
}

// Ancestral sampling over the uniform grid t_k = k/T, k = T..0.
inline Tensor sample(const DenoiserFn& denoiser, Shape shape, const SamplerConfig& cfg) {
  cfg.validate();
  GaussianRng rng(cfg.seed);
  Tensor x = gaussian_tensor(shape, rng);
  std::int64_t T = cfg.steps;
  for (std::int64_t k = T; k >= 1; --k) {
    double t = static_cast<double>(k) / T;
    double s = static_cast<double>(k - 1) / T;
    Tensor eps_hat = denoiser(x, t);
    if (s > 0.0) {
      Tensor noise = gaussian_tensor(shape, rng);
      x = posterior_step(x, eps_hat, t, s, &noise);
    } else {
      x = posterior_step(x, eps_hat, t, s);
    }
  }
  return clamp_value(x, -1.0, 1.0);
}

// RePaint-style densification. `known` is H x W x 2, `mask` H x W with true
// marking known pixels; those positions are re-noised to the current level
// before every denoiser call and overwritten exactly at the end.
// resample_n > 1 repeats each reverse step with jump-back renoising.
inline Tensor repaint_densify(const DenoiserFn& denoiser, const Tensor& known,
                              const std::vector<std::uint8_t>& mask, const SamplerConfig& cfg,
                              int resample_n = 1) {
  cfg.validate();
  if (known.ndim() != 3 || known.shape[2] != 2)
    throw ShapeError("repaint_densify: known must be H x W x 2, got " + shape_str(known.shape));
  std::int64_t hw = known.shape[0] * known.shape[1];
  if (static_cast<std::int64_t>(mask.size()) != hw)
    throw ShapeError("repaint_densify: mask size mismatch");
  bool all_known = true;
  for (auto m : mask) all_known &= (m != 0);
  if (all_known) return known;  // degenerate: nothing to generate

  // Separate stream for the re-noising draws so an all-false mask is
  // bit-identical to the unconditional sampler at the same seed.
  GaussianRng rng(cfg.seed);
  GaussianRng mask_rng(cfg.seed ^ 0x5eedfacecafef00dull);

  auto overwrite_noised = [&](Tensor& x, double t) {
    auto [a, s] = alpha_sigma(t);
    for (std::int64_t i = 0; i < hw; ++i) {
      if (!mask[i]) continue;
      for (int c = 0; c < 2; ++c) {
        double e = mask_rng.normal();
        (*x.data)[i * 2 + c] = a * (*known.data)[i * 2 + c] + s * e;
      }
    }
  };

  Tensor x = gaussian_tensor(known.shape, rng);
  std::int64_t T = cfg.steps;
  for (std::int64_t k = T; k >= 1; --k) {
    double t = static_cast<double>(k) / T;
    double s = static_cast<double>(k - 1) / T;
    for (int rep = 0; rep < std::max(1, resample_n); ++rep) {
      if (rep > 0) {
        // jump back: re-noise x_s up to level t with fresh noise
        auto [a_t, s_t] = alpha_sigma(t);
        auto [a_s, s_s] = alpha_sigma(s);
        double a_ts = a_t / a_s;
        double add_std = std::sqrt(std::max(0.0, s_t * s_t - a_ts * a_ts * s_s * s_s));
        for (auto& v : *x.data) v = a_ts * v + add_std * mask_rng.normal();
      }
      overwrite_noised(x, t);
      Tensor eps_hat = denoiser(x, t);
      if (s > 0.0) {
        Tensor noise = gaussian_tensor(known.shape, rng);
        x = posterior_step(x, eps_hat, t, s, &noise);
      } else {
        x = posterior_step(x, eps_hat, t, s);
      }
    }
  }
  x = clamp_value(x, -1.0, 1.0);
  for (std::int64_t i = 0; i < hw; ++i)
    if (mask[i])
      for (int c = 0; c < 2; ++c) (*x.data)[i * 2 + c] = (*known.data)[i * 2 + c];
  return x;
}

}  // namespace eqdiff
