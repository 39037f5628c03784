#include "eqdiff/diffusion.hpp"

#include <doctest.h>

#include "helpers.hpp"

using namespace eqdiff;
using testutil::random_tensor;

TEST_CASE("schedule identities and endpoints") {
  for (int i = 0; i <= 1000; ++i) {
    double t = i / 1000.0;
    auto [a, s] = alpha_sigma(t);
    CHECK(std::abs(a * a + s * s - 1.0) < 1e-12);
  }
  auto [a0, s0] = alpha_sigma(0.0);
  CHECK(a0 == 1.0);
  CHECK(s0 == 0.0);
  auto [ah, sh] = alpha_sigma(0.5);
  CHECK(std::abs(ah - std::sqrt(2.0) / 2.0) < 1e-15);
  CHECK(std::abs(sh - std::sqrt(2.0) / 2.0) < 1e-15);
  auto [a1, s1] = alpha_sigma(1.0);
  CHECK(std::abs(a1) < 1e-15);
  CHECK(std::abs(s1 - 1.0) < 1e-15);
  // independently computed high-precision point
  auto [a3, s3] = alpha_sigma(0.3);
  CHECK(a3 == doctest::Approx(0.891006524188367862).epsilon(1e-15));
  CHECK(s3 == doctest::Approx(0.453990499739546792).epsilon(1e-15));
  CHECK_THROWS_AS(alpha_sigma(-0.1), DataError);
  CHECK_THROWS_AS(alpha_sigma(1.1), DataError);
}

TEST_CASE("forward_noise interpolates signal and noise") {
  Tensor x = random_tensor({4, 4, 2}, 1);
  Tensor eps = random_tensor({4, 4, 2}, 2);
  Tensor xt = forward_noise(x, 0.4, eps);
  auto [a, s] = alpha_sigma(0.4);
  for (std::size_t i = 0; i < x.data->size(); ++i)
    CHECK((*xt.data)[i] == doctest::Approx(a * (*x.data)[i] + s * (*eps.data)[i]).epsilon(1e-12));
  // t = 0 returns the clean signal exactly
  Tensor x0 = forward_noise(x, 0.0, eps);
  CHECK((*x0.data) == (*x.data));
}

TEST_CASE("predict_x0 inverts forward_noise given the true noise") {
  Tensor x = clamp_value(random_tensor({3, 5, 2}, 3, 0.4), -1.0, 1.0);
  Tensor eps = random_tensor({3, 5, 2}, 4);
  for (double t : {0.1, 0.5, 0.9}) {
    Tensor xt = forward_noise(x, t, eps);
    Tensor xh = predict_x0(xt, eps, t);
    for (std::size_t i = 0; i < x.data->size(); ++i)
      CHECK((*xh.data)[i] == doctest::Approx((*x.data)[i]).epsilon(1e-9));
  }
  // degenerate t: alpha underflows, the division is refused
  CHECK_THROWS_AS(predict_x0(x, eps, 1.0), NumericError);
}

TEST_CASE("posterior step at s=0 returns the clamped x0 estimate") {
  Tensor x = clamp_value(random_tensor({2, 4, 2}, 5, 0.4), -1.0, 1.0);
  Tensor eps = random_tensor({2, 4, 2}, 6);
  double t = 0.25;
  Tensor xt = forward_noise(x, t, eps);
  Tensor out = posterior_step(xt, eps, t, 0.0);
  for (std::size_t i = 0; i < x.data->size(); ++i)
    CHECK((*out.data)[i] == doctest::Approx((*x.data)[i]).epsilon(1e-9));
}

TEST_CASE("posterior mean matches the closed-form coefficients") {
  Tensor x = clamp_value(random_tensor({2, 2, 2}, 7, 0.3), -1.0, 1.0);
  Tensor eps = random_tensor({2, 2, 2}, 8);
  double t = 0.6, s = 0.4;
  Tensor xt = forward_noise(x, t, eps);
  Tensor mean = posterior_step(xt, eps, t, s);  // no noise arg: returns the mean
  auto [at, st] = alpha_sigma(t);
  auto [as, ss] = alpha_sigma(s);
  double a_ts = at / as;
  double var_ts = st * st - a_ts * a_ts * ss * ss;
  for (std::size_t i = 0; i < x.data->size(); ++i) {
    double want = (a_ts * ss * ss / (st * st)) * (*xt.data)[i] +
                  (as * var_ts / (st * st)) * (*x.data)[i];
    CHECK((*mean.data)[i] == doctest::Approx(want).epsilon(1e-9));
  }
  CHECK_THROWS_AS(posterior_step(xt, eps, 0.4, 0.6), DataError);  // s < t required
}

TEST_CASE("perfect denoiser: deterministic reverse chain recovers x") {
  Tensor x = clamp_value(random_tensor({8, 16, 2}, 9, 0.5), -1.0, 1.0);
  // oracle: eps_hat(x_t, t) = (x_t - a_t x) / s_t
  DenoiserFn oracle = [&](const Tensor& xt, double t) {
    auto [a, s] = alpha_sigma(t);
    return scale(sub(xt, scale(x, a)), 1.0 / s);
  };
  GaussianRng rng(10);
  Tensor cur = forward_noise(x, 1.0, gaussian_tensor(x.shape, rng));
  std::int64_t T = 64;
  for (std::int64_t k = T; k >= 1; --k)
    cur = posterior_step(cur, oracle(cur, static_cast<double>(k) / T), static_cast<double>(k) / T,
                         static_cast<double>(k - 1) / T);
  for (std::size_t i = 0; i < x.data->size(); ++i)
    CHECK(std::abs((*cur.data)[i] - (*x.data)[i]) < 1e-6);
}

TEST_CASE("forward_noise marginal mean concentrates at a_t x") {
  Tensor x = Tensor::full({4, 8, 2}, 0.5);
  double t = 0.7;
  auto [a, s] = alpha_sigma(t);
  GaussianRng rng(11);
  std::int64_t n = 2000;
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor xt = forward_noise(x, t, gaussian_tensor(x.shape, rng));
    for (double v : *xt.data) acc += v;
  }
  acc /= n * x.size();
  // s.e. of the mean ~ s/sqrt(n*64); 5 sigma bound
  CHECK(std::abs(acc - a * 0.5) < 5.0 * s / std::sqrt(static_cast<double>(n * x.size())));
}

TEST_CASE("sampler is deterministic per seed") {
  DenoiserFn zero = [](const Tensor& xt, double) { return scale(xt, 0.3); };
  SamplerConfig cfg{16, 77};
  Tensor a = sample(zero, {4, 8, 2}, cfg);
  Tensor b = sample(zero, {4, 8, 2}, cfg);
  CHECK((*a.data) == (*b.data));
  SamplerConfig cfg2{16, 78};
  Tensor c = sample(zero, {4, 8, 2}, cfg2);
  CHECK((*a.data) != (*c.data));
}

TEST_CASE("repaint: known pixels exact, all-false mask matches unconditional") {
  DenoiserFn fn = [](const Tensor& xt, double) { return scale(xt, 0.2); };
  Tensor known = clamp_value(testutil::random_tensor({4, 8, 2}, 12, 0.4), -1.0, 1.0);
  SamplerConfig cfg{24, 5};

  std::vector<std::uint8_t> none(4 * 8, 0);
  Tensor uncond = sample(fn, {4, 8, 2}, cfg);
  Tensor dens = repaint_densify(fn, known, none, cfg);
  CHECK((*clamp_value(dens, -1.0, 1.0).data) == (*uncond.data));

  std::vector<std::uint8_t> half(4 * 8, 0);
  for (int r = 0; r < 4; r += 2) std::fill_n(half.begin() + r * 8, 8, 1);
  Tensor d2 = repaint_densify(fn, known, half, cfg);
  for (std::int64_t i = 0; i < 4 * 8; ++i)
    if (half[i])
      for (int c = 0; c < 2; ++c) CHECK((*d2.data)[i * 2 + c] == (*known.data)[i * 2 + c]);

  std::vector<std::uint8_t> all(4 * 8, 1);
  Tensor d3 = repaint_densify(fn, known, all, cfg);
  CHECK((*d3.data) == (*known.data));

  // resample_n > 1 still honors the hard constraint
  Tensor d4 = repaint_densify(fn, known, half, cfg, 3);
  for (std::int64_t i = 0; i < 4 * 8; ++i)
    if (half[i])
      for (int c = 0; c < 2; ++c) CHECK((*d4.data)[i * 2 + c] == (*known.data)[i * 2 + c]);
}

TEST_CASE("training loss is the mse between true and predicted noise") {
  Tensor x = random_tensor({2, 4, 2}, 13, 0.3);
  Tensor eps = random_tensor({2, 4, 2}, 14);
  DenoiserFn perfect = [&](const Tensor&, double) { return eps; };
  CHECK((*training_loss(perfect, x, 0.5, eps).data)[0] == doctest::Approx(0.0).epsilon(1e-15));
  DenoiserFn off = [&](const Tensor&, double) { return add_scalar(eps, 0.1); };
  CHECK((*training_loss(off, x, 0.5, eps).data)[0] == doctest::Approx(0.01).epsilon(1e-12));
}
