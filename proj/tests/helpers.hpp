#pragma once

#include "eqdiff/tensor.hpp"
#include "eqdiff/util.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using namespace eqdiff;

inline double rel_err(double got, double want) {
  double denom = std::max({std::abs(got), std::abs(want), 1e-8});
  return std::abs(got - want) / denom;
}

// Central finite-difference check of d(scalar loss)/d(input) against the tape.
// fn receives leaf tensors already registered on the tape and must return a
// scalar tensor on that tape.
inline double fd_max_rel_err(
    const std::function<Tensor(Tape&, std::vector<Tensor>&)>& fn,
    std::vector<Tensor> inputs, double h = 1e-6) {
  Tape tape;
  std::vector<Tensor> leaves;
  for (auto& in : inputs) leaves.push_back(tape.leaf(in));
  Tensor loss = fn(tape, leaves);
  REQUIRE(loss.size() == 1);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.push_back(tape.grad(l.node));

  auto eval = [&](const std::vector<Tensor>& vals) {
    Tape t2;
    std::vector<Tensor> ls;
    for (const auto& v : vals) ls.push_back(t2.leaf(v));
    return (*fn(t2, ls).data)[0];
  };

  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].data->size(); ++j) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[i] = Tensor::from_data(inputs[i].shape, *inputs[i].data);
      minus[i] = Tensor::from_data(inputs[i].shape, *inputs[i].data);
      (*plus[i].data)[j] += h;
      (*minus[i].data)[j] -= h;
      double fd = (eval(plus) - eval(minus)) / (2 * h);
      double an = analytic[i][j];
      if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
      worst = std::max(worst, rel_err(an, fd));
    }
  }
  return worst;
}

inline Tensor random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  GaussianRng rng(seed);
  Tensor t(std::move(s));
  for (auto& v : *t.data) v = rng.normal() * scale;
  return t;
}

}  // namespace testutil
