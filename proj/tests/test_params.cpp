#include "eqdiff/params.hpp"

#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"

using namespace eqdiff;
namespace fs = std::filesystem;

TEST_CASE("parameter init is independent of insertion order") {
  ParameterStore a(42), b(42);
  a.add("w1", {4, 4}, Init::Normal);
  a.add("w2", {8}, Init::Normal);
  b.add("w2", {8}, Init::Normal);
  b.add("w1", {4, 4}, Init::Normal);
  CHECK((*a.get("w1").data) == (*b.get("w1").data));
  CHECK((*a.get("w2").data) == (*b.get("w2").data));
}

TEST_CASE("different seeds give different parameters") {
  ParameterStore a(1), b(2);
  a.add("w", {16}, Init::Normal);
  b.add("w", {16}, Init::Normal);
  CHECK((*a.get("w").data) != (*b.get("w").data));
}

TEST_CASE("checkpoint round trip is bit exact") {
  fs::path dir = fs::temp_directory_path() / "eqdiff_ckpt_test";
  fs::remove_all(dir);
  ParameterStore st(7);
  st.add("layer.w", {3, 5}, Init::Normal);
  st.add("layer.b", {5}, Init::Zeros);
  // f32 storage: quantize once so save/load is then exact
  for (auto& name : st.names())
    for (auto& v : *st.get(name).data) v = static_cast<float>(v);
  st.save(dir, "deadbeef");
  ParameterStore back = ParameterStore::load(dir);
  CHECK(back.config_hash() == "deadbeef");
  CHECK(back.seed() == 7);
  for (auto& name : st.names()) CHECK((*back.get(name).data) == (*st.get(name).data));
  fs::remove_all(dir);
}

TEST_CASE("adam first step matches the closed form") {
  // with m,v = 0 and bias correction, step 1 update is lr * g / (|g| + eps)
  ParameterStore st(0);
  st.add("w", {2}, Init::Zeros);
  GradMap g{{"w", {0.5, -2.0}}};
  double lr = 1e-3;
  Adam opt(lr, 0.9, 0.99, 1e-8);
  opt.step(st, g);
  CHECK((*st.get("w").data)[0] == doctest::Approx(-lr * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK((*st.get("w").data)[1] == doctest::Approx(lr * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam drives a quadratic bowl to the origin") {
  ParameterStore st(0);
  st.add("w", {3}, Init::Normal, 1.0);
  Adam opt(0.05);
  for (int i = 0; i < 800; ++i) {
    GradMap g;
    g["w"] = *st.get("w").data;  // grad of 0.5*|w|^2
    opt.step(st, g);
  }
  for (double v : *st.get("w").data) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("adam rejects a grad map that misses a parameter") {
  ParameterStore st(0);
  st.add("present", {1}, Init::Zeros);
  st.add("missing", {1}, Init::Zeros);
  GradMap g{{"present", {1.0}}};
  Adam opt;
  CHECK_THROWS_WITH_AS(opt.step(st, g), doctest::Contains("missing"), Error);
}

TEST_CASE("param ctx returns the same leaf per name and collects zeros for untouched") {
  ParameterStore st(3);
  st.add("used", {2}, Init::Normal);
  st.add("unused", {2}, Init::Normal);
  Tape tape;
  ParamCtx ctx(&tape, st);
  Tensor a = ctx.get("used");
  Tensor b = ctx.get("used");
  CHECK(a.node == b.node);
  tape.backward(sum_all(mul(a, b)));
  GradMap g = ctx.collect_grads();
  CHECK(g.at("unused") == std::vector<double>{0.0, 0.0});
  CHECK(g.at("used")[0] == doctest::Approx(2.0 * (*st.get("used").data)[0]).epsilon(1e-12));
}
