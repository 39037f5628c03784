#pragma once

// Named, seeded parameter slots plus the Adam optimizer and the checkpoint
// directory format (one f32 tensor file per slot + manifest.json).

#include "eqdiff/io.hpp"
#include "eqdiff/tensor.hpp"
#include "eqdiff/util.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>

namespace eqdiff {

enum class Init { Normal, Zeros, Ones };

class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Creates the slot if absent. Initialization depends only on (seed, name),
  // so two stores built with the same config and seed are bit-identical
  // regardless of registration order.
  Tensor& add(const std::string& name, Shape shape, Init init, double std_dev = 0.02) {
    auto it = slots_.find(name);
    if (it != slots_.end()) return it->second;
    Tensor t(shape);
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        std::fill(t.data->begin(), t.data->end(), 1.0);
        break;
      case Init::Normal: {
        GaussianRng rng(named_seed(seed_, name));
        for (auto& v : *t.data) v = rng.normal() * std_dev;
        break;
      }
    }
    return slots_.emplace(name, std::move(t)).first->second;
  }

  bool has(const std::string& name) const { return slots_.count(name) > 0; }
  Tensor& get(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : slots_) out.push_back(k);
    return out;
  }
  std::size_t size() const { return slots_.size(); }
  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : slots_) n += v.size();
    return n;
  }

  void save(const fs::path& dir, const std::string& config_hash) const {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["seed"] = seed_;
    manifest["config_hash"] = config_hash;
    std::vector<std::string> names;
    for (const auto& [name, t] : slots_) {
      names.push_back(name);
      write_tensor(dir / name, t);
    }
    manifest["tensors"] = names;
    std::ofstream f(dir / "manifest.json");
    f << manifest.dump(2) << "\n";
  }

  static ParameterStore load(const fs::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw DataError("missing checkpoint manifest: " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    f >> manifest;
    ParameterStore st(manifest.value("seed", std::uint64_t{0}));
    st.config_hash_ = manifest.value("config_hash", "");
    for (const auto& name : manifest.at("tensors").get<std::vector<std::string>>())
      st.slots_.emplace(name, read_tensor(dir / name));
    return st;
  }

  const std::string& config_hash() const { return config_hash_; }

 private:
  std::uint64_t seed_ = 0;
  std::string config_hash_;
  std::map<std::string, Tensor> slots_;  // ordered: deterministic iteration
};

using GradMap = std::map<std::string, std::vector<double>>;

// Binds store slots to tape leaves for one forward/backward pass. Repeated
// lookups return the same leaf, so fan-out gradients accumulate on one node.
class ParamCtx {
 public:
  ParamCtx(Tape* tape, ParameterStore& store) : tape_(tape), store_(store) {}

  Tensor get(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    Tensor value = store_.get(name);
    Tensor leaf = tape_ ? tape_->leaf(value) : value;
    return leaves_.emplace(name, std::move(leaf)).first->second;
  }

  // Gradients of every touched parameter; untouched parameters get zeros.
  GradMap collect_grads() const {
    GradMap g;
    for (const auto& name : store_.names()) {
      auto it = leaves_.find(name);
      if (it != leaves_.end() && it->second.tracked())
        g[name] = tape_->grad(it->second.node);
      else
        g[name] = std::vector<double>(store_.get(name).size(), 0.0);
    }
    return g;
  }

  ParameterStore& store() { return store_; }

 private:
  Tape* tape_;
  ParameterStore& store_;
  std::map<std::string, Tensor> leaves_;
};

// Standard Adam with bias correction. Defaults follow the training setup:
// lr 1e-4, beta1 0.9, beta2 0.99.
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParameterStore& params, const GradMap& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (const auto& name : params.names()) {
      auto git = grads.find(name);
      if (git == grads.end()) throw Error("adam_step: missing gradient for parameter " + name);
      Tensor& p = params.get(name);
      const auto& g = git->second;
      if (static_cast<std::int64_t>(g.size()) != p.size())
        throw ShapeError("adam_step: gradient size mismatch for " + name);
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(g.size(), 0.0);
        v.assign(g.size(), 0.0);
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        (*p.data)[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      detail::check_finite(*p.data, "adam_step");
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace eqdiff
