// eqdiff: single binary driving projection, training, sampling, densification,
// evaluation, and caption normalization.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include "eqdiff/denoiser.hpp"
#include "eqdiff/diffusion.hpp"
#include "eqdiff/io.hpp"
#include "eqdiff/metrics.hpp"
#include "eqdiff/params.hpp"
#include "eqdiff/range_codec.hpp"
#include "eqdiff/text.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

namespace fs = std::filesystem;
using namespace eqdiff;

namespace {

constexpr const char* kCodeVersion = "eqdiff-0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// run config: line-based `key = value`, dotted section prefixes, '#' comments.
// Every key has a registered default; unknown keys are rejected. The resolved
// config echoes back as the same format and reparses losslessly.

class RunConfig {
 public:
  RunConfig() {
    for (const auto& [k, v] : defaults()) values_[k] = v;
  }

  static const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> d = {
        {"sensor.preset", "custom"},
        {"sensor.height", "64"},
        {"sensor.width", "1024"},
        {"sensor.fov_up", "3.0"},
        {"sensor.fov_down", "-25.0"},
        {"sensor.min_range", "0.5"},
        {"sensor.max_range", "80.0"},
        {"denoiser.levels", "4"},
        {"denoiser.base_width", "64"},
        {"denoiser.heads", "4"},
        {"denoiser.fourier_k", "6"},
        {"denoiser.ffn_mult", "4"},
        {"denoiser.text_dim", "512"},
        {"denoiser.text_tokens", "4"},
        {"denoiser.use_ea", "true"},
        {"denoiser.use_rea", "true"},
        {"denoiser.use_cei", "true"},
        {"denoiser.use_fm", "true"},
        {"denoiser.cei_matmul_timestep", "false"},
        {"training.steps", "2000"},
        {"training.batch", "4"},
        {"training.lr", "1e-4"},
        {"training.beta1", "0.9"},
        {"training.beta2", "0.99"},
        {"training.seed", "0"},
        {"training.text_drop", "0.1"},
        {"training.checkpoint_every", "500"},
        {"training.log_every", "25"},
        {"sampler.steps", "256"},
        {"sampler.seed", "0"},
        {"sampler.count", "1"},
        {"sampler.resample_n", "1"},
        {"sampler.checkpoint", ""},
        {"sampler.caption", ""},
        {"sampler.embedding_file", ""},
        {"metrics.bev_bins", "64"},
        {"metrics.bev_extent", "50.0"},
        {"text.provider", "hashed_bow"},
        {"text.bank", ""},
    };
    return d;
  }

  void load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw UsageError("config " + path.string() + ":" + std::to_string(lineno) +
                         ": expected `key = value`");
      std::string key = trim(t.substr(0, eq));
      std::string val = trim(t.substr(eq + 1));
      if (!values_.count(key))
        throw UsageError("config " + path.string() + ":" + std::to_string(lineno) +
                         ": unknown key `" + key + "`");
      values_[key] = val;
    }
    apply_preset();
  }

  std::string str(const std::string& k) const { return values_.at(k); }
  std::int64_t i64(const std::string& k) const { return std::stoll(values_.at(k)); }
  double f64(const std::string& k) const { return std::stod(values_.at(k)); }
  bool flag(const std::string& k) const {
    const std::string& v = values_.at(k);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("config key `" + k + "`: expected true/false, got `" + v + "`");
  }
  void set(const std::string& k, const std::string& v) { values_.at(k) = v; }

  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : defaults()) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

  SensorConfig sensor() const {
    SensorConfig s{i64("sensor.height"), i64("sensor.width"), f64("sensor.fov_up"),
                   f64("sensor.fov_down"), f64("sensor.min_range"), f64("sensor.max_range")};
    s.validate();
    return s;
  }

  DenoiserConfig denoiser() const {
    DenoiserConfig d;
    d.levels = static_cast<int>(i64("denoiser.levels"));
    d.base_width = i64("denoiser.base_width");
    d.heads = static_cast<int>(i64("denoiser.heads"));
    d.fourier_k = static_cast<int>(i64("denoiser.fourier_k"));
    d.ffn_mult = static_cast<int>(i64("denoiser.ffn_mult"));
    d.text_dim = i64("denoiser.text_dim");
    d.text_tokens = i64("denoiser.text_tokens");
    d.use_ea = flag("denoiser.use_ea");
    d.use_rea = flag("denoiser.use_rea");
    d.use_cei = flag("denoiser.use_cei");
    d.use_fm = flag("denoiser.use_fm");
    d.cei_matmul_timestep = flag("denoiser.cei_matmul_timestep");
    return d;
  }

  BevConfig bev() const { return BevConfig{i64("metrics.bev_bins"), f64("metrics.bev_extent")}; }

  // EQDIFF_SEED beats both training.seed and sampler.seed
  void apply_env_seed() {
    if (const char* s = std::getenv("EQDIFF_SEED")) {
      values_.at("training.seed") = s;
      values_.at("sampler.seed") = s;
    }
  }

 private:
  void apply_preset() {
    const std::string& p = values_.at("sensor.preset");
    if (p == "custom") return;
    SensorConfig s;
    if (p == "64beam")
      s = SensorConfig::preset_64beam();
    else if (p == "32beam")
      s = SensorConfig::preset_32beam();
    else
      throw UsageError("unknown sensor.preset: " + p);
    values_.at("sensor.height") = std::to_string(s.height);
    values_.at("sensor.width") = std::to_string(s.width);
    values_.at("sensor.fov_up") = format(s.fov_up_deg);
    values_.at("sensor.fov_down") = format(s.fov_down_deg);
    values_.at("sensor.min_range") = format(s.min_range);
    values_.at("sensor.max_range") = format(s.max_range);
    values_.at("sensor.preset") = "custom";  // resolved; echo round-trips
  }

  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// experiment directory layout

struct ExperimentDir {
  fs::path root;

  static ExperimentDir create(const fs::path& root, const RunConfig& cfg, std::uint64_t seed,
                              const std::string& config_hash, const std::string& command) {
    ExperimentDir e{root};
    for (const char* sub : {"checkpoints", "samples", "reports", "logs"})
      fs::create_directories(root / sub);
    std::ofstream cf(root / "config_resolved.cfg");
    cf << cfg.echo();
    nlohmann::json m;
    m["config_hash"] = config_hash;
    m["seed"] = seed;
    m["code_version"] = kCodeVersion;
    m["command"] = command;
    m["config_file"] = "config_resolved.cfg";
    std::ofstream mf(root / "manifest.json");
    mf << m.dump(2) << "\n";
    return e;
  }

  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path samples() const { return root / "samples"; }
  fs::path reports() const { return root / "reports"; }
  fs::path logs() const { return root / "logs"; }
};

// checkpoint dir carries the parameter tensors plus the denoiser+sensor config
void save_checkpoint(const fs::path& dir, const ParameterStore& store, const Denoiser& model) {
  store.save(dir, model.config_hash());
  nlohmann::json j = model.config().to_json();
  const SensorConfig& s = model.sensor();
  j["sensor"] = {{"height", s.height},       {"width", s.width},
                 {"fov_up", s.fov_up_deg},   {"fov_down", s.fov_down_deg},
                 {"min_range", s.min_range}, {"max_range", s.max_range}};
  std::ofstream f(dir / "denoiser.json");
  f << j.dump(2) << "\n";
}

struct LoadedModel {
  Denoiser model;
  ParameterStore store;
};

LoadedModel load_checkpoint(const fs::path& dir) {
  std::ifstream f(dir / "denoiser.json");
  if (!f) throw DataError("checkpoint is missing denoiser.json: " + dir.string());
  nlohmann::json j;
  f >> j;
  DenoiserConfig cfg = DenoiserConfig::from_json(j);
  SensorConfig s{j.at("sensor").at("height").get<std::int64_t>(),
                 j.at("sensor").at("width").get<std::int64_t>(),
                 j.at("sensor").at("fov_up").get<double>(),
                 j.at("sensor").at("fov_down").get<double>(),
                 j.at("sensor").at("min_range").get<double>(),
                 j.at("sensor").at("max_range").get<double>()};
  Denoiser model(cfg, s);
  ParameterStore store = ParameterStore::load(dir);
  if (store.config_hash() != model.config_hash())
    throw DataError("checkpoint config hash mismatch at " + dir.string());
  return LoadedModel{std::move(model), std::move(store)};
}

DenoiserFn make_denoiser_fn(const Denoiser& model, ParameterStore& store,
                            const std::vector<double>* text) {
  return [&model, &store, text](const Tensor& x_t, double t) {
    ParamCtx ctx(nullptr, store);
    return model.forward(ctx, x_t, t, text);
  };
}

// accepts a stem, the .json sidecar, or the .f32 payload path
fs::path artifact_stem(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".f32") {
    fs::path s = p;
    s.replace_extension();
    return s;
  }
  return p;
}

std::vector<fs::path> dir_artifacts(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> stems;
  for (const auto& ent : fs::directory_iterator(dir))
    if (ent.path().extension() == ".json" && fs::exists(fs::path(ent.path()).replace_extension(".f32")))
      stems.push_back(artifact_stem(ent.path()));
  std::sort(stems.begin(), stems.end());
  return stems;
}

// [H,W,3] range-image artifact or bare [H,W,2] channel artifact
Tensor load_channels(const fs::path& stem, const SensorConfig& sensor) {
  Tensor t = read_tensor(stem);
  if (t.ndim() == 3 && t.shape[2] == 3) return RangeImage::from_tensor(t, sensor).channels();
  if (t.ndim() == 3 && t.shape[2] == 2) {
    if (t.shape[0] != sensor.height || t.shape[1] != sensor.width)
      throw ShapeError("artifact " + stem.string() + ": resolution " + shape_str(t.shape) +
                       " does not match sensor " + std::to_string(sensor.height) + "x" +
                       std::to_string(sensor.width));
    return t;
  }
  throw ShapeError("artifact " + stem.string() + ": expected [H,W,3] or [H,W,2], got " +
                   shape_str(t.shape));
}

void export_depth_png(const fs::path& path, const RangeImage& img) {
  std::vector<std::uint16_t> px(img.pixels());
  for (std::int64_t i = 0; i < img.pixels(); ++i) {
    double v = (img.depth[i] + 1.0) / 2.0;  // [-1,1] -> [0,1]; drops map to 0
    px[i] = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
  }
  write_png16(path, img.config.height, img.config.width, px);
}

void write_cloud_bin(const fs::path& path, const PointCloud& pc) {
  std::vector<float> raw;
  raw.reserve(pc.size() * 4);
  for (const auto& p : pc) {
    raw.push_back(static_cast<float>(p.x));
    raw.push_back(static_cast<float>(p.y));
    raw.push_back(static_cast<float>(p.z));
    raw.push_back(static_cast<float>(p.intensity));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(raw.data()), raw.size() * sizeof(float));
}

std::vector<RewriteRule> rules_from(const std::string& rules_path) {
  return rules_path.empty() ? builtin_rules() : load_rules(rules_path);
}

std::optional<std::vector<double>> resolve_text(const RunConfig& cfg, const std::string& caption,
                                                const std::string& embedding_file) {
  if (!embedding_file.empty()) {
    Tensor t = read_tensor(artifact_stem(embedding_file));
    return *t.data;
  }
  if (caption.empty()) return std::nullopt;
  std::string norm = normalize_caption(caption, builtin_rules());
  if (cfg.str("text.provider") == "file_lookup") {
    EmbeddingBank bank = EmbeddingBank::open(cfg.str("text.bank"));
    return bank.lookup(norm).vector;
  }
  return embed_hashed_bow(norm, cfg.i64("denoiser.text_dim")).vector;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_project(const RunConfig& cfg, const std::vector<std::string>& inputs, const fs::path& out,
                bool png, int jobs) {
  SensorConfig sensor = cfg.sensor();
  fs::create_directories(out);
  std::atomic<std::size_t> next{0};
  std::atomic<int> failures{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= inputs.size()) return;
      const fs::path in = inputs[i];
      try {
        ScanReadResult scan = read_scan_bin(in);
        RangeImage img = project(scan.cloud, sensor);
        fs::path stem = out / in.stem();
        write_tensor(stem, img.to_tensor());
        if (png) export_depth_png(fs::path(stem) += ".png", img);
        std::lock_guard lk(log_mu);
        std::cout << in.string() << " -> " << stem.string() << " (" << scan.cloud.size()
                  << " points, " << scan.skipped << " skipped)\n";
      } catch (const Error& e) {
        ++failures;
        std::lock_guard lk(log_mu);
        std::cerr << "error: " << in.string() << ": " << e.what() << "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < std::min<int>(jobs, static_cast<int>(inputs.size())); ++j)
    pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return failures ? 2 : 0;
}

int cmd_unproject(const RunConfig& cfg, const std::vector<std::string>& inputs, const fs::path& out) {
  SensorConfig sensor = cfg.sensor();
  fs::create_directories(out);
  for (const auto& in : inputs) {
    fs::path stem = artifact_stem(in);
    Tensor t = read_tensor(stem);
    RangeImage img = t.shape.back() == 3 ? RangeImage::from_tensor(t, sensor)
                                          : RangeImage::from_sample(t, sensor);
    PointCloud pc = unproject(img);
    fs::path dst = out / stem.filename();
    dst += ".bin";
    write_cloud_bin(dst, pc);
    std::cout << stem.string() << " -> " << dst.string() << " (" << pc.size() << " points)\n";
  }
  return 0;
}

int cmd_train(RunConfig cfg, const fs::path& data_dir, const std::string& captions,
              const std::string& rules_path, const fs::path& out_dir) {
  cfg.apply_env_seed();
  SensorConfig sensor = cfg.sensor();
  Denoiser model(cfg.denoiser(), sensor);  // resolution validated before step 0

  auto stems = dir_artifacts(data_dir);
  if (stems.empty()) throw DataError("no artifacts (stem.f32 + stem.json) in " + data_dir.string());
  std::vector<Tensor> images;
  for (const auto& s : stems) images.push_back(load_channels(s, sensor));

  std::vector<std::optional<std::vector<double>>> texts(stems.size());
  if (!captions.empty()) {
    auto rules = rules_from(rules_path);
    auto manifest = load_pairs(captions, rules);
    if (manifest.duplicate_warnings)
      std::cerr << "warning: " << manifest.duplicate_warnings << " duplicate frame ids in "
                << captions << " (last occurrence wins)\n";
    std::map<std::string, std::string> by_frame;
    for (const auto& r : manifest.records) by_frame[r.frame_id] = r.normalized;
    for (std::size_t i = 0; i < stems.size(); ++i) {
      auto it = by_frame.find(stems[i].filename().string());
      if (it == by_frame.end())
        throw DataError("caption manifest " + captions + " has no entry for frame " +
                        stems[i].filename().string());
      texts[i] = embed_text(it->second, cfg.str("text.provider"), cfg.i64("denoiser.text_dim"))
                     .vector;
    }
  }

  std::uint64_t seed = static_cast<std::uint64_t>(cfg.i64("training.seed"));
  ExperimentDir exp = ExperimentDir::create(out_dir, cfg, seed, model.config_hash(), "train");
  ParameterStore store = model.make_store(seed);
  Adam opt(cfg.f64("training.lr"), cfg.f64("training.beta1"), cfg.f64("training.beta2"));
  GaussianRng rng(named_seed(seed, "train"));
  double text_drop = cfg.f64("training.text_drop");
  std::int64_t steps = cfg.i64("training.steps");
  std::int64_t batch = cfg.i64("training.batch");
  std::int64_t ckpt_every = cfg.i64("training.checkpoint_every");
  std::int64_t log_every = cfg.i64("training.log_every");

  std::ofstream loss_log(exp.logs() / "train_loss.txt");
  for (std::int64_t step = 0; step < steps; ++step) {
    Tape tape;
    ParamCtx ctx(&tape, store);
    Tensor total;
    for (std::int64_t b = 0; b < batch; ++b) {
      std::size_t idx = static_cast<std::size_t>(rng.uniform() * images.size()) % images.size();
      double t = rng.uniform();
      Tensor eps = gaussian_tensor(images[idx].shape, rng);
      const std::vector<double>* text = texts[idx] ? &*texts[idx] : nullptr;
      if (text && rng.uniform() < text_drop) text = nullptr;
      auto fn = [&](const Tensor& x_t, double tt) { return model.forward(ctx, x_t, tt, text); };
      Tensor loss = training_loss(fn, images[idx], t, eps);
      total = b == 0 ? loss : add(total, loss);
    }
    total = scale(total, 1.0 / batch);
    double loss_val = (*total.data)[0];
    tape.backward(total);
    opt.step(store, ctx.collect_grads());
    loss_log << step << " " << loss_val << "\n";
    if (log_every > 0 && step % log_every == 0)
      std::cout << "step " << step << " loss " << loss_val << "\n";
    if (ckpt_every > 0 && step > 0 && step % ckpt_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06lld", static_cast<long long>(step));
      save_checkpoint(exp.checkpoints() / name, store, model);
    }
  }
  save_checkpoint(exp.checkpoints() / "final", store, model);
  std::cout << "final checkpoint: " << (exp.checkpoints() / "final").string() << "\n";
  return 0;
}

int cmd_sample(RunConfig cfg, const std::string& checkpoint, std::int64_t count,
               const std::string& caption, const fs::path& out_dir, bool png) {
  cfg.apply_env_seed();
  std::string ckpt = checkpoint.empty() ? cfg.str("sampler.checkpoint") : checkpoint;
  if (ckpt.empty()) throw UsageError("sample: --checkpoint (or sampler.checkpoint) required");
  if (count < 0) throw UsageError("sample: count must be >= 0");
  LoadedModel lm = load_checkpoint(ckpt);
  std::string cap = caption.empty() ? cfg.str("sampler.caption") : caption;
  auto text = resolve_text(cfg, cap, cfg.str("sampler.embedding_file"));

  std::uint64_t seed = static_cast<std::uint64_t>(cfg.i64("sampler.seed"));
  ExperimentDir exp = ExperimentDir::create(out_dir, cfg, seed, lm.model.config_hash(), "sample");
  DenoiserFn fn = make_denoiser_fn(lm.model, lm.store, text ? &*text : nullptr);
  const SensorConfig& sensor = lm.model.sensor();
  for (std::int64_t k = 0; k < count; ++k) {
    SamplerConfig sc{cfg.i64("sampler.steps"), named_seed(seed, "sample." + std::to_string(k))};
    Tensor x = sample(fn, {sensor.height, sensor.width, 2}, sc);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04lld", static_cast<long long>(k));
    fs::path stem = exp.samples() / name;
    write_tensor(stem, x);
    RangeImage img = RangeImage::from_sample(x, sensor);
    write_cloud_bin(fs::path(stem) += ".bin", unproject(img));
    if (png) export_depth_png(fs::path(stem) += ".png", img);
    std::cout << stem.string() << "\n";
  }
  return 0;
}

int cmd_densify(RunConfig cfg, const std::string& checkpoint, const std::string& input,
                const std::string& mask_kind, const std::string& truth, const fs::path& out_dir,
                bool png) {
  cfg.apply_env_seed();
  std::string ckpt = checkpoint.empty() ? cfg.str("sampler.checkpoint") : checkpoint;
  if (ckpt.empty()) throw UsageError("densify: --checkpoint (or sampler.checkpoint) required");
  LoadedModel lm = load_checkpoint(ckpt);
  const SensorConfig& sensor = lm.model.sensor();
  Tensor known = load_channels(artifact_stem(input), sensor);

  std::uint64_t seed = static_cast<std::uint64_t>(cfg.i64("sampler.seed"));
  auto mask = make_mask(parse_mask_kind(mask_kind), sensor, seed);
  std::string cap = cfg.str("sampler.caption");
  auto text = resolve_text(cfg, cap, cfg.str("sampler.embedding_file"));
  DenoiserFn fn = make_denoiser_fn(lm.model, lm.store, text ? &*text : nullptr);

  ExperimentDir exp = ExperimentDir::create(out_dir, cfg, seed, lm.model.config_hash(), "densify");
  SamplerConfig sc{cfg.i64("sampler.steps"), seed};
  Tensor dense = repaint_densify(fn, known, mask, sc, static_cast<int>(cfg.i64("sampler.resample_n")));
  fs::path stem = exp.samples() / "densified";
  write_tensor(stem, dense);
  RangeImage img = RangeImage::from_sample(dense, sensor);
  write_cloud_bin(fs::path(stem) += ".bin", unproject(img));
  if (png) export_depth_png(fs::path(stem) += ".png", img);

  nlohmann::json rep;
  rep["mask_kind"] = mask_kind;
  rep["known_pixels"] = static_cast<std::int64_t>(std::count(mask.begin(), mask.end(), 1));
  rep["total_pixels"] = static_cast<std::int64_t>(mask.size());
  if (!truth.empty()) {
    Tensor gt = load_channels(artifact_stem(truth), sensor);
    std::vector<bool> unknown(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) unknown[i] = !mask[i];
    MaskedError d = masked_error(dense, gt, unknown, 0);
    MaskedError inten = masked_error(dense, gt, unknown, 1);
    rep["unknown_mae_depth"] = d.mae;
    rep["unknown_rmse_depth"] = d.rmse;
    rep["unknown_mae_intensity"] = inten.mae;
    rep["unknown_rmse_intensity"] = inten.rmse;
  }
  std::ofstream rf(exp.reports() / "densify.json");
  rf << rep.dump(2) << "\n";
  std::cout << rep.dump(2) << "\n";
  return 0;
}

std::vector<std::vector<double>> read_feature_rows(const fs::path& stem) {
  Tensor t = read_tensor(stem);
  if (t.ndim() != 2) throw ShapeError("feature file " + stem.string() + ": expected [N,D]");
  std::vector<std::vector<double>> rows(t.shape[0]);
  for (std::int64_t i = 0; i < t.shape[0]; ++i)
    rows[i].assign(t.data->begin() + i * t.shape[1], t.data->begin() + (i + 1) * t.shape[1]);
  return rows;
}

int cmd_eval(const RunConfig& cfg, const fs::path& gen_dir, const fs::path& ref_dir,
             const std::string& feat_gen, const std::string& feat_ref, const std::string& out_file) {
  SensorConfig sensor = cfg.sensor();
  BevConfig bev = cfg.bev();

  auto load_set = [&](const fs::path& dir) {
    std::vector<Tensor> imgs;
    std::vector<PointCloud> clouds;
    for (const auto& stem : dir_artifacts(dir)) {
      Tensor ch = load_channels(stem, sensor);
      imgs.push_back(ch);
      clouds.push_back(unproject(RangeImage::from_sample(ch, sensor)));
    }
    if (imgs.empty()) throw DataError("no artifacts in " + dir.string());
    return std::pair{std::move(imgs), std::move(clouds)};
  };
  auto [gen_imgs, gen_clouds] = load_set(gen_dir);
  auto [ref_imgs, ref_clouds] = load_set(ref_dir);

  MetricReport rep;
  rep.bev_bins = bev.bins;
  rep.bev_extent = bev.extent;
  rep.n_reference = static_cast<std::int64_t>(ref_clouds.size());
  rep.n_candidate = static_cast<std::int64_t>(gen_clouds.size());
  rep.jsd = jsd(occupancy_histogram(ref_clouds, bev), occupancy_histogram(gen_clouds, bev));
  rep.mmd = mmd(ref_clouds, gen_clouds, bev);

  // paired pixel errors when the two sets line up one-to-one
  if (gen_imgs.size() == ref_imgs.size()) {
    double mae_d = 0, rmse_d = 0, mae_i = 0, rmse_i = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < gen_imgs.size(); ++i) {
      if (gen_imgs[i].shape != ref_imgs[i].shape) continue;
      std::vector<bool> all(sensor.height * sensor.width, true);
      MaskedError d = masked_error(gen_imgs[i], ref_imgs[i], all, 0);
      MaskedError in = masked_error(gen_imgs[i], ref_imgs[i], all, 1);
      mae_d += d.mae;
      rmse_d += d.rmse;
      mae_i += in.mae;
      rmse_i += in.rmse;
      ++pairs;
    }
    if (pairs) {
      rep.mae_depth = mae_d / pairs;
      rep.rmse_depth = rmse_d / pairs;
      rep.mae_intensity = mae_i / pairs;
      rep.rmse_intensity = rmse_i / pairs;
    }
  }

  if (!feat_gen.empty() != !feat_ref.empty())
    throw UsageError("eval: --features-gen and --features-ref must be given together");
  if (!feat_gen.empty()) {
    auto a = gaussian_summary(read_feature_rows(artifact_stem(feat_gen)));
    auto b = gaussian_summary(read_feature_rows(artifact_stem(feat_ref)));
    rep.frechet = frechet_distance(a, b);
  }

  std::string text = rep.to_json().dump(2);
  std::cout << text << "\n";
  if (!out_file.empty()) {
    std::ofstream f(out_file);
    f << text << "\n";
  }
  return 0;
}

int cmd_normalize_text(const std::string& in, const std::string& out, const std::string& rules_path,
                       const std::string& report) {
  auto rules = rules_from(rules_path);
  auto res = load_pairs(in, rules);
  if (res.duplicate_warnings)
    std::cerr << "warning: " << res.duplicate_warnings << " duplicate frame ids (last wins)\n";
  std::ofstream f(out);
  if (!f) throw DataError("cannot open for writing: " + out);
  for (const auto& r : res.records) f << r.frame_id << "\t" << r.normalized << "\n";
  if (!report.empty()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [tok, n] : token_frequencies(res.records)) j[tok] = n;
    std::ofstream rf(report);
    rf << j.dump(2) << "\n";
  }
  std::cout << res.records.size() << " captions normalized\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equirectangular range-image diffusion toolkit"};
  app.require_subcommand(1);

  std::string config_path, captions, rules, checkpoint, caption, input, mask_kind, truth;
  std::string feat_gen, feat_ref, out_file, report, manifest_in, manifest_out, gen_dir, ref_dir;
  std::vector<std::string> inputs;
  std::string out = "out";
  std::int64_t count = 1;
  bool png = false, print_config = false;
  int jobs = 1;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config file (key = value lines)");
    sub->add_flag("--print-config", print_config, "echo the resolved config and exit");
  };

  CLI::App* project = app.add_subcommand("project", "project scan .bin files to range images");
  add_config(project);
  project->add_option("inputs", inputs, "scan files (x,y,z,intensity f32 records)");
  project->add_option("--out", out, "output directory")->required();
  project->add_flag("--png", png, "also write 16-bit depth PNGs");
  project->add_option("--jobs", jobs, "concurrent workers");

  CLI::App* unproject_cmd = app.add_subcommand("unproject", "range-image artifacts to point clouds");
  add_config(unproject_cmd);
  unproject_cmd->add_option("inputs", inputs, "artifact stems");
  unproject_cmd->add_option("--out", out, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train the denoiser");
  add_config(train);
  train->add_option("--data", input, "directory of range-image artifacts")->required();
  train->add_option("--captions", captions, "caption manifest (frame<TAB>caption)");
  train->add_option("--rules", rules, "rewrite rule file");
  train->add_option("--out", out, "experiment directory")->required();

  CLI::App* sample_cmd = app.add_subcommand("sample", "draw unconditional or captioned samples");
  add_config(sample_cmd);
  sample_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory");
  sample_cmd->add_option("--count", count, "number of samples");
  sample_cmd->add_option("--caption", caption, "conditioning caption");
  sample_cmd->add_option("--out", out, "experiment directory")->required();
  sample_cmd->add_flag("--png", png, "also write 16-bit depth PNGs");

  CLI::App* densify = app.add_subcommand("densify", "mask-constrained completion of a sparse scan");
  add_config(densify);
  densify->add_option("--checkpoint", checkpoint, "checkpoint directory");
  densify->add_option("--input", input, "sparse range-image artifact")->required();
  densify->add_option("--mask", mask_kind, "beam_keep_half | beam_keep_quarter | random_keep_10pct")
      ->required();
  densify->add_option("--truth", truth, "ground-truth artifact for the error report");
  densify->add_option("--out", out, "experiment directory")->required();
  densify->add_flag("--png", png, "also write 16-bit depth PNGs");

  CLI::App* eval_cmd = app.add_subcommand("eval", "distribution metrics between two artifact dirs");
  add_config(eval_cmd);
  eval_cmd->add_option("--gen", gen_dir, "generated artifact directory")->required();
  eval_cmd->add_option("--ref", ref_dir, "reference artifact directory")->required();
  eval_cmd->add_option("--features-gen", feat_gen, "generated feature rows ([N,D] artifact)");
  eval_cmd->add_option("--features-ref", feat_ref, "reference feature rows ([N,D] artifact)");
  eval_cmd->add_option("--report", out_file, "write the JSON report here too");

  CLI::App* norm = app.add_subcommand("normalize-text", "normalize a caption manifest");
  norm->add_option("--in", manifest_in, "input manifest")->required();
  norm->add_option("--out", manifest_out, "output manifest")->required();
  norm->add_option("--rules", rules, "rewrite rule file (default: built-in rules)");
  norm->add_option("--report", report, "token-frequency JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load(config_path);
    if (print_config) {
      std::cout << cfg.echo();
      return 0;
    }
    if (project->parsed()) return cmd_project(cfg, inputs, out, png, std::max(1, jobs));
    if (unproject_cmd->parsed()) return cmd_unproject(cfg, inputs, out);
    if (train->parsed()) return cmd_train(cfg, input, captions, rules, out);
    if (sample_cmd->parsed()) return cmd_sample(cfg, checkpoint, count, caption, out, png);
    if (densify->parsed()) return cmd_densify(cfg, checkpoint, input, mask_kind, truth, out, png);
    if (eval_cmd->parsed()) return cmd_eval(cfg, gen_dir, ref_dir, feat_gen, feat_ref, out_file);
    if (norm->parsed()) return cmd_normalize_text(manifest_in, manifest_out, rules, report);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
