#pragma once

// The equirectangular-transformer noise predictor: Fourier angle features,
// EA encoder levels (windowed wrap-around attention + downsampling), a
// bottleneck control-signal fuse, REA decoder levels each ending in a
// control-signal embedding injector (CEI), and a terminal wavelet
// frequency modulator (FM) before the 2-channel output head.

#include "eqdiff/kernels.hpp"
#include "eqdiff/params.hpp"
#include "eqdiff/range_codec.hpp"
#include "eqdiff/tensor.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace eqdiff {

struct DenoiserConfig {
  int levels = 4;       // encoder/decoder depth
  int base_width = 64;  // C
  int heads = 4;
  int fourier_k = 6;  // frequency count K; 4K feature channels
  int ffn_mult = 4;
  int text_dim = 512;
  int text_tokens = 4;  // learned tokens emitted from the pooled embedding
  int time_dim = 0;     // 0 -> base_width
  bool use_ea = true;
  bool use_rea = true;
  bool use_cei = true;
  bool use_fm = true;
  bool cei_matmul_timestep = false;  // outer-product timestep gate instead of broadcast
  double text_drop = 0.1;            // training-time unconditional dropout

  int time_width() const { return time_dim > 0 ? time_dim : base_width; }

  // C_i = C * 2^(i-1), capped at 8C; level 0 carries the base width.
  std::int64_t width(int level) const {
    if (level <= 1) return base_width;
    return std::min<std::int64_t>(static_cast<std::int64_t>(base_width) << (level - 1), 8LL * base_width);
  }

  nlohmann::json to_json() const {
    return {{"levels", levels},         {"base_width", base_width},
            {"heads", heads},           {"fourier_k", fourier_k},
            {"ffn_mult", ffn_mult},     {"text_dim", text_dim},
            {"text_tokens", text_tokens}, {"time_dim", time_dim},
            {"use_ea", use_ea},         {"use_rea", use_rea},
            {"use_cei", use_cei},       {"use_fm", use_fm},
            {"cei_matmul_timestep", cei_matmul_timestep}, {"text_drop", text_drop}};
  }

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.levels = j.at("levels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.heads = j.at("heads").get<int>();
    c.fourier_k = j.at("fourier_k").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.text_dim = j.at("text_dim").get<int>();
    c.text_tokens = j.at("text_tokens").get<int>();
    c.time_dim = j.at("time_dim").get<int>();
    c.use_ea = j.at("use_ea").get<bool>();
    c.use_rea = j.at("use_rea").get<bool>();
    c.use_cei = j.at("use_cei").get<bool>();
    c.use_fm = j.at("use_fm").get<bool>();
    c.cei_matmul_timestep = j.at("cei_matmul_timestep").get<bool>();
    c.text_drop = j.at("text_drop").get<double>();
    return c;
  }
};

// Per-pixel sin/cos(2^k phi), sin/cos(2^k theta) for k = 0..K-1 at the
// bin-center angles of an H x W grid; data-independent.
inline Tensor fourier_features(std::int64_t H, std::int64_t W, int K, const SensorConfig& sensor) {
  Tensor f({H, W, 4LL * K});
  double fu = sensor.fov_up(), fd = sensor.fov_down();
  for (std::int64_t i = 0; i < H; ++i) {
    double elev = fd + (1.0 - (i + 0.5) / H) * (fu - fd);
    for (std::int64_t j = 0; j < W; ++j) {
      double azim = M_PI - 2.0 * M_PI * (j + 0.5) / W;
      double* out = f.data->data() + (i * W + j) * 4 * K;
      for (int k = 0; k < K; ++k) {
        double p = std::ldexp(1.0, k);  // 2^k
        out[4 * k + 0] = std::sin(p * elev);
        out[4 * k + 1] = std::cos(p * elev);
        out[4 * k + 2] = std::sin(p * azim);
        out[4 * k + 3] = std::cos(p * azim);
      }
    }
  }
  return f;
}

// Raw sinusoidal timestep features over geometric frequencies; the learned
// map on top lives in the parameter store.
inline Tensor timestep_sinusoid(double t, int dim) {
  if (!(t >= 0.0 && t <= 1.0)) throw DataError("timestep_sinusoid: t must lie in [0,1]");
  if (dim % 2 != 0) throw ShapeError("timestep_sinusoid: dim must be even, got " + std::to_string(dim));
  int half = dim / 2;
  Tensor e({1, dim});
  for (int j = 0; j < half; ++j) {
    double omega = M_PI * std::pow(1000.0, half > 1 ? static_cast<double>(j) / (half - 1) : 0.0);
    (*e.data)[2 * j] = std::sin(t * omega);
    (*e.data)[2 * j + 1] = std::cos(t * omega);
  }
  return e;
}

enum class FmGateMode { Learned, ForceUnit, ForceLowpass };

namespace nn {

struct Linear {
  std::string name;
  std::int64_t in = 0, out = 0;
  bool bias = true;
  double wstd = -1.0;  // -1 -> 1/sqrt(in)
  bool zero_init = false;

  Linear() = default;
  Linear(std::string n, std::int64_t i, std::int64_t o, bool b = true, double s = -1.0, bool zero = false)
      : name(std::move(n)), in(i), out(o), bias(b), wstd(s), zero_init(zero) {}

  void reg(ParameterStore& st) const {
    double s = wstd < 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : wstd;
    st.add(name + ".w", {in, out}, zero_init ? Init::Zeros : Init::Normal, s);
    if (bias) st.add(name + ".b", {out}, Init::Zeros);
  }
  Tensor operator()(ParamCtx& ctx, const Tensor& x) const {
    Tensor w = ctx.get(name + ".w");
    if (!bias) return linear(x, w, nullptr);
    Tensor b = ctx.get(name + ".b");
    return linear(x, w, &b);
  }
};

struct Norm {
  std::string name;
  std::int64_t width = 0;
  Norm() = default;
  Norm(std::string n, std::int64_t w) : name(std::move(n)), width(w) {}
  void reg(ParameterStore& st) const {
    st.add(name + ".g", {width}, Init::Ones);
    st.add(name + ".b", {width}, Init::Zeros);
  }
  Tensor operator()(ParamCtx& ctx, const Tensor& x) const {
    return layer_norm(x, ctx.get(name + ".g"), ctx.get(name + ".b"));
  }
};

inline Tensor multihead_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, int heads) {
  // q_in: [G, Tq, C], k_in/v_in: [G, Tk, C]
  std::int64_t G = q_in.shape[0], Tq = q_in.shape[1], Tk = k_in.shape[1], C = q_in.shape[2];
  std::int64_t hd = C / heads;
  auto split = [&](const Tensor& t, std::int64_t T) {
    return permute(reshape(t, {G, T, heads, hd}), {0, 2, 1, 3});
  };
  Tensor q = split(q_in, Tq), k = split(k_in, Tk), v = split(v_in, Tk);
  Tensor att = softmax_lastdim(scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(hd))));
  Tensor o = bmm(att, v);  // [G, heads, Tq, hd]
  return reshape(permute(o, {0, 2, 1, 3}), {G, Tq, C});
}

// Pre-norm residual block: windowed MHSA plus FFN, on [G, T, C] tokens.
struct AttnBlock {
  std::int64_t width = 0;
  int heads = 4;
  Norm ln1, ln2;
  Linear qkv, out, ffn1, ffn2;

  AttnBlock() = default;
  AttnBlock(const std::string& name, std::int64_t w, int h, int ffn_mult)
      : width(w),
        heads(h),
        ln1(name + ".ln1", w),
        ln2(name + ".ln2", w),
        qkv(name + ".qkv", w, 3 * w),
        out(name + ".out", w, w, true, 1e-3),
        ffn1(name + ".ffn1", w, ffn_mult * w),
        ffn2(name + ".ffn2", static_cast<std::int64_t>(ffn_mult) * w, w, true, 1e-3) {}

  void reg(ParameterStore& st) const {
    ln1.reg(st);
    ln2.reg(st);
    qkv.reg(st);
    out.reg(st);
    ffn1.reg(st);
    ffn2.reg(st);
  }

  Tensor operator()(ParamCtx& ctx, const Tensor& x) const {
    std::int64_t G = x.shape[0], T = x.shape[1];
    Tensor h = qkv(ctx, ln1(ctx, x));
    Tensor q = slice(h, 2, 0, width);
    Tensor k = slice(h, 2, width, width);
    Tensor v = slice(h, 2, 2 * width, width);
    Tensor y = add(x, out(ctx, multihead_attention(q, k, v, heads)));
    (void)G;
    (void)T;
    return add(y, ffn2(ctx, gelu(ffn1(ctx, ln2(ctx, y)))));
  }
};

}  // namespace nn

// ---------------------------------------------------------------------------

struct WindowSpec {
  Window win;
  Stride st;
  bool wrap = true;
};

class Denoiser {
 public:
  Denoiser(DenoiserConfig cfg, SensorConfig sensor) : cfg_(cfg), sensor_(sensor) {
    sensor_.validate();
    H_ = sensor_.height;
    W_ = sensor_.width;
    validate_resolution();
    int L = cfg_.levels;
    for (int g = 0; g < L; ++g)
      fourier_.push_back(fourier_features(H_ >> g, W_ >> g, cfg_.fourier_k, sensor_));

    time_base_ = nn::Linear("time.base", cfg_.time_width(), cfg_.time_width());
    stem_ = nn::Linear("stem", 2 + (cfg_.use_ea ? 4LL * cfg_.fourier_k : 0), cfg_.width(0));
    for (int l = 1; l <= L; ++l) {
      std::string p = "enc.l" + std::to_string(l);
      EaLevel ea;
      ea.grid = l - 1;
      ea.in_width = cfg_.width(l - 1);
      ea.out_width = cfg_.width(l);
      std::int64_t fc = cfg_.use_ea ? 4LL * cfg_.fourier_k : 0;
      ea.in_proj = nn::Linear(p + ".in", ea.in_width + fc, ea.in_width);
      ea.attn = nn::AttnBlock(p + ".attn", ea.in_width, cfg_.heads, cfg_.ffn_mult);
      ea.down = nn::Linear(p + ".down", 4 * ea.in_width, ea.out_width);
      enc_.push_back(std::move(ea));
    }
    bottleneck_ = make_cei("bott.cei", cfg_.width(L));
    for (int i = L - 1; i >= 0; --i) {
      std::string p = "dec.l" + std::to_string(i);
      ReaLevel rea;
      rea.level = i;
      rea.grid = i + 1;
      rea.width = cfg_.width(i + 1);
      rea.out_width = cfg_.width(i);
      rea.merge = nn::Linear(p + ".merge", 2 * rea.width, rea.width);
      rea.attn = nn::AttnBlock(p + ".attn", rea.width, cfg_.heads, cfg_.ffn_mult);
      rea.cei = make_cei(p + ".cei", rea.width);
      rea.up = nn::Linear(p + ".up", rea.width, 4 * rea.out_width);
      dec_.push_back(std::move(rea));
    }
    std::int64_t C = cfg_.width(0);
    head_ = nn::Linear("head", C, 2, true, 0.0, true);  // zero-init output head
  }

  const DenoiserConfig& config() const { return cfg_; }
  const SensorConfig& sensor() const { return sensor_; }

  void register_params(ParameterStore& st) const {
    time_base_.reg(st);
    stem_.reg(st);
    for (const auto& ea : enc_) {
      ea.in_proj.reg(st);
      ea.attn.reg(st);
      ea.down.reg(st);
    }
    reg_cei(st, bottleneck_);
    for (const auto& rea : dec_) {
      rea.merge.reg(st);
      rea.attn.reg(st);
      reg_cei(st, rea.cei);
      rea.up.reg(st);
    }
    std::int64_t C = cfg_.width(0);
    if (cfg_.use_fm) {
      st.add("fm.conv1.k", {3, 3, C, C}, Init::Normal, 1.0 / std::sqrt(9.0 * C));
      st.add("fm.conv1.b", {C}, Init::Zeros);
      st.add("fm.conv2.k", {3, 3, C, 4 * C}, Init::Normal, 1.0 / std::sqrt(9.0 * C));
      st.add("fm.conv2.b", {4 * C}, Init::Zeros);
    }
    head_.reg(st);
  }

  ParameterStore make_store(std::uint64_t seed) const {
    ParameterStore st(seed);
    register_params(st);
    return st;
  }

  Tensor forward(ParamCtx& ctx, const Tensor& x_t, double t, const std::vector<double>* text,
                 FmGateMode gate_mode = FmGateMode::Learned) const {
    if (x_t.ndim() != 3 || x_t.shape[0] != H_ || x_t.shape[1] != W_ || x_t.shape[2] != 2)
      throw ShapeError("denoiser: expected " + std::to_string(H_) + "x" + std::to_string(W_) +
                       "x2 input, got " + shape_str(x_t.shape));
    if (text && static_cast<std::int64_t>(text->size()) != cfg_.text_dim)
      throw ShapeError("denoiser: text embedding width " + std::to_string(text->size()) +
                       " does not match configured " + std::to_string(cfg_.text_dim));

    Tensor m_base = time_base_(ctx, timestep_sinusoid(t, cfg_.time_width()));

    Tensor h = cfg_.use_ea ? stem_(ctx, concat({x_t, fourier_[0]}, 2)) : stem_(ctx, x_t);
    std::vector<Tensor> xs;  // xs[i] = x^i, grid i, width(i); xs[0] is the stem output
    xs.push_back(h);
    for (const auto& ea : enc_) xs.push_back(apply_ea(ctx, ea, xs.back()));

    // bottleneck control-signal transfer fuse: one CEI at the deepest level
    Tensor e = xs.back();
    {
      std::int64_t Hg = e.shape[0], Wg = e.shape[1], C = e.shape[2];
      Tensor d = reshape(e, {Hg * Wg, C});
      d = apply_cei(ctx, bottleneck_, d, text, m_base);
      e = reshape(d, {Hg, Wg, C});
    }
    for (const auto& rea : dec_) e = apply_rea(ctx, rea, xs[rea.grid], e, text, m_base);

    return apply_fm(ctx, e, gate_mode);
  }

  std::string config_hash() const {
    nlohmann::json j = cfg_.to_json();
    j["sensor"] = {{"h", sensor_.height},        {"w", sensor_.width},
                   {"fov_up", sensor_.fov_up_deg}, {"fov_down", sensor_.fov_down_deg},
                   {"min_range", sensor_.min_range}, {"max_range", sensor_.max_range}};
    std::uint64_t h = fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  WindowSpec window_for(int grid) const {
    std::int64_t Hg = H_ >> grid, Wg = W_ >> grid;
    WindowSpec ws;
    if (grid >= cfg_.levels) {  // deepest grid: one full-attention group
      ws.win = {Hg, Wg};
      ws.st = {Hg, Wg};
      ws.wrap = false;
      return ws;
    }
    std::int64_t wh = 2, ww = grid <= 1 ? 8 : 4;
    wh = std::min(wh, Hg);
    ww = std::min(ww, Wg);
    bool overlap = grid <= 1 && cfg_.use_ea && ww >= 2;
    ws.win = {wh, ww};
    ws.st = {wh, overlap ? ww / 2 : ww};
    ws.wrap = cfg_.use_ea;
    return ws;
  }

 private:
  struct CeiBlock {
    bool enabled = true;  // false -> channel-concat conditioning fallback
    std::int64_t width = 0;
    int heads = 4;
    nn::Linear text_proj, time_proj;
    nn::Norm ln;
    nn::Linear sa_qkv, sa_out;
    nn::Linear cq, ck, cv, cout;
    nn::Linear cat;  // fallback path
  };

  struct EaLevel {
    int grid = 0;
    std::int64_t in_width = 0, out_width = 0;
    nn::Linear in_proj, down;
    nn::AttnBlock attn;
  };

  struct ReaLevel {
    int level = 0, grid = 0;
    std::int64_t width = 0, out_width = 0;
    nn::Linear merge, up;
    nn::AttnBlock attn;
    CeiBlock cei;
  };

  CeiBlock make_cei(const std::string& p, std::int64_t w) const {
    CeiBlock c;
    c.enabled = cfg_.use_cei;
    c.width = w;
    c.heads = cfg_.heads;
    c.text_proj = nn::Linear(p + ".text", cfg_.text_dim, cfg_.text_tokens * w, false);
    c.time_proj = nn::Linear(p + ".time", cfg_.time_width(), w);
    c.ln = nn::Norm(p + ".ln", w);
    c.sa_qkv = nn::Linear(p + ".qkv", w, 3 * w);
    c.sa_out = nn::Linear(p + ".sa_out", w, w, true, 1e-3);
    c.cq = nn::Linear(p + ".q", w, w, false);
    c.ck = nn::Linear(p + ".k", w, w, false);
    c.cv = nn::Linear(p + ".v", w, w, false);
    c.cout = nn::Linear(p + ".out", w, w, true, 1e-3);
    c.cat = nn::Linear(p + ".cat", 2 * w, w, true, 1e-3);
    return c;
  }

  void reg_cei(ParameterStore& st, const CeiBlock& c) const {
    c.text_proj.reg(st);
    c.time_proj.reg(st);
    if (c.enabled) {
      c.ln.reg(st);
      c.sa_qkv.reg(st);
      c.sa_out.reg(st);
      c.cq.reg(st);
      c.ck.reg(st);
      c.cv.reg(st);
      c.cout.reg(st);
    } else {
      c.cat.reg(st);
    }
  }

  // d: [T, width] token sequence; returns same shape.
  Tensor apply_cei(ParamCtx& ctx, const CeiBlock& c, const Tensor& d, const std::vector<double>* text,
                   const Tensor& m_base) const {
    Tensor m = c.time_proj(ctx, m_base);  // [1, w]
    std::optional<Tensor> n;
    if (text)
      n = reshape(c.text_proj(ctx, Tensor::from_data({1, cfg_.text_dim}, *text)),
                  {cfg_.text_tokens, c.width});

    if (!c.enabled) {
      // ablation fallback: conditioning enters by channel concatenation
      Tensor cond = m;
      if (n) {
        Tensor pooled = scale(sum_all_rows(*n), 1.0 / cfg_.text_tokens);
        cond = add(cond, pooled);
      }
      std::int64_t T = d.shape[0];
      Tensor cond_rows = tile_rows(cond, T);
      return add(d, c.cat(ctx, concat({d, cond_rows}, 1)));
    }

    std::int64_t Tn = n ? cfg_.text_tokens : 0;
    std::int64_t Td = d.shape[0];
    std::vector<Tensor> parts;
    if (n) parts.push_back(*n);
    parts.push_back(d);
    parts.push_back(m);
    Tensor seq = concat(parts, 0);  // [Tn+Td+1, w]

    // global stage: one shared self-attention over text + dominant + timestep
    {
      Tensor h3 = reshape(c.ln(ctx, seq), {1, Tn + Td + 1, c.width});
      Tensor h = c.sa_qkv(ctx, h3);
      Tensor q = slice(h, 2, 0, c.width);
      Tensor k = slice(h, 2, c.width, c.width);
      Tensor v = slice(h, 2, 2 * c.width, c.width);
      Tensor sa = reshape(nn::multihead_attention(q, k, v, c.heads), {Tn + Td + 1, c.width});
      seq = add(seq, c.sa_out(ctx, sa));
    }

    // focused stage: split by original segments, then cross-attention
    Tensor qd = slice(seq, 0, Tn, Td);
    Tensor vm = slice(seq, 0, Tn + Td, 1);
    // without text, keys come from the timestep-augmented sequence itself
    Tensor kn = n ? slice(seq, 0, 0, Tn) : seq;

    Tensor vm_vec = reshape(vm, {c.width});
    Tensor q = reshape(c.cq(ctx, qd), {1, Td, c.width});
    Tensor k = reshape(c.ck(ctx, kn), {1, kn.shape[0], c.width});
    // values: key tokens gated by the timestep token, then projected
    Tensor v = reshape(c.cv(ctx, mul_bias(kn, vm_vec)), {1, kn.shape[0], c.width});
    Tensor cross = reshape(nn::multihead_attention(q, k, v, c.heads), {Td, c.width});
    cross = c.cout(ctx, cross);

    Tensor gated;
    if (cfg_.cei_matmul_timestep) {
      // full matrix product against the timestep outer product
      Tensor outer = matmul(reshape(vm, {c.width, 1}), reshape(vm, {1, c.width}));
      gated = matmul(cross, scale(outer, 1.0 / c.width));
    } else {
      gated = mul_bias(cross, vm_vec);  // broadcast (diagonal) scaling
    }
    return add(qd, gated);
  }

  Tensor apply_windowed_attn(ParamCtx& ctx, const nn::AttnBlock& attn, const Tensor& grid, int g) const {
    std::int64_t Hg = grid.shape[0], Wg = grid.shape[1], C = grid.shape[2];
    WindowSpec ws = window_for(g);
    Tensor tok = unfold(grid, ws.win, ws.st, ws.wrap);
    std::int64_t G = tok.shape[0], T = ws.win.h * ws.win.w;
    tok = attn(ctx, reshape(tok, {G, T, C}));
    return fold(reshape(tok, {G, T * C}), Hg, Wg, C, ws.win, ws.st, ws.wrap);
  }

  Tensor apply_ea(ParamCtx& ctx, const EaLevel& ea, const Tensor& x) const {
    Tensor u = cfg_.use_ea ? concat({x, fourier_[ea.grid]}, 2) : x;
    u = ea.in_proj(ctx, u);
    u = apply_windowed_attn(ctx, ea.attn, u, ea.grid);
    std::int64_t Hg = u.shape[0], Wg = u.shape[1];
    Tensor d = unfold(u, {2, 2}, {2, 2}, false);  // space-to-depth
    d = ea.down(ctx, d);
    return reshape(d, {Hg / 2, Wg / 2, ea.out_width});
  }

  Tensor apply_rea(ParamCtx& ctx, const ReaLevel& rea, const Tensor& skip, const Tensor& dec,
                   const std::vector<double>* text, const Tensor& m_base) const {
    if (skip.shape != dec.shape)
      throw ShapeError("rea: level mismatch, skip " + shape_str(skip.shape) + " vs decoder " +
                       shape_str(dec.shape));
    Tensor u = rea.merge(ctx, concat({skip, dec}, 2));
    u = apply_windowed_attn(ctx, rea.attn, u, rea.grid);
    std::int64_t Hg = u.shape[0], Wg = u.shape[1];
    Tensor d = reshape(u, {Hg * Wg, rea.width});
    d = apply_cei(ctx, rea.cei, d, text, m_base);
    // learned up-projection, then fold to the twice-finer grid
    Tensor upt = rea.up(ctx, d);  // [Hg*Wg, 4*out_width]
    return fold(upt, 2 * Hg, 2 * Wg, rea.out_width, {2, 2}, {2, 2}, false);
  }

  Tensor apply_fm(ParamCtx& ctx, const Tensor& e, FmGateMode mode) const {
    if (!cfg_.use_fm) return head_(ctx, e);
    std::int64_t C = e.shape[2];
    Subbands sb = dwt_haar(e);
    switch (mode) {
      case FmGateMode::Learned: {
        Tensor g1 = gelu(add_bias(conv2d(e, ctx.get("fm.conv1.k"), true), ctx.get("fm.conv1.b")));
        Tensor g2 = sigmoid(add_bias(conv2d(g1, ctx.get("fm.conv2.k"), true), ctx.get("fm.conv2.b")));
        Tensor gp = avg_pool2(g2);  // [H/2, W/2, 4C]
        for (int b = 0; b < 4; ++b) sb[b] = mul(sb[b], slice(gp, 2, b * C, C));
        break;
      }
      case FmGateMode::ForceUnit:
        break;  // identity on the wavelet path
      case FmGateMode::ForceLowpass:
        for (int b = 1; b < 4; ++b) sb[b] = Tensor::zeros(sb[b].shape);
        break;
    }
    return head_(ctx, idwt_haar(sb));
  }

  // [T, C] -> [1, C] column sums (helper for pooled text in the fallback path)
  static Tensor sum_all_rows(const Tensor& x) {
    std::int64_t T = x.shape[0];
    Tensor ones = Tensor::ones({1, T});
    return matmul(ones, x);
  }

  static Tensor tile_rows(const Tensor& row, std::int64_t T) {
    // row: [1, C] -> [T, C]; differentiable through matmul
    Tensor ones = Tensor::ones({T, 1});
    return matmul(ones, row);
  }

  void validate_resolution() const {
    int L = cfg_.levels;
    if (L < 2) throw DataError("denoiser: levels must be >= 2");
    std::int64_t div = 1LL << L;
    auto fail = [&](const std::string& why) {
      throw DataError("denoiser: resolution " + std::to_string(H_) + "x" + std::to_string(W_) +
                      " incompatible with config (" + why + "); valid resolutions have H and W " +
                      "divisible by " + std::to_string(div) +
                      " with every level width divisible by the window stride (4 at fine levels)");
    };
    if (H_ % div || W_ % div) fail("H and W must be divisible by 2^levels");
    for (int g = 0; g <= L; ++g) {
      std::int64_t Hg = H_ >> g, Wg = W_ >> g;
      if (Hg < 1 || Wg < 1) fail("grid collapses at level " + std::to_string(g));
      WindowSpec ws = window_for(g);
      if ((Hg - ws.win.h) % ws.st.sh != 0) fail("vertical windows do not tile level " + std::to_string(g));
      if (ws.wrap ? (Wg % ws.st.sw != 0) : ((Wg - ws.win.w) % ws.st.sw != 0))
        fail("horizontal windows do not tile level " + std::to_string(g));
    }
    for (int i = 0; i <= L; ++i)
      if (cfg_.width(i) % cfg_.heads != 0)
        throw DataError("denoiser: level width " + std::to_string(cfg_.width(i)) +
                        " not divisible by head count " + std::to_string(cfg_.heads));
    if (cfg_.time_width() % 2 != 0) throw DataError("denoiser: timestep embedding dim must be even");
  }

  DenoiserConfig cfg_;
  SensorConfig sensor_;
  std::int64_t H_ = 0, W_ = 0;
  std::vector<Tensor> fourier_;
  nn::Linear time_base_, stem_, head_;
  std::vector<EaLevel> enc_;
  CeiBlock bottleneck_;
  std::vector<ReaLevel> dec_;
};

}  // namespace eqdiff
