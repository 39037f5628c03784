#pragma once

// Structured kernels on H x W x C grids: overlapping unfold/fold with
// azimuth wrap, single-level orthonormal 2-D Haar wavelet, same-padded
// convolution, 2x2 average pooling. All differentiable through the tape.

#include "eqdiff/tensor.hpp"

#include <array>
#include <memory>

namespace eqdiff {

struct Window {
  std::int64_t h = 1, w = 1;
};
struct Stride {
  std::int64_t sh = 1, sw = 1;
};

namespace detail {

struct UnfoldPlan {
  std::int64_t H, W, C, h, w, vh, hw;            // vh/hw: vertical/horizontal position counts
  std::shared_ptr<std::vector<std::int64_t>> map;  // token element -> pixel element
  std::shared_ptr<std::vector<double>> inv_count;  // per pixel element, 1/contributions
};

inline UnfoldPlan unfold_plan(std::int64_t H, std::int64_t W, std::int64_t C, Window win, Stride st,
                              bool wrap_azimuth) {
  if (win.h < 1 || win.w < 1 || st.sh < 1 || st.sw < 1) throw ShapeError("unfold: window/stride must be >= 1");
  if (st.sh > win.h || st.sw > win.w) throw ShapeError("unfold: stride must not exceed window");
  if (win.h > H) throw ShapeError("unfold: window height " + std::to_string(win.h) +
                                  " exceeds image height " + std::to_string(H));
  if (!wrap_azimuth && win.w > W)
    throw ShapeError("unfold: window width " + std::to_string(win.w) + " exceeds image width " +
                     std::to_string(W) + " and azimuth wrap is off");
  if ((H - win.h) % st.sh != 0)
    throw ShapeError("unfold: vertical stride does not tile the image height");
  std::int64_t vh = (H - win.h) / st.sh + 1;
  std::int64_t hw;
  if (wrap_azimuth) {
    if (W % st.sw != 0) throw ShapeError("unfold: wrap requires the horizontal stride to divide the width");
    hw = W / st.sw;
  } else {
    if ((W - win.w) % st.sw != 0)
      throw ShapeError("unfold: horizontal stride does not tile the image width");
    hw = (W - win.w) / st.sw + 1;
  }
  UnfoldPlan p{H, W, C, win.h, win.w, vh, hw,
               std::make_shared<std::vector<std::int64_t>>(vh * hw * win.h * win.w * C),
               std::make_shared<std::vector<double>>(H * W * C, 0.0)};
  std::int64_t o = 0;
  for (std::int64_t pv = 0; pv < vh; ++pv)
    for (std::int64_t ph = 0; ph < hw; ++ph)
      for (std::int64_t dy = 0; dy < win.h; ++dy)
        for (std::int64_t dx = 0; dx < win.w; ++dx) {
          std::int64_t row = pv * st.sh + dy;
          std::int64_t col = ph * st.sw + dx;
          if (wrap_azimuth) col %= W;
          std::int64_t px = (row * W + col) * C;
          for (std::int64_t c = 0; c < C; ++c) {
            (*p.map)[o++] = px + c;
            (*p.inv_count)[px + c] += 1.0;
          }
        }
  for (auto& v : *p.inv_count) v = v > 0 ? 1.0 / v : 0.0;
  return p;
}

}  // namespace detail

// x: [H, W, C] -> tokens [N, h*w*C], N = vh*hw, row-major over positions.
inline Tensor unfold(const Tensor& x, Window win, Stride st, bool wrap_azimuth) {
  if (x.ndim() != 3) throw ShapeError("unfold: expected H x W x C input, got " + shape_str(x.shape));
  auto p = detail::unfold_plan(x.shape[0], x.shape[1], x.shape[2], win, st, wrap_azimuth);
  std::int64_t n = static_cast<std::int64_t>(p.map->size());
  std::vector<double> v(n);
  for (std::int64_t i = 0; i < n; ++i) v[i] = (*x.data)[(*p.map)[i]];
  int xn = x.node;
  auto map = p.map;
  return detail::make_result({p.vh * p.hw, p.h * p.w * p.C}, std::move(v), "unfold", {&x},
                             [xn, map](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[(*map)[i]] += g[i];
                             });
}

// Exact left inverse of unfold: overlapping contributions are averaged by
// per-pixel contribution count.
inline Tensor fold(const Tensor& tokens, std::int64_t H, std::int64_t W, std::int64_t C, Window win,
                   Stride st, bool wrap_azimuth) {
  auto p = detail::unfold_plan(H, W, C, win, st, wrap_azimuth);
  if (tokens.ndim() != 2 || tokens.shape[0] != p.vh * p.hw || tokens.shape[1] != p.h * p.w * C)
    throw ShapeError("fold: token shape " + shape_str(tokens.shape) + " inconsistent with target, expected [" +
                     std::to_string(p.vh * p.hw) + "x" + std::to_string(p.h * p.w * C) + "]");
  std::vector<double> v(H * W * C, 0.0);
  for (std::size_t i = 0; i < p.map->size(); ++i) v[(*p.map)[i]] += (*tokens.data)[i];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= (*p.inv_count)[i];
  int tn = tokens.node;
  auto map = p.map;
  auto inv = p.inv_count;
  return detail::make_result({H, W, C}, std::move(v), "fold", {&tokens},
                             [tn, map, inv](Tape& tp, const std::vector<double>& g) {
                               if (tn < 0) return;
                               auto& gt = tp.grad(tn);
                               for (std::size_t i = 0; i < gt.size(); ++i) {
                                 std::int64_t px = (*map)[i];
                                 gt[i] += g[px] * (*inv)[px];
                               }
                             });
}

// ---------------------------------------------------------------------------
// single-level orthonormal 2-D Haar transform

using Subbands = std::array<Tensor, 4>;  // LL, LH, HL, HH

inline Subbands dwt_haar(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("dwt_haar: expected H x W x C input");
  std::int64_t H = x.shape[0], W = x.shape[1], C = x.shape[2];
  if (H % 2 || W % 2)
    throw ShapeError("dwt_haar: extents must be even, got " + shape_str(x.shape) + " (caller pads)");
  std::int64_t h2 = H / 2, w2 = W / 2;
  // Rows of the orthonormal block matrix (each scaled by 1/2):
  //   LL: +a +b +c +d   LH: +a -b +c -d   HL: +a +b -c -d   HH: +a -b -c +d
  static const double sgn[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}};
  Subbands out;
  int xn = x.node;
  for (int b = 0; b < 4; ++b) {
    std::vector<double> v(h2 * w2 * C);
    for (std::int64_t i = 0; i < h2; ++i)
      for (std::int64_t j = 0; j < w2; ++j)
        for (std::int64_t c = 0; c < C; ++c) {
          double a = (*x.data)[((2 * i) * W + 2 * j) * C + c];
          double bb = (*x.data)[((2 * i) * W + 2 * j + 1) * C + c];
          double cc = (*x.data)[((2 * i + 1) * W + 2 * j) * C + c];
          double d = (*x.data)[((2 * i + 1) * W + 2 * j + 1) * C + c];
          v[(i * w2 + j) * C + c] =
              0.5 * (sgn[b][0] * a + sgn[b][1] * bb + sgn[b][2] * cc + sgn[b][3] * d);
        }
    const double* s = sgn[b];
    out[b] = detail::make_result(
        {h2, w2, C}, std::move(v), "dwt_haar", {&x},
        [xn, s, h2, w2, W, C](Tape& tp, const std::vector<double>& g) {
          if (xn < 0) return;
          auto& gx = tp.grad(xn);
          for (std::int64_t i = 0; i < h2; ++i)
            for (std::int64_t j = 0; j < w2; ++j)
              for (std::int64_t c = 0; c < C; ++c) {
                double gv = 0.5 * g[(i * w2 + j) * C + c];
                gx[((2 * i) * W + 2 * j) * C + c] += s[0] * gv;
                gx[((2 * i) * W + 2 * j + 1) * C + c] += s[1] * gv;
                gx[((2 * i + 1) * W + 2 * j) * C + c] += s[2] * gv;
                gx[((2 * i + 1) * W + 2 * j + 1) * C + c] += s[3] * gv;
              }
        });
  }
  return out;
}

inline Tensor idwt_haar(const Subbands& sb) {
  for (int b = 1; b < 4; ++b)
    if (sb[b].shape != sb[0].shape)
      throw ShapeError("idwt_haar: subband shape mismatch " + shape_str(sb[b].shape) + " vs " +
                       shape_str(sb[0].shape));
  if (sb[0].ndim() != 3) throw ShapeError("idwt_haar: expected H/2 x W/2 x C subbands");
  std::int64_t h2 = sb[0].shape[0], w2 = sb[0].shape[1], C = sb[0].shape[2];
  std::int64_t H = 2 * h2, W = 2 * w2;
  static const double sgn[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}};
  std::vector<double> v(H * W * C, 0.0);
  for (int b = 0; b < 4; ++b)
    for (std::int64_t i = 0; i < h2; ++i)
      for (std::int64_t j = 0; j < w2; ++j)
        for (std::int64_t c = 0; c < C; ++c) {
          double s = 0.5 * (*sb[b].data)[(i * w2 + j) * C + c];
          v[((2 * i) * W + 2 * j) * C + c] += sgn[b][0] * s;
          v[((2 * i) * W + 2 * j + 1) * C + c] += sgn[b][1] * s;
          v[((2 * i + 1) * W + 2 * j) * C + c] += sgn[b][2] * s;
          v[((2 * i + 1) * W + 2 * j + 1) * C + c] += sgn[b][3] * s;
        }
  std::array<int, 4> nodes{sb[0].node, sb[1].node, sb[2].node, sb[3].node};
  return detail::make_result(
      {H, W, C}, std::move(v), "idwt_haar", {&sb[0], &sb[1], &sb[2], &sb[3]},
      [nodes, h2, w2, W, C](Tape& tp, const std::vector<double>& g) {
        for (int b = 0; b < 4; ++b) {
          if (nodes[b] < 0) continue;
          auto& gb = tp.grad(nodes[b]);
          for (std::int64_t i = 0; i < h2; ++i)
            for (std::int64_t j = 0; j < w2; ++j)
              for (std::int64_t c = 0; c < C; ++c) {
                double acc = sgn[b][0] * g[((2 * i) * W + 2 * j) * C + c] +
                             sgn[b][1] * g[((2 * i) * W + 2 * j + 1) * C + c] +
                             sgn[b][2] * g[((2 * i + 1) * W + 2 * j) * C + c] +
                             sgn[b][3] * g[((2 * i + 1) * W + 2 * j + 1) * C + c];
                gb[(i * w2 + j) * C + c] += 0.5 * acc;
              }
        }
      });
}

// ---------------------------------------------------------------------------
// convolution

// x: [H, W, Cin], kernel: [kh, kw, Cin, Cout], zero-padded to same size.
// Same-size convolution: rows use zero padding, columns optionally wrap
// (the azimuth axis is circular).
inline Tensor conv2d(const Tensor& x, const Tensor& k, bool wrap_azimuth = false) {
  if (x.ndim() != 3 || k.ndim() != 4) throw ShapeError("conv2d: expected HxWxCin and khxkwxCinxCout");
  std::int64_t H = x.shape[0], W = x.shape[1], Cin = x.shape[2];
  std::int64_t kh = k.shape[0], kw = k.shape[1], Cout = k.shape[3];
  if (k.shape[2] != Cin) throw ShapeError("conv2d: kernel input channels mismatch");
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd for same padding, got " + shape_str(k.shape));
  std::int64_t ph = kh / 2, pw = kw / 2;
  std::vector<double> v(H * W * Cout, 0.0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t xx = 0; xx < W; ++xx)
      for (std::int64_t dy = 0; dy < kh; ++dy) {
        std::int64_t sy = y + dy - ph;
        if (sy < 0 || sy >= H) continue;
        for (std::int64_t dx = 0; dx < kw; ++dx) {
          std::int64_t sx = xx + dx - pw;
          if (wrap_azimuth) sx = (sx + W) % W;
          else if (sx < 0 || sx >= W) continue;
          const double* in = x.data->data() + (sy * W + sx) * Cin;
          const double* kk = k.data->data() + (dy * kw + dx) * Cin * Cout;
          double* out = v.data() + (y * W + xx) * Cout;
          for (std::int64_t ci = 0; ci < Cin; ++ci)
            for (std::int64_t co = 0; co < Cout; ++co) out[co] += in[ci] * kk[ci * Cout + co];
        }
      }
  int xn = x.node, kn = k.node;
  auto xd = x.data, kd = k.data;
  return detail::make_result(
      {H, W, Cout}, std::move(v), "conv2d", {&x, &k},
      [xn, kn, xd, kd, H, W, Cin, Cout, kh, kw, ph, pw, wrap_azimuth](Tape& tp,
                                                                     const std::vector<double>& g) {
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t xx = 0; xx < W; ++xx)
            for (std::int64_t dy = 0; dy < kh; ++dy) {
              std::int64_t sy = y + dy - ph;
              if (sy < 0 || sy >= H) continue;
              for (std::int64_t dx = 0; dx < kw; ++dx) {
                std::int64_t sx = xx + dx - pw;
                if (wrap_azimuth) sx = (sx + W) % W;
                else if (sx < 0 || sx >= W) continue;
                const double* go = g.data() + (y * W + xx) * Cout;
                const double* kk = kd->data() + (dy * kw + dx) * Cin * Cout;
                const double* in = xd->data() + (sy * W + sx) * Cin;
                if (xn >= 0) {
                  double* gx = tp.grad(xn).data() + (sy * W + sx) * Cin;
                  for (std::int64_t ci = 0; ci < Cin; ++ci)
                    for (std::int64_t co = 0; co < Cout; ++co) gx[ci] += go[co] * kk[ci * Cout + co];
                }
                if (kn >= 0) {
                  double* gk = tp.grad(kn).data() + (dy * kw + dx) * Cin * Cout;
                  for (std::int64_t ci = 0; ci < Cin; ++ci)
                    for (std::int64_t co = 0; co < Cout; ++co) gk[ci * Cout + co] += go[co] * in[ci];
                }
              }
            }
      });
}

// x: [H, W, C] -> [H/2, W/2, C], mean of each 2x2 block.
inline Tensor avg_pool2(const Tensor& x) {
  if (x.ndim() != 3 || x.shape[0] % 2 || x.shape[1] % 2)
    throw ShapeError("avg_pool2: expected even H x W x C, got " + shape_str(x.shape));
  std::int64_t H = x.shape[0], W = x.shape[1], C = x.shape[2], h2 = H / 2, w2 = W / 2;
  std::vector<double> v(h2 * w2 * C);
  for (std::int64_t i = 0; i < h2; ++i)
    for (std::int64_t j = 0; j < w2; ++j)
      for (std::int64_t c = 0; c < C; ++c)
        v[(i * w2 + j) * C + c] = 0.25 * ((*x.data)[((2 * i) * W + 2 * j) * C + c] +
                                          (*x.data)[((2 * i) * W + 2 * j + 1) * C + c] +
                                          (*x.data)[((2 * i + 1) * W + 2 * j) * C + c] +
                                          (*x.data)[((2 * i + 1) * W + 2 * j + 1) * C + c]);
  int xn = x.node;
  return detail::make_result({h2, w2, C}, std::move(v), "avg_pool2", {&x},
                             [xn, h2, w2, W, C](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::int64_t i = 0; i < h2; ++i)
                                 for (std::int64_t j = 0; j < w2; ++j)
                                   for (std::int64_t c = 0; c < C; ++c) {
                                     double gv = 0.25 * g[(i * w2 + j) * C + c];
                                     gx[((2 * i) * W + 2 * j) * C + c] += gv;
                                     gx[((2 * i) * W + 2 * j + 1) * C + c] += gv;
                                     gx[((2 * i + 1) * W + 2 * j) * C + c] += gv;
                                     gx[((2 * i + 1) * W + 2 * j + 1) * C + c] += gv;
                                   }
                             });
}

}  // namespace eqdiff
