#include "vlabel/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vlabel {

namespace {

// Column buffer rows are (channel, tap) and columns are output positions.
template <typename T>
void im2col_1d(const T* x, std::size_t channels, std::size_t len, T* col) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = x + c * len;
    for (std::size_t k = 0; k < 3; ++k) {
      T* row = col + (c * 3 + k) * len;
      for (std::size_t p = 0; p < len; ++p) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(p + k) - 1;
        row[p] = (s >= 0 && s < static_cast<std::ptrdiff_t>(len)) ? src[s] : T(0);
      }
    }
  }
}

template <typename T>
void col2im_1d(const T* col, std::size_t channels, std::size_t len, T* dx) {
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = dx + c * len;
    for (std::size_t k = 0; k < 3; ++k) {
      const T* row = col + (c * 3 + k) * len;
      for (std::size_t p = 0; p < len; ++p) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(p + k) - 1;
        if (s >= 0 && s < static_cast<std::ptrdiff_t>(len)) dst[s] += row[p];
      }
    }
  }
}

template <typename T>
void im2col_2d(const T* x, std::size_t channels, std::size_t h, std::size_t w, T* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = x + c * hw;
    for (std::size_t ki = 0; ki < 3; ++ki) {
      for (std::size_t kj = 0; kj < 3; ++kj) {
        T* row = col + (c * 9 + ki * 3 + kj) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          T* out = row + y * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* line = src + static_cast<std::size_t>(sy) * w;
          // Column offset is kj - 1 in {-1, 0, 1}.
          if (kj == 0) {
            out[0] = T(0);
            std::copy(line, line + w - 1, out + 1);
          } else if (kj == 1) {
            std::copy(line, line + w, out);
          } else {
            std::copy(line + 1, line + w, out);
            out[w - 1] = T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_2d(const T* col, std::size_t channels, std::size_t h, std::size_t w, T* dx) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = dx + c * hw;
    for (std::size_t ki = 0; ki < 3; ++ki) {
      for (std::size_t kj = 0; kj < 3; ++kj) {
        const T* row = col + (c * 9 + ki * 3 + kj) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* line = dst + static_cast<std::size_t>(sy) * w;
          const T* in = row + y * w;
          if (kj == 0) {
            for (std::size_t x = 1; x < w; ++x) line[x - 1] += in[x];
          } else if (kj == 1) {
            for (std::size_t x = 0; x < w; ++x) line[x] += in[x];
          } else {
            for (std::size_t x = 0; x + 1 < w; ++x) line[x + 1] += in[x];
          }
        }
      }
    }
  }
}

// Direct 3x3 kernels for wide planes with few channels, where im2col traffic
// dominates. Inner loops run along image rows.
template <typename T>
void direct_forward_2d(const T* x, const T* wt, const T* bias, std::size_t cin, std::size_t cout, std::size_t h,
                       std::size_t w, T* out) {
  const std::size_t hw = h * w;
  for (std::size_t o = 0; o < cout; ++o) {
    T* dst = out + o * hw;
    std::fill(dst, dst + hw, bias[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const T* src = x + c * hw;
      const T* k = wt + (o * cin + c) * 9;
      for (std::size_t y = 0; y < h; ++y) {
        T* d = dst + y * w;
        for (std::size_t ki = 0; ki < 3; ++ki) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* line = src + static_cast<std::size_t>(sy) * w;
          const T k0 = k[ki * 3], k1 = k[ki * 3 + 1], k2 = k[ki * 3 + 2];
          d[0] += k1 * line[0] + k2 * line[1];
          for (std::size_t xx = 1; xx + 1 < w; ++xx) d[xx] += k0 * line[xx - 1] + k1 * line[xx] + k2 * line[xx + 1];
          d[w - 1] += k0 * line[w - 2] + k1 * line[w - 1];
        }
      }
    }
  }
}

template <typename T>
void direct_weight_grad_2d(const T* x, const T* g, std::size_t cin, std::size_t cout, std::size_t h, std::size_t w,
                           T* dw) {
  const std::size_t hw = h * w;
  for (std::size_t o = 0; o < cout; ++o) {
    const T* go = g + o * hw;
    for (std::size_t c = 0; c < cin; ++c) {
      const T* src = x + c * hw;
      T acc[9] = {};
      for (std::size_t y = 0; y < h; ++y) {
        const T* gl = go + y * w;
        for (std::size_t ki = 0; ki < 3; ++ki) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* line = src + static_cast<std::size_t>(sy) * w;
          T a0 = 0, a1 = 0, a2 = 0;
          for (std::size_t xx = 1; xx + 1 < w; ++xx) {
            a0 += gl[xx] * line[xx - 1];
            a1 += gl[xx] * line[xx];
            a2 += gl[xx] * line[xx + 1];
          }
          a1 += gl[0] * line[0] + gl[w - 1] * line[w - 1];
          a2 += gl[0] * line[1];
          a0 += gl[w - 1] * line[w - 2];
          acc[ki * 3] += a0;
          acc[ki * 3 + 1] += a1;
          acc[ki * 3 + 2] += a2;
        }
      }
      T* d = dw + (o * cin + c) * 9;
      for (int t = 0; t < 9; ++t) d[t] += acc[t];
    }
  }
}

template <typename T>
void direct_input_grad_2d(const T* g, const T* wt, std::size_t cin, std::size_t cout, std::size_t h, std::size_t w,
                          T* dx) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c) {
    T* dst = dx + c * hw;
    for (std::size_t o = 0; o < cout; ++o) {
      const T* go = g + o * hw;
      const T* k = wt + (o * cin + c) * 9;
      // dx[sy, sx] += k[ki, kj] * g[y, x] with sy = y + ki - 1, sx = x + kj - 1.
      for (std::size_t sy = 0; sy < h; ++sy) {
        T* d = dst + sy * w;
        for (std::size_t ki = 0; ki < 3; ++ki) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(sy) + 1 - static_cast<std::ptrdiff_t>(ki);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* gl = go + static_cast<std::size_t>(y) * w;
          const T k0 = k[ki * 3], k1 = k[ki * 3 + 1], k2 = k[ki * 3 + 2];
          d[0] += k1 * gl[0] + k0 * gl[1];
          for (std::size_t xx = 1; xx + 1 < w; ++xx) d[xx] += k2 * gl[xx - 1] + k1 * gl[xx] + k0 * gl[xx + 1];
          d[w - 1] += k2 * gl[w - 2] + k1 * gl[w - 1];
        }
      }
    }
  }
}

// Wide planes with few filters favour the direct kernels.
bool use_direct_2d(std::size_t cout, std::size_t h, std::size_t w) { return w >= 2 && h * w >= 1024 && cout <= 32; }

template <typename T>
Var<T> conv_impl(Var<T> x, Var<T> weight, Var<T> bias, std::size_t spatial_rank) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  const char* name = spatial_rank == 1 ? "conv1d" : "conv2d";
  if (xs.size() != 2 + spatial_rank || ws.size() != 2 + spatial_rank) {
    throw DimensionError(std::string(name) + ": expected batched input, got input " + shape_str(xs) +
                         " and weight " + shape_str(ws));
  }
  const std::size_t n = xs[0], cin = xs[1], cout = ws[0];
  if (ws[1] != cin) {
    throw DimensionError(std::string(name) + ": input has " + std::to_string(cin) + " channels but weight " +
                         shape_str(ws) + " expects " + std::to_string(ws[1]));
  }
  for (std::size_t a = 2; a < ws.size(); ++a) {
    if (ws[a] != 3) throw DimensionError(std::string(name) + ": kernel must be 3, got " + shape_str(ws));
  }
  if (bias.shape() != Shape{cout}) {
    throw DimensionError(std::string(name) + ": bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(cout) + " filters");
  }
  const std::size_t h = spatial_rank == 1 ? 1 : xs[2];
  const std::size_t w = xs.back();
  const std::size_t positions = h * w;
  const std::size_t taps = spatial_rank == 1 ? 3 : 9;
  const std::size_t kdim = cin * taps;

  auto to_col = [=](const T* src, T* col) {
    if (spatial_rank == 1)
      im2col_1d(src, cin, w, col);
    else
      im2col_2d(src, cin, h, w, col);
  };

  Shape out_shape = xs;
  out_shape[1] = cout;
  Tensor<T> out(out_shape);
  const bool direct = spatial_rank == 2 && use_direct_2d(cout, h, w);
  if (direct) {
    for (std::size_t s = 0; s < n; ++s) {
      direct_forward_2d(x.value().data().data() + s * cin * positions, weight.value().data().data(),
                        bias.value().data().data(), cin, cout, h, w, out.data().data() + s * cout * positions);
    }
  }
  std::vector<T> col(direct ? 0 : kdim * positions);
  const T* wv = weight.value().data().data();
  const T* bv = bias.value().data().data();
  for (std::size_t s = 0; s < n && !direct; ++s) {
    to_col(x.value().data().data() + s * cin * positions, col.data());
    T* dst = out.data().data() + s * cout * positions;
    for (std::size_t o = 0; o < cout; ++o) std::fill(dst + o * positions, dst + (o + 1) * positions, bv[o]);
    gemm<T>(false, false, cout, positions, kdim, T(1), wv, kdim, col.data(), positions, T(1), dst, positions);
  }

  const auto ix = x.id, iw = weight.id;
  return x.tape->record(
      std::move(out), {x, weight, bias},
      [=](const Tape<T>& tape, const Tensor<T>& g, std::vector<Tensor<T>*>& grads) {
        const T* xin = tape.value(ix).data().data();
        const T* wt = tape.value(iw).data().data();
        if (direct) {
          for (std::size_t s = 0; s < n; ++s) {
            const T* gs = g.data().data() + s * cout * positions;
            if (grads[1]) direct_weight_grad_2d(xin + s * cin * positions, gs, cin, cout, h, w, grads[1]->data().data());
            if (grads[2]) {
              T* db = grads[2]->data().data();
              for (std::size_t o = 0; o < cout; ++o) {
                T acc = 0;
                for (std::size_t p = 0; p < positions; ++p) acc += gs[o * positions + p];
                db[o] += acc;
              }
            }
            if (grads[0]) direct_input_grad_2d(gs, wt, cin, cout, h, w, grads[0]->data().data() + s * cin * positions);
          }
          return;
        }
        std::vector<T> col(kdim * positions);
        for (std::size_t s = 0; s < n; ++s) {
          const T* gs = g.data().data() + s * cout * positions;
          if (grads[1]) {
            to_col(xin + s * cin * positions, col.data());
            gemm<T>(false, true, cout, kdim, positions, T(1), gs, positions, col.data(), positions, T(1),
                    grads[1]->data().data(), kdim);
          }
          if (grads[2]) {
            T* db = grads[2]->data().data();
            for (std::size_t o = 0; o < cout; ++o) {
              T acc = 0;
              for (std::size_t p = 0; p < positions; ++p) acc += gs[o * positions + p];
              db[o] += acc;
            }
          }
          if (grads[0]) {
            gemm<T>(true, false, kdim, positions, cout, T(1), wt, kdim, gs, positions, T(0), col.data(),
                    positions);
            T* dx = grads[0]->data().data() + s * cin * positions;
            if (spatial_rank == 1)
              col2im_1d(col.data(), cin, w, dx);
            else
              col2im_2d(col.data(), cin, h, w, dx);
          }
        }
      });
}

}  // namespace

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> weight, Var<T> bias) {
  return conv_impl(x, weight, bias, 1);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias) {
  return conv_impl(x, weight, bias, 2);
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T> stats, Mode mode,
                  const BatchNormConfig& cfg) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("batch_norm: expected [N, C, ...], got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1];
  const std::size_t inner = x.value().size() / (n * c);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("batch_norm: gamma/beta must be [" + std::to_string(c) + "]");
  }
  if (!stats.running_mean || !stats.running_var || stats.running_mean->shape() != Shape{c} ||
      stats.running_var->shape() != Shape{c}) {
    throw DimensionError("batch_norm: running statistics must be [" + std::to_string(c) + "]");
  }
  if (!(cfg.epsilon > 0)) throw std::invalid_argument("batch_norm: epsilon must be positive");
  const std::size_t count = n * inner;
  const T eps = static_cast<T>(cfg.epsilon);
  const T* xv = x.value().data().data();
  const T* gv = gamma.value().data().data();
  const T* bv = beta.value().data().data();

  // Per-channel mean and inverse std in the mode's statistics.
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0, s2 = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s2 += (p[i] - mu) * (p[i] - mu);
      }
      const double var = s2 / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + cfg.epsilon));
      auto& rm = (*stats.running_mean)[ch];
      auto& rv = (*stats.running_var)[ch];
      rm = static_cast<T>(cfg.momentum * rm + (1.0 - cfg.momentum) * mu);
      rv = static_cast<T>(cfg.momentum * rv + (1.0 - cfg.momentum) * var);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = (*stats.running_mean)[ch];
      inv_std[ch] = T(1) / std::sqrt(std::max((*stats.running_var)[ch], T(0)) + eps);
    }
  }

  Tensor<T> xhat(xs);
  Tensor<T> out(xs);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xv[base + i] - mean[ch]) * inv_std[ch];
        xhat[base + i] = h;
        out[base + i] = gv[ch] * h + bv[ch];
      }
    }
  }

  const auto ig = gamma.id;
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tape<T>& tape, const Tensor<T>& g,
                                                                 std::vector<Tensor<T>*>& grads) {
        const T* gam = tape.value(ig).data().data();
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g[ch] += g[base + i];
              sum_gx[ch] += g[base + i] * xhat[base + i];
            }
          }
        }
        if (grads[1])
          for (std::size_t ch = 0; ch < c; ++ch) (*grads[1])[ch] += static_cast<T>(sum_gx[ch]);
        if (grads[2])
          for (std::size_t ch = 0; ch < c; ++ch) (*grads[2])[ch] += static_cast<T>(sum_g[ch]);
        if (!grads[0]) return;
        auto& dx = *grads[0];
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * inner;
            const T k = gam[ch] * inv_std[ch];
            if (mode == Mode::infer) {
              for (std::size_t i = 0; i < inner; ++i) dx[base + i] += k * g[base + i];
              continue;
            }
            const T mg = static_cast<T>(sum_g[ch] / static_cast<double>(count));
            const T mgx = static_cast<T>(sum_gx[ch] / static_cast<double>(count));
            for (std::size_t i = 0; i < inner; ++i) {
              dx[base + i] += k * (g[base + i] - mg - xhat[base + i] * mgx);
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  const auto ix = x.id;
  return x.tape->record(std::move(out), {x},
                        [ix](const Tape<T>& tape, const Tensor<T>& g, std::vector<Tensor<T>*>& grads) {
                          const auto& xv = tape.value(ix);
                          auto& dx = *grads[0];
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (xv[i] > T(0)) dx[i] += g[i];
                        });
}

template <typename T>
Var<T> max_pool(Var<T> x) {
  const auto& xs = x.shape();
  if (xs.size() != 3 && xs.size() != 4) {
    throw DimensionError("max_pool: expected [N, C, L] or [N, C, H, W], got " + shape_str(xs));
  }
  for (std::size_t a = 2; a < xs.size(); ++a) {
    if (xs[a] < 2) throw DimensionError("max_pool: spatial length below 2 in " + shape_str(xs));
  }
  const bool two_d = xs.size() == 4;
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t h = two_d ? xs[2] : 1, w = xs.back();
  const std::size_t oh = two_d ? h / 2 : 1, ow = w / 2;
  Shape out_shape = xs;
  if (two_d) out_shape[2] = oh;
  out_shape.back() = ow;
  Tensor<T> out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  const T* xv = x.value().data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = 0;
        T best_v = -std::numeric_limits<T>::infinity();
        // Row-major scan keeps the first maximum on ties.
        for (std::size_t di = 0; di < (two_d ? 2u : 1u); ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t off = (two_d ? (2 * i + di) * w : 0) + 2 * j + dj;
            if (src[off] > best_v) {
              best_v = src[off];
              best = off;
            }
          }
        }
        const std::size_t o = p * oh * ow + i * ow + j;
        out[o] = best_v;
        argmax[o] = p * h * w + best;
      }
    }
  }
  return x.tape->record(std::move(out), {x},
                        [argmax = std::move(argmax)](const Tape<T>&, const Tensor<T>& g,
                                                     std::vector<Tensor<T>*>& grads) {
                          auto& dx = *grads[0];
                          for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
                        });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xs = x.shape();
  if (xs.size() < 3) throw DimensionError("global_avg_pool: expected [N, C, spatial...], got " + shape_str(xs));
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t inner = x.value().size() / planes;
  Tensor<T> out({xs[0], xs[1]});
  const T* xv = x.value().data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0;
    for (std::size_t i = 0; i < inner; ++i) s += xv[p * inner + i];
    out[p] = static_cast<T>(s / static_cast<double>(inner));
  }
  return x.tape->record(std::move(out), {x},
                        [planes, inner](const Tape<T>&, const Tensor<T>& g, std::vector<Tensor<T>*>& grads) {
                          auto& dx = *grads[0];
                          const T k = T(1) / static_cast<T>(inner);
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t i = 0; i < inner; ++i) dx[p * inner + i] += g[p] * k;
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data().data() + r * k;
    T* p = out.data().data() + r * k;
    const T m = *std::max_element(z, z + k);
    T total = 0;
    for (std::size_t i = 0; i < k; ++i) {
      p[i] = std::exp(z[i] - m);
      total += p[i];
    }
    for (std::size_t i = 0; i < k; ++i) p[i] /= total;
  }
  return out;
}

template <typename T>
Var<T> weighted_cross_entropy(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& weights) {
  const auto& zs = logits.shape();
  if (zs.size() != 2 || targets.shape() != zs) {
    throw DimensionError("weighted_cross_entropy: logits " + shape_str(zs) + " vs targets " +
                         shape_str(targets.shape()));
  }
  const std::size_t n = zs[0], k = zs[1];
  if (weights.shape() != Shape{k}) throw DimensionError("weighted_cross_entropy: weights must be [K]");
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t ones = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const T t = targets[r * k + i];
      if (t == T(1))
        ++ones;
      else if (t != T(0))
        throw ContractViolation("weighted_cross_entropy: target row " + std::to_string(r) + " is not one-hot");
    }
    if (ones != 1) throw ContractViolation("weighted_cross_entropy: target row " + std::to_string(r) + " is not one-hot");
  }
  for (auto w : weights.data()) {
    if (!(w > T(0))) throw std::invalid_argument("weighted_cross_entropy: class weights must be positive");
  }
  const Tensor<T> probs = softmax(logits.value());
  double loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.value().data().data() + r * k;
    const T m = *std::max_element(z, z + k);
    double lse = 0;
    for (std::size_t i = 0; i < k; ++i) lse += std::exp(static_cast<double>(z[i] - m));
    lse = std::log(lse) + m;
    for (std::size_t i = 0; i < k; ++i) {
      if (targets[r * k + i] != T(0)) loss -= weights[i] * (z[i] - lse);
    }
  }
  loss /= static_cast<double>(n);
  return logits.tape->record(
      Tensor<T>::scalar(static_cast<T>(loss)), {logits},
      [=](const Tape<T>&, const Tensor<T>& g, std::vector<Tensor<T>*>& grads) {
        auto& dz = *grads[0];
        const T scale = g[0] / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r) {
          // d/dz of -w_t log p_t is w_t (p - onehot_t).
          T wt = 0;
          for (std::size_t i = 0; i < k; ++i) wt += weights[i] * targets[r * k + i];
          for (std::size_t i = 0; i < k; ++i)
            dz[r * k + i] += scale * wt * (probs[r * k + i] - targets[r * k + i]);
        }
      });
}

#define VLABEL_INSTANTIATE(T)                                                                         \
  template Var<T> conv1d(Var<T>, Var<T>, Var<T>);                                                     \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>);                                                     \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>, Mode, const BatchNormConfig&); \
  template Var<T> relu(Var<T>);                                                                       \
  template Var<T> max_pool(Var<T>);                                                                   \
  template Var<T> global_avg_pool(Var<T>);                                                            \
  template Tensor<T> softmax(const Tensor<T>&);                                                       \
  template Var<T> weighted_cross_entropy(Var<T>, const Tensor<T>&, const Tensor<T>&);

VLABEL_INSTANTIATE(float)
VLABEL_INSTANTIATE(double)

}  // namespace vlabel
