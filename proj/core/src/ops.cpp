#include "winnow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "blas_shim.hpp"

namespace winnow::ops {

namespace {

struct ConvDims {
  int64_t n, c, h, w;
  int64_t f, k;
  int64_t hout, wout;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride,
                   int pad) {
  if (input.rank() != 4) {
    throw ShapeError("conv2d: input must be [N,C,H,W], got " +
                     shape_str(input.shape()));
  }
  if (weight.rank() != 4) {
    throw ShapeError("conv2d: weight must be [F,C,k,k], got " +
                     shape_str(weight.shape()));
  }
  if (weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: kernel must be square, got " +
                     shape_str(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.dim(1)) +
                     " != weight channels " + std::to_string(weight.dim(1)));
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");

  ConvDims d;
  d.n = input.dim(0);
  d.c = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.f = weight.dim(0);
  d.k = weight.dim(2);
  d.stride = stride;
  d.pad = pad;
  // Floor semantics, as in standard frameworks; see the header note.
  d.hout = (d.h + 2 * pad - d.k) / stride + 1;
  d.wout = (d.w + 2 * pad - d.k) / stride + 1;
  if (d.h + 2 * pad < d.k || d.w + 2 * pad < d.k || d.hout < 1 || d.wout < 1) {
    throw ConfigError("conv2d: output extent below 1 for input " +
                      shape_str(input.shape()) + ", kernel " +
                      std::to_string(d.k) + ", stride " +
                      std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  return d;
}

// Unpacks one image [C,H,W] into columns [C*k*k, Hout*Wout].
void im2col(const float* x, const ConvDims& d, float* col) {
  const int64_t hw_out = d.hout * d.wout;
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t ki = 0; ki < d.k; ++ki) {
      for (int64_t kj = 0; kj < d.k; ++kj) {
        float* dst_row = col + ((c * d.k + ki) * d.k + kj) * hw_out;
        for (int64_t oh = 0; oh < d.hout; ++oh) {
          const int64_t ih = oh * d.stride + ki - d.pad;
          float* dst = dst_row + oh * d.wout;
          if (ih < 0 || ih >= d.h) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(d.wout));
            continue;
          }
          const float* src_row = x + (c * d.h + ih) * d.w;
          if (d.stride == 1) {
            // iw = ow + kj - pad; contiguous valid span, zero fill outside.
            const int64_t ow_lo = std::max<int64_t>(0, d.pad - kj);
            const int64_t ow_hi =
                std::min<int64_t>(d.wout, d.w + d.pad - kj);  // exclusive
            for (int64_t ow = 0; ow < std::min<int64_t>(ow_lo, d.wout); ++ow)
              dst[ow] = 0.0f;
            if (ow_hi > ow_lo) {
              std::memcpy(dst + ow_lo, src_row + (ow_lo + kj - d.pad),
                          sizeof(float) * static_cast<size_t>(ow_hi - ow_lo));
            }
            for (int64_t ow = std::max<int64_t>(ow_hi, 0); ow < d.wout; ++ow)
              dst[ow] = 0.0f;
          } else {
            for (int64_t ow = 0; ow < d.wout; ++ow) {
              const int64_t iw = ow * d.stride + kj - d.pad;
              dst[ow] = (iw >= 0 && iw < d.w) ? src_row[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Forward GEMMs accumulate in double and round once to float. Single-pass
// rounding keeps deep stacks free of single-precision reassociation drift,
// and dropping an exactly-zero channel (weight-row pruning, compaction)
// leaves downstream outputs equal to within one double-rounding boundary.
void gemm_f64_rounded(CBLAS_TRANSPOSE trans_a, CBLAS_TRANSPOSE trans_b, int m,
                      int n, int k, const float* a, int lda, const float* b,
                      int ldb, float* out, int ldc) {
  const size_t a_count = static_cast<size_t>(trans_a == CblasNoTrans ? m : k) *
                         static_cast<size_t>(lda);
  const size_t b_count = static_cast<size_t>(trans_b == CblasNoTrans ? k : n) *
                         static_cast<size_t>(ldb);
  std::vector<double> ad(a, a + a_count);
  std::vector<double> bd(b, b + b_count);
  std::vector<double> cd(static_cast<size_t>(m) * static_cast<size_t>(n));
  cblas_dgemm(CblasRowMajor, trans_a, trans_b, m, n, k, 1.0, ad.data(), lda,
              bd.data(), ldb, 0.0, cd.data(), n);
  for (int i = 0; i < m; ++i) {
    const double* src = cd.data() + static_cast<size_t>(i) * n;
    float* dst = out + static_cast<size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) dst[j] = static_cast<float>(src[j]);
  }
}

// Scatter-adds columns [C*k*k, Hout*Wout] back into one image [C,H,W].
void col2im_add(const float* col, const ConvDims& d, float* x) {
  const int64_t hw_out = d.hout * d.wout;
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t ki = 0; ki < d.k; ++ki) {
      for (int64_t kj = 0; kj < d.k; ++kj) {
        const float* src_row = col + ((c * d.k + ki) * d.k + kj) * hw_out;
        for (int64_t oh = 0; oh < d.hout; ++oh) {
          const int64_t ih = oh * d.stride + ki - d.pad;
          if (ih < 0 || ih >= d.h) continue;
          const float* src = src_row + oh * d.wout;
          float* dst_row = x + (c * d.h + ih) * d.w;
          for (int64_t ow = 0; ow < d.wout; ++ow) {
            const int64_t iw = ow * d.stride + kj - d.pad;
            if (iw >= 0 && iw < d.w) dst_row[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int pad) {
  detail::blas_init();
  const ConvDims d = conv_dims(input, weight, stride, pad);
  const int64_t ckk = d.c * d.k * d.k;
  const int64_t hw_out = d.hout * d.wout;

  std::vector<float> out(static_cast<size_t>(d.n * d.f * hw_out));

  // Columns are kept for the weight-gradient GEMM when a backward pass can
  // happen; inference under NoGradGuard skips the cache.
  const bool keep_cols = grad_enabled() && weight.requires_grad();
  auto cols = std::make_shared<std::vector<float>>();
  std::vector<float> scratch;
  float* col_base = nullptr;
  if (keep_cols) {
    cols->resize(static_cast<size_t>(d.n * ckk * hw_out));
    col_base = cols->data();
  } else {
    scratch.resize(static_cast<size_t>(ckk * hw_out));
    col_base = scratch.data();
  }

  const float* x = input.data().data();
  const float* wmat = weight.data().data();
  // Double accumulation, one rounding to float (see gemm_f64_rounded).
  const std::vector<double> wd(wmat, wmat + d.f * ckk);
  std::vector<double> cold(static_cast<size_t>(ckk * hw_out));
  std::vector<double> outd(static_cast<size_t>(d.f * hw_out));
  for (int64_t n = 0; n < d.n; ++n) {
    float* col = keep_cols ? col_base + n * ckk * hw_out : col_base;
    im2col(x + n * d.c * d.h * d.w, d, col);
    for (size_t i = 0; i < cold.size(); ++i) cold[i] = col[i];
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                static_cast<int>(d.f), static_cast<int>(hw_out),
                static_cast<int>(ckk), 1.0, wd.data(), static_cast<int>(ckk),
                cold.data(), static_cast<int>(hw_out), 0.0, outd.data(),
                static_cast<int>(hw_out));
    float* dst = out.data() + n * d.f * hw_out;
    for (size_t i = 0; i < outd.size(); ++i) {
      dst[i] = static_cast<float>(outd[i]);
    }
  }

  Tensor in_handle = input;
  Tensor w_handle = weight;
  return detail::make_node(
      {d.n, d.f, d.hout, d.wout}, std::move(out), {input, weight},
      [d, ckk, hw_out, cols, in_handle, w_handle](TensorImpl& self) mutable {
        const float* gout = self.grad.data();
        if (w_handle.requires_grad()) {
          float* gw = w_handle.mutable_grad().data();
          for (int64_t n = 0; n < d.n; ++n) {
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans,
                        static_cast<int>(d.f), static_cast<int>(ckk),
                        static_cast<int>(hw_out), 1.0f, gout + n * d.f * hw_out,
                        static_cast<int>(hw_out), cols->data() + n * ckk * hw_out,
                        static_cast<int>(hw_out), 1.0f, gw,
                        static_cast<int>(ckk));
          }
        }
        if (in_handle.requires_grad()) {
          float* gin = in_handle.mutable_grad().data();
          const float* wmat = w_handle.data().data();
          std::vector<float> colg(static_cast<size_t>(ckk * hw_out));
          for (int64_t n = 0; n < d.n; ++n) {
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans,
                        static_cast<int>(ckk), static_cast<int>(hw_out),
                        static_cast<int>(d.f), 1.0f, wmat,
                        static_cast<int>(ckk), gout + n * d.f * hw_out,
                        static_cast<int>(hw_out), 0.0f, colg.data(),
                        static_cast<int>(hw_out));
            col2im_add(colg.data(), d, gin + n * d.c * d.h * d.w);
          }
        }
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  detail::blas_init();
  if (input.rank() != 2 || weight.rank() != 2) {
    throw ShapeError("linear: input [N,D] and weight [K,D] required, got " +
                     shape_str(input.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: inner dims differ, input " +
                     shape_str(input.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: bias must be [K]=" + std::to_string(weight.dim(0)) +
                     ", got " + shape_str(bias.shape()));
  }
  const int64_t n = input.dim(0);
  const int64_t dth = input.dim(1);
  const int64_t k = weight.dim(0);

  std::vector<float> out(static_cast<size_t>(n * k));
  gemm_f64_rounded(CblasNoTrans, CblasTrans, static_cast<int>(n),
                   static_cast<int>(k), static_cast<int>(dth),
                   input.data().data(), static_cast<int>(dth),
                   weight.data().data(), static_cast<int>(dth), out.data(),
                   static_cast<int>(k));
  const float* b = bias.data().data();
  for (int64_t i = 0; i < n; ++i) {
    float* row = out.data() + i * k;
    for (int64_t j = 0; j < k; ++j) row[j] += b[j];
  }

  Tensor in_h = input, w_h = weight, b_h = bias;
  return detail::make_node(
      {n, k}, std::move(out), {input, weight, bias},
      [n, dth, k, in_h, w_h, b_h](TensorImpl& self) mutable {
        const float* gout = self.grad.data();
        if (in_h.requires_grad()) {
          cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                      static_cast<int>(n), static_cast<int>(dth),
                      static_cast<int>(k), 1.0f, gout, static_cast<int>(k),
                      w_h.data().data(), static_cast<int>(dth), 1.0f,
                      in_h.mutable_grad().data(), static_cast<int>(dth));
        }
        if (w_h.requires_grad()) {
          cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans,
                      static_cast<int>(k), static_cast<int>(dth),
                      static_cast<int>(n), 1.0f, gout, static_cast<int>(k),
                      in_h.data().data(), static_cast<int>(dth), 1.0f,
                      w_h.mutable_grad().data(), static_cast<int>(dth));
        }
        if (b_h.requires_grad()) {
          float* gb = b_h.mutable_grad().data();
          for (int64_t i = 0; i < n; ++i) {
            const float* row = gout + i * k;
            for (int64_t j = 0; j < k; ++j) gb[j] += row[j];
          }
        }
      });
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, BnMode mode, float momentum,
                   float eps) {
  if (input.rank() != 4) {
    throw ShapeError("batchnorm2d: input must be [N,C,H,W], got " +
                     shape_str(input.shape()));
  }
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                w = input.dim(3);
  auto check_c = [&](const Tensor& t, const char* name) {
    if (t.rank() != 1 || t.dim(0) != c) {
      throw ShapeError(std::string("batchnorm2d: ") + name + " must be [" +
                       std::to_string(c) + "], got " + shape_str(t.shape()));
    }
  };
  check_c(gamma, "gamma");
  check_c(beta, "beta");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");

  const int64_t hw = h * w;
  const int64_t m = n * hw;  // elements per channel
  const float* x = input.data().data();
  const float* g = gamma.data().data();
  const float* b = beta.data().data();

  std::vector<float> mean(static_cast<size_t>(c));
  std::vector<float> invstd(static_cast<size_t>(c));

  if (mode == BnMode::kTrain) {
    float* rm = running_mean.mutable_data().data();
    float* rv = running_var.mutable_data().data();
    for (int64_t ch = 0; ch < c; ++ch) {
      double s1 = 0.0, s2 = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const float* p = x + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const double v = p[j];
          s1 += v;
          s2 += v * v;
        }
      }
      const double mu = s1 / static_cast<double>(m);
      double var = s2 / static_cast<double>(m) - mu * mu;
      if (var < 0.0) var = 0.0;  // cancellation guard
      mean[ch] = static_cast<float>(mu);
      invstd[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
      const double var_unbiased =
          m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1)
                : var;
      rm[ch] = (1.0f - momentum) * rm[ch] + momentum * static_cast<float>(mu);
      rv[ch] =
          (1.0f - momentum) * rv[ch] + momentum * static_cast<float>(var_unbiased);
    }
  } else {
    const float* rm = running_mean.data().data();
    const float* rv = running_var.data().data();
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      const double var = std::max(0.0, static_cast<double>(rv[ch]));
      invstd[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
    }
  }

  std::vector<float> out(static_cast<size_t>(n * c * hw));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* src = x + (i * c + ch) * hw;
      float* dst = out.data() + (i * c + ch) * hw;
      const float mu = mean[ch];
      const float is = invstd[ch];
      const float gc = g[ch];
      const float bc = b[ch];
      for (int64_t j = 0; j < hw; ++j) {
        dst[j] = (src[j] - mu) * is * gc + bc;
      }
    }
  }

  Tensor in_h = input, g_h = gamma, b_h = beta;
  auto mean_c = std::make_shared<std::vector<float>>(std::move(mean));
  auto invstd_c = std::make_shared<std::vector<float>>(std::move(invstd));
  const bool train = mode == BnMode::kTrain;
  return detail::make_node(
      input.shape(), std::move(out), {input, gamma, beta},
      [n, c, hw, in_h, g_h, b_h, mean_c, invstd_c, train](TensorImpl& self) mutable {
        const int64_t m = n * hw;
        const float* gout = self.grad.data();
        const float* x = in_h.data().data();
        const float* g = g_h.data().data();
        float* gg = g_h.requires_grad() ? g_h.mutable_grad().data() : nullptr;
        float* gb = b_h.requires_grad() ? b_h.mutable_grad().data() : nullptr;
        float* gx = in_h.requires_grad() ? in_h.mutable_grad().data() : nullptr;
        for (int64_t ch = 0; ch < c; ++ch) {
          const float mu = (*mean_c)[ch];
          const float is = (*invstd_c)[ch];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            const float* dy = gout + (i * c + ch) * hw;
            const float* xs = x + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
              sum_dy += dy[j];
              sum_dy_xhat += static_cast<double>(dy[j]) * ((xs[j] - mu) * is);
            }
          }
          if (gg) gg[ch] += static_cast<float>(sum_dy_xhat);
          if (gb) gb[ch] += static_cast<float>(sum_dy);
          if (gx) {
            const float k1 = static_cast<float>(sum_dy / static_cast<double>(m));
            const float k2 =
                static_cast<float>(sum_dy_xhat / static_cast<double>(m));
            const float scale = g[ch] * is;
            for (int64_t i = 0; i < n; ++i) {
              const float* dy = gout + (i * c + ch) * hw;
              const float* xs = x + (i * c + ch) * hw;
              float* dx = gx + (i * c + ch) * hw;
              if (train) {
                for (int64_t j = 0; j < hw; ++j) {
                  const float xhat = (xs[j] - mu) * is;
                  dx[j] += scale * (dy[j] - k1 - xhat * k2);
                }
              } else {
                // Running stats are constants in eval mode.
                for (int64_t j = 0; j < hw; ++j) dx[j] += scale * dy[j];
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor& input) {
  std::vector<float> out(input.data().begin(), input.data().end());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  Tensor in_h = input;
  return detail::make_node(
      input.shape(), std::move(out), {input}, [in_h](TensorImpl& self) mutable {
        if (!in_h.requires_grad()) return;
        const float* x = in_h.data().data();
        const float* gout = self.grad.data();
        float* gin = in_h.mutable_grad().data();
        const size_t n = self.data.size();
        for (size_t i = 0; i < n; ++i) {
          if (x[i] > 0.0f) gin[i] += gout[i];
        }
      });
}

Tensor maxpool2x2(const Tensor& input) {
  if (input.rank() != 4) {
    throw ShapeError("maxpool2x2: input must be [N,C,H,W], got " +
                     shape_str(input.shape()));
  }
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                w = input.dim(3);
  const int64_t hout = h / 2, wout = w / 2;
  if (hout < 1 || wout < 1) {
    throw ShapeError("maxpool2x2: spatial extent too small in " +
                     shape_str(input.shape()));
  }
  const float* x = input.data().data();
  std::vector<float> out(static_cast<size_t>(n * c * hout * wout));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  for (int64_t i = 0; i < n * c; ++i) {
    const float* plane = x + i * h * w;
    float* dst = out.data() + i * hout * wout;
    int64_t* amax = argmax->data() + i * hout * wout;
    for (int64_t oh = 0; oh < hout; ++oh) {
      for (int64_t ow = 0; ow < wout; ++ow) {
        const int64_t base = (2 * oh) * w + 2 * ow;
        int64_t best = base;
        float bv = plane[base];
        const int64_t candidates[3] = {base + 1, base + w, base + w + 1};
        for (int64_t cand : candidates) {
          const float v = plane[cand];
          if (v > bv) {
            bv = v;
            best = cand;
          }
        }
        dst[oh * wout + ow] = bv;
        amax[oh * wout + ow] = i * h * w + best;
      }
    }
  }
  Tensor in_h = input;
  return detail::make_node(
      {n, c, hout, wout}, std::move(out), {input},
      [in_h, argmax](TensorImpl& self) mutable {
        if (!in_h.requires_grad()) return;
        const float* gout = self.grad.data();
        float* gin = in_h.mutable_grad().data();
        for (size_t i = 0; i < self.data.size(); ++i) {
          gin[(*argmax)[i]] += gout[i];
        }
      });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() != 4) {
    throw ShapeError("global_avg_pool: input must be [N,C,H,W], got " +
                     shape_str(input.shape()));
  }
  const int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const float* x = input.data().data();
  std::vector<float> out(static_cast<size_t>(n * c));
  const double inv = 1.0 / static_cast<double>(hw);
  for (int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const float* p = x + i * hw;
    for (int64_t j = 0; j < hw; ++j) s += p[j];
    out[static_cast<size_t>(i)] = static_cast<float>(s * inv);
  }
  Tensor in_h = input;
  return detail::make_node(
      {n, c}, std::move(out), {input}, [in_h, hw](TensorImpl& self) mutable {
        if (!in_h.requires_grad()) return;
        const float scale = 1.0f / static_cast<float>(hw);
        const float* gout = self.grad.data();
        float* gin = in_h.mutable_grad().data();
        for (size_t i = 0; i < self.data.size(); ++i) {
          const float gv = gout[i] * scale;
          float* p = gin + static_cast<int64_t>(i) * hw;
          for (int64_t j = 0; j < hw; ++j) p[j] += gv;
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  const float* pb = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  Tensor a_h = a, b_h = b;
  return detail::make_node(
      a.shape(), std::move(out), {a, b}, [a_h, b_h](TensorImpl& self) mutable {
        const float* gout = self.grad.data();
        const size_t n = self.data.size();
        if (a_h.requires_grad()) {
          float* ga = a_h.mutable_grad().data();
          for (size_t i = 0; i < n; ++i) ga[i] += gout[i];
        }
        if (b_h.requires_grad()) {
          float* gb = b_h.mutable_grad().data();
          for (size_t i = 0; i < n; ++i) gb[i] += gout[i];
        }
      });
}

Tensor sum(const Tensor& input) {
  double s = 0.0;
  for (float v : input.data()) s += v;
  Tensor in_h = input;
  return detail::make_node(
      {1}, {static_cast<float>(s)}, {input}, [in_h](TensorImpl& self) mutable {
        if (!in_h.requires_grad()) return;
        const float g = self.grad[0];
        for (float& v : in_h.mutable_grad()) v += g;
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [N,M], got " +
                     shape_str(logits.shape()));
  }
  const int64_t n = logits.dim(0), m = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(n));
  }
  for (int label : labels) {
    if (label < 0 || label >= m) {
      throw ConfigError("cross_entropy: label " + std::to_string(label) +
                        " outside [0," + std::to_string(m) + ")");
    }
  }

  const float* x = logits.data().data();
  auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(n * m));
  double loss_sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const float* row = x + i * m;
    double mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int64_t j = 0; j < m; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    loss_sum += lse - row[labels[static_cast<size_t>(i)]];
    float* prow = probs->data() + i * m;
    for (int64_t j = 0; j < m; ++j) {
      prow[j] = static_cast<float>(std::exp(row[j] - mx) / denom);
    }
  }
  const float loss = static_cast<float>(loss_sum / static_cast<double>(n));

  Tensor in_h = logits;
  auto labels_c = std::make_shared<std::vector<int>>(labels);
  return detail::make_node(
      {1}, {loss}, {logits},
      [in_h, probs, labels_c, n, m](TensorImpl& self) mutable {
        if (!in_h.requires_grad()) return;
        const float g = self.grad[0] / static_cast<float>(n);
        float* gin = in_h.mutable_grad().data();
        for (int64_t i = 0; i < n; ++i) {
          const float* prow = probs->data() + i * m;
          float* grow = gin + i * m;
          const int label = (*labels_c)[static_cast<size_t>(i)];
          for (int64_t j = 0; j < m; ++j) {
            grow[j] += g * (prow[j] - (j == label ? 1.0f : 0.0f));
          }
        }
      });
}

}  // namespace winnow::ops
