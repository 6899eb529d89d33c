#include "icm/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "icm/errors.hpp"
#include "icm/resize.hpp"

namespace icm::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using SMapM = Eigen::Map<RowMat, 0, Strided>;
using CSMapM = Eigen::Map<const RowMat, 0, Strided>;

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, int r, const char* what) {
  if (a.rank() != r) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
  }
}

Node& parent(Node& self, size_t i) { return *self.parents[i]; }

// The parent list only exists when the result tracks gradients, so backward
// functions can index parents positionally.
template <class F>
void unary_backward(Node& self, F&& dfdx) {
  Node& p = parent(self, 0);
  if (!p.requires_grad) return;
  float* g = p.grad_ptr();
  for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * dfdx(i);
}

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  FloatVec out(a.data().begin(), a.data().end());
  const float* pb = b.ptr();
  for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (size_t k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      float* g = p.grad_ptr();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  FloatVec out(a.data().begin(), a.data().end());
  const float* pb = b.ptr();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (size_t k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      float* g = p.grad_ptr();
      const float sign = k == 0 ? 1.0f : -1.0f;
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  FloatVec out(static_cast<size_t>(a.numel()));
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      float* g = pa.grad_ptr();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      float* g = pb.grad_ptr();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  FloatVec out(a.data().begin(), a.data().end());
  for (float& v : out) v *= s;
  return make_result(a.shape(), std::move(out), {a},
                     [s](Node& self) { unary_backward(self, [s](size_t) { return s; }); });
}

Tensor add_scalar(const Tensor& a, float s) {
  FloatVec out(a.data().begin(), a.data().end());
  for (float& v : out) v += s;
  return make_result(a.shape(), std::move(out), {a},
                     [](Node& self) { unary_backward(self, [](size_t) { return 1.0f; }); });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_result({1}, {static_cast<float>(acc)}, {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    float* g = p.grad_ptr();
    const float gs = self.grad[0];
    for (size_t i = 0; i < p.data.size(); ++i) g[i] += gs;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw EmptyError("mean of an empty tensor");
  return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor gelu(const Tensor& a) {
  FloatVec out(static_cast<size_t>(a.numel()));
  const float* x = a.ptr();
  for (size_t i = 0; i < out.size(); ++i) out[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * kInvSqrt2));
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& x = parent(self, 0).data;
    unary_backward(self, [&x](size_t i) {
      const float v = x[i];
      return 0.5f * (1.0f + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5f * v * v);
    });
  });
}

Tensor softplus(const Tensor& a) {
  FloatVec out(static_cast<size_t>(a.numel()));
  const float* x = a.ptr();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] > 20.0f ? x[i] : std::log1p(std::exp(x[i]));
  }
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& x = parent(self, 0).data;
    unary_backward(self, [&x](size_t i) { return 1.0f / (1.0f + std::exp(-x[i])); });
  });
}

Tensor lower_bound(const Tensor& a, float floor) {
  FloatVec out(static_cast<size_t>(a.numel()));
  const float* x = a.ptr();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(x[i], floor);
  return make_result(a.shape(), std::move(out), {a}, [floor](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    float* g = p.grad_ptr();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      // Pass through when above the floor, or when descent would raise the value.
      if (p.data[i] >= floor || self.grad[i] < 0.0f) g[i] += self.grad[i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b) {
  require_rank(w, 2, "linear weight");
  const int in = w.dim(0);
  const int out_f = w.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  if (b && (b->rank() != 1 || b->dim(0) != out_f)) throw ShapeError("linear: bad bias shape");
  const int n = static_cast<int>(x.numel() / in);
  Shape oshape = x.shape();
  oshape.back() = out_f;
  FloatVec out(static_cast<size_t>(n) * out_f);
  MapM y(out.data(), n, out_f);
  y.noalias() = CMapM(x.ptr(), n, in) * CMapM(w.ptr(), in, out_f);
  if (b) y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b->ptr(), out_f);
  std::vector<Tensor> parents{x, w};
  if (b) parents.push_back(*b);
  return make_result(std::move(oshape), std::move(out), parents, [n, in, out_f](Node& self) {
    CMapM dy(self.grad.data(), n, out_f);
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    if (px.requires_grad) {
      MapM(px.grad_ptr(), n, in).noalias() += dy * CMapM(pw.data.data(), in, out_f).transpose();
    }
    if (pw.requires_grad) {
      MapM(pw.grad_ptr(), in, out_f).noalias() += CMapM(px.data.data(), n, in).transpose() * dy;
    }
    if (self.parents.size() > 2) {
      Node& pb = parent(self, 2);
      if (pb.requires_grad) {
        Eigen::Map<Eigen::RowVectorXf>(pb.grad_ptr(), out_f) += dy.colwise().sum();
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  return linear(a, b, std::nullopt);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const int c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("layer_norm: affine size mismatch");
  const int n = static_cast<int>(x.numel() / c);
  FloatVec out(static_cast<size_t>(x.numel()));
  auto xhat = std::make_shared<FloatVec>(out.size());
  auto rstd = std::make_shared<FloatVec>(static_cast<size_t>(n));
  const float* px = x.ptr();
  const float* g = gamma.ptr();
  const float* bt = beta.ptr();
  for (int r = 0; r < n; ++r) {
    const float* row = px + static_cast<size_t>(r) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[static_cast<size_t>(r)] = rs;
    for (int j = 0; j < c; ++j) {
      const size_t i = static_cast<size_t>(r) * c + j;
      const float xh = (row[j] - static_cast<float>(mu)) * rs;
      (*xhat)[i] = xh;
      out[i] = xh * g[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, [n, c, xhat, rstd](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    const float* dy = self.grad.data();
    if (pg.requires_grad || pb.requires_grad) {
      float* dg = pg.requires_grad ? pg.grad_ptr() : nullptr;
      float* db = pb.requires_grad ? pb.grad_ptr() : nullptr;
      for (int r = 0; r < n; ++r) {
        for (int j = 0; j < c; ++j) {
          const size_t i = static_cast<size_t>(r) * c + j;
          if (dg) dg[j] += dy[i] * (*xhat)[i];
          if (db) db[j] += dy[i];
        }
      }
    }
    if (!px.requires_grad) return;
    float* dx = px.grad_ptr();
    const float* g = pg.data.data();
    for (int r = 0; r < n; ++r) {
      double m1 = 0.0, m2 = 0.0;
      for (int j = 0; j < c; ++j) {
        const size_t i = static_cast<size_t>(r) * c + j;
        const double dxh = dy[i] * g[j];
        m1 += dxh;
        m2 += dxh * (*xhat)[i];
      }
      m1 /= c;
      m2 /= c;
      const float rs = (*rstd)[static_cast<size_t>(r)];
      for (int j = 0; j < c; ++j) {
        const size_t i = static_cast<size_t>(r) * c + j;
        const double dxh = dy[i] * g[j];
        dx[i] += static_cast<float>(rs * (dxh - m1 - (*xhat)[i] * m2));
      }
    }
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const int c = x.dim(-1);
  const int64_t n = x.numel() / c;
  FloatVec out(static_cast<size_t>(x.numel()));
  const float* px = x.ptr();
  for (int64_t r = 0; r < n; ++r) {
    const float* row = px + r * c;
    float* o = out.data() + r * c;
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    float s = 0.0f;
    for (int j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - mx);
      s += o[j];
    }
    const float inv = 1.0f / s;
    for (int j = 0; j < c; ++j) o[j] *= inv;
  }
  return make_result(x.shape(), std::move(out), {x}, [n, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    float* g = p.grad_ptr();
    const float* y = self.data.data();
    const float* dy = self.grad.data();
    for (int64_t r = 0; r < n; ++r) {
      float dot = 0.0f;
      for (int j = 0; j < c; ++j) dot += dy[r * c + j] * y[r * c + j];
      for (int j = 0; j < c; ++j) g[r * c + j] += y[r * c + j] * (dy[r * c + j] - dot);
    }
  });
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, float momentum, float eps) {
  require_rank(x, 4, "batch_norm2d");
  const int bsz = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || running_mean.numel() != c) throw ShapeError("batch_norm2d: channel mismatch");
  const int count = bsz * hw;
  FloatVec mu(static_cast<size_t>(c)), rstd(static_cast<size_t>(c));
  const float* px = x.ptr();
  if (training) {
    if (count < 2) throw ShapeError("batch_norm2d: need more than one value per channel in training");
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int b = 0; b < bsz; ++b) {
        const float* p = px + (static_cast<size_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (int b = 0; b < bsz; ++b) {
        const float* p = px + (static_cast<size_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double var = v / count;
      mu[static_cast<size_t>(ch)] = static_cast<float>(m);
      rstd[static_cast<size_t>(ch)] = static_cast<float>(1.0 / std::sqrt(var + eps));
      float* rm = running_mean.ptr();
      float* rv = running_var.ptr();
      rm[ch] = (1.0f - momentum) * rm[ch] + momentum * static_cast<float>(m);
      rv[ch] = (1.0f - momentum) * rv[ch] + momentum * static_cast<float>(var * count / (count - 1));
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[static_cast<size_t>(ch)] = running_mean.at(ch);
      rstd[static_cast<size_t>(ch)] = 1.0f / std::sqrt(running_var.at(ch) + eps);
    }
  }
  FloatVec out(static_cast<size_t>(x.numel()));
  auto xhat = std::make_shared<FloatVec>(out.size());
  const float* g = gamma.ptr();
  const float* bt = beta.ptr();
  for (int b = 0; b < bsz; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const size_t off = (static_cast<size_t>(b) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) {
        const float xh = (px[off + i] - mu[static_cast<size_t>(ch)]) * rstd[static_cast<size_t>(ch)];
        (*xhat)[off + i] = xh;
        out[off + i] = xh * g[ch] + bt[ch];
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [bsz, c, hw, count, training, xhat, rstd](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pg = parent(self, 1);
                       Node& pb = parent(self, 2);
                       const float* dy = self.grad.data();
                       const float* g = pg.data.data();
                       float* dx = px.requires_grad ? px.grad_ptr() : nullptr;
                       float* dg = pg.requires_grad ? pg.grad_ptr() : nullptr;
                       float* db = pb.requires_grad ? pb.grad_ptr() : nullptr;
                       for (int ch = 0; ch < c; ++ch) {
                         double sdy = 0.0, sdyx = 0.0;
                         for (int b = 0; b < bsz; ++b) {
                           const size_t off = (static_cast<size_t>(b) * c + ch) * hw;
                           for (int i = 0; i < hw; ++i) {
                             sdy += dy[off + i];
                             sdyx += dy[off + i] * (*xhat)[off + i];
                           }
                         }
                         if (dg) dg[ch] += static_cast<float>(sdyx);
                         if (db) db[ch] += static_cast<float>(sdy);
                         if (!dx) continue;
                         const float rs = rstd[static_cast<size_t>(ch)];
                         for (int b = 0; b < bsz; ++b) {
                           const size_t off = (static_cast<size_t>(b) * c + ch) * hw;
                           for (int i = 0; i < hw; ++i) {
                             if (training) {
                               dx[off + i] += static_cast<float>(
                                   g[ch] * rs *
                                   (dy[off + i] - sdy / count - (*xhat)[off + i] * sdyx / count));
                             } else {
                               dx[off + i] += g[ch] * rs * dy[off + i];
                             }
                           }
                         }
                       }
                     });
}

namespace {

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void im2col(const float* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            float* col) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(static_cast<size_t>(c) * h + iy) * w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            float* dx) {
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            dx[(static_cast<size_t>(c) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int stride, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const int bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: bad stride/padding");
  const int ho = conv_out(h, k, stride, pad), wo = conv_out(wd, k, stride, pad);
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: input smaller than kernel");
  const int kk = cin * k * k;
  const int np = ho * wo;
  FloatVec out(static_cast<size_t>(bsz) * cout * np);
  FloatVec col(static_cast<size_t>(kk) * np);
  CMapM wm(w.ptr(), cout, kk);
  for (int n = 0; n < bsz; ++n) {
    im2col(x.ptr() + static_cast<size_t>(n) * cin * h * wd, cin, h, wd, k, stride, pad, ho, wo, col.data());
    MapM o(out.data() + static_cast<size_t>(n) * cout * np, cout, np);
    o.noalias() = wm * CMapM(col.data(), kk, np);
    if (b) o.colwise() += Eigen::Map<const Eigen::VectorXf>(b->ptr(), cout);
  }
  std::vector<Tensor> parents{x, w};
  if (b) parents.push_back(*b);
  return make_result({bsz, cout, ho, wo}, std::move(out), parents,
                     [=](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pw = parent(self, 1);
                       Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
                       FloatVec colb(static_cast<size_t>(kk) * np);
                       CMapM wmb(pw.data.data(), cout, kk);
                       for (int n = 0; n < bsz; ++n) {
                         CMapM dy(self.grad.data() + static_cast<size_t>(n) * cout * np, cout, np);
                         if (pw.requires_grad) {
                           im2col(px.data.data() + static_cast<size_t>(n) * cin * h * wd, cin, h, wd, k,
                                  stride, pad, ho, wo, colb.data());
                           MapM(pw.grad_ptr(), cout, kk).noalias() +=
                               dy * CMapM(colb.data(), kk, np).transpose();
                         }
                         if (pb && pb->requires_grad) {
                           Eigen::Map<Eigen::VectorXf>(pb->grad_ptr(), cout) += dy.rowwise().sum();
                         }
                         if (px.requires_grad) {
                           MapM dcol(colb.data(), kk, np);
                           dcol.noalias() = wmb.transpose() * dy;
                           col2im(colb.data(), cin, h, wd, k, stride, pad, ho, wo,
                                  px.grad_ptr() + static_cast<size_t>(n) * cin * h * wd);
                         }
                       }
                     });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int stride,
                        int pad) {
  require_rank(x, 4, "depthwise_conv2d input");
  require_rank(w, 4, "depthwise_conv2d weight");
  const int bsz = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int k = w.dim(2);
  if (w.dim(0) != c || w.dim(1) != 1 || w.dim(3) != k) {
    throw ShapeError("depthwise_conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (stride < 1 || pad < 0) throw ArgumentError("depthwise_conv2d: bad stride/padding");
  const int ho = conv_out(h, k, stride, pad), wo = conv_out(wd, k, stride, pad);
  if (ho < 1 || wo < 1) throw ShapeError("depthwise_conv2d: input smaller than kernel");
  FloatVec out(static_cast<size_t>(bsz) * c * ho * wo);
  const float* px = x.ptr();
  const float* pw = w.ptr();
  for (int n = 0; n < bsz; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const float* xi = px + (static_cast<size_t>(n) * c + ch) * h * wd;
      const float* wk = pw + static_cast<size_t>(ch) * k * k;
      float* o = out.data() + (static_cast<size_t>(n) * c + ch) * ho * wo;
      const float bias = b ? b->at(ch) : 0.0f;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          float acc = bias;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += wk[ky * k + kx] * xi[iy * wd + ix];
            }
          }
          o[oy * wo + ox] = acc;
        }
      }
    }
  }
  std::vector<Tensor> parents{x, w};
  if (b) parents.push_back(*b);
  return make_result({bsz, c, ho, wo}, std::move(out), parents, [=](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    float* dx = px.requires_grad ? px.grad_ptr() : nullptr;
    float* dw = pw.requires_grad ? pw.grad_ptr() : nullptr;
    float* db = (pb && pb->requires_grad) ? pb->grad_ptr() : nullptr;
    for (int n = 0; n < bsz; ++n) {
      for (int ch = 0; ch < c; ++ch) {
        const size_t xoff = (static_cast<size_t>(n) * c + ch) * h * wd;
        const float* xi = px.data.data() + xoff;
        const float* wk = pw.data.data() + static_cast<size_t>(ch) * k * k;
        const float* dy = self.grad.data() + (static_cast<size_t>(n) * c + ch) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            const float g = dy[oy * wo + ox];
            if (db) db[ch] += g;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= wd) continue;
                if (dw) dw[static_cast<size_t>(ch) * k * k + ky * k + kx] += g * xi[iy * wd + ix];
                if (dx) dx[xoff + iy * wd + ix] += g * wk[ky * k + kx];
              }
            }
          }
        }
      }
    }
  });
}

Tensor to_tokens(const Tensor& x) {
  require_rank(x, 4, "to_tokens");
  const int bsz = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  FloatVec out(static_cast<size_t>(x.numel()));
  for (int n = 0; n < bsz; ++n) {
    CMapM src(x.ptr() + static_cast<size_t>(n) * c * hw, c, hw);
    MapM(out.data() + static_cast<size_t>(n) * c * hw, hw, c) = src.transpose();
  }
  return make_result({bsz, hw, c}, std::move(out), {x}, [bsz, c, hw](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (int n = 0; n < bsz; ++n) {
      MapM(p.grad_ptr() + static_cast<size_t>(n) * c * hw, c, hw) +=
          CMapM(self.grad.data() + static_cast<size_t>(n) * c * hw, hw, c).transpose();
    }
  });
}

Tensor from_tokens(const Tensor& t, int h, int w) {
  require_rank(t, 3, "from_tokens");
  const int bsz = t.dim(0), hw = t.dim(1), c = t.dim(2);
  if (hw != h * w) throw ShapeError("from_tokens: token count does not match grid");
  FloatVec out(static_cast<size_t>(t.numel()));
  for (int n = 0; n < bsz; ++n) {
    CMapM src(t.ptr() + static_cast<size_t>(n) * c * hw, hw, c);
    MapM(out.data() + static_cast<size_t>(n) * c * hw, c, hw) = src.transpose();
  }
  return make_result({bsz, c, h, w}, std::move(out), {t}, [bsz, c, hw](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (int n = 0; n < bsz; ++n) {
      MapM(p.grad_ptr() + static_cast<size_t>(n) * c * hw, hw, c) +=
          CMapM(self.grad.data() + static_cast<size_t>(n) * c * hw, c, hw).transpose();
    }
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
  const int bsz = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int c_total = 0;
  for (const auto& p : parts) {
    require_rank(p, 4, "concat_channels");
    if (p.dim(0) != bsz || p.dim(2) != h || p.dim(3) != w) throw ShapeError("concat_channels: extent mismatch");
    c_total += p.dim(1);
  }
  const size_t hw = static_cast<size_t>(h) * w;
  FloatVec out(static_cast<size_t>(bsz) * c_total * hw);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int c = p.dim(1);
    for (int n = 0; n < bsz; ++n) {
      std::copy_n(p.ptr() + static_cast<size_t>(n) * c * hw, c * hw,
                  out.data() + (static_cast<size_t>(n) * c_total + off) * hw);
    }
    off += c;
  }
  return make_result({bsz, c_total, h, w}, std::move(out), parts, [bsz, c_total, hw, offsets](Node& self) {
    for (size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      const int c = p.shape[1];
      float* g = p.grad_ptr();
      for (int n = 0; n < bsz; ++n) {
        const float* src = self.grad.data() + (static_cast<size_t>(n) * c_total + offsets[k]) * hw;
        float* dst = g + static_cast<size_t>(n) * c * hw;
        for (size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor slice_channels(const Tensor& x, int start, int count) {
  require_rank(x, 4, "slice_channels");
  const int bsz = x.dim(0), c = x.dim(1);
  if (start < 0 || count < 1 || start + count > c) throw ShapeError("slice_channels: range out of bounds");
  const size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
  FloatVec out(static_cast<size_t>(bsz) * count * hw);
  for (int n = 0; n < bsz; ++n) {
    std::copy_n(x.ptr() + (static_cast<size_t>(n) * c + start) * hw, count * hw,
                out.data() + static_cast<size_t>(n) * count * hw);
  }
  return make_result({bsz, count, x.dim(2), x.dim(3)}, std::move(out), {x},
                     [bsz, c, start, count, hw](Node& self) {
                       Node& p = parent(self, 0);
                       if (!p.requires_grad) return;
                       float* g = p.grad_ptr();
                       for (int n = 0; n < bsz; ++n) {
                         const float* src = self.grad.data() + static_cast<size_t>(n) * count * hw;
                         float* dst = g + (static_cast<size_t>(n) * c + start) * hw;
                         for (size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor broadcast_channels(const Tensor& v, int batch, int h, int w) {
  const int c = static_cast<int>(v.numel());
  const size_t hw = static_cast<size_t>(h) * w;
  FloatVec out(static_cast<size_t>(batch) * c * hw);
  for (int n = 0; n < batch; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      std::fill_n(out.data() + (static_cast<size_t>(n) * c + ch) * hw, hw, v.at(ch));
    }
  }
  return make_result({batch, c, h, w}, std::move(out), {v}, [batch, c, hw](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    float* g = p.grad_ptr();
    for (int n = 0; n < batch; ++n) {
      for (int ch = 0; ch < c; ++ch) {
        const float* src = self.grad.data() + (static_cast<size_t>(n) * c + ch) * hw;
        double s = 0.0;
        for (size_t i = 0; i < hw; ++i) s += src[i];
        g[ch] += static_cast<float>(s);
      }
    }
  });
}

Tensor token_mean(const Tensor& t) {
  require_rank(t, 3, "token_mean");
  const int bsz = t.dim(0), n = t.dim(1), c = t.dim(2);
  FloatVec out(static_cast<size_t>(bsz) * c);
  for (int b = 0; b < bsz; ++b) {
    Eigen::Map<Eigen::RowVectorXf>(out.data() + static_cast<size_t>(b) * c, c) =
        CMapM(t.ptr() + static_cast<size_t>(b) * n * c, n, c).colwise().mean();
  }
  return make_result({bsz, c}, std::move(out), {t}, [bsz, n, c](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    for (int b = 0; b < bsz; ++b) {
      Eigen::Map<const Eigen::RowVectorXf> g(self.grad.data() + static_cast<size_t>(b) * c, c);
      MapM(p.grad_ptr() + static_cast<size_t>(b) * n * c, n, c).rowwise() += g / static_cast<float>(n);
    }
  });
}

Tensor bicubic_resize(const Tensor& x, int out_h, int out_w) {
  require_rank(x, 4, "bicubic_resize");
  if (out_h < 1 || out_w < 1) throw ArgumentError("bicubic_resize: output extent must be positive");
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == h && out_w == w) {
    return make_result(x.shape(), FloatVec(x.data().begin(), x.data().end()), {x},
                       [](Node& self) { unary_backward(self, [](size_t) { return 1.0f; }); });
  }
  auto ty = std::make_shared<std::vector<std::array<Tap, 4>>>(cubic_taps(h, out_h));
  auto tx = std::make_shared<std::vector<std::array<Tap, 4>>>(cubic_taps(w, out_w));
  FloatVec out(static_cast<size_t>(planes) * out_h * out_w);
  FloatVec tmp(static_cast<size_t>(h) * out_w);
  for (int p = 0; p < planes; ++p) {
    const float* src = x.ptr() + static_cast<size_t>(p) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int ox = 0; ox < out_w; ++ox) {
        float acc = 0.0f;
        for (const Tap& t : (*tx)[static_cast<size_t>(ox)]) acc += t.weight * src[y * w + t.index];
        tmp[static_cast<size_t>(y) * out_w + ox] = acc;
      }
    }
    float* dst = out.data() + static_cast<size_t>(p) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      float* row = dst + static_cast<size_t>(oy) * out_w;
      std::fill_n(row, out_w, 0.0f);
      for (const Tap& t : (*ty)[static_cast<size_t>(oy)]) {
        const float* trow = tmp.data() + static_cast<size_t>(t.index) * out_w;
        for (int ox = 0; ox < out_w; ++ox) row[ox] += t.weight * trow[ox];
      }
    }
  }
  Shape oshape{x.dim(0), x.dim(1), out_h, out_w};
  return make_result(std::move(oshape), std::move(out), {x}, [=](Node& self) {
    Node& px = parent(self, 0);
    if (!px.requires_grad) return;
    float* g = px.grad_ptr();
    FloatVec dtmp(static_cast<size_t>(h) * out_w);
    for (int p = 0; p < planes; ++p) {
      std::fill(dtmp.begin(), dtmp.end(), 0.0f);
      const float* dy = self.grad.data() + static_cast<size_t>(p) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        for (const Tap& t : (*ty)[static_cast<size_t>(oy)]) {
          float* trow = dtmp.data() + static_cast<size_t>(t.index) * out_w;
          for (int ox = 0; ox < out_w; ++ox) trow[ox] += t.weight * dy[oy * out_w + ox];
        }
      }
      float* gx = g + static_cast<size_t>(p) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int ox = 0; ox < out_w; ++ox) {
          const float d = dtmp[static_cast<size_t>(y) * out_w + ox];
          for (const Tap& t : (*tx)[static_cast<size_t>(ox)]) gx[y * w + t.index] += t.weight * d;
        }
      }
    }
  });
}

Tensor attention_scores(const Tensor& q, const Tensor& k, int heads) {
  require_rank(q, 3, "attention_scores q");
  require_rank(k, 3, "attention_scores k");
  const int bsz = q.dim(0), nq = q.dim(1), c = q.dim(2), nk = k.dim(1);
  if (k.dim(0) != bsz || k.dim(2) != c) throw ShapeError("attention_scores: q/k mismatch");
  if (heads < 1 || c % heads != 0) throw ShapeError("attention_scores: channels not divisible by heads");
  const int dh = c / heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  FloatVec out(static_cast<size_t>(bsz) * heads * nq * nk);
  for (int b = 0; b < bsz; ++b) {
    for (int h = 0; h < heads; ++h) {
      CSMapM qh(q.ptr() + static_cast<size_t>(b) * nq * c + h * dh, nq, dh, Strided(c));
      CSMapM kh(k.ptr() + static_cast<size_t>(b) * nk * c + h * dh, nk, dh, Strided(c));
      MapM(out.data() + (static_cast<size_t>(b) * heads + h) * nq * nk, nq, nk).noalias() =
          sc * (qh * kh.transpose());
    }
  }
  return make_result({bsz, heads, nq, nk}, std::move(out), {q, k}, [=](Node& self) {
    Node& pq = parent(self, 0);
    Node& pk = parent(self, 1);
    float* dq = pq.requires_grad ? pq.grad_ptr() : nullptr;
    float* dk = pk.requires_grad ? pk.grad_ptr() : nullptr;
    for (int b = 0; b < bsz; ++b) {
      for (int h = 0; h < heads; ++h) {
        CMapM ds(self.grad.data() + (static_cast<size_t>(b) * heads + h) * nq * nk, nq, nk);
        const size_t qoff = static_cast<size_t>(b) * nq * c + h * dh;
        const size_t koff = static_cast<size_t>(b) * nk * c + h * dh;
        if (dq) {
          CSMapM kh(pk.data.data() + koff, nk, dh, Strided(c));
          SMapM(dq + qoff, nq, dh, Strided(c)).noalias() += sc * (ds * kh);
        }
        if (dk) {
          CSMapM qh(pq.data.data() + qoff, nq, dh, Strided(c));
          SMapM(dk + koff, nk, dh, Strided(c)).noalias() += sc * (ds.transpose() * qh);
        }
      }
    }
  });
}

Tensor attention_context(const Tensor& probs, const Tensor& v, int heads) {
  require_rank(probs, 4, "attention_context probs");
  require_rank(v, 3, "attention_context v");
  const int bsz = probs.dim(0), nq = probs.dim(2), nk = probs.dim(3), c = v.dim(2);
  if (probs.dim(1) != heads || v.dim(0) != bsz || v.dim(1) != nk || c % heads != 0) {
    throw ShapeError("attention_context: shape mismatch " + shape_str(probs.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  const int dh = c / heads;
  FloatVec out(static_cast<size_t>(bsz) * nq * c);
  for (int b = 0; b < bsz; ++b) {
    for (int h = 0; h < heads; ++h) {
      CMapM p(probs.ptr() + (static_cast<size_t>(b) * heads + h) * nq * nk, nq, nk);
      CSMapM vh(v.ptr() + static_cast<size_t>(b) * nk * c + h * dh, nk, dh, Strided(c));
      SMapM(out.data() + static_cast<size_t>(b) * nq * c + h * dh, nq, dh, Strided(c)).noalias() = p * vh;
    }
  }
  return make_result({bsz, nq, c}, std::move(out), {probs, v}, [=](Node& self) {
    Node& pp = parent(self, 0);
    Node& pv = parent(self, 1);
    float* dp = pp.requires_grad ? pp.grad_ptr() : nullptr;
    float* dv = pv.requires_grad ? pv.grad_ptr() : nullptr;
    for (int b = 0; b < bsz; ++b) {
      for (int h = 0; h < heads; ++h) {
        CSMapM dout(self.grad.data() + static_cast<size_t>(b) * nq * c + h * dh, nq, dh, Strided(c));
        const size_t poff = (static_cast<size_t>(b) * heads + h) * nq * nk;
        const size_t voff = static_cast<size_t>(b) * nk * c + h * dh;
        if (dp) {
          CSMapM vh(pv.data.data() + voff, nk, dh, Strided(c));
          MapM(dp + poff, nq, nk).noalias() += dout * vh.transpose();
        }
        if (dv) {
          CMapM p(pp.data.data() + poff, nq, nk);
          SMapM(dv + voff, nk, dh, Strided(c)).noalias() += p.transpose() * dout;
        }
      }
    }
  });
}

Tensor fuse_scores(const Tensor& a, const Tensor& prev, const Tensor& alpha, int q_h, int q_w, int prev_h,
                   int prev_w) {
  require_rank(a, 4, "fuse_scores current");
  require_rank(prev, 4, "fuse_scores previous");
  const int bsz = a.dim(0), heads = a.dim(1), nq = a.dim(2), nk = a.dim(3);
  if (prev.dim(3) != nk) {
    throw ShapeError("cross-scale fusion: key/value token counts differ (" + std::to_string(prev.dim(3)) +
                     " vs " + std::to_string(nk) + ")");
  }
  if (prev.dim(0) != bsz || prev.dim(1) != heads) throw ShapeError("cross-scale fusion: batch/head mismatch");
  if (nq != q_h * q_w || prev.dim(2) != prev_h * prev_w) throw ShapeError("cross-scale fusion: query grid mismatch");
  if (alpha.numel() != 1) throw ShapeError("cross-scale fusion: alpha must be a scalar");
  auto ty = std::make_shared<std::vector<std::array<Tap, 2>>>(linear_taps(prev_h, q_h));
  auto tx = std::make_shared<std::vector<std::array<Tap, 2>>>(linear_taps(prev_w, q_w));
  const float al = alpha.item();
  const int np = prev.dim(2);
  // Interp(prev) is needed for the alpha gradient even when alpha is zero.
  auto up = std::make_shared<FloatVec>(static_cast<size_t>(a.numel()));
  for (int bh = 0; bh < bsz * heads; ++bh) {
    const float* src = prev.ptr() + static_cast<size_t>(bh) * np * nk;
    float* dst = up->data() + static_cast<size_t>(bh) * nq * nk;
    for (int i = 0; i < q_h; ++i) {
      for (int j = 0; j < q_w; ++j) {
        float* row = dst + (static_cast<size_t>(i) * q_w + j) * nk;
        for (const Tap& yi : (*ty)[static_cast<size_t>(i)]) {
          for (const Tap& xj : (*tx)[static_cast<size_t>(j)]) {
            const float wgt = yi.weight * xj.weight;
            const float* srow = src + (static_cast<size_t>(yi.index) * prev_w + xj.index) * nk;
            for (int t = 0; t < nk; ++t) row[t] += wgt * srow[t];
          }
        }
      }
    }
  }
  FloatVec out(a.data().begin(), a.data().end());
  if (al != 0.0f) {
    for (size_t i = 0; i < out.size(); ++i) out[i] += al * (*up)[i];
  }
  return make_result(a.shape(), std::move(out), {a, prev, alpha}, [=](Node& self) {
    Node& pa = parent(self, 0);
    Node& pp = parent(self, 1);
    Node& palpha = parent(self, 2);
    const float* dy = self.grad.data();
    if (pa.requires_grad) {
      float* g = pa.grad_ptr();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += dy[i];
    }
    if (palpha.requires_grad) {
      double s = 0.0;
      for (size_t i = 0; i < self.grad.size(); ++i) s += static_cast<double>(dy[i]) * (*up)[i];
      palpha.grad_ptr()[0] += static_cast<float>(s);
    }
    if (pp.requires_grad && al != 0.0f) {
      float* g = pp.grad_ptr();
      for (int bh = 0; bh < bsz * heads; ++bh) {
        const float* src = dy + static_cast<size_t>(bh) * nq * nk;
        float* dst = g + static_cast<size_t>(bh) * np * nk;
        for (int i = 0; i < q_h; ++i) {
          for (int j = 0; j < q_w; ++j) {
            const float* row = src + (static_cast<size_t>(i) * q_w + j) * nk;
            for (const Tap& yi : (*ty)[static_cast<size_t>(i)]) {
              for (const Tap& xj : (*tx)[static_cast<size_t>(j)]) {
                const float wgt = al * yi.weight * xj.weight;
                float* drow = dst + (static_cast<size_t>(yi.index) * prev_w + xj.index) * nk;
                for (int t = 0; t < nk; ++t) drow[t] += wgt * row[t];
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace icm::ops
