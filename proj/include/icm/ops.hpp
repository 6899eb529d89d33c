#pragma once

#include <optional>
#include <vector>

#include "icm/tensor.hpp"

// Differentiable tensor operations. Feature maps are NCHW, token sequences
// are [B, N, C], linear weights are [in, out] so that y = x·W.
namespace icm::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);
/// max(a, floor) whose gradient still flows where it would push a upward.
Tensor lower_bound(const Tensor& a, float floor);

/// x[..., in] · w[in, out] (+ b[out]).
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b = std::nullopt);
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-6f);
Tensor softmax_lastdim(const Tensor& x);

/// Batch norm over (B, H, W) per channel. In training mode running stats are
/// updated in place with the given momentum.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, float momentum = 0.1f, float eps = 1e-5f);

/// Dense convolution, w is [Cout, Cin, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int stride, int pad);
/// Depth-wise convolution, w is [C, 1, k, k].
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int stride,
                        int pad);

Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& t, int h, int w);
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int start, int count);
Tensor broadcast_channels(const Tensor& v, int batch, int h, int w);
/// [B, N, C] -> [B, C]
Tensor token_mean(const Tensor& t);

/// Separable bicubic resize (Keys kernel, a = -0.5, half-pixel centres,
/// replicated borders).
Tensor bicubic_resize(const Tensor& x, int out_h, int out_w);

/// Pre-softmax scores Q·Kᵀ/sqrt(dh), shape [B, heads, Nq, Nk].
Tensor attention_scores(const Tensor& q, const Tensor& k, int heads);
/// probs [B, heads, Nq, Nk] applied to v [B, Nk, C] -> [B, Nq, C].
Tensor attention_context(const Tensor& probs, const Tensor& v, int heads);

/// a + alpha·Interp(prev): prev's query axis is a (prev_h, prev_w) grid that is
/// bilinearly resized to (q_h, q_w); the key axis is index-aligned. When alpha
/// is exactly zero the forward value is a bitwise copy of a.
Tensor fuse_scores(const Tensor& a, const Tensor& prev, const Tensor& alpha, int q_h, int q_w,
                   int prev_h, int prev_w);

}  // namespace icm::ops
