#include "icm/lc_decoder.hpp"

#include <cmath>

#include "icm/errors.hpp"
#include "icm/ops.hpp"

namespace icm {

AttentionStage::AttentionStage(int idx, int c, int out_c, int h, int mlp_ratio, int qs, int ks, Rng& rng)
    : index(idx),
      channels(c),
      heads(h),
      q_stride(qs),
      kv_stride(ks),
      norm1(c),
      norm2(c),
      wq(c, c, rng),
      wk(c, c, rng),
      wv(c, c, rng),
      proj(c, c, rng),
      up(c, c * mlp_ratio, rng),
      down(c * mlp_ratio, c, rng),
      alpha({1}, 0.0f, true),
      out_proj(c, out_c, 1, 1, 0, rng) {
  if (qs > 1) q_down = DepthwiseConv2d(c, 3, qs, 1, rng);
  if (ks > 1) kv_down = DepthwiseConv2d(c, ks, ks, 0, rng);
}

AttentionStage::Result AttentionStage::forward(const Tensor& x, const Tensor* prev, int prev_qh, int prev_qw,
                                               StageTrace* trace) const {
  const int hh = x.dim(2), ww = x.dim(3);
  if (x.dim(1) != channels) throw ShapeError("decoder stage expects " + std::to_string(channels) + " channels");
  if (hh % kv_stride != 0 || ww % kv_stride != 0 || hh % q_stride != 0 || ww % q_stride != 0) {
    throw ShapeError("decoder stage " + std::to_string(index) + ": " + std::to_string(hh) + "x" + std::to_string(ww) +
                     " is not divisible by k_s = " + std::to_string(kv_stride));
  }
  const Tensor tokens = ops::to_tokens(x);
  const Tensor xn = ops::from_tokens(norm1.forward(tokens), hh, ww);
  const Tensor qmap = q_stride > 1 ? q_down.forward(xn) : xn;
  const Tensor kvmap = kv_stride > 1 ? kv_down.forward(xn) : xn;
  const int qh = qmap.dim(2), qw = qmap.dim(3);
  const Tensor kv_tokens = ops::to_tokens(kvmap);
  const Tensor q = wq.forward(ops::to_tokens(qmap));
  const Tensor k = wk.forward(kv_tokens);
  const Tensor v = wv.forward(kv_tokens);
  Tensor scores = ops::attention_scores(q, k, heads);
  if (prev) scores = ops::fuse_scores(scores, *prev, alpha, qh, qw, prev_qh, prev_qw);
  const Tensor ctx = proj.forward(ops::attention_context(ops::softmax_lastdim(scores), v, heads));
  Tensor attn = ops::from_tokens(ctx, qh, qw);
  if (qh != hh || qw != ww) attn = ops::bicubic_resize(attn, hh, ww);
  Tensor t = ops::add(tokens, ops::to_tokens(attn));
  t = ops::add(t, down.forward(ops::gelu(up.forward(norm2.forward(t)))));
  const Tensor up2 = ops::bicubic_resize(ops::from_tokens(t, hh, ww), 2 * hh, 2 * ww);
  if (trace) {
    trace->stage = index;
    trace->height = hh;
    trace->width = ww;
    trace->channels = channels;
    trace->kv_stride = kv_stride;
    trace->queries = qh * qw;
    trace->kv_tokens = kvmap.dim(2) * kvmap.dim(3);
    trace->scores = scores.shape();
    trace->fused = prev != nullptr;
  }
  return {out_proj.forward(up2), scores};
}

void AttentionStage::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  if (q_stride > 1) q_down.collect(prefix + ".q_down", out);
  if (kv_stride > 1) kv_down.collect(prefix + ".kv_down", out);
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  proj.collect(prefix + ".proj", out);
  norm2.collect(prefix + ".norm2", out);
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
  out.push_back({prefix + ".alpha", alpha});
  out_proj.collect(prefix + ".out_proj", out);
}

DecoderConfig DecoderConfig::full_variant() {
  DecoderConfig c;
  c.stage_channels = {64, 32, 16, 8};
  c.fusion = false;
  c.full = true;
  return c;
}

LCDecoder::LCDecoder(int latent_channels, const TaskSpec& task, const DecoderConfig& cfg, Rng& rng)
    : cfg_(cfg), latent_channels_(latent_channels) {
  const size_t n = cfg.stage_channels.size();
  if (n != (cfg.full ? 4u : 3u)) throw ConfigError("decoder needs 3 stages (4 for the full variant)");
  stem_ = Conv2d(latent_channels, cfg.stage_channels[0], 1, 1, 0, rng);
  for (size_t s = 0; s < n; ++s) {
    const int c = cfg.stage_channels[s];
    const int next = s + 1 < n ? cfg.stage_channels[s + 1] : c;
    const int idx = static_cast<int>(s) + 1;
    if (cfg.full) {
      stages_.emplace_back(idx, c, next, cfg.heads, cfg.mlp_ratio, 1, 1, rng);
    } else {
      stages_.emplace_back(idx, c, next, cfg.heads, cfg.mlp_ratio, 2, 1 << (idx + 1), rng);
    }
  }
  head_ = Conv2d(cfg.stage_channels.back(), task.channels, 1, 1, 0, rng);
}

void LCDecoder::check_latent(int h, int w) const {
  if (h <= 0 || w <= 0) throw ShapeError("decoder: empty latent grid");
  int hh = h, ww = w;
  for (const auto& st : stages_) {
    if (hh % st.kv_stride != 0 || ww % st.kv_stride != 0 || hh % st.q_stride != 0 || ww % st.q_stride != 0) {
      throw ShapeError("decoder: latent grid " + std::to_string(h) + "x" + std::to_string(w) +
                       " is not divisible through stage " + std::to_string(st.index) +
                       " (image sides must be multiples of " + std::to_string(16 * 4) + ")");
    }
    if (cfg_.full) {
      const std::int64_t n = static_cast<std::int64_t>(hh) * ww;
      if (n * n * cfg_.heads > cfg_.score_budget) {
        throw MemoryBudgetError("full decoder: score tensor of " + std::to_string(n * n * cfg_.heads) +
                                " elements per image exceeds the budget of " + std::to_string(cfg_.score_budget));
      }
    }
    hh *= 2;
    ww *= 2;
  }
}

Tensor LCDecoder::forward(const Tensor& latent, DecoderTrace* trace) const {
  if (latent.rank() != 4 || latent.dim(1) != latent_channels_) {
    throw ShapeError("decoder expects " + std::to_string(latent_channels_) + " latent channels, got " +
                     shape_str(latent.shape()));
  }
  check_latent(latent.dim(2), latent.dim(3));
  Tensor x = stem_.forward(latent);
  Tensor prev;
  int prev_qh = 0, prev_qw = 0;
  if (trace) trace->stages.clear();
  for (const auto& st : stages_) {
    StageTrace tr;
    const bool fuse = cfg_.fusion && prev.defined();
    const int qh = x.dim(2) / st.q_stride, qw = x.dim(3) / st.q_stride;
    auto r = st.forward(x, fuse ? &prev : nullptr, prev_qh, prev_qw, trace ? &tr : nullptr);
    if (trace) trace->stages.push_back(tr);
    x = r.features;
    prev = r.scores;
    prev_qh = qh;
    prev_qw = qw;
  }
  Tensor out = decode_final(x);
  if (trace) trace->output = out.shape();
  return out;
}

Tensor LCDecoder::decode_final(const Tensor& features) const {
  Tensor out = head_.forward(features);
  if (!cfg_.full) out = ops::bicubic_resize(out, 2 * out.dim(2), 2 * out.dim(3));
  return out;
}

ParamList LCDecoder::parameters() const {
  ParamList out;
  stem_.collect("decoder.stem", out);
  for (size_t s = 0; s < stages_.size(); ++s) stages_[s].collect("decoder.stage" + std::to_string(s + 1), out);
  head_.collect("decoder.head", out);
  return out;
}

std::int64_t decoder_macs(const DecoderConfig& cfg, int latent_channels, int task_channels, int h, int w) {
  using I = std::int64_t;
  const size_t n = cfg.stage_channels.size();
  I hh = h, ww = w;
  I macs = hh * ww * latent_channels * cfg.stage_channels[0];
  for (size_t s = 0; s < n; ++s) {
    const I c = cfg.stage_channels[s];
    const I next = s + 1 < n ? cfg.stage_channels[s + 1] : c;
    const I q_stride = cfg.full ? 1 : 2;
    const I kv_stride = cfg.full ? 1 : (I{1} << (s + 2));
    const I hw = hh * ww;
    const I nq = hw / (q_stride * q_stride);
    const I nk = hw / (kv_stride * kv_stride);
    if (q_stride > 1) macs += nq * c * 9;
    if (kv_stride > 1) macs += nk * c * kv_stride * kv_stride;
    macs += nq * c * c + 2 * nk * c * c;  // Wq, Wk, Wv
    macs += 2 * nq * nk * c;              // scores and context over all heads
    macs += nq * c * c;                   // output projection
    if (nq != hw) macs += hw * c * 8;     // bicubic back to H x W (separable, 4 taps per axis)
    macs += 2 * hw * c * c * cfg.mlp_ratio;
    macs += 4 * hw * c * 8;               // 2x bicubic upsample
    macs += 4 * hw * c * next;            // 1x1 projection
    hh *= 2;
    ww *= 2;
  }
  macs += hh * ww * cfg.stage_channels.back() * task_channels;
  if (!cfg.full) macs += 4 * hh * ww * task_channels * 8;
  return macs;
}

}  // namespace icm
