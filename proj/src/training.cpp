#include "icm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "icm/errors.hpp"
#include "icm/ops.hpp"
#include "icm/optim.hpp"

namespace icm {

// ------------------------------------------------------------------ losses

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_mask(const Tensor& pred, const Tensor& valid, const char* what) {
  if (valid.rank() != 4 || valid.dim(0) != pred.dim(0) || valid.dim(1) != 1 || valid.dim(2) != pred.dim(2) ||
      valid.dim(3) != pred.dim(3)) {
    throw ShapeError(std::string(what) + ": mask shape " + shape_str(valid.shape()) + " does not fit " +
                     shape_str(pred.shape()));
  }
}

Tensor scalar_loss(double value, const Tensor& input, FloatVec grad) {
  return make_result({1}, {static_cast<float>(value)}, {input}, [grad = std::move(grad)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    float* g = p.grad_ptr();
    const float s = self.grad[0];
    for (size_t i = 0; i < grad.size(); ++i) g[i] += s * grad[i];
  });
}

double softplus_d(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor cross_entropy_loss(const Tensor& logits, const Tensor& labels, int ignore) {
  if (logits.rank() != 4 || labels.rank() != 4 || labels.dim(1) != 1 || labels.dim(0) != logits.dim(0) ||
      labels.dim(2) != logits.dim(2) || labels.dim(3) != logits.dim(3)) {
    throw ShapeError("cross_entropy_loss: logits " + shape_str(logits.shape()) + " vs labels " +
                     shape_str(labels.shape()));
  }
  const int b = logits.dim(0), k = logits.dim(1);
  const size_t hw = static_cast<size_t>(logits.dim(2)) * logits.dim(3);
  FloatVec grad(static_cast<size_t>(logits.numel()), 0.0f);
  double total = 0.0;
  std::int64_t n = 0;
  std::vector<double> prob(static_cast<size_t>(k));
  for (int bi = 0; bi < b; ++bi) {
    const float* lg = logits.ptr() + static_cast<size_t>(bi) * k * hw;
    float* gr = grad.data() + static_cast<size_t>(bi) * k * hw;
    for (size_t p = 0; p < hw; ++p) {
      const int lab = static_cast<int>(labels.at(static_cast<std::int64_t>(bi * hw + p)));
      if (lab == ignore) continue;
      if (lab < 0 || lab >= k) throw ArgumentError("cross_entropy_loss: label out of range");
      double mx = -1e300;
      for (int c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(lg[c * hw + p]));
      double z = 0.0;
      for (int c = 0; c < k; ++c) z += (prob[static_cast<size_t>(c)] = std::exp(lg[c * hw + p] - mx));
      for (int c = 0; c < k; ++c) prob[static_cast<size_t>(c)] /= z;
      total -= std::log(std::max(prob[static_cast<size_t>(lab)], 1e-300));
      for (int c = 0; c < k; ++c) gr[c * hw + p] = static_cast<float>(prob[static_cast<size_t>(c)] - (c == lab ? 1.0 : 0.0));
      ++n;
    }
  }
  if (n == 0) throw EmptyError("cross_entropy_loss: every pixel is ignored");
  for (float& g : grad) g /= static_cast<float>(n);
  return scalar_loss(total / n, logits, std::move(grad));
}

Tensor masked_l1_loss(const Tensor& pred, const Tensor& label, const Tensor& valid) {
  require_same(pred, label, "masked_l1_loss");
  require_mask(pred, valid, "masked_l1_loss");
  const int b = pred.dim(0), c = pred.dim(1);
  const size_t hw = static_cast<size_t>(pred.dim(2)) * pred.dim(3);
  FloatVec grad(static_cast<size_t>(pred.numel()), 0.0f);
  double total = 0.0;
  std::int64_t n = 0;
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      for (size_t p = 0; p < hw; ++p) {
        if (valid.at(static_cast<std::int64_t>(bi * hw + p)) == 0.0f) continue;
        const size_t i = (static_cast<size_t>(bi) * c + ci) * hw + p;
        const double d = static_cast<double>(pred.at(static_cast<std::int64_t>(i))) - label.at(static_cast<std::int64_t>(i));
        total += std::abs(d);
        grad[i] = d > 0 ? 1.0f : (d < 0 ? -1.0f : 0.0f);
        ++n;
      }
    }
  }
  if (n == 0) throw EmptyError("masked_l1_loss: no valid pixels");
  for (float& g : grad) g /= static_cast<float>(n);
  return scalar_loss(total / n, pred, std::move(grad));
}

Tensor cosine_loss(const Tensor& pred, const Tensor& label, const Tensor& valid) {
  require_same(pred, label, "cosine_loss");
  require_mask(pred, valid, "cosine_loss");
  if (pred.dim(1) != 3) throw ShapeError("cosine_loss: expected 3 channels");
  const int b = pred.dim(0);
  const size_t hw = static_cast<size_t>(pred.dim(2)) * pred.dim(3);
  FloatVec grad(static_cast<size_t>(pred.numel()), 0.0f);
  double total = 0.0;
  std::int64_t n = 0;
  constexpr double eps = 1e-8;
  for (int bi = 0; bi < b; ++bi) {
    const size_t base = static_cast<size_t>(bi) * 3 * hw;
    for (size_t p = 0; p < hw; ++p) {
      if (valid.at(static_cast<std::int64_t>(bi * hw + p)) == 0.0f) continue;
      double pv[3], lv[3];
      for (int c = 0; c < 3; ++c) {
        pv[c] = pred.at(static_cast<std::int64_t>(base + c * hw + p));
        lv[c] = label.at(static_cast<std::int64_t>(base + c * hw + p));
      }
      const double nl = std::sqrt(lv[0] * lv[0] + lv[1] * lv[1] + lv[2] * lv[2]);
      if (nl == 0.0) continue;
      const double np = std::max(std::sqrt(pv[0] * pv[0] + pv[1] * pv[1] + pv[2] * pv[2]), eps);
      const double dot = pv[0] * lv[0] + pv[1] * lv[1] + pv[2] * lv[2];
      const double cosv = dot / (np * nl);
      total += 1.0 - cosv;
      for (int c = 0; c < 3; ++c) {
        grad[base + c * hw + p] = static_cast<float>(-(lv[c] / (np * nl) - cosv * pv[c] / (np * np)));
      }
      ++n;
    }
  }
  if (n == 0) throw EmptyError("cosine_loss: no valid pixels");
  for (float& g : grad) g /= static_cast<float>(n);
  return scalar_loss(total / n, pred, std::move(grad));
}

Tensor weighted_bce_loss(const Tensor& logits, const Tensor& label, const Tensor& valid, float cap) {
  require_same(logits, label, "weighted_bce_loss");
  require_mask(logits, valid, "weighted_bce_loss");
  const size_t n_all = static_cast<size_t>(logits.numel());
  const size_t hw = static_cast<size_t>(logits.dim(2)) * logits.dim(3);
  const int c = logits.dim(1);
  const auto mask_at = [&](size_t i) {
    const size_t bi = i / (c * hw), p = i % hw;
    return valid.at(static_cast<std::int64_t>(bi * hw + p)) != 0.0f;
  };
  std::int64_t pos = 0, neg = 0;
  for (size_t i = 0; i < n_all; ++i) {
    if (!mask_at(i)) continue;
    (label.at(static_cast<std::int64_t>(i)) > 0.5f ? pos : neg) += 1;
  }
  if (pos + neg == 0) throw EmptyError("weighted_bce_loss: no valid pixels");
  const double w = pos > 0 ? std::min(static_cast<double>(neg) / pos, static_cast<double>(cap)) : 1.0;
  FloatVec grad(n_all, 0.0f);
  double total = 0.0;
  for (size_t i = 0; i < n_all; ++i) {
    if (!mask_at(i)) continue;
    const double x = logits.at(static_cast<std::int64_t>(i));
    const bool y = label.at(static_cast<std::int64_t>(i)) > 0.5f;
    if (y) {
      total += w * softplus_d(-x);
      grad[i] = static_cast<float>(w * (sigmoid_d(x) - 1.0));
    } else {
      total += softplus_d(x);
      grad[i] = static_cast<float>(sigmoid_d(x));
    }
  }
  const double n = static_cast<double>(pos + neg);
  for (float& g : grad) g = static_cast<float>(g / n);
  return scalar_loss(total / n, logits, std::move(grad));
}

Tensor task_loss(const Tensor& pred, const Batch& batch, const TaskSpec& task) {
  if (pred.dim(1) != task.channels) {
    throw ShapeError("task_loss: prediction has " + std::to_string(pred.dim(1)) + " channels, task needs " +
                     std::to_string(task.channels));
  }
  switch (task.loss) {
    case LossId::cross_entropy: return cross_entropy_loss(pred, batch.target);
    case LossId::l1: return masked_l1_loss(pred, batch.target, batch.valid);
    case LossId::cosine: return cosine_loss(pred, batch.target, batch.valid);
    case LossId::weighted_bce: return weighted_bce_loss(pred, batch.target, batch.valid);
  }
  throw ArgumentError("task_loss: unknown loss");
}

double compose_loss(double rate_bpp, double task_final, double task_prelim, double lambda, double mu, bool inter_sup) {
  return rate_bpp + lambda * (task_final + (inter_sup ? mu * task_prelim : 0.0));
}

// ------------------------------------------------------------------ config

TrainMode parse_mode(const std::string& s) {
  if (s == "full_ft") return TrainMode::full_ft;
  if (s == "dora_ft") return TrainMode::dora_ft;
  if (s == "fixed") return TrainMode::fixed;
  if (s == "scratch") return TrainMode::scratch;
  throw ConfigError("unknown training mode '" + s + "' (expected full_ft, dora_ft, fixed or scratch)");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::full_ft: return "full_ft";
    case TrainMode::dora_ft: return "dora_ft";
    case TrainMode::fixed: return "fixed";
    case TrainMode::scratch: return "scratch";
  }
  return "?";
}

std::string series_label(TrainMode m, bool inter_sup, bool full_decoder) {
  switch (m) {
    case TrainMode::full_ft: return "Full FT";
    case TrainMode::fixed: return "Fixed Pre-trained";
    case TrainMode::scratch: return "Scratch";
    case TrainMode::dora_ft:
      if (full_decoder) return "DoRA Full Dec";
      if (!inter_sup) return "DoRA No InterSup";
      return "DoRA FT";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(poly_power > 0.0)) throw ConfigError("poly_power must be positive");
  if (decoder != "lc" && decoder != "full") throw ConfigError("decoder must be 'lc' or 'full'");
  if (mu < 0.0) throw ConfigError("mu must be non-negative");
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
  if (prelim_channels < 1 || entropy_hidden < 1) throw ConfigError("layer widths must be positive");
  if (mode == TrainMode::dora_ft) adapter.validate();
  if (data.image_size % 64 != 0 || data.image_size <= 0) {
    throw ConfigError("image_size must be a positive multiple of 64 for the three-stage decoder");
  }
  if (data.n_train < 1 || data.n_val < 1) throw ConfigError("dataset sizes must be >= 1");
  if (data.num_shape_classes < 1) throw ConfigError("num_shape_classes must be >= 1");
  if (backbone.pretrain_steps < 0) throw ConfigError("pretrain_steps must be >= 0");
  for (double l : lambdas) {
    if (!(l > 0.0)) throw ConfigError("every sweep lambda must be positive");
  }
  backbone.config.validate();
}

json TrainConfig::to_json() const {
  return {{"task", to_string(task)},
          {"lambda", lambda},
          {"iterations", iterations},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"poly_power", poly_power},
          {"mode", to_string(mode)},
          {"inter_sup", inter_sup},
          {"decoder", decoder},
          {"seed", seed},
          {"mu", mu},
          {"log_interval", log_interval},
          {"adapter", adapter.to_json()},
          {"prelim_channels", prelim_channels},
          {"entropy_hidden", entropy_hidden},
          {"data",
           {{"n_train", data.n_train},
            {"n_val", data.n_val},
            {"image_size", data.image_size},
            {"num_shape_classes", data.num_shape_classes},
            {"seed", data.seed}}},
          {"backbone",
           {{"path", backbone.path},
            {"config", backbone.config.to_json()},
            {"seed", backbone.seed},
            {"pretrain_steps", backbone.pretrain_steps},
            {"pretext", backbone.pretext.to_json()}}},
          {"lambdas", lambdas},
          {"seeds", seeds}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    c.task = parse_task(j.value("task", to_string(c.task)));
    c.lambda = j.value("lambda", c.lambda);
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.poly_power = j.value("poly_power", c.poly_power);
    c.mode = parse_mode(j.value("mode", to_string(c.mode)));
    c.inter_sup = j.value("inter_sup", c.inter_sup);
    c.decoder = j.value("decoder", c.decoder);
    c.seed = j.value("seed", c.seed);
    c.mu = j.value("mu", c.mu);
    c.log_interval = j.value("log_interval", c.log_interval);
    if (j.contains("adapter")) c.adapter = AdapterPlan::from_json(j.at("adapter"));
    c.prelim_channels = j.value("prelim_channels", c.prelim_channels);
    c.entropy_hidden = j.value("entropy_hidden", c.entropy_hidden);
    if (j.contains("data")) {
      const json& d = j.at("data");
      c.data.n_train = d.value("n_train", c.data.n_train);
      c.data.n_val = d.value("n_val", c.data.n_val);
      c.data.image_size = d.value("image_size", c.data.image_size);
      c.data.num_shape_classes = d.value("num_shape_classes", c.data.num_shape_classes);
      c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("backbone")) {
      const json& b = j.at("backbone");
      c.backbone.path = b.value("path", c.backbone.path);
      if (b.contains("config")) c.backbone.config = BackboneConfig::from_json(b.at("config"));
      c.backbone.seed = b.value("seed", c.backbone.seed);
      c.backbone.pretrain_steps = b.value("pretrain_steps", c.backbone.pretrain_steps);
      if (b.contains("pretext")) c.backbone.pretext = PretextTaskConfig::from_json(b.at("pretext"));
    }
    c.lambdas = j.value("lambdas", c.lambdas);
    c.seeds = j.value("seeds", c.seeds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) { return TrainConfig::from_json(read_json_file(path)); }

// ------------------------------------------------------------------ model

Backbone obtain_backbone(const BackboneSource& src) {
  if (!src.path.empty()) {
    Backbone bb = load_backbone(src.path);
    if (!bb.frozen) bb.freeze();
    return bb;
  }
  return pretrain_backbone(build_backbone(src.config, src.seed), src.pretext, src.pretrain_steps, src.seed);
}

IcmModel::IcmModel(const TrainConfig& cfg, const Backbone& pretrained) : cfg_(cfg) {
  cfg_.validate();
  task_ = task_spec(cfg.task, cfg.data.num_shape_classes + 1);
  switch (cfg.mode) {
    case TrainMode::fixed:
      if (!pretrained.frozen) throw ConfigError("fixed mode requires a frozen pretrained backbone");
      backbone_ = pretrained;
      break;
    case TrainMode::dora_ft:
      if (!pretrained.frozen) throw ConfigError("dora_ft mode requires a frozen pretrained backbone");
      backbone_ = pretrained;
      adapted_ = inject_adapters(backbone_, cfg.adapter, mix_seed(cfg.seed, 0xd0a));
      break;
    case TrainMode::full_ft:
      backbone_ = pretrained.deep_clone();
      backbone_.unfreeze();
      break;
    case TrainMode::scratch:
      backbone_ = build_backbone(pretrained.config, mix_seed(cfg.seed, 0x5c7a7c4));
      break;
  }
  Rng rng(mix_seed(cfg.seed, 0xdec0de));
  const int c4 = backbone_.config.stage_channels.back();
  prelim_ = PrelimDecoder(c4, cfg.prelim_channels, task_, rng);
  latent_channels_ = cfg.prelim_channels + task_.channels;
  entropy_ = DualSpatialModel(latent_channels_, cfg.entropy_hidden, rng);
  decoder_ = LCDecoder(latent_channels_, task_, cfg.decoder == "full" ? DecoderConfig::full_variant() : DecoderConfig{},
                       rng);
}

Tensor IcmModel::features(const Tensor& images) const {
  return adapted_ ? adapted_->forward(images) : extract_features(backbone_, images);
}

IcmModel::Output IcmModel::forward(const Tensor& images, bool training, std::uint64_t noise_seed) {
  Output out;
  out.prelim = prelim_.forward(features(images), training);
  out.y = ops::concat_channels({out.prelim.task_features, out.prelim.prelim_pred});
  out.yhat = quantize(out.y, training ? QuantMode::noise : QuantMode::round, noise_seed);
  out.rate_bits = entropy_.rate_bits(out.yhat);
  out.prediction = decoder_.forward(out.yhat);
  return out;
}

Tensor IcmModel::encode_latent(const Tensor& images) {
  NoGradGuard ng;
  const PrelimOutput p = prelim_.forward(features(images), false);
  return quantize(ops::concat_channels({p.task_features, p.prelim_pred}), QuantMode::round);
}

Tensor IcmModel::decode_prediction(const Tensor& yhat) const { return decoder_.forward(yhat); }

ParamList IcmModel::trainable() const {
  ParamList out;
  if (adapted_) {
    out = adapted_->adapter_parameters();
  } else if (cfg_.mode == TrainMode::full_ft || cfg_.mode == TrainMode::scratch) {
    out = backbone_.parameters();
  }
  auto p = prelim_.parameters();
  out.insert(out.end(), p.begin(), p.end());
  auto e = entropy_.parameters();
  out.insert(out.end(), e.begin(), e.end());
  auto d = decoder_.parameters();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

ParamList IcmModel::buffers() const { return prelim_.buffers(); }

ParamList IcmModel::backbone_parameters() const { return backbone_.parameters(); }

json LogRecord::to_json() const {
  return {{"step", step},          {"lr", lr},
          {"rate_bpp", loss.rate_bpp}, {"task_final", loss.task_final},
          {"task_prelim", loss.task_prelim}, {"total", loss.total},
          {"frozen_grad_norm", frozen_grad_norm}};
}

Dataset build_dataset(const DataConfig& cfg) {
  const auto split = synth::make_split(cfg.n_train, cfg.n_val, cfg.seed);
  Dataset d;
  for (const auto& e : split.train) {
    auto s = synth::generate_scene(e.seed, cfg.image_size, cfg.image_size, cfg.num_shape_classes);
    s.scene_id = e.scene_id;
    d.train.push_back(std::move(s));
  }
  for (const auto& e : split.val) {
    auto s = synth::generate_scene(e.seed, cfg.image_size, cfg.image_size, cfg.num_shape_classes);
    s.scene_id = e.scene_id;
    d.val.push_back(std::move(s));
  }
  return d;
}

TrainResult train(IcmModel& model, const Dataset& data, const std::filesystem::path& out_dir) {
  const TrainConfig& cfg = model.config();
  if (data.train.empty()) throw DataError("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const ParamList params = model.trainable();
  for (const auto& p : params) p.tensor.node()->requires_grad = true;
  const bool base_frozen = cfg.mode == TrainMode::fixed || cfg.mode == TrainMode::dora_ft;
  const ParamList frozen = base_frozen ? model.backbone_parameters() : ParamList{};
  Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(mix_seed(cfg.seed, 0x7a1));
  std::vector<size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();

  std::ofstream log_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_file.open(out_dir / "log.jsonl");
    if (!log_file) throw DataError("cannot write training log in " + out_dir.string());
  }
  TrainResult result;
  const int b = cfg.batch_size;
  const double pixels = static_cast<double>(b) * cfg.data.image_size * cfg.data.image_size;
  for (int step = 0; step < cfg.iterations; ++step) {
    const double lr = poly_lr(step, cfg.iterations, cfg.lr, cfg.poly_power);
    opt.set_lr(lr);
    std::vector<const synth::SyntheticScene*> scenes;
    for (int i = 0; i < b; ++i) {
      if (cursor == order.size()) {
        for (size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.next() % k]);
        cursor = 0;
      }
      scenes.push_back(&data.train[order[cursor++]]);
    }
    const Batch batch = make_batch(scenes, cfg.task);
    opt.zero_grad();
    auto out = model.forward(batch.images, true, mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    const Tensor rate = ops::scale(out.rate_bits, static_cast<float>(1.0 / pixels));
    const Tensor lf = task_loss(out.prediction, batch, model.task());
    const Tensor lp = task_loss(out.prelim.upsampled_pred, batch, model.task());
    Tensor task_term = cfg.inter_sup ? ops::add(lf, ops::scale(lp, static_cast<float>(cfg.mu))) : lf;
    Tensor total = ops::add(rate, ops::scale(task_term, static_cast<float>(cfg.lambda)));
    total.backward();
    LossBreakdown lb{rate.item(), lf.item(), lp.item(), 0.0};
    lb.total = compose_loss(lb.rate_bpp, lb.task_final, lb.task_prelim, cfg.lambda, cfg.mu, cfg.inter_sup);
    if (!std::isfinite(lb.total)) throw NumericalError("training diverged at step " + std::to_string(step));
    if (step % cfg.log_interval == 0 || step == cfg.iterations - 1) {
      LogRecord rec{step, lr, lb, 0.0};
      double sq = 0.0;
      for (const auto& p : frozen) {
        if (!p.tensor.has_grad()) continue;
        for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
      }
      rec.frozen_grad_norm = std::sqrt(sq);
      result.log.push_back(rec);
      if (log_file) log_file << rec.to_json().dump() << "\n";
    }
    opt.step();
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!out_dir.empty()) save_checkpoint(out_dir, model);
  return result;
}

void save_checkpoint(const std::filesystem::path& dir, const IcmModel& model) {
  std::filesystem::create_directories(dir);
  ParamList arrays = model.trainable();
  const ParamList bufs = model.buffers();
  arrays.insert(arrays.end(), bufs.begin(), bufs.end());
  json header{{"kind", "icm_model"},
              {"config", model.config().to_json()},
              {"backbone_fingerprint", model.backbone().pretrain_fingerprint}};
  save_arrays(dir / "model.icma", header, arrays);
  write_json_file(dir / "config.json", model.config().to_json());
}

std::unique_ptr<IcmModel> load_checkpoint(const std::filesystem::path& dir) {
  const ArrayFile f = load_arrays(dir / "model.icma");
  if (f.header.value("kind", std::string()) != "icm_model") throw DataError(dir.string() + " is not a model checkpoint");
  const TrainConfig cfg = TrainConfig::from_json(f.header.at("config"));
  const Backbone bb = obtain_backbone(cfg.backbone);
  const std::string fp = f.header.value("backbone_fingerprint", std::string());
  const bool needs_frozen = cfg.mode == TrainMode::fixed || cfg.mode == TrainMode::dora_ft;
  if (needs_frozen && fp != bb.pretrain_fingerprint) {
    throw IncompatibleModelError("checkpoint was trained against a different backbone (fingerprint mismatch)");
  }
  auto model = std::make_unique<IcmModel>(cfg, bb);
  ParamList dst = model->trainable();
  const ParamList bufs = model->buffers();
  dst.insert(dst.end(), bufs.begin(), bufs.end());
  assign_arrays(f, dst);
  return model;
}

}  // namespace icm
