#include "icm/backbone.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "icm/errors.hpp"
#include "icm/ops.hpp"
#include "icm/optim.hpp"
#include "icm/synth_data.hpp"
#include "icm/task.hpp"

namespace icm {

void BackboneConfig::validate() const {
  if (stage_channels.size() != 4 || stage_depths.size() != 4) {
    throw ConfigError("backbone needs exactly 4 stages (got " + std::to_string(stage_channels.size()) +
                      " channel entries, " + std::to_string(stage_depths.size()) + " depth entries)");
  }
  for (size_t i = 0; i < 4; ++i) {
    if (stage_channels[i] <= 0 || stage_depths[i] <= 0) throw ConfigError("stage widths and depths must be positive");
    if (stage_channels[i] % num_heads != 0) throw ConfigError("stage channels must be divisible by num_heads");
  }
  if (num_heads <= 0) throw ConfigError("num_heads must be positive");
  if (patch_size != 4 || merge_factor != 2) throw ConfigError("backbone uses patch size 4 and merge factor 2");
  if (input_channels != 3) throw ConfigError("backbone expects 3 input channels");
  if (mlp_ratio <= 0) throw ConfigError("mlp_ratio must be positive");
}

int BackboneConfig::output_stride() const { return patch_size * merge_factor * merge_factor; }

json BackboneConfig::to_json() const {
  return {{"stage_channels", stage_channels}, {"stage_depths", stage_depths}, {"num_heads", num_heads},
          {"patch_size", patch_size},         {"merge_factor", merge_factor}, {"input_channels", input_channels},
          {"mlp_ratio", mlp_ratio}};
}

BackboneConfig BackboneConfig::from_json(const json& j) {
  BackboneConfig c;
  try {
    c.stage_channels = j.value("stage_channels", c.stage_channels);
    c.stage_depths = j.value("stage_depths", c.stage_depths);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.merge_factor = j.value("merge_factor", c.merge_factor);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("backbone config: ") + e.what());
  }
  c.validate();
  return c;
}

TransformerBlock::TransformerBlock(int channels, int h, int mlp_ratio, Rng& rng)
    : norm1(channels),
      norm2(channels),
      query(channels, channels, rng),
      key(channels, channels, rng),
      value(channels, channels, rng),
      proj(channels, channels, rng),
      up_proj(channels, channels * mlp_ratio, rng),
      down_proj(channels * mlp_ratio, channels, rng),
      heads(h) {}

Tensor TransformerBlock::forward(const Tensor& tokens) const {
  const Tensor x = norm1.forward(tokens);
  const Tensor q = query.forward(x);
  const Tensor k = key.forward(x);
  const Tensor v = value.forward(x);
  const Tensor probs = ops::softmax_lastdim(ops::attention_scores(q, k, heads));
  Tensor t = ops::add(tokens, proj.forward(ops::attention_context(probs, v, heads)));
  const Tensor hdn = ops::gelu(up_proj.forward(norm2.forward(t)));
  return ops::add(t, down_proj.forward(hdn));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  proj.collect(prefix + ".proj", out);
  norm2.collect(prefix + ".norm2", out);
  up_proj.collect(prefix + ".up_proj", out);
  down_proj.collect(prefix + ".down_proj", out);
}

Linear* TransformerBlock::projection(const std::string& target) {
  if (target == "query") return &query;
  if (target == "key") return &key;
  if (target == "value") return &value;
  if (target == "up_proj") return &up_proj;
  if (target == "down_proj") return &down_proj;
  return nullptr;
}

ParamList Backbone::parameters() const {
  ParamList out;
  for (size_t s = 0; s < stages.size(); ++s) {
    const std::string sp = "stage" + std::to_string(s);
    stages[s].embed.collect(sp + ".embed", out);
    for (size_t b = 0; b < stages[s].blocks.size(); ++b) {
      stages[s].blocks[b].collect(sp + ".block" + std::to_string(b), out);
    }
  }
  final_norm.collect("final_norm", out);
  return out;
}

Tensor Backbone::forward(const Tensor& images) const {
  Tensor x = images;
  for (const auto& st : stages) {
    x = st.embed.forward(x);
    const int h = x.dim(2), w = x.dim(3);
    Tensor t = ops::to_tokens(x);
    for (const auto& blk : st.blocks) t = blk.forward(t);
    x = ops::from_tokens(t, h, w);
  }
  const int h = x.dim(2), w = x.dim(3);
  return ops::from_tokens(final_norm.forward(ops::to_tokens(x)), h, w);
}

void Backbone::freeze() {
  set_trainable(parameters(), false);
  frozen = true;
}

void Backbone::unfreeze() {
  set_trainable(parameters(), true);
  frozen = false;
}

Backbone Backbone::deep_clone() const {
  Backbone copy = build_backbone(config, 0);
  deep_copy_into(parameters(), copy.parameters());
  copy.pretrain_fingerprint = pretrain_fingerprint;
  if (frozen) copy.freeze();
  return copy;
}

std::uint64_t Backbone::parameter_hash() const {
  std::vector<Tensor> ts;
  for (const auto& p : parameters()) ts.push_back(p.tensor);
  return hash_tensors(ts);
}

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0xbac4b07e));
  Backbone bb;
  bb.config = config;
  int in_c = config.input_channels;
  for (int s = 0; s < 4; ++s) {
    const int c = config.stage_channels[static_cast<size_t>(s)];
    BackboneStage st;
    if (s == 0) {
      st.embed = Conv2d(in_c, c, config.patch_size, config.patch_size, 0, rng);
    } else if (s < 3) {
      st.embed = Conv2d(in_c, c, config.merge_factor, config.merge_factor, 0, rng);
    } else {
      st.embed = Conv2d(in_c, c, 1, 1, 0, rng);
    }
    for (int b = 0; b < config.stage_depths[static_cast<size_t>(s)]; ++b) {
      st.blocks.emplace_back(c, config.num_heads, config.mlp_ratio, rng);
    }
    bb.stages.push_back(std::move(st));
    in_c = c;
  }
  bb.final_norm = LayerNorm(in_c);
  return bb;
}

json PretextTaskConfig::to_json() const {
  return {{"num_train", num_train},   {"num_val", num_val}, {"image_size", image_size},
          {"num_shape_classes", num_shape_classes}, {"batch_size", batch_size}, {"lr", lr},
          {"data_seed", data_seed}};
}

PretextTaskConfig PretextTaskConfig::from_json(const json& j) {
  PretextTaskConfig c;
  c.num_train = j.value("num_train", c.num_train);
  c.num_val = j.value("num_val", c.num_val);
  c.image_size = j.value("image_size", c.image_size);
  c.num_shape_classes = j.value("num_shape_classes", c.num_shape_classes);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.data_seed = j.value("data_seed", c.data_seed);
  return c;
}

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

Tensor class_logits(const Backbone& bb, const Linear& head, const Tensor& images) {
  return head.forward(ops::token_mean(ops::to_tokens(bb.forward(images))));
}

Tensor class_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  // log-softmax cross-entropy over [B, K]
  const int b = logits.dim(0), k = logits.dim(1);
  FloatVec onehot(static_cast<size_t>(b) * k, 0.0f);
  for (int i = 0; i < b; ++i) onehot[static_cast<size_t>(i) * k + labels[static_cast<size_t>(i)]] = 1.0f;
  const Tensor probs = ops::softmax_lastdim(logits);
  FloatVec lp(probs.data().begin(), probs.data().end());
  // Softmax + NLL composed with an explicit backward: d/dlogits = (p - y)/B.
  double loss = 0.0;
  for (int i = 0; i < b; ++i) loss -= std::log(std::max(1e-12f, lp[static_cast<size_t>(i) * k + labels[static_cast<size_t>(i)]]));
  return make_result({1}, {static_cast<float>(loss / b)}, {logits}, [b, k, lp, onehot](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    float* g = p.grad_ptr();
    for (size_t i = 0; i < lp.size(); ++i) g[i] += self.grad[0] * (lp[i] - onehot[i]) / static_cast<float>(b);
  });
}

double pretext_accuracy(const Backbone& bb, const Linear& head, const std::vector<synth::SyntheticScene>& scenes) {
  NoGradGuard ng;
  std::int64_t correct = 0, total = 0;
  for (size_t i = 0; i < scenes.size(); i += 8) {
    std::vector<const synth::SyntheticScene*> chunk;
    for (size_t j = i; j < std::min(scenes.size(), i + 8); ++j) chunk.push_back(&scenes[j]);
    const Tensor logits = class_logits(bb, head, stack_images(chunk));
    const int k = logits.dim(1);
    for (size_t r = 0; r < chunk.size(); ++r) {
      const auto row = static_cast<std::int64_t>(r) * k;
      int best = 0;
      for (int c = 1; c < k; ++c) {
        if (logits.at(row + c) > logits.at(row + best)) best = c;
      }
      if (best == chunk[r]->category) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

Backbone pretrain_backbone(Backbone bb, const PretextTaskConfig& pretext, int steps, std::uint64_t seed,
                           PretextReport* report) {
  if (bb.frozen) throw ConfigError("pretrain_backbone: backbone is already frozen");
  if (steps < 0) throw ArgumentError("pretrain_backbone: steps must be non-negative");
  const std::uint64_t init_hash = bb.parameter_hash();
  const json fp{{"pretext", pretext.to_json()}, {"steps", steps}, {"seed", seed}, {"init", hex64(init_hash)}};
  const std::string fp_str = fp.dump();
  bb.pretrain_fingerprint =
      hex64(fnv1a({reinterpret_cast<const std::uint8_t*>(fp_str.data()), fp_str.size()}));
  if (steps == 0) {
    bb.freeze();
    return bb;
  }
  const auto split = synth::make_split(pretext.num_train, pretext.num_val, pretext.data_seed);
  std::vector<synth::SyntheticScene> train, val;
  for (const auto& e : split.train) {
    train.push_back(synth::generate_scene(e.seed, pretext.image_size, pretext.image_size, pretext.num_shape_classes));
  }
  for (const auto& e : split.val) {
    val.push_back(synth::generate_scene(e.seed, pretext.image_size, pretext.image_size, pretext.num_shape_classes));
  }
  Rng rng(mix_seed(seed, 0x9e7e87));
  Linear head(bb.config.stage_channels.back(), pretext.num_shape_classes, rng);
  if (report) report->accuracy_before = pretext_accuracy(bb, head, val);
  ParamList params = bb.parameters();
  head.collect("head", params);
  set_trainable(params, true);
  Adam opt(params, AdamConfig{pretext.lr, 0.9, 0.999, 1e-8, 0.0});
  for (int step = 0; step < steps; ++step) {
    opt.set_lr(poly_lr(step, steps, pretext.lr, 0.9));
    std::vector<const synth::SyntheticScene*> batch;
    std::vector<int> labels;
    for (int i = 0; i < pretext.batch_size; ++i) {
      const auto& s = train[static_cast<size_t>(rng.below(static_cast<int>(train.size())))];
      batch.push_back(&s);
      labels.push_back(s.category);
    }
    opt.zero_grad();
    Tensor loss = class_cross_entropy(class_logits(bb, head, stack_images(batch)), labels);
    loss.backward();
    opt.step();
  }
  if (report) report->accuracy_after = pretext_accuracy(bb, head, val);
  bb.freeze();
  return bb;
}

Tensor extract_features(const Backbone& backbone, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != backbone.config.input_channels) {
    throw ShapeError("extract_features: expected [B, 3, H, W], got " + shape_str(images.shape()));
  }
  const int stride = backbone.config.output_stride();
  if (images.dim(2) % stride != 0 || images.dim(3) % stride != 0 || images.dim(2) == 0 || images.dim(3) == 0) {
    throw ShapeError("extract_features: image extent " + std::to_string(images.dim(2)) + "x" +
                     std::to_string(images.dim(3)) + " is not divisible by " + std::to_string(stride));
  }
  return backbone.forward(images);
}

void save_backbone(const std::filesystem::path& path, const Backbone& backbone) {
  save_arrays(path,
              json{{"kind", "backbone"},
                   {"config", backbone.config.to_json()},
                   {"frozen", backbone.frozen},
                   {"fingerprint", backbone.pretrain_fingerprint}},
              backbone.parameters());
}

Backbone load_backbone(const std::filesystem::path& path) {
  const ArrayFile f = load_arrays(path);
  if (f.header.value("kind", std::string()) != "backbone") throw DataError(path.string() + " is not a backbone checkpoint");
  Backbone bb = build_backbone(BackboneConfig::from_json(f.header.at("config")), 0);
  assign_arrays(f, bb.parameters());
  bb.pretrain_fingerprint = f.header.value("fingerprint", std::string());
  if (f.header.value("frozen", false)) bb.freeze();
  return bb;
}

}  // namespace icm
