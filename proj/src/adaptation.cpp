#include "icm/adaptation.hpp"

#include <algorithm>
#include <cmath>

#include "icm/ops.hpp"

namespace icm {

namespace {

using MatF = RowMat<float>;
using VecF = RowVec<float>;
using MapC = Eigen::Map<const MatF>;
using Map = Eigen::Map<MatF>;

const std::vector<std::string>& known_targets() {
  static const std::vector<std::string> t{"query", "key", "value", "up_proj", "down_proj"};
  return t;
}

MapC as_mat(const Tensor& t, int rows, int cols) { return MapC(t.ptr(), rows, cols); }

}  // namespace

void AdapterPlan::validate() const {
  if (rank < 1) throw ConfigError("adapter rank must be >= 1");
  if (targets.empty()) throw ConfigError("adapter plan has no targets");
  for (const auto& t : targets) {
    if (std::find(known_targets().begin(), known_targets().end(), t) == known_targets().end()) {
      throw ConfigError("unknown adapter target '" + t + "'");
    }
  }
}

json AdapterPlan::to_json() const {
  return {{"kind", kind == AdapterKind::dora ? "dora" : "lora"},
          {"rank", rank},
          {"targets", targets},
          {"task", task},
          {"lora_scaling", lora_scaling},
          {"stop_grad_norm", stop_grad_norm}};
}

AdapterPlan AdapterPlan::from_json(const json& j) {
  AdapterPlan p;
  try {
    const std::string kind = j.value("kind", std::string("dora"));
    if (kind == "dora") {
      p.kind = AdapterKind::dora;
    } else if (kind == "lora") {
      p.kind = AdapterKind::lora;
    } else {
      throw ConfigError("unknown adapter kind '" + kind + "'");
    }
    p.rank = j.value("rank", p.rank);
    p.targets = j.value("targets", p.targets);
    p.task = j.value("task", p.task);
    p.lora_scaling = j.value("lora_scaling", p.lora_scaling);
    p.stop_grad_norm = j.value("stop_grad_norm", p.stop_grad_norm);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("adapter plan: ") + e.what());
  }
  p.validate();
  return p;
}

std::vector<AdapterPlan> ablation_plans() {
  AdapterPlan lora_qv{AdapterKind::lora, 16, {"query", "value"}, "", 1.0f, false};
  AdapterPlan dora_qkv8{AdapterKind::dora, 8, {"query", "key", "value"}, "", 1.0f, false};
  AdapterPlan dora_qkv16{AdapterKind::dora, 16, {"query", "key", "value"}, "", 1.0f, false};
  AdapterPlan dora_all8{AdapterKind::dora, 8, {"query", "key", "value", "up_proj", "down_proj"}, "", 1.0f, false};
  return {lora_qv, dora_qkv8, dora_qkv16, dora_all8};
}

DoRAAdapter::DoRAAdapter(const Tensor& base_weight, int rank, Rng& rng) {
  const int d = base_weight.dim(0), k = base_weight.dim(1);
  const VecF norms = column_norms<float>(MatF(as_mat(base_weight, d, k)));
  magnitude = Tensor({k}, FloatVec(norms.data(), norms.data() + k), true);
  b = Tensor({d, rank}, 0.0f, true);
  a = uniform_tensor({rank, k}, 1.0f / std::sqrt(static_cast<float>(rank)), rng, true);
}

Tensor DoRAAdapter::forward(const Tensor& x, const Tensor& base_weight, const Tensor& base_bias) const {
  return dora_linear(x, base_weight, base_bias, magnitude, b, a, eps, stop_grad_norm);
}

void DoRAAdapter::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".m", magnitude});
  out.push_back({prefix + ".B", b});
  out.push_back({prefix + ".A", a});
}

std::int64_t DoRAAdapter::trainable_count() const { return magnitude.numel() + b.numel() + a.numel(); }

Tensor DoRAAdapter::effective_weight(const Tensor& base_weight) const {
  const int d = base_weight.dim(0), k = base_weight.dim(1), r = rank();
  const MatF w = dora::effective_weight<float>(MatF(as_mat(base_weight, d, k)), VecF(as_mat(magnitude, 1, k)),
                                               MatF(as_mat(b, d, r)), MatF(as_mat(a, r, k)), 0.0f);
  return Tensor({d, k}, FloatVec(w.data(), w.data() + w.size()));
}

LoRAAdapter::LoRAAdapter(const Tensor& base_weight, int rank, float s, Rng& rng) : scaling(s) {
  const int d = base_weight.dim(0), k = base_weight.dim(1);
  b = Tensor({d, rank}, 0.0f, true);
  a = uniform_tensor({rank, k}, 1.0f / std::sqrt(static_cast<float>(rank)), rng, true);
}

Tensor LoRAAdapter::forward(const Tensor& x, const Tensor& base_weight, const Tensor& base_bias) const {
  const Tensor base = ops::linear(x, base_weight, base_bias);
  const Tensor low = ops::linear(ops::linear(x, b), a);
  return ops::add(base, ops::scale(low, scaling));
}

void LoRAAdapter::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".B", b});
  out.push_back({prefix + ".A", a});
}

std::int64_t LoRAAdapter::trainable_count() const { return b.numel() + a.numel(); }

Tensor LoRAAdapter::effective_weight(const Tensor& base_weight) const {
  const int d = base_weight.dim(0), k = base_weight.dim(1), r = b.dim(1);
  const MatF w = MatF(as_mat(base_weight, d, k)) + scaling * (MatF(as_mat(b, d, r)) * MatF(as_mat(a, r, k)));
  return Tensor({d, k}, FloatVec(w.data(), w.data() + w.size()));
}

Tensor dora_linear(const Tensor& x, const Tensor& base_weight, const Tensor& base_bias, const Tensor& magnitude,
                   const Tensor& b, const Tensor& a, float eps, bool stop_grad_norm) {
  const int d = base_weight.dim(0), k = base_weight.dim(1), r = b.dim(1);
  if (x.rank() < 1 || x.dim(-1) != d) {
    throw ShapeError("dora_linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(base_weight.shape()));
  }
  if (magnitude.numel() != k || b.dim(0) != d || a.dim(0) != r || a.dim(1) != k) {
    throw ShapeError("dora_linear: adapter shapes do not conform");
  }
  const int n = static_cast<int>(x.numel() / d);
  const MatF w0 = as_mat(base_weight, d, k);
  const VecF m = as_mat(magnitude, 1, k);
  const MatF bm = as_mat(b, d, r);
  const MatF am = as_mat(a, r, k);
  const MatF weff = dora::effective_weight<float>(w0, m, bm, am, eps);
  Shape out_shape = x.shape();
  out_shape.back() = k;
  FloatVec out(static_cast<size_t>(n) * k);
  Map y(out.data(), n, k);
  y.noalias() = as_mat(x, n, d) * weff;
  if (base_bias.defined()) y.rowwise() += VecF(as_mat(base_bias, 1, k));
  std::vector<Tensor> parents{x, magnitude, b, a};
  if (base_bias.defined()) parents.push_back(base_bias);
  return make_result(std::move(out_shape), std::move(out), parents,
                     [=](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pm = *self.parents[1];
                       Node& pb = *self.parents[2];
                       Node& pa = *self.parents[3];
                       const MapC dy(self.grad.data(), n, k);
                       if (px.requires_grad) Map(px.grad_ptr(), n, d).noalias() += dy * weff.transpose();
                       if (self.parents.size() > 4 && self.parents[4]->requires_grad) {
                         Map(self.parents[4]->grad_ptr(), 1, k) += dy.colwise().sum();
                       }
                       if (!pm.requires_grad && !pb.requires_grad && !pa.requires_grad) return;
                       const MatF g = MapC(px.data.data(), n, d).transpose() * dy;
                       const auto gr = dora::backward<float>(w0, m, bm, am, g, eps, stop_grad_norm);
                       if (pm.requires_grad) Map(pm.grad_ptr(), 1, k) += gr.dm;
                       if (pb.requires_grad) Map(pb.grad_ptr(), d, r) += gr.db;
                       if (pa.requires_grad) Map(pa.grad_ptr(), r, k) += gr.da;
                     });
}

ParamList AdaptedBackbone::adapter_parameters() const {
  ParamList out;
  for (const auto& s : slots) s.adapter->collect(s.name, out);
  return out;
}

std::int64_t AdaptedBackbone::adapter_param_count() const {
  std::int64_t n = 0;
  for (const auto& s : slots) n += s.adapter->trainable_count();
  return n;
}

namespace {

template <class F>
void for_each_target(Backbone& bb, const AdapterPlan& plan, F&& fn) {
  for (size_t s = 0; s < bb.stages.size(); ++s) {
    for (size_t bi = 0; bi < bb.stages[s].blocks.size(); ++bi) {
      auto& blk = bb.stages[s].blocks[bi];
      for (const auto& t : plan.targets) {
        Linear* lin = blk.projection(t);
        if (!lin) throw ConfigError("adapter target '" + t + "' not found in transformer block");
        fn("stage" + std::to_string(s) + ".block" + std::to_string(bi) + "." + t, *lin);
      }
    }
  }
}

}  // namespace

std::unique_ptr<AdaptedBackbone> inject_adapters(const Backbone& backbone, const AdapterPlan& plan,
                                                 std::uint64_t seed) {
  plan.validate();
  if (!backbone.frozen) throw ConfigError("inject_adapters: backbone must be frozen first");
  auto out = std::make_unique<AdaptedBackbone>();
  out->model = backbone;
  out->plan = plan;
  Rng rng(mix_seed(seed, 0xada97e5));
  for_each_target(out->model, plan, [&](const std::string& name, Linear& lin) {
    if (lin.adapter) throw ConfigError("projection '" + name + "' already has an adapter");
    if (plan.rank > std::min(lin.in_features(), lin.out_features())) {
      throw ConfigError("adapter rank " + std::to_string(plan.rank) + " exceeds projection size at " + name);
    }
    std::shared_ptr<LinearAdapter> ad;
    if (plan.kind == AdapterKind::dora) {
      auto d = std::make_shared<DoRAAdapter>(lin.weight, plan.rank, rng);
      d->stop_grad_norm = plan.stop_grad_norm;
      ad = d;
    } else {
      ad = std::make_shared<LoRAAdapter>(lin.weight, plan.rank, plan.lora_scaling, rng);
    }
    lin.adapter = ad;
    out->slots.push_back({name, ad, &lin});
  });
  return out;
}

double adapter_param_fraction(const AdaptedBackbone& adapted) {
  const std::int64_t base = count_elements(adapted.model.parameters());
  if (base == 0) return 0.0;
  return static_cast<double>(adapted.adapter_param_count()) / static_cast<double>(base);
}

std::int64_t closed_form_adapter_count(const Backbone& backbone, const AdapterPlan& plan) {
  Backbone copy = backbone;
  std::int64_t total = 0;
  const std::int64_t r = plan.rank;
  for_each_target(copy, plan, [&](const std::string&, Linear& lin) {
    const std::int64_t d = lin.in_features(), k = lin.out_features();
    total += (plan.kind == AdapterKind::dora ? k : 0) + r * (d + k);
  });
  return total;
}

Tensor merge_adapter(const DoRAAdapter& adapter, const Tensor& base_weight) {
  return adapter.effective_weight(base_weight);
}

Backbone merge_adapters(const AdaptedBackbone& adapted) {
  Backbone plain = adapted.model.deep_clone();
  std::vector<Linear*> layers;
  for_each_target(plain, adapted.plan, [&](const std::string&, Linear& lin) { layers.push_back(&lin); });
  for (size_t i = 0; i < adapted.slots.size(); ++i) {
    const auto& slot = adapted.slots[i];
    Tensor merged;
    if (auto* d = dynamic_cast<const DoRAAdapter*>(slot.adapter.get())) {
      merged = d->effective_weight(slot.layer->weight);
    } else if (auto* l = dynamic_cast<const LoRAAdapter*>(slot.adapter.get())) {
      merged = l->effective_weight(slot.layer->weight);
    }
    std::copy(merged.data().begin(), merged.data().end(), layers[i]->weight.data().begin());
  }
  return plain;
}

void save_adapters(const std::filesystem::path& path, const AdaptedBackbone& adapted) {
  save_arrays(path,
              json{{"kind", "adapters"},
                   {"plan", adapted.plan.to_json()},
                   {"backbone_fingerprint", adapted.model.pretrain_fingerprint}},
              adapted.adapter_parameters());
}

std::unique_ptr<AdaptedBackbone> load_adapters(const std::filesystem::path& path, const Backbone& backbone) {
  const ArrayFile f = load_arrays(path);
  if (f.header.value("kind", std::string()) != "adapters") {
    throw DataError(path.string() + " is not an adapter checkpoint");
  }
  const std::string fp = f.header.value("backbone_fingerprint", std::string());
  if (!fp.empty() && fp != backbone.pretrain_fingerprint) {
    throw IncompatibleModelError("adapter checkpoint was trained on a different backbone");
  }
  auto adapted = inject_adapters(backbone, AdapterPlan::from_json(f.header.at("plan")), 0);
  assign_arrays(f, adapted->adapter_parameters());
  return adapted;
}

}  // namespace icm
