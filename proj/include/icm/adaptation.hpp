#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "icm/backbone.hpp"
#include "icm/errors.hpp"
#include "icm/nn.hpp"

namespace icm {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Euclidean norm of every column.
template <class S>
RowVec<S> column_norms(const RowMat<S>& m) {
  return m.colwise().norm();
}

namespace dora {

/// W' = m · (W0 + BA) / ||W0 + BA||_c. With eps > 0 the norm is
/// sqrt(sum + eps); with eps == 0 a zero column throws SingularityError.
template <class S>
RowMat<S> effective_weight(const RowMat<S>& w0, const RowVec<S>& m, const RowMat<S>& b, const RowMat<S>& a,
                           S eps) {
  RowMat<S> u = w0 + b * a;
  const RowVec<S> sq = u.colwise().squaredNorm();
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    if (eps == S(0) && sq(j) == S(0)) {
      throw SingularityError("DoRA direction has a zero column at index " + std::to_string(j));
    }
    u.col(j) *= m(j) / std::sqrt(sq(j) + eps);
  }
  return u;
}

template <class S>
struct Grads {
  RowVec<S> dm;
  RowMat<S> db, da;
};

/// Gradients of <G, W'> with respect to m, B and A, where G = dL/dW'.
/// stop_grad treats the column norm as a constant.
template <class S>
Grads<S> backward(const RowMat<S>& w0, const RowVec<S>& m, const RowMat<S>& b, const RowMat<S>& a,
                  const RowMat<S>& g, S eps, bool stop_grad) {
  const RowMat<S> u = w0 + b * a;
  const Eigen::Index k = u.cols();
  RowVec<S> inv(k);
  for (Eigen::Index j = 0; j < k; ++j) inv(j) = S(1) / std::sqrt(u.col(j).squaredNorm() + eps);
  const RowMat<S> v = u * inv.asDiagonal();
  Grads<S> out;
  out.dm = (g.cwiseProduct(v)).colwise().sum();
  const RowMat<S> h = g * m.asDiagonal();
  RowMat<S> du;
  if (stop_grad) {
    du = h * inv.asDiagonal();
  } else {
    const RowVec<S> proj = (h.cwiseProduct(v)).colwise().sum();
    du = (h - v * proj.asDiagonal()) * inv.asDiagonal();
  }
  out.db = du * a.transpose();
  out.da = b.transpose() * du;
  return out;
}

}  // namespace dora

enum class AdapterKind { dora, lora };

struct AdapterPlan {
  AdapterKind kind = AdapterKind::dora;
  int rank = 8;
  std::vector<std::string> targets{"query", "key", "value"};
  std::string task;
  float lora_scaling = 1.0f;
  bool stop_grad_norm = false;

  void validate() const;
  json to_json() const;
  static AdapterPlan from_json(const json& j);
};

/// The four target-set configurations compared in the adapter ablation.
std::vector<AdapterPlan> ablation_plans();

class DoRAAdapter final : public LinearAdapter {
 public:
  Tensor magnitude;  // m [k]
  Tensor b;          // [d, r], zero at init
  Tensor a;          // [r, k]
  float eps = 1e-8f;
  bool stop_grad_norm = false;

  DoRAAdapter(const Tensor& base_weight, int rank, Rng& rng);
  int rank() const { return b.dim(1); }

  Tensor forward(const Tensor& x, const Tensor& base_weight, const Tensor& base_bias) const override;
  void collect(const std::string& prefix, ParamList& out) const override;
  std::int64_t trainable_count() const override;

  /// Exact W' (no epsilon); throws SingularityError on a zero column.
  Tensor effective_weight(const Tensor& base_weight) const;
};

class LoRAAdapter final : public LinearAdapter {
 public:
  Tensor b;  // [d, r], zero at init
  Tensor a;  // [r, k]
  float scaling = 1.0f;

  LoRAAdapter(const Tensor& base_weight, int rank, float scaling, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& base_weight, const Tensor& base_bias) const override;
  void collect(const std::string& prefix, ParamList& out) const override;
  std::int64_t trainable_count() const override;
  Tensor effective_weight(const Tensor& base_weight) const;
};

/// y = x · W' + bias with W' the (epsilon-stabilised) DoRA weight.
Tensor dora_linear(const Tensor& x, const Tensor& base_weight, const Tensor& base_bias, const Tensor& magnitude,
                   const Tensor& b, const Tensor& a, float eps, bool stop_grad_norm);

/// Frozen backbone plus adapters wrapping the planned projections. The base
/// parameters are shared with the backbone it was created from.
struct AdaptedBackbone {
  Backbone model;
  AdapterPlan plan;
  struct Slot {
    std::string name;
    std::shared_ptr<LinearAdapter> adapter;
    Linear* layer = nullptr;
  };
  std::vector<Slot> slots;

  AdaptedBackbone() = default;
  AdaptedBackbone(const AdaptedBackbone&) = delete;
  AdaptedBackbone& operator=(const AdaptedBackbone&) = delete;
  AdaptedBackbone(AdaptedBackbone&&) = default;
  AdaptedBackbone& operator=(AdaptedBackbone&&) = default;

  Tensor forward(const Tensor& images) const { return model.forward(images); }
  ParamList adapter_parameters() const;
  std::int64_t adapter_param_count() const;
};

std::unique_ptr<AdaptedBackbone> inject_adapters(const Backbone& backbone, const AdapterPlan& plan,
                                                 std::uint64_t seed);

/// Trainable adapter parameters over base backbone parameters.
double adapter_param_fraction(const AdaptedBackbone& adapted);
/// Closed-form count sum(k + r(d + k)) over the adapted projections.
std::int64_t closed_form_adapter_count(const Backbone& backbone, const AdapterPlan& plan);

Tensor merge_adapter(const DoRAAdapter& adapter, const Tensor& base_weight);
/// Plain backbone whose adapted projections hold the merged weights.
Backbone merge_adapters(const AdaptedBackbone& adapted);

/// Stores the plan and adapter arrays only, never the base weights.
void save_adapters(const std::filesystem::path& path, const AdaptedBackbone& adapted);
std::unique_ptr<AdaptedBackbone> load_adapters(const std::filesystem::path& path, const Backbone& backbone);

}  // namespace icm
