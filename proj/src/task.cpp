#include "icm/task.hpp"

#include <algorithm>

#include "icm/errors.hpp"

namespace icm {

TaskSpec task_spec(TaskId id, int num_classes) {
  switch (id) {
    case TaskId::semseg:
      return {id, "semseg", "per-pixel class id, background = 0", LossId::cross_entropy, MetricId::miou, num_classes};
    case TaskId::depth:
      return {id, "depth", "per-pixel depth, near = small", LossId::l1, MetricId::rmse, 1};
    case TaskId::normal:
      return {id, "normal", "per-pixel unit surface normal", LossId::cosine, MetricId::merr, 3};
    case TaskId::boundary:
      return {id, "boundary", "binary label-transition map", LossId::weighted_bce, MetricId::odsf, 1};
    case TaskId::saliency:
      return {id, "saliency", "binary mask of the largest object", LossId::weighted_bce, MetricId::maxf, 1};
  }
  throw ArgumentError("unknown task id");
}

TaskId parse_task(const std::string& name) {
  for (TaskId t : all_tasks()) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown task '" + name + "'");
}

std::string to_string(TaskId id) {
  switch (id) {
    case TaskId::semseg: return "semseg";
    case TaskId::depth: return "depth";
    case TaskId::normal: return "normal";
    case TaskId::boundary: return "boundary";
    case TaskId::saliency: return "saliency";
  }
  return "?";
}

std::string to_string(MetricId id) {
  switch (id) {
    case MetricId::miou: return "miou";
    case MetricId::rmse: return "rmse";
    case MetricId::merr: return "merr";
    case MetricId::maxf: return "maxf";
    case MetricId::odsf: return "odsf";
  }
  return "?";
}

bool higher_is_better(MetricId id) { return id == MetricId::miou || id == MetricId::maxf || id == MetricId::odsf; }

const std::vector<TaskId>& all_tasks() {
  static const std::vector<TaskId> tasks{TaskId::semseg, TaskId::depth, TaskId::normal, TaskId::boundary,
                                         TaskId::saliency};
  return tasks;
}

Tensor stack_images(const std::vector<const synth::SyntheticScene*>& scenes) {
  if (scenes.empty()) throw ArgumentError("empty batch");
  const int h = scenes[0]->height, w = scenes[0]->width;
  FloatVec data;
  data.reserve(scenes.size() * 3 * h * w);
  for (const auto* s : scenes) {
    if (s->height != h || s->width != w) throw ShapeError("batch scenes differ in size");
    data.insert(data.end(), s->image.begin(), s->image.end());
  }
  return Tensor({static_cast<int>(scenes.size()), 3, h, w}, std::move(data));
}

Batch make_batch(const std::vector<const synth::SyntheticScene*>& scenes, TaskId task) {
  Batch b;
  b.images = stack_images(scenes);
  const int n = static_cast<int>(scenes.size());
  const int h = scenes[0]->height, w = scenes[0]->width;
  const size_t hw = static_cast<size_t>(h) * w;
  const int c = task == TaskId::normal ? 3 : 1;
  FloatVec target;
  target.reserve(n * c * hw);
  FloatVec valid(n * hw, 1.0f);
  for (const auto* s : scenes) {
    switch (task) {
      case TaskId::semseg: target.insert(target.end(), s->semseg.begin(), s->semseg.end()); break;
      case TaskId::depth: target.insert(target.end(), s->depth.begin(), s->depth.end()); break;
      case TaskId::normal: target.insert(target.end(), s->normals.begin(), s->normals.end()); break;
      case TaskId::boundary: target.insert(target.end(), s->boundary.begin(), s->boundary.end()); break;
      case TaskId::saliency: target.insert(target.end(), s->saliency.begin(), s->saliency.end()); break;
    }
  }
  b.target = Tensor({n, c, h, w}, std::move(target));
  b.valid = Tensor({n, 1, h, w}, std::move(valid));
  return b;
}

}  // namespace icm
