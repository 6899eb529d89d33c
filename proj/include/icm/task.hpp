#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icm/synth_data.hpp"
#include "icm/tensor.hpp"

namespace icm {

enum class TaskId : std::uint8_t { semseg = 0, depth = 1, normal = 2, boundary = 3, saliency = 4 };
enum class LossId { cross_entropy, l1, cosine, weighted_bce };
enum class MetricId { miou, rmse, merr, maxf, odsf };

struct TaskSpec {
  TaskId id = TaskId::semseg;
  std::string name;
  std::string label_semantics;
  LossId loss = LossId::cross_entropy;
  MetricId metric = MetricId::miou;
  int channels = 1;
};

TaskSpec task_spec(TaskId id, int num_classes = 5);
TaskId parse_task(const std::string& name);
std::string to_string(TaskId id);
std::string to_string(MetricId id);
bool higher_is_better(MetricId id);
const std::vector<TaskId>& all_tasks();

constexpr int kIgnoreLabel = 255;

/// Images plus the dense target of one task. `target` holds class ids for
/// segmentation and real values otherwise; `valid` marks supervised pixels.
struct Batch {
  Tensor images;  // [B, 3, H, W]
  Tensor target;  // [B, C, H, W]
  Tensor valid;   // [B, 1, H, W]
};

Batch make_batch(const std::vector<const synth::SyntheticScene*>& scenes, TaskId task);
Tensor stack_images(const std::vector<const synth::SyntheticScene*>& scenes);

}  // namespace icm
