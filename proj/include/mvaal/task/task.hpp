#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvaal/nn/nn.hpp"
#include "mvaal/synth/synth.hpp"

namespace mvaal::task {

using ad::Tensor;

enum class TaskKind { kSegmentation, kMultilabel, kMulticlass };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::kMulticlass;
  std::int64_t num_classes = 5;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 32;
  double learning_rate = 1e-3;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdam;
  std::int64_t image_size = 32;
  // base channel count; the classifier uses {w, 2w, 2w, 4w}, the U-Net {2w, 4w}
  std::int64_t width = 8;
};

// Inputs plus targets: class ids [N] for multiclass, multi-hot [N,C] for
// multilabel, masks [N,1,H,W] for segmentation.
struct TaskData {
  Tensor x;
  Tensor y;
  std::int64_t size() const { return x.defined() ? x.dim(0) : 0; }
};

// Label sets per sample id, used when annotations come from an oracle
// rather than the dataset itself.
using LabelLookup = std::function<std::vector<std::int64_t>(std::int64_t id)>;

TaskData make_task_data(const synth::Dataset& ds, std::span<const std::int64_t> ids,
                        const TaskSpec& spec, const LabelLookup& labels = {});

nn::ParamSet init_task_params(const TaskSpec& spec, std::uint64_t seed);
// Logits: [N,C] for classification, [N,1,H,W] for segmentation.
Tensor task_forward(const TaskSpec& spec, nn::ParamSet& params, const Tensor& x);

Tensor binary_cross_entropy_with_logits(const Tensor& logits, const Tensor& target);
Tensor segmentation_loss(const Tensor& logits, const Tensor& target_mask);
Tensor classification_loss(const Tensor& logits, const Tensor& target, TaskKind kind);
Tensor task_loss(const TaskSpec& spec, const Tensor& logits, const Tensor& target);

double dice_score(const Tensor& pred_mask, const Tensor& gt_mask);

struct ApResult {
  double map = 0.0;
  std::int64_t included = 0;
  std::int64_t excluded = 0;  // classes without positives
  std::vector<double> per_class;  // NaN for excluded classes
};
ApResult mean_average_precision(const Tensor& scores, const Tensor& targets);

double overall_accuracy(std::span<const std::int64_t> preds, std::span<const std::int64_t> targets);

// Dice (mean over samples), mAP, or accuracy on `data` in evaluation mode.
double evaluate(const TaskSpec& spec, nn::ParamSet& params, const TaskData& data);

struct LogRow {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TaskModel {
  TaskSpec spec;
  nn::ParamSet params;  // best validation checkpoint
  std::vector<LogRow> log;
  std::int64_t best_epoch = 0;
  double best_val = 0.0;
};

using nn::NonFiniteLoss;

TaskModel train_task(const TaskSpec& spec, const TaskData& labeled, const TaskData& val,
                     std::uint64_t seed);

void write_training_log(const std::filesystem::path& path, std::span<const LogRow> rows);

}  // namespace mvaal::task
