#include "mvaal/task/task.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "mvaal/util/random.hpp"

namespace mvaal::task {

using nn::LayerSpec;

namespace {

constexpr std::uint64_t kShuffleTag = 0x7a5c;

std::int64_t check_class(double v, std::int64_t num_classes) {
  const auto c = static_cast<std::int64_t>(v);
  if (static_cast<double>(c) != v || c < 0 || c >= num_classes)
    throw ad::Error("target class " + std::to_string(v) + " out of range [0, " +
                    std::to_string(num_classes) + ")");
  return c;
}

// Layer specs for the classifier: four conv/bn/relu/pool blocks and a head.
std::vector<LayerSpec> classifier_layers(const TaskSpec& s) {
  const std::int64_t w = s.width;
  const std::int64_t ch[5] = {1, w, 2 * w, 2 * w, 4 * w};
  std::vector<LayerSpec> layers;
  for (int b = 0; b < 4; ++b) {
    const std::string p = "block" + std::to_string(b + 1);
    layers.push_back(LayerSpec::conv2d(p + "/conv", ch[b], ch[b + 1], 3, 1, 1));
    layers.push_back(LayerSpec::batch_norm(p + "/bn", ch[b + 1]));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::max_pool(2, 2));
  }
  layers.push_back(LayerSpec::flatten());
  const std::int64_t side = s.image_size / 16;
  layers.push_back(LayerSpec::linear("head", ch[4] * side * side, s.num_classes));
  return layers;
}

struct UNetLayers {
  std::vector<LayerSpec> enc1, enc2, dec;
  LayerSpec up, out;
};

UNetLayers unet_layers(const TaskSpec& s) {
  const std::int64_t c1 = 2 * s.width, c2 = 4 * s.width;
  UNetLayers u;
  u.enc1 = {LayerSpec::conv2d("enc1/conv", 1, c1, 3, 1, 1), LayerSpec::batch_norm("enc1/bn", c1),
            LayerSpec::relu()};
  u.enc2 = {LayerSpec::max_pool(2, 2), LayerSpec::conv2d("enc2/conv", c1, c2, 3, 1, 1),
            LayerSpec::batch_norm("enc2/bn", c2), LayerSpec::relu()};
  u.up = LayerSpec::conv_transpose2d("up", c2, c1, 2, 2, 0);
  u.dec = {LayerSpec::conv2d("dec/conv", 2 * c1, c1, 3, 1, 1), LayerSpec::batch_norm("dec/bn", c1),
           LayerSpec::relu()};
  u.out = LayerSpec::conv2d("out", c1, 1, 1, 1, 0, nn::Activation::kSigmoid);
  return u;
}

void validate(const TaskSpec& s) {
  if (s.image_size % 16 != 0) throw ad::Error("task image_size must be a multiple of 16");
  if (s.num_classes < 1 || s.epochs < 1 || s.batch_size < 1 || s.width < 1)
    throw ad::Error("task spec fields must be positive");
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSegmentation: return "segmentation";
    case TaskKind::kMultilabel: return "multilabel";
    case TaskKind::kMulticlass: return "multiclass";
  }
  return "multiclass";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "segmentation") return TaskKind::kSegmentation;
  if (s == "multilabel") return TaskKind::kMultilabel;
  if (s == "multiclass") return TaskKind::kMulticlass;
  throw ad::Error("unknown task kind '" + s + "'");
}

TaskData make_task_data(const synth::Dataset& ds, std::span<const std::int64_t> ids,
                        const TaskSpec& spec, const LabelLookup& labels) {
  if (ids.empty()) throw ad::Error("task data needs at least one sample");
  TaskData d;
  d.x = synth::stack(ds, ids, synth::Modality::kM1);
  const auto n = static_cast<std::int64_t>(ids.size());
  auto label_set = [&](std::int64_t id) {
    return labels ? labels(id) : ds.samples.at(static_cast<std::size_t>(id)).labels;
  };
  switch (spec.kind) {
    case TaskKind::kSegmentation:
      d.y = synth::stack(ds, ids, synth::Modality::kMask);
      break;
    case TaskKind::kMulticlass: {
      std::vector<double> y(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = ids[i];
        const std::int64_t c = labels ? labels(id).at(0) : ds.samples.at(static_cast<std::size_t>(id)).primary;
        y[i] = static_cast<double>(check_class(static_cast<double>(c), spec.num_classes));
      }
      d.y = Tensor({n}, std::move(y));
      break;
    }
    case TaskKind::kMultilabel: {
      std::vector<double> y(ids.size() * static_cast<std::size_t>(spec.num_classes), 0.0);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (auto c : label_set(ids[i]))
          y[i * static_cast<std::size_t>(spec.num_classes) +
            static_cast<std::size_t>(check_class(static_cast<double>(c), spec.num_classes))] = 1.0;
      d.y = Tensor({n, spec.num_classes}, std::move(y));
      break;
    }
  }
  return d;
}

nn::ParamSet init_task_params(const TaskSpec& spec, std::uint64_t seed) {
  validate(spec);
  if (spec.kind != TaskKind::kSegmentation) return nn::init_params(classifier_layers(spec), seed);
  const auto u = unet_layers(spec);
  nn::Architecture arch = u.enc1;
  arch.insert(arch.end(), u.enc2.begin(), u.enc2.end());
  arch.push_back(u.up);
  arch.insert(arch.end(), u.dec.begin(), u.dec.end());
  arch.push_back(u.out);
  return nn::init_params(arch, seed);
}

Tensor task_forward(const TaskSpec& spec, nn::ParamSet& params, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != spec.image_size || x.dim(3) != spec.image_size)
    throw ad::ShapeError("task input must be [N,1," + std::to_string(spec.image_size) + "," +
                         std::to_string(spec.image_size) + "], got " + ad::shape_str(x.shape()));
  if (spec.kind != TaskKind::kSegmentation) {
    const auto layers = classifier_layers(spec);
    return nn::forward_sequential(layers, params, x);
  }
  const auto u = unet_layers(spec);
  const Tensor skip = nn::forward_sequential(u.enc1, params, x);
  const Tensor deep = nn::forward_sequential(u.enc2, params, skip);
  const Tensor up = nn::layer_forward(u.up, params, deep);
  const Tensor parts[] = {up, skip};
  const Tensor merged = nn::forward_sequential(u.dec, params, ad::concat(parts, 1));
  return nn::layer_forward(u.out, params, merged);
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape())
    throw ad::ShapeError("bce: logits " + ad::shape_str(logits.shape()) + " vs target " +
                         ad::shape_str(target.shape()));
  // -(t log s(x) + (1-t) log s(-x))
  const Tensor pos = ad::log_sigmoid(logits);
  const Tensor neg = ad::log_sigmoid(-logits);
  return -ad::mean(target * pos + (-target + 1.0) * neg);
}

Tensor segmentation_loss(const Tensor& logits, const Tensor& target_mask) {
  const Tensor bce = binary_cross_entropy_with_logits(logits, target_mask);
  const Tensor p = ad::sigmoid(logits);
  const Tensor inter = ad::sum(p * target_mask);
  const Tensor denom = ad::sum(p) + ad::sum(target_mask) + 1.0;
  const Tensor dice = (inter * 2.0 + 1.0) / denom;
  return bce - dice + 1.0;
}

Tensor classification_loss(const Tensor& logits, const Tensor& target, TaskKind kind) {
  if (logits.rank() != 2) throw ad::ShapeError("classification logits must be [N,C]");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  if (kind == TaskKind::kMulticlass) {
    if (target.rank() != 1 || target.dim(0) != n)
      throw ad::ShapeError("multiclass target must be [N] class ids, got " + ad::shape_str(target.shape()));
    std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = check_class(target[i], c);
    return ad::softmax_cross_entropy(logits, labels);
  }
  if (kind == TaskKind::kMultilabel) {
    for (double v : target.data())
      if (v != 0.0 && v != 1.0) throw ad::Error("multilabel targets must be 0/1");
    return binary_cross_entropy_with_logits(logits, target);
  }
  throw ad::Error("classification_loss needs a classification kind");
}

Tensor task_loss(const TaskSpec& spec, const Tensor& logits, const Tensor& target) {
  return spec.kind == TaskKind::kSegmentation ? segmentation_loss(logits, target)
                                              : classification_loss(logits, target, spec.kind);
}

double dice_score(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw ad::ShapeError("dice: " + ad::shape_str(pred.shape()) + " vs " + ad::shape_str(gt.shape()));
  double a = 0, b = 0, both = 0;
  const auto p = pred.data(), g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool x = p[i] > 0.5, y = g[i] > 0.5;
    a += x;
    b += y;
    both += x && y;
  }
  return a + b == 0 ? 1.0 : 2.0 * both / (a + b);
}

ApResult mean_average_precision(const Tensor& scores, const Tensor& targets) {
  if (scores.rank() != 2 || scores.shape() != targets.shape())
    throw ad::ShapeError("mAP: scores and targets must be equal [N,C], got " +
                         ad::shape_str(scores.shape()) + " and " + ad::shape_str(targets.shape()));
  const std::int64_t n = scores.dim(0), c = scores.dim(1);
  const auto s = scores.data(), t = targets.data();
  ApResult r;
  double total = 0.0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < c; ++k) {
    auto at = [&](std::int64_t i) { return static_cast<std::size_t>(i * c + k); };
    std::iota(order.begin(), order.end(), std::int64_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int64_t i, std::int64_t j) { return s[at(i)] > s[at(j)]; });
    double hits = 0.0, acc = 0.0;
    for (std::int64_t rank = 0; rank < n; ++rank) {
      if (t[at(order[static_cast<std::size_t>(rank)])] > 0.5) {
        hits += 1.0;
        acc += hits / static_cast<double>(rank + 1);
      }
    }
    if (hits == 0.0) {
      ++r.excluded;
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      ++r.included;
      r.per_class.push_back(acc / hits);
      total += acc / hits;
    }
  }
  r.map = r.included ? total / static_cast<double>(r.included) : 0.0;
  return r;
}

double overall_accuracy(std::span<const std::int64_t> preds, std::span<const std::int64_t> targets) {
  if (preds.size() != targets.size())
    throw ad::Error("accuracy: " + std::to_string(preds.size()) + " predictions for " +
                    std::to_string(targets.size()) + " targets");
  if (preds.empty()) throw ad::Error("accuracy of an empty set is undefined");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == targets[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double evaluate(const TaskSpec& spec, nn::ParamSet& params, const TaskData& data) {
  const auto saved = params.mode;
  params.mode = nn::Mode::kEvaluation;
  ad::NoGradGuard off;
  const std::int64_t n = data.size();
  const std::int64_t chunk = 128;
  std::vector<Tensor> outs;
  for (std::int64_t s = 0; s < n; s += chunk) {
    const std::int64_t e = std::min(n, s + chunk);
    outs.push_back(task_forward(spec, params, ad::slice(data.x, 0, s, e)));
  }
  params.mode = saved;
  const Tensor out = outs.size() == 1 ? outs[0] : ad::concat(outs, 0);

  switch (spec.kind) {
    case TaskKind::kSegmentation: {
      const auto plane = out.numel() / n;
      const auto o = out.data(), y = data.y.data();
      double total = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        std::vector<double> p(static_cast<std::size_t>(plane)), g(static_cast<std::size_t>(plane));
        for (std::int64_t j = 0; j < plane; ++j) {
          p[static_cast<std::size_t>(j)] = o[static_cast<std::size_t>(i * plane + j)] > 0.0;
          g[static_cast<std::size_t>(j)] = y[static_cast<std::size_t>(i * plane + j)];
        }
        total += dice_score(Tensor({plane}, std::move(p)), Tensor({plane}, std::move(g)));
      }
      return total / static_cast<double>(n);
    }
    case TaskKind::kMultilabel:
      return mean_average_precision(out, data.y).map;
    case TaskKind::kMulticlass: {
      const std::int64_t c = out.dim(1);
      std::vector<std::int64_t> pred(static_cast<std::size_t>(n)), truth(static_cast<std::size_t>(n));
      const auto o = out.data();
      for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < c; ++k)
          if (o[static_cast<std::size_t>(i * c + k)] > o[static_cast<std::size_t>(i * c + best)]) best = k;
        pred[static_cast<std::size_t>(i)] = best;
        truth[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(data.y[i]);
      }
      return overall_accuracy(pred, truth);
    }
  }
  return 0.0;
}

TaskModel train_task(const TaskSpec& spec, const TaskData& labeled, const TaskData& val,
                     std::uint64_t seed) {
  if (labeled.size() == 0 || val.size() == 0) throw ad::Error("train_task needs nonempty labeled and val sets");
  TaskModel model;
  model.spec = spec;
  nn::ParamSet params = init_task_params(spec, seed);
  nn::OptimizerConfig oc;
  oc.kind = spec.optimizer;
  oc.lr = spec.learning_rate;
  auto opt = nn::make_optimizer(oc, params);
  Rng rng(derive_seed(seed, {kShuffleTag}));

  const std::int64_t n = labeled.size();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  bool have_best = false;
  for (std::int64_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    params.mode = nn::Mode::kTraining;
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::int64_t s = 0; s < n; s += spec.batch_size) {
      const std::int64_t e = std::min(n, s + spec.batch_size);
      const std::span<const std::int64_t> rows(order.data() + s, static_cast<std::size_t>(e - s));
      const Tensor xb = ad::take_rows(labeled.x, rows);
      const Tensor yb = ad::take_rows(labeled.y, rows);
      const Tensor loss = task_loss(spec, task_forward(spec, params, xb), yb);
      const double v = loss.item();
      if (!std::isfinite(v))
        throw NonFiniteLoss("non-finite task loss " + std::to_string(v) + " at epoch " +
                            std::to_string(epoch) + ", batch starting at " + std::to_string(s));
      loss_sum += v * static_cast<double>(e - s);
      nn::optimizer_step(opt, params, nn::gradients(loss, params));
      ad::reset_graph();
    }
    const double metric = evaluate(spec, params, val);
    model.log.push_back({epoch, loss_sum / static_cast<double>(n), metric});
    if (!have_best || metric > model.best_val) {
      have_best = true;
      model.best_val = metric;
      model.best_epoch = epoch;
      model.params = params.clone();
    }
  }
  model.params.mode = nn::Mode::kEvaluation;
  return model;
}

void write_training_log(const std::filesystem::path& path, std::span<const LogRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ad::Error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,train_loss,val_metric\n";
  for (const auto& r : rows) out << r.epoch << ',' << r.train_loss << ',' << r.val_metric << '\n';
}

}  // namespace mvaal::task
