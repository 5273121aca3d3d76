#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvaal/autodiff/autodiff.hpp"

namespace mvaal::nn {

using ad::Tensor;

enum class Mode { kTraining, kEvaluation };

class MissingParameter : public ad::Error {
 public:
  using ad::Error::Error;
};

class NonFiniteLoss : public ad::Error {
 public:
  using ad::Error::Error;
};

// Named parameters (slash-separated paths, lexicographic order) plus
// non-trainable buffers such as batch-norm running statistics.
class ParamSet {
 public:
  void add_param(const std::string& path, Tensor value);
  void add_buffer(const std::string& path, Tensor value);

  const Tensor& param(const std::string& path) const;
  // Swaps in a same-shaped tensor as-is (e.g. a graph input for probing).
  void set_param(const std::string& path, Tensor value);
  Tensor& buffer(const std::string& path);
  bool has_param(const std::string& path) const { return params_.contains(path); }

  const std::map<std::string, Tensor>& params() const { return params_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }
  std::map<std::string, Tensor>& mutable_params() { return params_; }

  std::vector<Tensor> param_list() const;

  // Parameters as constants (shared storage, no grad); buffers shared.
  ParamSet frozen() const;
  ParamSet clone() const;
  // Copies values from `other` into this set's storage (same paths required).
  void assign(const ParamSet& other);
  // Shallow union of several sets with "prefix/" prepended to each path.
  static ParamSet merge(std::span<const std::pair<std::string, const ParamSet*>> parts);

  Mode mode = Mode::kTraining;
  // Training-mode batch norm refreshes running statistics only when set.
  bool track_running_stats = true;

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
};

using GradMap = std::map<std::string, Tensor>;

// d loss / d p for every parameter of `ps`.
GradMap gradients(const Tensor& loss, const ParamSet& ps);
// Same for several sets at once, keyed by each set's own paths.
std::vector<GradMap> gradients(const Tensor& loss, std::span<ParamSet* const> sets);

enum class Activation { kLinear, kRelu, kLeakyRelu, kSigmoid, kTanh };

enum class LayerKind {
  kLinear,
  kConv2d,
  kConvTranspose2d,
  kBatchNorm,
  kLeakyRelu,
  kRelu,
  kSigmoid,
  kTanh,
  kMaxPool,
  kFlatten,
};

struct LayerSpec {
  LayerKind kind = LayerKind::kLinear;
  std::string path;
  std::int64_t in = 0;
  std::int64_t out = 0;
  std::int64_t kernel = 0;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t output_padding = 0;
  double slope = 0.2;
  double eps = 1e-5;
  double momentum = 0.1;
  // Activation that follows this layer; selects the Kaiming gain.
  Activation gain_for = Activation::kLinear;
  double gain_slope = 0.0;

  static LayerSpec linear(std::string path, std::int64_t in, std::int64_t out,
                          Activation next = Activation::kLinear, double slope = 0.0);
  static LayerSpec conv2d(std::string path, std::int64_t in, std::int64_t out, std::int64_t kernel,
                          std::int64_t stride, std::int64_t padding,
                          Activation next = Activation::kRelu);
  static LayerSpec conv_transpose2d(std::string path, std::int64_t in, std::int64_t out,
                                    std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                                    Activation next = Activation::kRelu);
  static LayerSpec batch_norm(std::string path, std::int64_t features, double eps = 1e-5,
                              double momentum = 0.1);
  static LayerSpec leaky_relu(double slope);
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec tanh();
  static LayerSpec max_pool(std::int64_t kernel, std::int64_t stride);
  static LayerSpec flatten();
};

using Architecture = std::vector<LayerSpec>;

Tensor layer_forward(const LayerSpec& layer, ParamSet& params, const Tensor& input);
Tensor forward_sequential(std::span<const LayerSpec> layers, ParamSet& params, Tensor input);

double kaiming_gain(Activation act, double slope);

// Kaiming-uniform weights, zero biases, unit norm scales, zero/one running
// statistics. Pure function of (arch, seed).
ParamSet init_params(const Architecture& arch, std::uint64_t seed);

enum class OptimizerKind { kAdam, kRmsprop };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double alpha = 0.99;
  double eps = 1e-8;
};

struct OptimizerState {
  OptimizerConfig config;
  std::map<std::string, Tensor> first_moment;   // Adam only
  std::map<std::string, Tensor> second_moment;
  std::int64_t step = 0;
};

OptimizerState make_optimizer(const OptimizerConfig& config, const ParamSet& params);
void optimizer_step(OptimizerState& state, ParamSet& params, const GradMap& grads);

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

// Checkpoint layout: "MVCK" | manifest_len:u64 | manifest JSON | tensor blobs
// in manifest order (params, buffers, optimizer moments).
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const OptimizerState* optimizer = nullptr);
struct Checkpoint {
  ParamSet params;
  std::optional<OptimizerState> optimizer;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mvaal::nn
