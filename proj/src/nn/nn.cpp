#include "mvaal/nn/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvaal/autodiff/serialize.hpp"
#include "mvaal/util/random.hpp"

namespace mvaal::nn {

using ad::Shape;
using json = nlohmann::json;

void ParamSet::add_param(const std::string& path, Tensor value) {
  if (params_.contains(path) || buffers_.contains(path))
    throw ad::Error("duplicate parameter path '" + path + "'");
  if (!value.is_leaf()) value = value.detach();
  if (!value.requires_grad()) value.set_requires_grad(true);
  params_.emplace(path, std::move(value));
}

void ParamSet::add_buffer(const std::string& path, Tensor value) {
  if (params_.contains(path) || buffers_.contains(path))
    throw ad::Error("duplicate parameter path '" + path + "'");
  buffers_.emplace(path, value.detach());
}

const Tensor& ParamSet::param(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw MissingParameter("missing parameter '" + path + "'");
  return it->second;
}

void ParamSet::set_param(const std::string& path, Tensor value) {
  auto it = params_.find(path);
  if (it == params_.end()) throw MissingParameter("missing parameter '" + path + "'");
  if (it->second.shape() != value.shape())
    throw ad::ShapeError("set_param '" + path + "': shape " + ad::shape_str(value.shape()) +
                         " does not match " + ad::shape_str(it->second.shape()));
  it->second = std::move(value);
}

ParamSet ParamSet::merge(std::span<const std::pair<std::string, const ParamSet*>> parts) {
  ParamSet out;
  for (const auto& [prefix, ps] : parts) {
    for (const auto& [k, t] : ps->params_) {
      if (!out.params_.emplace(prefix + "/" + k, t).second)
        throw ad::Error("duplicate parameter path '" + prefix + "/" + k + "'");
    }
    for (const auto& [k, t] : ps->buffers_) out.buffers_.emplace(prefix + "/" + k, t);
  }
  return out;
}

Tensor& ParamSet::buffer(const std::string& path) {
  auto it = buffers_.find(path);
  if (it == buffers_.end()) throw MissingParameter("missing buffer '" + path + "'");
  return it->second;
}

std::vector<Tensor> ParamSet::param_list() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

ParamSet ParamSet::frozen() const {
  ParamSet out;
  out.mode = mode;
  out.track_running_stats = track_running_stats;
  // Bypass add_param: frozen copies must not require grad.
  for (const auto& [k, t] : params_) out.params_.emplace(k, t.detach());
  out.buffers_ = buffers_;
  return out;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  out.mode = mode;
  out.track_running_stats = track_running_stats;
  for (const auto& [k, t] : params_) out.add_param(k, t.clone());
  for (const auto& [k, t] : buffers_) out.add_buffer(k, t.clone());
  return out;
}

namespace {

void copy_into(Tensor& dst, const Tensor& src, const std::string& path) {
  if (dst.shape() != src.shape())
    throw ad::ShapeError("assign: shape mismatch at '" + path + "': " + ad::shape_str(dst.shape()) +
                         " vs " + ad::shape_str(src.shape()));
  auto d = dst.mutable_data();
  auto s = src.data();
  std::copy(s.begin(), s.end(), d.begin());
}

}  // namespace

void ParamSet::assign(const ParamSet& other) {
  if (other.params_.size() != params_.size() || other.buffers_.size() != buffers_.size())
    throw ad::Error("assign: parameter sets differ in size");
  for (auto& [k, t] : params_) copy_into(t, other.param(k), k);
  for (auto& [k, t] : buffers_) {
    auto it = other.buffers_.find(k);
    if (it == other.buffers_.end()) throw MissingParameter("missing buffer '" + k + "'");
    copy_into(t, it->second, k);
  }
}

GradMap gradients(const Tensor& loss, const ParamSet& ps) {
  ParamSet* one[] = {const_cast<ParamSet*>(&ps)};
  return gradients(loss, std::span<ParamSet* const>(one))[0];
}

std::vector<GradMap> gradients(const Tensor& loss, std::span<ParamSet* const> sets) {
  std::vector<Tensor> targets;
  for (auto* s : sets)
    for (const auto& [_, t] : s->params()) targets.push_back(t);
  auto grads = ad::backward(loss, targets);
  std::vector<GradMap> out(sets.size());
  std::size_t i = 0;
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (const auto& [k, _] : sets[s]->params()) out[s].emplace(k, std::move(grads[i++]));
  return out;
}

LayerSpec LayerSpec::linear(std::string path, std::int64_t in, std::int64_t out, Activation next,
                            double slope) {
  LayerSpec s;
  s.kind = LayerKind::kLinear;
  s.path = std::move(path);
  s.in = in;
  s.out = out;
  s.gain_for = next;
  s.gain_slope = slope;
  return s;
}

LayerSpec LayerSpec::conv2d(std::string path, std::int64_t in, std::int64_t out,
                            std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                            Activation next) {
  LayerSpec s = linear(std::move(path), in, out, next);
  s.kind = LayerKind::kConv2d;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::conv_transpose2d(std::string path, std::int64_t in, std::int64_t out,
                                      std::int64_t kernel, std::int64_t stride,
                                      std::int64_t padding, Activation next) {
  LayerSpec s = conv2d(std::move(path), in, out, kernel, stride, padding, next);
  s.kind = LayerKind::kConvTranspose2d;
  return s;
}

LayerSpec LayerSpec::batch_norm(std::string path, std::int64_t features, double eps,
                                double momentum) {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  s.path = std::move(path);
  s.in = s.out = features;
  s.eps = eps;
  s.momentum = momentum;
  return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
  LayerSpec s;
  s.kind = LayerKind::kLeakyRelu;
  s.slope = slope;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::kSigmoid;
  return s;
}

LayerSpec LayerSpec::tanh() {
  LayerSpec s;
  s.kind = LayerKind::kTanh;
  return s;
}

LayerSpec LayerSpec::max_pool(std::int64_t kernel, std::int64_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

namespace {

Tensor batch_norm_forward(const LayerSpec& l, ParamSet& ps, const Tensor& x) {
  const Tensor& gamma = ps.param(l.path + "/weight");
  const Tensor& beta = ps.param(l.path + "/bias");
  Tensor& run_mean = ps.buffer(l.path + "/running_mean");
  Tensor& run_var = ps.buffer(l.path + "/running_var");

  std::vector<std::int64_t> axes;
  Shape stat_shape;
  if (x.rank() == 2) {
    axes = {0};
    stat_shape = {1, x.dim(1)};
  } else if (x.rank() == 4) {
    axes = {0, 2, 3};
    stat_shape = {1, x.dim(1), 1, 1};
  } else {
    throw ad::ShapeError("batch_norm '" + l.path + "': expected rank 2 or 4 input, got " +
                         ad::shape_str(x.shape()));
  }
  if (x.dim(1) != l.in)
    throw ad::ShapeError("batch_norm '" + l.path + "': expected " + std::to_string(l.in) +
                         " features, got " + ad::shape_str(x.shape()));

  const Tensor g = ad::reshape(gamma, stat_shape);
  const Tensor b = ad::reshape(beta, stat_shape);

  if (ps.mode == Mode::kEvaluation) {
    const Tensor m = ad::reshape(run_mean, stat_shape);
    const Tensor v = ad::reshape(run_var, stat_shape);
    return (x - m) / ad::sqrt(v + l.eps) * g + b;
  }

  const Tensor mu = ad::mean(x, axes, true);
  const Tensor centered = x - mu;
  const Tensor var = ad::mean(ad::square(centered), axes, true);
  if (ps.track_running_stats) {
    auto rm = run_mean.mutable_data();
    auto rv = run_var.mutable_data();
    const auto bm = mu.data();
    const auto bv = var.data();
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (1.0 - l.momentum) * rm[c] + l.momentum * bm[c];
      rv[c] = (1.0 - l.momentum) * rv[c] + l.momentum * bv[c];
    }
  }
  return centered / ad::sqrt(var + l.eps) * g + b;
}

}  // namespace

Tensor layer_forward(const LayerSpec& l, ParamSet& ps, const Tensor& x) {
  switch (l.kind) {
    case LayerKind::kLinear: {
      if (x.rank() != 2 || x.dim(1) != l.in)
        throw ad::ShapeError("linear '" + l.path + "': expected [N," + std::to_string(l.in) +
                             "], got " + ad::shape_str(x.shape()));
      const Tensor& w = ps.param(l.path + "/weight");
      const Tensor& b = ps.param(l.path + "/bias");
      return ad::matmul(x, ad::transpose(w)) + b;
    }
    case LayerKind::kConv2d:
    case LayerKind::kConvTranspose2d: {
      if (x.rank() != 4 || x.dim(1) != l.in)
        throw ad::ShapeError("conv '" + l.path + "': expected [N," + std::to_string(l.in) +
                             ",H,W], got " + ad::shape_str(x.shape()));
      const Tensor& w = ps.param(l.path + "/weight");
      const Tensor b = ad::reshape(ps.param(l.path + "/bias"), {1, l.out, 1, 1});
      const ad::ConvAttrs a{l.stride, l.padding, l.output_padding};
      return (l.kind == LayerKind::kConv2d ? ad::conv2d(x, w, a) : ad::conv_transpose2d(x, w, a)) +
             b;
    }
    case LayerKind::kBatchNorm:
      return batch_norm_forward(l, ps, x);
    case LayerKind::kLeakyRelu:
      return ad::leaky_relu(x, l.slope);
    case LayerKind::kRelu:
      return ad::relu(x);
    case LayerKind::kSigmoid:
      return ad::sigmoid(x);
    case LayerKind::kTanh:
      return ad::tanh(x);
    case LayerKind::kMaxPool:
      return ad::max_pool2d(x, l.kernel, l.stride);
    case LayerKind::kFlatten:
      return ad::reshape(x, {x.dim(0), -1});
  }
  throw ad::Error("unknown layer kind");
}

Tensor forward_sequential(std::span<const LayerSpec> layers, ParamSet& ps, Tensor x) {
  for (const auto& l : layers) x = layer_forward(l, ps, x);
  return x;
}

double kaiming_gain(Activation act, double slope) {
  switch (act) {
    case Activation::kRelu:
      return std::sqrt(2.0);
    case Activation::kLeakyRelu:
      return std::sqrt(2.0 / (1.0 + slope * slope));
    case Activation::kTanh:
      return 5.0 / 3.0;
    case Activation::kLinear:
    case Activation::kSigmoid:
      return 1.0;
  }
  return 1.0;
}

ParamSet init_params(const Architecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet ps;
  for (const auto& l : arch) {
    switch (l.kind) {
      case LayerKind::kLinear:
      case LayerKind::kConv2d:
      case LayerKind::kConvTranspose2d: {
        Shape ws;
        std::int64_t fan_in = 0;
        if (l.kind == LayerKind::kLinear) {
          ws = {l.out, l.in};
          fan_in = l.in;
        } else if (l.kind == LayerKind::kConv2d) {
          ws = {l.out, l.in, l.kernel, l.kernel};
          fan_in = l.in * l.kernel * l.kernel;
        } else {
          // Transposed weights are stored [in, out, k, k]; each output pixel
          // gathers from `out`-sized kernel slices, as in the usual convention.
          ws = {l.in, l.out, l.kernel, l.kernel};
          fan_in = l.out * l.kernel * l.kernel;
        }
        const double bound = kaiming_gain(l.gain_for, l.gain_slope) * std::sqrt(3.0 / fan_in);
        std::vector<double> w(static_cast<std::size_t>(ad::numel(ws)));
        for (auto& v : w) v = rng.uniform(-bound, bound);
        ps.add_param(l.path + "/weight", Tensor(ws, std::move(w)));
        ps.add_param(l.path + "/bias", Tensor::zeros({l.out}));
        break;
      }
      case LayerKind::kBatchNorm:
        ps.add_param(l.path + "/weight", Tensor::ones({l.in}));
        ps.add_param(l.path + "/bias", Tensor::zeros({l.in}));
        ps.add_buffer(l.path + "/running_mean", Tensor::zeros({l.in}));
        ps.add_buffer(l.path + "/running_var", Tensor::ones({l.in}));
        break;
      default:
        break;
    }
  }
  return ps;
}

OptimizerState make_optimizer(const OptimizerConfig& config, const ParamSet& params) {
  OptimizerState st;
  st.config = config;
  for (const auto& [k, t] : params.params()) {
    if (config.kind == OptimizerKind::kAdam) st.first_moment.emplace(k, Tensor::zeros(t.shape()));
    st.second_moment.emplace(k, Tensor::zeros(t.shape()));
  }
  return st;
}

void optimizer_step(OptimizerState& st, ParamSet& params, const GradMap& grads) {
  auto& ps = params.mutable_params();
  if (grads.size() != ps.size())
    throw ad::Error("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                    std::to_string(ps.size()) + " parameters");
  for (const auto& [k, _] : ps) {
    if (!grads.contains(k)) throw ad::Error("optimizer_step: no gradient for '" + k + "'");
    if (!st.second_moment.contains(k))
      throw ad::Error("optimizer_step: no optimizer state for '" + k + "'");
  }
  const auto& c = st.config;
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [k, p] : ps) {
    const Tensor& g = grads.at(k);
    if (g.shape() != p.shape())
      throw ad::ShapeError("optimizer_step: gradient shape " + ad::shape_str(g.shape()) +
                           " for '" + k + "' of shape " + ad::shape_str(p.shape()));
    auto pd = p.mutable_data();
    auto gd = g.data();
    auto vd = st.second_moment.at(k).mutable_data();
    if (c.kind == OptimizerKind::kAdam) {
      auto md = st.first_moment.at(k).mutable_data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gd[i];
        vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gd[i] * gd[i];
        pd[i] -= c.lr * (md[i] / bc1) / (std::sqrt(vd[i] / bc2) + c.eps);
      }
    } else {
      for (std::size_t i = 0; i < pd.size(); ++i) {
        vd[i] = c.alpha * vd[i] + (1.0 - c.alpha) * gd[i] * gd[i];
        pd[i] -= c.lr * gd[i] / (std::sqrt(vd[i]) + c.eps);
      }
    }
  }
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "rmsprop";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "rmsprop") return OptimizerKind::kRmsprop;
  throw ad::Error("unknown optimizer '" + s + "'");
}

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'V', 'C', 'K'};

json entries(const std::map<std::string, Tensor>& m) {
  json arr = json::array();
  for (const auto& [k, t] : m) arr.push_back({{"path", k}, {"shape", t.shape()}});
  return arr;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const OptimizerState* opt) {
  json manifest;
  manifest["version"] = 1;
  manifest["mode"] = params.mode == Mode::kTraining ? "training" : "evaluation";
  manifest["params"] = entries(params.params());
  manifest["buffers"] = entries(params.buffers());
  if (opt) {
    const auto& c = opt->config;
    manifest["optimizer"] = {{"kind", to_string(c.kind)}, {"step", opt->step},    {"lr", c.lr},
                             {"beta1", c.beta1},          {"beta2", c.beta2},     {"alpha", c.alpha},
                             {"eps", c.eps},              {"first_moment", entries(opt->first_moment)},
                             {"second_moment", entries(opt->second_moment)}};
  }
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ad::Error("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, 4);
    std::uint64_t n = text.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, t] : params.params()) ad::write_tensor(out, t);
    for (const auto& [_, t] : params.buffers()) ad::write_tensor(out, t);
    if (opt) {
      for (const auto& [_, t] : opt->first_moment) ad::write_tensor(out, t);
      for (const auto& [_, t] : opt->second_moment) ad::write_tensor(out, t);
    }
    if (!out) throw ad::Error("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ad::Error("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw ad::Error("not a checkpoint: " + path.string());
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw ad::Error("truncated checkpoint manifest: " + path.string());
  const json manifest = json::parse(text);

  auto read_into = [&](const json& list, auto&& sink) {
    for (const auto& e : list) {
      Tensor t = ad::read_tensor(in);
      if (t.shape() != e.at("shape").get<Shape>())
        throw ad::ShapeError("checkpoint tensor '" + e.at("path").get<std::string>() +
                             "' does not match its manifest shape");
      sink(e.at("path").get<std::string>(), std::move(t));
    }
  };

  Checkpoint ck;
  read_into(manifest.at("params"), [&](const std::string& k, Tensor t) { ck.params.add_param(k, t); });
  read_into(manifest.at("buffers"), [&](const std::string& k, Tensor t) { ck.params.add_buffer(k, t); });
  ck.params.mode = manifest.value("mode", "training") == "training" ? Mode::kTraining : Mode::kEvaluation;
  if (manifest.contains("optimizer")) {
    const auto& o = manifest["optimizer"];
    OptimizerState st;
    st.config.kind = optimizer_kind_from_string(o.at("kind"));
    st.config.lr = o.at("lr");
    st.config.beta1 = o.at("beta1");
    st.config.beta2 = o.at("beta2");
    st.config.alpha = o.at("alpha");
    st.config.eps = o.at("eps");
    st.step = o.at("step");
    read_into(o.at("first_moment"), [&](const std::string& k, Tensor t) { st.first_moment.emplace(k, t); });
    read_into(o.at("second_moment"), [&](const std::string& k, Tensor t) { st.second_moment.emplace(k, t); });
    ck.optimizer = std::move(st);
  }
  return ck;
}

}  // namespace mvaal::nn
