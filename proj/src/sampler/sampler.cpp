#include "mvaal/sampler/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace mvaal::sampler {

using nn::LayerSpec;

namespace {

// derive_seed tags for the independently seeded components
enum : std::uint64_t { kEncoderTag = 1, kDecoderM1Tag, kDecoderM2Tag, kDiscTag, kStreamTag };

std::int64_t side(const SamplerConfig& c) { return c.image_size / 16; }
std::int64_t flat(const SamplerConfig& c) { return 4 * c.width * side(c) * side(c); }

std::vector<LayerSpec> encoder_body(const SamplerConfig& c) {
  const std::int64_t w = c.width;
  const std::int64_t ch[5] = {1, w, 2 * w, 4 * w, 4 * w};
  std::vector<LayerSpec> layers;
  for (int i = 0; i < 4; ++i) {
    const auto n = std::to_string(i + 1);
    layers.push_back(LayerSpec::conv2d("conv" + n, ch[i], ch[i + 1], 4, 2, 1));
    layers.push_back(LayerSpec::batch_norm("bn" + n, ch[i + 1]));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::flatten());
  return layers;
}

LayerSpec mu_head(const SamplerConfig& c) { return LayerSpec::linear("mu", flat(c), c.latent_dim); }
LayerSpec logvar_head(const SamplerConfig& c) {
  return LayerSpec::linear("logvar", flat(c), c.latent_dim);
}

LayerSpec decoder_fc(const SamplerConfig& c) {
  return LayerSpec::linear("fc", c.latent_dim, flat(c), nn::Activation::kRelu);
}

std::vector<LayerSpec> decoder_body(const SamplerConfig& c) {
  const std::int64_t w = c.width;
  const std::int64_t ch[5] = {4 * w, 4 * w, 2 * w, w, 1};
  std::vector<LayerSpec> layers{LayerSpec::relu()};
  for (int i = 0; i < 4; ++i) {
    const auto n = std::to_string(i + 1);
    const bool last = i == 3;
    layers.push_back(LayerSpec::conv_transpose2d("up" + n, ch[i], ch[i + 1], 4, 2, 1,
                                                 last ? nn::Activation::kSigmoid : nn::Activation::kRelu));
    if (!last) {
      layers.push_back(LayerSpec::batch_norm("bn" + n, ch[i + 1]));
      layers.push_back(LayerSpec::relu());
    }
  }
  layers.push_back(LayerSpec::sigmoid());
  return layers;
}

std::vector<LayerSpec> disc_layers(const SamplerConfig& c) {
  const std::int64_t h = c.disc_hidden;
  return {LayerSpec::linear("fc1", c.latent_dim, h, nn::Activation::kLeakyRelu, 0.2),
          LayerSpec::batch_norm("bn1", h),
          LayerSpec::leaky_relu(0.2),
          LayerSpec::linear("fc2", h, h, nn::Activation::kLeakyRelu, 0.2),
          LayerSpec::batch_norm("bn2", h),
          LayerSpec::leaky_relu(0.2),
          LayerSpec::linear("out", h, 1)};
}

nn::Architecture encoder_arch(const SamplerConfig& c) {
  auto a = encoder_body(c);
  a.push_back(mu_head(c));
  a.push_back(logvar_head(c));
  return a;
}

nn::Architecture decoder_arch(const SamplerConfig& c) {
  auto a = decoder_body(c);
  a.insert(a.begin(), decoder_fc(c));
  return a;
}

Tensor decode(const SamplerConfig& c, nn::ParamSet& ps, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != c.latent_dim)
    throw ad::ShapeError("decoder expects [B," + std::to_string(c.latent_dim) + "], got " +
                         ad::shape_str(z.shape()));
  const Tensor h = nn::layer_forward(decoder_fc(c), ps, z);
  const auto body = decoder_body(c);
  return nn::forward_sequential(body, ps, ad::reshape(h, {z.dim(0), 4 * c.width, side(c), side(c)}));
}

bool uses_m2(const SamplerConfig& c) { return c.mode == SamplerMode::kMvaal && c.gamma3 != 0.0; }

nn::ParamSet vae_view(const SamplerState& s, bool with_m2) {
  std::vector<std::pair<std::string, const nn::ParamSet*>> parts{{"encoder", &s.encoder},
                                                                 {"decoder_m1", &s.decoder_m1}};
  if (with_m2 && s.decoder_m2) parts.emplace_back("decoder_m2", &*s.decoder_m2);
  return nn::ParamSet::merge(parts);
}

nn::GradMap prefixed(const std::string& prefix, const nn::GradMap& g, nn::GradMap out = {}) {
  for (const auto& [k, t] : g) out.emplace(prefix + "/" + k, t);
  return out;
}

Tensor noise_tensor(Rng& rng, std::int64_t rows, std::int64_t dim) {
  std::vector<double> v(static_cast<std::size_t>(rows * dim));
  for (auto& x : v) x = rng.normal();
  return Tensor({rows, dim}, std::move(v));
}

void check_finite(const Tensor& loss, const char* what, std::int64_t batch) {
  const double v = loss.item();
  if (!std::isfinite(v))
    throw nn::NonFiniteLoss(std::string("non-finite ") + what + " loss (" + std::to_string(v) +
                            ") at batch " + std::to_string(batch));
}

// Restores a parameter set's mode flags on scope exit.
struct ModeScope {
  nn::ParamSet& ps;
  nn::Mode mode;
  bool track;
  ModeScope(nn::ParamSet& p, nn::Mode m, bool t) : ps(p), mode(p.mode), track(p.track_running_stats) {
    p.mode = m;
    p.track_running_stats = t;
  }
  ~ModeScope() {
    ps.mode = mode;
    ps.track_running_stats = track;
  }
};

}  // namespace

std::string to_string(SamplerMode mode) { return mode == SamplerMode::kMvaal ? "mvaal" : "vaal"; }

SamplerMode sampler_mode_from_string(const std::string& s) {
  if (s == "mvaal") return SamplerMode::kMvaal;
  if (s == "vaal") return SamplerMode::kVaal;
  throw ad::Error("unknown sampler mode '" + s + "'");
}

void validate(const SamplerConfig& c) {
  for (double v : {c.gamma1, c.gamma2, c.gamma3, c.beta_kl, c.lambda_gp})
    if (!std::isfinite(v) || v < 0) throw ad::Error("sampler loss weights must be finite and >= 0");
  if (c.mode == SamplerMode::kVaal && c.gamma3 != 0.0)
    throw ad::Error("vaal mode requires gamma3 = 0");
  if (c.latent_dim < 1 || c.epochs < 1 || c.batch_size < 1 || c.width < 1 || c.disc_hidden < 1)
    throw ad::Error("sampler sizes must be positive");
  if (c.image_size < 16 || c.image_size % 16 != 0)
    throw ad::Error("sampler image_size must be a positive multiple of 16");
  if (!(c.lr_vae >= 0 && c.lr_disc >= 0)) throw ad::Error("learning rates must be >= 0");
}

SamplerState init_sampler(const SamplerConfig& config, std::uint64_t seed) {
  validate(config);
  SamplerState s;
  s.config = config;
  s.seed = seed;
  s.encoder = nn::init_params(encoder_arch(config), derive_seed(seed, {kEncoderTag}));
  s.decoder_m1 = nn::init_params(decoder_arch(config), derive_seed(seed, {kDecoderM1Tag}));
  if (config.mode == SamplerMode::kMvaal)
    s.decoder_m2 = nn::init_params(decoder_arch(config), derive_seed(seed, {kDecoderM2Tag}));
  s.disc = nn::init_params(disc_layers(config), derive_seed(seed, {kDiscTag}));
  s.rng = Rng(derive_seed(seed, {kStreamTag}));

  nn::OptimizerConfig vae;
  vae.kind = config.optimizer;
  vae.lr = config.lr_vae;
  s.vae_opt = nn::make_optimizer(vae, vae_view(s, true));
  nn::OptimizerConfig disc = vae;
  disc.lr = config.lr_disc;
  s.disc_opt = nn::make_optimizer(disc, s.disc);
  return s;
}

LatentBatch encode_with_noise(SamplerState& state, const Tensor& x, const Tensor& noise) {
  const auto& c = state.config;
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != c.image_size || x.dim(3) != c.image_size)
    throw ad::ShapeError("encoder expects [B,1," + std::to_string(c.image_size) + "," +
                         std::to_string(c.image_size) + "], got " + ad::shape_str(x.shape()));
  if (noise.shape() != ad::Shape{x.dim(0), c.latent_dim})
    throw ad::ShapeError("noise must be [B,latent_dim], got " + ad::shape_str(noise.shape()));
  const auto body = encoder_body(c);
  const Tensor h = nn::forward_sequential(body, state.encoder, x);
  LatentBatch b;
  b.mu = nn::layer_forward(mu_head(c), state.encoder, h);
  b.logvar = nn::layer_forward(logvar_head(c), state.encoder, h);
  b.noise = noise;
  b.z = b.mu + ad::exp(b.logvar * 0.5) * noise;
  return b;
}

LatentBatch encode(SamplerState& state, const Tensor& x, bool sample_noise) {
  if (x.rank() < 1) throw ad::ShapeError("encoder input must be batched");
  const std::int64_t b = x.dim(0), d = state.config.latent_dim;
  return encode_with_noise(state, x, sample_noise ? noise_tensor(state.rng, b, d) : Tensor::zeros({b, d}));
}

LatentBatch slice_rows(const LatentBatch& b, std::int64_t start, std::int64_t end) {
  return {ad::slice(b.mu, 0, start, end), ad::slice(b.logvar, 0, start, end),
          ad::slice(b.z, 0, start, end), ad::slice(b.noise, 0, start, end)};
}

Tensor decode_m1(SamplerState& state, const Tensor& z) { return decode(state.config, state.decoder_m1, z); }

Tensor decode_m2(SamplerState& state, const Tensor& z) {
  if (!state.decoder_m2) throw ad::Error("decoder-m2 is absent in vaal mode");
  return decode(state.config, *state.decoder_m2, z);
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ad::ShapeError("mse: " + ad::shape_str(a.shape()) + " vs " + ad::shape_str(b.shape()));
  return ad::mean(ad::square(a - b));
}

ReconLosses reconstruction_losses(SamplerState& state, const Tensor& x_m1, const Tensor* x_m2,
                                  const LatentBatch& latent) {
  ReconLosses r;
  r.m1 = mse(decode_m1(state, latent.z), x_m1);
  if (state.config.mode == SamplerMode::kMvaal) {
    if (!x_m2 || !x_m2->defined()) throw ad::Error("mvaal mode needs m2 images for reconstruction");
    r.m2 = mse(decode_m2(state, latent.z), *x_m2);
  }
  return r;
}

Tensor kl_divergence(const LatentBatch& l) {
  const Tensor inner = l.logvar + 1.0 - ad::square(l.mu) - ad::exp(l.logvar);
  return ad::mean(ad::sum(inner, {1})) * -0.5;
}

Tensor critic_scores(const SamplerConfig& config, nn::ParamSet& disc, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != config.latent_dim)
    throw ad::ShapeError("discriminator expects [B," + std::to_string(config.latent_dim) + "], got " +
                         ad::shape_str(z.shape()));
  const auto layers = disc_layers(config);
  return ad::reshape(nn::forward_sequential(layers, disc, z), {z.dim(0)});
}

Tensor vae_adversarial_loss(const Critic& d, const LatentBatch& l, const LatentBatch& u) {
  const std::int64_t n = l.z.dim(0), m = u.z.dim(0);
  if (n == 0 || m == 0) throw ad::Error("adversarial loss needs nonempty batches");
  const Tensor parts[] = {l.z, u.z};
  const Tensor s = d(ad::concat(parts, 0));
  return ad::mean(ad::slice(s, 0, 0, n)) - ad::mean(ad::slice(s, 0, n, n + m));
}

Tensor vae_adversarial_loss(SamplerState& state, const LatentBatch& l, const LatentBatch& u) {
  nn::ParamSet frozen = state.disc.frozen();
  frozen.track_running_stats = false;
  const auto& cfg = state.config;
  return vae_adversarial_loss([&](const Tensor& z) { return critic_scores(cfg, frozen, z); }, l, u);
}

DiscLoss discriminator_loss(const Critic& d_scores, const Critic& d_penalty, const LatentBatch& l,
                            const LatentBatch& u, double lambda, const Tensor& eps) {
  const std::int64_t n = l.z.dim(0);
  if (n == 0 || u.z.dim(0) != n)
    throw ad::Error("discriminator loss needs equal nonempty batches, got " + std::to_string(n) +
                    " and " + std::to_string(u.z.dim(0)));
  if (eps.shape() != ad::Shape{n, 1}) throw ad::ShapeError("eps must be [B,1]");
  const Tensor zl = l.z.detach(), zu = u.z.detach();
  const Tensor parts[] = {zl, zu};
  const Tensor s = d_scores(ad::concat(parts, 0));
  DiscLoss out;
  out.wasserstein = ad::mean(ad::slice(s, 0, n, 2 * n)) - ad::mean(ad::slice(s, 0, 0, n));
  if (lambda == 0.0) {
    out.penalty = Tensor::scalar(0.0);
  } else {
    const Tensor zhat = eps * zl + (-eps + 1.0) * zu;
    out.penalty = ad::grad_penalty_kernel(d_penalty, zhat, lambda);
  }
  out.total = out.wasserstein + out.penalty;
  return out;
}

DiscLoss discriminator_loss(SamplerState& state, const LatentBatch& l, const LatentBatch& u) {
  const auto& cfg = state.config;
  const std::int64_t n = l.z.dim(0);
  std::vector<double> e(static_cast<std::size_t>(n));
  for (auto& v : e) v = state.rng.uniform();
  nn::ParamSet eval_view = state.disc;
  eval_view.mode = nn::Mode::kEvaluation;
  return discriminator_loss([&](const Tensor& z) { return critic_scores(cfg, state.disc, z); },
                            [&](const Tensor& z) { return critic_scores(cfg, eval_view, z); }, l, u,
                            cfg.lambda_gp, Tensor({n, 1}, std::move(e)));
}

VaeLoss vae_loss(SamplerState& state, const Tensor& l_m1, const Tensor* l_m2, const Tensor& u_m1,
                 const Tensor* u_m2, const Tensor& noise) {
  const auto& c = state.config;
  const std::int64_t n = l_m1.dim(0), m = u_m1.dim(0);
  // One joint pass: batch-norm statistics are shared by both pools.
  const Tensor xs[] = {l_m1, u_m1};
  const LatentBatch lat = encode_with_noise(state, ad::concat(xs, 0), noise);
  const LatentBatch lat_l = slice_rows(lat, 0, n), lat_u = slice_rows(lat, n, n + m);

  VaeLoss out;
  const Tensor r1 = decode_m1(state, lat.z);
  out.recon_m1 = mse(ad::slice(r1, 0, 0, n), l_m1) + mse(ad::slice(r1, 0, n, n + m), u_m1);
  out.kl = kl_divergence(lat_l) + kl_divergence(lat_u);
  out.adv = vae_adversarial_loss(state, lat_l, lat_u);
  out.total = out.adv * c.gamma1 + out.recon_m1 * c.gamma2 + out.kl * c.beta_kl;
  if (uses_m2(c)) {
    if (!l_m2 || !u_m2 || !l_m2->defined() || !u_m2->defined())
      throw ad::Error("mvaal mode needs m2 images for both pools");
    const Tensor r2 = decode_m2(state, lat.z);
    out.recon_m2 = mse(ad::slice(r2, 0, 0, n), *l_m2) + mse(ad::slice(r2, 0, n, n + m), *u_m2);
    out.total = out.total + *out.recon_m2 * c.gamma3;
  }
  return out;
}

EpochLosses train_sampler_epoch(SamplerState& state, const SamplerData& data) {
  const auto& c = state.config;
  const std::int64_t L = data.labeled_m1.defined() ? data.labeled_m1.dim(0) : 0;
  const std::int64_t U = data.unlabeled_m1.defined() ? data.unlabeled_m1.dim(0) : 0;
  if (L == 0) throw ad::Error("sampler training needs labeled samples");
  if (U == 0) throw ad::Error("sampler training needs a nonempty unlabeled pool");
  const bool m2 = uses_m2(c);
  if (m2 && (!data.labeled_m2.defined() || !data.unlabeled_m2.defined()))
    throw ad::Error("mvaal mode needs m2 images for both pools");

  std::vector<std::int64_t> order_l(static_cast<std::size_t>(L)), order_u(static_cast<std::size_t>(U));
  std::iota(order_l.begin(), order_l.end(), std::int64_t{0});
  std::iota(order_u.begin(), order_u.end(), std::int64_t{0});
  state.rng.shuffle(order_l);
  state.rng.shuffle(order_u);
  std::size_t cursor_u = 0;

  nn::ParamSet* vae_sets[] = {&state.encoder, &state.decoder_m1,
                              m2 ? &*state.decoder_m2 : nullptr};
  const std::size_t n_vae = m2 ? 3 : 2;
  nn::ParamSet vae_params = vae_view(state, m2);

  EpochLosses acc;
  std::int64_t batches = 0;
  for (std::int64_t s = 0; s < L; s += c.batch_size) {
    const std::int64_t n = std::min(L, s + c.batch_size) - s;
    const std::span<const std::int64_t> rows_l(order_l.data() + s, static_cast<std::size_t>(n));
    std::vector<std::int64_t> rows_u;
    for (std::int64_t k = 0; k < n; ++k) {
      if (cursor_u == order_u.size()) {
        state.rng.shuffle(order_u);
        cursor_u = 0;
      }
      rows_u.push_back(order_u[cursor_u++]);
    }
    const Tensor l1 = ad::take_rows(data.labeled_m1, rows_l);
    const Tensor u1 = ad::take_rows(data.unlabeled_m1, rows_u);
    Tensor l2, u2;
    if (m2) {
      l2 = ad::take_rows(data.labeled_m2, rows_l);
      u2 = ad::take_rows(data.unlabeled_m2, rows_u);
    }

    // (a) VAE step; the discriminator is a constant here
    state.encoder.mode = state.decoder_m1.mode = nn::Mode::kTraining;
    if (state.decoder_m2) state.decoder_m2->mode = nn::Mode::kTraining;
    state.disc.mode = nn::Mode::kTraining;
    const VaeLoss vl = vae_loss(state, l1, m2 ? &l2 : nullptr, u1, m2 ? &u2 : nullptr,
                                noise_tensor(state.rng, 2 * n, c.latent_dim));
    check_finite(vl.total, "VAE", batches);
    const auto grads = nn::gradients(vl.total, std::span<nn::ParamSet* const>(vae_sets, n_vae));
    nn::GradMap merged = prefixed("encoder", grads[0]);
    merged = prefixed("decoder_m1", grads[1], std::move(merged));
    if (m2) merged = prefixed("decoder_m2", grads[2], std::move(merged));
    nn::optimizer_step(state.vae_opt, vae_params, merged);
    acc.adv += vl.adv.item();
    acc.recon_m1 += vl.recon_m1.item();
    if (vl.recon_m2) acc.recon_m2 += vl.recon_m2->item();
    acc.kl += vl.kl.item();
    ad::reset_graph();

    // (b) discriminator step on freshly re-encoded, detached latents
    LatentBatch lat;
    {
      ad::NoGradGuard off;
      ModeScope scope(state.encoder, nn::Mode::kTraining, false);
      const Tensor xs[] = {l1, u1};
      lat = encode(state, ad::concat(xs, 0), true);
    }
    const DiscLoss dl = discriminator_loss(state, slice_rows(lat, 0, n), slice_rows(lat, n, 2 * n));
    check_finite(dl.total, "discriminator", batches);
    nn::optimizer_step(state.disc_opt, state.disc, nn::gradients(dl.total, state.disc));
    acc.disc += dl.total.item();
    acc.gp += dl.penalty.item();
    ad::reset_graph();
    ++batches;
  }
  const double k = static_cast<double>(batches);
  acc.adv /= k;
  acc.recon_m1 /= k;
  acc.recon_m2 /= k;
  acc.kl /= k;
  acc.disc /= k;
  acc.gp /= k;
  return acc;
}

std::vector<EpochLosses> train_sampler(SamplerState& state, const SamplerData& data,
                                       const std::filesystem::path& loss_csv) {
  std::vector<EpochLosses> out;
  for (std::int64_t e = 1; e <= state.config.epochs; ++e) {
    auto row = train_sampler_epoch(state, data);
    row.epoch = e;
    if (!loss_csv.empty()) append_loss_csv(loss_csv, row);
    out.push_back(row);
  }
  return out;
}

std::vector<double> score_pool(SamplerState& state, const Tensor& m1) {
  ad::NoGradGuard off;
  ModeScope enc(state.encoder, nn::Mode::kEvaluation, false);
  ModeScope disc(state.disc, nn::Mode::kEvaluation, false);
  const std::int64_t n = m1.dim(0);
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; s += 256) {
    const std::int64_t e = std::min(n, s + 256);
    const LatentBatch lat = encode(state, ad::slice(m1, 0, s, e), false);
    const Tensor sc = critic_scores(state.config, state.disc, lat.mu);
    scores.insert(scores.end(), sc.data().begin(), sc.data().end());
  }
  return scores;
}

std::vector<std::int64_t> bottom_b(std::span<const double> scores,
                                   std::span<const std::int64_t> indices, std::int64_t b) {
  if (scores.size() != indices.size()) throw ad::Error("bottom_b: scores and indices differ in length");
  if (b < 0 || b > static_cast<std::int64_t>(indices.size()))
    throw ad::Error("budget " + std::to_string(b) + " exceeds pool size " + std::to_string(indices.size()));
  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto less = [&](std::size_t i, std::size_t j) {
    return scores[i] < scores[j] || (scores[i] == scores[j] && indices[i] < indices[j]);
  };
  std::partial_sort(order.begin(), order.begin() + b, order.end(), less);
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(b));
  for (std::int64_t k = 0; k < b; ++k) out.push_back(indices[order[static_cast<std::size_t>(k)]]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::int64_t> select_for_annotation(SamplerState& state, const Tensor& unlabeled_m1,
                                                std::span<const std::int64_t> pool_indices,
                                                std::int64_t b) {
  if (unlabeled_m1.dim(0) != static_cast<std::int64_t>(pool_indices.size()))
    throw ad::Error("select_for_annotation: " + std::to_string(unlabeled_m1.dim(0)) + " images for " +
                    std::to_string(pool_indices.size()) + " pool indices");
  if (b > static_cast<std::int64_t>(pool_indices.size()))
    throw ad::Error("budget " + std::to_string(b) + " exceeds pool size " +
                    std::to_string(pool_indices.size()));
  const auto scores = score_pool(state, unlabeled_m1);
  return bottom_b(scores, pool_indices, b);
}

void append_loss_csv(const std::filesystem::path& path, const EpochLosses& r) {
  const bool fresh = !std::filesystem::exists(path);
  if (fresh && path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw ad::Error("cannot append to " + path.string());
  out.precision(17);
  if (fresh) out << "epoch,adv,recon_m1,recon_m2,kl,disc,gp\n";
  out << r.epoch << ',' << r.adv << ',' << r.recon_m1 << ',' << r.recon_m2 << ',' << r.kl << ','
      << r.disc << ',' << r.gp << '\n';
}

void save_sampler(const SamplerState& state, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(dir / "vae.ckpt", vae_view(state, true), &state.vae_opt);
  nn::save_checkpoint(dir / "disc.ckpt", state.disc, &state.disc_opt);
  const auto& c = state.config;
  nlohmann::json j = {{"mode", to_string(c.mode)},     {"latent_dim", c.latent_dim},
                      {"gamma1", c.gamma1},             {"gamma2", c.gamma2},
                      {"gamma3", c.gamma3},             {"beta_kl", c.beta_kl},
                      {"lambda_gp", c.lambda_gp},       {"lr_vae", c.lr_vae},
                      {"lr_disc", c.lr_disc},           {"epochs", c.epochs},
                      {"batch_size", c.batch_size},     {"image_size", c.image_size},
                      {"width", c.width},               {"disc_hidden", c.disc_hidden},
                      {"optimizer", nn::to_string(c.optimizer)}, {"seed", state.seed}};
  std::ofstream(dir / "sampler.json") << j.dump(2) << '\n';
}

}  // namespace mvaal::sampler
