#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvaal/nn/nn.hpp"
#include "mvaal/util/random.hpp"

namespace mvaal::sampler {

using ad::Tensor;

enum class SamplerMode { kMvaal, kVaal };

std::string to_string(SamplerMode mode);
SamplerMode sampler_mode_from_string(const std::string& s);

struct SamplerConfig {
  SamplerMode mode = SamplerMode::kMvaal;
  std::int64_t latent_dim = 16;
  double gamma1 = 1.0;  // adversarial
  double gamma2 = 1.0;  // m1 reconstruction
  double gamma3 = 1.0;  // m2 reconstruction
  double beta_kl = 1.0;
  double lambda_gp = 1.0;
  double lr_vae = 1e-4;
  double lr_disc = 3e-3;  // faster critic, one D step per VAE step
  std::int64_t epochs = 20;
  std::int64_t batch_size = 16;
  std::int64_t image_size = 32;
  // encoder channels {w, 2w, 4w, 4w}; decoders mirror them
  std::int64_t width = 8;
  std::int64_t disc_hidden = 64;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdam;
};

// Throws on violated invariants (negative weights, vaal with gamma3 != 0, ...).
void validate(const SamplerConfig& config);

struct SamplerState {
  SamplerConfig config;
  nn::ParamSet encoder;
  nn::ParamSet decoder_m1;
  std::optional<nn::ParamSet> decoder_m2;
  nn::ParamSet disc;
  nn::OptimizerState vae_opt;   // keys "encoder/...", "decoder_m1/...", "decoder_m2/..."
  nn::OptimizerState disc_opt;
  Rng rng;
  std::uint64_t seed = 0;
};

SamplerState init_sampler(const SamplerConfig& config, std::uint64_t seed);

struct LatentBatch {
  Tensor mu;
  Tensor logvar;
  Tensor z;
  Tensor noise;
};

// Reparameterized encoding; noise comes from the state's stream, or is zero
// when sample_noise is false (z == mu).
LatentBatch encode(SamplerState& state, const Tensor& x_m1, bool sample_noise);
LatentBatch encode_with_noise(SamplerState& state, const Tensor& x_m1, const Tensor& noise);
// Rows [start, end) of every field.
LatentBatch slice_rows(const LatentBatch& b, std::int64_t start, std::int64_t end);

Tensor decode_m1(SamplerState& state, const Tensor& z);
Tensor decode_m2(SamplerState& state, const Tensor& z);

Tensor mse(const Tensor& a, const Tensor& b);

struct ReconLosses {
  Tensor m1;
  std::optional<Tensor> m2;
};
// MSE of each decoder's output against its target. x_m2 is required in
// mvaal mode and ignored in vaal mode.
ReconLosses reconstruction_losses(SamplerState& state, const Tensor& x_m1, const Tensor* x_m2,
                                  const LatentBatch& latent);

// -1/2 mean_B sum_d (1 + logvar - mu^2 - exp(logvar))
Tensor kl_divergence(const LatentBatch& latent);

// Latent [B,D] -> scores [B].
using Critic = std::function<Tensor(const Tensor&)>;

// Discriminator of `state` as a critic over the given parameter set view.
Tensor critic_scores(const SamplerConfig& config, nn::ParamSet& disc, const Tensor& z);

// mean D(z) - mean D(z*)
Tensor vae_adversarial_loss(const Critic& d, const LatentBatch& labeled, const LatentBatch& unlabeled);
Tensor vae_adversarial_loss(SamplerState& state, const LatentBatch& labeled,
                            const LatentBatch& unlabeled);

struct DiscLoss {
  Tensor total;
  Tensor wasserstein;  // -mean D(z) + mean D(z*)
  Tensor penalty;      // lambda * mean (||grad D(z_hat)|| - 1)^2
};

// `d_scores` rates latents for the Wasserstein term; `d_penalty` is the
// per-sample critic used for the penalty at z_hat = eps z + (1 - eps) z*.
// Latents are detached so only the critic's parameters receive gradient.
DiscLoss discriminator_loss(const Critic& d_scores, const Critic& d_penalty,
                            const LatentBatch& labeled, const LatentBatch& unlabeled, double lambda,
                            const Tensor& eps);
DiscLoss discriminator_loss(SamplerState& state, const LatentBatch& labeled,
                            const LatentBatch& unlabeled);

struct SamplerData {
  Tensor labeled_m1;
  Tensor labeled_m2;  // undefined in vaal mode is fine
  Tensor unlabeled_m1;
  Tensor unlabeled_m2;
};

struct EpochLosses {
  std::int64_t epoch = 0;
  double adv = 0.0;
  double recon_m1 = 0.0;
  double recon_m2 = 0.0;
  double kl = 0.0;
  double disc = 0.0;
  double gp = 0.0;
};

// The VAE objective for one labeled/unlabeled batch pair, given noise.
struct VaeLoss {
  Tensor total;
  Tensor adv;
  Tensor recon_m1;
  std::optional<Tensor> recon_m2;
  Tensor kl;
};
VaeLoss vae_loss(SamplerState& state, const Tensor& l_m1, const Tensor* l_m2, const Tensor& u_m1,
                 const Tensor* u_m2, const Tensor& noise);

EpochLosses train_sampler_epoch(SamplerState& state, const SamplerData& data);
std::vector<EpochLosses> train_sampler(SamplerState& state, const SamplerData& data,
                                       const std::filesystem::path& loss_csv = {});

// Noise-free, evaluation-mode discriminator scores for a batch of m1 images.
std::vector<double> score_pool(SamplerState& state, const Tensor& m1);

// The b indices with the lowest scores, ties broken by smaller index,
// returned in ascending index order.
std::vector<std::int64_t> bottom_b(std::span<const double> scores,
                                   std::span<const std::int64_t> indices, std::int64_t b);

std::vector<std::int64_t> select_for_annotation(SamplerState& state, const Tensor& unlabeled_m1,
                                                std::span<const std::int64_t> pool_indices,
                                                std::int64_t b);

void append_loss_csv(const std::filesystem::path& path, const EpochLosses& row);

void save_sampler(const SamplerState& state, const std::filesystem::path& dir);

}  // namespace mvaal::sampler
