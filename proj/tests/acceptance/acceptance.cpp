// One line per headline criterion: PASS/FAIL, the measured quantities and
// the wall time. Tolerances are fixed here, not tuned per run.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "support/grad_cases.hpp"
#include "mvaal/harness/harness.hpp"
#include "support/oracles.hpp"
#include "test_util.hpp"

namespace ad = mvaal::ad;
namespace al = mvaal::al;
namespace harness = mvaal::harness;
namespace nn = mvaal::nn;
namespace sampler = mvaal::sampler;
namespace synth = mvaal::synth;
namespace task = mvaal::task;
namespace fs = std::filesystem;
using ad::Tensor;
using mvaal::testing::random_tensor;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Result(const fs::path& work)> run;
};

std::string num(double v, int digits = 3) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// gradient suite

struct Worst {
  double err = 0.0;
  std::string name;
  void see(const std::string& n, double e) {
    if (!(e <= err)) err = e, name = n;  // NaN counts as worst
  }
};

sampler::LatentBatch latent_of(const Tensor& z) {
  return {z, Tensor::zeros(z.shape()), z, Tensor::zeros(z.shape())};
}

Tensor bits(const ad::Shape& shape, std::vector<double> v) { return Tensor(shape, std::move(v)); }

Result gradient_suite(const fs::path&) {
  const auto t0 = std::chrono::steady_clock::now();
  Worst prim, composed, sweep, deep;
  std::size_t n_prim = 0, n_comp = 0;

  // pinned draw: every primitive and its backward rule (second order)
  auto primitives = [](std::uint64_t seed, Worst& into, std::size_t* count) {
    const auto cases = mvaal::testing::primitive_grad_cases(seed);
    auto all = cases;
    for (std::size_t i = 0; i < cases.size(); ++i) all.push_back(mvaal::testing::second_order(cases[i], seed + 100 + i));
    for (const auto& r : mvaal::testing::run_grad_cases(all, 1e-5)) {
      into.see(r.name, r.error);
      if (count) ++*count;
    }
  };
  primitives(2024, prim, &n_prim);
  // other draws, reported only: coordinates with |grad| ~ 1e-6 sit at the
  // round-off floor of central differences
  for (std::uint64_t seed = 1; seed <= 5; ++seed) primitives(seed * 77, sweep, nullptr);

  auto check = [&](Worst& into, const std::string& name, const ad::ScalarMap& f, const Tensor& x) {
    into.see(name, ad::finite_difference_check(f, x, 1e-6));
    if (&into == &composed) ++n_comp;
    ad::reset_graph();
  };

  std::mt19937_64 rng(99);
  synth::SynthSpec spec;
  spec.n_samples = 24;
  spec.seed = 4;
  const auto ds = synth::generate_dataset(spec);
  const std::vector<std::int64_t> one{0}, other{1};
  const Tensor l1 = synth::stack(ds, one, synth::Modality::kM1), l2 = synth::stack(ds, one, synth::Modality::kM2);
  const Tensor u1 = synth::stack(ds, other, synth::Modality::kM1), u2 = synth::stack(ds, other, synth::Modality::kM2);

  // 2-sample batch (one per pool), width-4 network
  sampler::SamplerConfig c;
  c.latent_dim = 4;
  c.width = 4;
  c.disc_hidden = 8;
  auto s = sampler::init_sampler(c, 31);
  std::normal_distribution<double> normal;
  std::vector<double> nv(static_cast<std::size_t>(2 * c.latent_dim));
  for (auto& v : nv) v = normal(rng);
  const Tensor noise({2, c.latent_dim}, nv);

  auto with_param = [&](Worst& into, const std::string& tag, nn::ParamSet& ps, const std::string& path,
                        std::function<Tensor()> loss) {
    const Tensor orig = ps.param(path);
    check(into, tag + ":" + path,
          [&](const Tensor& x) {
            ps.set_param(path, x);
            return loss();
          },
          orig);
    ps.set_param(path, orig);
  };

  // reconstruction terms w.r.t. the latent code
  const Tensor z0 = random_tensor(rng, {2, c.latent_dim});
  const Tensor x2 = ad::concat(std::vector<Tensor>{l1, u1}, 0), y2 = ad::concat(std::vector<Tensor>{l2, u2}, 0);
  check(composed, "recon_m1:z", [&](const Tensor& z) { return sampler::reconstruction_losses(s, x2, &y2, latent_of(z)).m1; },
        z0);
  check(composed, "recon_m2:z",
        [&](const Tensor& z) { return *sampler::reconstruction_losses(s, x2, &y2, latent_of(z)).m2; }, z0);

  // KL over mu and logvar
  const Tensor mu0 = random_tensor(rng, {3, 4}), lv0 = random_tensor(rng, {3, 4});
  check(composed, "kl:mu", [&](const Tensor& m) { return sampler::kl_divergence({m, lv0, m, Tensor::zeros({3, 4})}); },
        mu0);
  check(composed, "kl:logvar",
        [&](const Tensor& lv) { return sampler::kl_divergence({mu0, lv, mu0, Tensor::zeros({3, 4})}); }, lv0);

  // adversarial term w.r.t. both latents, critic fixed
  nn::ParamSet frozen = s.disc.frozen();
  frozen.track_running_stats = false;
  const sampler::Critic fixed = [&](const Tensor& z) { return sampler::critic_scores(c, frozen, z); };
  const auto zu = latent_of(random_tensor(rng, {2, c.latent_dim}));
  check(composed, "adversarial:z", [&](const Tensor& z) { return sampler::vae_adversarial_loss(fixed, latent_of(z), zu); },
        random_tensor(rng, {2, c.latent_dim}));
  check(composed, "adversarial:z*", [&](const Tensor& z) { return sampler::vae_adversarial_loss(fixed, zu, latent_of(z)); },
        random_tensor(rng, {2, c.latent_dim}));

  // full VAE objective through encoder and both decoders
  auto vae = [&] { return sampler::vae_loss(s, l1, &l2, u1, &u2, noise).total; };
  for (const std::string path : {"mu/weight", "logvar/bias", "bn4/weight", "conv1/weight"})
    with_param(composed, "vae_total", s.encoder, path, vae);
  with_param(composed, "vae_total", s.decoder_m1, "fc/bias", vae);
  with_param(composed, "vae_total", s.decoder_m1, "bn3/bias", vae);
  with_param(composed, "vae_total", *s.decoder_m2, "up4/weight", vae);

  // critic objective with the penalty's double backward
  const auto za = latent_of(random_tensor(rng, {2, c.latent_dim}));
  const auto zb = latent_of(random_tensor(rng, {2, c.latent_dim}));
  const Tensor eps({2, 1}, {0.25, 0.6});
  s.disc.track_running_stats = false;  // the penalty critic reads the running stats
  auto disc = [&] {
    nn::ParamSet eval_view = s.disc;
    eval_view.mode = nn::Mode::kEvaluation;
    return sampler::discriminator_loss([&](const Tensor& z) { return sampler::critic_scores(c, s.disc, z); },
                                       [&](const Tensor& z) { return sampler::critic_scores(c, eval_view, z); }, za,
                                       zb, 1.0, eps)
        .total;
  };
  for (const std::string path : {"fc1/weight", "bn1/weight", "fc2/weight", "bn2/weight", "out/weight"})
    with_param(composed, "disc_wgan_gp", s.disc, path, disc);
  // the output bias cancels between the two means and leaves the penalty
  // alone, so its gradient must be exactly zero
  bool bias_zero = false;
  {
    const Tensor orig = s.disc.param("out/bias");
    Tensor b = orig.detach().clone();
    b.set_requires_grad(true);
    s.disc.set_param("out/bias", b);
    bias_zero = ad::backward(disc(), {b})[0].data()[0] == 0.0;
    s.disc.set_param("out/bias", orig);
    ad::reset_graph();
  }

  // bare penalty kernel of a two-layer leaky critic w.r.t. its first weight
  const Tensor zk = random_tensor(rng, {3, 4}), w2 = random_tensor(rng, {1, 5});
  check(composed, "gp_kernel",
        [&](const Tensor& w) {
          ad::BatchMap critic = [w, w2](const Tensor& in) {
            return ad::reshape(
                ad::matmul(ad::leaky_relu(ad::matmul(in, ad::transpose(w)), 0.2), ad::transpose(w2)), {in.dim(0)});
          };
          return ad::grad_penalty_kernel(critic, zk, 1.0);
        },
        random_tensor(rng, {5, 4}));

  // task losses on logits, and through each task network's output layer
  const Tensor mask = bits({2, 1, 3, 3}, {1, 0, 1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 1, 0});
  check(composed, "segmentation_loss", [&](const Tensor& x) { return task::segmentation_loss(x, mask); },
        random_tensor(rng, {2, 1, 3, 3}, -2, 2));
  const Tensor ids = bits({3}, {2, 0, 1});
  check(composed, "multiclass_loss",
        [&](const Tensor& x) { return task::classification_loss(x, ids, task::TaskKind::kMulticlass); },
        random_tensor(rng, {3, 4}, -2, 2));
  const Tensor hot = bits({2, 3}, {1, 0, 1, 0, 0, 1});
  check(composed, "multilabel_loss",
        [&](const Tensor& x) { return task::classification_loss(x, hot, task::TaskKind::kMultilabel); },
        random_tensor(rng, {2, 3}, -2, 2));
  for (auto kind : {task::TaskKind::kMulticlass, task::TaskKind::kMultilabel, task::TaskKind::kSegmentation}) {
    task::TaskSpec ts;
    ts.kind = kind;
    ts.width = 2;
    ts.num_classes = kind == task::TaskKind::kSegmentation ? 1 : 5;
    auto params = task::init_task_params(ts, 8);
    params.track_running_stats = false;
    const std::vector<std::int64_t> some{4, 5, 6};
    const auto data = task::make_task_data(ds, some, ts);
    const std::string path = kind == task::TaskKind::kSegmentation ? "out/weight" : "head/weight";
    with_param(composed, task::to_string(kind) + "_net", params, path,
               [&] { return task::task_loss(ts, task::task_forward(ts, params, data.x), data.y); });
  }

  // deep ReLU weights, reported only: most coordinates are ~1e-7 there
  with_param(deep, "recon_m1", s.decoder_m1, "up2/weight", [&] {
    return sampler::reconstruction_losses(s, x2, &y2, sampler::encode_with_noise(s, x2, noise)).m1;
  });
  with_param(deep, "vae_total", s.encoder, "conv2/weight", vae);

  const double t = seconds_since(t0);
  const bool pass = prim.err < 1e-5 && composed.err < 1e-4 && bias_zero && t < 120.0;
  return {pass, std::string(bias_zero ? "" : "critic output bias gradient NONZERO; ") + "primitives max rel err " + num(prim.err) + " over " + std::to_string(n_prim) + " cases (" + prim.name +
                    "), composed losses " + num(composed.err) + " over " + std::to_string(n_comp) + " (" +
                    composed.name + "); limits 1e-5 / 1e-4, " + num(t) + "s < 120s; not gated: other primitive draws " +
                    num(sweep.err) + " (" + sweep.name + "), deep decoder/encoder weights " + num(deep.err) + " (" +
                    deep.name + ")"};
}

// ---------------------------------------------------------------------------
// closed forms

Result closed_forms(const fs::path&) {
  double worst = 0.0;
  std::string where;
  auto see = [&](const std::string& n, double got, double want) {
    const double e = std::abs(got - want);
    if (!(e <= worst)) worst = e, where = n;
  };
  auto kl = [](double mu, double lv) {
    return sampler::kl_divergence({Tensor({1, 1}, {mu}), Tensor({1, 1}, {lv}), Tensor({1, 1}, {mu}),
                                   Tensor::zeros({1, 1})})
        .item();
  };
  see("kl standard normal", kl(0, 0), 0.0);
  see("kl mu=1", kl(1, 0), 0.5);
  see("kl logvar=ln2", kl(0, std::log(2.0)), 0.5 * (1.0 - std::log(2.0)));
  const bool kl_approx = std::abs(kl(0, std::log(2.0)) - 0.1534) < 5e-5;

  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    const Tensor w = random_tensor(rng, {1, 6}, -2, 2);
    const Tensor x = random_tensor(rng, {5, 6});
    const double lambda = 0.1 + 0.3 * t;
    ad::BatchMap linear = [w](const Tensor& in) { return ad::reshape(ad::matmul(in, ad::transpose(w)), {in.dim(0)}); };
    double norm = 0;
    for (double v : w.data()) norm += v * v;
    see("linear gp", ad::grad_penalty_kernel(linear, x, lambda).item(),
        lambda * (std::sqrt(norm) - 1) * (std::sqrt(norm) - 1));
    ad::reset_graph();
  }
  ad::BatchMap w34 = [](const Tensor& in) {
    return ad::reshape(ad::matmul(in, Tensor({2, 1}, {3, 4})), {in.dim(0)});
  };
  see("gp w=[3,4]", ad::grad_penalty_kernel(w34, random_tensor(rng, {4, 2}), 2.0).item(), 32.0);
  ad::reset_graph();

  const Tensor a = bits({8}, {1, 1, 1, 1, 0, 0, 0, 0});
  see("dice self", task::dice_score(a, a), 1.0);
  see("dice disjoint", task::dice_score(a, bits({8}, {0, 0, 0, 0, 1, 1, 1, 1})), 0.0);
  see("dice half", task::dice_score(a, bits({8}, {0, 0, 1, 1, 1, 1, 0, 0})), 0.5);
  see("dice empty", task::dice_score(Tensor::zeros({8}), Tensor::zeros({8})), 1.0);
  see("dice 2/3", task::dice_score(bits({4}, {1, 1, 0, 0}), bits({4}, {1, 0, 0, 0})), 2.0 / 3.0);
  const std::vector<std::int64_t> p{0, 1, 2, 2}, g{0, 1, 1, 2};
  see("accuracy 3/4", task::overall_accuracy(p, g), 0.75);
  see("accuracy all", task::overall_accuracy(g, g), 1.0);

  double map_err = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::int64_t n = 5 + static_cast<std::int64_t>(rng() % 20), k = 1 + static_cast<std::int64_t>(rng() % 5);
    std::vector<double> sv(static_cast<std::size_t>(n * k)), tv(sv.size());
    for (std::size_t i = 0; i < sv.size(); ++i) {
      sv[i] = static_cast<double>(rng() % 7) / 7.0;  // coarse, so ties happen
      tv[i] = static_cast<double>(rng() % 3 == 0);
    }
    const auto got = task::mean_average_precision(Tensor({n, k}, sv), Tensor({n, k}, tv));
    double total = 0;
    int included = 0;
    for (std::int64_t cls = 0; cls < k; ++cls) {
      std::vector<double> col;
      std::vector<int> truth;
      for (std::int64_t i = 0; i < n; ++i) {
        col.push_back(sv[static_cast<std::size_t>(i * k + cls)]);
        truth.push_back(tv[static_cast<std::size_t>(i * k + cls)] > 0.5);
      }
      const double ap = mvaal::testing::brute_force_ap(col, truth);
      if (!std::isnan(ap)) total += ap, ++included;
    }
    const double want = included ? total / included : 0.0;
    map_err = std::max(map_err, std::abs(got.map - want));
    if (got.included != included) map_err = INFINITY;
  }
  see("mAP vs brute force", map_err, 0.0);

  return {worst < 1e-9 && kl_approx,
          "max abs error " + num(worst) + (where.empty() ? "" : " (" + where + ")") +
              " over KL, linear GP (50 + [3,4]), Dice/accuracy cases and 200 mAP instances; limit 1e-9"};
}

// ---------------------------------------------------------------------------
// acquisition loop mechanics

Result loop_mechanics(const fs::path& work) {
  std::mt19937_64 rng(2718);
  std::int64_t ops = 0;
  std::string failure;
  try {
    while (ops < 10000) {
      const std::int64_t n = 20 + static_cast<std::int64_t>(rng() % 200);
      const std::int64_t init = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n / 2));
      al::Pool pool(n, al::initial_labeled(n, init, rng()));
      std::set<std::int64_t> ever(pool.labeled().begin(), pool.labeled().end());
      while (!pool.unlabeled().empty() && ops < 10000) {
        const auto left = static_cast<std::int64_t>(pool.unlabeled().size());
        const std::int64_t b = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(std::min<std::int64_t>(left, 25)));
        std::vector<std::int64_t> picked;
        if (rng() % 2) {
          picked = al::random_acquire(pool, b, rng());
        } else {
          std::vector<double> scores(pool.unlabeled().size());
          for (auto& v : scores) v = static_cast<double>(rng() % 50);
          picked = sampler::bottom_b(scores, pool.unlabeled(), b);
        }
        const auto before = pool.labeled().size();
        pool = al::update_pools(pool, picked);
        pool.check();
        if (static_cast<std::int64_t>(pool.labeled().size() - before) != b) throw al::Error("labeled grew wrongly");
        for (auto i : picked)
          if (!ever.insert(i).second) throw al::Error("index reacquired");
        ++ops;
      }
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }

  // bottom-b against a full sort
  int sort_mismatch = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> scores(1000);
    for (auto& v : scores) v = t % 2 ? static_cast<double>(rng() % 100) : std::normal_distribution<double>()(rng);
    std::vector<std::int64_t> idx(1000);
    std::iota(idx.begin(), idx.end(), std::int64_t{0});
    const std::int64_t b = 1 + static_cast<std::int64_t>(rng() % 200);
    auto order = idx;
    std::sort(order.begin(), order.end(), [&](auto i, auto j) {
      return scores[static_cast<std::size_t>(i)] < scores[static_cast<std::size_t>(j)] ||
             (scores[static_cast<std::size_t>(i)] == scores[static_cast<std::size_t>(j)] && i < j);
    });
    std::vector<std::int64_t> want(order.begin(), order.begin() + b);
    std::sort(want.begin(), want.end());
    sort_mismatch += sampler::bottom_b(scores, idx, b) != want;
  }

  // the real loop: budgets grow by b and nothing is acquired twice
  bool loop_ok = true;
  {
    auto c = harness::load_config(std::nullopt, {"dataset.spec.n_samples=200", "schedule.initial=20", "schedule.b=10",
                                                 "schedule.rounds=4", "seeds=[1,2]", "task.epochs=1", "task.width=2",
                                                 "sampler.epochs=1", "sampler.width=2", "sampler.latent_dim=4",
                                                 "output=" + (work / "mechanics").string()});
    harness::RunFlags flags;
    flags.force = true;
    const auto res = harness::run_experiment(c, flags);
    std::map<std::pair<std::string, std::uint64_t>, std::set<std::int64_t>> seen;
    for (const auto& r : res.records) {
      loop_ok &= r.budget == 20 + 10 * r.round;
      loop_ok &= static_cast<std::int64_t>(r.selected.size()) == (r.round == 0 ? 20 : 10);
      for (auto id : r.selected) loop_ok &= seen[{r.sampler, r.seed}].insert(id).second;
    }
    loop_ok &= res.records.size() == 3 * 2 * 5;
  }

  const bool pass = failure.empty() && ops == 10000 && sort_mismatch == 0 && loop_ok;
  return {pass, std::to_string(ops) + " randomized acquire/update ops with invariants" +
                    (failure.empty() ? "" : " [" + failure + "]") + ", bottom-b vs full sort mismatches " +
                    std::to_string(sort_mismatch) + "/50 on 1000 scores, loop budgets/no-reacquire " +
                    (loop_ok ? "ok" : "VIOLATED")};
}

// ---------------------------------------------------------------------------
// labeled vs unlabeled critic scores on a two-cluster set

Result critic_separation(const fs::path&) {
  const auto t0 = std::chrono::steady_clock::now();
  synth::SynthSpec sp;
  sp.n_samples = 600;
  sp.seed = 3;
  const auto ds = synth::generate_dataset(sp);
  std::vector<std::int64_t> a, b;
  for (const auto& s : ds.samples) {
    if (s.primary == 0 && a.size() < 64) a.push_back(s.id);
    if (s.primary == 2 && b.size() < 64) b.push_back(s.id);
  }
  const sampler::SamplerData d{synth::stack(ds, a, synth::Modality::kM1), synth::stack(ds, a, synth::Modality::kM2),
                               synth::stack(ds, b, synth::Modality::kM1), synth::stack(ds, b, synth::Modality::kM2)};
  int wins = 0;
  std::string diffs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    sampler::SamplerConfig c;
    c.epochs = 20;
    auto s = sampler::init_sampler(c, seed);
    sampler::train_sampler(s, d);
    const auto sl = sampler::score_pool(s, d.labeled_m1), su = sampler::score_pool(s, d.unlabeled_m1);
    const double diff = std::accumulate(sl.begin(), sl.end(), 0.0) / static_cast<double>(sl.size()) -
                        std::accumulate(su.begin(), su.end(), 0.0) / static_cast<double>(su.size());
    wins += diff > 0;
    diffs += (diffs.empty() ? "" : " ") + num(diff, 2);
  }
  const double t = seconds_since(t0);
  return {wins >= 4 && t < 600, "mean D(labeled) - mean D(unlabeled) after 20 epochs: [" + diffs + "], positive on " +
                                    std::to_string(wins) + "/5 seeds (need 4), " + num(t) + "s < 600s"};
}

// ---------------------------------------------------------------------------
// vaal == mvaal(gamma3 = 0)

bool same_set(const nn::ParamSet& x, const nn::ParamSet& y) {
  if (x.params().size() != y.params().size() || x.buffers().size() != y.buffers().size()) return false;
  for (const auto& [k, v] : x.params())
    if (!y.params().count(k) || !mvaal::testing::bit_equal(v, y.params().at(k))) return false;
  for (const auto& [k, v] : x.buffers())
    if (!y.buffers().count(k) || !mvaal::testing::bit_equal(v, y.buffers().at(k))) return false;
  return true;
}

Result vaal_equivalence(const fs::path& work) {
  synth::SynthSpec sp;
  sp.n_samples = 200;
  sp.seed = 8;
  const auto ds = synth::generate_dataset(sp);
  const auto& tr = ds.splits.train;
  const std::vector<std::int64_t> lab(tr.begin(), tr.begin() + 32), unl(tr.begin() + 32, tr.end());
  const sampler::SamplerData d{synth::stack(ds, lab, synth::Modality::kM1), synth::stack(ds, lab, synth::Modality::kM2),
                               synth::stack(ds, unl, synth::Modality::kM1), synth::stack(ds, unl, synth::Modality::kM2)};
  std::vector<std::int64_t> pool(unl.size());
  std::iota(pool.begin(), pool.end(), std::int64_t{0});
  int identical = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    sampler::SamplerConfig cv;
    cv.mode = sampler::SamplerMode::kVaal;
    cv.gamma3 = 0.0;
    cv.epochs = 3;
    cv.width = 4;
    auto cm = cv;
    cm.mode = sampler::SamplerMode::kMvaal;
    auto v = sampler::init_sampler(cv, seed);
    auto m = sampler::init_sampler(cm, seed);
    const auto hv = sampler::train_sampler(v, d);
    const auto hm = sampler::train_sampler(m, d);
    bool same = same_set(v.encoder, m.encoder) && same_set(v.decoder_m1, m.decoder_m1) && same_set(v.disc, m.disc);
    for (std::size_t e = 0; e < hv.size(); ++e)
      same &= hv[e].adv == hm[e].adv && hv[e].recon_m1 == hm[e].recon_m1 && hv[e].kl == hm[e].kl &&
              hv[e].disc == hm[e].disc && hv[e].gp == hm[e].gp;
    const auto sv = sampler::score_pool(v, d.unlabeled_m1), sm = sampler::score_pool(m, d.unlabeled_m1);
    same &= sv == sm;
    same &= sampler::select_for_annotation(v, d.unlabeled_m1, pool, 20) ==
            sampler::select_for_annotation(m, d.unlabeled_m1, pool, 20);
    identical += same;
  }

  // and through the whole loop
  auto c = harness::load_config(std::nullopt, {"dataset.spec.n_samples=200", "schedule.initial=20", "schedule.b=10",
                                               "schedule.rounds=3", "seeds=[1,2,3,4,5]", "task.epochs=2",
                                               "task.width=2", "sampler.epochs=2", "sampler.width=2",
                                               "samplers=[\"vaal\",\"mvaal\"]", "sampler.gamma3=0",
                                               "output=" + (work / "vaal-equivalence").string()});
  harness::RunFlags flags;
  flags.force = true;
  const auto res = harness::run_experiment(c, flags);
  std::map<std::tuple<std::uint64_t, std::int64_t>, std::vector<const al::RoundRecord*>> by;
  for (const auto& r : res.records) by[{r.seed, r.round}].push_back(&r);
  int loop_same = 0, loop_total = 0;
  for (const auto& [k, rs] : by) {
    ++loop_total;
    loop_same += rs.size() == 2 && rs[0]->metric == rs[1]->metric && rs[0]->selected == rs[1]->selected;
  }
  return {identical == 5 && loop_same == loop_total,
          "sampler state, losses, scores and selections bit-identical on " + std::to_string(identical) +
              "/5 seeds; AL loop rounds identical " + std::to_string(loop_same) + "/" + std::to_string(loop_total)};
}

// ---------------------------------------------------------------------------
// learning curves on the default desk configuration

Result learning_curves(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = harness::load_config(std::nullopt, {"output=" + (work / "learning-curves").string()});
  harness::RunFlags flags;
  flags.force = true;
  const auto res = harness::run_experiment(c, flags, &std::cerr);
  const double t = seconds_since(t0);

  std::map<std::pair<std::string, std::int64_t>, std::vector<double>> cell;
  std::map<std::uint64_t, std::set<double>> round0;
  for (const auto& r : res.records) {
    cell[{r.sampler, r.round}].push_back(r.metric);
    if (r.round == 0) round0[r.seed].insert(r.metric);
  }
  auto mean = [&](const std::string& s, std::int64_t round) {
    const auto& v = cell.at({s, round});
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const auto last = c.schedule.rounds;
  bool gains_ok = true;
  std::string gains;
  for (const auto& s : c.samplers) {
    const double g = 100.0 * (mean(s, last) - mean(s, 0));
    gains_ok &= g >= 5.0;
    gains += (gains.empty() ? "" : ", ") + s + " +" + num(g, 3);
  }
  bool shared = true;
  for (const auto& [seed, vals] : round0) shared &= vals.size() == 1;
  int leads = 0;
  std::string margin;
  for (std::int64_t r = 1; r <= last; ++r) {
    const double m = mean("mvaal", r) - mean("random", r);
    leads += m >= 0.0;
    margin += (margin.empty() ? "" : " ") + num(100.0 * m, 2);
  }
  const bool pass = gains_ok && shared && leads >= 3 && t < 3600;
  return {pass, "(a) round-" + std::to_string(last) + " gain in accuracy points: " + gains + " (need >= 5); (b) round 0 " +
                    (shared ? "identical" : "DIFFERS") + " across samplers on every seed; (c) mvaal - random [" +
                    margin + "] points, mvaal >= random at " + std::to_string(leads) + "/" + std::to_string(last) +
                    " rounds (need 3); " + num(t, 4) + "s < 3600s"};
}

// ---------------------------------------------------------------------------
// gamma3 ablation at quarter size

std::vector<std::string> quarter_size(const fs::path& out) {
  return {"dataset.spec.n_samples=625", "schedule.initial=40", "schedule.b=20", "schedule.rounds=3",
          "seeds=[1,2,3]", "output=" + out.string()};
}

Result gamma3_ablation(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = harness::load_config(std::nullopt, quarter_size(work / "ablation"));
  harness::RunFlags flags;
  flags.force = true;
  flags.ablate_gamma3 = true;
  const auto res = harness::run_experiment(c, flags, &std::cerr);
  const double t = seconds_since(t0);

  std::map<std::string, std::map<std::int64_t, std::map<std::uint64_t, const al::RoundRecord*>>> arms;
  for (const auto& r : res.records) arms[r.sampler][r.round][r.seed] = &r;
  const std::set<std::string> want{"mvaal-g0.2", "mvaal-g0.4", "mvaal-g0.8", "mvaal-g1.0"};
  std::set<std::string> got;
  bool complete = true, shared = true;
  for (const auto& [tag, rounds] : arms) {
    got.insert(tag);
    complete &= rounds.size() == 4;
    for (const auto& [round, seeds] : rounds) {
      complete &= seeds.size() == 3;
      for (const auto& [seed, r] : seeds) {
        shared &= r->budget == 40 + 20 * round;
        const auto* ref = arms.begin()->second.at(round).at(seed);
        shared &= r->budget == ref->budget;
        if (round == 0) shared &= r->metric == ref->metric && r->selected == ref->selected;
      }
    }
  }
  complete &= fs::exists(res.dir / "DONE") && fs::exists(res.dir / "curve_accuracy.svg");
  std::ostringstream means;
  for (const auto& tag : want) {
    if (!arms.count(tag)) continue;
    double m = 0;
    for (const auto& [seed, r] : arms[tag].at(3)) m += r->metric;
    means << (means.tellp() ? ", " : "") << tag << ' ' << num(m / 3.0, 3);
  }
  const bool pass = got == want && complete && shared && t < 1800;
  return {pass, std::to_string(got.size()) + " arms " + (got == want ? "{0.2,0.4,0.8,1.0}" : "(WRONG TAGS)") +
                    ", complete " + (complete ? "yes" : "NO") + ", shared schedule and round 0 " +
                    (shared ? "yes" : "NO") + "; final accuracy " + means.str() + "; N=400, 3 rounds, 3 seeds in " +
                    num(t, 4) + "s < 1800s"};
}

// ---------------------------------------------------------------------------
// determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result determinism(const fs::path& work) {
  // the learning-curves run is the first of the two; reused when already finished
  harness::RunFlags keep, force;
  force.force = true;
  const auto a = harness::run_experiment(
      harness::load_config(std::nullopt, {"output=" + (work / "learning-curves").string()}), keep, &std::cerr);
  const auto b = harness::run_experiment(
      harness::load_config(std::nullopt, {"output=" + (work / "determinism").string(), "jobs=2"}), force,
      &std::cerr);
  const auto agg_a = slurp(a.dir / "aggregate.csv"), agg_b = slurp(b.dir / "aggregate.csv");
  const bool same_hash = a.hash == b.hash && slurp(a.dir / "DONE") == slurp(b.dir / "DONE");
  const bool same = !agg_a.empty() && agg_a == agg_b;
  const bool same_table = slurp(a.dir / "table.csv") == slurp(b.dir / "table.csv");
  return {same_hash && same && same_table,
          std::string("config hash ") + (same_hash ? "equal" : "DIFFERS") + " (" + a.hash.substr(0, 12) +
              "), aggregate.csv " + (same ? "byte-identical" : "DIFFERS") + " (" + std::to_string(agg_a.size()) +
              " bytes), table.csv " + (same_table ? "identical" : "DIFFERS") +
              "; two full default runs, the second with 2 worker threads" +
              (a.skipped ? " (first reused from learning-curves)" : "")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"gradient-suite", gradient_suite},       {"closed-form-oracles", closed_forms},
      {"loop-mechanics", loop_mechanics},       {"critic-separation", critic_separation},
      {"vaal-equivalence", vaal_equivalence},   {"learning-curves", learning_curves},
      {"gamma3-ablation", gamma3_ablation},     {"determinism", determinism},
  };
  fs::path work = fs::temp_directory_path() / "mvaal_acceptance";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--list") {
      for (const auto& c : all) std::cout << c.name << '\n';
      return 0;
    } else {
      only.insert(arg);
    }
  }
  for (const auto& name : only)
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.name == name; })) {
      std::cerr << "unknown criterion '" << name << "' (see --list)\n";
      return 2;
    }
  fs::create_directories(work);

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Result r;
    try {
      r = c.run(work);
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    failed += !r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << c.name << ": " << r.detail << " [" << std::fixed
              << std::setprecision(1) << seconds_since(t0) << "s]" << std::defaultfloat << std::endl;
  }
  return failed ? 1 : 0;
}
