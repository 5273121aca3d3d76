#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mvaal/nn/nn.hpp"
#include "test_util.hpp"

namespace ad = mvaal::ad;
namespace nn = mvaal::nn;
using ad::Tensor;
using mvaal::testing::all_close;
using mvaal::testing::bit_equal;
using mvaal::testing::random_tensor;

namespace {

nn::Architecture small_mlp() {
  return {
      nn::LayerSpec::conv2d("conv", 2, 3, 3, 1, 1),
      nn::LayerSpec::batch_norm("conv_bn", 3),
      nn::LayerSpec::relu(),
      nn::LayerSpec::max_pool(2, 2),
      nn::LayerSpec::flatten(),
      nn::LayerSpec::linear("fc1", 12, 5, nn::Activation::kLeakyRelu, 0.2),
      nn::LayerSpec::batch_norm("fc1_bn", 5),
      nn::LayerSpec::leaky_relu(0.2),
      nn::LayerSpec::linear("head", 5, 1, nn::Activation::kSigmoid),
      nn::LayerSpec::sigmoid(),
  };
}

bool sets_bit_equal(const nn::ParamSet& a, const nn::ParamSet& b) {
  if (a.params().size() != b.params().size()) return false;
  for (const auto& [k, t] : a.params()) {
    if (!b.has_param(k) || !bit_equal(t, b.param(k))) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("layer_forward examples") {
  SUBCASE("identity linear") {
    nn::ParamSet ps;
    ps.add_param("l/weight", Tensor({2, 2}, {1, 0, 0, 1}));
    ps.add_param("l/bias", Tensor::zeros({2}));
    Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
    auto y = nn::layer_forward(nn::LayerSpec::linear("l", 2, 2), ps, x);
    CHECK(y.shape() == ad::Shape{3, 2});
    CHECK(all_close(y, {1, 2, 3, 4, 5, 6}));
  }
  SUBCASE("batch norm training statistics") {
    nn::ParamSet ps = nn::init_params({nn::LayerSpec::batch_norm("bn", 1, 0.0)}, 0);
    auto y = nn::layer_forward(nn::LayerSpec::batch_norm("bn", 1, 0.0), ps, Tensor({2, 1}, {1, 3}));
    CHECK(all_close(y, {-1, 1}));
    // running stats moved 10% toward batch mean 2 and variance 1
    CHECK(all_close(ps.buffer("bn/running_mean"), {0.2}));
    CHECK(all_close(ps.buffer("bn/running_var"), {1.0}));
  }
  SUBCASE("leaky relu") {
    nn::ParamSet ps;
    auto y = nn::layer_forward(nn::LayerSpec::leaky_relu(0.2), ps, Tensor({2}, {-5, 5}));
    CHECK(all_close(y, {-1, 5}));
  }
  SUBCASE("missing parameter") {
    nn::ParamSet ps;
    CHECK_THROWS_AS(nn::layer_forward(nn::LayerSpec::linear("nope", 2, 2), ps, Tensor::zeros({1, 2})),
                    nn::MissingParameter);
  }
  SUBCASE("shape mismatch") {
    auto ps = nn::init_params({nn::LayerSpec::linear("l", 3, 2)}, 1);
    CHECK_THROWS_AS(nn::layer_forward(nn::LayerSpec::linear("l", 3, 2), ps, Tensor::zeros({1, 2})),
                    ad::ShapeError);
  }
  SUBCASE("conv output shapes") {
    nn::Architecture arch{nn::LayerSpec::conv2d("c", 1, 4, 4, 2, 1),
                          nn::LayerSpec::conv_transpose2d("t", 4, 2, 4, 2, 1)};
    auto ps = nn::init_params(arch, 3);
    auto h = nn::layer_forward(arch[0], ps, Tensor::zeros({2, 1, 8, 8}));
    CHECK(h.shape() == ad::Shape{2, 4, 4, 4});
    auto y = nn::layer_forward(arch[1], ps, h);
    CHECK(y.shape() == ad::Shape{2, 2, 8, 8});
  }
}

TEST_CASE("batch norm evaluation matches training at momentum one") {
  std::mt19937_64 rng(7);
  for (auto shape : {ad::Shape{6, 4}, ad::Shape{3, 4, 5, 5}}) {
    nn::Architecture arch{nn::LayerSpec::batch_norm("bn", 4, 1e-5, 1.0)};
    auto ps = nn::init_params(arch, 0);
    // non-trivial affine part
    ps.mutable_params().at("bn/weight").mutable_data()[1] = 2.5;
    ps.mutable_params().at("bn/bias").mutable_data()[2] = -0.75;
    const Tensor x = random_tensor(rng, shape, -3, 5);
    const Tensor train = nn::layer_forward(arch[0], ps, x);
    ps.mode = nn::Mode::kEvaluation;
    const Tensor eval = nn::layer_forward(arch[0], ps, x);
    CHECK(all_close(eval, std::vector<double>(train.data().begin(), train.data().end()), 1e-12));
  }
}

TEST_CASE("init_params") {
  SUBCASE("pure function of arch and seed") {
    CHECK(sets_bit_equal(nn::init_params(small_mlp(), 11), nn::init_params(small_mlp(), 11)));
    CHECK_FALSE(sets_bit_equal(nn::init_params(small_mlp(), 11), nn::init_params(small_mlp(), 12)));
  }
  SUBCASE("zero biases, unit norm scales, all require grad") {
    auto ps = nn::init_params(small_mlp(), 5);
    for (const auto& [k, t] : ps.params()) {
      CHECK(t.requires_grad());
      const bool is_bias = k.ends_with("/bias");
      const bool is_scale = k.find("_bn/weight") != std::string::npos;
      for (double v : t.data()) {
        if (is_bias) CHECK(v == 0.0);
        if (is_scale) CHECK(v == 1.0);
      }
    }
  }
  SUBCASE("lexicographic order") {
    auto ps = nn::init_params(small_mlp(), 5);
    std::string prev;
    for (const auto& [k, _] : ps.params()) {
      CHECK(prev < k);
      prev = k;
    }
  }
  SUBCASE("kaiming-uniform variance") {
    // Uniform(-b, b) has variance b^2 / 3 with b = gain * sqrt(3 / fan_in).
    for (auto [act, gain] : {std::pair{nn::Activation::kRelu, std::sqrt(2.0)},
                             std::pair{nn::Activation::kLinear, 1.0}}) {
      auto ps = nn::init_params({nn::LayerSpec::linear("l", 100, 100, act)}, 2024);
      const auto w = ps.param("l/weight").data();
      double mean = 0.0;
      for (double v : w) mean += v;
      mean /= static_cast<double>(w.size());
      double var = 0.0;
      for (double v : w) var += (v - mean) * (v - mean);
      var /= static_cast<double>(w.size());
      const double bound = gain * std::sqrt(3.0 / 100.0);
      const double expected = bound * bound / 3.0;
      CHECK(var > 0.8 * expected);
      CHECK(var < 1.2 * expected);
      bool inside = true;
      for (double v : w) inside = inside && std::abs(v) <= bound;
      CHECK(inside);
    }
  }
  SUBCASE("duplicate path rejected") {
    CHECK_THROWS(nn::init_params({nn::LayerSpec::linear("a", 1, 1), nn::LayerSpec::linear("a", 1, 1)}, 0));
  }
}

TEST_CASE("optimizer examples") {
  auto single = [](double p) {
    nn::ParamSet ps;
    ps.add_param("p", Tensor({1}, {p}));
    return ps;
  };
  SUBCASE("adam one step") {
    auto ps = single(1.0);
    auto st = nn::make_optimizer({nn::OptimizerKind::kAdam, 0.1}, ps);
    nn::optimizer_step(st, ps, {{"p", Tensor({1}, {1.0})}});
    CHECK(ps.param("p").item() == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(st.step == 1);
    CHECK(st.first_moment.at("p").item() == doctest::Approx(0.1));
  }
  SUBCASE("rmsprop with zero gradient") {
    auto ps = single(1.0);
    auto st = nn::make_optimizer({nn::OptimizerKind::kRmsprop, 0.1}, ps);
    st.second_moment.at("p").mutable_data()[0] = 0.5;
    nn::optimizer_step(st, ps, {{"p", Tensor({1}, {0.0})}});
    CHECK(ps.param("p").item() == 1.0);
    CHECK(st.second_moment.at("p").item() == doctest::Approx(0.99 * 0.5).epsilon(1e-15));
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    for (auto kind : {nn::OptimizerKind::kAdam, nn::OptimizerKind::kRmsprop}) {
      auto ps = nn::init_params(small_mlp(), 3);
      auto before = ps.clone();
      auto st = nn::make_optimizer({kind, 0.0}, ps);
      std::mt19937_64 rng(1);
      nn::GradMap g;
      for (const auto& [k, t] : ps.params()) g.emplace(k, random_tensor(rng, t.shape()));
      for (int i = 0; i < 3; ++i) nn::optimizer_step(st, ps, g);
      CHECK(st.step == 3);
      CHECK(sets_bit_equal(ps, before));
    }
  }
  SUBCASE("key mismatch") {
    auto ps = single(1.0);
    auto st = nn::make_optimizer({}, ps);
    CHECK_THROWS(nn::optimizer_step(st, ps, {{"q", Tensor({1}, {1.0})}}));
    CHECK_THROWS(nn::optimizer_step(st, ps, {}));
    CHECK(st.step == 0);
  }
}

TEST_CASE("optimizer updates do not depend on insertion order") {
  std::mt19937_64 rng(99);
  std::vector<std::pair<std::string, Tensor>> entries;
  nn::GradMap grads;
  for (const char* name : {"z/w", "a/b", "m/q", "b/a"}) {
    entries.emplace_back(name, random_tensor(rng, {3, 2}));
    grads.emplace(name, random_tensor(rng, {3, 2}));
  }
  for (auto kind : {nn::OptimizerKind::kAdam, nn::OptimizerKind::kRmsprop}) {
    nn::ParamSet fwd, rev;
    for (const auto& [k, t] : entries) fwd.add_param(k, t.clone());
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) rev.add_param(it->first, it->second.clone());
    auto s1 = nn::make_optimizer({kind, 0.05}, fwd);
    auto s2 = nn::make_optimizer({kind, 0.05}, rev);
    for (int i = 0; i < 4; ++i) {
      nn::optimizer_step(s1, fwd, grads);
      nn::optimizer_step(s2, rev, grads);
    }
    CHECK(sets_bit_equal(fwd, rev));
  }
}

TEST_CASE("training a small network reduces its loss") {
  auto arch = small_mlp();
  auto ps = nn::init_params(arch, 4);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(rng, {8, 2, 4, 4});
  const Tensor target({8, 1}, {0, 1, 0, 1, 1, 0, 1, 0});
  auto st = nn::make_optimizer({nn::OptimizerKind::kAdam, 0.05}, ps);
  auto loss_at = [&] {
    auto p = nn::forward_sequential(arch, ps, x);
    return ad::mean(ad::square(p - target));
  };
  const double first = loss_at().item();
  for (int i = 0; i < 40; ++i) {
    auto loss = loss_at();
    nn::optimizer_step(st, ps, nn::gradients(loss, ps));
    ad::reset_graph();
  }
  CHECK(loss_at().item() < 0.5 * first);
}

TEST_CASE("frozen parameters carry no gradient") {
  auto arch = small_mlp();
  auto ps = nn::init_params(arch, 8);
  auto fz = ps.frozen();
  std::mt19937_64 rng(2);
  Tensor x = random_tensor(rng, {4, 2, 4, 4});
  x.set_requires_grad(true);
  auto out = ad::sum(nn::forward_sequential(arch, fz, x));
  CHECK(out.requires_grad());
  for (const auto& [_, t] : fz.params()) CHECK_FALSE(t.requires_grad());
  // shares storage with the live set
  CHECK(fz.param("head/weight").storage() == ps.param("head/weight").storage());
}

TEST_CASE("checkpoint round trip") {
  auto arch = small_mlp();
  auto ps = nn::init_params(arch, 21);
  ps.buffer("fc1_bn/running_mean").mutable_data()[0] = 0.125;
  auto st = nn::make_optimizer({nn::OptimizerKind::kAdam, 0.01}, ps);
  std::mt19937_64 rng(5);
  nn::GradMap g;
  for (const auto& [k, t] : ps.params()) g.emplace(k, random_tensor(rng, t.shape()));
  nn::optimizer_step(st, ps, g);
  nn::optimizer_step(st, ps, g);

  const auto path = std::filesystem::temp_directory_path() / "mvaal_test_nn_ckpt.bin";
  nn::save_checkpoint(path, ps, &st);
  auto ck = nn::load_checkpoint(path);
  CHECK(sets_bit_equal(ck.params, ps));
  CHECK(bit_equal(ck.params.buffer("fc1_bn/running_mean"), ps.buffer("fc1_bn/running_mean")));
  REQUIRE(ck.optimizer.has_value());
  CHECK(ck.optimizer->step == 2);
  CHECK(ck.optimizer->config.kind == nn::OptimizerKind::kAdam);
  for (const auto& [k, t] : st.first_moment) CHECK(bit_equal(ck.optimizer->first_moment.at(k), t));
  for (const auto& [k, t] : st.second_moment) CHECK(bit_equal(ck.optimizer->second_moment.at(k), t));

  // resuming from the checkpoint continues bit-identically
  nn::optimizer_step(st, ps, g);
  nn::optimizer_step(*ck.optimizer, ck.params, g);
  CHECK(sets_bit_equal(ck.params, ps));
  std::filesystem::remove(path);
}
