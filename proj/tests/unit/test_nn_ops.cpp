#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mero/error.hpp"
#include "mero/nn/checkpoint.hpp"
#include "mero/nn/module.hpp"
#include "mero/nn/optim.hpp"
#include "support/gradcheck.hpp"

using namespace mero::nn;
using mero::testing::check_gradients;

namespace {

Var param(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return make_parameter(rng.uniform_tensor(std::move(shape), lo, hi));
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(1);
  Var a = param(rng, {3, 4});
  Var b = param(rng, {3, 4}, 0.5, 1.5);
  auto objective = [&] {
    Var s = sigmoid(a) * tanh(b) + exp(scale(a, 0.3)) / b + square(a - b) + log(b) + sqrt(b) + leaky_relu(a, 0.1);
    s = s + minimum(a, b) + maximum(a, scale(b, -1.0)) + abs(a + 3.0) + clamp(a, -2.0, 2.0);
    return sum(s);
  };
  auto r = check_gradients(objective, {{"a", a}, {"b", b}});
  CHECK(r.worst_relative < 1e-6);
}

TEST_CASE("shape op gradients match finite differences") {
  Rng rng(2);
  Var a = param(rng, {2, 3, 4});
  Var b = param(rng, {2, 5, 4});
  Var c = param(rng, {2, 3});
  auto weights = rng.uniform_tensor({2, 8, 4}, -1, 1);
  Var w = constant(weights);
  auto objective = [&] {
    Var cat = concat({a, b}, 1);                  // [2,8,4]
    Var t = transpose(cat);                       // [2,4,8]
    Var back = transpose(t);                      // [2,8,4]
    Var sl = slice(back, 2, 1, 2);                // [2,8,2]
    Var e = expand(c, 1, 4);                      // [2,4,3]
    Var sp = broadcast_spatial(c, 2, 3);          // [2,3,2,3]
    Var r = reshape(sp, {6, 6});
    return sum(back * w) + sum(square(sl)) + sum(mean_axis(e, 1) * c) + mean(r * r) + sum(sum_axis(a, 2));
  };
  auto r = check_gradients(objective, {{"a", a}, {"b", b}, {"c", c}});
  CHECK(r.worst_relative < 1e-6);
}

TEST_CASE("matmul and linear gradients match finite differences") {
  Rng rng(3);
  Var x = param(rng, {2, 3, 4});
  Var w = param(rng, {4, 5});
  Var bias = param(rng, {5});
  Var y = param(rng, {2, 4, 6});
  auto objective = [&] {
    Var lin = linear(x, w, bias);           // [2,3,5]
    Var bm = matmul(x, y);                  // [2,3,6]
    Var shared = matmul(x, w);              // [2,3,5]
    return sum(square(lin)) + sum(bm * bm) * 0.5 + mean(shared);
  };
  auto r = check_gradients(objective, {{"x", x}, {"w", w}, {"bias", bias}, {"y", y}});
  CHECK(r.worst_relative < 1e-6);
}

TEST_CASE("convolutional op gradients match finite differences") {
  Rng rng(4);
  Var x = param(rng, {2, 3, 8, 8});
  Var w = param(rng, {4, 3, 3, 3});
  Var bias = param(rng, {4});
  Var g = param(rng, {2, 4, 4, 4}, -0.5, 0.5);
  Var beta = param(rng, {2, 4, 4, 4}, -0.5, 0.5);
  const Tensor target = rng.uniform_tensor({2, 4, 8, 8}, -1, 1);
  auto objective = [&] {
    Var y = conv2d(x, w, bias, 2, 1);                 // [2,4,4,4]
    Var n = instance_norm(y);
    Var m = spade_modulate(n, g, beta);
    Var u = upsample_nearest(m, 2);                   // [2,4,8,8]
    Var p = avg_pool(u, 4);                           // [2,4,2,2]
    // instance_norm cancels the conv bias, so a direct term keeps its gradient non-zero
    return sum(square(u - constant(target))) * 0.01 + sum(p) + mean(square(y));
  };
  auto r = check_gradients(objective, {{"x", x}, {"w", w}, {"bias", bias}, {"g", g}, {"beta", beta}});
  INFO(r.worst_name);
  CHECK(r.worst_relative < 1e-6);
}

TEST_CASE("binary cross entropy values and gradient") {
  Var p = make_parameter(Tensor({2}, {0.9, 0.2}));
  Var l = mean(binary_cross_entropy(p, Tensor({2}, {1.0, 0.0})));
  CHECK(l.item() == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2).epsilon(1e-12));
  auto r = check_gradients([&] { return mean(binary_cross_entropy(p, Tensor({2}, {1.0, 0.0}))); }, {{"p", p}});
  CHECK(r.worst_relative < 1e-6);
}

TEST_CASE("GRU and bidirectional GRU gradients match finite differences") {
  Rng rng(6);
  BiGru gru(3, 4, rng);
  std::vector<Var> steps;
  for (int t = 0; t < 3; ++t) steps.push_back(param(rng, {2, 3}));
  auto objective = [&] {
    auto out = gru(steps);
    Var acc = sum(square(out[0]));
    for (std::size_t t = 1; t < out.size(); ++t) acc = acc + sum(out[t]) * static_cast<double>(t);
    return acc;
  };
  auto params = gru.named_parameters();
  params.emplace_back("x0", steps[0]);
  auto r = check_gradients(objective, params);
  CHECK(r.worst_relative < 1e-6);
  CHECK(gru(steps)[1].shape() == Shape{2, 8});
}

TEST_CASE("no-grad mode records nothing") {
  Var a = make_parameter(Tensor({2}, 1.0));
  NoGradGuard guard;
  Var b = a * 2.0;
  CHECK_FALSE(b.requires_grad());
}

TEST_CASE("adam minimises a quadratic") {
  Var w = make_parameter(Tensor({3}, {2.0, -1.0, 0.5}));
  Adam opt({w}, {.lr = 0.05});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    sum(square(w + (-1.0))).backward();
    opt.step();
  }
  for (double v : w.value().storage()) CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("gradient clipping bounds the global norm") {
  Var w = make_parameter(Tensor({2}, {3.0, 4.0}));
  sum(w * w).backward();  // grad = (6, 8), norm 10
  std::vector<Var> ps{w};
  CHECK(clip_grad_norm(ps, 5.0) == doctest::Approx(10.0));
  CHECK(w.grad()[0] == doctest::Approx(3.0));
  CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("checkpoint container round-trips parameters and rejects mismatches") {
  Rng rng(9);
  Linear a(3, 4, rng);
  Linear b(3, 4, rng);
  const auto path = std::filesystem::temp_directory_path() / "mero_test_linear.ckpt";
  save_checkpoint(path, "linear", {{"in", 3}}, a);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.kind == "linear");
  CHECK(ck.config["in"] == 3);
  ck.apply_to(b);
  CHECK(a.weight.value() == b.weight.value());
  CHECK(a.bias.value() == b.bias.value());

  Linear wrong(4, 4, rng);
  CHECK_THROWS_AS(ck.apply_to(wrong), mero::FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), mero::NotFoundError);
}
