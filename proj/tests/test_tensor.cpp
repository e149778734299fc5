#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "physprior/adam.hpp"
#include "physprior/autodiff.hpp"
#include "physprior/checkpoint.hpp"
#include "physprior/rng.hpp"

using namespace physprior;
using namespace physprior::ag;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, DType dt = DType::F64, double lo = -1,
                     double hi = 1) {
  return Tensor::uniform(std::move(shape), lo, hi, rng, dt);
}

}  // namespace

TEST_CASE("conv2d rejects bad inputs") {
  Tape tape;
  Tensor x = Tensor::constant({1, 3, 3}, 1.0);
  Tensor even = Tensor::constant({1, 1, 2, 2}, 1.0);
  CHECK_THROWS_AS(conv2d(tape, x, even, 1, 0), std::invalid_argument);
  Tensor wrong_cin = Tensor::constant({1, 2, 3, 3}, 1.0);
  CHECK_THROWS_AS(conv2d(tape, x, wrong_cin, 1, 1), std::invalid_argument);
  Tensor k3 = Tensor::constant({1, 1, 3, 3}, 1.0);
  // (3 + 2 - 3) / 3 is not an integer
  CHECK_THROWS_AS(conv2d(tape, x, k3, 3, 1), std::invalid_argument);
}

TEST_CASE("conv2d identity kernel") {
  Tape tape;
  Rng rng(7);
  Tensor x = random_tensor({1, 3, 3}, rng, DType::F32);
  Tensor k = Tensor::constant({1, 1, 1, 1}, 1.0, DType::F32);
  Tensor y = conv2d(tape, x, k, 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(11);
  // the spec's concrete case: 3x5x5 input, 2x3x3x3 kernel, stride 1, pad 1
  {
    Tape tape;
    Tensor x = random_tensor({3, 5, 5}, rng, DType::F32);
    Tensor w = random_tensor({2, 3, 3, 3}, rng, DType::F32);
    Tensor y = conv2d(tape, x, w, 1, 1);
    auto ref = oracle::conv2d_naive(x, w, 1, 1);
    REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(std::abs(y.at(i) - ref[static_cast<size_t>(i)]) < 1e-6);
  }
  // randomized shapes, strides and paddings
  for (int trial = 0; trial < 100; ++trial) {
    const int cin = rng.uniform_int(1, 3);
    const int cout = rng.uniform_int(1, 3);
    const int k = 1 + 2 * rng.uniform_int(0, 2);
    const int stride = rng.uniform_int(1, 3);
    const int pad = rng.uniform_int(0, 2);
    // choose output extents first so the division is exact
    const int oh = rng.uniform_int(1, 4), ow = rng.uniform_int(1, 4);
    const int h = (oh - 1) * stride + k - 2 * pad;
    const int w = (ow - 1) * stride + k - 2 * pad;
    if (h < 1 || w < 1) continue;
    Tape tape;
    Tensor x = random_tensor({cin, h, w}, rng);
    Tensor kk = random_tensor({cout, cin, k, k}, rng);
    Tensor y = conv2d(tape, x, kk, stride, pad);
    auto ref = oracle::conv2d_naive(x, kk, stride, pad);
    REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(std::abs(y.at(i) - ref[static_cast<size_t>(i)]) < 1e-10);
  }
}

TEST_CASE("elu closed forms") {
  Tape tape;
  Tensor x = Tensor::from_values({3}, std::vector<double>{0.0, 2.0, -1.0});
  x.set_requires_grad(true);
  Tensor y = elu(tape, x);
  CHECK(y.at(0) == doctest::Approx(0.0));
  CHECK(y.at(1) == doctest::Approx(2.0));
  CHECK(y.at(2) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-6));
  Tensor loss = sum_all(tape, y);
  tape.backward(loss);
  CHECK(x.grad_at(2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
}

TEST_CASE("linear identity, zero weight and oracle") {
  Rng rng(3);
  Tape tape;
  Tensor x = random_tensor({3}, rng, DType::F32);
  Tensor eye = Tensor::zeros({3, 3}, DType::F32);
  for (int i = 0; i < 3; ++i) eye.set_at(i * 3 + i, 1.0);
  Tensor zero_b = Tensor::zeros({3}, DType::F32);
  Tensor y = linear(tape, x, eye, zero_b);
  for (int i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)));

  Tensor zero_w = Tensor::zeros({2, 3}, DType::F32);
  Tensor b = Tensor::from_values({2}, std::vector<double>{0.5, -0.25}, DType::F32);
  Tensor y2 = linear(tape, x, zero_w, b);
  CHECK(y2.at(0) == doctest::Approx(0.5));
  CHECK(y2.at(1) == doctest::Approx(-0.25));

  Tensor x4 = random_tensor({4}, rng, DType::F32);
  Tensor w = random_tensor({3, 4}, rng, DType::F32);
  Tensor b3 = random_tensor({3}, rng, DType::F32);
  Tensor y3 = linear(tape, x4, w, b3);
  auto ref = oracle::linear_naive(x4, w, b3);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(y3.at(i) - ref[static_cast<size_t>(i)]) < 1e-6);

  Tensor bad = random_tensor({5}, rng, DType::F32);
  CHECK_THROWS_AS(linear(tape, bad, w, b3), std::invalid_argument);
}

TEST_CASE("structural ops") {
  Rng rng(5);
  Tape tape;
  Tensor a = random_tensor({2, 4, 4}, rng, DType::F32);
  Tensor b = random_tensor({3, 4, 4}, rng, DType::F32);
  Tensor cat = concat_channels(tape, a, b);
  REQUIRE(cat.shape() == std::vector<int>{5, 4, 4});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(cat.at(i) == doctest::Approx(a.at(i)));
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(cat.at(a.numel() + i) == doctest::Approx(b.at(i)));

  Tensor zeros = Tensor::zeros({2, 4, 4}, DType::F32);
  Tensor res = residual_add(tape, a, zeros);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(res.at(i) == doctest::Approx(a.at(i)));
  CHECK_THROWS_AS(residual_add(tape, a, b), std::invalid_argument);

  Tensor small = random_tensor({1, 2, 2}, rng, DType::F32);
  Tensor up = upsample_nearest(tape, small, 2);
  REQUIRE(up.shape() == std::vector<int>{1, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(up.at(y * 4 + x) == doctest::Approx(small.at((y / 2) * 2 + (x / 2))));
}

TEST_CASE("mse values and oracle") {
  Tape tape;
  Tensor p = Tensor::from_values({2}, std::vector<double>{1.0, 1.0}, DType::F64);
  Tensor t = Tensor::zeros({2}, DType::F64);
  CHECK(mse(tape, p, p.clone()).item() == doctest::Approx(0.0));
  CHECK(mse(tape, p, t).item() == doctest::Approx(1.0));
  Rng rng(17);
  Tensor a = random_tensor({7}, rng);
  Tensor b = random_tensor({7}, rng);
  CHECK(std::abs(mse(tape, a, b).item() - oracle::mse_naive(a, b)) < 1e-7);
  Tensor bad = random_tensor({3}, rng);
  CHECK_THROWS_AS(mse(tape, a, bad), std::invalid_argument);
}

TEST_CASE("categorical distribution") {
  Tensor logits = Tensor::zeros({4}, DType::F32);
  Categorical dist(logits);
  for (double p : dist.probs()) CHECK(p == doctest::Approx(0.25));
  CHECK(dist.entropy() == doctest::Approx(std::log(4.0)));

  Tensor two = Tensor::from_values({2}, std::vector<double>{10.0, 0.0}, DType::F32);
  Categorical d2(two);
  CHECK(d2.probs()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));

  // Monte-Carlo frequencies at a fixed seed
  Tensor pv = Tensor::from_values({2}, std::vector<double>{std::log(0.7), std::log(0.3)});
  Categorical d3(pv);
  Rng rng(123);
  int count0 = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i)
    if (d3.sample(rng) == 0) ++count0;
  CHECK(std::abs(count0 / static_cast<double>(draws) - 0.7) < 0.01);
}

TEST_CASE("backward basics and misuse") {
  {
    Tape tape;
    Tensor x = Tensor::from_values({1}, std::vector<double>{3.0}, DType::F64);
    x.set_requires_grad(true);
    Tensor loss = mse(tape, x, Tensor::zeros({1}, DType::F64));
    tape.backward(loss);
    CHECK(x.grad_at(0) == doctest::Approx(6.0));
    CHECK_THROWS_AS(tape.backward(loss), std::invalid_argument);
  }
  {
    Tape tape;
    Tensor x = Tensor::from_values({2}, std::vector<double>{1.0, 2.0}, DType::F64);
    x.set_requires_grad(true);
    Tensor y = elu(tape, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // non-scalar
  }
  {
    Tape tape;
    Tensor off_tape = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(off_tape), std::invalid_argument);
  }
}

TEST_CASE("gradient soundness of every op") {
  // 10 random small inputs per op in 64-bit mode, finite differences.
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    // composite graph touching conv2d, bias, elu, sigmoid, tanh, exp,
    // concat, upsample, residual, mul, clamp, min, spatial_mean, reshape,
    // linear, log_softmax, pick, mse
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor w = random_tensor({2, 2, 3, 3}, rng, DType::F64, -0.4, 0.4);
    Tensor b = random_tensor({2}, rng, DType::F64, -0.2, 0.2);
    Tensor lw = random_tensor({3, 8}, rng, DType::F64, -0.4, 0.4);
    Tensor lb = random_tensor({3}, rng, DType::F64, -0.2, 0.2);
    Tensor other = random_tensor({2, 4, 4}, rng);
    Tensor target = Tensor::zeros({3}, DType::F64);
    std::vector<Tensor> params = {x, w, b, lw, lb, other};
    for (auto& p : params) p.set_requires_grad(true);

    auto forward = [&](Tape& tape) {
      Tensor c = conv2d(tape, x, w, 1, 1);
      c = bias_channel(tape, c, b);
      Tensor e = elu(tape, c);
      Tensor s = sigmoid(tape, c);
      Tensor t = ag::tanh(tape, c);
      Tensor m = mul(tape, e, s);
      Tensor r = residual_add(tape, m, t);
      Tensor cat = concat_channels(tape, r, other);
      Tensor cl = clamp(tape, cat, -0.6, 0.6);
      Tensor mn = min_elem(tape, cl, concat_channels(tape, other, r));
      Tensor sm = spatial_mean(tape, mn);  // [4]
      Tensor ex = ag::exp(tape, scale(tape, sm, 0.5));
      Tensor down = reshape(tape, ex, {4});
      Tensor up = upsample_nearest(tape, reshape(tape, down, {1, 2, 2}), 2);
      Tensor pooled = spatial_mean(tape, up);  // [1]
      Tensor vec = concat_channels(tape, reshape(tape, down, {4, 1, 1}),
                                   concat_channels(tape, reshape(tape, pooled, {1, 1, 1}),
                                                   reshape(tape, sub(tape, pooled, pooled), {1, 1, 1})));
      Tensor flat = reshape(tape, vec, {6});
      Tensor both = concat_channels(tape, reshape(tape, flat, {6, 1, 1}),
                                    reshape(tape, sum_all(tape, mn), {1, 1, 1}));
      Tensor feats = reshape(tape, both, {7});
      // pad to 8 features with mean
      Tensor f8 = concat_channels(tape, reshape(tape, feats, {7, 1, 1}),
                                  reshape(tape, mean_all(tape, feats), {1, 1, 1}));
      Tensor logits = linear(tape, reshape(tape, f8, {8}), lw, lb);
      Tensor lsm = log_softmax(tape, logits);
      Tensor picked = pick(tape, lsm, 1);
      Tensor err = mse(tape, logits, target);
      return add(tape, scale(tape, picked, 0.3), err);
    };

    Tape tape;
    Tensor loss = forward(tape);
    tape.backward(loss);
    auto result = oracle::finite_diff_check(params, [&]() {
      Tape t2(false);
      return forward(t2).item();
    });
    CHECK(result.max_rel_err < 1e-4);
    CHECK(result.checked > 0);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(42);
  auto grads_for = [&](double a, double b) {
    Rng local(42);
    Tensor x = random_tensor({2, 3, 3}, local);
    x.set_requires_grad(true);
    Tape tape;
    Tensor l1 = mse(tape, elu(tape, x), Tensor::zeros({2, 3, 3}, DType::F64));
    Tensor l2 = sum_all(tape, sigmoid(tape, x));
    Tensor loss = add(tape, scale(tape, l1, a), scale(tape, l2, b));
    tape.backward(loss);
    std::vector<double> g(static_cast<size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) g[static_cast<size_t>(i)] = x.grad_at(i);
    return g;
  };
  auto g10 = grads_for(1, 0);
  auto g01 = grads_for(0, 1);
  auto g23 = grads_for(2, 3);
  for (size_t i = 0; i < g10.size(); ++i)
    CHECK(std::abs(g23[i] - (2 * g10[i] + 3 * g01[i])) < 1e-6);
}

TEST_CASE("ops are deterministic across runs") {
  auto run = [&]() {
    Rng rng(99);
    Tensor x = random_tensor({3, 8, 8}, rng, DType::F32);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, DType::F32);
    Tape tape(false);
    Tensor y = elu(tape, conv2d(tape, x, w, 1, 1));
    std::vector<float> out(y.data<float>().begin(), y.data<float>().end());
    return out;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("adam closed forms") {
  // zero gradient leaves parameters unchanged
  {
    std::vector<Tensor> params = {
        Tensor::from_values({2}, std::vector<double>{1.0, -2.0}, DType::F64)};
    std::vector<Tensor> grads = {Tensor::zeros({2}, DType::F64)};
    AdamState st;
    st.init(params);
    adam_step(params, grads, st);
    CHECK(params[0].at(0) == doctest::Approx(1.0));
    CHECK(params[0].at(1) == doctest::Approx(-2.0));
    CHECK(st.t == 1);
  }
  // first step is a bias-corrected sign step of size ~lr
  {
    std::vector<Tensor> params = {
        Tensor::from_values({1}, std::vector<double>{0.7}, DType::F64)};
    std::vector<Tensor> grads = {
        Tensor::from_values({1}, std::vector<double>{0.5}, DType::F64)};
    AdamState st;
    st.lr = 1e-4;
    st.init(params);
    adam_step(params, grads, st);
    CHECK(params[0].at(0) == doctest::Approx(0.7 - 1e-4).epsilon(1e-6));
  }
  // two steps against an independent replay on a quadratic
  {
    double p_ref = 0.3;
    double m = 0, v = 0;
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<Tensor> params = {
        Tensor::from_values({1}, std::vector<double>{0.3}, DType::F64)};
    AdamState st;
    st.lr = lr;
    st.init(params);
    for (int t = 1; t <= 2; ++t) {
      const double g = 2.0 * p_ref;  // d/dp of p^2
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      p_ref -= lr * mhat / (std::sqrt(vhat) + eps);

      std::vector<Tensor> grads = {
          Tensor::from_values({1}, std::vector<double>{2.0 * params[0].at(0)}, DType::F64)};
      adam_step(params, grads, st);
    }
    CHECK(std::abs(params[0].at(0) - p_ref) < 1e-9);
  }
  // mismatched shapes rejected
  {
    std::vector<Tensor> params = {Tensor::zeros({2}, DType::F64)};
    std::vector<Tensor> grads = {Tensor::zeros({3}, DType::F64)};
    AdamState st;
    st.init(params);
    CHECK_THROWS_AS(adam_step(params, grads, st), std::invalid_argument);
  }
}

TEST_CASE("checkpoint roundtrip and errors") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "physprior_test.pckp").string();
  Rng rng(31);
  NamedTensors tensors;
  tensors.emplace_back("enc.w", Tensor::uniform({2, 3, 3, 3}, -1, 1, rng, DType::F32));
  tensors.emplace_back("enc.b", Tensor::uniform({2}, -1, 1, rng, DType::F32));
  tensors.emplace_back("adam.t", Tensor::scalar(7.0, DType::F32));
  save_checkpoint(path, tensors);
  NamedTensors loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    CHECK(loaded[i].first == tensors[i].first);
    REQUIRE(loaded[i].second.shape() == tensors[i].second.shape());
    auto a = tensors[i].second.data<float>();
    auto b = loaded[i].second.data<float>();
    for (size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
  CHECK(checkpoint_find(loaded, "enc.w") != nullptr);
  CHECK(checkpoint_find(loaded, "missing") == nullptr);
  CHECK_THROWS(checkpoint_get(loaded, "enc.w", {9, 9}));

  // corrupt magic
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE0000";
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(load_checkpoint(path)),
                       doctest::Contains("not a PCKP checkpoint"), std::runtime_error);
  fs::remove(path);
}
