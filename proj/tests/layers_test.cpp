#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vlabel/layers.hpp"
#include "vlabel/random.hpp"

using namespace vlabel;

namespace {

Tensor<double> run_conv1d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  Tape<double> tape;
  return conv1d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
}

Tensor<double> run_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  Tape<double> tape;
  return conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
}

Tensor<double> sample(const Tensor<double>& batch, std::size_t n) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t per = shape_numel(s);
  return Tensor<double>(s, std::vector<double>(batch.data().begin() + n * per, batch.data().begin() + (n + 1) * per));
}

}  // namespace

TEST_CASE("conv1d with a box kernel sums neighbours") {
  auto out = run_conv1d(Tensor<double>({1, 1, 5}, 1.0), Tensor<double>({1, 1, 3}, 1.0), Tensor<double>({1}, 0.0));
  CHECK(out.storage() == std::vector<double>{2, 3, 3, 3, 2});
}

TEST_CASE("conv1d with a delta kernel is the identity") {
  Rng rng(4);
  auto x = oracle::random_tensor<double>({2, 1, 7}, rng);
  auto out = run_conv1d(x, Tensor<double>({1, 1, 3}, std::vector<double>{0, 1, 0}), Tensor<double>({1}, 0.0));
  CHECK(out.storage() == x.storage());
}

TEST_CASE("conv1d matches the loop oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(3), cin = 1 + rng.below(4), cout = 1 + rng.below(4), len = 1 + rng.below(9);
    auto x = oracle::random_tensor<double>({n, cin, len}, rng);
    auto w = oracle::random_tensor<double>({cout, cin, 3}, rng);
    auto b = oracle::random_tensor<double>({cout}, rng);
    auto out = run_conv1d(x, w, b);
    REQUIRE(out.shape() == Shape{n, cout, len});
    for (std::size_t s = 0; s < n; ++s) {
      CHECK(max_relative_error(sample(out, s), oracle::conv1d(sample(x, s), w, b), 1e-12) < 1e-9);
    }
  }
}

TEST_CASE("conv2d box kernel counts in-bounds neighbours") {
  auto out = run_conv2d(Tensor<double>({1, 1, 3, 3}, 1.0), Tensor<double>({1, 1, 3, 3}, 1.0), Tensor<double>({1}, 0.0));
  CHECK(out.at({0, 0, 1, 1}) == 9.0);
  CHECK(out.at({0, 0, 0, 0}) == 4.0);
  CHECK(out.at({0, 0, 0, 1}) == 6.0);
}

TEST_CASE("conv2d with a delta kernel is the identity") {
  Rng rng(6);
  auto x = oracle::random_tensor<double>({1, 1, 4, 5}, rng);
  Tensor<double> delta({1, 1, 3, 3});
  delta.at({0, 0, 1, 1}) = 1.0;
  CHECK(run_conv2d(x, delta, Tensor<double>({1}, 0.0)).storage() == x.storage());
}

TEST_CASE("conv2d matches the loop oracle on both kernel paths") {
  Rng rng(12);
  struct Case {
    std::size_t cin, cout, h, w;
  };
  // The wide cases exercise the direct path, the others im2col.
  const std::vector<Case> cases{{3, 4, 5, 6}, {2, 5, 1, 7}, {1, 1, 1, 1}, {3, 4, 32, 40}, {2, 8, 40, 30}, {4, 40, 32, 32}};
  for (const auto& c : cases) {
    auto x = oracle::random_tensor<double>({2, c.cin, c.h, c.w}, rng);
    auto w = oracle::random_tensor<double>({c.cout, c.cin, 3, 3}, rng);
    auto b = oracle::random_tensor<double>({c.cout}, rng);
    auto out = run_conv2d(x, w, b);
    REQUIRE(out.shape() == Shape{2, c.cout, c.h, c.w});
    for (std::size_t s = 0; s < 2; ++s) {
      CHECK(max_relative_error(sample(out, s), oracle::conv2d(sample(x, s), w, b), 1e-12) < 1e-9);
    }
  }
}

TEST_CASE("same padding keeps spatial dims") {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 2, 35, 69}));
  auto y = conv2d(x, tape.constant(Tensor<float>({64, 2, 3, 3})), tape.constant(Tensor<float>({64})));
  CHECK(y.shape() == Shape{1, 64, 35, 69});
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor<float>({64, 3, 3, 3})), tape.constant(Tensor<float>({64}))),
                  DimensionError);
}

TEST_CASE("batch norm in train mode standardizes per channel") {
  Tape<double> tape;
  Tensor<double> mean({1}), var({1}, 1.0);
  auto y = batch_norm(tape.constant(Tensor<double>({2, 1, 1}, std::vector<double>{1, 3})),
                      tape.constant(Tensor<double>({1}, 1.0)), tape.constant(Tensor<double>({1}, 0.0)),
                      BatchNormStats<double>{&mean, &var}, Mode::train);
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-5));
  // Running estimates move 1% towards the batch statistics.
  CHECK(mean[0] == doctest::Approx(0.02));
  CHECK(var[0] == doctest::Approx(0.99 + 0.01 * 1.0));
}

TEST_CASE("batch norm maps a constant channel to beta") {
  Tape<double> tape;
  Tensor<double> mean({1}), var({1}, 1.0);
  auto y = batch_norm(tape.constant(Tensor<double>({3, 1, 4}, 2.5)), tape.constant(Tensor<double>({1}, 3.0)),
                      tape.constant(Tensor<double>({1}, 0.75)), BatchNormStats<double>{&mean, &var}, Mode::train);
  for (auto v : y.value().data()) CHECK(v == doctest::Approx(0.75));
}

TEST_CASE("batch norm in infer mode uses running statistics") {
  Tape<double> tape;
  Tensor<double> mean({1}, 0.0), var({1}, 1.0);
  auto y = batch_norm(tape.constant(Tensor<double>({1, 1, 1}, 0.5)), tape.constant(Tensor<double>({1}, 2.0)),
                      tape.constant(Tensor<double>({1}, 1.0)), BatchNormStats<double>{&mean, &var}, Mode::infer);
  CHECK(y.value()[0] == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(mean[0] == 0.0);
  CHECK(var[0] == 1.0);
}

TEST_CASE("max pool picks window maxima and floors odd lengths") {
  Tape<double> tape;
  auto y = max_pool(tape.constant(Tensor<double>({1, 1, 5}, std::vector<double>{1, 3, 2, 5, 9})));
  CHECK(y.value().storage() == std::vector<double>{3, 5});

  std::size_t len = 66;
  std::vector<std::size_t> chain;
  for (int i = 0; i < 4; ++i) {
    Tape<float> t;
    len = max_pool(t.constant(Tensor<float>({1, 1, len}))).shape()[2];
    chain.push_back(len);
  }
  CHECK(chain == std::vector<std::size_t>{33, 16, 8, 4});

  Shape s{1, 1, 350, 690};
  for (int i = 0; i < 5; ++i) {
    Tape<float> t;
    s = max_pool(t.constant(Tensor<float>(s))).shape();
  }
  CHECK(s == Shape{1, 1, 10, 21});
}

TEST_CASE("max pool backward routes one unit per window") {
  Rng rng(3);
  Tape<double> tape;
  auto x = tape.parameter(oracle::random_tensor<double>({2, 3, 6, 8}, rng));
  tape.backward(sum(max_pool(x)));
  double total = 0;
  for (auto g : x.grad()->data()) {
    CHECK((g == 0.0 || g == 1.0));
    total += g;
  }
  CHECK(total == 2 * 3 * 3 * 4);
}

TEST_CASE("global average pooling") {
  Tape<double> tape;
  auto y = global_avg_pool(tape.constant(Tensor<double>({1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, -1, -1, -1, 5})));
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.value().storage() == std::vector<double>{2.5, 0.5});
}

TEST_CASE("softmax examples") {
  auto even = softmax(Tensor<double>({2}, std::vector<double>{0, 0}));
  CHECK(even[0] == doctest::Approx(0.5));
  auto ln2 = softmax(Tensor<double>({2}, std::vector<double>{std::log(2.0), 0}));
  CHECK(ln2[0] == doctest::Approx(2.0 / 3.0));
  CHECK(ln2[1] == doctest::Approx(1.0 / 3.0));
  auto big = softmax(Tensor<double>({2}, std::vector<double>{1000, 0}));
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);

  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto z = oracle::random_tensor<double>({3, 4}, rng, -5, 5);
    auto shifted = z;
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted.storage()) v += c;
    CHECK(max_relative_error(softmax(z), softmax(shifted), 1e-12) < 1e-9);
    auto p = softmax(z);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += p.at({r, k});
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("weighted cross-entropy values and contract") {
  Tape<double> tape;
  Tensor<double> targets({1, 2}, std::vector<double>{1, 0});
  auto z = tape.constant(Tensor<double>({1, 2}, 0.0));
  CHECK(weighted_cross_entropy(z, targets, Tensor<double>({2}, 1.0)).value()[0] == doctest::Approx(std::log(2.0)));
  CHECK(weighted_cross_entropy(z, targets, Tensor<double>({2}, std::vector<double>{2, 1})).value()[0] ==
        doctest::Approx(2 * std::log(2.0)));
  CHECK_THROWS_AS(weighted_cross_entropy(z, Tensor<double>({1, 2}, 0.5), Tensor<double>({2}, 1.0)), ContractViolation);
}

// Finite-difference checks, 50 random instances per layer.

TEST_CASE("conv1d gradients") {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(3), cout = 1 + rng.below(3), len = 1 + rng.below(6);
    auto probe = oracle::random_tensor<double>({n, cout, len}, rng);
    double err = gradcheck::worst_error(
        [](Tape<double>&, const std::vector<Var<double>>& v) { return conv1d(v[0], v[1], v[2]); },
        {oracle::random_tensor<double>({n, cin, len}, rng), oracle::random_tensor<double>({cout, cin, 3}, rng),
         oracle::random_tensor<double>({cout}, rng)},
        probe);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("conv2d gradients on both kernel paths") {
  Rng rng(102);
  for (int trial = 0; trial < 50; ++trial) {
    const bool wide = trial % 5 == 0;
    const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(2), cout = 1 + rng.below(3);
    const std::size_t h = wide ? 32 : 1 + rng.below(5), w = wide ? 33 : 1 + rng.below(5);
    auto probe = oracle::random_tensor<double>({n, cout, h, w}, rng);
    double err = gradcheck::worst_error(
        [](Tape<double>&, const std::vector<Var<double>>& v) { return conv2d(v[0], v[1], v[2]); },
        {oracle::random_tensor<double>({n, cin, h, w}, rng), oracle::random_tensor<double>({cout, cin, 3, 3}, rng),
         oracle::random_tensor<double>({cout}, rng)},
        probe);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("batch norm gradients in both modes") {
  Rng rng(103);
  for (int trial = 0; trial < 50; ++trial) {
    const Mode mode = trial % 2 ? Mode::train : Mode::infer;
    const std::size_t n = 2 + rng.below(3), c = 1 + rng.below(3), len = 1 + rng.below(4);
    Tensor<double> mean = oracle::random_tensor<double>({c}, rng);
    Tensor<double> var = oracle::random_tensor<double>({c}, rng, 0.5, 2.0);
    auto probe = oracle::random_tensor<double>({n, c, len}, rng);
    double err = gradcheck::worst_error(
        [&](Tape<double>&, const std::vector<Var<double>>& v) {
          Tensor<double> m = mean, s = var;
          return batch_norm(v[0], v[1], v[2], BatchNormStats<double>{&m, &s}, mode);
        },
        {oracle::random_tensor<double>({n, c, len}, rng), oracle::random_tensor<double>({c}, rng, 0.5, 1.5),
         oracle::random_tensor<double>({c}, rng)},
        probe);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("relu, pooling and average gradients") {
  Rng rng(104);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = oracle::random_tensor<double>({1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(5), 2 + rng.below(5)}, rng);
    auto px = x.shape();
    Shape pooled{px[0], px[1], px[2] / 2, px[3] / 2};
    CHECK(gradcheck::worst_error([](Tape<double>&, const std::vector<Var<double>>& v) { return relu(v[0]); }, {x},
                                 oracle::random_tensor<double>(px, rng)) < 1e-4);
    CHECK(gradcheck::worst_error([](Tape<double>&, const std::vector<Var<double>>& v) { return max_pool(v[0]); }, {x},
                                 oracle::random_tensor<double>(pooled, rng)) < 1e-4);
    CHECK(gradcheck::worst_error([](Tape<double>&, const std::vector<Var<double>>& v) { return global_avg_pool(v[0]); },
                                 {x}, oracle::random_tensor<double>({px[0], px[1]}, rng)) < 1e-4);
  }
}

TEST_CASE("weighted cross-entropy gradients") {
  Rng rng(105);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(4), k = 2 + rng.below(4);
    Tensor<double> targets({n, k});
    for (std::size_t i = 0; i < n; ++i) targets.at({i, rng.below(k)}) = 1.0;
    auto weights = oracle::random_tensor<double>({k}, rng, 0.5, 3.0);
    double err = gradcheck::worst_error(
        [&](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_cross_entropy(v[0], targets, weights); },
        {oracle::random_tensor<double>({n, k}, rng, -3, 3)}, Tensor<double>({1}, 1.0));
    CHECK(err < 1e-4);
  }
}
