#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "spg/grad_check.hpp"
#include "spg/rng.hpp"
#include "spg/tape.hpp"
#include "spg/tensor.hpp"

using namespace spg;

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(t.grad(), TrainingError);
  t.set_requires_grad(true);
  CHECK(t.grad().size() == 6);
}

TEST_CASE("matmul") {
  Tape tape;
  SECTION("identity") {
    auto a = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    auto b = tape.constant(Tensor({2, 1}, {5, 7}));
    auto c = tape.matmul(a, b);
    CHECK(tape.value(c)[0] == 5.0);
    CHECK(tape.value(c)[1] == 7.0);
  }
  SECTION("hand arithmetic") {
    auto a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto b = tape.constant(Tensor({2, 1}, {1, 1}));
    auto c = tape.matmul(a, b);
    CHECK(tape.value(c)[0] == 3.0);
    CHECK(tape.value(c)[1] == 7.0);
  }
  SECTION("zero matrix annihilates") {
    auto a = tape.constant(Tensor::zeros({2, 3}));
    auto b = tape.constant(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
    auto c = tape.matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape.value(c)[i] == 0.0);
  }
  SECTION("shape mismatch") {
    auto a = tape.constant(Tensor::zeros({2, 3}));
    auto b = tape.constant(Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(tape.matmul(a, b), DimensionError);
  }
}

TEST_CASE("elementwise ops") {
  Tape tape;
  auto x = tape.constant(Tensor::vector({1.0, -3.0}));
  SECTION("additive identity") {
    auto z = tape.constant(Tensor::zeros({2}));
    auto s = tape.add(x, z);
    CHECK(tape.value(s)[0] == 1.0);
    CHECK(tape.value(s)[1] == -3.0);
  }
  SECTION("scale by hand") {
    auto s = tape.scale(2.0, x);
    CHECK(tape.value(s)[0] == 2.0);
    CHECK(tape.value(s)[1] == -6.0);
  }
  SECTION("tanh odd at origin") {
    auto z = tape.constant(Tensor::vector({0.0}));
    CHECK(tape.value(tape.tanh(z))[0] == 0.0);
  }
  SECTION("add shape mismatch") {
    auto z = tape.constant(Tensor::zeros({3}));
    CHECK_THROWS_AS(tape.add(x, z), DimensionError);
  }
  SECTION("relu") {
    auto r = tape.relu(x);
    CHECK(tape.value(r)[0] == 1.0);
    CHECK(tape.value(r)[1] == 0.0);
  }
}

TEST_CASE("concat") {
  Tape tape;
  SECTION("single part unchanged") {
    Tensor v({4, 8});
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] = static_cast<double>(i);
    auto a = tape.constant(v);
    auto c = tape.concat({a}, 0);
    CHECK(bitwise_equal(tape.value(c), v));
  }
  SECTION("vector order preserved") {
    auto a = tape.constant(Tensor::vector({1, 2}));
    auto b = tape.constant(Tensor::vector({3, 4, 5}));
    auto c = tape.concat({a, b}, 0);
    REQUIRE(tape.value(c).numel() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(tape.value(c)[i] == static_cast<double>(i + 1));
  }
  SECTION("zeros stack to zeros") {
    auto a = tape.constant(Tensor::zeros({1, 6}));
    auto c = tape.concat({a, a, a}, 0);
    CHECK(tape.value(c).rows() == 3);
    for (std::size_t i = 0; i < 18; ++i) CHECK(tape.value(c)[i] == 0.0);
  }
  SECTION("extent mismatch") {
    auto a = tape.constant(Tensor::zeros({2, 3}));
    auto b = tape.constant(Tensor::zeros({2, 4}));
    CHECK_THROWS_AS(tape.concat({a, b}, 0), DimensionError);
  }
  SECTION("axis 1 layout") {
    auto a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto b = tape.constant(Tensor({2, 1}, {9, 8}));
    auto c = tape.concat({a, b}, 1);
    const Tensor& cv = tape.value(c);
    CHECK(cv.at(0, 2) == 9.0);
    CHECK(cv.at(1, 2) == 8.0);
    CHECK(cv.at(1, 0) == 3.0);
  }
}

TEST_CASE("l2_normalize") {
  Tape tape;
  SECTION("already unit") {
    auto v = tape.l2_normalize(tape.constant(Tensor::vector({1, 0, 0})));
    CHECK(tape.value(v)[0] == 1.0);
  }
  SECTION("3-4-5 triangle") {
    auto v = tape.l2_normalize(tape.constant(Tensor::vector({3, 4})));
    CHECK(tape.value(v)[0] == Catch::Approx(0.6).margin(1e-15));
    CHECK(tape.value(v)[1] == Catch::Approx(0.8).margin(1e-15));
  }
  SECTION("zero vector errors") {
    CHECK_THROWS_AS(tape.l2_normalize(tape.constant(Tensor::vector({0, 0}))),
                    DegenerateInputError);
  }
}

TEST_CASE("cosine similarity") {
  Tape tape;
  auto e1 = tape.constant(Tensor::vector({1, 0}));
  auto e2 = tape.constant(Tensor::vector({0, 1}));
  auto d11 = tape.constant(Tensor::vector({1, 1}));
  CHECK(tape.value(tape.cosine_similarity(e1, e1))[0] == 1.0);
  CHECK(tape.value(tape.cosine_similarity(e1, e2))[0] == 0.0);
  CHECK(tape.value(tape.cosine_similarity(d11, e1))[0] ==
        Catch::Approx(0.70710678).margin(1e-8));
  SECTION("positive rescaling leaves value exactly unchanged") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = Tensor::vector(rng.normal_vec(5));
      Tensor b = Tensor::vector(rng.normal_vec(5));
      const double lambda = std::exp(rng.normal());  // > 0
      Tensor b_scaled = b;
      for (auto& x : b_scaled.data()) x *= lambda;
      Tape t2;
      const double s1 = t2.value(t2.cosine_similarity(t2.constant(a), t2.constant(b)))[0];
      // cos(a, lambda b) must equal cos(a, b) bit-for-bit: the scale cancels.
      Tape t3;
      const double s2 =
          t3.value(t3.cosine_similarity(t3.constant(a), t3.constant(b_scaled)))[0];
      CHECK(s1 == Catch::Approx(s2).margin(1e-15));
      CHECK(std::abs(s1) <= 1.0);
    }
  }
  SECTION("degenerate operand") {
    auto z = tape.constant(Tensor::vector({0, 0}));
    CHECK_THROWS_AS(tape.cosine_similarity(e1, z), DegenerateInputError);
  }
}

TEST_CASE("softmax cross entropy") {
  Tape tape;
  SECTION("ln 2 at even logits") {
    auto l = tape.constant(Tensor::vector({0, 0}));
    CHECK(tape.value(tape.softmax_cross_entropy(l, 0))[0] ==
          Catch::Approx(0.69314718055994531).margin(1e-15));
  }
  SECTION("saturated limits") {
    auto l = tape.constant(Tensor::vector({50, 0}));
    CHECK(tape.value(tape.softmax_cross_entropy(l, 0))[0] < 1e-20);
    auto l2 = tape.constant(Tensor::vector({0, 50}));
    CHECK(tape.value(tape.softmax_cross_entropy(l2, 0))[0] ==
          Catch::Approx(50.0).margin(1e-9));
  }
  SECTION("label out of range") {
    auto l = tape.constant(Tensor::vector({0, 0}));
    CHECK_THROWS_AS(tape.softmax_cross_entropy(l, 2), DimensionError);
  }
  SECTION("implied softmax sums to one") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const auto logits = rng.normal_vec(7, 0.0, 5.0);
      const auto p = softmax_stable(logits.data(), logits.size());
      double total = 0.0;
      for (double x : p) total += x;
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("mse loss") {
  Tape tape;
  auto p = tape.constant(Tensor::vector({1, 1}));
  auto q = tape.constant(Tensor::vector({0, 0}));
  CHECK(tape.value(tape.mse_loss(p, p))[0] == 0.0);
  CHECK(tape.value(tape.mse_loss(p, q))[0] == 1.0);
  auto a = tape.constant(Tensor::vector({0.5}));
  auto b = tape.constant(Tensor::vector({1.0}));
  CHECK(tape.value(tape.mse_loss(a, b))[0] == 0.25);
  CHECK_THROWS_AS(tape.mse_loss(p, tape.constant(Tensor::vector({1}))), DimensionError);
}

TEST_CASE("backward populates leaf gradients") {
  SECTION("linear sum") {
    Tensor w = Tensor::full({3}, 1.0);
    w.set_requires_grad(true);
    Tape tape;
    auto loss = tape.sum(tape.leaf(w));
    tape.backward(loss);
    for (double g : w.grad()) CHECK(g == 1.0);
  }
  SECTION("mse gradient by hand") {
    Tensor w = Tensor::vector({2.0});
    w.set_requires_grad(true);
    Tape tape;
    auto loss = tape.mse_loss(tape.leaf(w), tape.constant(Tensor::vector({0.0})));
    tape.backward(loss);
    CHECK(w.grad()[0] == Catch::Approx(4.0).margin(1e-15));
  }
  SECTION("non-scalar root rejected") {
    Tensor w = Tensor::full({3}, 1.0);
    w.set_requires_grad(true);
    Tape tape;
    auto v = tape.leaf(w);
    CHECK_THROWS_AS(tape.backward(v), DimensionError);
  }
  SECTION("repeated backward accumulates; replay after reset is bit-identical") {
    Tensor w = Tensor::vector({0.3, -0.7});
    w.set_requires_grad(true);
    Tape tape;
    auto loss = tape.mse_loss(tape.tanh(tape.leaf(w)), tape.constant(Tensor::vector({1, 1})));
    tape.backward(loss);
    const auto once = w.grad();
    tape.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
    w.zero_grad();
    tape.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == once[i]);
  }
  SECTION("non-finite op output raises") {
    Tape tape;
    auto big = tape.constant(Tensor::vector({1e308}));
    CHECK_THROWS_AS(tape.add(big, big), NumericError);
  }
}

TEST_CASE("grad_check on every differentiable op") {
  Rng rng(99);
  SECTION("exact for linear functions") {
    Tensor w = Tensor::vector(rng.normal_vec(4));
    w.set_requires_grad(true);
    const double err = grad_check(
        [&]() {
          Tape tape;
          auto loss = tape.sum(tape.leaf(w));
          tape.backward(loss);
          return tape.value(loss)[0];
        },
        std::vector<Tensor*>{&w}, 1e-6);
    CHECK(err < 1e-9);
  }
  SECTION("composite through matmul tanh relu normalize concat mse") {
    Tensor a({3, 4}, rng.normal_vec(12));
    Tensor b({4, 2}, rng.normal_vec(8));
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    const Tensor target({3, 3}, rng.normal_vec(9));
    const Tensor mixer({14, 3}, rng.normal_vec(42));
    const double err = grad_check(
        [&]() {
          Tape tape;
          auto av = tape.leaf(a);
          auto bv = tape.leaf(b);
          auto h = tape.tanh(tape.matmul(av, bv));     // 3x2
          auto r = tape.relu(tape.scale(1.7, av));     // 3x4
          auto row = tape.reshape(bv, {1, 8});
          auto tiled = tape.tile_rows(row, 3);         // 3x8
          auto cat = tape.concat({h, r, tiled}, 1);    // 3x14
          auto normed = tape.l2_normalize_rows(cat);
          auto slice = tape.matmul(normed, tape.constant(mixer));
          auto loss = tape.mse_loss(slice, tape.constant(target));
          tape.backward(loss);
          return tape.value(loss)[0];
        },
        std::vector<Tensor*>{&a, &b}, 1e-6);
    CHECK(err < 1e-5);
  }
  SECTION("cosine similarity and vector normalize") {
    Tensor a = Tensor::vector(rng.normal_vec(6));
    Tensor b = Tensor::vector(rng.normal_vec(6));
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    const double err = grad_check(
        [&]() {
          Tape tape;
          auto av = tape.l2_normalize(tape.leaf(a));
          auto bv = tape.leaf(b);
          auto s = tape.cosine_similarity(av, bv);
          tape.backward(s);
          return tape.value(s)[0];
        },
        std::vector<Tensor*>{&a, &b}, 1e-6);
    CHECK(err < 1e-5);
  }
  SECTION("softmax cross entropy over random logits") {
    Tensor logits = Tensor::vector(rng.normal_vec(8, 0.0, 3.0));
    logits.set_requires_grad(true);
    const double err = grad_check(
        [&]() {
          Tape tape;
          auto loss = tape.softmax_cross_entropy(tape.leaf(logits), 3);
          tape.backward(loss);
          return tape.value(loss)[0];
        },
        std::vector<Tensor*>{&logits}, 1e-6);
    CHECK(err < 1e-5);
  }
  SECTION("batched cross entropy with add_rows and matmul_nt") {
    Tensor x({5, 3}, rng.normal_vec(15));
    Tensor w({4, 3}, rng.normal_vec(12));
    Tensor bias = Tensor::vector(rng.normal_vec(4));
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    bias.set_requires_grad(true);
    const std::vector<std::size_t> labels{0, 1, 2, 3, 1};
    const double err = grad_check(
        [&]() {
          Tape tape;
          auto logits = tape.add_rows(tape.matmul_nt(tape.leaf(x), tape.leaf(w)),
                                      tape.leaf(bias));
          auto loss = tape.cross_entropy_mean(logits, labels);
          tape.backward(loss);
          return tape.value(loss)[0];
        },
        std::vector<Tensor*>{&x, &w, &bias}, 1e-6);
    CHECK(err < 1e-5);
  }
}
