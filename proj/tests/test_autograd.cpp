// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

#include <doctest.h>

#include "wa/autograd.hpp"
#include "wa/normalize.hpp"
#include "wa/rng.hpp"

using namespace wa;

namespace {

Tensor<double> randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Push values away from the ReLU kink so central differences stay one-sided.
Tensor<double> randn_offkink(Shape shape, Rng& rng, double margin = 0.05) {
  Tensor<double> t = randn(std::move(shape), rng);
  for (Index i = 0; i < t.size(); ++i)
    if (std::abs(t[i]) < margin) t[i] = t[i] < 0 ? -margin : margin;
  return t;
}

}  // namespace

TEST_CASE("backward of x^2 at x=3") {
  Tape<double> tape;
  int x = tape.leaf(Tensor<double>::scalar(3.0));
  int y = mul(tape, x, x);
  auto grads = tape.backward(y);
  CHECK(grads.at(x).value() == 6.0);
}

TEST_CASE("backward seed must be scalar; detached nodes absent") {
  Tape<double> tape;
  int x = tape.leaf(Tensor<double>({2}, {1, 2}));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);

  int detached = tape.leaf(Tensor<double>::scalar(5.0));
  int loss = sum(tape, x);
  auto grads = tape.backward(loss);
  CHECK(grads.find(detached) == nullptr);
  CHECK(grads.find(x) != nullptr);
}

TEST_CASE("gradient of two branches adds (linearity of backward)") {
  Rng rng(1);
  Tensor<double> xv = randn({4}, rng);
  Tape<double> tape;
  int x = tape.leaf(xv);
  int branch_a = scale(tape, x, 2.0);
  int branch_b = mul(tape, x, x);
  int loss = add(tape, sum(tape, branch_a), sum(tape, branch_b));
  auto grads = tape.backward(loss);
  for (Index i = 0; i < 4; ++i)
    CHECK(grads.at(x)[i] == doctest::Approx(2.0 + 2.0 * xv[i]).epsilon(1e-12));
}

TEST_CASE("repeated forward+backward is bit-identical") {
  Rng rng(2);
  Tensor<double> xv = randn({2, 3, 5, 5}, rng);
  Tensor<double> wv = randn({4, 3, 3, 3}, rng, 0.3);
  auto run = [&] {
    Tape<double> tape;
    int x = tape.leaf(xv);
    int w = tape.leaf(wv);
    int out = conv2d(tape, x, w, -1, 1, 1);
    int loss = sum(tape, relu(tape, out));
    auto grads = tape.backward(loss);
    return std::pair(grads.at(w), grads.at(x));
  };
  auto [gw1, gx1] = run();
  auto [gw2, gx2] = run();
  CHECK(gw1 == gw2);
  CHECK(gx1 == gx2);
}

TEST_CASE("finite_diff_check on linear and piecewise-linear functions") {
  Rng rng(3);
  Tensor<double> x = randn({6}, rng);
  double err = finite_diff_check<double>(
      [](Tape<double>& t, int id) { return sum(t, id); }, x, 1e-6);
  CHECK(err < 1e-9);

  Tensor<double> xo = randn_offkink({8}, rng);
  err = finite_diff_check<double>(
      [](Tape<double>& t, int id) { return sum(t, relu(t, id)); }, xo, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("finite_diff_check rejects non-finite evaluations") {
  Tensor<double> x({1}, {0.0});
  CHECK_THROWS_AS(finite_diff_check<double>(
                      [](Tape<double>& t, int id) {
                        Tensor<double> inf = Tensor<double>::scalar(
                            std::numeric_limits<double>::infinity());
                        return mul(t, sum(t, id), t.leaf(inf));
                      },
                      x, 1e-6),
                  std::invalid_argument);
}

TEST_CASE("weight_align gradient matches finite differences (n=8)") {
  Rng rng(4);
  Tensor<double> w = randn({1, 8}, rng);
  Tensor<double> gamma = Tensor<double>::ones({1});
  // sum(w_hat) is identically zero by centering, so both sides of the check
  // are pure roundoff; a coarse step keeps the ratio to the 1e-8 floor small.
  double err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        int g = t.leaf(gamma);
        return sum(t, weight_align_bank(t, id, g, WAConfig{}));
      },
      w, 1e-2);
  CHECK(err < 1e-5);

  // The loss above is invariant to a constant shift; make a second check with
  // a non-trivial weighting downstream.
  Tensor<double> mixer = randn({1, 8}, rng);
  err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        int g = t.leaf(gamma);
        int aligned = weight_align_bank(t, id, g, WAConfig{});
        return sum(t, mul(t, aligned, t.leaf(mixer)));
      },
      w, 1e-6);
  CHECK(err < 1e-5);
}

TEST_CASE("elementwise and structural ops match finite differences") {
  Rng rng(5);
  Tensor<double> mixer = randn({3, 4}, rng);

  Tensor<double> x = randn({3, 4}, rng);
  double err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        int r = reshape(t, scale(t, id, 1.7), {4, 3});
        return sum(t, mul(t, reshape(t, r, {3, 4}), t.leaf(mixer)));
      },
      x, 1e-6);
  CHECK(err < 1e-8);

  Tensor<double> a = randn({4, 5}, rng);
  Tensor<double> b = randn({5, 2}, rng);
  err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) { return sum(t, matmul(t, id, t.leaf(b))); },
      a, 1e-6);
  CHECK(err < 1e-8);
  err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) { return sum(t, matmul(t, t.leaf(a), id)); },
      b, 1e-6);
  CHECK(err < 1e-8);
}

TEST_CASE("dense / conv / pooling gradients match finite differences") {
  Rng rng(6);

  Tensor<double> x2 = randn({3, 6}, rng);
  Tensor<double> w2 = randn({4, 6}, rng);
  Tensor<double> b2 = randn({4}, rng);
  for (int which = 0; which < 3; ++which) {
    const Tensor<double>& probe = which == 0 ? x2 : which == 1 ? w2 : b2;
    double err = finite_diff_check<double>(
        [&](Tape<double>& t, int id) {
          int x = which == 0 ? id : t.leaf(x2);
          int w = which == 1 ? id : t.leaf(w2);
          int b = which == 2 ? id : t.leaf(b2);
          int out = dense(t, x, w, b);
          return sum(t, relu(t, out));
        },
        probe, 1e-6);
    CHECK(err < 1e-6);
  }

  Tensor<double> xc = randn({2, 2, 6, 6}, rng);
  Tensor<double> wc = randn({3, 2, 3, 3}, rng, 0.4);
  Tensor<double> bc = randn({3}, rng);
  for (int which = 0; which < 3; ++which) {
    const Tensor<double>& probe = which == 0 ? xc : which == 1 ? wc : bc;
    double err = finite_diff_check<double>(
        [&](Tape<double>& t, int id) {
          int x = which == 0 ? id : t.leaf(xc);
          int w = which == 1 ? id : t.leaf(wc);
          int b = which == 2 ? id : t.leaf(bc);
          int out = conv2d(t, x, w, b, 1, 1);
          return sum(t, mul(t, out, out));
        },
        probe, 1e-5);
    CHECK(err < 1e-6);
  }

  // Pooling: distinct values keep the argmax stable under the probe step.
  Tensor<double> xp({1, 2, 4, 4});
  for (Index i = 0; i < xp.size(); ++i) xp[i] = double((i * 7) % 32) + 0.1 * double(i);
  double err = finite_diff_check<double>(
      [](Tape<double>& t, int id) { return sum(t, maxpool2d(t, id, 2)); }, xp,
      1e-6);
  CHECK(err < 1e-6);
  err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        int p = avgpool2d(t, id, 2);
        return sum(t, mul(t, p, p));
      },
      xp, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("cross_entropy: hand values and gradient") {
  // Uniform logits over 10 classes -> ln 10.
  Tape<double> tape;
  int logits = tape.leaf(Tensor<double>({1, 10}));
  int loss = cross_entropy(tape, logits, {3});
  CHECK(tape.value(loss).value() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // Saturated correct logit -> ~0 loss.
  Tensor<double> sat({1, 4});
  sat[2] = 1000.0;
  Tape<double> tape2;
  int loss2 = cross_entropy(tape2, tape2.leaf(sat), {2});
  CHECK(tape2.value(loss2).value() == doctest::Approx(0.0).epsilon(1e-12));

  // Out-of-range label.
  Tape<double> tape3;
  int l3 = tape3.leaf(Tensor<double>({2, 3}));
  CHECK_THROWS_AS(cross_entropy(tape3, l3, {0, 3}), std::invalid_argument);

  // Random logits vs a direct high-precision softmax oracle.
  Rng rng(8);
  Tensor<double> lr = randn({4, 3}, rng);
  std::vector<int> labels = {2, 0, 1, 1};
  Tape<double> tape4;
  int loss4 = cross_entropy(tape4, tape4.leaf(lr), labels);
  long double want = 0;
  for (Index i = 0; i < 4; ++i) {
    long double denom = 0;
    for (Index j = 0; j < 3; ++j) denom += expl((long double)lr(i, j));
    want += -logl(expl((long double)lr(i, labels[size_t(i)])) / denom);
  }
  want /= 4;
  CHECK(tape4.value(loss4).value() == doctest::Approx(double(want)).epsilon(1e-10));

  double err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) { return cross_entropy(t, id, labels); }, lr,
      1e-6);
  CHECK(err < 1e-8);
}

TEST_CASE("conv -> relu -> dense -> cross-entropy: all parameter gradients") {
  Rng rng(9);
  Tensor<double> x = randn({2, 2, 5, 5}, rng);
  Tensor<double> wc = randn({3, 2, 3, 3}, rng, 0.4);
  Tensor<double> wd = randn({4, 3 * 5 * 5}, rng, 0.2);
  std::vector<int> labels = {1, 3};

  auto net = [&](Tape<double>& t, int xid, int wcid, int wdid) {
    int h = relu(t, conv2d(t, xid, wcid, -1, 1, 1));
    const Tensor<double>& hv = t.value(h);
    int flat = reshape(t, h, {hv.extent(0), hv.size() / hv.extent(0)});
    int logits = dense(t, flat, wdid, -1);
    return cross_entropy(t, logits, labels);
  };

  double err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        return net(t, t.leaf(x), id, t.leaf(wd));
      },
      wc, 1e-6);
  CHECK(err < 1e-4);
  err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        return net(t, t.leaf(x), t.leaf(wc), id);
      },
      wd, 1e-6);
  CHECK(err < 1e-4);
  err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        return net(t, id, t.leaf(wc), t.leaf(wd));
      },
      x, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("batch_norm(conv(x,w)) gradient w.r.t. the weights") {
  Rng rng(10);
  Tensor<double> x = randn({3, 2, 4, 4}, rng);
  Tensor<double> w = randn({3, 2, 3, 3}, rng, 0.4);
  Tensor<double> gamma = Tensor<double>::ones({3});
  Tensor<double> beta({3});
  double err = finite_diff_check<double>(
      [&](Tape<double>& t, int id) {
        NormState<double> st = NormState<double>::make(3, 0.1);
        int conv = conv2d(t, t.leaf(x), id, -1, 1, 1);
        int bn = batch_norm(t, conv, t.leaf(gamma), t.leaf(beta), st, Mode::Train);
        // Weight the outputs so the loss is not constant under rescaling.
        Tensor<double> mix(t.value(bn).shape());
        Rng mrng(77);
        for (Index i = 0; i < mix.size(); ++i) mix[i] = mrng.normal();
        return sum(t, mul(t, bn, t.leaf(mix)));
      },
      w, 1e-5);
  CHECK(err < 1e-4);
}
