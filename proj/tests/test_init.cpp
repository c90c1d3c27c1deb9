// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

#include <doctest.h>

#include "wa/init.hpp"

using namespace wa;

TEST_CASE("kaiming target std for n = 576") {
  CHECK(std::sqrt(2.0 / 576.0) == doctest::Approx(0.058926).epsilon(1e-4));
}

TEST_CASE("kaiming draw concentrates on the target moments") {
  const Index n = 576;
  const double target = std::sqrt(2.0 / double(n));
  Tensor<double> t = kaiming_init<double>({1000000}, n, Rng(42, 1));

  double mean = 0;
  for (Index i = 0; i < t.size(); ++i) mean += t[i];
  mean /= double(t.size());
  // Mean within 4 standard errors.
  CHECK(std::abs(mean) < 4.0 * target / 1000.0);

  double var = 0;
  for (Index i = 0; i < t.size(); ++i) var += (t[i] - mean) * (t[i] - mean);
  var /= double(t.size());
  CHECK(std::sqrt(var) == doctest::Approx(target).epsilon(0.01));

  // Symmetry: skewness within +-0.01 at 1e6 samples.
  double m3 = 0;
  for (Index i = 0; i < t.size(); ++i) {
    const double d = t[i] - mean;
    m3 += d * d * d;
  }
  m3 /= double(t.size());
  CHECK(std::abs(m3 / std::pow(var, 1.5)) < 0.01);
}

TEST_CASE("fixed seed reproduces bit-identical tensors") {
  auto a = kaiming_init<double>({4, 3, 3, 3}, 27, Rng(7, 3));
  auto b = kaiming_init<double>({4, 3, 3, 3}, 27, Rng(7, 3));
  CHECK(a == b);
  auto c = kaiming_init<double>({4, 3, 3, 3}, 27, Rng(8, 3));
  CHECK_FALSE(a == c);
}

TEST_CASE("n = 0 is rejected") {
  CHECK_THROWS_AS(kaiming_init<double>({4}, 0, Rng(1)), std::invalid_argument);
}

TEST_CASE("independent streams are uncorrelated") {
  const Index n = 100000;
  Rng root(99);
  auto a = kaiming_init<double>({n}, 50, root.split(0));
  auto b = kaiming_init<double>({n}, 50, root.split(1));
  double dot = 0, na = 0, nb = 0;
  for (Index i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double corr = dot / std::sqrt(na * nb);
  // Null correlation has stderr 1/sqrt(n); allow 4 sigma.
  CHECK(std::abs(corr) < 4.0 / std::sqrt(double(n)));
}
