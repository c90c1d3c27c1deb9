// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file init.hpp
 * @brief Weight initialization.
 *
 * Filters are drawn i.i.d. from a zero-mean Gaussian with std sqrt(2/n),
 * n being the per-filter fan-in (k*k*c for conv, fan_in for dense). The
 * same deviation is used for the first layer.
 */

#pragma once

#include "wa/rng.hpp"
#include "wa/tensor.hpp"

namespace wa {

template <typename S>
Tensor<S> kaiming_init(Shape shape, Index n, Rng rng) {
  if (n <= 0) fail("kaiming_init: fan-in n must be positive");
  Tensor<S> t(std::move(shape));
  const double std = std::sqrt(2.0 / double(n));
  for (Index i = 0; i < t.size(); ++i) t[i] = S(rng.normal(0.0, std));
  return t;
}

}  // namespace wa
