// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file normalize.hpp
 * @brief Activation normalizers and weight re-parameterizers.
 *
 * Two orthogonal families:
 *  - sample-statistics normalizers applied to activations: batch norm over
 *    (N,H,W) per channel, group norm over (C/G,H,W) per sample (layer norm
 *    G=1, instance norm G=C);
 *  - weight re-parameterizers applied to each output filter inside the
 *    forward graph: WeightAlign maps a filter of fan-in n to zero mean and
 *    std gamma*sqrt(2/n); WeightNorm divides by the L2 norm.
 *
 * Raw weights stay the trainable parameters; re-parameterized weights are
 * recomputed on every forward pass so gradients flow through the mean and
 * variance. Population variance (divisor n) everywhere.
 */

#pragma once

#include <memory>

#include "wa/autograd.hpp"
#include "wa/tensor.hpp"

namespace wa {

enum class Mode { Train, Eval };

/// Count of sample-statistic computations over activations in this thread.
/// WeightAlign-only runs must leave it untouched.
inline thread_local uint64_t activation_stat_ops = 0;

/// Weight container exposing per-output-filter views of fan-in n.
template <typename S>
struct FilterBank {
  const Tensor<S>& weights;

  Index filters() const { return weights.extent(0); }
  Index fan_in() const { return weights.size() / weights.extent(0); }
};

struct WAConfig {
  bool center_on = true;   // subtract the per-filter mean
  bool scale_on = true;    // divide by sqrt((n/2) * var)
  double eps = 1e-5;       // inside the square root, added to the variance
  double multiplier = 1.0; // scale-factor ablation knob on the aligned std
};

/// Exponential-moving-average state of a batch-norm layer.
template <typename S>
struct NormState {
  Tensor<S> running_mean;
  Tensor<S> running_var;
  double momentum = 0.1;

  static NormState make(Index channels, double momentum) {
    NormState st;
    st.running_mean = Tensor<S>({channels});
    st.running_var = Tensor<S>::ones({channels});
    st.momentum = momentum;
    return st;
  }
};

// ---------------------------------------------------------------------------
// Pure (tape-free) re-parameterizations, shared by the graph ops and tests.
// ---------------------------------------------------------------------------

/// Align one filter: w_hat = gamma * mult * (w - mean) / sqrt((n/2)(var+eps)).
template <typename S>
std::vector<S> weight_align(const std::vector<S>& w, S gamma, const WAConfig& cfg) {
  const Index n = Index(w.size());
  if (n < 1) fail("weight_align: empty filter");
  typename Tensor<S>::ConstArrayMap wm(w.data(), n);
  const S mean = wm.mean();
  const S var = (wm - mean).square().sum() / S(n);
  const S s = cfg.scale_on
                  ? std::sqrt(S(0.5) * S(n) * (var + S(cfg.eps)))
                  : S(1);
  std::vector<S> out(w.size());
  typename Tensor<S>::ArrayMap om(out.data(), n);
  om = (wm - (cfg.center_on ? mean : S(0))) * (gamma * S(cfg.multiplier) / s);
  return out;
}

/// w_hat = g * w / (||w|| + eps).
template <typename S>
std::vector<S> weight_norm(const std::vector<S>& w, S g, S eps = S(1e-8)) {
  const Index n = Index(w.size());
  if (n < 1) fail("weight_norm: empty filter");
  typename Tensor<S>::ConstArrayMap wm(w.data(), n);
  const S r = std::sqrt(wm.square().sum());
  std::vector<S> out(w.size());
  typename Tensor<S>::ArrayMap om(out.data(), n);
  om = wm * (g / (r + eps));
  return out;
}

// ---------------------------------------------------------------------------
// Graph operations
// ---------------------------------------------------------------------------

/**
 * WeightAlign over a whole bank: row f of the [filters, n] view is aligned
 * with its own gamma[f]. Differentiable w.r.t. the raw weights and gamma.
 */
template <typename S>
int weight_align_bank(Tape<S>& t, int w, int gamma, const WAConfig& cfg) {
  const Tensor<S>& wv = t.value(w);
  const Index filters = wv.extent(0);
  const Index n = wv.size() / filters;
  if (t.value(gamma).size() != filters)
    fail("weight_align_bank: gamma length " + std::to_string(t.value(gamma).size()) +
         " != filter count " + std::to_string(filters));

  Tensor<S> out(wv.shape());
  auto stats = std::make_shared<Tensor<S>>(Shape{filters, 2});  // mean, var
  for (Index f = 0; f < filters; ++f) {
    typename Tensor<S>::ConstArrayMap row(wv.data() + f * n, n);
    typename Tensor<S>::ArrayMap orow(out.data() + f * n, n);
    const S mean = row.mean();
    const S var = (row - mean).square().sum() / S(n);
    (*stats)(f, 0) = mean;
    (*stats)(f, 1) = var;
    const S s = cfg.scale_on ? std::sqrt(S(0.5) * S(n) * (var + S(cfg.eps))) : S(1);
    const S a = t.value(gamma)[f] * S(cfg.multiplier) / s;
    orow = (row - (cfg.center_on ? mean : S(0))) * a;
  }

  return t.push(
      std::move(out), {w, gamma},
      [w, gamma, cfg, stats, n](const Tape<S>& t, const Tensor<S>& g,
                                GradientMap<S>& gm) {
        const Tensor<S>& wv = t.value(w);
        const Tensor<S>& gv = t.value(gamma);
        const Index filters = wv.extent(0);
        Tensor<S>& dw = gm.slot(w, wv.shape());
        Tensor<S>& dgamma = gm.slot(gamma, gv.shape());
        for (Index f = 0; f < filters; ++f) {
          typename Tensor<S>::ConstArrayMap row(wv.data() + f * n, n);
          typename Tensor<S>::ConstArrayMap grow(g.data() + f * n, n);
          typename Tensor<S>::ArrayMap drow(dw.data() + f * n, n);
          const S mean = (*stats)(f, 0);
          const S var = (*stats)(f, 1);
          const S s = cfg.scale_on ? std::sqrt(S(0.5) * S(n) * (var + S(cfg.eps)))
                                   : S(1);
          const S a = gv[f] * S(cfg.multiplier) / s;
          if (cfg.scale_on) {
            // d s / d w_j = (w_j - mean) / (2 s); 2 s^2 = n (var + eps).
            const S inv = S(1) / (S(n) * (var + S(cfg.eps)));
            if (cfg.center_on) {
              const S gdotu = (grow * (row - mean)).sum();
              drow += a * (grow - grow.mean() - (row - mean) * (gdotu * inv));
              dgamma[f] += S(cfg.multiplier) * gdotu / s;
            } else {
              const S gdotw = (grow * row).sum();
              drow += a * (grow - (row - mean) * (gdotw * inv));
              dgamma[f] += S(cfg.multiplier) * gdotw / s;
            }
          } else {
            if (cfg.center_on) {
              drow += a * (grow - grow.mean());
              dgamma[f] += S(cfg.multiplier) * (grow * (row - mean)).sum();
            } else {
              drow += a * grow;
              dgamma[f] += S(cfg.multiplier) * (grow * row).sum();
            }
          }
        }
      });
}

/// WeightNorm over a bank: row f scaled to norm g[f].
template <typename S>
int weight_norm_bank(Tape<S>& t, int w, int g, S eps = S(1e-8)) {
  const Tensor<S>& wv = t.value(w);
  const Index filters = wv.extent(0);
  const Index n = wv.size() / filters;
  if (t.value(g).size() != filters)
    fail("weight_norm_bank: g length != filter count");

  Tensor<S> out(wv.shape());
  for (Index f = 0; f < filters; ++f) {
    typename Tensor<S>::ConstArrayMap row(wv.data() + f * n, n);
    typename Tensor<S>::ArrayMap orow(out.data() + f * n, n);
    const S r = std::sqrt(row.square().sum());
    orow = row * (t.value(g)[f] / (r + eps));
  }
  return t.push(
      std::move(out), {w, g},
      [w, g, eps, n](const Tape<S>& t, const Tensor<S>& gr, GradientMap<S>& gm) {
        const Tensor<S>& wv = t.value(w);
        const Tensor<S>& gv = t.value(g);
        const Index filters = wv.extent(0);
        Tensor<S>& dw = gm.slot(w, wv.shape());
        Tensor<S>& dg = gm.slot(g, gv.shape());
        for (Index f = 0; f < filters; ++f) {
          typename Tensor<S>::ConstArrayMap row(wv.data() + f * n, n);
          typename Tensor<S>::ConstArrayMap grow(gr.data() + f * n, n);
          typename Tensor<S>::ArrayMap drow(dw.data() + f * n, n);
          const S r = std::sqrt(row.square().sum());
          const S dot = (grow * row).sum();
          const S rsafe = std::max(r, eps);
          drow += (gv[f] / (r + eps)) * (grow - row * (dot / (rsafe * (r + eps))));
          dg[f] += dot / (r + eps);
        }
      });
}

/**
 * Batch normalization of an NCHW tensor: per-channel standardization over
 * (N,H,W) with batch statistics in train mode (running stats updated by EMA)
 * and running statistics in eval mode, then the per-channel affine.
 */
template <typename S>
int batch_norm(Tape<S>& t, int x, int gamma, int beta, NormState<S>& state,
               Mode mode, S eps = S(1e-5)) {
  const Tensor<S>& xv = t.value(x);
  const Shape4 s = Shape4::of(xv);
  if (t.value(gamma).size() != s.c || t.value(beta).size() != s.c)
    fail("batch_norm: affine parameter length != channel count");
  const Index m = s.n * s.h * s.w;

  auto mean = std::make_shared<Tensor<S>>(Shape{s.c});
  auto var = std::make_shared<Tensor<S>>(Shape{s.c});
  const bool use_batch_stats = (mode == Mode::Train);
  if (use_batch_stats) {
    ++activation_stat_ops;
    for (Index c = 0; c < s.c; ++c) {
      S acc = 0;
      for (Index n = 0; n < s.n; ++n)
        acc += typename Tensor<S>::ConstArrayMap(
                   xv.data() + (n * s.c + c) * s.h * s.w, s.h * s.w)
                   .sum();
      const S mu = acc / S(m);
      S sq = 0;
      for (Index n = 0; n < s.n; ++n)
        sq += (typename Tensor<S>::ConstArrayMap(
                   xv.data() + (n * s.c + c) * s.h * s.w, s.h * s.w) -
               mu)
                  .square()
                  .sum();
      (*mean)[c] = mu;
      (*var)[c] = sq / S(m);
    }
    const S mom = S(state.momentum);
    state.running_mean.array() =
        (S(1) - mom) * state.running_mean.array() + mom * mean->array();
    state.running_var.array() =
        (S(1) - mom) * state.running_var.array() + mom * var->array();
  } else {
    *mean = state.running_mean;
    *var = state.running_var;
  }

  Tensor<S> out(xv.shape());
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) {
      const S inv = S(1) / std::sqrt((*var)[c] + eps);
      const S gm_ = t.value(gamma)[c], bt = t.value(beta)[c], mu = (*mean)[c];
      typename Tensor<S>::ConstArrayMap in(xv.data() + (n * s.c + c) * s.h * s.w,
                                           s.h * s.w);
      typename Tensor<S>::ArrayMap o(out.data() + (n * s.c + c) * s.h * s.w,
                                     s.h * s.w);
      o = (in - mu) * (inv * gm_) + bt;
    }

  return t.push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, var, eps, use_batch_stats](
          const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
        const Tensor<S>& xv = t.value(x);
        const Shape4 s = Shape4::of(xv);
        const Index m = s.n * s.h * s.w;
        Tensor<S>& dx = gm.slot(x, xv.shape());
        Tensor<S>& dgamma = gm.slot(gamma, t.shape(gamma));
        Tensor<S>& dbeta = gm.slot(beta, t.shape(beta));
        for (Index c = 0; c < s.c; ++c) {
          const S mu = (*mean)[c];
          const S inv = S(1) / std::sqrt((*var)[c] + eps);
          const S gam = t.value(gamma)[c];
          S gsum = 0, gxsum = 0;
          for (Index n = 0; n < s.n; ++n) {
            typename Tensor<S>::ConstArrayMap gr(
                g.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
            typename Tensor<S>::ConstArrayMap in(
                xv.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
            gsum += gr.sum();
            gxsum += (gr * (in - mu) * inv).sum();
          }
          dbeta[c] += gsum;
          dgamma[c] += gxsum;
          if (use_batch_stats) {
            const S gmean = gsum / S(m);
            const S gxmean = gxsum / S(m);
            for (Index n = 0; n < s.n; ++n) {
              typename Tensor<S>::ConstArrayMap gr(
                  g.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              typename Tensor<S>::ConstArrayMap in(
                  xv.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              typename Tensor<S>::ArrayMap d(
                  dx.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              d += (gam * inv) * (gr - gmean - (in - mu) * inv * gxmean);
            }
          } else {
            for (Index n = 0; n < s.n; ++n) {
              typename Tensor<S>::ConstArrayMap gr(
                  g.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              typename Tensor<S>::ArrayMap d(
                  dx.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              d += (gam * inv) * gr;
            }
          }
        }
      });
}

/**
 * Group normalization: per-sample standardization over (C/G, H, W) for each
 * of the G groups, then the per-channel affine. Layer norm is G=1, instance
 * norm is G=C. Uses sample statistics in both modes.
 */
template <typename S>
int group_norm(Tape<S>& t, int x, int gamma, int beta, Index groups,
               S eps = S(1e-5)) {
  const Tensor<S>& xv = t.value(x);
  const Shape4 s = Shape4::of(xv);
  if (groups < 1 || s.c % groups != 0)
    fail("group_norm: channel count " + std::to_string(s.c) +
         " not divisible by groups " + std::to_string(groups));
  if (t.value(gamma).size() != s.c || t.value(beta).size() != s.c)
    fail("group_norm: affine parameter length != channel count");
  const Index cg = s.c / groups;
  const Index m = cg * s.h * s.w;

  ++activation_stat_ops;
  auto mean = std::make_shared<Tensor<S>>(Shape{s.n, groups});
  auto var = std::make_shared<Tensor<S>>(Shape{s.n, groups});
  Tensor<S> out(xv.shape());
  for (Index n = 0; n < s.n; ++n)
    for (Index gidx = 0; gidx < groups; ++gidx) {
      typename Tensor<S>::ConstArrayMap in(
          xv.data() + (n * s.c + gidx * cg) * s.h * s.w, m);
      const S mu = in.mean();
      const S v = (in - mu).square().sum() / S(m);
      (*mean)(n, gidx) = mu;
      (*var)(n, gidx) = v;
      const S inv = S(1) / std::sqrt(v + eps);
      for (Index c = gidx * cg; c < (gidx + 1) * cg; ++c) {
        typename Tensor<S>::ConstArrayMap xi(
            xv.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
        typename Tensor<S>::ArrayMap o(out.data() + (n * s.c + c) * s.h * s.w,
                                       s.h * s.w);
        o = (xi - mu) * inv * t.value(gamma)[c] + t.value(beta)[c];
      }
    }

  return t.push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, var, groups, eps](const Tape<S>& t,
                                               const Tensor<S>& g,
                                               GradientMap<S>& gm) {
        const Tensor<S>& xv = t.value(x);
        const Shape4 s = Shape4::of(xv);
        const Index cg = s.c / groups;
        const Index m = cg * s.h * s.w;
        Tensor<S>& dx = gm.slot(x, xv.shape());
        Tensor<S>& dgamma = gm.slot(gamma, t.shape(gamma));
        Tensor<S>& dbeta = gm.slot(beta, t.shape(beta));
        for (Index n = 0; n < s.n; ++n)
          for (Index gidx = 0; gidx < groups; ++gidx) {
            const S mu = (*mean)(n, gidx);
            const S inv = S(1) / std::sqrt((*var)(n, gidx) + eps);
            // dh = g * gamma (per channel); dx via the standardization rule.
            S hsum = 0, hxsum = 0;
            for (Index c = gidx * cg; c < (gidx + 1) * cg; ++c) {
              typename Tensor<S>::ConstArrayMap gr(
                  g.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              typename Tensor<S>::ConstArrayMap xi(
                  xv.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              const S gam = t.value(gamma)[c];
              dbeta[c] += gr.sum();
              dgamma[c] += (gr * (xi - mu) * inv).sum();
              hsum += gam * gr.sum();
              hxsum += gam * (gr * (xi - mu) * inv).sum();
            }
            const S hmean = hsum / S(m);
            const S hxmean = hxsum / S(m);
            for (Index c = gidx * cg; c < (gidx + 1) * cg; ++c) {
              typename Tensor<S>::ConstArrayMap gr(
                  g.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              typename Tensor<S>::ConstArrayMap xi(
                  xv.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              typename Tensor<S>::ArrayMap d(
                  dx.data() + (n * s.c + c) * s.h * s.w, s.h * s.w);
              const S gam = t.value(gamma)[c];
              d += inv * (gam * gr - hmean - (xi - mu) * inv * hxmean);
            }
          }
      });
}

}  // namespace wa
