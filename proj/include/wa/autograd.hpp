// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file autograd.hpp
 * @brief Reverse-mode automatic differentiation over a per-pass tape.
 *
 * A forward pass records one Node per operation; node ids are indices into
 * the tape, so recording order is already topological. backward() walks the
 * tape in reverse and accumulates gradients by sum over fan-out. The tape is
 * rebuilt every forward pass, which keeps weight re-parameterization inside
 * the differentiated graph.
 */

#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "wa/tensor.hpp"

namespace wa {

template <typename S>
class GradientMap {
 public:
  explicit GradientMap(size_t nodes) : grads_(nodes), has_(nodes, 0) {}

  /// Gradient of a node, or nullptr when the node is not on the loss path.
  const Tensor<S>* find(int id) const {
    return has_[id] ? &grads_[id] : nullptr;
  }

  const Tensor<S>& at(int id) const {
    if (!has_[id]) fail("no gradient recorded for node " + std::to_string(id));
    return grads_[id];
  }

  /// Accumulation slot, zero-initialized on first touch.
  Tensor<S>& slot(int id, const Shape& shape) {
    if (!has_[id]) {
      grads_[id] = Tensor<S>(shape);
      has_[id] = 1;
    }
    return grads_[id];
  }

  bool contains(int id) const { return has_[id] != 0; }

 private:
  std::vector<Tensor<S>> grads_;
  std::vector<char> has_;
};

template <typename S>
class Tape {
 public:
  /// Receives the upstream gradient and accumulates into the parents' slots.
  using Backward =
      std::function<void(const Tape&, const Tensor<S>&, GradientMap<S>&)>;

  struct Node {
    Tensor<S> value;
    std::vector<int> parents;
    Backward backward;  // empty for leaves
  };

  int leaf(Tensor<S> value) {
    nodes_.push_back({std::move(value), {}, nullptr});
    return int(nodes_.size()) - 1;
  }

  int push(Tensor<S> value, std::vector<int> parents, Backward fn) {
    nodes_.push_back({std::move(value), std::move(parents), std::move(fn)});
    return int(nodes_.size()) - 1;
  }

  const Tensor<S>& value(int id) const { return nodes_.at(id).value; }
  const Shape& shape(int id) const { return nodes_.at(id).value.shape(); }
  int size() const { return int(nodes_.size()); }

  void clear() { nodes_.clear(); }

  /// Reverse sweep from a scalar loss node.
  GradientMap<S> backward(int loss) const {
    if (loss < 0 || loss >= size()) fail("backward: unknown node id");
    if (nodes_[loss].value.size() != 1)
      fail("backward seed must be scalar, got shape " +
           shape_str(nodes_[loss].value.shape()));
    GradientMap<S> grads(nodes_.size());
    grads.slot(loss, nodes_[loss].value.shape()).array() = S(1);
    for (int id = loss; id >= 0; --id) {
      if (!grads.contains(id) || !nodes_[id].backward) continue;
      nodes_[id].backward(*this, grads.at(id), grads);
    }
    return grads;
  }

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Graph operations. Each returns the id of the node it records.
// ---------------------------------------------------------------------------

template <typename S>
int add(Tape<S>& t, int a, int b) {
  Tensor<S> out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b},
                [a, b](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
                  gm.slot(a, t.shape(a)).array() += g.array();
                  gm.slot(b, t.shape(b)).array() += g.array();
                });
}

template <typename S>
int mul(Tape<S>& t, int a, int b) {
  Tensor<S> out = t.value(a);
  out.array() *= t.value(b).array();
  return t.push(std::move(out), {a, b},
                [a, b](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
                  gm.slot(a, t.shape(a)).array() +=
                      g.array() * t.value(b).array();
                  gm.slot(b, t.shape(b)).array() +=
                      g.array() * t.value(a).array();
                });
}

template <typename S>
int scale(Tape<S>& t, int a, S c) {
  Tensor<S> out = t.value(a) * c;
  return t.push(std::move(out), {a},
                [a, c](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
                  gm.slot(a, t.shape(a)).array() += c * g.array();
                });
}

template <typename S>
int sum(Tape<S>& t, int a) {
  Tensor<S> out = Tensor<S>::scalar(t.value(a).array().sum());
  return t.push(std::move(out), {a},
                [a](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
                  gm.slot(a, t.shape(a)).array() += g[0];
                });
}

/// ReLU with subgradient 0 at the kink.
template <typename S>
int relu(Tape<S>& t, int a) {
  Tensor<S> out = t.value(a);
  out.array() = out.array().max(S(0));
  return t.push(std::move(out), {a},
                [a](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
                  auto x = t.value(a).array();
                  gm.slot(a, t.shape(a)).array() +=
                      (x > S(0)).select(g.array(), S(0));
                });
}

template <typename S>
int reshape(Tape<S>& t, int a, Shape shape) {
  Tensor<S> out = t.value(a).reshaped(std::move(shape));
  return t.push(std::move(out), {a},
                [a](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
                  gm.slot(a, t.shape(a)).array() += g.array();
                });
}

template <typename S>
int matmul(Tape<S>& t, int a, int b) {
  Tensor<S> out = matmul(t.value(a), t.value(b));
  return t.push(
      std::move(out), {a, b},
      [a, b](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
        const Tensor<S>& av = t.value(a);
        const Tensor<S>& bv = t.value(b);
        const Index m = av.extent(0), k = av.extent(1), n = bv.extent(1);
        gm.slot(a, av.shape()).mat(m, k).noalias() +=
            g.mat(m, n) * bv.mat(k, n).transpose();
        gm.slot(b, bv.shape()).mat(k, n).noalias() +=
            av.mat(m, k).transpose() * g.mat(m, n);
      });
}

/// x:[N,F] row-major, w:[U,F]; out = x w^T (+ bias per unit).
template <typename S>
int dense(Tape<S>& t, int x, int w, int bias = -1) {
  const Tensor<S>& xv = t.value(x);
  const Tensor<S>& wv = t.value(w);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.extent(1) != wv.extent(1))
    fail("dense: x " + shape_str(xv.shape()) + " incompatible with weights " +
         shape_str(wv.shape()));
  const Index n = xv.extent(0), f = xv.extent(1), u = wv.extent(0);
  Tensor<S> out({n, u});
  out.mat(n, u).noalias() = xv.mat(n, f) * wv.mat(u, f).transpose();
  if (bias >= 0) out.mat(n, u).rowwise() += t.value(bias).mat(1, u).row(0);
  std::vector<int> parents = bias >= 0 ? std::vector<int>{x, w, bias}
                                       : std::vector<int>{x, w};
  return t.push(
      std::move(out), std::move(parents),
      [x, w, bias, n, f, u](const Tape<S>& t, const Tensor<S>& g,
                            GradientMap<S>& gm) {
        gm.slot(x, t.shape(x)).mat(n, f).noalias() +=
            g.mat(n, u) * t.value(w).mat(u, f);
        gm.slot(w, t.shape(w)).mat(u, f).noalias() +=
            g.mat(n, u).transpose() * t.value(x).mat(n, f);
        if (bias >= 0)
          gm.slot(bias, t.shape(bias)).mat(1, u).row(0) +=
              g.mat(n, u).colwise().sum();
      });
}

/// Convolution node; patches are re-extracted in the backward sweep.
template <typename S>
int conv2d(Tape<S>& t, int x, int w, int bias, Index stride, Index pad) {
  std::optional<Tensor<S>> b;
  if (bias >= 0) b = t.value(bias);
  Tensor<S> out = conv2d_forward(t.value(x), t.value(w), b, stride, pad);
  std::vector<int> parents = bias >= 0 ? std::vector<int>{x, w, bias}
                                       : std::vector<int>{x, w};
  return t.push(
      std::move(out), std::move(parents),
      [x, w, bias, stride, pad](const Tape<S>& t, const Tensor<S>& g,
                                GradientMap<S>& gm) {
        const Tensor<S>& xv = t.value(x);
        const Tensor<S>& wv = t.value(w);
        const Shape4 s = Shape4::of(xv);
        const Index cout = wv.extent(0), k = wv.extent(2);
        const Index patch = s.c * k * k;
        const Index l = g.extent(2) * g.extent(3);
        Tensor<S>& dx = gm.slot(x, xv.shape());
        Tensor<S>& dw = gm.slot(w, wv.shape());
        auto wmat = wv.mat(cout, patch);
        auto dwmat = dw.mat(cout, patch);
        Tensor<S> cols({patch, l}), dcols({patch, l});
        for (Index n = 0; n < s.n; ++n) {
          im2col(xv, n, k, stride, pad, cols.mat(patch, l));
          Eigen::Map<const typename Tensor<S>::MatrixRM> gn(
              g.data() + n * cout * l, cout, l);
          dwmat.noalias() += gn * cols.mat(patch, l).transpose();
          dcols.mat(patch, l).noalias() = wmat.transpose() * gn;
          col2im<S>(typename Tensor<S>::ConstMatMap(dcols.data(), patch, l), n,
                    k, stride, pad, dx);
        }
        if (bias >= 0) {
          Tensor<S>& db = gm.slot(bias, t.shape(bias));
          for (Index n = 0; n < s.n; ++n)
            for (Index f = 0; f < cout; ++f)
              db[f] += Eigen::Map<const typename Tensor<S>::Storage>(
                           g.data() + (n * cout + f) * l, l)
                           .sum();
        }
      });
}

/// Non-overlapping max pooling (window = stride = pool).
template <typename S>
int maxpool2d(Tape<S>& t, int x, Index pool) {
  const Tensor<S>& xv = t.value(x);
  const Shape4 s = Shape4::of(xv);
  const Index ho = conv_out_extent(s.h, pool, pool, 0);
  const Index wo = conv_out_extent(s.w, pool, pool, 0);
  Tensor<S> out({s.n, s.c, ho, wo});
  auto argmax = std::make_shared<std::vector<Index>>(out.size());
  Index o = 0;
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index oh = 0; oh < ho; ++oh)
        for (Index ow = 0; ow < wo; ++ow, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          Index best_at = 0;
          for (Index ph = 0; ph < pool; ++ph)
            for (Index pw = 0; pw < pool; ++pw) {
              const Index ih = oh * pool + ph, iw = ow * pool + pw;
              const Index flat = ((n * s.c + c) * s.h + ih) * s.w + iw;
              if (xv[flat] > best) {
                best = xv[flat];
                best_at = flat;
              }
            }
          out[o] = best;
          (*argmax)[o] = best_at;
        }
  return t.push(std::move(out), {x},
                [x, argmax](const Tape<S>& t, const Tensor<S>& g,
                            GradientMap<S>& gm) {
                  Tensor<S>& dx = gm.slot(x, t.shape(x));
                  for (Index i = 0; i < g.size(); ++i) dx[(*argmax)[i]] += g[i];
                });
}

/// Non-overlapping average pooling (window = stride = pool).
template <typename S>
int avgpool2d(Tape<S>& t, int x, Index pool) {
  const Tensor<S>& xv = t.value(x);
  const Shape4 s = Shape4::of(xv);
  const Index ho = conv_out_extent(s.h, pool, pool, 0);
  const Index wo = conv_out_extent(s.w, pool, pool, 0);
  Tensor<S> out({s.n, s.c, ho, wo});
  const S inv = S(1) / S(pool * pool);
  Index o = 0;
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index oh = 0; oh < ho; ++oh)
        for (Index ow = 0; ow < wo; ++ow, ++o) {
          S acc = 0;
          for (Index ph = 0; ph < pool; ++ph)
            for (Index pw = 0; pw < pool; ++pw)
              acc += xv(n, c, oh * pool + ph, ow * pool + pw);
          out[o] = acc * inv;
        }
  return t.push(
      std::move(out), {x},
      [x, pool, inv](const Tape<S>& t, const Tensor<S>& g, GradientMap<S>& gm) {
        Tensor<S>& dx = gm.slot(x, t.shape(x));
        const Shape4 s = Shape4::of(t.value(x));
        const Index ho = s.h / pool, wo = s.w / pool;
        Index o = 0;
        for (Index n = 0; n < s.n; ++n)
          for (Index c = 0; c < s.c; ++c)
            for (Index oh = 0; oh < ho; ++oh)
              for (Index ow = 0; ow < wo; ++ow, ++o) {
                const S v = g[o] * inv;
                for (Index ph = 0; ph < pool; ++ph)
                  for (Index pw = 0; pw < pool; ++pw)
                    dx(n, c, oh * pool + ph, ow * pool + pw) += v;
              }
      });
}

/**
 * Mean softmax cross-entropy over the batch, log-sum-exp stabilized.
 * labels[i] must lie in [0, K).
 */
template <typename S>
int cross_entropy(Tape<S>& t, int logits, std::vector<int> labels) {
  const Tensor<S>& lv = t.value(logits);
  if (lv.rank() != 2) fail("cross_entropy expects [N,K] logits");
  const Index n = lv.extent(0), k = lv.extent(1);
  if (Index(labels.size()) != n)
    fail("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
         std::to_string(n));
  for (int y : labels)
    if (y < 0 || y >= k) fail("cross_entropy: label " + std::to_string(y) +
                              " out of range [0," + std::to_string(k) + ")");
  S loss = 0;
  for (Index i = 0; i < n; ++i) {
    auto row = lv.mat(n, k).row(i);
    const S m = row.maxCoeff();
    const S lse = m + std::log((row.array() - m).exp().sum());
    loss += lse - row[labels[i]];
  }
  loss /= S(n);
  auto labels_ptr = std::make_shared<std::vector<int>>(std::move(labels));
  return t.push(
      Tensor<S>::scalar(loss), {logits},
      [logits, labels_ptr, n, k](const Tape<S>& t, const Tensor<S>& g,
                                 GradientMap<S>& gm) {
        const S scale = g[0] / S(n);
        auto lmat = t.value(logits).mat(n, k);
        auto dmat = gm.slot(logits, t.shape(logits)).mat(n, k);
        for (Index i = 0; i < n; ++i) {
          const S m = lmat.row(i).maxCoeff();
          Eigen::Array<S, Eigen::Dynamic, 1> p =
              (lmat.row(i).transpose().array() - m).exp();
          p /= p.sum();
          dmat.row(i) += (p * scale).matrix().transpose();
          dmat(i, (*labels_ptr)[i]) -= scale;
        }
      });
}

/**
 * Max relative error between the analytic gradient of a recorded scalar
 * function and central finite differences at x.
 *
 * @param build  records the graph: (tape, input node id) -> scalar loss id.
 */
template <typename S, typename Build>
S finite_diff_check(Build&& build, const Tensor<S>& x, S h) {
  Tape<S> tape;
  const int xid = tape.leaf(x);
  const int loss = build(tape, xid);
  if (tape.value(loss).size() != 1) fail("finite_diff_check: loss must be scalar");
  if (!tape.value(loss).all_finite())
    fail("finite_diff_check: non-finite evaluation at base point");
  GradientMap<S> grads = tape.backward(loss);
  const Tensor<S>* gp = grads.find(xid);
  Tensor<S> analytic = gp ? *gp : Tensor<S>(x.shape());

  auto eval = [&](const Tensor<S>& p) {
    Tape<S> t2;
    const int id = t2.leaf(p);
    const S v = t2.value(build(t2, id)).value();
    if (!std::isfinite(double(v))) fail("finite_diff_check: non-finite evaluation");
    return v;
  };

  S worst = 0;
  Tensor<S> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const S orig = probe[i];
    probe[i] = orig + h;
    const S up = eval(probe);
    probe[i] = orig - h;
    const S down = eval(probe);
    probe[i] = orig;
    const S numeric = (up - down) / (2 * h);
    const S denom = std::max({std::abs(analytic[i]), std::abs(numeric), S(1e-8)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace wa
