// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file statlab.hpp
 * @brief Monte-Carlo verification of the activation-statistics identities
 *        and collection of activation/weight distributions from networks.
 *
 * The identities checked, with x = sum_{i<n} w_i * Y_i over independent
 * draws:
 *  - mean:      E[x]   = n E[w] E[Y]
 *  - variance:  Var[x] = n Var[w] E[Y^2]        (requires E[w] = 0)
 *  - relu:      E[relu(Z)^2] = Var[Z] / 2       (Z symmetric about 0)
 *  - symmetry:  X*Y is symmetric about 0 when Y is (skewness primary,
 *               sign-flipped two-sample KS secondary)
 *
 * Estimates pass when |estimate - target| <= 3*stderr + 1e-3; the symmetry
 * check passes when |skewness| <= 0.05 at 1e6 samples.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "wa/layers.hpp"
#include "wa/rng.hpp"

namespace wa {

// ---------------------------------------------------------------------------
// Scalar distributions
// ---------------------------------------------------------------------------

struct Dist {
  enum class Kind { Normal, Uniform, Exponential, PointMass };
  Kind kind = Kind::Normal;
  double a = 0;  // Normal: mean; Uniform: lo; Exponential: rate; PointMass: value
  double b = 1;  // Normal: variance; Uniform: hi

  static Dist normal(double mean, double variance) {
    return {Kind::Normal, mean, variance};
  }
  static Dist uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
  static Dist exponential(double rate) { return {Kind::Exponential, rate, 0}; }
  static Dist point(double v) { return {Kind::PointMass, v, 0}; }

  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::Normal:
        return rng.normal(a, std::sqrt(b));
      case Kind::Uniform:
        return rng.uniform(a, b);
      case Kind::Exponential:
        return rng.exponential(a);
      case Kind::PointMass:
        return a;
    }
    return 0;
  }

  double mean() const {
    switch (kind) {
      case Kind::Normal:
        return a;
      case Kind::Uniform:
        return (a + b) / 2;
      case Kind::Exponential:
        return 1 / a;
      case Kind::PointMass:
        return a;
    }
    return 0;
  }

  double var() const {
    switch (kind) {
      case Kind::Normal:
        return b;
      case Kind::Uniform:
        return (b - a) * (b - a) / 12;
      case Kind::Exponential:
        return 1 / (a * a);
      case Kind::PointMass:
        return 0;
    }
    return 0;
  }

  double second_moment() const { return var() + mean() * mean(); }

  std::string str() const {
    char buf[64];
    switch (kind) {
      case Kind::Normal:
        std::snprintf(buf, sizeof buf, "Normal(%g,%g)", a, b);
        break;
      case Kind::Uniform:
        std::snprintf(buf, sizeof buf, "Uniform(%g,%g)", a, b);
        break;
      case Kind::Exponential:
        std::snprintf(buf, sizeof buf, "Exponential(%g)", a);
        break;
      case Kind::PointMass:
        std::snprintf(buf, sizeof buf, "PointMass(%g)", a);
        break;
    }
    return buf;
  }
};

// ---------------------------------------------------------------------------
// Monte-Carlo results
// ---------------------------------------------------------------------------

struct McResult {
  std::string name;
  double estimate = 0;
  double target = 0;
  double stderr_ = 0;
  double secondary = 0;  // symmetry check: flipped two-sample KS distance
  long samples = 0;
  bool pass = false;
  bool control = false;  // negative controls are excluded from gating

  double tolerance() const { return 3 * stderr_ + 1e-3; }
};

inline void to_json(nlohmann::json& j, const McResult& r) {
  j = nlohmann::json{{"name", r.name},       {"estimate", r.estimate},
                     {"target", r.target},   {"stderr", r.stderr_},
                     {"secondary", r.secondary}, {"samples", r.samples},
                     {"pass", r.pass},       {"control", r.control}};
}
inline void from_json(const nlohmann::json& j, McResult& r) {
  r.name = j.at("name");
  r.estimate = j.at("estimate");
  r.target = j.at("target");
  r.stderr_ = j.at("stderr");
  r.secondary = j.at("secondary");
  r.samples = j.at("samples");
  r.pass = j.at("pass");
  r.control = j.at("control");
}

namespace detail {
/// Running mean / central moments up to order 4.
struct Moments {
  long n = 0;
  double mean = 0, m2 = 0, m3 = 0, m4 = 0;

  void add(double x) {
    // Welford-style one-pass update.
    const double n1 = double(n);
    ++n;
    const double delta = x - mean;
    const double dn = delta / double(n);
    const double dn2 = dn * dn;
    const double t = delta * dn * n1;
    mean += dn;
    m4 += t * dn2 * (double(n) * double(n) - 3.0 * double(n) + 3.0) +
          6.0 * dn2 * m2 - 4.0 * dn * m3;
    m3 += t * dn * (double(n) - 2.0) - 3.0 * dn * m2;
    m2 += t;
  }
  double var() const { return m2 / double(n); }
  double central4() const { return m4 / double(n); }
  double skewness() const {
    const double v = var();
    return v > 0 ? (m3 / double(n)) / std::pow(v, 1.5) : 0.0;
  }
};
}  // namespace detail

/// E[x] for x = sum of n independent w*Y products vs n E[w] E[Y].
inline McResult verify_mean_identity(const Dist& dw, const Dist& dy, int n,
                                     long samples, uint64_t seed = 1) {
  Rng rng(seed, 0x3e4u);
  detail::Moments mom;
  for (long s = 0; s < samples; ++s) {
    double x = 0;
    for (int i = 0; i < n; ++i) x += dw.sample(rng) * dy.sample(rng);
    mom.add(x);
  }
  McResult r;
  r.name = "mean[w=" + dw.str() + ",Y=" + dy.str() + ",n=" + std::to_string(n) + "]";
  r.estimate = mom.mean;
  r.target = double(n) * dw.mean() * dy.mean();
  r.stderr_ = std::sqrt(std::max(mom.var(), 1e-300) / double(samples));
  r.samples = samples;
  r.pass = std::abs(r.estimate - r.target) <= r.tolerance();
  return r;
}

/// Var[x] vs n Var[w] E[Y^2]; the weight sampler must be zero-mean.
inline McResult verify_variance_identity(const Dist& dw, const Dist& dy, int n,
                                         long samples, uint64_t seed = 1) {
  if (dw.mean() != 0.0)
    fail("verify_variance_identity requires a zero-mean weight distribution, got " +
         dw.str());
  Rng rng(seed, 0x7a1u);
  detail::Moments mom;
  for (long s = 0; s < samples; ++s) {
    double x = 0;
    for (int i = 0; i < n; ++i) x += dw.sample(rng) * dy.sample(rng);
    mom.add(x);
  }
  McResult r;
  r.name = "var[w=" + dw.str() + ",Y=" + dy.str() + ",n=" + std::to_string(n) + "]";
  r.estimate = mom.var();
  r.target = double(n) * dw.var() * dy.second_moment();
  // stderr of the sample variance from the fourth central moment.
  const double v = mom.var();
  r.stderr_ = std::sqrt(std::max(mom.central4() - v * v, 1e-300) / double(samples));
  r.samples = samples;
  r.pass = std::abs(r.estimate - r.target) <= r.tolerance();
  return r;
}

/// E[relu(Z)^2] vs Var[Z]/2 for Z symmetric about zero.
inline McResult verify_relu_halving(const Dist& dz, long samples,
                                    uint64_t seed = 1) {
  Rng rng(seed, 0x52cu);
  detail::Moments mom;
  for (long s = 0; s < samples; ++s) {
    const double z = dz.sample(rng);
    const double r = z > 0 ? z : 0;
    mom.add(r * r);
  }
  McResult r;
  r.name = "relu_halving[Z=" + dz.str() + "]";
  r.estimate = mom.mean;
  r.target = dz.var() / 2;
  r.stderr_ = std::sqrt(std::max(mom.var(), 1e-300) / double(samples));
  r.samples = samples;
  r.pass = std::abs(r.estimate - r.target) <= r.tolerance();
  return r;
}

/**
 * Symmetry of Z = X*Y about zero. Primary statistic: empirical skewness,
 * passing within +-0.05. Secondary: two-sample KS distance between {z} and
 * {-z}, reported in `secondary`.
 */
inline McResult verify_product_symmetry(const Dist& dx, const Dist& dy,
                                        long samples, uint64_t seed = 1) {
  Rng rng(seed, 0x95fu);
  detail::Moments mom;
  std::vector<double> z(static_cast<size_t>(samples));
  for (long s = 0; s < samples; ++s) {
    z[size_t(s)] = dx.sample(rng) * dy.sample(rng);
    mom.add(z[size_t(s)]);
  }
  McResult r;
  r.name = "symmetry[X=" + dx.str() + ",Y=" + dy.str() + "]";
  r.estimate = mom.skewness();
  r.target = 0;
  r.stderr_ = std::sqrt(6.0 / double(samples));
  r.samples = samples;
  r.pass = std::abs(r.estimate) <= 0.05;

  // Sign-flipped two-sample KS: D = sup |F_z(t) - F_{-z}(t)|.
  std::vector<double> flipped(z.size());
  for (size_t i = 0; i < z.size(); ++i) flipped[i] = -z[i];
  std::sort(z.begin(), z.end());
  std::sort(flipped.begin(), flipped.end());
  double d = 0;
  size_t i = 0, j = 0;
  while (i < z.size() && j < flipped.size()) {
    if (z[i] <= flipped[j])
      ++i;
    else
      ++j;
    d = std::max(d, std::abs(double(i) - double(j)) / double(samples));
  }
  r.secondary = d;
  return r;
}

/// The default identity suite (every distribution family from the module
/// contract), with the asymmetric negative control last.
inline std::vector<McResult> default_verify_suite(long samples,
                                                  uint64_t seed = 1) {
  std::vector<McResult> out;
  out.push_back(verify_mean_identity(Dist::normal(0, 1), Dist::normal(2, 1), 10,
                                     samples, seed));
  out.push_back(verify_mean_identity(Dist::normal(0.5, 1), Dist::normal(2, 1),
                                     100, samples, seed + 1));
  out.push_back(verify_mean_identity(Dist::point(1), Dist::normal(3, 1), 1,
                                     samples, seed + 2));
  out.push_back(verify_variance_identity(Dist::normal(0, 1), Dist::point(1), 10,
                                         samples, seed + 3));
  out.push_back(verify_variance_identity(Dist::normal(0, 2.0 / 50),
                                         Dist::normal(0, 1), 50, samples,
                                         seed + 4));
  out.push_back(verify_variance_identity(Dist::normal(0, 1), Dist::point(0), 10,
                                         samples, seed + 5));
  out.push_back(verify_relu_halving(Dist::normal(0, 4), samples, seed + 6));
  out.push_back(verify_relu_halving(Dist::uniform(-1, 1), samples, seed + 7));
  out.push_back(verify_relu_halving(Dist::point(0), samples, seed + 8));
  out.push_back(verify_product_symmetry(Dist::uniform(0, 1), Dist::normal(0, 1),
                                        samples, seed + 9));
  out.push_back(verify_product_symmetry(Dist::exponential(1), Dist::normal(0, 1),
                                        samples, seed + 10));
  McResult control = verify_product_symmetry(Dist::exponential(1),
                                             Dist::exponential(1), samples,
                                             seed + 11);
  control.name += " (negative control)";
  control.control = true;
  out.push_back(control);
  return out;
}

// ---------------------------------------------------------------------------
// Histograms and reports
// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> edges;  // bins+1 monotone edges
  std::vector<long> counts;   // sums to the sample count

  bool operator==(const Histogram&) const = default;
};

/// 64 uniform bins over [mean - 4*std, mean + 4*std]; out-of-range values
/// land in the edge bins so counts always sum to the sample count. A
/// zero-variance sample degenerates to a unit-width window at the mean.
inline Histogram make_histogram(const std::vector<double>& values,
                                int bins = 64) {
  Histogram h;
  if (values.empty()) fail("histogram of empty sample");
  // Sorted accumulation keeps the window bit-identical under permutation.
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  double mean = 0;
  for (double v : sorted) mean += v;
  mean /= double(sorted.size());
  std::vector<double> sq(sorted.size());
  for (size_t i = 0; i < sorted.size(); ++i)
    sq[i] = (sorted[i] - mean) * (sorted[i] - mean);
  std::sort(sq.begin(), sq.end());
  double var = 0;
  for (double v : sq) var += v;
  var /= double(sorted.size());
  const double sd = std::sqrt(var);
  const double half = sd > 0 ? 4 * sd : 0.5;
  const double lo = mean - half, hi = mean + half;
  h.edges.resize(size_t(bins) + 1);
  for (int i = 0; i <= bins; ++i)
    h.edges[size_t(i)] = lo + (hi - lo) * double(i) / double(bins);
  h.counts.assign(size_t(bins), 0);
  for (double v : values) {
    int b = int(std::floor((v - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[size_t(b)];
  }
  return h;
}

struct ChannelStats {
  int layer = 0;
  int channel = 0;
  int epoch = 0;
  double mean = 0;
  double var = 0;
  Histogram hist;

  bool operator==(const ChannelStats&) const = default;
};

struct StatsReport {
  std::vector<ChannelStats> channels;
  double argmax_constancy = 0;  // max class frequency of argmax(logits)
  long samples = 0;
  nlohmann::json meta;

  bool operator==(const StatsReport& o) const {
    return channels == o.channels && argmax_constancy == o.argmax_constancy &&
           samples == o.samples && meta == o.meta;
  }
};

inline void to_json(nlohmann::json& j, const Histogram& h) {
  j = nlohmann::json{{"edges", h.edges}, {"counts", h.counts}};
}
inline void from_json(const nlohmann::json& j, Histogram& h) {
  h.edges = j.at("edges").get<std::vector<double>>();
  h.counts = j.at("counts").get<std::vector<long>>();
}
inline void to_json(nlohmann::json& j, const ChannelStats& c) {
  j = nlohmann::json{{"layer", c.layer}, {"channel", c.channel},
                     {"epoch", c.epoch}, {"mean", c.mean},
                     {"var", c.var},     {"histogram", c.hist}};
}
inline void from_json(const nlohmann::json& j, ChannelStats& c) {
  c.layer = j.at("layer");
  c.channel = j.at("channel");
  c.epoch = j.at("epoch");
  c.mean = j.at("mean");
  c.var = j.at("var");
  c.hist = j.at("histogram").get<Histogram>();
}
inline void to_json(nlohmann::json& j, const StatsReport& r) {
  j = nlohmann::json{{"channels", r.channels},
                     {"argmax_constancy", r.argmax_constancy},
                     {"samples", r.samples},
                     {"meta", r.meta}};
}
inline void from_json(const nlohmann::json& j, StatsReport& r) {
  r.channels = j.at("channels").get<std::vector<ChannelStats>>();
  r.argmax_constancy = j.at("argmax_constancy");
  r.samples = j.at("samples");
  r.meta = j.at("meta");
}

/// CSV rows: layer,channel,epoch,mean,var,bin_lo,bin_hi,count (one per bin).
inline std::string stats_report_csv(const StatsReport& r) {
  std::string out = "layer,channel,epoch,mean,var,bin_lo,bin_hi,count\n";
  char buf[256];
  for (const ChannelStats& c : r.channels)
    for (size_t b = 0; b + 1 < c.hist.edges.size(); ++b) {
      std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%ld\n",
                    c.layer, c.channel, c.epoch, c.mean, c.var, c.hist.edges[b],
                    c.hist.edges[b + 1], c.hist.counts[b]);
      out += buf;
    }
  return out;
}

namespace detail {
/// Order-independent mean/var: values are sorted before summation so the
/// result is bit-identical under any permutation of the batch.
inline std::pair<double, double> sorted_mean_var(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  const double mean = sum / double(values.size());
  std::vector<double> sq(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    sq[i] = (values[i] - mean) * (values[i] - mean);
  std::sort(sq.begin(), sq.end());
  double vsum = 0;
  for (double v : sq) vsum += v;
  return {mean, vsum / double(values.size())};
}
}  // namespace detail

/**
 * Per-channel statistics of selected layers' pre-normalization outputs for
 * one input batch, plus the classifier argmax-constancy fraction.
 *
 * @param layer_selectors   indices into spec().layers of layers that expose a
 *                          pre-normalization tap (conv / dense / classifier).
 * @param channel_selectors channels to record per selected layer.
 */
template <typename S>
StatsReport collect_channel_stats(Network<S>& net, const Tensor<S>& input,
                                  const std::vector<int>& layer_selectors,
                                  const std::vector<int>& channel_selectors,
                                  Mode mode = Mode::Train, int epoch = 0) {
  Tape<S> tape;
  Forward fw = net.forward(tape, input, mode);
  StatsReport report;
  report.samples = input.extent(0);

  for (int li : layer_selectors) {
    if (li < 0 || li >= int(fw.taps.size()) || fw.taps[li] < 0)
      fail("layer selector " + std::to_string(li) +
           " does not name a layer with recorded activations");
    const Tensor<S>& act = tape.value(fw.taps[li]);
    const Index channels = act.extent(1);
    const Index n = act.extent(0);
    const Index per = act.rank() == 4 ? act.extent(2) * act.extent(3) : 1;
    for (int c : channel_selectors) {
      if (c < 0 || Index(c) >= channels)
        fail("channel selector " + std::to_string(c) + " out of range for layer " +
             std::to_string(li));
      std::vector<double> values;
      values.reserve(size_t(n * per));
      for (Index b = 0; b < n; ++b)
        for (Index p = 0; p < per; ++p)
          values.push_back(double(act[(b * channels + Index(c)) * per + p]));
      auto [mean, var] = detail::sorted_mean_var(values);
      ChannelStats cs;
      cs.layer = li;
      cs.channel = c;
      cs.epoch = epoch;
      cs.mean = mean;
      cs.var = var;
      cs.hist = make_histogram(values);
      report.channels.push_back(std::move(cs));
    }
  }

  // Argmax-constancy of the classifier output.
  const Tensor<S>& logits = tape.value(fw.logits);
  const Index n = logits.extent(0), k = logits.extent(1);
  std::vector<long> votes(size_t(k), 0);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < k; ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    ++votes[size_t(best)];
  }
  report.argmax_constancy =
      double(*std::max_element(votes.begin(), votes.end())) / double(n);
  return report;
}

/**
 * Histogram of a layer's effective (post-reparameterization) weights, for
 * one output filter or the whole bank (channel = -1).
 */
template <typename S>
StatsReport snapshot_weight_distribution(Network<S>& net, int layer,
                                         int channel = -1, int epoch = 0) {
  if (layer < 0 || layer >= int(net.spec().layers.size()))
    fail("snapshot: layer " + std::to_string(layer) + " out of range");
  const LayerSpec& l = net.spec().layers[size_t(layer)];
  if (l.kind != LayerKind::Conv && l.kind != LayerKind::Dense &&
      l.kind != LayerKind::Classifier)
    fail("snapshot: layer " + std::to_string(layer) + " has no weight bank");

  const std::string prefix = "layer" + std::to_string(layer);
  const Tensor<S>* weights = nullptr;
  const Tensor<S>* re_gamma = nullptr;
  for (const Param<S>& p : net.params()) {
    if (p.name == prefix + ".weights") weights = &p.value;
    if (p.name == prefix + ".wa_gamma" || p.name == prefix + ".wn_g")
      re_gamma = &p.value;
  }
  if (!weights) fail("snapshot: no weights found for layer " + std::to_string(layer));

  const Index filters = weights->extent(0);
  const Index n = weights->size() / filters;
  if (channel >= 0 && Index(channel) >= filters)
    fail("snapshot: channel " + std::to_string(channel) + " out of range");

  std::vector<double> values;
  for (Index f = (channel < 0 ? 0 : channel);
       f <= (channel < 0 ? filters - 1 : channel); ++f) {
    std::vector<S> row(weights->data() + f * n, weights->data() + (f + 1) * n);
    std::vector<S> eff;
    switch (l.reparam.kind) {
      case ReparamKind::WeightAlign:
        eff = weight_align(row, (*re_gamma)[f], l.reparam.wa());
        break;
      case ReparamKind::WeightNorm:
        eff = weight_norm(row, (*re_gamma)[f], S(l.reparam.eps));
        break;
      case ReparamKind::None:
        eff = row;
        break;
    }
    for (S v : eff) values.push_back(double(v));
  }

  StatsReport report;
  report.samples = long(values.size());
  auto [mean, var] = detail::sorted_mean_var(values);
  ChannelStats cs;
  cs.layer = layer;
  cs.channel = channel;
  cs.epoch = epoch;
  cs.mean = mean;
  cs.var = var;
  cs.hist = make_histogram(values);
  report.channels.push_back(std::move(cs));
  report.meta["fan_in"] = n;
  return report;
}

}  // namespace wa
