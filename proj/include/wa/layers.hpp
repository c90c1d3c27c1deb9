// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file layers.hpp
 * @brief Declarative network specs and the network built from them.
 *
 * A NetworkSpec is an ordered list of layers (conv, dense, relu, pooling,
 * flatten, residual block, classifier), each optionally carrying an
 * activation normalizer and a weight re-parameterizer. Specs serialize
 * to/from JSON. build_network validates shapes, allocates parameters and
 * initializes them; forward records the computation on a tape.
 *
 * Rules enforced at build time:
 *  - exactly one classifier layer, and it is last;
 *  - the classifier never carries WeightAlign;
 *  - re-parameterizer configs carry no beta term.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "wa/init.hpp"
#include "wa/normalize.hpp"

namespace wa {

using json = nlohmann::json;

enum class LayerKind {
  Conv,
  Dense,
  Relu,
  MaxPool,
  AvgPool,
  Flatten,
  ResidualBlock,
  Classifier
};

enum class NormKind { None, Batch, Group, Layer, Instance };
enum class ReparamKind { None, WeightAlign, WeightNorm };

struct NormalizerConfig {
  NormKind kind = NormKind::None;
  double eps = 1e-5;
  double momentum = 0.1;
  Index groups = 1;  // group norm only

  bool operator==(const NormalizerConfig&) const = default;
};

struct ReparamConfig {
  ReparamKind kind = ReparamKind::None;
  bool center_on = true;
  bool scale_on = true;
  double eps = 1e-5;
  double multiplier = 1.0;

  WAConfig wa() const { return {center_on, scale_on, eps, multiplier}; }
  bool operator==(const ReparamConfig&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  Index filters = 0;  // conv, residual_block
  Index kernel = 3;
  Index stride = 1;
  Index padding = 1;
  Index units = 0;  // dense (classifier derives units from class count)
  Index pool = 2;   // maxpool, avgpool
  bool bias = false;
  NormalizerConfig norm;
  ReparamConfig reparam;

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  Shape input_shape;  // C,H,W
  Index classes = 0;
  uint64_t seed = 0;
  std::vector<LayerSpec> layers;

  bool operator==(const NetworkSpec&) const = default;
};

// ---------------------------------------------------------------------------
// JSON (field names match the type definitions)
// ---------------------------------------------------------------------------

namespace detail {
template <typename E>
std::string enum_to_string(E v, const std::map<E, std::string>& names) {
  return names.at(v);
}
template <typename E>
E enum_from_string(const std::string& s, const std::map<E, std::string>& names,
                   const char* what) {
  for (auto& [k, n] : names)
    if (n == s) return k;
  fail(std::string("unknown ") + what + " '" + s + "'");
}

inline const std::map<LayerKind, std::string>& layer_kind_names() {
  static const std::map<LayerKind, std::string> m = {
      {LayerKind::Conv, "conv"},
      {LayerKind::Dense, "dense"},
      {LayerKind::Relu, "relu"},
      {LayerKind::MaxPool, "maxpool"},
      {LayerKind::AvgPool, "avgpool"},
      {LayerKind::Flatten, "flatten"},
      {LayerKind::ResidualBlock, "residual_block"},
      {LayerKind::Classifier, "classifier"}};
  return m;
}
inline const std::map<NormKind, std::string>& norm_kind_names() {
  static const std::map<NormKind, std::string> m = {
      {NormKind::None, "none"},
      {NormKind::Batch, "batch"},
      {NormKind::Group, "group"},
      {NormKind::Layer, "layer"},
      {NormKind::Instance, "instance"}};
  return m;
}
inline const std::map<ReparamKind, std::string>& reparam_kind_names() {
  static const std::map<ReparamKind, std::string> m = {
      {ReparamKind::None, "none"},
      {ReparamKind::WeightAlign, "weight_align"},
      {ReparamKind::WeightNorm, "weight_norm"}};
  return m;
}
}  // namespace detail

inline void to_json(json& j, const NormalizerConfig& c) {
  j = json{{"kind", detail::enum_to_string(c.kind, detail::norm_kind_names())},
           {"eps", c.eps},
           {"momentum", c.momentum},
           {"groups", c.groups}};
}
inline void from_json(const json& j, NormalizerConfig& c) {
  c = NormalizerConfig{};
  c.kind = detail::enum_from_string<NormKind>(
      j.value("kind", "none"), detail::norm_kind_names(), "normalizer kind");
  c.eps = j.value("eps", 1e-5);
  c.momentum = j.value("momentum", 0.1);
  c.groups = j.value("groups", Index(1));
}

inline void to_json(json& j, const ReparamConfig& c) {
  j = json{{"kind", detail::enum_to_string(c.kind, detail::reparam_kind_names())},
           {"center_on", c.center_on},
           {"scale_on", c.scale_on},
           {"eps", c.eps},
           {"multiplier", c.multiplier}};
}
inline void from_json(const json& j, ReparamConfig& c) {
  c = ReparamConfig{};
  if (j.contains("beta"))
    fail("re-parameterizers manipulate weights directly and carry no beta term");
  c.kind = detail::enum_from_string<ReparamKind>(
      j.value("kind", "none"), detail::reparam_kind_names(), "reparameterizer kind");
  c.center_on = j.value("center_on", true);
  c.scale_on = j.value("scale_on", true);
  c.eps = j.value("eps", 1e-5);
  c.multiplier = j.value("multiplier", 1.0);
}

inline void to_json(json& j, const LayerSpec& l) {
  j = json{{"kind", detail::enum_to_string(l.kind, detail::layer_kind_names())},
           {"filters", l.filters},
           {"kernel", l.kernel},
           {"stride", l.stride},
           {"padding", l.padding},
           {"units", l.units},
           {"pool", l.pool},
           {"bias", l.bias},
           {"normalizer", l.norm},
           {"reparameterizer", l.reparam}};
}
inline void from_json(const json& j, LayerSpec& l) {
  l = LayerSpec{};
  l.kind = detail::enum_from_string<LayerKind>(
      j.at("kind").get<std::string>(), detail::layer_kind_names(), "layer kind");
  l.filters = j.value("filters", Index(0));
  l.kernel = j.value("kernel", Index(3));
  l.stride = j.value("stride", Index(1));
  l.padding = j.value("padding", Index(1));
  l.units = j.value("units", Index(0));
  l.pool = j.value("pool", Index(2));
  l.bias = j.value("bias", false);
  if (j.contains("normalizer")) l.norm = j.at("normalizer").get<NormalizerConfig>();
  if (j.contains("reparameterizer"))
    l.reparam = j.at("reparameterizer").get<ReparamConfig>();
}

inline void to_json(json& j, const NetworkSpec& s) {
  j = json{{"input_shape", s.input_shape},
           {"classes", s.classes},
           {"seed", s.seed},
           {"layers", s.layers}};
}
inline void from_json(const json& j, NetworkSpec& s) {
  s = NetworkSpec{};
  s.input_shape = j.at("input_shape").get<Shape>();
  s.classes = j.at("classes").get<Index>();
  s.seed = j.value("seed", uint64_t(0));
  s.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

// ---------------------------------------------------------------------------
// Shape inference
// ---------------------------------------------------------------------------

/// Batchless output shape of one layer; throws with a descriptive message
/// when the hyperparameters do not fit the input.
inline Shape layer_output_shape(const LayerSpec& l, const Shape& in,
                                Index classes) {
  auto need_chw = [&] {
    if (in.size() != 3)
      fail("layer '" + detail::enum_to_string(l.kind, detail::layer_kind_names()) +
           "' needs a C,H,W input, got " + shape_str(in));
  };
  switch (l.kind) {
    case LayerKind::Conv: {
      need_chw();
      if (l.filters < 1) fail("conv layer needs filters >= 1");
      const Index h = conv_out_extent(in[1], l.kernel, l.stride, l.padding);
      const Index w = conv_out_extent(in[2], l.kernel, l.stride, l.padding);
      return {l.filters, h, w};
    }
    case LayerKind::ResidualBlock: {
      need_chw();
      if (l.filters < 1) fail("residual block needs filters >= 1");
      const Index h = conv_out_extent(in[1], 3, l.stride, 1);
      const Index w = conv_out_extent(in[2], 3, l.stride, 1);
      return {l.filters, h, w};
    }
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      need_chw();
      const Index h = conv_out_extent(in[1], l.pool, l.pool, 0);
      const Index w = conv_out_extent(in[2], l.pool, l.pool, 0);
      return {in[0], h, w};
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::Flatten:
      return {shape_numel(in)};
    case LayerKind::Dense: {
      if (in.size() != 1)
        fail("dense layer needs a flattened input, got " + shape_str(in));
      if (l.units < 1) fail("dense layer needs units >= 1");
      return {l.units};
    }
    case LayerKind::Classifier:
      return {classes};
  }
  fail("unreachable layer kind");
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> velocity;
};

/// Result of one recorded forward pass.
struct Forward {
  int logits = -1;
  std::vector<int> param_nodes;  // parallel to Network::params()
  std::vector<int> taps;         // per layer: pre-normalization output, -1 if none
};

template <typename S>
class Network {
 public:
  /// Validates the spec, allocates and initializes all parameters.
  static Network build(const NetworkSpec& spec) {
    if (spec.input_shape.size() != 3)
      fail("network input_shape must be C,H,W, got " + shape_str(spec.input_shape));
    if (spec.classes < 2) fail("network needs at least 2 classes");
    if (spec.layers.empty()) fail("network needs at least one layer");
    for (size_t i = 0; i < spec.layers.size(); ++i) {
      const bool is_last = i + 1 == spec.layers.size();
      const LayerSpec& l = spec.layers[i];
      if ((l.kind == LayerKind::Classifier) != is_last)
        fail(is_last ? "last layer must be the classifier"
                     : "classifier layer must be last (layer " + std::to_string(i) + ")");
      if (l.kind == LayerKind::Classifier &&
          l.reparam.kind == ReparamKind::WeightAlign)
        fail("WeightAlign is never applied to the final classifier layer");
    }

    Network net;
    net.spec_ = spec;
    Rng root(spec.seed);
    Shape shape = spec.input_shape;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerSpec& l = spec.layers[i];
      Shape out;
      try {
        out = layer_output_shape(l, shape, spec.classes);
      } catch (const std::exception& e) {
        fail("layer " + std::to_string(i) + ": " + e.what() + " (input " +
             shape_str(shape) + ")");
      }
      net.alloc_layer(int(i), l, shape, root.split(i));
      shape = std::move(out);
    }
    return net;
  }

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Param<S>>& params() { return params_; }
  const std::vector<Param<S>>& params() const { return params_; }

  /// Records the whole network on the tape. In eval mode batch norm uses
  /// running statistics; re-parameterized layers behave identically in both
  /// modes.
  Forward forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    if (x.rank() != 4 || Shape{x.extent(1), x.extent(2), x.extent(3)} != spec_.input_shape)
      fail("network input must be N," + shape_str(spec_.input_shape).substr(1) +
           ", got " + shape_str(x.shape()));
    Forward fw;
    fw.param_nodes.reserve(params_.size());
    for (const Param<S>& p : params_) fw.param_nodes.push_back(tape.leaf(p.value));

    int cur = tape.leaf(x);
    fw.taps.assign(spec_.layers.size(), -1);
    for (size_t i = 0; i < spec_.layers.size(); ++i)
      cur = forward_layer(tape, int(i), cur, mode, fw);
    fw.logits = cur;
    return fw;
  }

 private:
  struct Slots {
    int w = -1, b = -1, ng = -1, nb = -1, rg = -1;          // main conv / dense
    int w2 = -1, ng2 = -1, nb2 = -1, rg2 = -1;              // residual second conv
    int wp = -1, ngp = -1, nbp = -1, rgp = -1;              // residual projection
    NormState<S> st, st2, stp;
  };

  int add_param(std::string name, Tensor<S> value) {
    Param<S> p;
    p.name = std::move(name);
    p.velocity = Tensor<S>(value.shape());
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return int(params_.size()) - 1;
  }

  int add_conv_params(const std::string& prefix, Index cout, Index cin, Index k,
                      const ReparamConfig& re, Rng rng) {
    const Index n = cin * k * k;
    const int w = add_param(prefix + ".weights",
                            kaiming_init<S>({cout, cin, k, k}, n, rng.split(0)));
    if (re.kind == ReparamKind::WeightNorm) {
      // g starts at each filter's initial norm so the first forward matches
      // the plain convolution.
      Tensor<S> g({cout});
      for (Index f = 0; f < cout; ++f)
        g[f] = std::sqrt(typename Tensor<S>::ConstArrayMap(
                             params_[w].value.data() + f * n, n)
                             .square()
                             .sum());
      add_param(prefix + ".wn_g", std::move(g));
    } else if (re.kind == ReparamKind::WeightAlign) {
      add_param(prefix + ".wa_gamma", Tensor<S>::ones({cout}));
    }
    return w;
  }

  void add_norm_params(const std::string& prefix, Index channels,
                       const NormalizerConfig& cfg, NormState<S>& st, int& ng,
                       int& nb) {
    if (cfg.kind == NormKind::None) return;
    ng = add_param(prefix + ".norm_gamma", Tensor<S>::ones({channels}));
    nb = add_param(prefix + ".norm_beta", Tensor<S>({channels}));
    if (cfg.kind == NormKind::Batch) st = NormState<S>::make(channels, cfg.momentum);
  }

  void alloc_layer(int i, const LayerSpec& l, const Shape& in, Rng rng) {
    Slots s;
    const std::string prefix = "layer" + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Conv: {
        s.w = add_conv_params(prefix, l.filters, in[0], l.kernel, l.reparam, rng);
        if (s.w + 1 < int(params_.size())) s.rg = s.w + 1;
        if (l.bias) s.b = add_param(prefix + ".bias", Tensor<S>({l.filters}));
        add_norm_params(prefix, l.filters, l.norm, s.st, s.ng, s.nb);
        break;
      }
      case LayerKind::ResidualBlock: {
        s.w = add_conv_params(prefix + ".conv1", l.filters, in[0], 3, l.reparam,
                              rng.split(1));
        if (s.w + 1 < int(params_.size())) s.rg = s.w + 1;
        add_norm_params(prefix + ".conv1", l.filters, l.norm, s.st, s.ng, s.nb);
        s.w2 = add_conv_params(prefix + ".conv2", l.filters, l.filters, 3,
                               l.reparam, rng.split(2));
        if (s.w2 + 1 < int(params_.size())) s.rg2 = s.w2 + 1;
        add_norm_params(prefix + ".conv2", l.filters, l.norm, s.st2, s.ng2, s.nb2);
        if (in[0] != l.filters || l.stride != 1) {
          s.wp = add_conv_params(prefix + ".proj", l.filters, in[0], 1, l.reparam,
                                 rng.split(3));
          if (s.wp + 1 < int(params_.size())) s.rgp = s.wp + 1;
          add_norm_params(prefix + ".proj", l.filters, l.norm, s.stp, s.ngp, s.nbp);
        }
        break;
      }
      case LayerKind::Dense:
      case LayerKind::Classifier: {
        const Index units =
            l.kind == LayerKind::Classifier ? spec_.classes : l.units;
        const Index fan_in = shape_numel(in);
        s.w = add_param(prefix + ".weights",
                        kaiming_init<S>({units, fan_in}, fan_in, rng.split(0)));
        if (l.reparam.kind == ReparamKind::WeightAlign)
          s.rg = add_param(prefix + ".wa_gamma", Tensor<S>::ones({units}));
        else if (l.reparam.kind == ReparamKind::WeightNorm) {
          Tensor<S> g({units});
          for (Index f = 0; f < units; ++f)
            g[f] = std::sqrt(typename Tensor<S>::ConstArrayMap(
                                 params_[s.w].value.data() + f * fan_in, fan_in)
                                 .square()
                                 .sum());
          s.rg = add_param(prefix + ".wn_g", std::move(g));
        }
        if (l.bias) s.b = add_param(prefix + ".bias", Tensor<S>({units}));
        add_norm_params(prefix, units, l.norm, s.st, s.ng, s.nb);
        break;
      }
      default:
        break;  // relu / pooling / flatten carry no parameters
    }
    slots_.push_back(std::move(s));
  }

  int reparameterize(Tape<S>& t, const ReparamConfig& re, int w_node, int g_node) {
    switch (re.kind) {
      case ReparamKind::None:
        return w_node;
      case ReparamKind::WeightAlign:
        return weight_align_bank(t, w_node, g_node, re.wa());
      case ReparamKind::WeightNorm:
        return weight_norm_bank(t, w_node, g_node, S(re.eps));
    }
    fail("unreachable reparam kind");
  }

  int apply_norm(Tape<S>& t, const NormalizerConfig& cfg, int x, int ng, int nb,
                 NormState<S>& st, Mode mode, const Forward& fw) {
    switch (cfg.kind) {
      case NormKind::None:
        return x;
      case NormKind::Batch:
        return batch_norm(t, x, fw.param_nodes[ng], fw.param_nodes[nb], st, mode,
                          S(cfg.eps));
      case NormKind::Group:
        return group_norm(t, x, fw.param_nodes[ng], fw.param_nodes[nb], cfg.groups,
                          S(cfg.eps));
      case NormKind::Layer:
        return group_norm(t, x, fw.param_nodes[ng], fw.param_nodes[nb], Index(1),
                          S(cfg.eps));
      case NormKind::Instance:
        return group_norm(t, x, fw.param_nodes[ng], fw.param_nodes[nb],
                          t.value(x).extent(1), S(cfg.eps));
    }
    fail("unreachable norm kind");
  }

  int forward_layer(Tape<S>& t, int i, int x, Mode mode, Forward& fw) {
    const LayerSpec& l = spec_.layers[i];
    Slots& s = slots_[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        int w = reparameterize(t, l.reparam, fw.param_nodes[s.w],
                               s.rg >= 0 ? fw.param_nodes[s.rg] : -1);
        int out = conv2d(t, x, w, s.b >= 0 ? fw.param_nodes[s.b] : -1, l.stride,
                         l.padding);
        fw.taps[i] = out;
        return apply_norm(t, l.norm, out, s.ng, s.nb, s.st, mode, fw);
      }
      case LayerKind::ResidualBlock: {
        int w1 = reparameterize(t, l.reparam, fw.param_nodes[s.w],
                                s.rg >= 0 ? fw.param_nodes[s.rg] : -1);
        int branch = conv2d(t, x, w1, -1, l.stride, 1);
        branch = apply_norm(t, l.norm, branch, s.ng, s.nb, s.st, mode, fw);
        branch = relu(t, branch);
        int w2 = reparameterize(t, l.reparam, fw.param_nodes[s.w2],
                                s.rg2 >= 0 ? fw.param_nodes[s.rg2] : -1);
        branch = conv2d(t, branch, w2, -1, 1, 1);
        fw.taps[i] = branch;
        branch = apply_norm(t, l.norm, branch, s.ng2, s.nb2, s.st2, mode, fw);
        int shortcut = x;
        if (s.wp >= 0) {
          int wp = reparameterize(t, l.reparam, fw.param_nodes[s.wp],
                                  s.rgp >= 0 ? fw.param_nodes[s.rgp] : -1);
          shortcut = conv2d(t, x, wp, -1, l.stride, 0);
          shortcut = apply_norm(t, l.norm, shortcut, s.ngp, s.nbp, s.stp, mode, fw);
        }
        return relu(t, add(t, branch, shortcut));
      }
      case LayerKind::Relu:
        return relu(t, x);
      case LayerKind::MaxPool:
        return maxpool2d(t, x, l.pool);
      case LayerKind::AvgPool:
        return avgpool2d(t, x, l.pool);
      case LayerKind::Flatten: {
        const Tensor<S>& v = t.value(x);
        return reshape(t, x, {v.extent(0), v.size() / v.extent(0)});
      }
      case LayerKind::Dense:
      case LayerKind::Classifier: {
        int in = x;
        if (t.value(x).rank() != 2) {
          const Tensor<S>& v = t.value(x);
          in = reshape(t, x, {v.extent(0), v.size() / v.extent(0)});
        }
        int w = fw.param_nodes[s.w];
        if (l.reparam.kind != ReparamKind::None)
          w = reparameterize(t, l.reparam, w, fw.param_nodes[s.rg]);
        int out = dense(t, in, w, s.b >= 0 ? fw.param_nodes[s.b] : -1);
        fw.taps[i] = out;
        if (l.norm.kind != NormKind::None) {
          const Tensor<S>& v = t.value(out);
          int r = reshape(t, out, {v.extent(0), v.extent(1), Index(1), Index(1)});
          r = apply_norm(t, l.norm, r, s.ng, s.nb, s.st, mode, fw);
          out = reshape(t, r, {v.extent(0), v.extent(1)});
        }
        return out;
      }
    }
    fail("unreachable layer kind");
  }

  NetworkSpec spec_;
  std::vector<Param<S>> params_;
  std::vector<Slots> slots_;
};

// ---------------------------------------------------------------------------
// Variants and presets
// ---------------------------------------------------------------------------

/// Normalization variant named on the command line: "baseline", "bn", "gn",
/// "ln", "in", "wa", "wn" or a composition like "wa+gn".
struct Variant {
  NormKind norm = NormKind::None;
  ReparamKind reparam = ReparamKind::None;
};

inline Variant parse_variant(std::string name) {
  for (char& ch : name) ch = char(std::tolower(static_cast<unsigned char>(ch)));
  Variant v;
  size_t pos = 0;
  while (pos <= name.size()) {
    size_t next = name.find('+', pos);
    std::string part = name.substr(pos, next == std::string::npos ? next : next - pos);
    if (part == "baseline" || part == "none" || part.empty()) {
    } else if (part == "bn")
      v.norm = NormKind::Batch;
    else if (part == "gn")
      v.norm = NormKind::Group;
    else if (part == "ln")
      v.norm = NormKind::Layer;
    else if (part == "in")
      v.norm = NormKind::Instance;
    else if (part == "wa")
      v.reparam = ReparamKind::WeightAlign;
    else if (part == "wn")
      v.reparam = ReparamKind::WeightNorm;
    else
      fail("unknown variant '" + name + "'");
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return v;
}

/// Applies a variant to every conv/dense layer of a spec; the classifier
/// keeps no normalizer and no re-parameterizer.
inline NetworkSpec with_variant(NetworkSpec spec, const Variant& v,
                                Index groups = 4) {
  for (LayerSpec& l : spec.layers) {
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Dense &&
        l.kind != LayerKind::ResidualBlock)
      continue;
    l.norm.kind = v.norm;
    if (v.norm == NormKind::Group)
      l.norm.groups = std::min<Index>(groups, l.filters > 0 ? l.filters : 1);
    l.reparam.kind = v.reparam;
  }
  return spec;
}

/// The drift-experiment stack: `depth` 3x3 conv layers with ReLU between,
/// then the classifier. Widths and input size are configuration, echoed into
/// report metadata by callers.
inline NetworkSpec drift_net_spec(const Variant& v, Index channels = 16,
                                  Index depth = 7, Shape input = {3, 16, 16},
                                  Index classes = 10, uint64_t seed = 0) {
  NetworkSpec spec;
  spec.input_shape = std::move(input);
  spec.classes = classes;
  spec.seed = seed;
  for (Index i = 0; i < depth; ++i) {
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.filters = channels;
    conv.kernel = 3;
    conv.stride = 1;
    conv.padding = 1;
    spec.layers.push_back(conv);
    spec.layers.push_back({.kind = LayerKind::Relu});
  }
  spec.layers.push_back({.kind = LayerKind::Classifier});
  return with_variant(std::move(spec), v);
}

/// Four-conv desk CNN for 28x28 inputs.
inline NetworkSpec cnn4_spec(const Variant& v, Shape input = {1, 28, 28},
                             Index classes = 10, uint64_t seed = 0) {
  NetworkSpec spec;
  spec.input_shape = std::move(input);
  spec.classes = classes;
  spec.seed = seed;
  auto conv = [](Index filters) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.filters = filters;
    return l;
  };
  spec.layers = {conv(8),
                 {.kind = LayerKind::Relu},
                 {.kind = LayerKind::MaxPool, .pool = 2},
                 conv(16),
                 {.kind = LayerKind::Relu},
                 {.kind = LayerKind::MaxPool, .pool = 2},
                 conv(16),
                 {.kind = LayerKind::Relu},
                 conv(32),
                 {.kind = LayerKind::Relu},
                 {.kind = LayerKind::AvgPool, .pool = 7},
                 {.kind = LayerKind::Classifier}};
  return with_variant(std::move(spec), v);
}

}  // namespace wa
