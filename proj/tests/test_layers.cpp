// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

#include <doctest.h>

#include "wa/layers.hpp"

using namespace wa;

namespace {

Tensor<double> randn(Shape shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

Tensor<double>* find_param(Network<double>& net, const std::string& name) {
  for (Param<double>& p : net.params())
    if (p.name == name) return &p.value;
  return nullptr;
}

}  // namespace

TEST_CASE("drift-experiment network builds and accepts a 128-batch") {
  NetworkSpec spec = drift_net_spec(parse_variant("wa"), 16, 7, {3, 16, 16}, 10, 1);
  Network<double> net = Network<double>::build(spec);
  Tensor<double> x = randn({128, 3, 16, 16}, 5);
  Tape<double> tape;
  Forward fw = net.forward(tape, x, Mode::Train);
  CHECK(tape.value(fw.logits).shape() == Shape{128, 10});
}

TEST_CASE("build rejections") {
  NetworkSpec empty;
  empty.input_shape = {1, 8, 8};
  empty.classes = 10;
  CHECK_THROWS_AS(Network<double>::build(empty), std::invalid_argument);

  NetworkSpec wa_classifier = drift_net_spec(parse_variant("baseline"), 8, 1,
                                             {1, 8, 8}, 10, 1);
  wa_classifier.layers.back().reparam.kind = ReparamKind::WeightAlign;
  CHECK_THROWS_WITH_AS(Network<double>::build(wa_classifier),
                       doctest::Contains("classifier"), std::invalid_argument);

  NetworkSpec not_last = wa_classifier;
  not_last.layers.back().reparam.kind = ReparamKind::None;
  not_last.layers.insert(not_last.layers.begin(),
                         LayerSpec{.kind = LayerKind::Classifier});
  CHECK_THROWS_AS(Network<double>::build(not_last), std::invalid_argument);

  // Incompatible shapes error names the layer.
  NetworkSpec bad = drift_net_spec(parse_variant("baseline"), 8, 1, {1, 8, 8}, 10, 1);
  bad.layers[0].kernel = 11;
  bad.layers[0].padding = 0;
  CHECK_THROWS_WITH_AS(Network<double>::build(bad), doctest::Contains("layer 0"),
                       std::invalid_argument);
}

TEST_CASE("zero input through a bias-free net yields exactly zero logits") {
  for (const char* variant : {"baseline", "wa", "wn", "wa+gn"}) {
    NetworkSpec spec = cnn4_spec(parse_variant(variant), {1, 28, 28}, 10, 3);
    Network<double> net = Network<double>::build(spec);
    Tensor<double> x({2, 1, 28, 28});
    Tape<double> tape;
    Forward fw = net.forward(tape, x, Mode::Train);
    const Tensor<double>& logits = tape.value(fw.logits);
    for (Index i = 0; i < logits.size(); ++i) {
      CAPTURE(variant);
      CHECK(logits[i] == 0.0);
    }
  }
}

TEST_CASE("WA logits are batch-independent; BN train logits are not") {
  NetworkSpec wa_spec = cnn4_spec(parse_variant("wa"), {1, 28, 28}, 10, 7);
  Network<double> wa_net = Network<double>::build(wa_spec);

  Tensor<double> batch = randn({64, 1, 28, 28}, 11);
  Tensor<double> solo({1, 1, 28, 28});
  std::copy_n(batch.data(), 28 * 28, solo.data());

  Tape<double> t1, t2;
  Forward f1 = wa_net.forward(t1, batch, Mode::Train);
  Forward f2 = wa_net.forward(t2, solo, Mode::Train);
  double max_diff = 0;
  for (Index k = 0; k < 10; ++k)
    max_diff = std::max(max_diff, std::abs(t1.value(f1.logits)(0, k) -
                                           t2.value(f2.logits)(0, k)));
  CHECK(max_diff <= 1e-12);

  NetworkSpec bn_spec = cnn4_spec(parse_variant("bn"), {1, 28, 28}, 10, 7);
  Network<double> bn_net = Network<double>::build(bn_spec);
  Tape<double> t3;
  Forward f3 = bn_net.forward(t3, batch, Mode::Train);
  Network<double> bn_net2 = Network<double>::build(bn_spec);
  Tape<double> t4;
  Forward f4 = bn_net2.forward(t4, solo, Mode::Train);
  double bn_diff = 0;
  for (Index k = 0; k < 10; ++k)
    bn_diff = std::max(bn_diff, std::abs(t3.value(f3.logits)(0, k) -
                                         t4.value(f4.logits)(0, k)));
  CHECK(bn_diff > 0.0);
}

TEST_CASE("train/eval equivalence for WA and WN networks") {
  for (const char* variant : {"wa", "wn"}) {
    NetworkSpec spec = cnn4_spec(parse_variant(variant), {1, 28, 28}, 10, 13);
    Network<double> net = Network<double>::build(spec);
    Tensor<double> x = randn({4, 1, 28, 28}, 17);
    Tape<double> t1, t2;
    Forward f1 = net.forward(t1, x, Mode::Train);
    Forward f2 = net.forward(t2, x, Mode::Eval);
    CHECK(t1.value(f1.logits) == t2.value(f2.logits));
  }
}

TEST_CASE("WA conv equals plain conv given pre-aligned weights") {
  NetworkSpec spec = drift_net_spec(parse_variant("wa"), 6, 1, {2, 6, 6}, 10, 19);
  Network<double> net = Network<double>::build(spec);
  Tensor<double>* w = find_param(net, "layer0.weights");
  Tensor<double>* gamma = find_param(net, "layer0.wa_gamma");
  REQUIRE(w != nullptr);
  REQUIRE(gamma != nullptr);
  (*gamma)[2] = 1.7;  // non-trivial per-filter gamma

  // Align every filter outside the graph, then run a plain convolution.
  const Index filters = w->extent(0), n = w->size() / filters;
  Tensor<double> aligned(w->shape());
  for (Index f = 0; f < filters; ++f) {
    std::vector<double> row(w->data() + f * n, w->data() + (f + 1) * n);
    auto eff = weight_align(row, (*gamma)[f], spec.layers[0].reparam.wa());
    std::copy(eff.begin(), eff.end(), aligned.data() + f * n);
  }

  Tensor<double> x = randn({3, 2, 6, 6}, 23);
  Tape<double> tape;
  Forward fw = net.forward(tape, x, Mode::Train);
  Tensor<double> plain = conv2d_forward(x, aligned, std::nullopt, 1, 1);
  const Tensor<double>& tap = tape.value(fw.taps[0]);
  for (Index i = 0; i < plain.size(); ++i)
    CHECK(tap[i] == doctest::Approx(plain[i]).epsilon(1e-12));
}

TEST_CASE("layer output shapes match the documented formulas on a grid") {
  Rng rng(29);
  for (Index k : {Index(1), Index(3), Index(5)})
    for (Index stride : {Index(1), Index(2)})
      for (Index pad : {Index(0), Index(1), Index(2)})
        for (Index h : {Index(7), Index(8), Index(12)}) {
          LayerSpec conv;
          conv.kind = LayerKind::Conv;
          conv.filters = 3;
          conv.kernel = k;
          conv.stride = stride;
          conv.padding = pad;
          Shape in = {2, h, h};
          bool valid = true;
          Shape want;
          try {
            want = layer_output_shape(conv, in, 10);
          } catch (const std::invalid_argument&) {
            valid = false;
          }
          if (!valid) continue;
          Tensor<double> x = randn({2, 2, h, h}, 31 + uint64_t(k * stride * (pad + 1) * h));
          Tensor<double> w = randn({3, 2, k, k}, 37, 0.5);
          auto out = conv2d_forward(x, w, std::nullopt, stride, pad);
          CHECK(out.shape() == Shape{2, want[0], want[1], want[2]});
        }

  for (Index pool : {Index(2), Index(3)})
    for (Index h : {Index(6), Index(9), Index(12)}) {
      LayerSpec p;
      p.kind = LayerKind::MaxPool;
      p.pool = pool;
      Shape in = {3, h, h};
      bool valid = true;
      Shape want;
      try {
        want = layer_output_shape(p, in, 10);
      } catch (const std::invalid_argument&) {
        valid = false;
      }
      if (!valid) {
        CHECK(h % pool != 0);
        continue;
      }
      Tape<double> t;
      int x = t.leaf(randn({1, 3, h, h}, 41));
      CHECK(t.value(maxpool2d(t, x, pool)).shape() ==
            Shape{1, want[0], want[1], want[2]});
      CHECK(t.value(avgpool2d(t, x, pool)).shape() ==
            Shape{1, want[0], want[1], want[2]});
    }
}

TEST_CASE("residual block: zero branch reduces to relu(x)") {
  NetworkSpec spec;
  spec.input_shape = {4, 6, 6};
  spec.classes = 10;
  spec.seed = 43;
  spec.layers = {LayerSpec{.kind = LayerKind::ResidualBlock, .filters = 4},
                 LayerSpec{.kind = LayerKind::Classifier}};
  Network<double> net = Network<double>::build(spec);
  find_param(net, "layer0.conv1.weights")->array() = 0.0;
  find_param(net, "layer0.conv2.weights")->array() = 0.0;
  CHECK(find_param(net, "layer0.proj.weights") == nullptr);  // identity shortcut

  Tensor<double> x = randn({2, 4, 6, 6}, 47);
  Tape<double> tape;
  net.forward(tape, x, Mode::Train);
  // The block output feeds the classifier; recover it as the node before
  // the classifier's flatten. Easier: compare logits against relu(x) pushed
  // through the classifier weights directly.
  Tensor<double> rx = x;
  rx.array() = rx.array().max(0.0);
  Tensor<double>* wc = find_param(net, "layer1.weights");
  Tensor<double> flat = rx.reshaped({2, 4 * 6 * 6});
  Tensor<double> want({2, 10});
  want.mat(2, 10).noalias() = flat.mat(2, 144) * wc->mat(10, 144).transpose();
  Tape<double> t2;
  Forward f2 = net.forward(t2, x, Mode::Train);
  for (Index i = 0; i < want.size(); ++i)
    CHECK(t2.value(f2.logits)[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("residual block: zero input stays zero (bias-free)") {
  NetworkSpec spec;
  spec.input_shape = {3, 5, 5};
  spec.classes = 4;
  spec.seed = 53;
  spec.layers = {LayerSpec{.kind = LayerKind::ResidualBlock, .filters = 6},
                 LayerSpec{.kind = LayerKind::Classifier}};
  Network<double> net = Network<double>::build(spec);
  CHECK(find_param(net, "layer0.proj.weights") != nullptr);  // 3 -> 6 channels
  Tensor<double> x({2, 3, 5, 5});
  Tape<double> tape;
  Forward fw = net.forward(tape, x, Mode::Train);
  for (Index i = 0; i < tape.value(fw.logits).size(); ++i)
    CHECK(tape.value(fw.logits)[i] == 0.0);
}

TEST_CASE("residual block matches a hand-composed conv/add/relu sequence") {
  NetworkSpec spec;
  spec.input_shape = {4, 6, 6};
  spec.classes = 3;
  spec.seed = 59;
  spec.layers = {LayerSpec{.kind = LayerKind::ResidualBlock, .filters = 4},
                 LayerSpec{.kind = LayerKind::Classifier}};
  Network<double> net = Network<double>::build(spec);
  Tensor<double>& w1 = *find_param(net, "layer0.conv1.weights");
  Tensor<double>& w2 = *find_param(net, "layer0.conv2.weights");
  Tensor<double>& wc = *find_param(net, "layer1.weights");

  Tensor<double> x = randn({2, 4, 6, 6}, 61);
  Tensor<double> branch = conv2d_forward(x, w1, std::nullopt, 1, 1);
  branch.array() = branch.array().max(0.0);
  branch = conv2d_forward(branch, w2, std::nullopt, 1, 1);
  Tensor<double> out = branch + x;
  out.array() = out.array().max(0.0);
  Tensor<double> want({2, 3});
  want.mat(2, 3).noalias() =
      out.reshaped({2, 144}).mat(2, 144) * wc.mat(3, 144).transpose();

  Tape<double> tape;
  Forward fw = net.forward(tape, x, Mode::Train);
  for (Index i = 0; i < want.size(); ++i)
    CHECK(tape.value(fw.logits)[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("residual block parameter gradients pass a finite-difference check") {
  NetworkSpec spec;
  spec.input_shape = {3, 5, 5};
  spec.classes = 3;
  spec.seed = 67;
  spec.layers = {LayerSpec{.kind = LayerKind::ResidualBlock, .filters = 4},
                 LayerSpec{.kind = LayerKind::Classifier}};
  std::vector<int> labels = {0, 2};
  Tensor<double> x = randn({2, 3, 5, 5}, 71);
  Network<double> net = Network<double>::build(spec);

  auto loss_value = [&] {
    Tape<double> t;
    Forward f = net.forward(t, x, Mode::Train);
    return t.value(cross_entropy(t, f.logits, labels)).value();
  };

  const double h = 1e-5;
  for (size_t pi = 0; pi < net.params().size(); ++pi) {
    Tape<double> t;
    Forward f = net.forward(t, x, Mode::Train);
    GradientMap<double> grads = t.backward(cross_entropy(t, f.logits, labels));
    const Tensor<double>& analytic = grads.at(f.param_nodes[pi]);

    Tensor<double>& value = net.params()[pi].value;
    double worst = 0;
    for (Index i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + h;
      const double up = loss_value();
      value[i] = orig - h;
      const double down = loss_value();
      value[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    CAPTURE(net.params()[pi].name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("NetworkSpec JSON round-trip") {
  NetworkSpec spec = cnn4_spec(parse_variant("wa+gn"), {3, 28, 28}, 10, 77);
  spec.layers[0].bias = true;
  spec.layers[0].reparam.center_on = false;
  json j = spec;
  NetworkSpec back = j.get<NetworkSpec>();
  CHECK(back == spec);

  // A beta term on a re-parameterizer is rejected.
  json bad = j;
  bad["layers"][0]["reparameterizer"]["beta"] = 0.5;
  CHECK_THROWS_WITH_AS(bad.get<NetworkSpec>(), doctest::Contains("beta"),
                       std::invalid_argument);

  json unknown = j;
  unknown["layers"][0]["kind"] = "deconv";
  CHECK_THROWS_AS(unknown.get<NetworkSpec>(), std::invalid_argument);
}

TEST_CASE("variant parsing") {
  CHECK(parse_variant("WA+BN").norm == NormKind::Batch);
  CHECK(parse_variant("WA+BN").reparam == ReparamKind::WeightAlign);
  CHECK(parse_variant("baseline").norm == NormKind::None);
  CHECK(parse_variant("gn").norm == NormKind::Group);
  CHECK_THROWS_AS(parse_variant("blorp"), std::invalid_argument);
}
