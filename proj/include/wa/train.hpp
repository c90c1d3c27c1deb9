// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file train.hpp
 * @brief SGD training loop with momentum, weight decay and a step learning
 *        rate schedule, plus the batch-size sweep and scale-factor ablation.
 *
 * Update rule (weight decay added to the gradient, lr multiplies the
 * velocity):  g' = g + wd*w;  v <- m*v + g';  w <- w - lr*v.
 * All trainable parameters participate, including normalizer gamma/beta.
 *
 * A run diverges when a batch loss turns non-finite or the per-epoch mean
 * loss exceeds 10x the first batch loss for 3 consecutive epochs; divergence
 * truncates the run and sets the flag — it is data, not an error.
 */

#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "wa/data.hpp"
#include "wa/layers.hpp"

namespace wa {

struct LrSchedule {
  double initial = 0.01;
  std::vector<int> decay_epochs;  // empty -> 50% and 75% of epochs
  double factor = 0.1;

  double at(int epoch) const {
    double lr = initial;
    for (int d : decay_epochs)
      if (epoch >= d) lr *= factor;
    return lr;
  }

  bool operator==(const LrSchedule&) const = default;
};

struct TrainConfig {
  int batch_size = 64;
  int epochs = 5;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  uint64_t seed = 0;
  int eval_every = 1;
  bool augment = false;
  AugmentConfig augment_cfg{0.5, 4};
  int eval_batch = 256;

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const LrSchedule& s) {
  j = nlohmann::json{
      {"initial", s.initial}, {"decay_epochs", s.decay_epochs}, {"factor", s.factor}};
}
inline void from_json(const nlohmann::json& j, LrSchedule& s) {
  s = LrSchedule{};
  s.initial = j.value("initial", 0.01);
  if (j.contains("decay_epochs"))
    s.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
  s.factor = j.value("factor", 0.1);
}
inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"eval_every", c.eval_every},
                     {"augment", c.augment},
                     {"flip_prob", c.augment_cfg.flip_prob},
                     {"pad", c.augment_cfg.pad},
                     {"eval_batch", c.eval_batch}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.batch_size = j.value("batch_size", 64);
  c.epochs = j.value("epochs", 5);
  if (j.contains("lr")) {
    if (j.at("lr").is_number())
      c.lr.initial = j.at("lr").get<double>();
    else
      c.lr = j.at("lr").get<LrSchedule>();
  }
  c.momentum = j.value("momentum", 0.9);
  c.weight_decay = j.value("weight_decay", 5e-4);
  c.seed = j.value("seed", uint64_t(0));
  c.eval_every = j.value("eval_every", 1);
  c.augment = j.value("augment", false);
  c.augment_cfg.flip_prob = j.value("flip_prob", 0.5);
  c.augment_cfg.pad = j.value("pad", Index(4));
  c.eval_batch = j.value("eval_batch", 256);
}

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double train_err = 0;  // percent
  double test_err = 0;   // percent

  bool operator==(const EpochRecord&) const = default;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  std::string divergence_reason;
  uint64_t activation_stat_ops = 0;
  nlohmann::json config_echo;
  double wall_seconds = 0;  // lives in sidecar metadata, never in record.jsonl

  double final_test_err() const {
    return epochs.empty() ? 100.0 : epochs.back().test_err;
  }
};

inline void to_json(nlohmann::json& j, const EpochRecord& e) {
  j = nlohmann::json{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"train_err", e.train_err},
                     {"test_err", e.test_err}};
}
inline void from_json(const nlohmann::json& j, EpochRecord& e) {
  e.epoch = j.at("epoch");
  e.train_loss = j.at("train_loss");
  e.train_err = j.at("train_err");
  e.test_err = j.at("test_err");
}
inline void to_json(nlohmann::json& j, const RunRecord& r) {
  j = nlohmann::json{{"epochs", r.epochs},
                     {"diverged", r.diverged},
                     {"divergence_reason", r.divergence_reason},
                     {"activation_stat_ops", r.activation_stat_ops},
                     {"config", r.config_echo}};
}
inline void from_json(const nlohmann::json& j, RunRecord& r) {
  r = RunRecord{};
  r.epochs = j.at("epochs").get<std::vector<EpochRecord>>();
  r.diverged = j.at("diverged");
  r.divergence_reason = j.at("divergence_reason");
  r.activation_stat_ops = j.at("activation_stat_ops");
  r.config_echo = j.at("config");
}

/// One SGD update: g' = g + wd*w; v <- m*v + g'; w <- w - lr*v.
template <typename S>
void sgd_step(Tensor<S>& w, const Tensor<S>& g, Tensor<S>& v, double lr,
              double momentum, double weight_decay) {
  v.array() = S(momentum) * v.array() +
              (g.array() + S(weight_decay) * w.array());
  w.array() -= S(lr) * v.array();
}

/// Thrown when a gradient turns non-finite; names the offending parameter.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
template <typename S>
Tensor<S> gather_batch(const Dataset<S>& ds, const std::vector<Index>& order,
                       size_t begin, size_t end, std::vector<int>& labels) {
  const Shape4 s = Shape4::of(ds.images);
  const Index bn = Index(end - begin);
  Tensor<S> x({bn, s.c, s.h, s.w});
  labels.resize(size_t(bn));
  const Index per = s.c * s.h * s.w;
  for (size_t i = begin; i < end; ++i) {
    const Index src = order[i];
    std::copy_n(ds.images.data() + src * per, per,
                x.data() + Index(i - begin) * per);
    labels[i - begin] = ds.labels[size_t(src)];
  }
  return x;
}
}  // namespace detail

/// Classification error (percent) on a dataset, eval mode.
template <typename S>
double evaluate(Network<S>& net, const Dataset<S>& ds, int batch = 256) {
  const Index n = ds.count();
  Index wrong = 0;
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  std::vector<int> labels;
  for (Index at = 0; at < n; at += batch) {
    const Index end = std::min<Index>(at + batch, n);
    Tensor<S> x = detail::gather_batch(ds, order, size_t(at), size_t(end), labels);
    Tape<S> tape;
    Forward fw = net.forward(tape, x, Mode::Eval);
    const Tensor<S>& logits = tape.value(fw.logits);
    const Index k = logits.extent(1);
    for (Index i = 0; i < end - at; ++i) {
      Index best = 0;
      for (Index j = 1; j < k; ++j)
        if (logits(i, j) > logits(i, best)) best = j;
      if (int(best) != labels[size_t(i)]) ++wrong;
    }
  }
  return 100.0 * double(wrong) / double(n);
}

/**
 * Deterministic SGD training. Data order, augmentation and initialization
 * all derive from cfg.seed; two runs with the same config produce identical
 * RunRecords.
 */
template <typename S>
RunRecord train(Network<S>& net, const Dataset<S>& train_ds,
                const Dataset<S>& test_ds, TrainConfig cfg) {
  if (train_ds.count() == 0) fail("train: empty dataset");
  if (cfg.batch_size < 1) fail("train: batch_size must be >= 1");
  if (cfg.lr.initial < 0) fail("train: lr must be >= 0");
  if (cfg.momentum < 0 || cfg.momentum >= 1) fail("train: momentum must be in [0,1)");
  if (cfg.weight_decay < 0) fail("train: weight_decay must be >= 0");
  if (cfg.lr.decay_epochs.empty() && cfg.epochs >= 2)
    cfg.lr.decay_epochs = {cfg.epochs / 2, (3 * cfg.epochs) / 4};

  const auto t0 = std::chrono::steady_clock::now();
  activation_stat_ops = 0;

  RunRecord rec;
  rec.config_echo = cfg;
  Rng shuffle_rng(cfg.seed, 0x5bu);
  Rng aug_rng(cfg.seed, 0xa6u);

  const Index n = train_ds.count();
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));

  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  int high_loss_streak = 0;
  double last_test_err = 100.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the per-epoch stream.
    Rng er = shuffle_rng.split(uint64_t(epoch));
    for (Index i = n - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[size_t(er.below(uint64_t(i + 1)))]);

    const double lr = cfg.lr.at(epoch);
    double loss_sum = 0;
    long batches = 0;
    Index wrong = 0;
    std::vector<int> labels;
    for (Index at = 0; at < n; at += cfg.batch_size) {
      const Index end = std::min<Index>(at + cfg.batch_size, n);
      Tensor<S> x = detail::gather_batch(train_ds, order, size_t(at), size_t(end),
                                         labels);
      if (cfg.augment) augment(x, cfg.augment_cfg, aug_rng);

      Tape<S> tape;
      Forward fw = net.forward(tape, x, Mode::Train);
      const int loss_id = cross_entropy(tape, fw.logits, labels);
      const double loss = double(tape.value(loss_id).value());
      if (!std::isfinite(loss)) {
        rec.diverged = true;
        rec.divergence_reason = "non-finite training loss at epoch " +
                                std::to_string(epoch + 1);
        rec.activation_stat_ops = activation_stat_ops;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        return rec;
      }
      if (std::isnan(initial_loss)) initial_loss = loss;
      loss_sum += loss;
      ++batches;

      const Tensor<S>& logits = tape.value(fw.logits);
      for (Index i = 0; i < end - at; ++i) {
        Index best = 0;
        for (Index j = 1; j < logits.extent(1); ++j)
          if (logits(i, j) > logits(i, best)) best = j;
        if (int(best) != labels[size_t(i)]) ++wrong;
      }

      GradientMap<S> grads = tape.backward(loss_id);
      auto& params = net.params();
      for (size_t p = 0; p < params.size(); ++p) {
        const Tensor<S>* g = grads.find(fw.param_nodes[p]);
        if (!g) continue;
        if (!g->all_finite())
          throw DivergenceError("non-finite gradient in parameter '" +
                                params[p].name + "' at epoch " +
                                std::to_string(epoch + 1));
        sgd_step(params[p].value, *g, params[p].velocity, lr, cfg.momentum,
                 cfg.weight_decay);
      }
    }

    EpochRecord er_rec;
    er_rec.epoch = epoch + 1;
    er_rec.train_loss = loss_sum / double(batches);
    er_rec.train_err = 100.0 * double(wrong) / double(n);
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)
      last_test_err = evaluate(net, test_ds, cfg.eval_batch);
    er_rec.test_err = last_test_err;
    rec.epochs.push_back(er_rec);

    if (er_rec.train_loss > 10.0 * initial_loss)
      ++high_loss_streak;
    else
      high_loss_streak = 0;
    if (high_loss_streak >= 3) {
      rec.diverged = true;
      rec.divergence_reason = "train loss above 10x initial for 3 epochs";
      break;
    }
  }

  rec.activation_stat_ops = activation_stat_ops;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct SweepArm {
  int batch_size = 0;
  bool skipped = false;
  std::string skip_reason;
  RunRecord record;
};

inline bool spec_uses_batch_norm(const NetworkSpec& spec) {
  for (const LayerSpec& l : spec.layers)
    if (l.norm.kind == NormKind::Batch) return true;
  return false;
}

inline bool spec_uses_weight_align(const NetworkSpec& spec) {
  for (const LayerSpec& l : spec.layers)
    if (l.reparam.kind == ReparamKind::WeightAlign) return true;
  return false;
}

/**
 * One run per batch size with the learning rate scaled linearly from the
 * template's (batch size, lr) pair. Batch-norm networks are skipped at batch
 * size 1 with a recorded reason (no meaningful batch statistics there).
 */
template <typename S>
std::vector<SweepArm> sweep_batch(const NetworkSpec& spec,
                                  const Dataset<S>& train_ds,
                                  const Dataset<S>& test_ds,
                                  const std::vector<int>& batch_sizes,
                                  const TrainConfig& tmpl) {
  std::vector<SweepArm> arms;
  for (int bs : batch_sizes) {
    if (bs < 1) fail("sweep_batch: batch size must be >= 1");
    SweepArm arm;
    arm.batch_size = bs;
    if (bs == 1 && spec_uses_batch_norm(spec)) {
      arm.skipped = true;
      arm.skip_reason = "batch norm undefined at batch size 1";
      arms.push_back(std::move(arm));
      continue;
    }
    TrainConfig cfg = tmpl;
    cfg.lr.initial = tmpl.lr.initial * double(bs) / double(tmpl.batch_size);
    cfg.batch_size = bs;
    Network<S> net = Network<S>::build(spec);
    arm.record = train(net, train_ds, test_ds, cfg);
    arms.push_back(std::move(arm));
  }
  return arms;
}

struct AblateArm {
  double multiplier = 1;
  RunRecord record;
};

/// One run per scale-factor multiplier applied to every WeightAlign layer.
template <typename S>
std::vector<AblateArm> ablate_scale(const NetworkSpec& spec,
                                    const Dataset<S>& train_ds,
                                    const Dataset<S>& test_ds,
                                    const std::vector<double>& multipliers,
                                    const TrainConfig& cfg) {
  if (!spec_uses_weight_align(spec))
    fail("ablate_scale requires a WeightAlign network");
  std::vector<AblateArm> arms;
  for (double m : multipliers) {
    NetworkSpec arm_spec = spec;
    for (LayerSpec& l : arm_spec.layers)
      if (l.reparam.kind == ReparamKind::WeightAlign) l.reparam.multiplier = m;
    AblateArm arm;
    arm.multiplier = m;
    Network<S> net = Network<S>::build(arm_spec);
    try {
      arm.record = train(net, train_ds, test_ds, cfg);
    } catch (const DivergenceError& e) {
      arm.record.diverged = true;
      arm.record.divergence_reason = e.what();
    }
    arms.push_back(std::move(arm));
  }
  return arms;
}

}  // namespace wa
