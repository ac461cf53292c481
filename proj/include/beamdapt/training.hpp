// SPDX-License-Identifier: Apache-2.0
//
// Training regimes: source-domain pretraining, transfer with domain
// adaptation (frozen conv blocks + gradient reversal), pure fine-tuning
// with two added dense layers, and scratch training on the target domain.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamdapt/dataset.hpp"
#include "beamdapt/nn.hpp"

namespace beamdapt {

enum class Regime { kPretrain, kTransferDa, kFinetunePure, kScratch };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kPretrain: return "pretrain";
    case Regime::kTransferDa: return "transfer_da";
    case Regime::kFinetunePure: return "finetune_pure";
    case Regime::kScratch: return "scratch";
  }
  return "?";
}

struct TrainConfig {
  int epochs = 60;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double lambda = 1.0;
  int freeze_count = 4;
  std::uint64_t seed = 0;
  int patience = 10;           // early stop on validation MSE
  bool mse_on_source = true;   // source batches also contribute the rate loss
  double val_fraction = 0.1;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs >= 1");
    if (batch_size < 1)
      throw std::invalid_argument("TrainConfig: batch_size >= 1");
    if (freeze_count < 0)
      throw std::invalid_argument("TrainConfig: freeze_count >= 0");
  }
};

inline MatrixXd sample_input(const BeamSample& s) {
  const long k_dl = static_cast<long>(s.features.size()) / 2;
  MatrixXd x(2, k_dl);
  for (long k = 0; k < k_dl; ++k) {
    x(0, k) = s.features[static_cast<std::size_t>(k)];
    x(1, k) = s.features[static_cast<std::size_t>(k_dl + k)];
  }
  return x;
}

inline MatrixXd sample_target(const BeamSample& s) {
  MatrixXd t(static_cast<long>(s.labels.size()), 1);
  for (std::size_t d = 0; d < s.labels.size(); ++d)
    t(static_cast<long>(d), 0) = s.labels[d];
  return t;
}

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_u64() % i]);
}

// Deterministic train/validation split.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds,
                                                 double val_fraction,
                                                 std::uint64_t seed) {
  if (ds.samples.empty())
    throw std::invalid_argument("split_dataset: empty dataset");
  std::vector<std::size_t> idx(ds.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, 0x5eedULL);
  shuffle_indices(idx, rng);
  const auto n_val = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(ds.samples.size()) - 1.0,
                       std::max(1.0, val_fraction * ds.samples.size())));
  Dataset train, val;
  train.manifest = ds.manifest;
  val.manifest = ds.manifest;
  for (std::size_t i = 0; i < idx.size(); ++i)
    (i < n_val ? val : train).samples.push_back(ds.samples[idx[i]]);
  train.manifest.sample_count = train.samples.size();
  val.manifest.sample_count = val.samples.size();
  return {std::move(train), std::move(val)};
}

struct EpochMetrics {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double domain_bce = 0.0;
  double domain_acc = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> history;
};

inline double eval_mse(Model& model, const std::vector<BeamSample>& samples) {
  if (samples.empty()) return 0.0;
  Batch inputs, targets;
  inputs.reserve(samples.size());
  targets.reserve(samples.size());
  for (const auto& s : samples) {
    inputs.push_back(sample_input(s));
    targets.push_back(sample_target(s));
  }
  const Batch feat = model.forward_trunk(inputs);
  return mse_loss(model.forward_head(feat), targets);
}

// Fraction of samples the domain classifier labels correctly (p > 0.5
// means source).
inline double domain_accuracy(Model& model,
                              const std::vector<BeamSample>& samples) {
  if (samples.empty()) return 0.0;
  Batch inputs;
  for (const auto& s : samples) inputs.push_back(sample_input(s));
  const Batch probs = model.forward_domain(model.forward_trunk(inputs));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int pred = probs[i](0, 0) > 0.5 ? 1 : 0;
    if (pred == samples[i].domain_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace detail {

// Shared epoch loop. `source` may be empty (MSE-only regimes). When
// present, each target batch is paired with an equally sized source batch;
// the shorter side cycles.
inline TrainResult train_loop(Model model, const std::vector<BeamSample>& train,
                              const std::vector<BeamSample>& val,
                              const std::vector<BeamSample>& source,
                              const std::vector<BeamSample>& domain_val,
                              const TrainConfig& cfg, bool with_domain,
                              bool mse_on_source) {
  if (train.empty()) throw std::invalid_argument("train_loop: empty dataset");
  SgdMomentum opt(cfg.learning_rate, cfg.momentum);
  Rng shuffle_rng(cfg.seed, 0x0debULL);

  std::vector<std::size_t> tgt_idx(train.size());
  std::iota(tgt_idx.begin(), tgt_idx.end(), 0);
  std::vector<std::size_t> src_idx(source.size());
  std::iota(src_idx.begin(), src_idx.end(), 0);
  std::size_t src_cursor = 0;

  TrainResult result{model.clone(), {}};
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(tgt_idx, shuffle_rng);
    if (!source.empty() && src_cursor == 0) shuffle_indices(src_idx, shuffle_rng);

    double mse_acc = 0.0, bce_acc = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < train.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(train.size(), start + static_cast<std::size_t>(cfg.batch_size));
      MiniBatch batch;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = train[tgt_idx[i]];
        batch.inputs.push_back(sample_input(s));
        batch.targets.push_back(sample_target(s));
        batch.domain_labels.push_back(s.domain_label);
        batch.use_mse.push_back(true);
        batch.use_domain.push_back(with_domain);
      }
      if (with_domain) {
        // Equal-sized source batch, cycling through the source set.
        for (std::size_t i = start; i < stop; ++i) {
          const auto& s = source[src_idx[src_cursor]];
          src_cursor = (src_cursor + 1) % source.size();
          if (src_cursor == 0) shuffle_indices(src_idx, shuffle_rng);
          batch.inputs.push_back(sample_input(s));
          batch.targets.push_back(sample_target(s));
          batch.domain_labels.push_back(s.domain_label);
          batch.use_mse.push_back(mse_on_source);
          batch.use_domain.push_back(true);
        }
      }
      const GradientStats stats =
          compute_gradients(model, batch, true, with_domain);
      opt.step(model);
      mse_acc += stats.mse;
      bce_acc += stats.domain_bce;
      ++steps;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_mse = mse_acc / std::max(steps, 1);
    m.val_mse = eval_mse(model, val);
    m.domain_bce = with_domain ? bce_acc / std::max(steps, 1) : 0.0;
    m.domain_acc = with_domain ? domain_accuracy(model, domain_val) : 0.0;
    result.history.push_back(m);

    if (m.val_mse < best_val) {
      best_val = m.val_mse;
      result.model = model.clone();
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace detail

// Source-domain pretraining on the rate-regression loss only.
inline TrainResult pretrain(const Dataset& source, const TrainConfig& cfg,
                            const ArchSpec& arch) {
  cfg.validate();
  if (source.samples.empty())
    throw std::invalid_argument("pretrain: empty source dataset");
  auto [train, val] = split_dataset(source, cfg.val_fraction, cfg.seed);
  Model model(arch, cfg.seed, cfg.lambda);
  return detail::train_loop(std::move(model), train.samples, val.samples, {},
                            {}, cfg, false, false);
}

// Transfer with fine-tuning plus adversarial domain adaptation: conv
// blocks frozen, per step one target batch paired with one source batch,
// domain BCE through the gradient-reversal layer on the union.
inline TrainResult transfer_da(const Model& pretrained, const Dataset& target,
                               const Dataset& source, const TrainConfig& cfg) {
  cfg.validate();
  if (target.samples.empty())
    throw std::invalid_argument("transfer_da: empty target dataset");
  if (source.samples.empty())
    throw std::invalid_argument(
        "transfer_da: source dataset required for the domain loss");
  Model model = pretrained.clone();
  model.set_lambda(cfg.lambda);
  model.freeze_conv_blocks(cfg.freeze_count);

  auto [tgt_train, tgt_val] = split_dataset(target, cfg.val_fraction, cfg.seed);
  auto [src_train, src_val] = split_dataset(source, cfg.val_fraction, cfg.seed);
  std::vector<BeamSample> domain_val = tgt_val.samples;
  domain_val.insert(domain_val.end(), src_val.samples.begin(),
                    src_val.samples.end());
  return detail::train_loop(std::move(model), tgt_train.samples,
                            tgt_val.samples, src_train.samples, domain_val,
                            cfg, true, cfg.mse_on_source);
}

// Pure fine-tuning baseline: conv blocks frozen, two fresh dense layers
// (hidden -> hidden -> D) appended behind the pretrained feature stack,
// trained on target MSE only.
inline TrainResult finetune_pure(const Model& pretrained, const Dataset& target,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (target.samples.empty())
    throw std::invalid_argument("finetune_pure: empty target dataset");

  ArchSpec arch = pretrained.arch();
  arch.extra_ft_layers = true;
  // Offset seed so the added layers do not replay the pretrain init stream.
  Model model(arch, cfg.seed ^ 0xf17eULL, cfg.lambda);

  // Carry over the pretrained trunk (convs plus the shared dense); the
  // replacement output stack starts from fresh initialization.
  auto* src_model = const_cast<Model*>(&pretrained);
  auto src_trunk = src_model->trunk_layers();
  auto dst_trunk = model.trunk_layers();
  for (std::size_t i = 0; i < src_trunk.size(); ++i) {
    auto sp = src_trunk[i]->params();
    auto dp = dst_trunk[i]->params();
    for (std::size_t j = 0; j < sp.size(); ++j) *dp[j] = *sp[j];
  }
  model.freeze_conv_blocks(cfg.freeze_count);

  auto [train, val] = split_dataset(target, cfg.val_fraction, cfg.seed);
  return detail::train_loop(std::move(model), train.samples, val.samples, {},
                            {}, cfg, false, false);
}

// Full model trained from fresh initialization on target data only.
inline TrainResult train_scratch(const Dataset& target, const TrainConfig& cfg,
                                 const ArchSpec& arch) {
  cfg.validate();
  if (target.samples.empty())
    throw std::invalid_argument("train_scratch: empty target dataset");
  auto [train, val] = split_dataset(target, cfg.val_fraction, cfg.seed);
  Model model(arch, cfg.seed, cfg.lambda);
  return detail::train_loop(std::move(model), train.samples, val.samples, {},
                            {}, cfg, false, false);
}

// Domain-classifier probe without adversarial reversal: a fresh two-layer
// classifier trained on the frozen conv-block features, so held-out
// accuracy measures how separable the pretrained representation is by
// domain.
inline double train_domain_probe(const Model& base, const Dataset& source,
                                 const Dataset& target, const TrainConfig& cfg) {
  Model model = base.clone();

  auto [src_train, src_val] = split_dataset(source, cfg.val_fraction, cfg.seed);
  auto [tgt_train, tgt_val] = split_dataset(target, cfg.val_fraction, cfg.seed);
  // Balance the classes: an imbalanced mix lets the classifier score the
  // majority-class base rate while learning nothing.
  const auto balance = [](std::vector<BeamSample>& a,
                          std::vector<BeamSample>& b) {
    const std::size_t n = std::min(a.size(), b.size());
    a.resize(n);
    b.resize(n);
  };
  balance(src_train.samples, tgt_train.samples);
  balance(src_val.samples, tgt_val.samples);
  std::vector<BeamSample> train = src_train.samples;
  train.insert(train.end(), tgt_train.samples.begin(), tgt_train.samples.end());
  std::vector<BeamSample> heldout = src_val.samples;
  heldout.insert(heldout.end(), tgt_val.samples.begin(), tgt_val.samples.end());

  // Frozen conv features for every sample, computed once.
  const auto conv_features = [&model](const std::vector<BeamSample>& samples) {
    Batch inputs;
    inputs.reserve(samples.size());
    for (const auto& s : samples) inputs.push_back(sample_input(s));
    return model.forward_conv(inputs);
  };
  const Batch train_feat = conv_features(train);
  const Batch held_feat = conv_features(heldout);

  // Small standalone classifier on those features.
  const int fw = static_cast<int>(train_feat.front().rows());
  Rng init_rng(cfg.seed, 0x9b0beULL);
  std::vector<std::unique_ptr<nn::Layer>> probe;
  probe.push_back(
      std::make_unique<nn::Dense>(fw, base.arch().domain_hidden, init_rng));
  probe.push_back(std::make_unique<nn::Relu>());
  probe.push_back(std::make_unique<nn::Dense>(base.arch().domain_hidden, 1,
                                              init_rng));
  probe.push_back(std::make_unique<nn::Sigmoid>());
  const auto probe_forward = [&probe](const Batch& x, bool cache) {
    Batch h = x;
    for (auto& layer : probe) h = layer->forward(h, cache);
    return h;
  };

  std::vector<MatrixXd> velocity;
  for (auto& layer : probe)
    for (auto* p : layer->params())
      velocity.push_back(MatrixXd::Zero(p->rows(), p->cols()));

  const auto accuracy_on = [&probe_forward](const Batch& feats,
                                            const std::vector<BeamSample>& ss) {
    const Batch probs = probe_forward(feats, false);
    int correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const int pred = probs[i](0, 0) > 0.5 ? 1 : 0;
      if (pred == ss[i].domain_label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probs.size());
  };

  // Carve a validation slice off the training half (the vector holds the
  // two equal-sized class blocks back to back, so a strided pick draws
  // from both equally) and keep the best-validation parameters; long
  // schedules otherwise overfit the small probe.
  std::vector<std::size_t> fit_idx, probe_val_idx;
  for (std::size_t i = 0; i < train.size(); ++i)
    (i % 10 == 0 ? probe_val_idx : fit_idx).push_back(i);
  Batch val_feat;
  std::vector<BeamSample> val_samples;
  for (const std::size_t i : probe_val_idx) {
    val_feat.push_back(train_feat[i]);
    val_samples.push_back(train[i]);
  }

  std::vector<MatrixXd> best_params;
  double best_val = -1.0;
  const auto snapshot = [&probe, &best_params]() {
    best_params.clear();
    for (auto& layer : probe)
      for (auto* p : layer->params()) best_params.push_back(*p);
  };
  snapshot();

  Rng rng(cfg.seed, 0x9b0be5ULL);
  std::vector<std::size_t> idx = fit_idx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(idx, rng);
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Batch inputs;
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        inputs.push_back(train_feat[idx[i]]);
        labels.push_back(train[idx[i]].domain_label);
      }
      for (auto& layer : probe) layer->zero_grads();
      const Batch probs = probe_forward(inputs, true);
      std::vector<double> p(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) p[i] = probs[i](0, 0);
      const std::vector<double> dp = bce_domain_loss_grad(p, labels);
      Batch dy(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) {
        dy[i].resize(1, 1);
        dy[i](0, 0) = dp[i];
      }
      for (auto it = probe.rbegin(); it != probe.rend(); ++it)
        dy = (*it)->backward(dy);
      std::size_t vi = 0;
      for (auto& layer : probe) {
        auto ps = layer->params();
        auto gs = layer->grads();
        for (std::size_t i = 0; i < ps.size(); ++i, ++vi) {
          velocity[vi] = cfg.momentum * velocity[vi] -
                         cfg.learning_rate * (*gs[i]);
          *ps[i] += velocity[vi];
        }
      }
    }
    const double val_acc = accuracy_on(val_feat, val_samples);
    if (val_acc > best_val) {
      best_val = val_acc;
      snapshot();
    }
  }

  std::size_t bi = 0;
  for (auto& layer : probe)
    for (auto* p : layer->params()) *p = best_params[bi++];
  return accuracy_on(held_feat, heldout);
}

// ---- run directory -------------------------------------------------------

inline nlohmann::json train_config_to_json(const TrainConfig& c,
                                           Regime regime) {
  return nlohmann::json{{"regime", regime_name(regime)},
                        {"epochs", c.epochs},
                        {"batch_size", c.batch_size},
                        {"learning_rate", c.learning_rate},
                        {"momentum", c.momentum},
                        {"lambda", c.lambda},
                        {"freeze_count", c.freeze_count},
                        {"seed", c.seed},
                        {"patience", c.patience},
                        {"mse_on_source", c.mse_on_source},
                        {"val_fraction", c.val_fraction}};
}

inline void save_run(const std::string& dir, const TrainConfig& cfg,
                     Regime regime, TrainResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(dir + "/config.json");
    if (!os) throw std::runtime_error("save_run: cannot write config.json");
    os << train_config_to_json(cfg, regime).dump(2) << "\n";
  }
  {
    std::ofstream os(dir + "/metrics.csv");
    if (!os) throw std::runtime_error("save_run: cannot write metrics.csv");
    os << "epoch,train_mse,val_mse,domain_bce,domain_acc\n";
    os.precision(17);
    for (const auto& m : result.history)
      os << m.epoch << ',' << m.train_mse << ',' << m.val_mse << ','
         << m.domain_bce << ',' << m.domain_acc << "\n";
  }
  save_checkpoint(result.model, dir + "/checkpoint");
}

}  // namespace beamdapt
