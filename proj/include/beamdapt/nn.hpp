// SPDX-License-Identifier: Apache-2.0
//
// Minimal differentiable network: 1-D convolutions, dense layers, ReLU,
// max-pooling, gradient reversal, MSE/BCE losses, SGD with momentum,
// layer freezing, checkpointing and finite-difference self-verification.
//
// All math is double precision; training is single-threaded and
// deterministic for a fixed seed and data order.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamdapt/rng.hpp"
#include "beamdapt/tensor_file.hpp"

namespace beamdapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// A batch of per-sample activations. Conv layers use rows = channels,
// cols = positions; dense layers use column vectors (N x 1).
using Batch = std::vector<MatrixXd>;

namespace nn {

inline void glorot_init(MatrixXd& w, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (long j = 0; j < w.cols(); ++j)
    for (long i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
}

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Batch forward(const Batch& x, bool cache) = 0;
  // Consumes the cached forward pass; accumulates parameter gradients.
  virtual Batch backward(const Batch& dy) = 0;
  virtual std::vector<MatrixXd*> params() { return {}; }
  virtual std::vector<MatrixXd*> grads() { return {}; }
  virtual void zero_grads() {
    for (auto* g : grads()) g->setZero();
  }

  bool frozen = false;

  long param_count() {
    long n = 0;
    for (auto* p : params()) n += p->size();
    return n;
  }
};

class Conv1d final : public Layer {
 public:
  Conv1d(int in_ch, int out_ch, int kernel, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel) {
    if (in_ch < 1 || out_ch < 1 || kernel < 1)
      throw std::invalid_argument("Conv1d: sizes must be >= 1");
    weight.resize(out_ch, in_ch * kernel);
    bias = MatrixXd::Zero(out_ch, 1);
    glorot_init(weight, in_ch * kernel, out_ch * kernel, rng);
    dweight = MatrixXd::Zero(out_ch, in_ch * kernel);
    dbias = MatrixXd::Zero(out_ch, 1);
  }

  std::string kind() const override { return "conv1d"; }

  Batch forward(const Batch& x, bool cache) override {
    Batch y(x.size());
    if (cache) cols_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].rows() != in_ch_)
        throw std::invalid_argument("Conv1d: channel count mismatch");
      const long l_out = x[i].cols() - kernel_ + 1;
      if (l_out < 1) throw std::invalid_argument("Conv1d: input too short");
      MatrixXd cols(in_ch_ * kernel_, l_out);
      for (long p = 0; p < l_out; ++p)
        for (int t = 0; t < kernel_; ++t)
          cols.block(t * in_ch_, p, in_ch_, 1) = x[i].col(p + t);
      y[i] = weight * cols;
      y[i].colwise() += bias.col(0);
      if (cache) cols_[i] = std::move(cols);
    }
    return y;
  }

  Batch backward(const Batch& dy) override {
    Batch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dweight += dy[i] * cols_[i].transpose();
      dbias.col(0) += dy[i].rowwise().sum();
      const MatrixXd dcols = weight.transpose() * dy[i];
      const long l_out = dy[i].cols();
      dx[i] = MatrixXd::Zero(in_ch_, l_out + kernel_ - 1);
      for (long p = 0; p < l_out; ++p)
        for (int t = 0; t < kernel_; ++t)
          dx[i].col(p + t) += dcols.block(t * in_ch_, p, in_ch_, 1);
    }
    return dx;
  }

  std::vector<MatrixXd*> params() override { return {&weight, &bias}; }
  std::vector<MatrixXd*> grads() override { return {&dweight, &dbias}; }

  MatrixXd weight, bias, dweight, dbias;

 private:
  int in_ch_, out_ch_, kernel_;
  Batch cols_;
};

class Dense final : public Layer {
 public:
  Dense(int in, int out, Rng& rng) : in_(in) {
    if (in < 1 || out < 1)
      throw std::invalid_argument("Dense: widths must be >= 1");
    weight.resize(out, in);
    bias = MatrixXd::Zero(out, 1);
    glorot_init(weight, in, out, rng);
    dweight = MatrixXd::Zero(out, in);
    dbias = MatrixXd::Zero(out, 1);
  }

  std::string kind() const override { return "dense"; }

  Batch forward(const Batch& x, bool cache) override {
    Batch y(x.size());
    if (cache) x_ = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].rows() != in_ || x[i].cols() != 1)
        throw std::invalid_argument("Dense: input shape mismatch");
      y[i] = weight * x[i] + bias;
    }
    return y;
  }

  Batch backward(const Batch& dy) override {
    Batch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dweight += dy[i] * x_[i].transpose();
      dbias += dy[i];
      dx[i] = weight.transpose() * dy[i];
    }
    return dx;
  }

  std::vector<MatrixXd*> params() override { return {&weight, &bias}; }
  std::vector<MatrixXd*> grads() override { return {&dweight, &dbias}; }

  MatrixXd weight, bias, dweight, dbias;

 private:
  int in_;
  Batch x_;
};

class Relu final : public Layer {
 public:
  std::string kind() const override { return "relu"; }

  Batch forward(const Batch& x, bool cache) override {
    Batch y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i].cwiseMax(0.0);
    if (cache) y_ = y;
    return y;
  }

  Batch backward(const Batch& dy) override {
    Batch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx[i] = dy[i].cwiseProduct(
          (y_[i].array() > 0.0).cast<double>().matrix());
    return dx;
  }

 private:
  Batch y_;
};

// Window-2, stride-2 max pooling along positions; odd tails are dropped.
class MaxPool2 final : public Layer {
 public:
  std::string kind() const override { return "maxpool2"; }

  Batch forward(const Batch& x, bool cache) override {
    Batch y(x.size());
    if (cache) {
      argmax_.resize(x.size());
      in_cols_.resize(x.size());
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const long c = x[i].rows();
      const long l_out = x[i].cols() / 2;
      y[i].resize(c, l_out);
      Eigen::MatrixX<long> arg(c, l_out);
      for (long ch = 0; ch < c; ++ch)
        for (long p = 0; p < l_out; ++p) {
          const long a = 2 * p, b = 2 * p + 1;
          if (x[i](ch, a) >= x[i](ch, b)) {
            y[i](ch, p) = x[i](ch, a);
            arg(ch, p) = a;
          } else {
            y[i](ch, p) = x[i](ch, b);
            arg(ch, p) = b;
          }
        }
      if (cache) {
        argmax_[i] = std::move(arg);
        in_cols_[i] = x[i].cols();
      }
    }
    return y;
  }

  Batch backward(const Batch& dy) override {
    Batch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dx[i] = MatrixXd::Zero(dy[i].rows(), in_cols_[i]);
      for (long ch = 0; ch < dy[i].rows(); ++ch)
        for (long p = 0; p < dy[i].cols(); ++p)
          dx[i](ch, argmax_[i](ch, p)) += dy[i](ch, p);
    }
    return dx;
  }

 private:
  std::vector<Eigen::MatrixX<long>> argmax_;
  std::vector<long> in_cols_;
};

// (C x L) -> (C*L x 1), channel-major: output index ch*L + pos.
class Flatten final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }

  Batch forward(const Batch& x, bool cache) override {
    Batch y(x.size());
    if (cache) shapes_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const long c = x[i].rows(), l = x[i].cols();
      y[i].resize(c * l, 1);
      for (long ch = 0; ch < c; ++ch)
        for (long p = 0; p < l; ++p) y[i](ch * l + p, 0) = x[i](ch, p);
      if (cache) shapes_[i] = {c, l};
    }
    return y;
  }

  Batch backward(const Batch& dy) override {
    Batch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const auto [c, l] = shapes_[i];
      dx[i].resize(c, l);
      for (long ch = 0; ch < c; ++ch)
        for (long p = 0; p < l; ++p) dx[i](ch, p) = dy[i](ch * l + p, 0);
    }
    return dx;
  }

 private:
  std::vector<std::pair<long, long>> shapes_;
};

// Identity forward, grad * (-lambda) backward.
class GradientReversal final : public Layer {
 public:
  explicit GradientReversal(double lambda) : lambda_(lambda) {}

  std::string kind() const override { return "grl"; }

  Batch forward(const Batch& x, bool) override { return x; }

  Batch backward(const Batch& dy) override {
    Batch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = -lambda_ * dy[i];
    return dx;
  }

  void set_lambda(double lambda) { lambda_ = lambda; }
  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

class Sigmoid final : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }

  Batch forward(const Batch& x, bool cache) override {
    Batch y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      y[i] = (1.0 / (1.0 + (-x[i].array()).exp())).matrix();
    if (cache) y_ = y;
    return y;
  }

  Batch backward(const Batch& dy) override {
    Batch dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx[i] = dy[i].cwiseProduct(
          y_[i].cwiseProduct((1.0 - y_[i].array()).matrix()));
    return dx;
  }

 private:
  Batch y_;
};

}  // namespace nn

// Architecture hyperparameters. The trunk is the four conv blocks plus
// flatten and one shared dense layer; the rate head and the domain
// classifier (behind a gradient-reversal layer) both branch from that
// shared hidden representation, so the adversarial gradient can shape it
// even while the conv blocks are frozen.
struct ArchSpec {
  int input_len = 64;                             // K_DL
  int num_beams = 256;                            // D
  std::vector<int> conv_channels{16, 32, 64, 64};
  int kernel = 3;
  int dense_hidden = 256;
  int domain_hidden = 64;
  bool extra_ft_layers = false;  // pure fine-tuning: two added dense layers

  bool operator==(const ArchSpec&) const = default;

  // Flattened feature width after the conv trunk.
  int feature_width() const {
    int len = input_len;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      len = len - kernel + 1;
      if ((i + 1) % 2 == 0) len /= 2;  // pool after blocks 2 and 4
      if (len < 1) throw std::invalid_argument("ArchSpec: input too short");
    }
    return len * conv_channels.back();
  }
};

// Beam predictor + domain classifier with per-layer freeze flags.
class Model {
 public:
  Model() = default;

  Model(const ArchSpec& arch, std::uint64_t seed, double lambda = 1.0)
      : arch_(arch), seed_(seed), lambda_(lambda) {
    Rng rng(seed, 0xbeefULL);
    int ch = 2;  // real/imag input rows
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
      trunk_.push_back(
          std::make_unique<nn::Conv1d>(ch, arch.conv_channels[i], arch.kernel,
                                       rng));
      ch = arch.conv_channels[i];
      trunk_.push_back(std::make_unique<nn::Relu>());
      if ((i + 1) % 2 == 0) trunk_.push_back(std::make_unique<nn::MaxPool2>());
    }
    trunk_.push_back(std::make_unique<nn::Flatten>());

    const int fw = arch.feature_width();
    trunk_.push_back(std::make_unique<nn::Dense>(fw, arch.dense_hidden, rng));
    trunk_.push_back(std::make_unique<nn::Relu>());

    if (arch.extra_ft_layers) {
      head_.push_back(
          std::make_unique<nn::Dense>(arch.dense_hidden, arch.dense_hidden,
                                      rng));
      head_.push_back(std::make_unique<nn::Relu>());
    }
    head_.push_back(
        std::make_unique<nn::Dense>(arch.dense_hidden, arch.num_beams, rng));

    grl_ = new nn::GradientReversal(lambda);
    domain_.emplace_back(grl_);
    domain_.push_back(
        std::make_unique<nn::Dense>(arch.dense_hidden, arch.domain_hidden, rng));
    domain_.push_back(std::make_unique<nn::Relu>());
    domain_.push_back(std::make_unique<nn::Dense>(arch.domain_hidden, 1, rng));
    domain_.push_back(std::make_unique<nn::Sigmoid>());
  }

  const ArchSpec& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  double lambda() const { return lambda_; }
  void set_lambda(double lambda) {
    lambda_ = lambda;
    grl_->set_lambda(lambda);
  }

  // Freeze the first `count` conv layers (the feature-extraction blocks).
  void freeze_conv_blocks(int count) {
    int seen = 0;
    for (auto& layer : trunk_)
      if (layer->kind() == "conv1d") layer->frozen = seen++ < count;
  }

  int frozen_conv_blocks() const {
    int n = 0;
    for (const auto& layer : trunk_)
      if (layer->kind() == "conv1d" && layer->frozen) ++n;
    return n;
  }

  Batch forward_trunk(const Batch& x, bool cache = false) {
    Batch h = x;
    for (auto& layer : trunk_) h = layer->forward(h, cache);
    return h;
  }

  // Flattened conv-block output: the frozen feature-extractor
  // representation, before the shared dense layer.
  Batch forward_conv(const Batch& x) {
    Batch h = x;
    for (auto& layer : trunk_) {
      h = layer->forward(h, false);
      if (layer->kind() == "flatten") break;
    }
    return h;
  }

  Batch forward_head(const Batch& feat, bool cache = false) {
    Batch h = feat;
    for (auto& layer : head_) h = layer->forward(h, cache);
    return h;
  }

  Batch forward_domain(const Batch& feat, bool cache = false) {
    Batch h = feat;
    for (auto& layer : domain_) h = layer->forward(h, cache);
    return h;
  }

  // Predicted rates and the shared hidden feature for one input.
  std::pair<VectorXd, VectorXd> forward(const MatrixXd& features) {
    const Batch feat = forward_trunk({features});
    const Batch pred = forward_head(feat);
    return {pred[0].col(0), feat[0].col(0)};
  }

  Batch backward_head(const Batch& dpred) {
    Batch g = dpred;
    for (auto it = head_.rbegin(); it != head_.rend(); ++it)
      g = (*it)->backward(g);
    return g;
  }

  Batch backward_domain(const Batch& dprob) {
    Batch g = dprob;
    for (auto it = domain_.rbegin(); it != domain_.rend(); ++it)
      g = (*it)->backward(g);
    return g;
  }

  void backward_trunk(const Batch& dfeat) {
    Batch g = dfeat;
    for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it)
      g = (*it)->backward(g);
  }

  std::vector<nn::Layer*> all_layers() {
    std::vector<nn::Layer*> out;
    for (auto& l : trunk_) out.push_back(l.get());
    for (auto& l : head_) out.push_back(l.get());
    for (auto& l : domain_) out.push_back(l.get());
    return out;
  }
  std::vector<nn::Layer*> trunk_layers() {
    std::vector<nn::Layer*> out;
    for (auto& l : trunk_) out.push_back(l.get());
    return out;
  }
  std::vector<nn::Layer*> head_layers() {
    std::vector<nn::Layer*> out;
    for (auto& l : head_) out.push_back(l.get());
    return out;
  }
  std::vector<nn::Layer*> domain_layers() {
    std::vector<nn::Layer*> out;
    for (auto& l : domain_) out.push_back(l.get());
    return out;
  }

  void zero_grads() {
    for (auto* l : all_layers()) l->zero_grads();
  }

  long trainable_param_count() {
    long n = 0;
    for (auto* l : all_layers())
      if (!l->frozen) n += l->param_count();
    return n;
  }

  long total_param_count() {
    long n = 0;
    for (auto* l : all_layers()) n += l->param_count();
    return n;
  }

  Model clone() const {
    Model copy(arch_, seed_, lambda_);
    auto* self = const_cast<Model*>(this);
    auto src = self->all_layers();
    auto dst = copy.all_layers();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto sp = src[i]->params();
      auto dp = dst[i]->params();
      for (std::size_t j = 0; j < sp.size(); ++j) *dp[j] = *sp[j];
      dst[i]->frozen = src[i]->frozen;
    }
    return copy;
  }

 private:
  ArchSpec arch_;
  std::uint64_t seed_ = 0;
  double lambda_ = 1.0;
  std::vector<std::unique_ptr<nn::Layer>> trunk_, head_, domain_;
  nn::GradientReversal* grl_ = nullptr;  // owned by domain_
};

// Losses. MSE sums over outputs and averages over the batch.
inline double mse_loss(const Batch& predicted, const Batch& target) {
  if (predicted.size() != target.size() || predicted.empty())
    throw std::invalid_argument("mse_loss: batch size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].rows() != target[i].rows())
      throw std::invalid_argument("mse_loss: length mismatch");
    acc += (predicted[i] - target[i]).squaredNorm();
  }
  return acc / static_cast<double>(predicted.size());
}

inline Batch mse_loss_grad(const Batch& predicted, const Batch& target) {
  Batch g(predicted.size());
  const double inv_n = 1.0 / static_cast<double>(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i)
    g[i] = 2.0 * inv_n * (predicted[i] - target[i]);
  return g;
}

inline constexpr double kBceClamp = 1e-7;

// Binary cross-entropy, natural log, probabilities clamped to
// [eps, 1 - eps] before the log.
inline double bce_domain_loss(const std::vector<double>& probs,
                              const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty())
    throw std::invalid_argument("bce_domain_loss: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p =
        std::clamp(probs[i], kBceClamp, 1.0 - kBceClamp);
    acc += labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -acc / static_cast<double>(probs.size());
}

inline std::vector<double> bce_domain_loss_grad(
    const std::vector<double>& probs, const std::vector<int>& labels) {
  std::vector<double> g(probs.size());
  const double inv_n = 1.0 / static_cast<double>(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kBceClamp, 1.0 - kBceClamp);
    g[i] = inv_n * (labels[i] ? -1.0 / p : 1.0 / (1.0 - p));
  }
  return g;
}

// One labeled batch. `use_mse` masks which samples contribute to the
// predictor loss; `use_domain` masks domain-loss participation.
struct MiniBatch {
  Batch inputs;                   // each 2 x K_DL
  Batch targets;                  // each D x 1
  std::vector<int> domain_labels; // 1 source, 0 target
  std::vector<bool> use_mse;
  std::vector<bool> use_domain;
};

struct GradientStats {
  double mse = 0.0;
  double domain_bce = 0.0;
};

// Computes gradients of L_total = L_mse + L_domain over the batch and
// leaves them accumulated in the layers. Either loss may be disabled.
inline GradientStats compute_gradients(Model& model, const MiniBatch& batch,
                                       bool with_mse, bool with_domain) {
  if (batch.inputs.empty())
    throw std::invalid_argument("compute_gradients: empty batch");
  model.zero_grads();

  const Batch feat = model.forward_trunk(batch.inputs, true);
  Batch dfeat(feat.size());
  for (std::size_t i = 0; i < feat.size(); ++i)
    dfeat[i] = MatrixXd::Zero(feat[i].rows(), 1);

  GradientStats stats;

  if (with_mse) {
    Batch mse_feat, mse_targets;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < feat.size(); ++i)
      if (batch.use_mse.empty() || batch.use_mse[i]) {
        mse_feat.push_back(feat[i]);
        mse_targets.push_back(batch.targets[i]);
        idx.push_back(i);
      }
    if (!mse_feat.empty()) {
      const Batch pred = model.forward_head(mse_feat, true);
      stats.mse = mse_loss(pred, mse_targets);
      const Batch dfeat_mse =
          model.backward_head(mse_loss_grad(pred, mse_targets));
      for (std::size_t j = 0; j < idx.size(); ++j)
        dfeat[idx[j]] += dfeat_mse[j];
    }
  }

  if (with_domain) {
    Batch dom_feat;
    std::vector<int> labels;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < feat.size(); ++i)
      if (batch.use_domain.empty() || batch.use_domain[i]) {
        dom_feat.push_back(feat[i]);
        labels.push_back(batch.domain_labels[i]);
        idx.push_back(i);
      }
    if (!dom_feat.empty()) {
      const Batch probs = model.forward_domain(dom_feat, true);
      std::vector<double> p(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) p[i] = probs[i](0, 0);
      stats.domain_bce = bce_domain_loss(p, labels);
      const std::vector<double> dp = bce_domain_loss_grad(p, labels);
      Batch dprob(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) {
        dprob[i].resize(1, 1);
        dprob[i](0, 0) = dp[i];
      }
      const Batch dfeat_dom = model.backward_domain(dprob);
      for (std::size_t j = 0; j < idx.size(); ++j)
        dfeat[idx[j]] += dfeat_dom[j];
    }
  }

  model.backward_trunk(dfeat);
  return stats;
}

// Loss-only evaluation on current parameters (no caching, no gradients).
inline double total_loss(Model& model, const MiniBatch& batch, bool with_mse,
                         bool with_domain) {
  const Batch feat = model.forward_trunk(batch.inputs);
  double loss = 0.0;
  if (with_mse) {
    Batch mse_feat, mse_targets;
    for (std::size_t i = 0; i < feat.size(); ++i)
      if (batch.use_mse.empty() || batch.use_mse[i]) {
        mse_feat.push_back(feat[i]);
        mse_targets.push_back(batch.targets[i]);
      }
    if (!mse_feat.empty())
      loss += mse_loss(model.forward_head(mse_feat), mse_targets);
  }
  if (with_domain) {
    Batch dom_feat;
    std::vector<int> labels;
    for (std::size_t i = 0; i < feat.size(); ++i)
      if (batch.use_domain.empty() || batch.use_domain[i]) {
        dom_feat.push_back(feat[i]);
        labels.push_back(batch.domain_labels[i]);
      }
    if (!dom_feat.empty()) {
      const Batch probs = model.forward_domain(dom_feat);
      std::vector<double> p(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) p[i] = probs[i](0, 0);
      loss += bce_domain_loss(p, labels);
    }
  }
  return loss;
}

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  // Applies accumulated gradients; frozen layers stay bit-identical.
  void step(Model& model) {
    auto layers = model.all_layers();
    if (velocity_.empty()) {
      for (auto* l : layers)
        for (auto* p : l->params())
          velocity_.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    }
    std::size_t vi = 0;
    for (auto* l : layers) {
      auto params = l->params();
      auto grads = l->grads();
      for (std::size_t j = 0; j < params.size(); ++j, ++vi) {
        if (l->frozen) continue;
        velocity_[vi] = momentum_ * velocity_[vi] - lr_ * (*grads[j]);
        *params[j] += velocity_[vi];
      }
    }
  }

 private:
  double lr_, momentum_;
  std::vector<MatrixXd> velocity_;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  long params_checked = 0;
  bool passed = false;
};

// Central-difference verification of every parameter gradient against the
// analytic backward pass, h = 1e-5. The gradient-reversal layer makes the
// model's trunk gradient from the domain path intentionally -lambda times
// the true loss gradient, so the numeric reference for a trunk parameter
// is FD(L_mse) - lambda * FD(L_domain); head parameters see only the MSE
// path and domain-head parameters only the (unreversed) BCE path. Frozen
// flags are ignored here: the analytic gradient of a frozen tensor is
// still well defined.
inline FiniteDiffReport finite_diff_check(Model& model, const MiniBatch& batch,
                                          double tolerance, bool with_mse = true,
                                          bool with_domain = true) {
  if (model.total_param_count() > 10000)
    throw std::invalid_argument("finite_diff_check: model too large");
  compute_gradients(model, batch, with_mse, with_domain);

  std::vector<MatrixXd> analytic;
  for (auto* l : model.all_layers())
    for (auto* g : l->grads()) analytic.push_back(*g);

  enum class Group { kTrunk, kHead, kDomain };
  std::vector<std::pair<nn::Layer*, Group>> layers;
  for (auto* l : model.trunk_layers()) layers.push_back({l, Group::kTrunk});
  for (auto* l : model.head_layers()) layers.push_back({l, Group::kHead});
  for (auto* l : model.domain_layers()) layers.push_back({l, Group::kDomain});

  const double h = 1e-5;
  const double lambda = model.lambda();
  FiniteDiffReport report;
  std::size_t gi = 0;
  for (const auto& [l, group] : layers) {
    for (auto* p : l->params()) {
      const MatrixXd& ga = analytic[gi++];
      for (long j = 0; j < p->cols(); ++j)
        for (long i = 0; i < p->rows(); ++i) {
          const double orig = (*p)(i, j);
          auto fd = [&](bool mse, bool dom) {
            (*p)(i, j) = orig + h;
            const double lp = total_loss(model, batch, mse, dom);
            (*p)(i, j) = orig - h;
            const double lm = total_loss(model, batch, mse, dom);
            (*p)(i, j) = orig;
            return (lp - lm) / (2.0 * h);
          };
          double numeric = 0.0;
          switch (group) {
            case Group::kTrunk:
              if (with_mse) numeric += fd(true, false);
              if (with_domain) numeric -= lambda * fd(false, true);
              break;
            case Group::kHead:
              if (with_mse) numeric = fd(true, false);
              break;
            case Group::kDomain:
              if (with_domain) numeric = fd(false, true);
              break;
          }
          const double denom =
              std::max({std::abs(numeric), std::abs(ga(i, j)), 1e-8});
          report.max_rel_error = std::max(
              report.max_rel_error, std::abs(numeric - ga(i, j)) / denom);
          ++report.params_checked;
        }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

inline long trainable_param_count(Model& model) {
  return model.trainable_param_count();
}

// ---- checkpointing -------------------------------------------------------

inline void save_checkpoint(Model& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::ofstream ps(dir + "/params.bin", std::ios::binary);
  if (!ps) throw IntegrityError("save_checkpoint: cannot write params.bin");
  for (auto* l : model.all_layers())
    for (auto* p : l->params()) {
      std::vector<double> data(p->size());
      for (long j = 0; j < p->cols(); ++j)
        for (long i = 0; i < p->rows(); ++i)
          data[static_cast<std::size_t>(i * p->cols() + j)] = (*p)(i, j);
      write_tensor<double>(ps, {static_cast<std::uint64_t>(p->rows()),
                                static_cast<std::uint64_t>(p->cols())},
                           data);
    }
  ps.close();

  const ArchSpec& a = model.arch();
  nlohmann::json j{
      {"arch",
       {{"input_len", a.input_len},
        {"num_beams", a.num_beams},
        {"conv_channels", a.conv_channels},
        {"kernel", a.kernel},
        {"dense_hidden", a.dense_hidden},
        {"domain_hidden", a.domain_hidden},
        {"extra_ft_layers", a.extra_ft_layers}}},
      {"seed", model.seed()},
      {"lambda", model.lambda()},
      {"params_digest", file_digest(dir + "/params.bin")}};
  nlohmann::json freeze = nlohmann::json::array();
  for (auto* l : model.all_layers())
    freeze.push_back(l->frozen ? 1 : 0);
  j["freeze"] = freeze;
  std::ofstream os(dir + "/model.json");
  if (!os) throw IntegrityError("save_checkpoint: cannot write model.json");
  os << j.dump(2) << "\n";
}

inline Model load_checkpoint(const std::string& dir) {
  std::ifstream is(dir + "/model.json");
  if (!is) throw IntegrityError("load_checkpoint: missing model.json in " + dir);
  nlohmann::json j;
  is >> j;

  if (file_digest(dir + "/params.bin") !=
      j.at("params_digest").get<std::uint64_t>())
    throw IntegrityError("load_checkpoint: params.bin digest mismatch");

  ArchSpec a;
  const auto& ja = j.at("arch");
  a.input_len = ja.at("input_len").get<int>();
  a.num_beams = ja.at("num_beams").get<int>();
  a.conv_channels = ja.at("conv_channels").get<std::vector<int>>();
  a.kernel = ja.at("kernel").get<int>();
  a.dense_hidden = ja.at("dense_hidden").get<int>();
  a.domain_hidden = ja.at("domain_hidden").get<int>();
  a.extra_ft_layers = ja.at("extra_ft_layers").get<bool>();

  Model model(a, j.at("seed").get<std::uint64_t>(),
              j.at("lambda").get<double>());

  std::ifstream ps(dir + "/params.bin", std::ios::binary);
  if (!ps) throw IntegrityError("load_checkpoint: missing params.bin");
  for (auto* l : model.all_layers())
    for (auto* p : l->params()) {
      std::vector<std::uint64_t> dims;
      std::vector<double> data;
      read_tensor(ps, dims, data);
      if (dims.size() != 2 ||
          dims[0] != static_cast<std::uint64_t>(p->rows()) ||
          dims[1] != static_cast<std::uint64_t>(p->cols()))
        throw IntegrityError("load_checkpoint: tensor shape mismatch");
      for (long jj = 0; jj < p->cols(); ++jj)
        for (long i = 0; i < p->rows(); ++i)
          (*p)(i, jj) = data[static_cast<std::size_t>(i * p->cols() + jj)];
    }

  const auto freeze = j.at("freeze").get<std::vector<int>>();
  auto layers = model.all_layers();
  if (freeze.size() != layers.size())
    throw IntegrityError("load_checkpoint: freeze flag count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i]->frozen = freeze[i] != 0;
  return model;
}

}  // namespace beamdapt
