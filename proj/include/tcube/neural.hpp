#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcube/model.hpp"

namespace tcube::nn {

// A named slice of the flat parameter vector.
struct Tensor {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Feed-forward classifier over a flat double parameter vector, with explicit backprop.
class Network {
 public:
  virtual ~Network() = default;

  virtual std::size_t inputs() const = 0;
  virtual std::size_t outputs() const = 0;
  virtual void initialize(std::mt19937_64& rng) = 0;
  // Logits of one sample, inference mode (no dropout).
  virtual void forward(const double* x, double* logits) const = 0;
  // Adds the gradient of one sample's cross-entropy loss to `grad` and returns that loss.
  // Dropout masks are drawn from `rng` when it is non-null.
  virtual double backprop(const double* x, int label, double* grad, std::mt19937_64* rng) const = 0;

  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<double> params;

 protected:
  std::size_t add_tensor(std::string name, std::size_t size);

 private:
  std::vector<Tensor> tensors_;
};

void softmax(std::span<double> v);
// Cross-entropy of softmax(logits) at `label`; overwrites logits with d(loss)/d(logits).
double softmax_cross_entropy(std::span<double> logits, int label);

// Mean loss over the batch; `grad` receives the mean gradient.
double batch_gradient(const Network& net, std::span<const double> x, std::span<const int> y, std::vector<double>& grad,
                      std::mt19937_64* rng);
double mean_loss(const Network& net, std::span<const double> x, std::span<const int> y);

struct FitOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  int epochs = 100;
  int patience = 10;
  double validation_fraction = 0.2;
  bool use_dropout = false;
  std::uint64_t seed = 0;
};

FitOptions fit_options_from(const Hyperparams& h);

struct FitReport {
  int epochs_run = 0;
  double best_validation_loss = 0;
  double last_training_loss = 0;
};

// Seeded, per-label holdout of round(fraction * n_label) samples.
std::vector<bool> stratified_holdout(std::span<const int> y, int n_classes, double fraction, std::uint64_t seed);

// Adam with early stopping on the holdout loss; restores the best parameters and
// finally rounds them to float32 so the stored model predicts identically.
FitReport fit(Network& net, const TrainingData& data, const FitOptions& opt);

class NetClassifier final : public Classifier {
 public:
  explicit NetClassifier(std::unique_ptr<Network> net) : net_(std::move(net)) {}
  void predict(std::span<const float> features, std::size_t n, std::span<double> out) const override;
  std::vector<std::vector<float>> blobs() const override;
  const Network& network() const { return *net_; }

 private:
  std::unique_ptr<Network> net_;
};

// Dense ReLU layers followed by a linear softmax output layer. No hidden layers gives softmax regression.
class Mlp final : public Network {
 public:
  Mlp(std::size_t inputs, std::vector<std::size_t> hidden, std::size_t outputs);

  std::size_t inputs() const override { return sizes_.front(); }
  std::size_t outputs() const override { return sizes_.back(); }
  void initialize(std::mt19937_64& rng) override;
  void forward(const double* x, double* logits) const override;
  double backprop(const double* x, int label, double* grad, std::mt19937_64* rng) const override;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> w_off_, b_off_;
};

struct TempCnnShape {
  int n_times = 0;
  int n_bands = 0;
  int filters = 64;
  int kernel = 5;
  int conv_layers = 3;
  int dense = 256;
  int n_classes = 2;
  double dropout = 0.2;
};

// 1D convolutions along time with bands as input channels (same padding, ReLU,
// dropout), then flatten, a dense ReLU layer and a softmax output.
class TempCnn final : public Network {
 public:
  explicit TempCnn(const TempCnnShape& shape);

  std::size_t inputs() const override { return static_cast<std::size_t>(s_.n_times) * static_cast<std::size_t>(s_.n_bands); }
  std::size_t outputs() const override { return static_cast<std::size_t>(s_.n_classes); }
  void initialize(std::mt19937_64& rng) override;
  void forward(const double* x, double* logits) const override;
  double backprop(const double* x, int label, double* grad, std::mt19937_64* rng) const override;
  const TempCnnShape& shape() const { return s_; }

 private:
  struct Activations;
  void run(const double* x, Activations& a, std::mt19937_64* rng) const;

  TempCnnShape s_;
  std::vector<std::size_t> conv_w_, conv_b_;
  std::size_t d1_w_ = 0, d1_b_ = 0, d2_w_ = 0, d2_b_ = 0;
};

}  // namespace tcube::nn
