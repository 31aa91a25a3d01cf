#include "tcube/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tcube/error.hpp"

namespace tcube::nn {

std::size_t Network::add_tensor(std::string name, std::size_t size) {
  const std::size_t offset = params.size();
  tensors_.push_back(Tensor{std::move(name), offset, size});
  params.resize(offset + size, 0.0);
  return offset;
}

void softmax(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0;
  for (double& e : v) {
    e = std::exp(e - mx);
    sum += e;
  }
  for (double& e : v) e /= sum;
}

double softmax_cross_entropy(std::span<double> logits, int label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (double e : logits) sum += std::exp(e - mx);
  const double log_z = mx + std::log(sum);
  const double loss = log_z - logits[static_cast<std::size_t>(label)];
  for (std::size_t k = 0; k < logits.size(); ++k) {
    logits[k] = std::exp(logits[k] - log_z) - (static_cast<int>(k) == label ? 1.0 : 0.0);
  }
  return loss;
}

double batch_gradient(const Network& net, std::span<const double> x, std::span<const int> y, std::vector<double>& grad,
                      std::mt19937_64* rng) {
  grad.assign(net.params.size(), 0.0);
  const std::size_t f = net.inputs();
  double loss = 0;
  for (std::size_t i = 0; i < y.size(); ++i) loss += net.backprop(x.data() + i * f, y[i], grad.data(), rng);
  const double inv = 1.0 / static_cast<double>(y.size());
  for (double& g : grad) g *= inv;
  return loss * inv;
}

double mean_loss(const Network& net, std::span<const double> x, std::span<const int> y) {
  const std::size_t f = net.inputs();
  std::vector<double> logits(net.outputs());
  double loss = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    net.forward(x.data() + i * f, logits.data());
    loss += softmax_cross_entropy(logits, y[i]);
  }
  return y.empty() ? 0.0 : loss / static_cast<double>(y.size());
}

FitOptions fit_options_from(const Hyperparams& h) {
  FitOptions o;
  o.learning_rate = h.at("learning_rate").get<double>();
  o.beta1 = h.at("beta1").get<double>();
  o.beta2 = h.at("beta2").get<double>();
  o.batch_size = h.at("batch_size").get<int>();
  o.epochs = h.at("epochs").get<int>();
  o.patience = h.at("patience").get<int>();
  o.validation_fraction = h.at("validation_fraction").get<double>();
  if (!(o.learning_rate > 0) || o.batch_size < 1 || o.epochs < 1 || o.patience < 1 || o.validation_fraction < 0 ||
      o.validation_fraction >= 1 || o.beta1 < 0 || o.beta1 >= 1 || o.beta2 < 0 || o.beta2 >= 1) {
    throw ValidationError("invalid optimizer hyperparameters");
  }
  return o;
}

std::vector<bool> stratified_holdout(std::span<const int> y, int n_classes, double fraction, std::uint64_t seed) {
  std::vector<bool> held(y.size(), false);
  std::mt19937_64 rng(seed);
  for (int k = 0; k < n_classes; ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == k) idx.push_back(i);
    if (idx.size() < 2) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto take = std::min(idx.size() - 1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    for (std::size_t j = 0; j < take; ++j) held[idx[j]] = true;
  }
  return held;
}

FitReport fit(Network& net, const TrainingData& data, const FitOptions& opt) {
  std::mt19937_64 init_rng(opt.seed);
  net.initialize(init_rng);

  if (net.inputs() != data.layout.features()) throw ValidationError("network input size does not match the feature layout");
  const auto held = stratified_holdout(data.y, data.n_classes, opt.validation_fraction, opt.seed + 1);
  std::vector<std::size_t> train_idx;
  std::vector<double> val_x;
  std::vector<int> val_y;
  for (std::size_t i = 0; i < data.n; ++i) {
    if (held[i]) {
      const auto s = data.sample(i);
      val_x.insert(val_x.end(), s.begin(), s.end());
      val_y.push_back(data.y[i]);
    } else {
      train_idx.push_back(i);
    }
  }

  std::mt19937_64 order_rng(opt.seed + 2);
  std::mt19937_64 dropout_rng(opt.seed + 3);
  std::vector<double> m(net.params.size(), 0.0), v(net.params.size(), 0.0), grad;
  std::vector<double> best = net.params;
  double best_loss = std::numeric_limits<double>::infinity();
  int wait = 0;
  long step = 0;
  FitReport report;
  std::vector<double> bx;
  std::vector<int> by;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(train_idx.size(), start + static_cast<std::size_t>(opt.batch_size));
      bx.clear();
      by.clear();
      for (std::size_t j = start; j < end; ++j) {
        const auto s = data.sample(train_idx[j]);
        bx.insert(bx.end(), s.begin(), s.end());
        by.push_back(data.y[train_idx[j]]);
      }
      const double loss = batch_gradient(net, bx, by, grad, opt.use_dropout ? &dropout_rng : nullptr);
      if (!std::isfinite(loss)) {
        throw RuntimeFailure("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                             " (try a lower learning_rate)");
      }
      epoch_loss += loss;
      ++batches;
      ++step;
      const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < net.params.size(); ++p) {
        m[p] = opt.beta1 * m[p] + (1 - opt.beta1) * grad[p];
        v[p] = opt.beta2 * v[p] + (1 - opt.beta2) * grad[p] * grad[p];
        net.params[p] -= opt.learning_rate * (m[p] / c1) / (std::sqrt(v[p] / c2) + opt.epsilon);
      }
    }
    report.epochs_run = epoch + 1;
    report.last_training_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
    if (val_y.empty()) continue;
    const double val = mean_loss(net, val_x, val_y);
    if (!std::isfinite(val)) throw RuntimeFailure("training diverged: non-finite validation loss at epoch " + std::to_string(epoch + 1));
    if (val < best_loss) {
      best_loss = val;
      best = net.params;
      wait = 0;
    } else if (++wait >= opt.patience) {
      break;
    }
  }
  if (!val_y.empty()) net.params = best;
  report.best_validation_loss = val_y.empty() ? report.last_training_loss : best_loss;
  for (double& p : net.params) p = static_cast<double>(static_cast<float>(p));
  return report;
}

void NetClassifier::predict(std::span<const float> features, std::size_t n, std::span<double> out) const {
  const std::size_t f = net_->inputs();
  const std::size_t k = net_->outputs();
  std::vector<double> x(f);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < f; ++j) x[j] = features[r * f + j];
    auto row = out.subspan(r * k, k);
    net_->forward(x.data(), row.data());
    softmax(row);
  }
}

std::vector<std::vector<float>> NetClassifier::blobs() const {
  std::vector<float> b(net_->params.size());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(net_->params[i]);
  return {b};
}

}  // namespace tcube::nn
