#include <cmath>

#include "tcube/error.hpp"
#include "tcube/neural.hpp"

namespace tcube {

namespace nn {

Mlp::Mlp(std::size_t inputs, std::vector<std::size_t> hidden, std::size_t outputs) {
  sizes_.push_back(inputs);
  sizes_.insert(sizes_.end(), hidden.begin(), hidden.end());
  sizes_.push_back(outputs);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    w_off_.push_back(add_tensor("dense" + std::to_string(l) + ".weight", sizes_[l + 1] * sizes_[l]));
    b_off_.push_back(add_tensor("dense" + std::to_string(l) + ".bias", sizes_[l + 1]));
  }
}

void Mlp::initialize(std::mt19937_64& rng) {
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const double gain = l + 1 < layers ? 2.0 : 1.0;  // He for ReLU layers
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(sizes_[l])));
    for (std::size_t i = 0; i < sizes_[l + 1] * sizes_[l]; ++i) params[w_off_[l] + i] = dist(rng);
    for (std::size_t i = 0; i < sizes_[l + 1]; ++i) params[b_off_[l] + i] = 0.0;
  }
}

void Mlp::forward(const double* x, double* logits) const {
  std::vector<double> a(x, x + sizes_[0]), z;
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    z.assign(out, 0.0);
    const double* w = params.data() + w_off_[l];
    const double* b = params.data() + b_off_[l];
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * a[i];
      z[o] = l + 1 < layers ? std::max(0.0, s) : s;
    }
    a.swap(z);
  }
  std::copy(a.begin(), a.end(), logits);
}

double Mlp::backprop(const double* x, int label, double* grad, std::mt19937_64*) const {
  const std::size_t layers = sizes_.size() - 1;
  std::vector<std::vector<double>> acts(layers + 1);
  acts[0].assign(x, x + sizes_[0]);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    acts[l + 1].assign(out, 0.0);
    const double* w = params.data() + w_off_[l];
    const double* b = params.data() + b_off_[l];
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * acts[l][i];
      acts[l + 1][o] = l + 1 < layers ? std::max(0.0, s) : s;
    }
  }
  std::vector<double> delta = acts[layers];
  const double loss = softmax_cross_entropy(delta, label);
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const double* w = params.data() + w_off_[l];
    double* gw = grad + w_off_[l];
    double* gb = grad + b_off_[l];
    std::vector<double> prev(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      for (std::size_t i = 0; i < in; ++i) {
        gw[o * in + i] += d * acts[l][i];
        prev[i] += w[o * in + i] * d;
      }
    }
    if (l > 0) {
      for (std::size_t i = 0; i < in; ++i)
        if (acts[l][i] <= 0.0) prev[i] = 0.0;
    }
    delta.swap(prev);
  }
  return loss;
}

}  // namespace nn

namespace {

std::vector<std::size_t> hidden_sizes(const Hyperparams& h) {
  std::vector<std::size_t> out;
  for (const auto& v : h.at("hidden")) {
    if (!v.is_number_integer() || v.get<long>() < 1) throw ValidationError("mlp: hidden layer sizes must be positive integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

}  // namespace

ModelKind mlp_kind() {
  static const Hyperparams defaults{{"hidden", {256, 128}}, {"learning_rate", 1e-3}, {"beta1", 0.9},
                                    {"beta2", 0.999},       {"batch_size", 64},      {"epochs", 100},
                                    {"patience", 10},       {"validation_fraction", 0.2}};
  ModelKind k;
  k.name = "mlp";
  k.resolve = [](const Hyperparams& user) {
    auto h = merge_hyperparams("mlp", defaults, user);
    hidden_sizes(h);
    nn::fit_options_from(h);
    return h;
  };
  k.train = [](const TrainingData& d, const Hyperparams& h, std::uint64_t seed) -> std::shared_ptr<const Classifier> {
    auto net = std::make_unique<nn::Mlp>(d.layout.features(), hidden_sizes(h), static_cast<std::size_t>(d.n_classes));
    auto opt = nn::fit_options_from(h);
    opt.seed = seed;
    nn::fit(*net, d, opt);
    return std::make_shared<const nn::NetClassifier>(std::move(net));
  };
  k.load = [](const Hyperparams& h, const FeatureLayout& layout, int n_classes,
              std::vector<std::vector<float>> blobs) -> std::shared_ptr<const Classifier> {
    auto net = std::make_unique<nn::Mlp>(layout.features(), hidden_sizes(h), static_cast<std::size_t>(n_classes));
    if (blobs.size() != 1 || blobs[0].size() != net->params.size()) throw ValidationError("mlp: parameter blob size mismatch");
    for (std::size_t i = 0; i < blobs[0].size(); ++i) net->params[i] = blobs[0][i];
    return std::make_shared<const nn::NetClassifier>(std::move(net));
  };
  return k;
}

}  // namespace tcube
