#include <cmath>

#include "tcube/error.hpp"
#include "tcube/neural.hpp"

namespace tcube {

namespace nn {

struct TempCnn::Activations {
  std::vector<std::vector<double>> in;    // per conv layer input, [time][channel]
  std::vector<std::vector<double>> pre;   // per conv layer pre-activation, [time][filter]
  std::vector<std::vector<double>> mask;  // dropout scale per conv output (empty when inactive)
  std::vector<double> flat;               // last conv output
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  std::vector<double> logits;
};

TempCnn::TempCnn(const TempCnnShape& shape) : s_(shape) {
  if (s_.n_times < 1 || s_.n_bands < 1 || s_.filters < 1 || s_.kernel < 1 || s_.conv_layers < 1 || s_.dense < 1 ||
      s_.n_classes < 1) {
    throw ValidationError("tempcnn: all layer sizes must be positive");
  }
  if (s_.n_times < s_.kernel) throw ValidationError("tempcnn: series length is shorter than the kernel");
  if (s_.dropout < 0 || s_.dropout >= 1) throw ValidationError("tempcnn: dropout must be in [0, 1)");
  const auto F = static_cast<std::size_t>(s_.filters);
  const auto k = static_cast<std::size_t>(s_.kernel);
  for (int l = 0; l < s_.conv_layers; ++l) {
    const auto C = static_cast<std::size_t>(l == 0 ? s_.n_bands : s_.filters);
    conv_w_.push_back(add_tensor("conv" + std::to_string(l) + ".weight", F * C * k));
    conv_b_.push_back(add_tensor("conv" + std::to_string(l) + ".bias", F));
  }
  const auto flat = static_cast<std::size_t>(s_.n_times) * F;
  d1_w_ = add_tensor("dense.weight", static_cast<std::size_t>(s_.dense) * flat);
  d1_b_ = add_tensor("dense.bias", static_cast<std::size_t>(s_.dense));
  d2_w_ = add_tensor("output.weight", static_cast<std::size_t>(s_.n_classes) * static_cast<std::size_t>(s_.dense));
  d2_b_ = add_tensor("output.bias", static_cast<std::size_t>(s_.n_classes));
}

void TempCnn::initialize(std::mt19937_64& rng) {
  auto fill = [&](std::size_t off, std::size_t n, double fan_in, double gain) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    for (std::size_t i = 0; i < n; ++i) params[off + i] = dist(rng);
  };
  const double k = s_.kernel;
  for (int l = 0; l < s_.conv_layers; ++l) {
    const double C = l == 0 ? s_.n_bands : s_.filters;
    fill(conv_w_[static_cast<std::size_t>(l)], static_cast<std::size_t>(s_.filters * C * k), C * k, 2.0);
    std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(conv_b_[static_cast<std::size_t>(l)]), s_.filters, 0.0);
  }
  const double flat = static_cast<double>(s_.n_times) * s_.filters;
  fill(d1_w_, static_cast<std::size_t>(s_.dense * flat), flat, 2.0);
  std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(d1_b_), s_.dense, 0.0);
  fill(d2_w_, static_cast<std::size_t>(s_.n_classes * s_.dense), s_.dense, 1.0);
  std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(d2_b_), s_.n_classes, 0.0);
}

void TempCnn::run(const double* x, Activations& a, std::mt19937_64* rng) const {
  const int T = s_.n_times, F = s_.filters, K = s_.kernel, pad = (s_.kernel - 1) / 2;
  const int L = s_.conv_layers;
  a.in.assign(static_cast<std::size_t>(L), {});
  a.pre.assign(static_cast<std::size_t>(L), {});
  a.mask.assign(static_cast<std::size_t>(L), {});
  a.in[0].assign(x, x + static_cast<std::size_t>(T) * static_cast<std::size_t>(s_.n_bands));
  std::bernoulli_distribution keep(1.0 - s_.dropout);
  const double keep_scale = 1.0 / (1.0 - s_.dropout);

  for (int l = 0; l < L; ++l) {
    const int C = l == 0 ? s_.n_bands : F;
    const double* w = params.data() + conv_w_[static_cast<std::size_t>(l)];
    const double* b = params.data() + conv_b_[static_cast<std::size_t>(l)];
    const auto& in = a.in[static_cast<std::size_t>(l)];
    auto& pre = a.pre[static_cast<std::size_t>(l)];
    pre.assign(static_cast<std::size_t>(T * F), 0.0);
    for (int t = 0; t < T; ++t) {
      for (int f = 0; f < F; ++f) {
        double s = b[f];
        for (int j = 0; j < K; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= T) continue;
          for (int c = 0; c < C; ++c) s += w[(f * C + c) * K + j] * in[static_cast<std::size_t>(src * C + c)];
        }
        pre[static_cast<std::size_t>(t * F + f)] = s;
      }
    }
    std::vector<double> out(pre.size());
    const bool drop = rng != nullptr && s_.dropout > 0;
    if (drop) a.mask[static_cast<std::size_t>(l)].resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      out[i] = std::max(0.0, pre[i]);
      if (drop) {
        const double m = keep(*rng) ? keep_scale : 0.0;
        a.mask[static_cast<std::size_t>(l)][i] = m;
        out[i] *= m;
      }
    }
    if (l + 1 < L) {
      a.in[static_cast<std::size_t>(l) + 1] = std::move(out);
    } else {
      a.flat = std::move(out);
    }
  }

  const std::size_t flat = a.flat.size();
  const auto D = static_cast<std::size_t>(s_.dense);
  a.hidden_pre.assign(D, 0.0);
  a.hidden.assign(D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    double s = params[d1_b_ + d];
    const double* w = params.data() + d1_w_ + d * flat;
    for (std::size_t i = 0; i < flat; ++i) s += w[i] * a.flat[i];
    a.hidden_pre[d] = s;
    a.hidden[d] = std::max(0.0, s);
  }
  const auto nk = static_cast<std::size_t>(s_.n_classes);
  a.logits.assign(nk, 0.0);
  for (std::size_t k = 0; k < nk; ++k) {
    double s = params[d2_b_ + k];
    const double* w = params.data() + d2_w_ + k * D;
    for (std::size_t d = 0; d < D; ++d) s += w[d] * a.hidden[d];
    a.logits[k] = s;
  }
}

void TempCnn::forward(const double* x, double* logits) const {
  Activations a;
  run(x, a, nullptr);
  std::copy(a.logits.begin(), a.logits.end(), logits);
}

double TempCnn::backprop(const double* x, int label, double* grad, std::mt19937_64* rng) const {
  Activations a;
  run(x, a, rng);
  std::vector<double> dlogits = a.logits;
  const double loss = softmax_cross_entropy(dlogits, label);

  const auto D = static_cast<std::size_t>(s_.dense);
  const auto nk = static_cast<std::size_t>(s_.n_classes);
  const std::size_t flat = a.flat.size();
  std::vector<double> dhidden(D, 0.0);
  for (std::size_t k = 0; k < nk; ++k) {
    grad[d2_b_ + k] += dlogits[k];
    const double* w = params.data() + d2_w_ + k * D;
    double* gw = grad + d2_w_ + k * D;
    for (std::size_t d = 0; d < D; ++d) {
      gw[d] += dlogits[k] * a.hidden[d];
      dhidden[d] += w[d] * dlogits[k];
    }
  }
  std::vector<double> dout(flat, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    if (a.hidden_pre[d] <= 0.0) continue;
    const double g = dhidden[d];
    grad[d1_b_ + d] += g;
    const double* w = params.data() + d1_w_ + d * flat;
    double* gw = grad + d1_w_ + d * flat;
    for (std::size_t i = 0; i < flat; ++i) {
      gw[i] += g * a.flat[i];
      dout[i] += w[i] * g;
    }
  }

  const int T = s_.n_times, F = s_.filters, K = s_.kernel, pad = (s_.kernel - 1) / 2;
  for (int l = s_.conv_layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const int C = l == 0 ? s_.n_bands : F;
    const auto& pre = a.pre[li];
    const auto& mask = a.mask[li];
    const auto& in = a.in[li];
    const double* w = params.data() + conv_w_[li];
    double* gw = grad + conv_w_[li];
    double* gb = grad + conv_b_[li];
    std::vector<double> din(l > 0 ? in.size() : 0, 0.0);
    for (int t = 0; t < T; ++t) {
      for (int f = 0; f < F; ++f) {
        const auto i = static_cast<std::size_t>(t * F + f);
        if (pre[i] <= 0.0) continue;
        const double g = dout[i] * (mask.empty() ? 1.0 : mask[i]);
        if (g == 0.0) continue;
        gb[f] += g;
        for (int j = 0; j < K; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= T) continue;
          for (int c = 0; c < C; ++c) {
            const auto wi = static_cast<std::size_t>((f * C + c) * K + j);
            const auto xi = static_cast<std::size_t>(src * C + c);
            gw[wi] += g * in[xi];
            if (l > 0) din[xi] += w[wi] * g;
          }
        }
      }
    }
    dout = std::move(din);
  }
  return loss;
}

}  // namespace nn

namespace {

nn::TempCnnShape shape_from(const Hyperparams& h, const FeatureLayout& layout, int n_classes) {
  nn::TempCnnShape s;
  s.n_times = layout.n_times;
  s.n_bands = layout.n_bands;
  s.filters = h.at("filters").get<int>();
  s.kernel = h.at("kernel").get<int>();
  s.conv_layers = h.at("conv_layers").get<int>();
  s.dense = h.at("dense").get<int>();
  s.dropout = h.at("dropout").get<double>();
  s.n_classes = n_classes;
  return s;
}

}  // namespace

ModelKind tempcnn_kind() {
  static const Hyperparams defaults{{"filters", 64},        {"kernel", 5},          {"conv_layers", 3},
                                    {"dropout", 0.2},       {"dense", 256},         {"learning_rate", 1e-3},
                                    {"beta1", 0.9},         {"beta2", 0.999},       {"batch_size", 64},
                                    {"epochs", 100},        {"patience", 10},       {"validation_fraction", 0.2}};
  ModelKind k;
  k.name = "tempcnn";
  k.resolve = [](const Hyperparams& user) {
    auto h = merge_hyperparams("tempcnn", defaults, user);
    nn::fit_options_from(h);
    return h;
  };
  k.train = [](const TrainingData& d, const Hyperparams& h, std::uint64_t seed) -> std::shared_ptr<const Classifier> {
    auto net = std::make_unique<nn::TempCnn>(shape_from(h, d.layout, d.n_classes));
    auto opt = nn::fit_options_from(h);
    opt.seed = seed;
    opt.use_dropout = true;
    nn::fit(*net, d, opt);
    return std::make_shared<const nn::NetClassifier>(std::move(net));
  };
  k.load = [](const Hyperparams& h, const FeatureLayout& layout, int n_classes,
              std::vector<std::vector<float>> blobs) -> std::shared_ptr<const Classifier> {
    auto net = std::make_unique<nn::TempCnn>(shape_from(h, layout, n_classes));
    if (blobs.size() != 1 || blobs[0].size() != net->params.size()) {
      throw ValidationError("tempcnn: parameter blob size mismatch");
    }
    for (std::size_t i = 0; i < blobs[0].size(); ++i) net->params[i] = blobs[0][i];
    return std::make_shared<const nn::NetClassifier>(std::move(net));
  };
  return k;
}

}  // namespace tcube
