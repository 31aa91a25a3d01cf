#include "tcube/random_forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tcube/error.hpp"
#include "tcube/parallel.hpp"

namespace tcube {

namespace rf {

std::span<const float> Tree::leaf_for(std::span<const float> x) const {
  const Node* n = &nodes[0];
  while (n->feature >= 0) n = &nodes[static_cast<std::size_t>(x[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right)];
  return n->dist;
}

Options options_from(const Hyperparams& h) {
  Options o;
  o.trees = h.at("trees").get<int>();
  o.mtry = h.at("mtry").get<int>();
  o.max_depth = h.at("max_depth").get<int>();
  o.min_samples_split = h.at("min_samples_split").get<int>();
  o.bootstrap = h.at("bootstrap").get<bool>();
  if (o.trees < 1) throw ValidationError("rf: trees must be at least 1");
  if (o.mtry < 0 || o.max_depth < 0 || o.min_samples_split < 2) throw ValidationError("rf: invalid tree parameters");
  return o;
}

namespace {

double gini(const std::vector<int>& counts, int total) {
  if (total == 0) return 0;
  double s = 0;
  for (int c : counts) {
    const double p = static_cast<double>(c) / total;
    s += p * p;
  }
  return 1.0 - s;
}

struct Split {
  int feature = -1;
  float threshold = 0;
  double impurity = std::numeric_limits<double>::infinity();
};

struct Builder {
  const TrainingData& data;
  const Options& opt;
  std::mt19937_64 rng;
  Tree tree;
  int n_features;
  int mtry;

  // Scans one feature over samples [idx]; updates best when strictly better.
  void scan(int f, const std::vector<std::size_t>& idx, Split& best) {
    const int K = data.n_classes;
    std::vector<std::pair<float, int>> v;
    v.reserve(idx.size());
    for (std::size_t i : idx) v.emplace_back(data.sample(i)[static_cast<std::size_t>(f)], data.y[i]);
    std::sort(v.begin(), v.end());
    std::vector<int> left(static_cast<std::size_t>(K), 0), right(static_cast<std::size_t>(K), 0);
    for (const auto& p : v) ++right[static_cast<std::size_t>(p.second)];
    const int n = static_cast<int>(v.size());
    for (int i = 0; i + 1 < n; ++i) {
      ++left[static_cast<std::size_t>(v[static_cast<std::size_t>(i)].second)];
      --right[static_cast<std::size_t>(v[static_cast<std::size_t>(i)].second)];
      const float a = v[static_cast<std::size_t>(i)].first;
      const float b = v[static_cast<std::size_t>(i) + 1].first;
      if (!(a < b)) continue;
      const int nl = i + 1;
      const int nr = n - nl;
      const double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
      if (imp < best.impurity) {
        float t = static_cast<float>(0.5 * (static_cast<double>(a) + b));
        if (!(t < b)) t = a;
        best = Split{f, t, imp};
      }
    }
  }

  int make_leaf(const std::vector<std::size_t>& idx) {
    Node leaf;
    leaf.dist.assign(static_cast<std::size_t>(data.n_classes), 0.0f);
    std::vector<int> counts(static_cast<std::size_t>(data.n_classes), 0);
    for (std::size_t i : idx) ++counts[static_cast<std::size_t>(data.y[i])];
    for (std::size_t k = 0; k < counts.size(); ++k) {
      leaf.dist[k] = static_cast<float>(static_cast<double>(counts[k]) / static_cast<double>(idx.size()));
    }
    tree.nodes.push_back(std::move(leaf));
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  int build(std::vector<std::size_t> idx, int depth) {
    bool pure = true;
    for (std::size_t i : idx) pure = pure && data.y[i] == data.y[idx.front()];
    if (pure || static_cast<int>(idx.size()) < opt.min_samples_split || (opt.max_depth > 0 && depth >= opt.max_depth)) {
      return make_leaf(idx);
    }
    // partial Fisher-Yates: the first mtry entries are the candidate features
    std::vector<int> features(static_cast<std::size_t>(n_features));
    std::iota(features.begin(), features.end(), 0);
    for (int k = 0; k < mtry; ++k) {
      std::uniform_int_distribution<int> pick(k, n_features - 1);
      std::swap(features[static_cast<std::size_t>(k)], features[static_cast<std::size_t>(pick(rng))]);
    }
    Split best;
    for (int k = 0; k < mtry; ++k) scan(features[static_cast<std::size_t>(k)], idx, best);
    // every sampled feature was constant here; fall back to the rest
    for (int k = mtry; k < n_features && best.feature < 0; ++k) scan(features[static_cast<std::size_t>(k)], idx, best);
    if (best.feature < 0) return make_leaf(idx);

    std::vector<std::size_t> li, ri;
    for (std::size_t i : idx) {
      (data.sample(i)[static_cast<std::size_t>(best.feature)] <= best.threshold ? li : ri).push_back(i);
    }
    idx.clear();
    idx.shrink_to_fit();
    const int self = static_cast<int>(tree.nodes.size());
    Node node;
    node.feature = best.feature;
    node.threshold = best.threshold;
    tree.nodes.push_back(std::move(node));
    const int l = build(std::move(li), depth + 1);
    const int r = build(std::move(ri), depth + 1);
    tree.nodes[static_cast<std::size_t>(self)].left = l;
    tree.nodes[static_cast<std::size_t>(self)].right = r;
    return self;
  }
};

}  // namespace

Tree grow_tree(const TrainingData& data, const Options& opt, std::uint64_t seed) {
  Builder b{data, opt, std::mt19937_64(seed), {}, static_cast<int>(data.layout.features()), 0};
  b.mtry = opt.mtry > 0 ? std::min(opt.mtry, b.n_features)
                        : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(b.n_features)))));
  std::vector<std::size_t> idx(data.n);
  if (opt.bootstrap) {
    std::uniform_int_distribution<std::size_t> pick(0, data.n - 1);
    for (auto& i : idx) i = pick(b.rng);
  } else {
    std::iota(idx.begin(), idx.end(), 0);
  }
  b.build(std::move(idx), 0);
  return std::move(b.tree);
}

Forest train_forest(const TrainingData& data, const Options& opt, std::uint64_t seed) {
  if (data.n == 0) throw ValidationError("rf: empty training set");
  std::vector<Tree> trees(static_cast<std::size_t>(opt.trees));
  parallel_for(trees.size(), default_workers(), [&](std::size_t i) { trees[i] = grow_tree(data, opt, seed + i); });
  return Forest(data.n_classes, std::move(trees));
}

void Forest::predict(std::span<const float> features, std::size_t n, std::span<double> out) const {
  const std::size_t f = features.size() / std::max<std::size_t>(n, 1);
  const auto K = static_cast<std::size_t>(n_classes_);
  for (std::size_t r = 0; r < n; ++r) {
    double* row = out.data() + r * K;
    std::fill(row, row + K, 0.0);
    const auto x = features.subspan(r * f, f);
    for (const auto& t : trees_) {
      const auto d = t.leaf_for(x);
      for (std::size_t k = 0; k < K; ++k) row[k] += d[k];
    }
    double sum = 0;
    for (std::size_t k = 0; k < K; ++k) sum += row[k];
    for (std::size_t k = 0; k < K; ++k) row[k] /= sum;
  }
}

// Per tree: [n_nodes, then per node: feature, threshold, left, right, K class frequencies].
std::vector<std::vector<float>> Forest::blobs() const {
  std::vector<std::vector<float>> out;
  for (const auto& t : trees_) {
    std::vector<float> b;
    b.push_back(static_cast<float>(t.nodes.size()));
    for (const auto& n : t.nodes) {
      b.push_back(static_cast<float>(n.feature));
      b.push_back(n.threshold);
      b.push_back(static_cast<float>(n.left));
      b.push_back(static_cast<float>(n.right));
      for (int k = 0; k < n_classes_; ++k) b.push_back(n.dist.empty() ? 0.0f : n.dist[static_cast<std::size_t>(k)]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::shared_ptr<const Forest> Forest::from_blobs(int n_classes, const std::vector<std::vector<float>>& blobs) {
  std::vector<Tree> trees;
  const std::size_t stride = 4 + static_cast<std::size_t>(n_classes);
  for (const auto& b : blobs) {
    if (b.empty()) throw ValidationError("rf: empty tree blob");
    const auto n_nodes = static_cast<std::size_t>(b[0]);
    if (b.size() != 1 + n_nodes * stride || n_nodes == 0) throw ValidationError("rf: tree blob has inconsistent length");
    Tree t;
    for (std::size_t i = 0; i < n_nodes; ++i) {
      const float* p = b.data() + 1 + i * stride;
      Node n;
      n.feature = static_cast<int>(p[0]);
      n.threshold = p[1];
      n.left = static_cast<int>(p[2]);
      n.right = static_cast<int>(p[3]);
      if (n.feature < 0) {
        n.dist.assign(p + 4, p + stride);
      } else if (n.left < 0 || n.right < 0 || static_cast<std::size_t>(n.left) >= n_nodes ||
                 static_cast<std::size_t>(n.right) >= n_nodes) {
        throw ValidationError("rf: tree blob has dangling child index");
      }
      t.nodes.push_back(std::move(n));
    }
    trees.push_back(std::move(t));
  }
  if (trees.empty()) throw ValidationError("rf: model has no trees");
  return std::make_shared<const Forest>(n_classes, std::move(trees));
}

}  // namespace rf

ModelKind random_forest_kind() {
  static const Hyperparams defaults{
      {"trees", 100}, {"mtry", 0}, {"max_depth", 0}, {"min_samples_split", 2}, {"bootstrap", true}};
  ModelKind k;
  k.name = "rf";
  k.resolve = [](const Hyperparams& user) {
    auto h = merge_hyperparams("rf", defaults, user);
    rf::options_from(h);
    return h;
  };
  k.train = [](const TrainingData& d, const Hyperparams& h, std::uint64_t seed) -> std::shared_ptr<const Classifier> {
    return std::make_shared<const rf::Forest>(rf::train_forest(d, rf::options_from(h), seed));
  };
  k.load = [](const Hyperparams& h, const FeatureLayout& layout, int n_classes,
              std::vector<std::vector<float>> blobs) -> std::shared_ptr<const Classifier> {
    const auto forest = rf::Forest::from_blobs(n_classes, blobs);
    for (const auto& t : forest->trees()) {
      for (const auto& n : t.nodes) {
        if (n.feature >= static_cast<int>(layout.features())) throw ValidationError("rf: split feature outside layout");
      }
    }
    (void)h;
    return forest;
  };
  return k;
}

}  // namespace tcube
