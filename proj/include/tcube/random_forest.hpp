#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tcube/model.hpp"

namespace tcube::rf {

struct Node {
  int feature = -1;  // -1 marks a leaf
  float threshold = 0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  std::vector<float> dist;  // class frequencies, leaves only
};

struct Tree {
  std::vector<Node> nodes;  // nodes[0] is the root

  std::span<const float> leaf_for(std::span<const float> x) const;
};

struct Options {
  int trees = 100;
  int mtry = 0;  // 0 means floor(sqrt(F))
  int max_depth = 0;  // 0 means unlimited
  int min_samples_split = 2;
  bool bootstrap = true;
};

Options options_from(const Hyperparams& h);

// CART with Gini impurity. Candidate thresholds are midpoints between consecutive
// distinct values; the first best split in scan order wins ties.
Tree grow_tree(const TrainingData& data, const Options& opt, std::uint64_t seed);

class Forest final : public Classifier {
 public:
  explicit Forest(int n_classes, std::vector<Tree> trees) : n_classes_(n_classes), trees_(std::move(trees)) {}

  void predict(std::span<const float> features, std::size_t n, std::span<double> out) const override;
  std::vector<std::vector<float>> blobs() const override;
  static std::shared_ptr<const Forest> from_blobs(int n_classes, const std::vector<std::vector<float>>& blobs);

  const std::vector<Tree>& trees() const { return trees_; }

 private:
  int n_classes_;
  std::vector<Tree> trees_;
};

Forest train_forest(const TrainingData& data, const Options& opt, std::uint64_t seed);

}  // namespace tcube::rf
