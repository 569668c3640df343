#pragma once

// Elementary binary classifiers. All of them operate on standardized
// feature vectors; standardization is the caller's job.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "postpick/feature_vector.hpp"
#include "postpick/image.hpp"

namespace postpick::learn {

enum class LearnerKind { lda, tree, knn, linear_svm };

std::string to_string(LearnerKind kind);
LearnerKind parse_kind(const std::string& token);

/// Hyperparameters; only the fields of `kind` are meaningful.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::lda;
  int max_depth = 4;      // tree, 2..8
  int min_leaf = 1;       // tree, 1..10
  int k = 1;              // knn, odd 1..25
  double lambda = 1e-2;   // linear_svm, log-uniform in [1e-4, 1]
  int epochs = 50;        // linear_svm
  std::uint64_t seed = 0;

  bool operator==(const LearnerSpec&) const = default;
};

/// sign(w . x + b), with 0 resolved to positive.
struct LinearModel {
  FeatureVector weights{};
  double offset = 0.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;     // taken when x[feature] <= threshold
  int right = -1;
  Label label = Label::negative;
};

struct TreeModel {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
};

struct KnnModel {
  int k = 1;
  std::vector<FeatureVector> points;
  std::vector<Label> labels;
};

using LearnerParameters = std::variant<LinearModel, TreeModel, KnnModel>;

struct FittedLearner {
  LearnerSpec spec;
  LearnerParameters parameters;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

LearnerSpec random_spec(std::mt19937_64& rng);

FittedLearner train(const LearnerSpec& spec, std::span<const FeatureVector> x, std::span<const Label> y);

Label predict(const FittedLearner& model, const FeatureVector& x);

/// Throws unless every parameter is finite and the structure is usable.
void validate(const FittedLearner& model);

}  // namespace postpick::learn
