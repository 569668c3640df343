#include "postpick/learners.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace postpick::learn {
namespace {

constexpr std::size_t kDim = kFeatureCount;

void check_finite(const FeatureVector& x) {
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
}

void check_training_data(std::span<const FeatureVector> x, std::span<const Label> y) {
  if (x.size() != y.size()) throw TrainingError("feature rows and labels differ in length");
  if (x.size() < 2) throw TrainingError("need at least two training rows");
  bool pos = false, neg = false;
  for (Label l : y) (l == Label::positive ? pos : neg) = true;
  if (!pos || !neg) throw TrainingError("training data contains a single class");
  for (const auto& row : x) {
    for (double v : row)
      if (!std::isfinite(v)) throw TrainingError("non-finite training value");
  }
}

double dot(const FeatureVector& a, const FeatureVector& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < kDim; ++j) s += a[j] * b[j];
  return s;
}

LinearModel train_lda(std::span<const FeatureVector> x, std::span<const Label> y) {
  Eigen::VectorXd mean_pos = Eigen::VectorXd::Zero(kDim), mean_neg = Eigen::VectorXd::Zero(kDim);
  double n_pos = 0.0, n_neg = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Eigen::Map<const Eigen::VectorXd> row(x[i].data(), kDim);
    if (y[i] == Label::positive) {
      mean_pos += row;
      n_pos += 1.0;
    } else {
      mean_neg += row;
      n_neg += 1.0;
    }
  }
  mean_pos /= n_pos;
  mean_neg /= n_neg;

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(kDim, kDim);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Eigen::Map<const Eigen::VectorXd> row(x[i].data(), kDim);
    const Eigen::VectorXd d = row - (y[i] == Label::positive ? mean_pos : mean_neg);
    cov.noalias() += d * d.transpose();
  }
  cov /= std::max(1.0, static_cast<double>(x.size()) - 2.0);
  // Ridge keeps the pooled covariance invertible when a feature is constant.
  const double trace = cov.trace();
  const double ridge = trace > 0.0 ? 1e-6 * trace / kDim : 1e-6;
  cov.diagonal().array() += ridge;

  const Eigen::VectorXd w = cov.ldlt().solve(mean_pos - mean_neg);
  LinearModel m;
  for (std::size_t j = 0; j < kDim; ++j) m.weights[j] = w[static_cast<Eigen::Index>(j)];
  m.offset = -0.5 * w.dot(mean_pos + mean_neg);
  return m;
}

struct TreeBuilder {
  std::span<const FeatureVector> x;
  std::span<const Label> y;
  int max_depth;
  int min_leaf;
  TreeModel model;

  static Label majority(std::size_t pos, std::size_t neg) { return pos > neg ? Label::positive : Label::negative; }

  int build(std::vector<std::size_t>& idx, int depth) {
    const int node_id = static_cast<int>(model.nodes.size());
    model.nodes.emplace_back();
    std::size_t pos = 0;
    for (std::size_t i : idx) pos += y[i] == Label::positive ? 1 : 0;
    const std::size_t neg = idx.size() - pos;
    model.nodes[node_id].label = majority(pos, neg);
    if (depth >= max_depth || pos == 0 || neg == 0 || idx.size() < 2 * static_cast<std::size_t>(min_leaf))
      return node_id;

    const double n = static_cast<double>(idx.size());
    const double parent_gini = 1.0 - (pos * pos + neg * neg) / (n * n);
    // Zero-gain splits are taken too: XOR-like layouts only pay off one level
    // down, and depth bounds the tree anyway.
    double best_impurity = std::numeric_limits<double>::infinity();
    int best_feature = -1;
    double best_threshold = 0.0;

    std::vector<std::size_t> sorted = idx;
    for (std::size_t f = 0; f < kDim; ++f) {
      std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
      std::size_t left_pos = 0;
      for (std::size_t cut = 1; cut < sorted.size(); ++cut) {
        left_pos += y[sorted[cut - 1]] == Label::positive ? 1 : 0;
        const double lo = x[sorted[cut - 1]][f], hi = x[sorted[cut]][f];
        if (lo == hi) continue;
        if (cut < static_cast<std::size_t>(min_leaf) || sorted.size() - cut < static_cast<std::size_t>(min_leaf))
          continue;
        const double nl = static_cast<double>(cut), nr = n - nl;
        const double lp = static_cast<double>(left_pos), ln = nl - lp;
        const double rp = static_cast<double>(pos) - lp, rn = nr - rp;
        const double gl = 1.0 - (lp * lp + ln * ln) / (nl * nl);
        const double gr = 1.0 - (rp * rp + rn * rn) / (nr * nr);
        const double impurity = (nl * gl + nr * gr) / n;
        if (impurity < best_impurity) {
          best_impurity = impurity;
          best_feature = static_cast<int>(f);
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0 || best_impurity > parent_gini + 1e-12) return node_id;

    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) (x[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    model.nodes[node_id].feature = best_feature;
    model.nodes[node_id].threshold = best_threshold;
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    model.nodes[node_id].left = l;
    model.nodes[node_id].right = r;
    return node_id;
  }
};

// Pegasos: stochastic subgradient on the regularized hinge loss, with the
// bias folded in as a constant input. Returns the average of the iterates
// over the final epoch.
LinearModel train_svm(const LearnerSpec& spec, std::span<const FeatureVector> x, std::span<const Label> y) {
  std::mt19937_64 rng(spec.seed);
  const double lambda = spec.lambda;
  const double radius = 1.0 / std::sqrt(lambda);
  std::array<double, kDim + 1> w{};
  std::array<double, kDim + 1> avg{};
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t t = 0;
  std::size_t averaged = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double label = y[i] == Label::positive ? 1.0 : -1.0;
      double margin = w[kDim];
      for (std::size_t j = 0; j < kDim; ++j) margin += w[j] * x[i][j];
      const double shrink = 1.0 - eta * lambda;
      for (double& v : w) v *= shrink;
      if (label * margin < 1.0) {
        for (std::size_t j = 0; j < kDim; ++j) w[j] += eta * label * x[i][j];
        w[kDim] += eta * label;
      }
      double norm = 0.0;
      for (double v : w) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > radius)
        for (double& v : w) v *= radius / norm;
      if (epoch == spec.epochs - 1) {
        for (std::size_t j = 0; j <= kDim; ++j) avg[j] += w[j];
        ++averaged;
      }
    }
  }
  LinearModel m;
  const double scale = averaged > 0 ? 1.0 / static_cast<double>(averaged) : 1.0;
  if (averaged == 0) avg = w;
  for (std::size_t j = 0; j < kDim; ++j) m.weights[j] = avg[j] * scale;
  m.offset = avg[kDim] * scale;
  return m;
}

Label predict_linear(const LinearModel& m, const FeatureVector& x) {
  return dot(m.weights, x) + m.offset >= 0.0 ? Label::positive : Label::negative;
}

Label predict_tree(const TreeModel& m, const FeatureVector& x) {
  int node = 0;
  while (m.nodes[node].feature >= 0) {
    const TreeNode& n = m.nodes[node];
    node = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return m.nodes[node].label;
}

Label predict_knn(const KnnModel& m, const FeatureVector& x) {
  const std::size_t n = m.points.size();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < kDim; ++j) {
      const double diff = m.points[i][j] - x[j];
      d += diff * diff;
    }
    dist[i] = {d, i};
  }
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(m.k), n);
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < k; ++i) pos += m.labels[dist[i].second] == Label::positive ? 1 : 0;
  return 2 * pos > k ? Label::positive : Label::negative;
}

}  // namespace

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::lda: return "lda";
    case LearnerKind::tree: return "tree";
    case LearnerKind::knn: return "knn";
    case LearnerKind::linear_svm: return "linear_svm";
  }
  return "unknown";
}

LearnerKind parse_kind(const std::string& token) {
  if (token == "lda") return LearnerKind::lda;
  if (token == "tree") return LearnerKind::tree;
  if (token == "knn") return LearnerKind::knn;
  if (token == "linear_svm") return LearnerKind::linear_svm;
  throw std::invalid_argument("unknown learner kind '" + token + "'");
}

LearnerSpec random_spec(std::mt19937_64& rng) {
  LearnerSpec spec;
  spec.kind = static_cast<LearnerKind>(std::uniform_int_distribution<int>(0, 3)(rng));
  switch (spec.kind) {
    case LearnerKind::lda: break;
    case LearnerKind::tree:
      spec.max_depth = std::uniform_int_distribution<int>(2, 8)(rng);
      spec.min_leaf = std::uniform_int_distribution<int>(1, 10)(rng);
      break;
    case LearnerKind::knn: spec.k = 2 * std::uniform_int_distribution<int>(0, 12)(rng) + 1; break;
    case LearnerKind::linear_svm:
      spec.lambda = std::pow(10.0, std::uniform_real_distribution<double>(-4.0, 0.0)(rng));
      spec.epochs = 50;
      break;
  }
  spec.seed = rng();
  return spec;
}

FittedLearner train(const LearnerSpec& spec, std::span<const FeatureVector> x, std::span<const Label> y) {
  check_training_data(x, y);
  FittedLearner model{spec, LinearModel{}};
  switch (spec.kind) {
    case LearnerKind::lda: model.parameters = train_lda(x, y); break;
    case LearnerKind::tree: {
      if (spec.max_depth < 0 || spec.min_leaf < 1) throw TrainingError("invalid tree hyperparameters");
      TreeBuilder builder{x, y, spec.max_depth, spec.min_leaf, {}};
      std::vector<std::size_t> idx(x.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      builder.build(idx, 0);
      model.parameters = std::move(builder.model);
      break;
    }
    case LearnerKind::knn: {
      if (spec.k < 1 || spec.k % 2 == 0) throw TrainingError("kNN needs an odd k >= 1");
      model.parameters = KnnModel{spec.k, std::vector<FeatureVector>(x.begin(), x.end()),
                                  std::vector<Label>(y.begin(), y.end())};
      break;
    }
    case LearnerKind::linear_svm:
      if (!(spec.lambda > 0.0) || spec.epochs < 1) throw TrainingError("invalid SVM hyperparameters");
      model.parameters = train_svm(spec, x, y);
      break;
  }
  validate(model);
  return model;
}

Label predict(const FittedLearner& model, const FeatureVector& x) {
  check_finite(x);
  return std::visit(
      [&](const auto& m) -> Label {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) {
          return predict_linear(m, x);
        } else if constexpr (std::is_same_v<T, TreeModel>) {
          return predict_tree(m, x);
        } else {
          return predict_knn(m, x);
        }
      },
      model.parameters);
}

void validate(const FittedLearner& model) {
  std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) {
          for (double w : m.weights)
            if (!std::isfinite(w)) throw TrainingError("non-finite linear weight");
          if (!std::isfinite(m.offset)) throw TrainingError("non-finite linear offset");
        } else if constexpr (std::is_same_v<T, TreeModel>) {
          if (m.nodes.empty()) throw TrainingError("empty tree");
          const int n = static_cast<int>(m.nodes.size());
          for (int i = 0; i < n; ++i) {
            const TreeNode& node = m.nodes[static_cast<std::size_t>(i)];
            if (node.feature < 0) continue;
            if (node.feature >= static_cast<int>(kDim) || !std::isfinite(node.threshold))
              throw TrainingError("invalid tree split");
            // Children always follow their parent, which also rules out cycles.
            if (node.left <= i || node.right <= i || node.left >= n || node.right >= n)
              throw TrainingError("invalid tree child index");
          }
        } else {
          if (m.points.empty() || m.points.size() != m.labels.size()) throw TrainingError("invalid kNN memory");
          if (m.k < 1 || m.k % 2 == 0) throw TrainingError("kNN needs an odd k >= 1");
          for (const auto& p : m.points)
            for (double v : p)
              if (!std::isfinite(v)) throw TrainingError("non-finite kNN point");
        }
      },
      model.parameters);
}

}  // namespace postpick::learn
