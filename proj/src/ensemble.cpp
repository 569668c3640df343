#include "postpick/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "postpick/parallel.hpp"

namespace postpick::ens {
namespace {

std::size_t round_size(double v) { return static_cast<std::size_t>(std::llround(v)); }

struct ClassRows {
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
};

ClassRows by_class(const LabeledDataset& data, std::span<const std::size_t> rows) {
  ClassRows c;
  for (std::size_t r : rows) (data.labels[r] == Label::positive ? c.pos : c.neg).push_back(r);
  return c;
}

// Positives to place in a part of `part` rows drawn from `pos` + `neg`
// rows, keeping at least one of each class on both sides when possible.
std::size_t stratified_count(std::size_t part, std::size_t pos, std::size_t neg) {
  const std::size_t total = pos + neg;
  std::size_t k = round_size(static_cast<double>(part) * static_cast<double>(pos) / static_cast<double>(total));
  k = std::min({k, pos, part});
  if (part - k > neg) k = part - neg;
  if (k == 0 && pos > 1 && part > 1) k = 1;
  if (k == pos && pos > 1 && part < total) k = pos - 1;
  if (part - k == 0 && neg > 1 && k > 1) --k;
  return k;
}

void check_both(const std::vector<std::size_t>& rows, const LabeledDataset& data, const char* what) {
  bool pos = false, neg = false;
  for (std::size_t r : rows) (data.labels[r] == Label::positive ? pos : neg) = true;
  if (!pos || !neg) throw BuildError(std::string(what) + " split lacks one class");
}

std::vector<FeatureVector> standardized(const LabeledDataset& data, const NormStats& norm,
                                        std::span<const std::size_t> rows) {
  std::vector<FeatureVector> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(norm.apply(data.features[r]));
  return out;
}

std::vector<Label> labels_of(const LabeledDataset& data, std::span<const std::size_t> rows) {
  std::vector<Label> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(data.labels[r]);
  return out;
}

struct FoldScore {
  double balanced_accuracy = 0.0;
  double specificity = 0.0;
};

}  // namespace

LabeledDataset LabeledDataset::from_table(const FeatureTable& table) {
  if (!table.labels) throw BuildError("feature table has no label column");
  return LabeledDataset{table.ids, table.features, *table.labels};
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  for (std::size_t r : rows) {
    out.ids.push_back(ids.empty() ? r : ids[r]);
    out.features.push_back(features[r]);
    out.labels.push_back(labels[r]);
  }
  return out;
}

TrainingSplit split_training(const LabeledDataset& data, std::mt19937_64& rng) {
  const std::size_t n = data.size();
  if (data.labels.size() != n) throw BuildError("features and labels differ in length");
  if (n < 20) throw BuildError("need at least 20 labeled rows, got " + std::to_string(n));
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  ClassRows rows = by_class(data, all);
  if (rows.pos.empty() || rows.neg.empty()) throw BuildError("training data contains a single class");

  std::shuffle(rows.pos.begin(), rows.pos.end(), rng);
  std::shuffle(rows.neg.begin(), rows.neg.end(), rng);

  TrainingSplit split;
  const std::size_t n_val = round_size(kValidationFraction * static_cast<double>(n));
  const std::size_t val_pos = stratified_count(n_val, rows.pos.size(), rows.neg.size());
  const std::size_t val_neg = n_val - val_pos;
  split.validation.assign(rows.pos.begin(), rows.pos.begin() + static_cast<std::ptrdiff_t>(val_pos));
  split.validation.insert(split.validation.end(), rows.neg.begin(), rows.neg.begin() + static_cast<std::ptrdiff_t>(val_neg));
  split.pool.assign(rows.pos.begin() + static_cast<std::ptrdiff_t>(val_pos), rows.pos.end());
  split.pool.insert(split.pool.end(), rows.neg.begin() + static_cast<std::ptrdiff_t>(val_neg), rows.neg.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.pool.begin(), split.pool.end());
  check_both(split.validation, data, "validation");
  check_both(split.pool, data, "pool");

  ClassRows pool = by_class(data, split.pool);
  const std::size_t n_train = round_size(kInnerTrainFraction * static_cast<double>(split.pool.size()));
  const std::size_t train_pos = stratified_count(n_train, pool.pos.size(), pool.neg.size());
  const std::size_t train_neg = n_train - train_pos;
  for (InnerSplit& inner : split.inner) {
    std::shuffle(pool.pos.begin(), pool.pos.end(), rng);
    std::shuffle(pool.neg.begin(), pool.neg.end(), rng);
    const auto tp = static_cast<std::ptrdiff_t>(train_pos), tn = static_cast<std::ptrdiff_t>(train_neg);
    inner.train.assign(pool.pos.begin(), pool.pos.begin() + tp);
    inner.train.insert(inner.train.end(), pool.neg.begin(), pool.neg.begin() + tn);
    inner.eval.assign(pool.pos.begin() + tp, pool.pos.end());
    inner.eval.insert(inner.eval.end(), pool.neg.begin() + tn, pool.neg.end());
    std::sort(inner.train.begin(), inner.train.end());
    std::sort(inner.eval.begin(), inner.eval.end());
    check_both(inner.train, data, "inner training");
    check_both(inner.eval, data, "inner evaluation");
  }
  return split;
}

NormStats NormStats::fit(const LabeledDataset& data, std::span<const std::size_t> rows) {
  NormStats s;
  if (rows.empty()) throw BuildError("cannot fit normalization on zero rows");
  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    double mean = 0.0;
    for (std::size_t r : rows) mean += data.features[r][j];
    mean /= n;
    double var = 0.0;
    for (std::size_t r : rows) {
      const double d = data.features[r][j] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / n);
    s.means[j] = mean;
    s.zero_variance[j] = !(sd > 0.0);
    s.stds[j] = s.zero_variance[j] ? 1.0 : sd;
  }
  return s;
}

FeatureVector NormStats::apply(const FeatureVector& x) const {
  FeatureVector out{};
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    if (!std::isfinite(x[j])) throw std::invalid_argument("non-finite feature value");
    out[j] = (x[j] - means[j]) / stds[j];
  }
  return out;
}

Ensemble build_ensemble(const LabeledDataset& data, const BuildOptions& options) {
  if (options.pool_size == 0) throw BuildError("candidate pool is empty");
  // Spec draws come from their own stream so the split is unaffected by pool size.
  std::mt19937_64 spec_rng(options.seed ^ 0x5deece66dULL);
  std::vector<learn::LearnerSpec> specs;
  specs.reserve(options.pool_size);
  for (std::size_t i = 0; i < options.pool_size; ++i) specs.push_back(learn::random_spec(spec_rng));
  return build_ensemble(data, specs, options);
}

Ensemble build_ensemble(const LabeledDataset& data, const std::vector<learn::LearnerSpec>& candidates,
                        const BuildOptions& options) {
  if (candidates.empty()) throw BuildError("candidate pool is empty");
  std::mt19937_64 rng(options.seed);
  const TrainingSplit split = split_training(data, rng);

  Ensemble ensemble;
  ensemble.build_seed = options.seed;
  ensemble.norm = NormStats::fit(data, split.pool);

  // Inner fits: predictions of every candidate on every evaluation set.
  struct Fold {
    std::vector<FeatureVector> train_x;
    std::vector<Label> train_y;
    std::vector<FeatureVector> eval_x;
    std::vector<Label> eval_y;
  };
  std::vector<Fold> folds(kInnerSplits);
  for (std::size_t f = 0; f < kInnerSplits; ++f) {
    folds[f].train_x = standardized(data, ensemble.norm, split.inner[f].train);
    folds[f].train_y = labels_of(data, split.inner[f].train);
    folds[f].eval_x = standardized(data, ensemble.norm, split.inner[f].eval);
    folds[f].eval_y = labels_of(data, split.inner[f].eval);
  }

  const std::size_t n_cand = candidates.size();
  // predictions[c * kInnerSplits + f][i] = 1 when candidate c votes + on eval row i of fold f.
  std::vector<std::vector<unsigned char>> predictions(n_cand * kInnerSplits);
  std::vector<unsigned char> usable(n_cand * kInnerSplits, 0);
  parallel_for(n_cand * kInnerSplits, options.threads, [&](std::size_t job) {
    const std::size_t c = job / kInnerSplits, f = job % kInnerSplits;
    try {
      const auto model = learn::train(candidates[c], folds[f].train_x, folds[f].train_y);
      auto& out = predictions[job];
      out.resize(folds[f].eval_x.size());
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = learn::predict(model, folds[f].eval_x[i]) == Label::positive ? 1 : 0;
      usable[job] = 1;
    } catch (const learn::TrainingError&) {
      usable[job] = 0;
    }
  });

  std::vector<char> available(n_cand, 0);
  for (std::size_t c = 0; c < n_cand; ++c) {
    bool ok = true;
    for (std::size_t f = 0; f < kInnerSplits; ++f) ok = ok && usable[c * kInnerSplits + f];
    available[c] = ok ? 1 : 0;
  }
  if (std::none_of(available.begin(), available.end(), [](char a) { return a != 0; }))
    throw BuildError("no candidate learner could be trained");

  // Greedy forward selection on the mean balanced accuracy of the vote.
  std::vector<std::vector<int>> votes(kInnerSplits);
  for (std::size_t f = 0; f < kInnerSplits; ++f) votes[f].assign(folds[f].eval_y.size(), 0);
  std::size_t members = 0;
  double current = -1.0;
  std::vector<std::size_t> selected;

  auto score_with = [&](std::optional<std::size_t> candidate) {
    FoldScore mean;
    const std::size_t m = members + (candidate ? 1 : 0);
    for (std::size_t f = 0; f < kInnerSplits; ++f) {
      const auto* pred = candidate ? &predictions[*candidate * kInnerSplits + f] : nullptr;
      std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
      for (std::size_t i = 0; i < votes[f].size(); ++i) {
        const int v = votes[f][i] + (pred ? (*pred)[i] : 0);
        const bool positive = 2 * static_cast<std::size_t>(v) > m;
        if (folds[f].eval_y[i] == Label::positive) {
          (positive ? tp : fn)++;
        } else {
          (positive ? fp : tn)++;
        }
      }
      const double sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
      const double spec = static_cast<double>(tn) / static_cast<double>(tn + fp);
      mean.balanced_accuracy += (sens + spec) / 2.0;
      mean.specificity += spec;
    }
    mean.balanced_accuracy /= static_cast<double>(kInnerSplits);
    mean.specificity /= static_cast<double>(kInnerSplits);
    return mean;
  };

  while (members < kMaxMembers) {
    std::optional<std::size_t> best;
    FoldScore best_score;
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (!available[c]) continue;
      const FoldScore s = score_with(c);
      if (!best || s.balanced_accuracy > best_score.balanced_accuracy ||
          (s.balanced_accuracy == best_score.balanced_accuracy && s.specificity > best_score.specificity)) {
        best = c;
        best_score = s;
      }
    }
    if (!best || !(best_score.balanced_accuracy > current)) break;
    available[*best] = 0;
    ++members;
    for (std::size_t f = 0; f < kInnerSplits; ++f) {
      const auto& pred = predictions[*best * kInnerSplits + f];
      for (std::size_t i = 0; i < votes[f].size(); ++i) votes[f][i] += pred[i];
    }
    current = best_score.balanced_accuracy;
    selected.push_back(*best);
    ensemble.selection.push_back({*best, best_score.balanced_accuracy, best_score.specificity});
  }

  // Bagging: one bootstrap refit of each selected spec on the full pool.
  const auto pool_x = standardized(data, ensemble.norm, split.pool);
  const auto pool_y = labels_of(data, split.pool);
  std::vector<std::vector<std::size_t>> samples(selected.size());
  std::uniform_int_distribution<std::size_t> pick(0, split.pool.size() - 1);
  for (auto& sample : samples) {
    bool pos = false, neg = false;
    while (!pos || !neg) {
      sample.resize(split.pool.size());
      pos = neg = false;
      for (auto& s : sample) {
        s = pick(rng);
        (pool_y[s] == Label::positive ? pos : neg) = true;
      }
    }
  }
  ensemble.members.resize(selected.size());
  parallel_for(selected.size(), options.threads, [&](std::size_t m) {
    std::vector<FeatureVector> bx;
    std::vector<Label> by;
    bx.reserve(samples[m].size());
    by.reserve(samples[m].size());
    for (std::size_t s : samples[m]) {
      bx.push_back(pool_x[s]);
      by.push_back(pool_y[s]);
    }
    ensemble.members[m] = learn::train(candidates[selected[m]], bx, by);
  });

  std::vector<Label> truth, predicted;
  std::vector<double> scores;
  for (std::size_t r : split.validation) {
    const Vote v = ensemble_predict(ensemble, data.features[r]);
    truth.push_back(data.labels[r]);
    predicted.push_back(v.label);
    scores.push_back(v.score);
  }
  ensemble.validation_report = metrics::summarize(metrics::confusion(truth, predicted));
  ensemble.validation_report.auc = metrics::roc_auc(scores, truth);
  return ensemble;
}

Vote ensemble_predict(const Ensemble& e, const FeatureVector& x) {
  if (e.members.empty()) throw std::invalid_argument("ensemble has no members");
  const FeatureVector z = e.norm.apply(x);
  std::size_t positive = 0;
  for (const auto& m : e.members) positive += learn::predict(m, z) == Label::positive ? 1 : 0;
  Vote v;
  v.score = static_cast<double>(positive) / static_cast<double>(e.members.size());
  v.label = 2 * positive > e.members.size() ? Label::positive : Label::negative;
  return v;
}

}  // namespace postpick::ens
