#pragma once

// Majority-vote ensemble built by forward selection over a random pool of
// elementary learners, with bagged refits of the selected specs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

#include "postpick/feature_vector.hpp"
#include "postpick/imgio.hpp"
#include "postpick/learners.hpp"
#include "postpick/metrics.hpp"

namespace postpick::ens {

inline constexpr std::size_t kInnerSplits = 5;
inline constexpr double kValidationFraction = 0.10;
inline constexpr double kInnerTrainFraction = 0.80;
inline constexpr std::size_t kMaxMembers = 51;
inline constexpr int kModelFormatVersion = 1;

struct LabeledDataset {
  std::vector<std::size_t> ids;
  std::vector<FeatureVector> features;
  std::vector<Label> labels;

  std::size_t size() const { return features.size(); }
  /// Requires a labeled table.
  static LabeledDataset from_table(const FeatureTable& table);
  LabeledDataset subset(std::span<const std::size_t> rows) const;
};

struct InnerSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

/// Row indices into the dataset.
struct TrainingSplit {
  std::vector<std::size_t> validation;
  std::vector<std::size_t> pool;
  std::array<InnerSplit, kInnerSplits> inner;
};

/// Stratified 10% holdout, then five independent stratified 80/20 splits of
/// the remaining pool.
TrainingSplit split_training(const LabeledDataset& data, std::mt19937_64& rng);

struct NormStats {
  FeatureVector means{};
  FeatureVector stds{};
  std::array<bool, kFeatureCount> zero_variance{};

  static NormStats fit(const LabeledDataset& data, std::span<const std::size_t> rows);
  FeatureVector apply(const FeatureVector& x) const;
};

struct SelectionStep {
  std::size_t candidate = 0;
  double mean_balanced_accuracy = 0.0;
  double mean_specificity = 0.0;
};

struct Ensemble {
  std::vector<learn::FittedLearner> members;
  NormStats norm;
  metrics::EvaluationReport validation_report;
  std::uint64_t build_seed = 0;
  /// Greedy additions in order; steps.front() is the best single candidate.
  std::vector<SelectionStep> selection;
};

struct BuildOptions {
  std::size_t pool_size = 48;
  std::uint64_t seed = 1;
  int threads = 0;
};

class BuildError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Ensemble build_ensemble(const LabeledDataset& data, const BuildOptions& options);

/// Same procedure over a caller-supplied candidate pool.
Ensemble build_ensemble(const LabeledDataset& data, const std::vector<learn::LearnerSpec>& candidates,
                        const BuildOptions& options);

struct Vote {
  Label label = Label::negative;
  double score = 0.0;  // fraction of members voting +
};

/// Positive only on a strict majority; an exact tie is negative.
Vote ensemble_predict(const Ensemble& e, const FeatureVector& x);

class ModelError : public std::runtime_error {
 public:
  enum class Code { io, version, schema, non_finite };
  ModelError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

std::string serialize_model(const Ensemble& e);
Ensemble parse_model(const std::string& text);
void save_model(const Ensemble& e, const std::filesystem::path& path);
Ensemble load_model(const std::filesystem::path& path);

/// Standalone JSON rendering of an evaluation report.
std::string report_json(const metrics::EvaluationReport& report);

}  // namespace postpick::ens
