#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "postpick/ensemble.hpp"
#include "test_util.hpp"

using namespace postpick;
using namespace postpick::ens;
using learn::LearnerKind;
using learn::LearnerSpec;

namespace {

LabeledDataset make_dataset(std::size_t n, std::size_t n_pos, std::uint64_t seed, double shift = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  LabeledDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i < n_pos;
    FeatureVector v{};
    for (std::size_t j = 0; j < kFeatureCount; ++j) v[j] = 10.0 * j + g(rng) + (pos && j < 4 ? shift : 0.0);
    v[kBlobs] += pos ? 0.0 : shift * g(rng) * g(rng);
    d.ids.push_back(i);
    d.features.push_back(v);
    d.labels.push_back(pos ? Label::positive : Label::negative);
  }
  return d;
}

std::size_t positives(const LabeledDataset& d, const std::vector<std::size_t>& rows) {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [&](std::size_t r) { return d.labels[r] == Label::positive; }));
}

// A member that ignores its input and always votes `label`.
learn::FittedLearner constant_member(Label label) {
  return {LearnerSpec{.kind = LearnerKind::lda}, learn::LinearModel{FeatureVector{}, label == Label::positive ? 1.0 : -1.0}};
}

learn::FittedLearner random_linear_member(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  learn::LinearModel m;
  for (double& w : m.weights) w = g(rng);
  m.offset = g(rng);
  return {LearnerSpec{.kind = LearnerKind::linear_svm}, m};
}

Ensemble stub_ensemble(std::vector<learn::FittedLearner> members) {
  Ensemble e;
  e.members = std::move(members);
  e.norm.stds.fill(1.0);
  return e;
}

FeatureVector random_vector(std::mt19937_64& rng, double scale = 3.0) {
  std::normal_distribution<double> g(0.0, scale);
  FeatureVector x{};
  for (double& c : x) c = g(rng);
  return x;
}

}  // namespace

TEST(Split, SizesForOneThousand) {
  const auto d = make_dataset(1000, 300, 1);
  std::mt19937_64 rng(5);
  const auto s = split_training(d, rng);
  EXPECT_EQ(s.validation.size(), 100u);
  EXPECT_EQ(s.pool.size(), 900u);
  for (const auto& inner : s.inner) {
    EXPECT_EQ(inner.train.size(), 720u);
    EXPECT_EQ(inner.eval.size(), 180u);
  }
}

TEST(Split, PartitionsAndStratification) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 137 + 53 * seed, n_pos = n / 3 + seed;
    const auto d = make_dataset(n, n_pos, seed);
    std::mt19937_64 rng(seed);
    const auto s = split_training(d, rng);

    std::set<std::size_t> val(s.validation.begin(), s.validation.end());
    std::set<std::size_t> pool(s.pool.begin(), s.pool.end());
    EXPECT_EQ(val.size() + pool.size(), n);
    for (std::size_t r : val) EXPECT_FALSE(pool.count(r));

    const double ratio = static_cast<double>(n_pos) / static_cast<double>(n);
    EXPECT_LE(std::abs(static_cast<double>(positives(d, s.validation)) - ratio * s.validation.size()), 1.0);

    for (const auto& inner : s.inner) {
      std::set<std::size_t> u(inner.train.begin(), inner.train.end());
      for (std::size_t r : inner.eval) EXPECT_TRUE(u.insert(r).second);
      EXPECT_EQ(u, pool);
      EXPECT_GT(positives(d, inner.eval), 0u);
      EXPECT_LT(positives(d, inner.eval), inner.eval.size());
    }
  }
}

TEST(Split, RejectsSmallOrSingleClass) {
  EXPECT_THROW(
      {
        std::mt19937_64 rng(1);
        split_training(make_dataset(19, 9, 1), rng);
      },
      BuildError);
  EXPECT_THROW(
      {
        std::mt19937_64 rng(1);
        split_training(make_dataset(40, 0, 1), rng);
      },
      BuildError);
}

TEST(Norm, ZeroVarianceFeatureIsFlagged) {
  auto d = make_dataset(50, 25, 2);
  for (auto& v : d.features) v[kOtsuForeground] = 7.0;
  std::vector<std::size_t> rows(d.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto s = NormStats::fit(d, rows);
  EXPECT_TRUE(s.zero_variance[kOtsuForeground]);
  EXPECT_EQ(s.stds[kOtsuForeground], 1.0);
  EXPECT_EQ(s.means[kOtsuForeground], 7.0);
  for (std::size_t j = 0; j < kFeatureCount; ++j) EXPECT_GT(s.stds[j], 0.0);
}

TEST(Build, PlantedSeparatorIsSelected) {
  // Only feature 0 carries the class, and 11 noise columns swamp any
  // distance-based learner; a depth-1 tree splits it cleanly.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  LabeledDataset d;
  for (std::size_t i = 0; i < 400; ++i) {
    const bool pos = i % 2 == 0;
    FeatureVector v{};
    for (double& c : v) c = g(rng);
    v[0] = pos ? u(rng) : -u(rng);
    d.ids.push_back(i);
    d.features.push_back(v);
    d.labels.push_back(pos ? Label::positive : Label::negative);
  }
  const std::vector<LearnerSpec> candidates = {
      {.kind = LearnerKind::knn, .k = 25},
      {.kind = LearnerKind::knn, .k = 15},
      {.kind = LearnerKind::tree, .max_depth = 2, .min_leaf = 1},
      {.kind = LearnerKind::knn, .k = 9},
  };
  const auto e = build_ensemble(d, candidates, BuildOptions{.seed = 4});
  ASSERT_FALSE(e.selection.empty());
  EXPECT_EQ(e.selection.front().candidate, 2u);
  EXPECT_EQ(e.selection.front().mean_balanced_accuracy, 1.0);
  EXPECT_EQ(e.validation_report.balanced_accuracy, 1.0);
}

TEST(Build, DeterministicAcrossRunsAndThreads) {
  const auto d = make_dataset(300, 130, 9);
  const auto a = build_ensemble(d, BuildOptions{.pool_size = 40, .seed = 17, .threads = 1});
  const auto b = build_ensemble(d, BuildOptions{.pool_size = 40, .seed = 17, .threads = 1});
  const auto c = build_ensemble(d, BuildOptions{.pool_size = 40, .seed = 17, .threads = 4});
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  EXPECT_EQ(serialize_model(a), serialize_model(c));
  EXPECT_EQ(a.validation_report, c.validation_report);
}

TEST(Build, MemberCountBoundsAndMonotoneTrace) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto d = make_dataset(200 + 20 * seed, 90, seed, 0.6);
    const auto e = build_ensemble(d, BuildOptions{.pool_size = 40 + seed, .seed = seed});
    EXPECT_GE(e.members.size(), 1u);
    EXPECT_LE(e.members.size(), kMaxMembers);
    ASSERT_EQ(e.members.size(), e.selection.size());
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < e.selection.size(); ++i) {
      EXPECT_TRUE(seen.insert(e.selection[i].candidate).second);
      if (i > 0) EXPECT_GT(e.selection[i].mean_balanced_accuracy, e.selection[i - 1].mean_balanced_accuracy);
    }
    const auto& r = e.validation_report;
    ASSERT_TRUE(r.sensitivity && r.specificity && r.balanced_accuracy);
    EXPECT_DOUBLE_EQ(*r.balanced_accuracy, (*r.sensitivity + *r.specificity) / 2.0);
  }
}

TEST(Build, EmptyPoolIsAnError) {
  EXPECT_THROW(build_ensemble(make_dataset(100, 50, 1), BuildOptions{.pool_size = 0}), BuildError);
}

TEST(Vote, MajorityExamples) {
  const auto three = stub_ensemble({constant_member(Label::positive), constant_member(Label::positive),
                                    constant_member(Label::negative)});
  auto v = ensemble_predict(three, FeatureVector{});
  EXPECT_EQ(v.label, Label::positive);
  EXPECT_DOUBLE_EQ(v.score, 2.0 / 3.0);

  const auto two = stub_ensemble({constant_member(Label::positive), constant_member(Label::negative)});
  v = ensemble_predict(two, FeatureVector{});
  EXPECT_EQ(v.label, Label::negative);
  EXPECT_EQ(v.score, 0.5);
}

TEST(Vote, MatchesEnumerationUpToSeven) {
  for (std::size_t k = 1; k <= 7; ++k) {
    for (std::uint32_t pattern = 0; pattern < (1u << k); ++pattern) {
      std::vector<learn::FittedLearner> members;
      std::size_t plus = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const bool p = (pattern >> i) & 1u;
        plus += p;
        members.push_back(constant_member(p ? Label::positive : Label::negative));
      }
      const auto v = ensemble_predict(stub_ensemble(std::move(members)), FeatureVector{});
      EXPECT_EQ(v.label, plus * 2 > k ? Label::positive : Label::negative) << k << " " << pattern;
      EXPECT_DOUBLE_EQ(v.score, static_cast<double>(plus) / static_cast<double>(k));
    }
  }
}

TEST(Vote, SingleMemberBehavesLikeTheMember) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    auto e = stub_ensemble({random_linear_member(rng)});
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      e.norm.means[j] = static_cast<double>(j);
      e.norm.stds[j] = 0.5 + 0.1 * static_cast<double>(j);
    }
    for (int i = 0; i < 100; ++i) {
      const auto x = random_vector(rng);
      EXPECT_EQ(ensemble_predict(e, x).label, learn::predict(e.members[0], e.norm.apply(x)));
    }
  }
}

// One extra copy can only matter when it turns a one-vote majority into a
// tie, which then resolves negative. Doubling the whole ensemble never can.
TEST(Vote, DuplicatedMembers) {
  std::mt19937_64 rng(7);
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    std::vector<learn::FittedLearner> members;
    for (std::size_t i = 0; i < k; ++i) members.push_back(random_linear_member(rng));
    const auto base = stub_ensemble(members);
    auto twice = members;
    twice.insert(twice.end(), members.begin(), members.end());
    const auto doubled = stub_ensemble(twice);
    for (std::size_t dup = 0; dup < k; ++dup) {
      auto more = members;
      more.push_back(members[dup]);
      const auto bigger = stub_ensemble(more);
      for (int i = 0; i < 200; ++i) {
        const auto x = random_vector(rng);
        const auto before = ensemble_predict(base, x);
        const std::size_t plus = static_cast<std::size_t>(std::lround(before.score * static_cast<double>(k)));
        const bool copy_minus = learn::predict(members[dup], x) == Label::negative;
        const bool tipped = 2 * plus == k + 1 && copy_minus;
        EXPECT_EQ(ensemble_predict(bigger, x).label, tipped ? Label::negative : before.label);
        EXPECT_EQ(ensemble_predict(doubled, x).label, before.label);
      }
    }
  }
}

TEST(Vote, RejectsNonFiniteInput) {
  const auto e = stub_ensemble({constant_member(Label::positive)});
  FeatureVector x{};
  x[4] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ensemble_predict(e, x), std::invalid_argument);
}

class ModelFile : public ::testing::Test {
 protected:
  void SetUp() override {
    // A pool large enough that trees, kNN and linear members all appear.
    const auto d = make_dataset(400, 180, 12, 0.5);
    model = build_ensemble(d, BuildOptions{.pool_size = 48, .seed = 3});
    std::mt19937_64 rng(1);
    for (LearnerKind kind : {LearnerKind::lda, LearnerKind::tree, LearnerKind::knn, LearnerKind::linear_svm}) {
      std::vector<FeatureVector> x;
      for (std::size_t i = 0; i < 60; ++i) x.push_back(model.norm.apply(d.features[i * 6]));
      std::vector<Label> y;
      for (std::size_t i = 0; i < 60; ++i) y.push_back(d.labels[i * 6]);
      model.members.push_back(learn::train(LearnerSpec{.kind = kind, .max_depth = 5, .k = 3, .seed = 11}, x, y));
    }
  }
  Ensemble model;
};

TEST_F(ModelFile, RoundtripPreservesPredictions) {
  testutil::TempDir dir("model");
  save_model(model, dir / "m.json");
  const auto loaded = load_model(dir / "m.json");
  EXPECT_EQ(loaded.members.size(), model.members.size());
  EXPECT_EQ(loaded.build_seed, model.build_seed);
  EXPECT_EQ(loaded.validation_report, model.validation_report);
  EXPECT_EQ(loaded.selection.size(), model.selection.size());
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    FeatureVector x = random_vector(rng, 4.0);
    for (std::size_t j = 0; j < kFeatureCount; ++j) x[j] += 10.0 * j;
    const auto a = ensemble_predict(model, x), b = ensemble_predict(loaded, x);
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.score, b.score);
  }
  EXPECT_EQ(serialize_model(loaded), serialize_model(model));
}

TEST_F(ModelFile, UnknownVersionIsRejected) {
  auto j = nlohmann::json::parse(serialize_model(model));
  j["format_version"] = 2;
  try {
    parse_model(j.dump());
    FAIL() << "accepted version 2";
  } catch (const ModelError& e) {
    EXPECT_EQ(e.code(), ModelError::Code::version);
  }
}

TEST_F(ModelFile, NonFiniteWeightIsRejected) {
  std::string text = serialize_model(model);
  auto j = nlohmann::json::parse(text);
  std::size_t linear = 0;
  while (!j["members"][linear]["parameters"].contains("weights")) ++linear;
  j["members"][linear]["parameters"]["weights"][3] = 123456.5;
  text = j.dump();
  const auto at = text.find("123456.5");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 8, "1e999");
  try {
    parse_model(text);
    FAIL() << "accepted an infinite weight";
  } catch (const ModelError& e) {
    EXPECT_EQ(e.code(), ModelError::Code::non_finite);
  }
}

TEST_F(ModelFile, SchemaViolationsAreRejected) {
  const auto base = nlohmann::json::parse(serialize_model(model));
  auto expect_schema = [](const nlohmann::json& j) {
    try {
      parse_model(j.dump());
      ADD_FAILURE() << "accepted " << j.dump().substr(0, 80);
    } catch (const ModelError& e) {
      EXPECT_EQ(e.code(), ModelError::Code::schema);
    }
  };
  auto j = base;
  j["feature_names"][0] = "f_average";
  expect_schema(j);
  j = base;
  j["norm_stats"]["stds"][1] = 0.0;
  expect_schema(j);
  j = base;
  j["members"] = nlohmann::json::array();
  expect_schema(j);
  j = base;
  j.erase("build_seed");
  expect_schema(j);
  j = base;
  j["members"][0]["kind"] = "forest";
  expect_schema(j);
  try {
    parse_model("{not json");
    ADD_FAILURE();
  } catch (const ModelError& e) {
    EXPECT_EQ(e.code(), ModelError::Code::schema);
  }
}

TEST(ModelIo, MissingFileIsAnIoError) {
  try {
    load_model("/nonexistent/dir/model.json");
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_EQ(e.code(), ModelError::Code::io);
  }
}
