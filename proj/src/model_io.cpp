// JSON model files: format_version, feature_names, norm_stats, members,
// validation_report, build_seed (+ the selection trace).

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "postpick/ensemble.hpp"

namespace postpick::ens {
namespace {

using nlohmann::json;

[[noreturn]] void schema_error(const std::string& what) {
  throw ModelError(ModelError::Code::schema, "model schema violation: " + what);
}

double finite_number(const json& j, const std::string& what) {
  if (!j.is_number()) schema_error(what + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ModelError(ModelError::Code::non_finite, "non-finite value in " + what);
  return v;
}

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) schema_error(std::string("missing field '") + key + "'");
  return j.at(key);
}

FeatureVector vector_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != kFeatureCount)
    schema_error(what + " must be an array of " + std::to_string(kFeatureCount) + " numbers");
  FeatureVector v{};
  for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = finite_number(j[i], what);
  return v;
}

int int_from(const json& j, const std::string& what) {
  if (!j.is_number_integer()) schema_error(what + " must be an integer");
  return j.get<int>();
}

json optional_ratio(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> ratio_from(const json& j, const std::string& what) {
  if (j.is_null()) return std::nullopt;
  return finite_number(j, what);
}

json report_to(const metrics::EvaluationReport& r) {
  return json{{"tp", r.confusion.tp},
              {"fp", r.confusion.fp},
              {"tn", r.confusion.tn},
              {"fn", r.confusion.fn},
              {"sensitivity", optional_ratio(r.sensitivity)},
              {"specificity", optional_ratio(r.specificity)},
              {"ppv", optional_ratio(r.ppv)},
              {"balanced_accuracy", optional_ratio(r.balanced_accuracy)},
              {"auc", optional_ratio(r.auc)}};
}

metrics::EvaluationReport report_from(const json& j) {
  metrics::EvaluationReport r;
  auto count = [&](const char* key) {
    const json& v = field(j, key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      schema_error(std::string("report field '") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
  };
  r.confusion = {count("tp"), count("fp"), count("tn"), count("fn")};
  r.sensitivity = ratio_from(field(j, "sensitivity"), "sensitivity");
  r.specificity = ratio_from(field(j, "specificity"), "specificity");
  r.ppv = ratio_from(field(j, "ppv"), "ppv");
  r.balanced_accuracy = ratio_from(field(j, "balanced_accuracy"), "balanced_accuracy");
  r.auc = j.contains("auc") ? ratio_from(j.at("auc"), "auc") : std::nullopt;
  return r;
}

json hyperparams_to(const learn::LearnerSpec& s) {
  json h{{"seed", s.seed}};
  switch (s.kind) {
    case learn::LearnerKind::lda: break;
    case learn::LearnerKind::tree:
      h["max_depth"] = s.max_depth;
      h["min_leaf"] = s.min_leaf;
      break;
    case learn::LearnerKind::knn: h["k"] = s.k; break;
    case learn::LearnerKind::linear_svm:
      h["lambda"] = s.lambda;
      h["epochs"] = s.epochs;
      break;
  }
  return h;
}

learn::LearnerSpec spec_from(const std::string& kind, const json& h) {
  learn::LearnerSpec s;
  try {
    s.kind = learn::parse_kind(kind);
  } catch (const std::invalid_argument& e) {
    schema_error(e.what());
  }
  const json& seed = field(h, "seed");
  if (!seed.is_number_unsigned() && !seed.is_number_integer()) schema_error("seed must be an integer");
  s.seed = seed.get<std::uint64_t>();
  switch (s.kind) {
    case learn::LearnerKind::lda: break;
    case learn::LearnerKind::tree:
      s.max_depth = int_from(field(h, "max_depth"), "max_depth");
      s.min_leaf = int_from(field(h, "min_leaf"), "min_leaf");
      break;
    case learn::LearnerKind::knn: s.k = int_from(field(h, "k"), "k"); break;
    case learn::LearnerKind::linear_svm:
      s.lambda = finite_number(field(h, "lambda"), "lambda");
      s.epochs = int_from(field(h, "epochs"), "epochs");
      break;
  }
  return s;
}

json vector_to(const FeatureVector& v) { return json(std::vector<double>(v.begin(), v.end())); }

json label_to(Label l) { return std::string(1, label_token(l)); }

Label label_from(const json& j) {
  if (j == "+") return Label::positive;
  if (j == "-") return Label::negative;
  schema_error("labels must be \"+\" or \"-\"");
}

json parameters_to(const learn::LearnerParameters& p) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, learn::LinearModel>) {
          return json{{"weights", vector_to(m.weights)}, {"offset", m.offset}};
        } else if constexpr (std::is_same_v<T, learn::TreeModel>) {
          json nodes = json::array();
          for (const auto& n : m.nodes)
            nodes.push_back(json{{"feature", n.feature},
                                 {"threshold", n.threshold},
                                 {"left", n.left},
                                 {"right", n.right},
                                 {"label", label_to(n.label)}});
          return json{{"nodes", nodes}};
        } else {
          json points = json::array();
          json labels = json::array();
          for (const auto& p : m.points) points.push_back(vector_to(p));
          for (Label l : m.labels) labels.push_back(label_to(l));
          return json{{"k", m.k}, {"points", points}, {"labels", labels}};
        }
      },
      p);
}

learn::LearnerParameters parameters_from(learn::LearnerKind kind, const json& j) {
  switch (kind) {
    case learn::LearnerKind::lda:
    case learn::LearnerKind::linear_svm: {
      learn::LinearModel m;
      m.weights = vector_from(field(j, "weights"), "weights");
      m.offset = finite_number(field(j, "offset"), "offset");
      return m;
    }
    case learn::LearnerKind::tree: {
      learn::TreeModel m;
      const json& nodes = field(j, "nodes");
      if (!nodes.is_array()) schema_error("tree nodes must be an array");
      for (const json& n : nodes) {
        learn::TreeNode node;
        node.feature = int_from(field(n, "feature"), "feature");
        node.threshold = finite_number(field(n, "threshold"), "threshold");
        node.left = int_from(field(n, "left"), "left");
        node.right = int_from(field(n, "right"), "right");
        node.label = label_from(field(n, "label"));
        m.nodes.push_back(node);
      }
      return m;
    }
    case learn::LearnerKind::knn: {
      learn::KnnModel m;
      m.k = int_from(field(j, "k"), "k");
      const json& points = field(j, "points");
      const json& labels = field(j, "labels");
      if (!points.is_array() || !labels.is_array()) schema_error("kNN points and labels must be arrays");
      for (const json& p : points) m.points.push_back(vector_from(p, "kNN point"));
      for (const json& l : labels) m.labels.push_back(label_from(l));
      return m;
    }
  }
  schema_error("unknown learner kind");
}

}  // namespace

std::string report_json(const metrics::EvaluationReport& report) { return report_to(report).dump(2) + "\n"; }

std::string serialize_model(const Ensemble& e) {
  json names = json::array();
  for (auto n : kFeatureNames) names.push_back(std::string(n));
  json flags = json::array();
  for (bool f : e.norm.zero_variance) flags.push_back(f);
  json members = json::array();
  for (const auto& m : e.members)
    members.push_back(json{{"kind", learn::to_string(m.spec.kind)},
                           {"hyperparams", hyperparams_to(m.spec)},
                           {"parameters", parameters_to(m.parameters)}});
  json selection = json::array();
  for (const auto& s : e.selection)
    selection.push_back(json{{"candidate", s.candidate},
                             {"mean_balanced_accuracy", s.mean_balanced_accuracy},
                             {"mean_specificity", s.mean_specificity}});
  json doc{{"format_version", kModelFormatVersion},
           {"feature_names", names},
           {"norm_stats", {{"means", vector_to(e.norm.means)}, {"stds", vector_to(e.norm.stds)}, {"zero_variance_flags", flags}}},
           {"members", members},
           {"validation_report", report_to(e.validation_report)},
           {"build_seed", e.build_seed},
           {"selection_trace", selection}};
  return doc.dump(1) + "\n";
}

Ensemble parse_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& err) {
    throw ModelError(ModelError::Code::schema, std::string("model file is not valid JSON: ") + err.what());
  } catch (const json::out_of_range& err) {
    // The parser refuses literals like 1e999 that overflow a double.
    throw ModelError(ModelError::Code::non_finite, std::string("model file holds a non-finite number: ") + err.what());
  }
  const json& version = field(doc, "format_version");
  if (!version.is_number_integer() || version.get<int>() != kModelFormatVersion)
    throw ModelError(ModelError::Code::version, "unsupported model format_version " + version.dump() +
                                                    " (expected " + std::to_string(kModelFormatVersion) + ")");

  const json& names = field(doc, "feature_names");
  if (!names.is_array() || names.size() != kFeatureCount) schema_error("feature_names must list 12 names");
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (!names[i].is_string() || names[i].get<std::string>() != kFeatureNames[i])
      schema_error("feature name " + std::to_string(i) + " is " + names[i].dump() + ", expected \"" +
                   std::string(kFeatureNames[i]) + "\"");

  Ensemble e;
  try {
    const json& norm = field(doc, "norm_stats");
    e.norm.means = vector_from(field(norm, "means"), "norm_stats.means");
    e.norm.stds = vector_from(field(norm, "stds"), "norm_stats.stds");
    const json& flags = field(norm, "zero_variance_flags");
    if (!flags.is_array() || flags.size() != kFeatureCount) schema_error("zero_variance_flags must have 12 entries");
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      if (!flags[i].is_boolean()) schema_error("zero_variance_flags must be booleans");
      e.norm.zero_variance[i] = flags[i].get<bool>();
      if (!(e.norm.stds[i] > 0.0)) schema_error("norm_stats.stds must be positive");
    }

    const json& members = field(doc, "members");
    if (!members.is_array() || members.empty()) schema_error("members must be a non-empty array");
    for (const json& m : members) {
      const json& kind = field(m, "kind");
      if (!kind.is_string()) schema_error("member kind must be a string");
      learn::FittedLearner learner{spec_from(kind.get<std::string>(), field(m, "hyperparams")), learn::LinearModel{}};
      learner.parameters = parameters_from(learner.spec.kind, field(m, "parameters"));
      try {
        learn::validate(learner);
      } catch (const learn::TrainingError& err) {
        schema_error(err.what());
      }
      e.members.push_back(std::move(learner));
    }

    e.validation_report = report_from(field(doc, "validation_report"));
    const json& seed = field(doc, "build_seed");
    if (!seed.is_number_integer()) schema_error("build_seed must be an integer");
    e.build_seed = seed.get<std::uint64_t>();
    if (doc.contains("selection_trace")) {
      for (const json& s : doc.at("selection_trace")) {
        SelectionStep step;
        step.candidate = field(s, "candidate").get<std::size_t>();
        step.mean_balanced_accuracy = finite_number(field(s, "mean_balanced_accuracy"), "selection trace");
        step.mean_specificity = finite_number(field(s, "mean_specificity"), "selection trace");
        e.selection.push_back(step);
      }
    }
  } catch (const json::exception& err) {
    schema_error(err.what());
  }
  return e;
}

void save_model(const Ensemble& e, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ModelError(ModelError::Code::io, "cannot write " + path.string());
  out << serialize_model(e);
  if (!out) throw ModelError(ModelError::Code::io, "write failed: " + path.string());
}

Ensemble load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError(ModelError::Code::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace postpick::ens
