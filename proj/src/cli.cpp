#include "postpick/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "postpick/ensemble.hpp"
#include "postpick/features.hpp"
#include "postpick/imgio.hpp"
#include "postpick/metrics.hpp"
#include "postpick/parallel.hpp"
#include "postpick/serve.hpp"
#include "postpick/simulate.hpp"

namespace postpick::cli {
namespace {

/// Runtime failure tagged with the pipeline stage it came from.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

template <class F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

struct Prediction {
  std::size_t id = 0;
  Label label = Label::negative;
  double score = 0.0;
};

std::string format_predictions(const std::vector<Prediction>& rows) {
  std::ostringstream os;
  os << "id,label,score\n";
  for (const auto& p : rows) os << p.id << ',' << label_token(p.label) << ',' << format_real(p.score) << '\n';
  return os.str();
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty prediction file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,label,score") throw std::runtime_error(path.string() + ": header must be 'id,label,score'");
  std::vector<Prediction> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 3 || (cells[1] != "+" && cells[1] != "-"))
      throw std::runtime_error(path.string() + " line " + std::to_string(lineno) + ": expected id,+|-,score");
    Prediction p;
    const auto& id = cells[0];
    const auto [ip, iec] = std::from_chars(id.data(), id.data() + id.size(), p.id);
    const auto& sc = cells[2];
    const auto [sp, sec] = std::from_chars(sc.data(), sc.data() + sc.size(), p.score);
    if (iec != std::errc() || ip != id.data() + id.size() || sec != std::errc() || sp != sc.data() + sc.size())
      throw std::runtime_error(path.string() + " line " + std::to_string(lineno) + ": malformed number");
    p.label = cells[1] == "+" ? Label::positive : Label::negative;
    rows.push_back(p);
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<FeatureVector> extract_all(const ImageStack& stack, int threads) {
  std::vector<FeatureVector> rows(stack.size());
  parallel_for(stack.size(), threads, [&](std::size_t i) { rows[i] = features::extract_features(stack[i]); });
  return rows;
}

void err_note(std::ostream& out, const std::string& text) { out << "note: " << text << '\n'; }

std::string ratio_text(const std::optional<double>& v) { return v ? format_real(*v) : std::string("undefined"); }

// ---- subcommands ---------------------------------------------------------

struct SimulateArgs {
  std::string out, labels, mix = "all";
  sim::SimConfig cfg;
  int threads = 0;
};

int cmd_simulate(SimulateArgs a, std::ostream& out) {
  a.cfg.mix = stage("parsing arguments", [&] { return sim::parse_mix(a.mix); });
  stage("validating configuration", [&] { a.cfg.validate(); });
  const auto ds = stage("simulating", [&] { return sim::simulate_dataset(a.cfg, a.threads); });
  stage("writing stack", [&] { write_stack(ds.stack, a.out); });
  stage("writing labels", [&] { write_label_csv(ds.labels, a.labels); });
  out << "simulated " << ds.stack.size() << " images (" << a.cfg.n_particles << " particles, "
      << a.cfg.n_nonparticles << " non-particles) -> " << a.out << '\n';
  return 0;
}

struct ExtractArgs {
  std::string in, out, labels;
  int threads = 0;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  const auto stack = stage("reading stack", [&] { return read_stack(a.in); });
  auto rows = stage("extracting features", [&] { return extract_all(stack, a.threads); });
  FeatureTable table;
  if (a.labels.empty()) {
    table.features = std::move(rows);
    for (std::size_t i = 0; i < stack.size(); ++i) table.ids.push_back(i);
  } else {
    const auto labels = stage("reading labels", [&] { return read_label_csv(a.labels); });
    table.labels.emplace();
    for (const auto& row : labels.rows()) {
      if (row.id >= stack.size())
        throw StageError("reading labels", "label id " + std::to_string(row.id) + " is outside the stack");
    }
    // Only labeled images make it into a training table.
    for (std::size_t i = 0; i < stack.size(); ++i) {
      const auto l = labels.get(i);
      if (!l) continue;
      table.ids.push_back(i);
      table.features.push_back(rows[i]);
      table.labels->push_back(*l);
    }
  }
  stage("writing features", [&] { write_feature_csv(table, a.out); });
  out << "extracted " << table.size() << " feature rows -> " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string features, out;
  std::size_t pool = 48;
  std::uint64_t seed = 1;
  int threads = 0;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto table = stage("reading features", [&] { return read_feature_csv(a.features); });
  if (!table.labels) throw StageError("reading features", a.features + " has no label column");
  const auto data = ens::LabeledDataset::from_table(table);
  ens::BuildOptions options;
  options.pool_size = a.pool;
  options.seed = a.seed;
  options.threads = a.threads;
  const auto model = stage("training", [&] { return ens::build_ensemble(data, options); });
  stage("writing model", [&] { ens::save_model(model, a.out); });
  const auto& r = model.validation_report;
  out << "ensemble of " << model.members.size() << " members; validation sensitivity "
      << ratio_text(r.sensitivity) << ", specificity " << ratio_text(r.specificity) << " -> " << a.out << '\n';
  return 0;
}

struct ClassifyArgs {
  std::string model, in, out, keep;
  int threads = 0;
};

int cmd_classify(const ClassifyArgs& a, std::ostream& out) {
  const auto model = stage("loading model", [&] { return ens::load_model(a.model); });
  const auto stack = stage("reading stack", [&] { return read_stack(a.in); });
  std::vector<Prediction> rows(stack.size());
  stage("classifying", [&] {
    parallel_for(stack.size(), a.threads, [&](std::size_t i) {
      const auto vote = ens::ensemble_predict(model, features::extract_features(stack[i]));
      rows[i] = {i, vote.label, vote.score};
    });
  });
  stage("writing predictions", [&] { write_text(a.out, format_predictions(rows)); });
  std::size_t kept = 0;
  for (const auto& p : rows) kept += p.label == Label::positive ? 1 : 0;
  if (!a.keep.empty() && kept == 0) {
    err_note(out, "no image classified as particle; " + a.keep + " not written");
  } else if (!a.keep.empty()) {
    stage("writing particle stack", [&] {
      ImageStack particles;
      for (const auto& p : rows)
        if (p.label == Label::positive) particles.push_back(stack[p.id]);
      write_stack(particles, a.keep);
    });
  }
  out << "classified " << rows.size() << " images, " << kept << " particles -> " << a.out << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string pred, truth, report;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto preds = stage("reading predictions", [&] { return read_predictions(a.pred); });
  const auto truth = stage("reading truth", [&] { return read_label_csv(a.truth); });
  std::vector<Label> t, p;
  std::vector<double> scores;
  stage("matching predictions to truth", [&] {
    std::map<std::size_t, const Prediction*> by_id;
    for (const auto& row : preds)
      if (!by_id.emplace(row.id, &row).second) throw std::runtime_error("duplicate prediction id " + std::to_string(row.id));
    for (const auto& row : truth.rows()) {
      if (!row.label) continue;
      const auto it = by_id.find(row.id);
      if (it == by_id.end()) throw std::runtime_error("no prediction for labeled id " + std::to_string(row.id));
      t.push_back(*row.label);
      p.push_back(it->second->label);
      scores.push_back(it->second->score);
    }
  });
  auto report = stage("computing metrics", [&] {
    auto r = metrics::summarize(metrics::confusion(t, p));
    const bool both = std::count(t.begin(), t.end(), Label::positive) > 0 &&
                      std::count(t.begin(), t.end(), Label::negative) > 0;
    if (both) r.auc = metrics::roc_auc(scores, t);
    return r;
  });
  stage("writing report", [&] { write_text(a.report, ens::report_json(report)); });
  out << "sensitivity " << ratio_text(report.sensitivity) << ", specificity " << ratio_text(report.specificity)
      << ", PPV " << ratio_text(report.ppv) << ", AUC " << ratio_text(report.auc) << '\n';
  return 0;
}

struct ServeArgs {
  std::string stack, labels, host = "127.0.0.1", static_dir;
  int port = 8080;
};

serve::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  auto stack = stage("reading stack", [&] { return read_stack(a.stack); });
  serve::Server server(std::move(stack), a.labels);
  serve::ServerOptions options;
  options.host = a.host;
  options.port = a.port;
  if (!a.static_dir.empty()) options.static_dir = a.static_dir;
  const int port = stage("binding", [&] { return server.bind(options); });
  out << "serving " << a.stack << " on http://" << a.host << ':' << port << '\n' << std::flush;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Post-picking classification of boxed cryo-EM images", "postpick"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Generate a labeled synthetic stack");
  // CLI11 only reads config files on the root app; keys go under [simulate]
  // (or as simulate.<flag>), and fallthrough lets --config follow the subcommand.
  app.set_config("--config", "", "key = value file; simulate flags under a [simulate] section");
  simulate->fallthrough();
  simulate->add_option("--out", sa.out, "Output MRC stack")->required();
  simulate->add_option("--labels", sa.labels, "Output label CSV")->required();
  simulate->add_option("--particles", sa.cfg.n_particles)->capture_default_str();
  simulate->add_option("--nonparticles", sa.cfg.n_nonparticles)->capture_default_str();
  simulate->add_option("--mix", sa.mix, "all|plate|cylinder|sphere|void")->capture_default_str();
  simulate->add_option("--box", sa.cfg.box)->capture_default_str();
  simulate->add_option("--pixel", sa.cfg.pixel_size, "Pixel size in Angstrom")->capture_default_str();
  simulate->add_option("--defocus", sa.cfg.ctf.defocus_um, "Underfocus in micrometres")->capture_default_str();
  simulate->add_option("--voltage", sa.cfg.ctf.voltage_kv, "kV")->capture_default_str();
  simulate->add_option("--cs", sa.cfg.ctf.cs_mm, "Spherical aberration in mm")->capture_default_str();
  simulate->add_option("--amplitude-contrast", sa.cfg.ctf.amplitude_contrast)->capture_default_str();
  simulate->add_option("--snr1", sa.cfg.snr_structural, "Structural noise SNR")->capture_default_str();
  simulate->add_option("--snr2", sa.cfg.snr_shot, "Shot noise SNR")->capture_default_str();
  simulate->add_option("--bw-pass", sa.cfg.butterworth_pass, "Angstrom")->capture_default_str();
  simulate->add_option("--bw-stop", sa.cfg.butterworth_stop, "Angstrom")->capture_default_str();
  simulate->add_option("--seed", sa.cfg.seed)->capture_default_str();
  simulate->add_option("--threads", sa.threads, "0 = all cores")->capture_default_str();

  ExtractArgs ea;
  auto* extract = app.add_subcommand("extract", "Compute the feature table of a stack");
  extract->add_option("--in", ea.in)->required();
  extract->add_option("--out", ea.out)->required();
  extract->add_option("--labels", ea.labels, "Label CSV; keeps labeled images only");
  extract->add_option("--threads", ea.threads, "0 = all cores")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Build an ensemble from a labeled feature table");
  train->add_option("--features", ta.features)->required();
  train->add_option("--out", ta.out)->required();
  train->add_option("--pool", ta.pool, "Candidate pool size (40-60)")->capture_default_str();
  train->add_option("--seed", ta.seed)->capture_default_str();
  train->add_option("--threads", ta.threads, "0 = all cores")->capture_default_str();

  ClassifyArgs ca;
  auto* classify = app.add_subcommand("classify", "Label every image of a stack");
  classify->add_option("--model", ca.model)->required();
  classify->add_option("--in", ca.in)->required();
  classify->add_option("--out", ca.out)->required();
  classify->add_option("--keep", ca.keep, "Write the images classified as particles here");
  classify->add_option("--threads", ca.threads, "0 = all cores")->capture_default_str();

  EvaluateArgs va;
  auto* evaluate = app.add_subcommand("evaluate", "Compare predictions with ground truth");
  evaluate->add_option("--pred", va.pred)->required();
  evaluate->add_option("--truth", va.truth)->required();
  evaluate->add_option("--report", va.report)->required();

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API for the labeling frontend");
  serve_cmd->add_option("--stack", sv.stack)->required();
  serve_cmd->add_option("--labels", sv.labels, "Label store, created if missing")->required();
  serve_cmd->add_option("--port", sv.port)->capture_default_str();
  serve_cmd->add_option("--host", sv.host)->capture_default_str();
  serve_cmd->add_option("--static", sv.static_dir, "Directory served at /");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sa, out);
    if (extract->parsed()) return cmd_extract(ea, out);
    if (train->parsed()) return cmd_train(ta, out);
    if (classify->parsed()) return cmd_classify(ca, out);
    if (evaluate->parsed()) return cmd_evaluate(va, out);
    if (serve_cmd->parsed()) return cmd_serve(sv, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace postpick::cli
