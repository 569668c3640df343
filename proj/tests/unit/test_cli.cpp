#include <gtest/gtest.h>

#include <httplib.h>
#include <json.hpp>
#include <png.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "postpick/cli.hpp"
#include "postpick/ensemble.hpp"
#include "postpick/imgio.hpp"
#include "postpick/serve.hpp"
#include "test_util.hpp"

using namespace postpick;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> csv_rows(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Shared small workspace: a balanced simulated stack, its features and a model.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new testutil::TempDir("cli");
    auto& d = *dir;
    ASSERT_EQ(run({"simulate", "--out", d / "s.mrc", "--labels", d / "l.csv", "--particles", "30",
                   "--nonparticles", "30", "--box", "64", "--seed", "5"})
                  .code,
              0);
    ASSERT_EQ(run({"extract", "--in", d / "s.mrc", "--out", d / "f.csv", "--labels", d / "l.csv"}).code, 0);
    const auto r = run({"train", "--features", d / "f.csv", "--out", d / "m.json", "--pool", "40", "--seed", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir;
    dir = nullptr;
  }
  static testutil::TempDir* dir;
};
testutil::TempDir* Pipeline::dir = nullptr;

}  // namespace

TEST(Cli, UnknownFlagIsAUsageError) {
  const auto r = run({"extract", "--in", "a.mrc", "--out", "b.csv", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, MissingSubcommandOrRequiredFlag) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"train", "--features", "f.csv"}).code, 2);
}

TEST(Cli, HelpExitsCleanly) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"simulate", "extract", "train", "classify", "evaluate", "serve"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, RuntimeFailureNamesTheStage) {
  testutil::TempDir d("cli-fail");
  const auto r = run({"extract", "--in", d / "missing.mrc", "--out", d / "f.csv"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("reading stack"), std::string::npos) << r.err;
}

TEST(Cli, BinaryReportsUsageErrors) {
  const std::string cmd = std::string(POSTPICK_BIN) + " simulate --nope > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST(Cli, SimulateThenExtractGivesTwentyRows) {
  testutil::TempDir d("cli-sim");
  ASSERT_EQ(run({"simulate", "--out", d / "s.mrc", "--labels", d / "l.csv", "--seed", "3"}).code, 0);
  ASSERT_EQ(run({"extract", "--in", d / "s.mrc", "--out", d / "f.csv"}).code, 0);
  const auto table = read_feature_csv(d / "f.csv");
  EXPECT_EQ(table.size(), 20u);
  EXPECT_FALSE(table.labels);
  const auto labels = read_label_csv(d / "l.csv");
  EXPECT_EQ(labels.size(), 20u);
  std::size_t plus = 0;
  for (const auto& row : labels.rows()) plus += row.label == Label::positive;
  EXPECT_EQ(plus, 18u);
}

TEST(Cli, ConfigFileSuppliesFlags) {
  testutil::TempDir d("cli-config");
  std::ofstream(d / "sim.ini") << "[simulate]\nparticles = 4\nnonparticles = 3\nbox = 32\n";
  ASSERT_EQ(run({"simulate", "--config", d / "sim.ini", "--out", d / "s.mrc", "--labels", d / "l.csv"}).code, 0);
  const auto stack = read_stack(d / "s.mrc");
  EXPECT_EQ(stack.size(), 7u);
  EXPECT_EQ(stack.width(), 32);
}

TEST(Cli, ExtractWithLabelsKeepsLabeledRows) {
  testutil::TempDir d("cli-partial");
  ASSERT_EQ(run({"simulate", "--out", d / "s.mrc", "--labels", d / "l.csv", "--particles", "3", "--nonparticles",
                 "3", "--box", "32"})
                .code,
            0);
  auto labels = read_label_csv(d / "l.csv");
  labels.set(1, std::nullopt);
  labels.set(4, std::nullopt);
  write_label_csv(labels, d / "l.csv");
  ASSERT_EQ(run({"extract", "--in", d / "s.mrc", "--out", d / "f.csv", "--labels", d / "l.csv"}).code, 0);
  const auto table = read_feature_csv(d / "f.csv");
  EXPECT_EQ(table.ids, (std::vector<std::size_t>{0, 2, 3, 5}));
  ASSERT_TRUE(table.labels);
}

TEST(Cli, EvaluatePerfectPredictions) {
  testutil::TempDir d("cli-eval");
  std::ofstream(d / "truth.csv") << "id,label\n0,+\n1,-\n2,+\n3,unlabeled\n4,-\n";
  std::ofstream(d / "pred.csv") << "id,label,score\n4,-,0.2\n3,+,1\n2,+,0.8\n1,-,0\n0,+,0.6\n";
  const auto r = run({"evaluate", "--pred", d / "pred.csv", "--truth", d / "truth.csv", "--report", d / "r.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(d / "r.json"));
  EXPECT_EQ(report["sensitivity"], 1.0);
  EXPECT_EQ(report["specificity"], 1.0);
  EXPECT_EQ(report["tp"], 2);
  EXPECT_EQ(report["tn"], 2);
  EXPECT_EQ(report["auc"], 1.0);
}

TEST(Cli, EvaluateRejectsMissingPredictions) {
  testutil::TempDir d("cli-eval2");
  std::ofstream(d / "truth.csv") << "id,label\n0,+\n1,-\n";
  std::ofstream(d / "pred.csv") << "id,label,score\n0,+,1\n";
  EXPECT_EQ(run({"evaluate", "--pred", d / "pred.csv", "--truth", d / "truth.csv", "--report", d / "r.json"}).code, 1);
}

TEST_F(Pipeline, ClassifyWritesOneRowPerImage) {
  auto& d = *dir;
  const auto r = run({"classify", "--model", d / "m.json", "--in", d / "s.mrc", "--out", d / "p.csv", "--keep",
                      d / "keep.mrc", "--threads", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv_rows(d / "p.csv");
  ASSERT_EQ(rows.size(), 60u);
  std::size_t plus = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 3u);
    EXPECT_EQ(rows[i][0], std::to_string(i));
    EXPECT_TRUE(rows[i][1] == "+" || rows[i][1] == "-");
    const double score = std::stod(rows[i][2]);
    EXPECT_GE(score, 0.0);
    EXPECT_LE(score, 1.0);
    EXPECT_EQ(rows[i][1] == "+", score > 0.5);
    plus += rows[i][1] == "+";
  }
  ASSERT_GT(plus, 0u);
  const auto kept = read_stack(d / "keep.mrc");
  EXPECT_EQ(kept.size(), plus);

  // The kept stack preserves the input order of the particle images.
  const auto all = read_stack(d / "s.mrc");
  std::size_t k = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i][1] == "+") EXPECT_EQ(kept[k++], all[i]);
}

TEST_F(Pipeline, ClassifyIsIdenticalAcrossThreadCounts) {
  auto& d = *dir;
  ASSERT_EQ(run({"classify", "--model", d / "m.json", "--in", d / "s.mrc", "--out", d / "p1.csv", "--threads", "1"}).code, 0);
  ASSERT_EQ(run({"classify", "--model", d / "m.json", "--in", d / "s.mrc", "--out", d / "p4.csv", "--threads", "4"}).code, 0);
  EXPECT_EQ(slurp(d / "p1.csv"), slurp(d / "p4.csv"));
}

TEST_F(Pipeline, TrainIsDeterministic) {
  auto& d = *dir;
  ASSERT_EQ(run({"train", "--features", d / "f.csv", "--out", d / "m2.json", "--pool", "40", "--seed", "2",
                 "--threads", "3"})
                .code,
            0);
  EXPECT_EQ(slurp(d / "m.json"), slurp(d / "m2.json"));
  const auto model = ens::load_model(d / "m.json");
  EXPECT_GE(model.members.size(), 1u);
  EXPECT_EQ(model.build_seed, 2u);
}

TEST_F(Pipeline, ClassifyRejectsAForeignModel) {
  auto& d = *dir;
  auto j = json::parse(slurp(d / "m.json"));
  j["feature_names"][3] = "f_q15";
  std::ofstream(d / "bad.json") << j.dump();
  const auto r = run({"classify", "--model", d / "bad.json", "--in", d / "s.mrc", "--out", d / "p.csv"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("loading model"), std::string::npos) << r.err;
}

TEST(RenderPng, DecodesToStretchedGray) {
  Image im(5, 3, 2.0);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) im.at(x, y) = static_cast<float>(-2.0 + x + 5 * y);
  const auto bytes = serve::render_png(im);

  png_image decoded{};
  decoded.version = PNG_IMAGE_VERSION;
  ASSERT_TRUE(png_image_begin_read_from_memory(&decoded, bytes.data(), bytes.size()));
  EXPECT_EQ(decoded.width, 5u);
  EXPECT_EQ(decoded.height, 3u);
  decoded.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(decoded));
  ASSERT_TRUE(png_image_finish_read(&decoded, nullptr, px.data(), 0, nullptr));
  EXPECT_EQ(px.front(), 0);
  EXPECT_EQ(px.back(), 255);
  for (std::size_t i = 1; i < px.size(); ++i) EXPECT_GT(px[i], px[i - 1]);
  EXPECT_EQ(px[7], static_cast<unsigned char>(std::lround(7 * 255.0 / 14.0)));

  Image flat(4, 4, 2.0);
  for (float& v : flat.pixels()) v = 3.5f;
  const auto fb = serve::render_png(flat);
  png_image f{};
  f.version = PNG_IMAGE_VERSION;
  ASSERT_TRUE(png_image_begin_read_from_memory(&f, fb.data(), fb.size()));
  f.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> fp(PNG_IMAGE_SIZE(f));
  ASSERT_TRUE(png_image_finish_read(&f, nullptr, fp.data(), 0, nullptr));
  for (auto v : fp) EXPECT_EQ(v, 0);
}

TEST(LabelStore, PersistsEveryChange) {
  testutil::TempDir d("store");
  {
    serve::LabelStore store(d / "labels.csv", 4);
    EXPECT_TRUE(std::filesystem::exists(d / "labels.csv"));
    store.set(2, Label::positive);
    store.set(0, Label::negative);
    store.set(2, Label::negative);
    EXPECT_EQ(read_label_csv(d / "labels.csv"), store.snapshot());
    EXPECT_FALSE(std::filesystem::exists(d / "labels.csv.tmp"));
  }
  serve::LabelStore reopened(d / "labels.csv", 4);
  EXPECT_EQ(reopened.snapshot().get(2), Label::negative);
  EXPECT_EQ(reopened.snapshot().get(0), Label::negative);
  EXPECT_EQ(reopened.snapshot().get(1), std::nullopt);
  EXPECT_THROW(reopened.set(4, Label::positive), std::out_of_range);
  EXPECT_THROW(serve::LabelStore(d / "labels.csv", 2), std::runtime_error);
}

class ServeApi : public ::testing::Test {
 protected:
  void SetUp() override {
    std::vector<Image> images;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 5; ++i) images.push_back(testutil::random_image(16, 12, rng, 0.0, 1.0));
    stack = ImageStack(images);
    write_stack(stack, dir / "s.mrc");
    const auto before = slurp(dir / "s.mrc");
    server = std::make_unique<serve::Server>(read_stack(dir / "s.mrc"), dir / "labels.csv");
    port = server->bind(serve::ServerOptions{.host = "127.0.0.1", .port = 0});
    thread = std::thread([this] { server->run(); });
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    stack_bytes = before;
  }
  void TearDown() override {
    server->stop();
    thread.join();
    EXPECT_EQ(slurp(dir / "s.mrc"), stack_bytes);
  }

  json get_json(const std::string& path) {
    auto res = client->Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, 200) << path;
    return json::parse(res->body);
  }
  int post_label(const json& body) {
    auto res = client->Post("/api/label", body.dump(), "application/json");
    return res ? res->status : -1;
  }

  testutil::TempDir dir{"serve"};
  ImageStack stack;
  std::string stack_bytes;
  std::unique_ptr<serve::Server> server;
  std::unique_ptr<httplib::Client> client;
  std::thread thread;
  int port = 0;
};

TEST_F(ServeApi, StackSummary) {
  const auto s = get_json("/api/stack");
  EXPECT_EQ(s["count"], 5);
  EXPECT_EQ(s["width"], 16);
  EXPECT_EQ(s["height"], 12);
  EXPECT_EQ(s["labeled"], 0);
  EXPECT_EQ(s["unlabeled"], 5);
}

TEST_F(ServeApi, LabelingFlow) {
  EXPECT_EQ(post_label({{"id", 0}, {"label", "+"}}), 200);
  EXPECT_EQ(post_label({{"id", 3}, {"label", "-"}}), 200);
  EXPECT_EQ(post_label({{"id", 3}, {"label", "-"}}), 200);

  auto unlabeled = get_json("/api/images?status=unlabeled");
  ASSERT_EQ(unlabeled.size(), 3u);
  EXPECT_EQ(unlabeled[0]["id"], 1);
  EXPECT_EQ(unlabeled[0]["label"], "unlabeled");
  auto labeled = get_json("/api/images?status=labeled");
  ASSERT_EQ(labeled.size(), 2u);
  EXPECT_EQ(labeled[1]["id"], 3);
  EXPECT_EQ(labeled[1]["label"], "-");
  auto page = get_json("/api/images?status=all&offset=1&limit=2");
  ASSERT_EQ(page.size(), 2u);
  EXPECT_EQ(page[0]["id"], 1);
  EXPECT_EQ(page[1]["id"], 2);

  EXPECT_EQ(post_label({{"id", 0}, {"label", "unlabeled"}}), 200);
  EXPECT_EQ(get_json("/api/stack")["labeled"], 1);

  auto res = client->Get("/api/export?format=csv");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, format_label_csv(server->labels()));
  EXPECT_EQ(res->body, slurp(dir / "labels.csv"));
  EXPECT_NE(res->body.find("3,-"), std::string::npos);
}

TEST_F(ServeApi, BadRequests) {
  EXPECT_EQ(post_label({{"id", 9}, {"label", "+"}}), 404);
  EXPECT_EQ(post_label({{"id", 1}, {"label", "maybe"}}), 400);
  EXPECT_EQ(post_label({{"label", "+"}}), 400);
  auto res = client->Post("/api/label", "{broken", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["ok"], false);
  res = client->Get("/api/export?format=xml");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client->Get("/api/image/5.png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
}

TEST_F(ServeApi, ImageEndpointServesThePng) {
  auto res = client->Get("/api/image/2.png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  const auto expected = serve::render_png(stack[2]);
  EXPECT_EQ(res->body, std::string(expected.begin(), expected.end()));
}

TEST_F(ServeApi, ConcurrentWritersLeaveAConsistentStore) {
  std::vector<std::thread> writers;
  for (int t = 0; t < 4; ++t)
    writers.emplace_back([this, t] {
      httplib::Client c("127.0.0.1", port);
      for (int i = 0; i < 10; ++i) {
        json body = {{"id", (t + i) % 5}, {"label", (i % 2) ? "+" : "-"}};
        c.Post("/api/label", body.dump(), "application/json");
      }
    });
  for (auto& w : writers) w.join();
  EXPECT_EQ(read_label_csv(dir / "labels.csv"), server->labels());
}
