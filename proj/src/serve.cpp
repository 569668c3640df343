#include "postpick/serve.hpp"

#include <httplib.h>
#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <stdexcept>

#include "postpick/imgio.hpp"

namespace postpick::serve {
namespace {

using nlohmann::json;

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void no_flush(png_structp) {}

std::string label_name(const std::optional<Label>& l) { return l ? std::string(1, label_token(*l)) : "unlabeled"; }

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, json{{"ok", false}, {"error", message}}, status);
}

std::optional<std::size_t> parse_size(const std::string& text) {
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

}  // namespace

std::vector<unsigned char> render_png(const Image& image) {
  const auto px = image.pixels();
  float lo = 0.0f, hi = 0.0f;
  if (!px.empty()) {
    const auto [mn, mx] = std::minmax_element(px.begin(), px.end());
    lo = *mn;
    hi = *mx;
  }
  const double span = static_cast<double>(hi) - lo;
  std::vector<unsigned char> gray(px.size(), 0);
  if (span > 0.0)
    for (std::size_t i = 0; i < px.size(); ++i)
      gray[i] = static_cast<unsigned char>(std::clamp(std::lround((px[i] - lo) / span * 255.0), 0L, 255L));

  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, no_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height(); ++y)
    png_write_row(png, gray.data() + static_cast<std::size_t>(y) * image.width());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

LabelStore::LabelStore(std::filesystem::path path, std::size_t count) : path_(std::move(path)) {
  table_ = LabelTable::unlabeled(count);
  if (std::filesystem::exists(path_)) {
    const LabelTable existing = read_label_csv(path_);
    for (const auto& row : existing.rows()) {
      if (row.id >= count)
        throw TableError(path_.string() + ": label id " + std::to_string(row.id) + " is outside the stack (" +
                         std::to_string(count) + " images)");
      table_.set(row.id, row.label);
    }
  }
  persist();
}

void LabelStore::set(std::size_t id, std::optional<Label> label) {
  std::lock_guard lock(mutex_);
  if (!table_.contains(id)) throw std::out_of_range("no image with id " + std::to_string(id));
  table_.set(id, label);
  persist();
}

LabelTable LabelStore::snapshot() const {
  std::lock_guard lock(mutex_);
  return table_;
}

void LabelStore::persist() const {
  auto tmp = path_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << format_label_csv(table_);
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path_);
}

struct Server::Impl {
  ImageStack stack;
  LabelStore store;
  httplib::Server http;

  Impl(ImageStack s, std::filesystem::path labels) : stack(std::move(s)), store(std::move(labels), stack.size()) {}

  void routes() {
    http.Get("/api/stack", [this](const httplib::Request&, httplib::Response& res) {
      const auto table = store.snapshot();
      const std::size_t labeled = table.labeled_count();
      send_json(res, json{{"count", stack.size()},
                          {"width", stack.width()},
                          {"height", stack.height()},
                          {"labeled", labeled},
                          {"unlabeled", table.size() - labeled}});
    });

    http.Get("/api/images", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string status = req.has_param("status") ? req.get_param_value("status") : "all";
      if (status != "all" && status != "labeled" && status != "unlabeled")
        return send_error(res, 400, "status must be all, labeled or unlabeled");
      std::size_t offset = 0, limit = 100;
      if (req.has_param("offset")) {
        const auto v = parse_size(req.get_param_value("offset"));
        if (!v) return send_error(res, 400, "offset must be a non-negative integer");
        offset = *v;
      }
      if (req.has_param("limit")) {
        const auto v = parse_size(req.get_param_value("limit"));
        if (!v) return send_error(res, 400, "limit must be a non-negative integer");
        limit = *v;
      }
      json rows = json::array();
      std::size_t skipped = 0;
      const auto table = store.snapshot();
      for (const auto& row : table.rows()) {
        if (status == "labeled" && !row.label) continue;
        if (status == "unlabeled" && row.label) continue;
        if (skipped++ < offset) continue;
        if (rows.size() >= limit) break;
        rows.push_back(json{{"id", row.id}, {"label", label_name(row.label)}});
      }
      send_json(res, rows);
    });

    http.Get(R"(/api/image/(\d+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_size(req.matches[1].str());
      if (!id || *id >= stack.size()) return send_error(res, 404, "no image with id " + req.matches[1].str());
      const auto png = render_png(stack[*id]);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });

    http.Post("/api/label", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        return send_error(res, 400, "body is not valid JSON");
      }
      if (!body.is_object() || !body.contains("id") || !body.contains("label"))
        return send_error(res, 400, "body needs id and label");
      if (!body["id"].is_number_unsigned()) return send_error(res, 400, "id must be a non-negative integer");
      const auto id = body["id"].get<std::size_t>();
      if (id >= stack.size()) return send_error(res, 404, "no image with id " + std::to_string(id));
      std::optional<Label> label;
      if (body["label"] == "+") {
        label = Label::positive;
      } else if (body["label"] == "-") {
        label = Label::negative;
      } else if (body["label"] != "unlabeled") {
        return send_error(res, 400, "label must be \"+\", \"-\" or \"unlabeled\"");
      }
      try {
        store.set(id, label);
      } catch (const std::exception& e) {
        return send_error(res, 500, e.what());
      }
      send_json(res, json{{"ok", true}});
    });

    http.Get("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string format = req.has_param("format") ? req.get_param_value("format") : "csv";
      if (format != "csv") return send_error(res, 400, "only format=csv is supported");
      res.set_header("Content-Disposition", "attachment; filename=\"labels.csv\"");
      res.set_content(format_label_csv(store.snapshot()), "text/csv");
    });
  }
};

Server::Server(ImageStack stack, std::filesystem::path labels_path)
    : impl_(std::make_unique<Impl>(std::move(stack), std::move(labels_path))) {
  impl_->routes();
}

Server::~Server() { stop(); }

int Server::bind(const ServerOptions& options) {
  if (options.static_dir && !impl_->http.set_mount_point("/", options.static_dir->string()))
    throw std::runtime_error("static directory " + options.static_dir->string() + " does not exist");
  const int port = options.port == 0 ? impl_->http.bind_to_any_port(options.host)
                                     : (impl_->http.bind_to_port(options.host, options.port) ? options.port : -1);
  if (port < 0) throw std::runtime_error("cannot bind " + options.host + ":" + std::to_string(options.port));
  return port;
}

void Server::run() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_) impl_->http.stop();
}

LabelTable Server::labels() const { return impl_->store.snapshot(); }

}  // namespace postpick::serve
