#pragma once

// HTTP service behind the labeling frontend. The stack is read-only; labels
// live in a CSV store that is rewritten atomically on every change.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "postpick/image.hpp"

namespace postpick::serve {

/// 8-bit grayscale PNG with a per-image min-max stretch (flat images render black).
std::vector<unsigned char> render_png(const Image& image);

/// Thread-safe label table backed by a CSV file.
class LabelStore {
 public:
  /// Loads `path` if it exists, otherwise starts all-unlabeled for `count` images.
  LabelStore(std::filesystem::path path, std::size_t count);

  void set(std::size_t id, std::optional<Label> label);
  LabelTable snapshot() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  void persist() const;

  std::filesystem::path path_;
  mutable std::mutex mutex_;
  LabelTable table_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
};

class Server {
 public:
  Server(ImageStack stack, std::filesystem::path labels_path);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the socket and returns the bound port; throws if binding fails.
  int bind(const ServerOptions& options);
  /// Blocks serving requests until stop().
  void run();
  void stop();

  LabelTable labels() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace postpick::serve
