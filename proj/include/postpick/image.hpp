#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace postpick {

/// Boxed image: row-major 32-bit intensities, higher value = higher density.
class Image {
 public:
  Image() = default;
  Image(int width, int height, double pixel_size = 1.0);
  Image(int width, int height, double pixel_size, std::vector<float> data);

  int width() const { return width_; }
  int height() const { return height_; }
  double pixel_size() const { return pixel_size_; }
  std::size_t size() const { return data_.size(); }
  bool square() const { return width_ == height_; }

  float& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> pixels() { return data_; }
  std::span<const float> pixels() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  double pixel_size_ = 1.0;
  std::vector<float> data_;
};

/// Same-shape sequence of images sharing one pixel size.
class ImageStack {
 public:
  ImageStack() = default;
  explicit ImageStack(std::vector<Image> images);

  void push_back(Image image);

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  const Image& operator[](std::size_t i) const { return images_[i]; }
  const std::vector<Image>& images() const { return images_; }

  int width() const { return images_.empty() ? 0 : images_.front().width(); }
  int height() const { return images_.empty() ? 0 : images_.front().height(); }
  double pixel_size() const { return images_.empty() ? 0.0 : images_.front().pixel_size(); }

  auto begin() const { return images_.begin(); }
  auto end() const { return images_.end(); }

  bool operator==(const ImageStack&) const = default;

 private:
  std::vector<Image> images_;
};

enum class Label : std::int8_t { negative = 0, positive = 1 };

inline char label_token(Label l) { return l == Label::positive ? '+' : '-'; }

/// Row of a label table; `label` absent means the image is still unlabeled.
struct LabelRow {
  std::size_t id = 0;
  std::optional<Label> label;

  bool operator==(const LabelRow&) const = default;
};

/// Labels keyed by image index; ids are unique and kept sorted.
class LabelTable {
 public:
  LabelTable() = default;

  /// Table with `n` unlabeled rows.
  static LabelTable unlabeled(std::size_t n);

  void set(std::size_t id, std::optional<Label> label);
  std::optional<Label> get(std::size_t id) const;
  bool contains(std::size_t id) const;

  const std::vector<LabelRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t labeled_count() const;

  bool operator==(const LabelTable&) const = default;

 private:
  std::vector<LabelRow> rows_;
};

}  // namespace postpick
