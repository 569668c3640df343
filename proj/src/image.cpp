#include "postpick/image.hpp"

#include <algorithm>
#include <cmath>

namespace postpick {

Image::Image(int width, int height, double pixel_size)
    : Image(width, height, pixel_size,
            std::vector<float>(static_cast<std::size_t>(std::max(width, 0)) *
                               static_cast<std::size_t>(std::max(height, 0)))) {}

Image::Image(int width, int height, double pixel_size, std::vector<float> data)
    : width_(width), height_(height), pixel_size_(pixel_size), data_(std::move(data)) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("image dimensions must be positive");
  if (!(pixel_size > 0.0) || !std::isfinite(pixel_size))
    throw std::invalid_argument("pixel size must be positive");
  if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw std::invalid_argument("image data length does not match width x height");
}

ImageStack::ImageStack(std::vector<Image> images) {
  images_.reserve(images.size());
  for (auto& im : images) push_back(std::move(im));
}

void ImageStack::push_back(Image image) {
  if (!images_.empty()) {
    const Image& first = images_.front();
    if (image.width() != first.width() || image.height() != first.height())
      throw std::invalid_argument("stack images must share dimensions");
    if (image.pixel_size() != first.pixel_size())
      throw std::invalid_argument("stack images must share pixel size");
  }
  images_.push_back(std::move(image));
}

LabelTable LabelTable::unlabeled(std::size_t n) {
  LabelTable t;
  t.rows_.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.rows_[i].id = i;
  return t;
}

void LabelTable::set(std::size_t id, std::optional<Label> label) {
  auto it = std::lower_bound(rows_.begin(), rows_.end(), id,
                             [](const LabelRow& r, std::size_t v) { return r.id < v; });
  if (it != rows_.end() && it->id == id) {
    it->label = label;
  } else {
    rows_.insert(it, LabelRow{id, label});
  }
}

std::optional<Label> LabelTable::get(std::size_t id) const {
  auto it = std::lower_bound(rows_.begin(), rows_.end(), id,
                             [](const LabelRow& r, std::size_t v) { return r.id < v; });
  if (it != rows_.end() && it->id == id) return it->label;
  return std::nullopt;
}

bool LabelTable::contains(std::size_t id) const {
  return std::binary_search(rows_.begin(), rows_.end(), LabelRow{id, std::nullopt},
                            [](const LabelRow& a, const LabelRow& b) { return a.id < b.id; });
}

std::size_t LabelTable::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(rows_.begin(), rows_.end(), [](const LabelRow& r) { return r.label.has_value(); }));
}

}  // namespace postpick
