#pragma once

// MRC-2014 mode-2 stacks and the CSV tables exchanged between commands.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "postpick/feature_vector.hpp"
#include "postpick/image.hpp"

namespace postpick {

inline constexpr std::size_t kMrcHeaderBytes = 1024;
inline constexpr int kMrcModeFloat32 = 2;
inline constexpr double kDefaultPixelSize = 2.0;

class MrcError : public std::runtime_error {
 public:
  enum class Code { io, malformed_header, unsupported_mode, truncated_data, non_finite_data };

  MrcError(Code code, std::string field, const std::string& what)
      : std::runtime_error(what), code_(code), field_(std::move(field)) {}

  Code code() const { return code_; }
  /// Header field (or "data") the error refers to.
  const std::string& field() const { return field_; }

 private:
  Code code_;
  std::string field_;
};

class TableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads every section of a little-endian mode-2 MRC file. Pixel size is
/// cell_a / nx; when the cell is unset it falls back to 2.0 A/px.
ImageStack read_stack(const std::filesystem::path& path);

/// Writes a mode-2 little-endian MRC file with min/max/mean header stats.
void write_stack(const ImageStack& stack, const std::filesystem::path& path);

/// Parses a stack from an in-memory buffer (the file reader uses this too).
ImageStack parse_stack(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_stack(const ImageStack& stack);

struct FeatureTable {
  std::vector<std::size_t> ids;
  std::vector<FeatureVector> features;
  std::optional<std::vector<Label>> labels;

  std::size_t size() const { return ids.size(); }
};

FeatureTable read_feature_csv(const std::filesystem::path& path);
void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path);

/// `id,label` with tokens `+`, `-` and `unlabeled`.
LabelTable read_label_csv(const std::filesystem::path& path);
void write_label_csv(const LabelTable& table, const std::filesystem::path& path);
std::string format_label_csv(const LabelTable& table);

/// Shortest decimal that parses back to exactly `value`.
std::string format_real(double value);

}  // namespace postpick
