#include "postpick/imgio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>
#include <string_view>

namespace postpick {
namespace {

// MRC-2014 byte offsets used by this reader/writer.
constexpr std::size_t kOffNx = 0, kOffNy = 4, kOffNz = 8, kOffMode = 12;
constexpr std::size_t kOffMx = 28, kOffMy = 32, kOffMz = 36;
constexpr std::size_t kOffCellA = 40, kOffCellB = 44, kOffCellC = 48;
constexpr std::size_t kOffAlpha = 52, kOffBeta = 56, kOffGamma = 60;
constexpr std::size_t kOffMapC = 64, kOffMapR = 68, kOffMapS = 72;
constexpr std::size_t kOffDmin = 76, kOffDmax = 80, kOffDmean = 84;
constexpr std::size_t kOffNsymbt = 92;
constexpr std::size_t kOffNversion = 108;
constexpr std::size_t kOffMap = 208, kOffMachst = 212, kOffRms = 216;

std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::int32_t load_i32(const unsigned char* p) { return std::bit_cast<std::int32_t>(load_u32(p)); }
float load_f32(const unsigned char* p) { return std::bit_cast<float>(load_u32(p)); }

void store_u32(unsigned char* p, std::uint32_t v) {
  p[0] = static_cast<unsigned char>(v & 0xff);
  p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
  p[2] = static_cast<unsigned char>((v >> 16) & 0xff);
  p[3] = static_cast<unsigned char>((v >> 24) & 0xff);
}
void store_i32(unsigned char* p, std::int32_t v) { store_u32(p, std::bit_cast<std::uint32_t>(v)); }
void store_f32(unsigned char* p, float v) { store_u32(p, std::bit_cast<std::uint32_t>(v)); }

[[noreturn]] void header_error(const std::string& field, const std::string& msg) {
  throw MrcError(MrcError::Code::malformed_header, field, "MRC header field '" + field + "': " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_real(std::string_view cell, std::size_t line_no) {
  double v = 0.0;
  // from_chars rejects a leading '+', which is never written by format_real.
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    throw TableError("line " + std::to_string(line_no) + ": non-numeric cell '" + std::string(cell) + "'");
  if (!std::isfinite(v))
    throw TableError("line " + std::to_string(line_no) + ": non-finite value '" + std::string(cell) + "'");
  return v;
}

std::size_t parse_id(std::string_view cell, std::size_t line_no) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    throw TableError("line " + std::to_string(line_no) + ": invalid id '" + std::string(cell) + "'");
  return v;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TableError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    lines.push_back(line);
  }
  return lines;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TableError("cannot write " + path.string());
  out << text;
  if (!out) throw TableError("write failed: " + path.string());
}

}  // namespace

std::string format_real(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw TableError("cannot format value");
  return std::string(buf.data(), ptr);
}

ImageStack parse_stack(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kMrcHeaderBytes)
    throw MrcError(MrcError::Code::malformed_header, "header",
                   "MRC header truncated: " + std::to_string(bytes.size()) + " of 1024 bytes");
  const unsigned char* h = bytes.data();

  const std::int32_t nx = load_i32(h + kOffNx);
  const std::int32_t ny = load_i32(h + kOffNy);
  const std::int32_t nz = load_i32(h + kOffNz);
  const std::int32_t mode = load_i32(h + kOffMode);
  const std::int32_t nsymbt = load_i32(h + kOffNsymbt);

  if (h[kOffMachst] == 0x11 && h[kOffMachst + 1] == 0x11) header_error("machst", "big-endian files are not supported");
  if (std::memcmp(h + kOffMap, "MAP ", 4) != 0 && load_u32(h + kOffMap) != 0)
    header_error("map", "missing 'MAP ' identifier");
  if (nx <= 0) header_error("nx", "must be positive, got " + std::to_string(nx));
  if (ny <= 0) header_error("ny", "must be positive, got " + std::to_string(ny));
  if (nz <= 0) header_error("nz", "must be positive, got " + std::to_string(nz));
  if (mode != kMrcModeFloat32)
    throw MrcError(MrcError::Code::unsupported_mode, "mode",
                   "unsupported MRC mode " + std::to_string(mode) + " (only mode 2 is supported)");
  if (nsymbt < 0) header_error("nsymbt", "negative extended header size");

  const std::size_t section = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  const std::size_t offset = kMrcHeaderBytes + static_cast<std::size_t>(nsymbt);
  const std::size_t needed = offset + section * static_cast<std::size_t>(nz) * 4;
  if (bytes.size() < needed)
    throw MrcError(MrcError::Code::truncated_data, "data",
                   "MRC data truncated: need " + std::to_string(needed) + " bytes, file has " +
                       std::to_string(bytes.size()));

  double pixel_size = static_cast<double>(load_f32(h + kOffCellA)) / nx;
  if (!(pixel_size > 0.0) || !std::isfinite(pixel_size)) {
    std::cerr << "warning: MRC cell dimensions unset; assuming " << kDefaultPixelSize << " A/pixel\n";
    pixel_size = kDefaultPixelSize;
  }

  ImageStack stack;
  const unsigned char* p = bytes.data() + offset;
  for (std::int32_t z = 0; z < nz; ++z) {
    std::vector<float> data(section);
    for (std::size_t i = 0; i < section; ++i, p += 4) {
      data[i] = load_f32(p);
      if (!std::isfinite(data[i]))
        throw MrcError(MrcError::Code::non_finite_data, "data",
                       "non-finite value in section " + std::to_string(z));
    }
    stack.push_back(Image(nx, ny, pixel_size, std::move(data)));
  }
  return stack;
}

std::vector<unsigned char> serialize_stack(const ImageStack& stack) {
  if (stack.empty()) throw std::invalid_argument("cannot write an empty stack");
  const auto nx = static_cast<std::int32_t>(stack.width());
  const auto ny = static_cast<std::int32_t>(stack.height());
  const auto nz = static_cast<std::int32_t>(stack.size());
  const std::size_t section = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);

  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const Image& im : stack) {
    for (float v : im.pixels()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
      sum_sq += static_cast<double>(v) * v;
    }
  }
  const double n = static_cast<double>(section) * nz;
  const double mean = sum / n;
  const double rms = std::sqrt(std::max(0.0, sum_sq / n - mean * mean));

  std::vector<unsigned char> out(kMrcHeaderBytes + section * static_cast<std::size_t>(nz) * 4, 0);
  unsigned char* h = out.data();
  const auto px = static_cast<float>(stack.pixel_size());
  store_i32(h + kOffNx, nx);
  store_i32(h + kOffNy, ny);
  store_i32(h + kOffNz, nz);
  store_i32(h + kOffMode, kMrcModeFloat32);
  store_i32(h + kOffMx, nx);
  store_i32(h + kOffMy, ny);
  store_i32(h + kOffMz, nz);
  store_f32(h + kOffCellA, px * static_cast<float>(nx));
  store_f32(h + kOffCellB, px * static_cast<float>(ny));
  store_f32(h + kOffCellC, px * static_cast<float>(nz));
  store_f32(h + kOffAlpha, 90.0f);
  store_f32(h + kOffBeta, 90.0f);
  store_f32(h + kOffGamma, 90.0f);
  store_i32(h + kOffMapC, 1);
  store_i32(h + kOffMapR, 2);
  store_i32(h + kOffMapS, 3);
  store_f32(h + kOffDmin, lo);
  store_f32(h + kOffDmax, hi);
  store_f32(h + kOffDmean, static_cast<float>(mean));
  store_i32(h + kOffNsymbt, 0);
  store_i32(h + kOffNversion, 20140);
  std::memcpy(h + kOffMap, "MAP ", 4);
  h[kOffMachst] = 0x44;
  h[kOffMachst + 1] = 0x44;
  store_f32(h + kOffRms, static_cast<float>(rms));

  unsigned char* p = out.data() + kMrcHeaderBytes;
  for (const Image& im : stack)
    for (float v : im.pixels()) {
      store_f32(p, v);
      p += 4;
    }
  return out;
}

ImageStack read_stack(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MrcError(MrcError::Code::io, "file", "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_stack(bytes);
}

void write_stack(const ImageStack& stack, const std::filesystem::path& path) {
  const auto bytes = serialize_stack(stack);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MrcError(MrcError::Code::io, "file", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw MrcError(MrcError::Code::io, "file", "write failed: " + path.string());
}

FeatureTable read_feature_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw TableError(path.string() + ": empty feature table");

  const auto header = split_csv(lines.front());
  if (header.empty() || header[0] != "id") throw TableError("feature table header must start with 'id'");
  const bool has_label = header.size() == kFeatureCount + 2;
  if (header.size() != kFeatureCount + 1 && !has_label)
    throw TableError("feature table header has " + std::to_string(header.size()) + " columns, expected " +
                     std::to_string(kFeatureCount + 1) + " or " + std::to_string(kFeatureCount + 2));
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    if (header[j + 1] != kFeatureNames[j])
      throw TableError("feature table header column " + std::to_string(j + 1) + " is '" +
                       std::string(header[j + 1]) + "', expected '" + std::string(kFeatureNames[j]) + "'");
  if (has_label && header.back() != "label")
    throw TableError("last feature table column must be 'label'");

  FeatureTable table;
  if (has_label) table.labels.emplace();
  std::set<std::size_t> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv(lines[i]);
    if (cells.size() != header.size())
      throw TableError("line " + std::to_string(i + 1) + ": expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(cells.size()));
    const std::size_t id = parse_id(cells[0], i + 1);
    if (!seen.insert(id).second) throw TableError("line " + std::to_string(i + 1) + ": duplicate id " + std::to_string(id));
    FeatureVector fv{};
    for (std::size_t j = 0; j < kFeatureCount; ++j) fv[j] = parse_real(cells[j + 1], i + 1);
    table.ids.push_back(id);
    table.features.push_back(fv);
    if (has_label) {
      const auto tok = cells.back();
      if (tok == "+") {
        table.labels->push_back(Label::positive);
      } else if (tok == "-") {
        table.labels->push_back(Label::negative);
      } else {
        throw TableError("line " + std::to_string(i + 1) + ": invalid label '" + std::string(tok) + "'");
      }
    }
  }
  return table;
}

void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path) {
  if (table.features.size() != table.ids.size() || (table.labels && table.labels->size() != table.ids.size()))
    throw TableError("feature table columns have inconsistent lengths");
  std::ostringstream os;
  os << "id";
  for (auto name : kFeatureNames) os << ',' << name;
  if (table.labels) os << ",label";
  os << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    os << table.ids[i];
    for (double v : table.features[i]) {
      if (!std::isfinite(v)) throw TableError("non-finite feature value for id " + std::to_string(table.ids[i]));
      os << ',' << format_real(v);
    }
    if (table.labels) os << ',' << label_token((*table.labels)[i]);
    os << '\n';
  }
  write_text(path, os.str());
}

LabelTable read_label_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw TableError(path.string() + ": empty label table");
  const auto header = split_csv(lines.front());
  if (header.size() != 2 || header[0] != "id" || header[1] != "label")
    throw TableError("label table header must be 'id,label'");
  LabelTable table;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv(lines[i]);
    if (cells.size() != 2)
      throw TableError("line " + std::to_string(i + 1) + ": expected 2 columns, got " + std::to_string(cells.size()));
    const std::size_t id = parse_id(cells[0], i + 1);
    if (table.contains(id)) throw TableError("line " + std::to_string(i + 1) + ": duplicate id " + std::to_string(id));
    if (cells[1] == "+") {
      table.set(id, Label::positive);
    } else if (cells[1] == "-") {
      table.set(id, Label::negative);
    } else if (cells[1] == "unlabeled" || cells[1].empty()) {
      table.set(id, std::nullopt);
    } else {
      throw TableError("line " + std::to_string(i + 1) + ": invalid label '" + std::string(cells[1]) + "'");
    }
  }
  return table;
}

std::string format_label_csv(const LabelTable& table) {
  std::ostringstream os;
  os << "id,label\n";
  for (const auto& row : table.rows()) {
    os << row.id << ',';
    if (row.label) {
      os << label_token(*row.label);
    } else {
      os << "unlabeled";
    }
    os << '\n';
  }
  return os.str();
}

void write_label_csv(const LabelTable& table, const std::filesystem::path& path) {
  write_text(path, format_label_csv(table));
}

}  // namespace postpick
