#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace postpick {

inline constexpr std::size_t kFeatureCount = 12;

/// Canonical feature order. Saved models and feature tables depend on it.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "f_mean", "f_var",         "f_q0",     "f_q10",   "f_q50",   "f_q90",
    "f_q100", "f_otsu_fg",     "f_canny_edges", "f_radial", "f_blobs", "f_darkdot"};

enum FeatureIndex : std::size_t {
  kMean = 0,
  kVar,
  kQ0,
  kQ10,
  kQ50,
  kQ90,
  kQ100,
  kOtsuForeground,
  kCannyEdges,
  kRadial,
  kBlobs,
  kDarkDot,
};

using FeatureVector = std::array<double, kFeatureCount>;

}  // namespace postpick
