#pragma once

// Twelve-scalar descriptor of a boxed image: intensity moments and quantiles,
// Otsu foreground size, Canny edge segments, radially weighted intensity,
// phase-symmetry blob count and dark-dot dispersion.

#include <cstddef>
#include <span>
#include <vector>

#include "postpick/feature_vector.hpp"
#include "postpick/image.hpp"

namespace postpick::features {

struct PhaseSymParams {
  int n_scales = 5;
  int n_orientations = 6;
  double min_wavelength = 3.0;  // pixels
  double scale_multiplier = 2.1;
  double sigma_on_f = 0.55;
  double noise_k = 2.0;

  void validate() const;
};

struct OtsuResult {
  double threshold = 0.0;
  std::size_t foreground = 0;  // pixels >= threshold; 0 for a flat image
};

/// 256 equal bins over [min, max]; threshold is the bin edge maximizing the
/// between-class variance (first edge on ties).
OtsuResult otsu(std::span<const float> values);
double otsu_threshold(const Image& image);

std::size_t canny_edge_count(const Image& image);

/// Sum(w_i I_i) / Sum(w_i) with w = 1 / (1 + distance to the image center).
double radial_weighted_intensity(const Image& image);

/// Per-pixel phase symmetry in [0, 1] from a log-Gabor quadrature filter bank.
Image phase_symmetry_map(const Image& image, const PhaseSymParams& params = {});

std::size_t blob_count(const Image& image, const PhaseSymParams& params = {});

enum class DotPolarity { bright, dark };

/// Mean squared distance of dot centers from their centroid; dots are
/// 8-connected regions at or above the 95% quantile after Gaussian smoothing.
double dark_dot_dispersion(const Image& image, DotPolarity polarity = DotPolarity::bright);

FeatureVector extract_features(const Image& image);

/// Quantile by linear interpolation between order statistics of sorted data.
double quantile_sorted(std::span<const double> sorted, double p);

/// Separable Gaussian blur with mirrored borders; radius = ceil(3 sigma)
/// unless given.
std::vector<double> gaussian_blur(std::span<const double> values, int width, int height, double sigma,
                                  int radius = -1);

/// 8-connected components of a binary mask; returns a label per pixel
/// (-1 = background) and the component count.
std::size_t label_components(std::span<const unsigned char> mask, int width, int height,
                             std::vector<int>& labels);

}  // namespace postpick::features
