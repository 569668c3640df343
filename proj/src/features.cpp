#include "postpick/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "postpick/fft.hpp"

namespace postpick::features {
namespace {

constexpr int kOtsuBins = 256;
constexpr double kCannySigma = 1.4;
constexpr double kCannyHighPercentile = 0.90;
constexpr double kCannyLowRatio = 0.4;
constexpr double kDotSigma = 2.0;
constexpr int kDotRadius = 6;
constexpr double kDotQuantile = 0.95;
constexpr std::size_t kMinBlobArea = 4;
constexpr double kSymmetryEpsilon = 1e-4;

std::vector<double> to_double(const Image& image) {
  auto px = image.pixels();
  return std::vector<double>(px.begin(), px.end());
}

// Mirrored index: -1 -> 0, n -> n - 1.
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// One 1D pass; symmetric taps are summed pairwise so the result does not
// depend on the scan direction.
std::vector<double> blur_pass(std::span<const double> in, int width, int height, std::span<const double> taps,
                              bool horizontal) {
  std::vector<double> out(in.size());
  const int radius = static_cast<int>(taps.size()) - 1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      auto sample = [&](int d) {
        return horizontal ? in[static_cast<std::size_t>(y) * width + reflect(x + d, width)]
                          : in[static_cast<std::size_t>(reflect(y + d, height)) * width + x];
      };
      double acc = taps[0] * sample(0);
      for (int d = 1; d <= radius; ++d) acc += taps[d] * (sample(d) + sample(-d));
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  return out;
}

double sum_sorted(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

struct FilterBank {
  // filters[o * n_scales + s]: real transfer function over the FFT grid.
  std::vector<std::vector<double>> filters;
};

using BankKey = std::tuple<int, int, int, double, double, double>;

std::shared_ptr<const FilterBank> filter_bank(int n, const PhaseSymParams& p) {
  static std::mutex mutex;
  static std::map<BankKey, std::shared_ptr<const FilterBank>> cache;
  const BankKey key{n, p.n_scales, p.n_orientations, p.min_wavelength, p.scale_multiplier, p.sigma_on_f};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }

  const std::size_t cells = static_cast<std::size_t>(n) * n;
  std::vector<double> radius(cells), sin_t(cells), cos_t(cells), lowpass(cells);
  for (int ky = 0; ky < n; ++ky) {
    const double fy = static_cast<double>(fft::signed_index(ky, n)) / n;
    for (int kx = 0; kx < n; ++kx) {
      const double fx = static_cast<double>(fft::signed_index(kx, n)) / n;
      const std::size_t i = static_cast<std::size_t>(ky) * n + kx;
      radius[i] = std::sqrt(fx * fx + fy * fy);
      const double theta = std::atan2(-fy, fx);
      sin_t[i] = std::sin(theta);
      cos_t[i] = std::cos(theta);
      // Suppresses the grid corners so every filter stays inside the band.
      lowpass[i] = 1.0 / (1.0 + std::pow(radius[i] / 0.45, 30.0));
    }
  }

  auto bank = std::make_shared<FilterBank>();
  const double theta_sigma = std::numbers::pi / p.n_orientations / 1.2;
  const double log_sigma_sq = 2.0 * std::log(p.sigma_on_f) * std::log(p.sigma_on_f);
  for (int o = 0; o < p.n_orientations; ++o) {
    const double angle = o * std::numbers::pi / p.n_orientations;
    std::vector<double> spread(cells);
    for (std::size_t i = 0; i < cells; ++i) {
      const double ds = sin_t[i] * std::cos(angle) - cos_t[i] * std::sin(angle);
      const double dc = cos_t[i] * std::cos(angle) + sin_t[i] * std::sin(angle);
      const double dtheta = std::abs(std::atan2(ds, dc));
      spread[i] = std::exp(-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma));
    }
    for (int s = 0; s < p.n_scales; ++s) {
      const double f0 = 1.0 / (p.min_wavelength * std::pow(p.scale_multiplier, s));
      std::vector<double> filter(cells);
      for (std::size_t i = 0; i < cells; ++i) {
        if (radius[i] == 0.0) continue;
        const double lr = std::log(radius[i] / f0);
        filter[i] = std::exp(-lr * lr / log_sigma_sq) * lowpass[i] * spread[i];
      }
      bank->filters.push_back(std::move(filter));
    }
  }

  std::lock_guard lock(mutex);
  auto [it, inserted] = cache.emplace(key, std::move(bank));
  return it->second;
}

struct Dot {
  double count = 0.0;
  double sum_x = 0.0;
  double sum_y = 0.0;
};

// Mean squared distance of dot centers from their centroid, via pairwise
// differences with integer numerators so the value is independent of the
// order in which dots were found.
double dispersion(const std::vector<Dot>& dots) {
  const std::size_t m = dots.size();
  if (m < 2) return 0.0;
  std::vector<double> terms;
  terms.reserve(m * (m - 1) / 2);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t l = k + 1; l < m; ++l) {
      const double nx = dots[k].sum_x * dots[l].count - dots[l].sum_x * dots[k].count;
      const double ny = dots[k].sum_y * dots[l].count - dots[l].sum_y * dots[k].count;
      const double denom = dots[k].count * dots[l].count;
      terms.push_back((nx * nx + ny * ny) / (denom * denom));
    }
  }
  return sum_sorted(terms) / (static_cast<double>(m) * static_cast<double>(m));
}

}  // namespace

void PhaseSymParams::validate() const {
  if (n_scales < 1 || n_orientations < 1) throw std::invalid_argument("phase symmetry needs >= 1 scale and orientation");
  if (!(min_wavelength > 0.0) || !(scale_multiplier > 0.0) || !(sigma_on_f > 0.0) || !(noise_k > 0.0))
    throw std::invalid_argument("phase symmetry parameters must be positive");
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

OtsuResult otsu(std::span<const float> values) {
  OtsuResult result;
  if (values.empty()) return result;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  result.threshold = lo;
  if (hi == lo) return result;

  const double width = (hi - lo) / kOtsuBins;
  std::array<double, kOtsuBins> edges{};  // edges[k] = lo + k * width
  for (int k = 0; k < kOtsuBins; ++k) edges[k] = lo + k * width;

  // Bin = number of edges 1..255 at or below the value, so "value >= edge k"
  // and "bin >= k" agree exactly.
  std::array<double, kOtsuBins> count{}, sum{};
  std::vector<int> bins(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    const int b = static_cast<int>(std::upper_bound(edges.begin() + 1, edges.end(), v) - (edges.begin() + 1));
    bins[i] = b;
    count[b] += 1.0;
    sum[b] += v;
  }

  const double total_n = static_cast<double>(values.size());
  const double total_s = std::accumulate(sum.begin(), sum.end(), 0.0);
  double best = -1.0;
  int best_k = 0;
  double n0 = 0.0, s0 = 0.0;
  for (int k = 0; k < kOtsuBins; ++k) {
    if (k > 0) {
      n0 += count[k - 1];
      s0 += sum[k - 1];
    }
    const double n1 = total_n - n0;
    double between = 0.0;
    if (n0 > 0.0 && n1 > 0.0) {
      const double diff = s0 / n0 - (total_s - s0) / n1;
      between = (n0 / total_n) * (n1 / total_n) * diff * diff;
    }
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  result.threshold = edges[best_k];
  result.foreground = static_cast<std::size_t>(std::count_if(bins.begin(), bins.end(), [&](int b) { return b >= best_k; }));
  return result;
}

double otsu_threshold(const Image& image) { return otsu(image.pixels()).threshold; }

std::vector<double> gaussian_blur(std::span<const double> values, int width, int height, double sigma, int radius) {
  if (radius < 0) radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(radius) + 1);
  double norm = 0.0;
  for (int d = 0; d <= radius; ++d) {
    taps[d] = std::exp(-0.5 * d * d / (sigma * sigma));
    norm += d == 0 ? taps[d] : 2.0 * taps[d];
  }
  for (double& t : taps) t /= norm;

  // Average of both pass orders: the blur then commutes exactly with
  // 90-degree rotations and flips.
  const auto hv = blur_pass(blur_pass(values, width, height, taps, true), width, height, taps, false);
  const auto vh = blur_pass(blur_pass(values, width, height, taps, false), width, height, taps, true);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (hv[i] + vh[i]);
  return out;
}

std::size_t label_components(std::span<const unsigned char> mask, int width, int height, std::vector<int>& labels) {
  labels.assign(mask.size(), -1);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || labels[start] >= 0) continue;
    labels[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const int x = static_cast<int>(i % width), y = static_cast<int>(i / width);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * width + nx;
          if (mask[j] && labels[j] < 0) {
            labels[j] = next;
            stack.push_back(j);
          }
        }
      }
    }
    ++next;
  }
  return static_cast<std::size_t>(next);
}

std::size_t canny_edge_count(const Image& image) {
  const int w = image.width(), h = image.height();
  const auto smooth = gaussian_blur(to_double(image), w, h, kCannySigma);
  auto at = [&](int x, int y) {
    return smooth[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };

  const std::size_t cells = smooth.size();
  std::vector<double> gx(cells), gy(cells), mag(cells);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      // Outer rows/columns are added first so the result is symmetric.
      gx[i] = ((at(x + 1, y - 1) - at(x - 1, y - 1)) + (at(x + 1, y + 1) - at(x - 1, y + 1))) +
              2.0 * (at(x + 1, y) - at(x - 1, y));
      gy[i] = ((at(x - 1, y + 1) - at(x - 1, y - 1)) + (at(x + 1, y + 1) - at(x + 1, y - 1))) +
              2.0 * (at(x, y + 1) - at(x, y - 1));
      mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    }
  }

  std::vector<double> nonzero;
  for (double m : mag)
    if (m > 0.0) nonzero.push_back(m);
  if (nonzero.empty()) return 0;
  std::sort(nonzero.begin(), nonzero.end());
  const double high = quantile_sorted(nonzero, kCannyHighPercentile);
  const double low = kCannyLowRatio * high;

  // Non-maximum suppression along the quantized gradient direction; ties
  // keep both pixels.
  constexpr double kTan22 = 0.41421356237309503;
  auto mag_at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return mag[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<unsigned char> weak(cells, 0), strong(cells, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = mag[i];
      if (m < low || m == 0.0) continue;
      const double ax = std::abs(gx[i]), ay = std::abs(gy[i]);
      double n1, n2;
      if (ay < kTan22 * ax) {
        n1 = mag_at(x - 1, y);
        n2 = mag_at(x + 1, y);
      } else if (ax < kTan22 * ay) {
        n1 = mag_at(x, y - 1);
        n2 = mag_at(x, y + 1);
      } else if ((gx[i] > 0.0) == (gy[i] > 0.0)) {
        n1 = mag_at(x - 1, y - 1);
        n2 = mag_at(x + 1, y + 1);
      } else {
        n1 = mag_at(x + 1, y - 1);
        n2 = mag_at(x - 1, y + 1);
      }
      if (m < n1 || m < n2) continue;
      weak[i] = 1;
      if (m >= high) strong[i] = 1;
    }
  }

  // Hysteresis: a weak component survives if it contains a strong pixel.
  std::vector<int> labels;
  const std::size_t n = label_components(weak, w, h, labels);
  std::vector<unsigned char> keep(n, 0);
  for (std::size_t i = 0; i < cells; ++i)
    if (strong[i]) keep[static_cast<std::size_t>(labels[i])] = 1;
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
}

double radial_weighted_intensity(const Image& image) {
  const int w = image.width(), h = image.height();
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  std::vector<double> num, den;
  num.reserve(image.size());
  den.reserve(image.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double weight = 1.0 / (1.0 + std::sqrt(dx * dx + dy * dy));
      num.push_back(weight * image.at(x, y));
      den.push_back(weight);
    }
  }
  return sum_sorted(num) / sum_sorted(den);
}

Image phase_symmetry_map(const Image& image, const PhaseSymParams& params) {
  if (!image.square()) throw std::invalid_argument("phase symmetry needs a square image");
  params.validate();
  const int n = image.width();
  const std::size_t cells = image.size();
  Image out(n, n, image.pixel_size());

  // Normalize to zero mean / unit variance so the fixed epsilon in the
  // denominator does not depend on the input contrast.
  std::vector<double> sorted = to_double(image);
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) return out;
  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= static_cast<double>(cells);
  double var = 0.0;
  for (double v : sorted) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(cells));
  if (!(sd > 0.0)) return out;

  // Zero-padded to twice the size: the image is filtered as an isolated patch
  // rather than one tile of a periodic plane, where the midpoints between
  // wrapped copies would read as symmetric.
  const int m = 2 * n;
  const std::size_t padded = static_cast<std::size_t>(m) * m;
  fft::ComplexGrid base(padded, fft::Complex(0.0, 0.0));
  auto px = image.pixels();
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      base[static_cast<std::size_t>(y) * m + x] =
          fft::Complex((px[static_cast<std::size_t>(y) * n + x] - mean) / sd, 0.0);
  fft::forward(base, m, m);

  const auto bank = filter_bank(m, params);
  std::vector<double> total_energy(cells, 0.0), total_amplitude(cells, 0.0);
  std::vector<double> orient_energy(cells), amp_scratch(cells);
  fft::ComplexGrid response(padded);
  double noise_sum = 0.0;
  for (int s = 0; s < params.n_scales; ++s) noise_sum += std::pow(params.scale_multiplier, -s);
  const double scale = 1.0 / static_cast<double>(padded);

  for (int o = 0; o < params.n_orientations; ++o) {
    std::fill(orient_energy.begin(), orient_energy.end(), 0.0);
    double tau = 0.0;
    for (int s = 0; s < params.n_scales; ++s) {
      const auto& filter = bank->filters[static_cast<std::size_t>(o) * params.n_scales + s];
      for (std::size_t i = 0; i < padded; ++i) response[i] = base[i] * filter[i];
      fft::inverse(response, m, m);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          const fft::Complex r = response[static_cast<std::size_t>(y) * m + x];
          const std::size_t i = static_cast<std::size_t>(y) * n + x;
          const double even = r.real() * scale;
          const double odd = r.imag() * scale;
          const double amp = std::sqrt(even * even + odd * odd);
          orient_energy[i] += std::abs(even) - std::abs(odd);
          total_amplitude[i] += amp;
          amp_scratch[i] = amp;
        }
      }
      if (s == 0) {
        auto mid = amp_scratch.begin() + static_cast<std::ptrdiff_t>(cells / 2);
        std::nth_element(amp_scratch.begin(), mid, amp_scratch.end());
        tau = *mid / 0.6745;
      }
    }
    const double threshold = params.noise_k * tau * noise_sum;
    for (std::size_t i = 0; i < cells; ++i) total_energy[i] += std::max(orient_energy[i] - threshold, 0.0);
  }

  auto out_px = out.pixels();
  for (std::size_t i = 0; i < cells; ++i) {
    const double v = total_energy[i] / (total_amplitude[i] + kSymmetryEpsilon);
    out_px[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

std::size_t blob_count(const Image& image, const PhaseSymParams& params) {
  const Image sym = phase_symmetry_map(image, params);
  const OtsuResult th = otsu(sym.pixels());
  if (th.foreground == 0) return 0;
  const auto px = sym.pixels();
  std::vector<unsigned char> mask(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) mask[i] = px[i] >= th.threshold ? 1 : 0;
  std::vector<int> labels;
  const std::size_t n = label_components(mask, sym.width(), sym.height(), labels);
  std::vector<std::size_t> area(n, 0);
  for (int l : labels)
    if (l >= 0) ++area[static_cast<std::size_t>(l)];
  return static_cast<std::size_t>(std::count_if(area.begin(), area.end(), [](std::size_t a) { return a >= kMinBlobArea; }));
}

double dark_dot_dispersion(const Image& image, DotPolarity polarity) {
  const int w = image.width(), h = image.height();
  auto values = to_double(image);
  if (polarity == DotPolarity::dark)
    for (double& v : values) v = -v;
  const auto smooth = gaussian_blur(values, w, h, kDotSigma, kDotRadius);
  std::vector<double> sorted = smooth;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) return 0.0;
  const double threshold = quantile_sorted(sorted, kDotQuantile);

  std::vector<unsigned char> mask(smooth.size());
  for (std::size_t i = 0; i < smooth.size(); ++i) mask[i] = smooth[i] >= threshold ? 1 : 0;
  std::vector<int> labels;
  const std::size_t n = label_components(mask, w, h, labels);
  std::vector<Dot> dots(n);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    Dot& d = dots[static_cast<std::size_t>(labels[i])];
    d.count += 1.0;
    d.sum_x += static_cast<double>(i % w);
    d.sum_y += static_cast<double>(i / w);
  }
  return dispersion(dots);
}

FeatureVector extract_features(const Image& image) {
  FeatureVector f{};
  std::vector<double> sorted = to_double(image);
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : sorted) var += (v - mean) * (v - mean);

  f[kMean] = mean;
  f[kVar] = var / n;
  f[kQ0] = sorted.front();
  f[kQ10] = quantile_sorted(sorted, 0.10);
  f[kQ50] = quantile_sorted(sorted, 0.50);
  f[kQ90] = quantile_sorted(sorted, 0.90);
  f[kQ100] = sorted.back();
  f[kOtsuForeground] = static_cast<double>(otsu(image.pixels()).foreground);
  f[kCannyEdges] = static_cast<double>(canny_edge_count(image));
  f[kRadial] = radial_weighted_intensity(image);
  f[kBlobs] = static_cast<double>(blob_count(image));
  f[kDarkDot] = dark_dot_dispersion(image);
  return f;
}

}  // namespace postpick::features
