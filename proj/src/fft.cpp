#include "postpick/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace postpick::fft {
namespace {

struct PlanCache {
  std::mutex mutex;
  std::map<std::tuple<int, int, int>, fftw_plan> plans;

  ~PlanCache() {
    for (auto& [key, plan] : plans) fftw_destroy_plan(plan);
  }

  fftw_plan get(int width, int height, int sign) {
    std::lock_guard lock(mutex);
    auto key = std::make_tuple(width, height, sign);
    auto it = plans.find(key);
    if (it != plans.end()) return it->second;
    // FFTW_ESTIMATE leaves the input untouched and picks the same algorithm
    // on every run, which keeps results bit-reproducible.
    ComplexGrid scratch(static_cast<std::size_t>(width) * height);
    auto* data = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft_2d(height, width, data, data, sign, FFTW_ESTIMATE);
    if (plan == nullptr) throw std::runtime_error("FFTW plan creation failed");
    plans.emplace(key, plan);
    return plan;
  }
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

void execute(ComplexGrid& grid, int width, int height, int sign) {
  if (grid.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("FFT grid size mismatch");
  fftw_plan plan = cache().get(width, height, sign);
  auto* data = reinterpret_cast<fftw_complex*>(grid.data());
  fftw_execute_dft(plan, data, data);
}

}  // namespace

void* aligned_alloc_bytes(std::size_t bytes) {
  void* p = fftw_malloc(bytes == 0 ? 1 : bytes);
  if (p == nullptr) throw std::bad_alloc();
  return p;
}

void aligned_free(void* p) noexcept { fftw_free(p); }

void forward(ComplexGrid& grid, int width, int height) { execute(grid, width, height, FFTW_FORWARD); }
void inverse(ComplexGrid& grid, int width, int height) { execute(grid, width, height, FFTW_BACKWARD); }

ComplexGrid to_complex(const Image& image) {
  ComplexGrid grid(image.size());
  auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) grid[i] = Complex(px[i], 0.0);
  return grid;
}

ComplexGrid spectrum(const Image& image) {
  ComplexGrid grid = to_complex(image);
  forward(grid, image.width(), image.height());
  return grid;
}

Image real_part_inverse(ComplexGrid grid, int width, int height, double pixel_size) {
  inverse(grid, width, height);
  const double scale = 1.0 / (static_cast<double>(width) * height);
  Image out(width, height, pixel_size);
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(grid[i].real() * scale);
  return out;
}

Image filter(const Image& image, const std::function<double(double, double)>& gain) {
  const int w = image.width();
  const int h = image.height();
  ComplexGrid grid = spectrum(image);
  const double dfx = 1.0 / (w * image.pixel_size());
  const double dfy = 1.0 / (h * image.pixel_size());
  for (int ky = 0; ky < h; ++ky) {
    const double fy = signed_index(ky, h) * dfy;
    for (int kx = 0; kx < w; ++kx) {
      const double fx = signed_index(kx, w) * dfx;
      grid[static_cast<std::size_t>(ky) * w + kx] *= gain(fx, fy);
    }
  }
  return real_part_inverse(std::move(grid), w, h, image.pixel_size());
}

}  // namespace postpick::fft
