#pragma once

// Thin RAII layer over FFTW for 2D complex transforms of image-sized grids.

#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <new>
#include <vector>

#include "postpick/image.hpp"

namespace postpick::fft {

void* aligned_alloc_bytes(std::size_t bytes);
void aligned_free(void* p) noexcept;

template <class T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_alloc();
    return static_cast<T*>(aligned_alloc_bytes(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t) noexcept { aligned_free(p); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Complex = std::complex<double>;
using ComplexGrid = std::vector<Complex, AlignedAllocator<Complex>>;

/// Unnormalized in-place transforms; inverse(forward(x)) = width*height*x.
/// Plans are cached process-wide and shared between threads.
void forward(ComplexGrid& grid, int width, int height);
void inverse(ComplexGrid& grid, int width, int height);

ComplexGrid to_complex(const Image& image);
/// Frequency spectrum of a real image.
ComplexGrid spectrum(const Image& image);
/// Inverse transform (with 1/N normalization) and real part as an image.
Image real_part_inverse(ComplexGrid grid, int width, int height, double pixel_size);

/// Signed frequency index for bin k of an n-point transform.
inline int signed_index(int k, int n) { return k <= n / 2 ? k : k - n; }

/// Multiplies the spectrum of `image` by `gain(fx, fy)` (frequencies in
/// cycles per Angstrom) and transforms back.
Image filter(const Image& image, const std::function<double(double fx, double fy)>& gain);

}  // namespace postpick::fft
