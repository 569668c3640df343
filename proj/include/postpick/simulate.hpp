#pragma once

// Synthetic boxed-image generator: template volumes are projected at random
// orientations, then degraded by structural noise, the microscope CTF, shot
// noise and a Butterworth low-pass, in that order.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "postpick/image.hpp"

namespace postpick::sim {

enum class TemplateKind { particle, plate, cylinder, sphere, empty };

std::string to_string(TemplateKind kind);

/// Cubic density grid, indexed data[(z * side + y) * side + x].
struct Volume {
  int side = 0;
  double voxel_size = 1.0;
  std::vector<float> data;

  float at(int x, int y, int z) const {
    return data[(static_cast<std::size_t>(z) * side + y) * side + x];
  }
  double total() const;
};

/// ZYZ Euler angles in radians: rotate by phi about z, theta about y, then psi about z.
struct EulerAngles {
  double phi = 0.0;
  double theta = 0.0;
  double psi = 0.0;
};

struct CtfParams {
  double voltage_kv = 300.0;
  double defocus_um = 2.0;  // underfocus positive
  double cs_mm = 2.0;
  double amplitude_contrast = 0.07;
  double pixel_size = 2.0;

  /// Relativistic electron wavelength in Angstrom.
  double wavelength() const;
  /// Phase shift chi(f) for spatial frequency f in 1/Angstrom.
  double chi(double f) const;
  /// CTF(f) = -(sqrt(1-A^2) sin chi + A cos chi).
  double gain(double f) const;
  void validate() const;
};

enum class NonParticleMix { plate, cylinder, sphere, empty, all };

NonParticleMix parse_mix(const std::string& token);
std::string to_string(NonParticleMix mix);

struct SimConfig {
  int box = 128;
  double pixel_size = 2.0;
  std::size_t n_particles = 18;
  std::size_t n_nonparticles = 2;
  NonParticleMix mix = NonParticleMix::all;
  double snr_structural = 1.4;
  double snr_shot = 0.05;
  double butterworth_pass = 50.0;  // Angstrom
  double butterworth_stop = 20.0;  // Angstrom
  CtfParams ctf;
  std::uint64_t seed = 1;
  /// Flip the sign after filtering so particles read as bright density
  /// (the CTF leaves them with inverted, micrograph-style contrast).
  bool invert_contrast = true;

  void validate() const;
};

struct SimulatedDataset {
  ImageStack stack;
  LabelTable labels;
  /// Template used for each image, in stack order.
  std::vector<TemplateKind> kinds;
  /// Variance that both noise stages were scaled against.
  double signal_variance = 0.0;
};

/// Seed of the procedural particle volume used by simulate_dataset.
inline constexpr std::uint64_t kParticleTemplateSeed = 70;

Volume make_template(TemplateKind kind, int side, std::uint64_t seed, double voxel_size = 1.0);

/// Rotates the volume about its center (trilinear, zero outside) and sums along z.
Image project(const Volume& volume, const EulerAngles& orientation);

/// Uniform over SO(3) via a uniform random unit quaternion.
EulerAngles random_orientation(std::mt19937_64& rng);

/// Rotation matrix (row-major) of a ZYZ triple.
std::array<double, 9> rotation_matrix(const EulerAngles& e);
EulerAngles euler_from_matrix(const std::array<double, 9>& r);

/// Adds i.i.d. N(0, signal_variance / target_snr) noise.
Image add_noise_to_snr(const Image& image, double target_snr, double signal_variance, std::mt19937_64& rng);

Image apply_ctf(const Image& image, const CtfParams& params);

struct Butterworth {
  double order = 0.0;
  double cutoff = 0.0;  // f_rad in 1/Angstrom

  static constexpr double kEpsilon = 0.882;
  static constexpr double kA = 10.624;

  static Butterworth from_band(double pass_angstrom, double stop_angstrom);
  double gain(double f) const;
};

Image butterworth_lowpass(const Image& image, double pass_angstrom, double stop_angstrom);

/// Deterministic in cfg (seed included) for any thread count; threads <= 0
/// uses the hardware concurrency.
SimulatedDataset simulate_dataset(const SimConfig& cfg, int threads = 0);

}  // namespace postpick::sim
