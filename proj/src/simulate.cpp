#include "postpick/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "postpick/fft.hpp"
#include "postpick/parallel.hpp"

namespace postpick::sim {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLobeSkew = 6.0;

struct Vec3 {
  double x, y, z;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Volume blank_volume(int side, double voxel_size) {
  Volume v;
  v.side = side;
  v.voxel_size = voxel_size;
  v.data.assign(static_cast<std::size_t>(side) * side * side, 0.0f);
  return v;
}

template <class Inside>
void fill(Volume& v, Inside&& inside) {
  const double c = (v.side - 1) / 2.0;
  std::size_t i = 0;
  for (int z = 0; z < v.side; ++z)
    for (int y = 0; y < v.side; ++y)
      for (int x = 0; x < v.side; ++x, ++i)
        if (inside(x - c, y - c, z - c)) v.data[i] = 1.0f;
}

/// Twelve overlapping balls grown from a seed ball, kept inside radius 0.4*side.
Volume particle_volume(int side, std::uint64_t seed, double voxel_size) {
  std::mt19937_64 rng(seed);
  const double bound = 0.4 * side;
  struct Ball {
    Vec3 c;
    double r;
  };
  std::vector<Ball> balls;
  for (int s = 0; s < 12; ++s) {
    // Skewed toward small lobes: many 8% balls, a few large ones.
    const double r = (0.08 + 0.12 * std::pow(uniform(rng, 0.0, 1.0), kLobeSkew)) * side;
    Vec3 c{0.0, 0.0, 0.0};
    if (!balls.empty()) {
      const Ball& parent = balls[std::uniform_int_distribution<std::size_t>(0, balls.size() - 1)(rng)];
      const double cz = uniform(rng, -1.0, 1.0);
      const double az = uniform(rng, 0.0, 2.0 * kPi);
      const double sz = std::sqrt(1.0 - cz * cz);
      const double d = uniform(rng, 0.3, 0.9) * (parent.r + r);
      c = {parent.c.x + d * sz * std::cos(az), parent.c.y + d * sz * std::sin(az), parent.c.z + d * cz};
    } else {
      c = {uniform(rng, -0.05, 0.05) * side, uniform(rng, -0.05, 0.05) * side, uniform(rng, -0.05, 0.05) * side};
    }
    const double dist = std::sqrt(c.x * c.x + c.y * c.y + c.z * c.z);
    if (dist + r > bound && dist > 0.0) {
      const double k = std::max(0.0, bound - r) / dist;
      c = {c.x * k, c.y * k, c.z * k};
    }
    balls.push_back({c, r});
  }
  Volume v = blank_volume(side, voxel_size);
  fill(v, [&](double x, double y, double z) {
    for (const Ball& b : balls) {
      const double dx = x - b.c.x, dy = y - b.c.y, dz = z - b.c.z;
      if (dx * dx + dy * dy + dz * dz <= b.r * b.r) return true;
    }
    return false;
  });
  return v;
}

/// Largest center distance of a nonzero voxel; -1 for an empty volume.
double support_radius(const Volume& v) {
  const double c = (v.side - 1) / 2.0;
  double best = -1.0;
  std::size_t i = 0;
  for (int z = 0; z < v.side; ++z)
    for (int y = 0; y < v.side; ++y)
      for (int x = 0; x < v.side; ++x, ++i)
        if (v.data[i] != 0.0f) {
          const double d2 = (x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c);
          best = std::max(best, d2);
        }
  return best < 0.0 ? -1.0 : std::sqrt(best);
}

double image_variance(const Image& im) {
  double mean = 0.0;
  for (float v : im.pixels()) mean += v;
  mean /= static_cast<double>(im.size());
  double var = 0.0;
  for (float v : im.pixels()) var += (v - mean) * (v - mean);
  return var / static_cast<double>(im.size());
}

struct Geometry {
  TemplateKind kind;
  EulerAngles orientation;
};

// Draws the per-image template and orientation. Both simulation passes call
// this first on a fresh substream so the later noise draws line up.
Geometry draw_geometry(std::mt19937_64& rng, bool particle, NonParticleMix mix) {
  TemplateKind kind = TemplateKind::particle;
  if (!particle) {
    switch (mix) {
      case NonParticleMix::plate: kind = TemplateKind::plate; break;
      case NonParticleMix::cylinder: kind = TemplateKind::cylinder; break;
      case NonParticleMix::sphere: kind = TemplateKind::sphere; break;
      case NonParticleMix::empty: kind = TemplateKind::empty; break;
      case NonParticleMix::all: {
        static constexpr TemplateKind kinds[] = {TemplateKind::plate, TemplateKind::cylinder,
                                                 TemplateKind::sphere, TemplateKind::empty};
        kind = kinds[std::uniform_int_distribution<int>(0, 3)(rng)];
        break;
      }
    }
  }
  return {kind, random_orientation(rng)};
}

}  // namespace

std::string to_string(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::particle: return "particle";
    case TemplateKind::plate: return "plate";
    case TemplateKind::cylinder: return "cylinder";
    case TemplateKind::sphere: return "sphere";
    case TemplateKind::empty: return "void";
  }
  return "unknown";
}

NonParticleMix parse_mix(const std::string& token) {
  if (token == "plate") return NonParticleMix::plate;
  if (token == "cylinder") return NonParticleMix::cylinder;
  if (token == "sphere") return NonParticleMix::sphere;
  if (token == "void") return NonParticleMix::empty;
  if (token == "all") return NonParticleMix::all;
  throw std::invalid_argument("unknown non-particle mix '" + token + "'");
}

std::string to_string(NonParticleMix mix) {
  switch (mix) {
    case NonParticleMix::plate: return "plate";
    case NonParticleMix::cylinder: return "cylinder";
    case NonParticleMix::sphere: return "sphere";
    case NonParticleMix::empty: return "void";
    case NonParticleMix::all: return "all";
  }
  return "unknown";
}

double Volume::total() const {
  return std::accumulate(data.begin(), data.end(), 0.0);
}

double CtfParams::wavelength() const {
  const double volts = voltage_kv * 1000.0;
  return 12.2643 / std::sqrt(volts * (1.0 + 0.97845e-6 * volts));
}

double CtfParams::chi(double f) const {
  const double lambda = wavelength();
  const double defocus = defocus_um * 1e4;  // Angstrom
  const double cs = cs_mm * 1e7;            // Angstrom
  const double f2 = f * f;
  return kPi * lambda * defocus * f2 - 0.5 * kPi * cs * lambda * lambda * lambda * f2 * f2;
}

double CtfParams::gain(double f) const {
  const double x = chi(f);
  const double a = amplitude_contrast;
  return -(std::sqrt(1.0 - a * a) * std::sin(x) + a * std::cos(x));
}

void CtfParams::validate() const {
  if (!(voltage_kv > 0.0)) throw std::invalid_argument("CTF voltage must be positive");
  if (!(pixel_size > 0.0)) throw std::invalid_argument("CTF pixel size must be positive");
  if (!(amplitude_contrast >= 0.0 && amplitude_contrast < 1.0))
    throw std::invalid_argument("amplitude contrast must lie in [0, 1)");
  if (!std::isfinite(defocus_um) || !std::isfinite(cs_mm)) throw std::invalid_argument("CTF parameters must be finite");
}

void SimConfig::validate() const {
  if (box < 32) throw std::invalid_argument("box must be at least 32 pixels");
  if (!(pixel_size > 0.0)) throw std::invalid_argument("pixel size must be positive");
  if (n_particles + n_nonparticles == 0) throw std::invalid_argument("nothing to simulate");
  if (!(snr_structural > 0.0) || !(snr_shot > 0.0)) throw std::invalid_argument("SNR values must be positive");
  if (!(butterworth_pass > butterworth_stop))
    throw std::invalid_argument("Butterworth pass-band (A) must exceed the stop-band (A)");
  if (!(butterworth_stop > 2.0 * pixel_size)) throw std::invalid_argument("Butterworth band lies outside Nyquist");
  ctf.validate();
}

Volume make_template(TemplateKind kind, int side, std::uint64_t seed, double voxel_size) {
  if (side < 32) throw std::invalid_argument("template side must be at least 32 voxels");
  switch (kind) {
    case TemplateKind::particle: return particle_volume(side, seed, voxel_size);
    case TemplateKind::plate: {
      Volume v = blank_volume(side, voxel_size);
      const double half = 0.05 * side;
      fill(v, [&](double, double, double z) { return std::abs(z) <= half; });
      return v;
    }
    case TemplateKind::cylinder: {
      Volume v = blank_volume(side, voxel_size);
      const double r = 0.2 * side, half = 0.35 * side;
      fill(v, [&](double x, double y, double z) { return x * x + y * y <= r * r && std::abs(z) <= half; });
      return v;
    }
    case TemplateKind::sphere: {
      Volume v = blank_volume(side, voxel_size);
      const double r = 0.3 * side;
      fill(v, [&](double x, double y, double z) { return x * x + y * y + z * z <= r * r; });
      return v;
    }
    case TemplateKind::empty: return blank_volume(side, voxel_size);
  }
  throw std::invalid_argument("unknown template kind");
}

std::array<double, 9> rotation_matrix(const EulerAngles& e) {
  const double cf = std::cos(e.phi), sf = std::sin(e.phi);
  const double ct = std::cos(e.theta), st = std::sin(e.theta);
  const double cp = std::cos(e.psi), sp = std::sin(e.psi);
  // Rz(psi) * Ry(theta) * Rz(phi)
  return {cp * ct * cf - sp * sf, -cp * ct * sf - sp * cf, cp * st,
          sp * ct * cf + cp * sf, -sp * ct * sf + cp * cf, sp * st,
          -st * cf,               st * sf,                 ct};
}

EulerAngles euler_from_matrix(const std::array<double, 9>& r) {
  EulerAngles e;
  e.theta = std::acos(std::clamp(r[8], -1.0, 1.0));
  if (std::abs(std::sin(e.theta)) > 1e-9) {
    e.psi = std::atan2(r[5], r[2]);
    e.phi = std::atan2(r[7], -r[6]);
  } else {
    // Gimbal lock: only phi + psi (or psi - phi) is defined.
    e.phi = 0.0;
    e.psi = std::atan2(r[3], r[0]);
  }
  return e;
}

EulerAngles random_orientation(std::mt19937_64& rng) {
  const double u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  const double u3 = uniform(rng, 0.0, 1.0);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double qx = a * std::sin(2.0 * kPi * u2), qy = a * std::cos(2.0 * kPi * u2);
  const double qz = b * std::sin(2.0 * kPi * u3), qw = b * std::cos(2.0 * kPi * u3);
  const std::array<double, 9> r = {
      1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw),     2 * (qx * qz + qy * qw),
      2 * (qx * qy + qz * qw),     1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw),
      2 * (qx * qz - qy * qw),     2 * (qy * qz + qx * qw),     1 - 2 * (qx * qx + qy * qy)};
  return euler_from_matrix(r);
}

Image project(const Volume& volume, const EulerAngles& orientation) {
  const int n = volume.side;
  const auto r = rotation_matrix(orientation);
  const double c = (n - 1) / 2.0;
  Image out(n, n, volume.voxel_size);

  // Output voxel p samples the source at R^T p (about the center).
  const Vec3 ex{r[0], r[1], r[2]};
  const Vec3 ey{r[3], r[4], r[5]};
  const Vec3 ez{r[6], r[7], r[8]};
  const float* data = volume.data.data();
  const auto nn = static_cast<std::size_t>(n);

  auto fetch = [&](int x, int y, int z) -> double {
    if (x < 0 || y < 0 || z < 0 || x >= n || y >= n || z >= n) return 0.0;
    return data[(static_cast<std::size_t>(z) * nn + y) * nn + x];
  };

  // Samples farther than this from the center only touch zero voxels, so
  // skipping them leaves every sum unchanged.
  const double reach = support_radius(volume) + std::sqrt(3.0) + 1e-9;
  const double reach2 = reach * reach;

  for (int py = 0; py < n; ++py) {
    for (int px = 0; px < n; ++px) {
      const double u = px - c, v = py - c;
      const double chord2 = reach2 - u * u - v * v;
      if (chord2 < 0.0) continue;
      const double half = std::sqrt(chord2);
      const int z_lo = std::max(0, static_cast<int>(std::floor(c - half)));
      const int z_hi = std::min(n - 1, static_cast<int>(std::ceil(c + half)));
      double sum = 0.0;
      for (int pz = z_lo; pz <= z_hi; ++pz) {
        const double w = pz - c;
        const double sx = ex.x * u + ey.x * v + ez.x * w + c;
        const double sy = ex.y * u + ey.y * v + ez.y * w + c;
        const double sz = ex.z * u + ey.z * v + ez.z * w + c;
        if (sx <= -1.0 || sy <= -1.0 || sz <= -1.0 || sx >= n || sy >= n || sz >= n) continue;
        const double fx = std::floor(sx), fy = std::floor(sy), fz = std::floor(sz);
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
        const double tx = sx - fx, ty = sy - fy, tz = sz - fz;
        double c000, c100, c010, c110, c001, c101, c011, c111;
        if (x0 >= 0 && y0 >= 0 && z0 >= 0 && x0 + 1 < n && y0 + 1 < n && z0 + 1 < n) {
          const float* p = data + (static_cast<std::size_t>(z0) * nn + y0) * nn + x0;
          c000 = p[0];
          c100 = p[1];
          c010 = p[nn];
          c110 = p[nn + 1];
          c001 = p[nn * nn];
          c101 = p[nn * nn + 1];
          c011 = p[nn * nn + nn];
          c111 = p[nn * nn + nn + 1];
        } else {
          c000 = fetch(x0, y0, z0);
          c100 = fetch(x0 + 1, y0, z0);
          c010 = fetch(x0, y0 + 1, z0);
          c110 = fetch(x0 + 1, y0 + 1, z0);
          c001 = fetch(x0, y0, z0 + 1);
          c101 = fetch(x0 + 1, y0, z0 + 1);
          c011 = fetch(x0, y0 + 1, z0 + 1);
          c111 = fetch(x0 + 1, y0 + 1, z0 + 1);
        }
        const double c00 = c000 + tx * (c100 - c000);
        const double c10 = c010 + tx * (c110 - c010);
        const double c01 = c001 + tx * (c101 - c001);
        const double c11 = c011 + tx * (c111 - c011);
        const double c0 = c00 + ty * (c10 - c00);
        const double c1 = c01 + ty * (c11 - c01);
        sum += c0 + tz * (c1 - c0);
      }
      out.at(px, py) = static_cast<float>(sum);
    }
  }
  return out;
}

Image add_noise_to_snr(const Image& image, double target_snr, double signal_variance, std::mt19937_64& rng) {
  if (!(target_snr > 0.0)) throw std::invalid_argument("target SNR must be positive");
  if (signal_variance < 0.0 || !std::isfinite(signal_variance))
    throw std::invalid_argument("signal variance must be non-negative");
  Image out = image;
  if (signal_variance == 0.0) return out;
  std::normal_distribution<double> noise(0.0, std::sqrt(signal_variance / target_snr));
  for (float& v : out.pixels()) v = static_cast<float>(v + noise(rng));
  return out;
}

Image apply_ctf(const Image& image, const CtfParams& params) {
  if (!image.square()) throw std::invalid_argument("CTF modulation needs a square image");
  params.validate();
  const int n = image.width();
  fft::ComplexGrid grid = fft::spectrum(image);
  const double df = 1.0 / (n * params.pixel_size);
  for (int ky = 0; ky < n; ++ky) {
    const double fy = fft::signed_index(ky, n) * df;
    for (int kx = 0; kx < n; ++kx) {
      const double fx = fft::signed_index(kx, n) * df;
      grid[static_cast<std::size_t>(ky) * n + kx] *= params.gain(std::sqrt(fx * fx + fy * fy));
    }
  }
  return fft::real_part_inverse(std::move(grid), n, n, image.pixel_size());
}

Butterworth Butterworth::from_band(double pass_angstrom, double stop_angstrom) {
  if (!(pass_angstrom > stop_angstrom) || !(stop_angstrom > 0.0))
    throw std::invalid_argument("Butterworth pass-band (A) must exceed the stop-band (A)");
  const double fp = 1.0 / pass_angstrom;
  const double fs = 1.0 / stop_angstrom;
  Butterworth b;
  b.order = 2.0 * std::log10(kEpsilon / std::sqrt(kA * kA - 1.0)) / std::log10(fp / fs);
  b.cutoff = fp / std::pow(kEpsilon, 2.0 / b.order);
  return b;
}

double Butterworth::gain(double f) const {
  return 1.0 / std::sqrt(1.0 + std::pow(std::abs(f) / cutoff, order));
}

Image butterworth_lowpass(const Image& image, double pass_angstrom, double stop_angstrom) {
  if (!(stop_angstrom > 2.0 * image.pixel_size()))
    throw std::invalid_argument("Butterworth band lies outside Nyquist");
  const Butterworth bw = Butterworth::from_band(pass_angstrom, stop_angstrom);
  return fft::filter(image, [&](double fx, double fy) { return bw.gain(std::sqrt(fx * fx + fy * fy)); });
}

SimulatedDataset simulate_dataset(const SimConfig& cfg, int threads) {
  cfg.validate();
  const std::size_t n = cfg.n_particles + cfg.n_nonparticles;

  // Class layout: a seeded shuffle so particles and non-particles interleave.
  std::vector<char> is_particle(n, 0);
  std::fill_n(is_particle.begin(), cfg.n_particles, 1);
  {
    std::mt19937_64 layout_rng(cfg.seed);
    std::shuffle(is_particle.begin(), is_particle.end(), layout_rng);
  }

  std::vector<TemplateKind> needed = {TemplateKind::particle};
  if (cfg.n_nonparticles > 0) {
    needed = {TemplateKind::particle, TemplateKind::plate, TemplateKind::cylinder, TemplateKind::sphere,
              TemplateKind::empty};
  }
  std::vector<Volume> volumes(5);
  parallel_for(needed.size(), threads, [&](std::size_t i) {
    const auto kind = needed[i];
    volumes[static_cast<std::size_t>(kind)] = make_template(kind, cfg.box, kParticleTemplateSeed, cfg.pixel_size);
  });

  auto substream = [&](std::size_t i) { return std::mt19937_64(cfg.seed ^ static_cast<std::uint64_t>(i)); };

  // Pass 1: variance of the clean particle projections.
  std::vector<double> variances(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    if (!is_particle[i]) return;
    auto rng = substream(i);
    const Geometry g = draw_geometry(rng, true, cfg.mix);
    variances[i] = image_variance(project(volumes[static_cast<std::size_t>(g.kind)], g.orientation));
  });
  double signal_variance = 0.0;
  if (cfg.n_particles > 0) {
    for (std::size_t i = 0; i < n; ++i) signal_variance += variances[i];
    signal_variance /= static_cast<double>(cfg.n_particles);
  }

  CtfParams ctf = cfg.ctf;
  ctf.pixel_size = cfg.pixel_size;

  std::vector<Image> images(n);
  std::vector<TemplateKind> kinds(n);
  parallel_for(n, threads, [&](std::size_t i) {
    auto rng = substream(i);
    const Geometry g = draw_geometry(rng, is_particle[i] != 0, cfg.mix);
    kinds[i] = g.kind;
    Image im = project(volumes[static_cast<std::size_t>(g.kind)], g.orientation);
    im = add_noise_to_snr(im, cfg.snr_structural, signal_variance, rng);
    im = apply_ctf(im, ctf);
    im = add_noise_to_snr(im, cfg.snr_shot, signal_variance, rng);
    im = butterworth_lowpass(im, cfg.butterworth_pass, cfg.butterworth_stop);
    if (cfg.invert_contrast)
      for (float& v : im.pixels()) v = -v;
    images[i] = std::move(im);
  });

  SimulatedDataset out;
  out.stack = ImageStack(std::move(images));
  out.labels = LabelTable::unlabeled(n);
  for (std::size_t i = 0; i < n; ++i) out.labels.set(i, is_particle[i] ? Label::positive : Label::negative);
  out.kinds = std::move(kinds);
  out.signal_variance = signal_variance;
  return out;
}

}  // namespace postpick::sim
