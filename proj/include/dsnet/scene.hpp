#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/cube.hpp"
#include "dsnet/rng.hpp"

namespace dsnet {

/// Spectral angle between two raw vectors (no gradients), in radians.
template <typename S>
S spectral_angle_of(const std::vector<S>& u, const std::vector<S>& v) {
  S dot = S(0), nu = S(0), nv = S(0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == S(0) || nv == S(0)) {
    throw NumericError("spectral angle undefined for a zero vector");
  }
  S c = dot / (std::sqrt(nu) * std::sqrt(nv));
  c = std::min(std::max(c, S(-1)), S(1));
  return std::acos(c);
}

/// Recipe for one synthetic scene.
struct SceneSpec {
  std::int64_t bands = 32;
  std::int64_t endmember_count = 5;  // doubles as the class count
  std::int64_t rows = 64, cols = 64;
  std::vector<double> endmembers;  // [bands][endmember_count], row-major
  double abundance_smoothness = 0.45;  // Gaussian sigma, in pixels
  double dirichlet_alpha = 0.01;
  double nonlinear_strength = 0.3;  // bilinear term weight
  double snr_db = 30.0;             // +inf disables noise
  double label_purity = 0.5;        // 0 labels every pixel

  double endmember(std::int64_t band, std::int64_t p) const {
    return endmembers[static_cast<std::size_t>(band * endmember_count + p)];
  }
};

/// Everything the generator knows about a scene; the noise-free cube and the
/// realized noise stay available so tests can recompute powers and spectra.
struct GroundTruthScene {
  SpectralCube<double> cube;
  SpectralCube<double> clean;                 // cube minus noise
  std::vector<double> noise;                  // realized, same layout as cube
  std::vector<double> abundances;             // [P][rows][cols]
  LabelRaster labels;
  std::vector<double> endmembers;             // copy of the spec's matrix

  double abundance(std::int64_t p, std::int64_t r, std::int64_t c) const {
    const auto& lr = labels;
    return abundances[static_cast<std::size_t>((p * lr.rows + r) * lr.cols + c)];
  }
};

/// Draws P spectrally distinct smooth signatures: one dominant reflectance
/// bump per endmember in its own band range, small jitter per seed, shared
/// low baseline. Pairwise angles come out near 1.3 rad.
inline std::vector<double> random_endmembers(std::int64_t bands,
                                             std::int64_t count, Rng& rng) {
  std::vector<double> m(static_cast<std::size_t>(bands * count));
  for (std::int64_t p = 0; p < count; ++p) {
    const double center =
        (static_cast<double>(p) + 0.5) * static_cast<double>(bands) /
            static_cast<double>(count) +
        rng.uniform(-0.5, 0.5);
    const double width = (static_cast<double>(bands) /
                          (3.2 * static_cast<double>(count))) *
                         rng.uniform(0.85, 1.15);
    const double amp = 0.9 * rng.uniform(0.85, 1.1);
    double peak = 0.0;
    std::vector<double> col(static_cast<std::size_t>(bands));
    for (std::int64_t l = 0; l < bands; ++l) {
      const double d = (static_cast<double>(l) - center) / width;
      col[static_cast<std::size_t>(l)] = 0.05 + amp * std::exp(-0.5 * d * d);
      peak = std::max(peak, col[static_cast<std::size_t>(l)]);
    }
    for (std::int64_t l = 0; l < bands; ++l) {
      m[static_cast<std::size_t>(l * count + p)] =
          std::min(1.0, std::max(0.02, col[static_cast<std::size_t>(l)] / peak));
    }
  }
  return m;
}

namespace detail {

/// reflect-101 index: mirrors about the edge sample without repeating it.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

/// In-place separable Gaussian blur of one [rows][cols] plane.
inline void gaussian_blur_plane(std::vector<double>& plane, std::int64_t rows,
                                std::int64_t cols, double sigma) {
  if (sigma <= 0.0) return;
  const std::int64_t radius =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    ksum += w;
  }
  for (auto& w : kernel) w /= ksum;

  std::vector<double> tmp(plane.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::int64_t i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               plane[static_cast<std::size_t>(r * cols + reflect_index(c + i, cols))];
      }
      tmp[static_cast<std::size_t>(r * cols + c)] = acc;
    }
  }
  for (std::int64_t c = 0; c < cols; ++c) {
    for (std::int64_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::int64_t i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               tmp[static_cast<std::size_t>(reflect_index(r + i, rows) * cols + c)];
      }
      plane[static_cast<std::size_t>(r * cols + c)] = acc;
    }
  }
}

}  // namespace detail

constexpr double kMinEndmemberAngle = 0.05;  // radians

/// Synthesizes one scene: per-pixel Dirichlet abundances, Gaussian-smoothed
/// and renormalized onto the simplex; spectra mixed linearly plus a bilinear
/// interaction term; white Gaussian noise scaled to the requested SNR.
/// Labels are the per-pixel argmax abundance, blanked below the purity
/// threshold.
inline GroundTruthScene generate_scene(const SceneSpec& spec,
                                       std::uint64_t seed) {
  const std::int64_t L = spec.bands, P = spec.endmember_count;
  const std::int64_t rows = spec.rows, cols = spec.cols;
  if (P < 2) throw DataError("scene needs at least 2 endmembers, got " +
                             std::to_string(P));
  if (L < 2) throw DataError("scene needs at least 2 bands, got " +
                             std::to_string(L));
  if (static_cast<std::int64_t>(spec.endmembers.size()) != L * P) {
    throw DataError("endmember matrix size " +
                    std::to_string(spec.endmembers.size()) +
                    " does not match bands*endmembers = " +
                    std::to_string(L * P));
  }
  for (std::int64_t p = 0; p < P; ++p) {
    for (std::int64_t q = p + 1; q < P; ++q) {
      std::vector<double> u(static_cast<std::size_t>(L)),
          v(static_cast<std::size_t>(L));
      for (std::int64_t l = 0; l < L; ++l) {
        u[static_cast<std::size_t>(l)] = spec.endmember(l, p);
        v[static_cast<std::size_t>(l)] = spec.endmember(l, q);
      }
      const double ang = spectral_angle_of(u, v);
      if (ang < kMinEndmemberAngle) {
        throw DataError("endmembers " + std::to_string(p) + " and " +
                        std::to_string(q) + " are near-collinear (angle " +
                        std::to_string(ang) + " rad < " +
                        std::to_string(kMinEndmemberAngle) + ")");
      }
    }
  }

  Rng rng(mix_seed(seed, 0x5ce11e));
  const std::int64_t n = rows * cols;

  // Abundance field.
  std::vector<double> a(static_cast<std::size_t>(P * n));
  {
    std::vector<double> draw(static_cast<std::size_t>(P));
    for (std::int64_t i = 0; i < n; ++i) {
      rng.dirichlet(spec.dirichlet_alpha, draw);
      for (std::int64_t p = 0; p < P; ++p) {
        a[static_cast<std::size_t>(p * n + i)] = draw[static_cast<std::size_t>(p)];
      }
    }
    if (spec.abundance_smoothness > 0.0) {
      std::vector<double> plane(static_cast<std::size_t>(n));
      for (std::int64_t p = 0; p < P; ++p) {
        std::copy(a.begin() + p * n, a.begin() + (p + 1) * n, plane.begin());
        detail::gaussian_blur_plane(plane, rows, cols,
                                    spec.abundance_smoothness);
        std::copy(plane.begin(), plane.end(), a.begin() + p * n);
      }
    }
    // Back onto the simplex: clip numerical negatives, renormalize.
    for (std::int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::int64_t p = 0; p < P; ++p) {
        auto& v = a[static_cast<std::size_t>(p * n + i)];
        if (v < 0.0) v = 0.0;
        s += v;
      }
      for (std::int64_t p = 0; p < P; ++p) {
        a[static_cast<std::size_t>(p * n + i)] /= s;
      }
    }
  }

  GroundTruthScene scene;
  scene.endmembers = spec.endmembers;
  scene.abundances = a;
  scene.clean.bands = L;
  scene.clean.rows = rows;
  scene.clean.cols = cols;
  scene.clean.data.assign(static_cast<std::size_t>(L * n), 0.0);

  for (std::int64_t l = 0; l < L; ++l) {
    double* out = scene.clean.data.data() + l * n;
    for (std::int64_t p = 0; p < P; ++p) {
      const double m = spec.endmember(l, p);
      const double* ap = a.data() + p * n;
      for (std::int64_t i = 0; i < n; ++i) out[i] += m * ap[i];
    }
    if (spec.nonlinear_strength > 0.0) {
      for (std::int64_t p = 0; p < P; ++p) {
        for (std::int64_t q = p + 1; q < P; ++q) {
          const double mm =
              spec.nonlinear_strength * spec.endmember(l, p) * spec.endmember(l, q);
          const double* ap = a.data() + p * n;
          const double* aq = a.data() + q * n;
          for (std::int64_t i = 0; i < n; ++i) out[i] += mm * ap[i] * aq[i];
        }
      }
    }
  }

  scene.cube = scene.clean;
  scene.noise.assign(scene.clean.data.size(), 0.0);
  if (std::isfinite(spec.snr_db)) {
    double signal_power = 0.0;
    for (double v : scene.clean.data) signal_power += v * v;
    signal_power /= static_cast<double>(scene.clean.data.size());
    double raw_power = 0.0;
    for (auto& e : scene.noise) {
      e = rng.normal();
      raw_power += e * e;
    }
    raw_power /= static_cast<double>(scene.noise.size());
    const double target = signal_power / std::pow(10.0, spec.snr_db / 10.0);
    const double s = std::sqrt(target / raw_power);
    for (std::size_t i = 0; i < scene.noise.size(); ++i) {
      scene.noise[i] *= s;
      scene.cube.data[i] += scene.noise[i];
    }
  }

  scene.labels.rows = rows;
  scene.labels.cols = cols;
  scene.labels.labels.assign(static_cast<std::size_t>(n), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    double best_v = a[static_cast<std::size_t>(i)];
    for (std::int64_t p = 1; p < P; ++p) {
      const double v = a[static_cast<std::size_t>(p * n + i)];
      if (v > best_v) {
        best_v = v;
        best = p;
      }
    }
    if (best_v >= spec.label_purity) {
      scene.labels.labels[static_cast<std::size_t>(i)] =
          static_cast<std::uint16_t>(best + 1);
    }
  }
  return scene;
}

}  // namespace dsnet
