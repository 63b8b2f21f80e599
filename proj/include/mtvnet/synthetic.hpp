#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtvnet/volume.hpp"

namespace mtvnet {

/// Parameters for the desk-scale stand-in corpora.
struct GeneratorSpec {
  std::string generator;  // "ellipsoid", "noise" or "trabecular"
  int count = 1;
  int edge = 64;
  std::uint64_t seed = 0;
  double cutoff = 4.0;  // band limit of "noise", in cycles per volume edge
};

struct Ellipsoid {
  std::array<double, 3> center{};  // voxel coordinates
  std::array<double, 3> radii{};   // voxels
  double intensity = 0.0;
};

/// Head-like phantom: an outer ellipsoid with nested inner ellipsoids that
/// never leave it, so the foreground equals the outer ellipsoid exactly.
std::vector<Ellipsoid> ellipsoid_phantom_layout(int edge, std::mt19937_64& rng);
/// Voxel (i,j,k) is inside when ((i+0.5-cx)/rx)^2 + ... <= 1.
Volume render_ellipsoids(const std::vector<Ellipsoid>& layout, int edge);

Volume make_ellipsoid_phantom(int edge, std::mt19937_64& rng);
/// Gaussian noise low-passed to |k| <= cutoff (integer frequency index), min-max normalised.
Volume make_band_limited_noise(int edge, double cutoff, std::mt19937_64& rng);
/// Warped gyroid sheet network: rods and plates at a random scale and orientation.
Volume make_trabecular(int edge, std::mt19937_64& rng);

/// Deterministic for a given GeneratorSpec. Throws std::invalid_argument for an unknown generator.
std::vector<Volume> make_synthetic_corpus(const GeneratorSpec& spec);

}  // namespace mtvnet
