#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tbfp/amplitudes.h"
#include "tbfp/model.h"

namespace tbfp {

/// One quadrature node of the pair spectrum. Detunings are anti-correlated:
/// photon b is detuned by -detuning.
struct SpectralSample {
  double weight = 1.0;
  /// Optical frequency offset of photon a, Hz.
  double detuning = 0.0;
  double delta_phase_a = 0.0;
  double delta_phase_b = 0.0;
};

/// Gauss-Hermite quadrature over the joint pair spectrum (Gaussian filters on
/// both arms, monochromatic pump). Weights sum to 1.
std::vector<SpectralSample> spectral_samples(const SpectralSpec& spec);

/// Wavelength paired with `wavelength` by energy conservation.
double conjugate_wavelength(double wavelength, double pump_wavelength);
/// Bandwidth at the conjugate wavelength carrying the same frequency width.
double conjugate_bandwidth(double fwhm, double wavelength, double pump_wavelength);

std::string noise_hash(const NoiseSpec& noise, const SpectralSpec& spectral);

struct DegradedScan {
  /// Mean over phase draws, with standard error per point.
  PhaseScanCurve curve;
  /// samples[i][m]: spectrally averaged value at grid point i, draw m.
  std::vector<std::vector<double>> samples;
  std::string noise_hash;
};

/// Phase scan averaged at the probability level over the pair spectrum and
/// Gaussian phase noise. Losses and polarization contrast from `noise`
/// replace those in `config`. Each grid point draws its own noise values
/// from (seed, point index).
DegradedScan degraded_phase_scan(const ExperimentConfig& config, const NoiseSpec& noise,
                                 const SpectralSpec& spectral, const std::vector<double>& phase_grid,
                                 const PeakWindow& window, StopChannel channel, int phase_draws,
                                 std::uint64_t seed, int workers = 1);

/// (max - min) / (max + min).
double visibility(const std::vector<double>& values);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Visibility of the mean curve with a bootstrap over phase draws.
Estimate bootstrap_visibility(const DegradedScan& scan, int resamples, std::uint64_t seed);

/// visibility(first) - visibility(second), resampling the same draws in both
/// scans (they must share grid, draw count and seed).
Estimate bootstrap_visibility_gap(const DegradedScan& first, const DegradedScan& second,
                                  int resamples, std::uint64_t seed);

/// Visibility of every gate peak over the phase sum. Phase noise is averaged
/// with deterministic Gauss-Hermite quadrature.
std::map<int, double> per_turn_visibility_profile(const ExperimentConfig& config, const NoiseSpec& noise,
                                                  const SpectralSpec& spectral, int grid_points = 256,
                                                  int noise_nodes = 24);

/// Gauss-Hermite nodes and weights for a standard normal variable (weights sum to 1).
void gauss_hermite_normal(int points, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace tbfp
