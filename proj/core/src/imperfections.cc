#include "tbfp/imperfections.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "tbfp/config_io.h"
#include "tbfp/parallel.h"

namespace tbfp {

void gauss_hermite_normal(int points, std::vector<double>& nodes, std::vector<double>& weights) {
  if (points < 1) throw ValidationError("points", "must be >= 1");
  nodes.assign(static_cast<std::size_t>(points), 0.0);
  weights.assign(static_cast<std::size_t>(points), 1.0);
  if (points == 1) return;
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(points, points);
  for (int k = 1; k < points; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  for (int i = 0; i < points; ++i) {
    nodes[i] = solver.eigenvalues()(i);
    const double v = solver.eigenvectors()(0, i);
    weights[i] = v * v;
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& w : weights) w /= total;
}

double conjugate_wavelength(double wavelength, double pump_wavelength) {
  if (!(wavelength > pump_wavelength) || !(pump_wavelength > 0.0)) {
    throw ValidationError("wavelength", "must exceed the pump wavelength");
  }
  return 1.0 / (1.0 / pump_wavelength - 1.0 / wavelength);
}

double conjugate_bandwidth(double fwhm, double wavelength, double pump_wavelength) {
  const double other = conjugate_wavelength(wavelength, pump_wavelength);
  return fwhm * (other / wavelength) * (other / wavelength);
}

std::vector<SpectralSample> spectral_samples(const SpectralSpec& spec) {
  if (spec.points < 1) throw ValidationError("spectral.points", "must be >= 1");
  if (spec.points == 1) return {SpectralSample{}};
  if (!(spec.fwhm_a > 0.0) || !(spec.fwhm_b > 0.0)) {
    throw ValidationError("spectral.fwhm", "bandwidths must be positive when points > 1");
  }
  const double nu_a = kSpeedOfLight / spec.center_a;
  const double nu_b = kSpeedOfLight / spec.center_b;
  const double sigma_a = kSpeedOfLight * spec.fwhm_a / (spec.center_a * spec.center_a) / kFwhmPerSigma;
  const double sigma_b = kSpeedOfLight * spec.fwhm_b / (spec.center_b * spec.center_b) / kFwhmPerSigma;
  // Both filters act on the same detuning variable.
  const double sigma = 1.0 / std::sqrt(1.0 / (sigma_a * sigma_a) + 1.0 / (sigma_b * sigma_b));

  std::vector<double> nodes, weights;
  gauss_hermite_normal(spec.points, nodes, weights);
  // The mismatch is split evenly: turn a longer by half, turn b shorter by half.
  const double half = 0.5 * spec.path_mismatch;
  std::vector<SpectralSample> out;
  out.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    SpectralSample s;
    s.weight = weights[i];
    s.detuning = sigma * nodes[i];
    const double lambda_a = kSpeedOfLight / (nu_a + s.detuning);
    const double lambda_b = kSpeedOfLight / (nu_b - s.detuning);
    s.delta_phase_a = phase_from_length(half, lambda_a, 1.0, PassGeometry::single_pass) -
                      phase_from_length(half, spec.center_a, 1.0, PassGeometry::single_pass);
    s.delta_phase_b = phase_from_length(-half, lambda_b, 1.0, PassGeometry::single_pass) -
                      phase_from_length(-half, spec.center_b, 1.0, PassGeometry::single_pass);
    out.push_back(s);
  }
  return out;
}

std::string noise_hash(const NoiseSpec& noise, const SpectralSpec& spectral) {
  std::string text = format_double(noise.phase_noise_fwhm) + ';' + format_double(noise.pol_contrast_per_turn) +
                     ';' + format_double(noise.turn_loss_a) + ';' + format_double(noise.turn_loss_b) + ';' +
                     (noise.arm == NoiseArm::a ? "a" : "b") + ';' + format_double(spectral.center_a) + ';' +
                     format_double(spectral.center_b) + ';' + format_double(spectral.fwhm_a) + ';' +
                     format_double(spectral.fwhm_b) + ';' + std::to_string(spectral.points) + ';' +
                     format_double(spectral.path_mismatch);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

double spectral_average(const PhaseResponse& response, const std::vector<SpectralSample>& samples,
                        double phase_sum) {
  double sum = 0.0;
  for (const auto& s : samples) sum += s.weight * response.at(phase_sum + s.delta_phase_a + s.delta_phase_b);
  return sum;
}

}  // namespace

DegradedScan degraded_phase_scan(const ExperimentConfig& config, const NoiseSpec& noise,
                                 const SpectralSpec& spectral, const std::vector<double>& phase_grid,
                                 const PeakWindow& window, StopChannel channel, int phase_draws,
                                 std::uint64_t seed, int workers) {
  if (phase_grid.empty()) throw ValidationError("phase_grid", "must not be empty");
  if (phase_draws < 1) throw ValidationError("phase_draws", "must be >= 1");
  const ExperimentConfig degraded = apply_noise(config, noise);
  const PhaseResponse response = phase_response(degraded, channel, window);
  const auto samples = spectral_samples(spectral);
  const double sigma = noise.phase_noise_fwhm / kFwhmPerSigma;
  const int draws = sigma > 0.0 ? phase_draws : 1;

  DegradedScan scan;
  scan.noise_hash = noise_hash(noise, spectral);
  scan.curve.channel = channel;
  scan.curve.phase = phase_grid;
  scan.curve.value.resize(phase_grid.size());
  scan.curve.std_error.resize(phase_grid.size());
  scan.samples.resize(phase_grid.size());

  parallel_for(phase_grid.size(), workers, [&](std::size_t i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto& row = scan.samples[i];
    row.resize(static_cast<std::size_t>(draws));
    for (int m = 0; m < draws; ++m) {
      // Noise on either arm shifts the phase sum by the same amount.
      const double jitter = sigma > 0.0 ? sigma * normal(rng) : 0.0;
      row[m] = spectral_average(response, samples, phase_grid[i] + jitter);
    }
    CompensatedSum sum;
    for (double v : row) sum.add(v);
    const double mean = sum.value() / draws;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    scan.curve.value[i] = mean;
    scan.curve.std_error[i] = draws > 1 ? std::sqrt(var / (draws - 1) / draws) : 0.0;
  });
  return scan;
}

double visibility(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("curve", "must not be empty");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double denom = *hi + *lo;
  return denom > 0.0 ? (*hi - *lo) / denom : 0.0;
}

namespace {

std::vector<double> resampled_means(const DegradedScan& scan, const std::vector<std::vector<int>>& picks) {
  std::vector<double> out(scan.samples.size());
  for (std::size_t i = 0; i < scan.samples.size(); ++i) {
    double sum = 0.0;
    for (int m : picks[i]) sum += scan.samples[i][m];
    out[i] = sum / static_cast<double>(picks[i].size());
  }
  return out;
}

template <typename Stat>
Estimate bootstrap(const DegradedScan& shape, int resamples, std::uint64_t seed, Stat&& stat) {
  if (resamples < 2) throw ValidationError("resamples", "must be >= 2");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> picks(shape.samples.size());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < shape.samples.size(); ++i) {
      const int draws = static_cast<int>(shape.samples[i].size());
      std::uniform_int_distribution<int> pick(0, draws - 1);
      picks[i].resize(static_cast<std::size_t>(draws));
      for (auto& p : picks[i]) p = pick(rng);
    }
    values.push_back(stat(picks));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / resamples;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return Estimate{0.0, std::sqrt(var / (resamples - 1))};
}

}  // namespace

Estimate bootstrap_visibility(const DegradedScan& scan, int resamples, std::uint64_t seed) {
  Estimate e = bootstrap(scan, resamples, seed, [&](const std::vector<std::vector<int>>& picks) {
    return visibility(resampled_means(scan, picks));
  });
  e.value = visibility(scan.curve.value);
  return e;
}

Estimate bootstrap_visibility_gap(const DegradedScan& first, const DegradedScan& second, int resamples,
                                  std::uint64_t seed) {
  if (first.samples.size() != second.samples.size()) {
    throw ValidationError("scan", "scans must share the phase grid");
  }
  for (std::size_t i = 0; i < first.samples.size(); ++i) {
    if (first.samples[i].size() != second.samples[i].size()) {
      throw ValidationError("scan", "scans must share the draw count");
    }
  }
  Estimate e = bootstrap(first, resamples, seed, [&](const std::vector<std::vector<int>>& picks) {
    return visibility(resampled_means(first, picks)) - visibility(resampled_means(second, picks));
  });
  e.value = visibility(first.curve.value) - visibility(second.curve.value);
  return e;
}

std::map<int, double> per_turn_visibility_profile(const ExperimentConfig& config, const NoiseSpec& noise,
                                                  const SpectralSpec& spectral, int grid_points,
                                                  int noise_nodes) {
  const ExperimentConfig degraded = apply_noise(config, noise);
  const auto samples = spectral_samples(spectral);
  const double sigma = noise.phase_noise_fwhm / kFwhmPerSigma;
  std::vector<double> nodes, weights;
  gauss_hermite_normal(sigma > 0.0 ? noise_nodes : 1, nodes, weights);
  const auto grid = uniform_grid(grid_points);

  std::map<int, double> profile;
  for (int n = config.min_gate_peak(); n <= config.max_gate_peak(); ++n) {
    const PhaseResponse response = phase_response(degraded, StopChannel::db, PeakWindow::of({n}));
    std::vector<double> curve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double sum = 0.0;
      for (std::size_t q = 0; q < nodes.size(); ++q) {
        sum += weights[q] * spectral_average(response, samples, grid[i] + sigma * nodes[q]);
      }
      curve[i] = sum;
    }
    profile[n] = visibility(curve);
  }
  return profile;
}

}  // namespace tbfp
