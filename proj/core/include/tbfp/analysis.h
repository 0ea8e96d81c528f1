#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tbfp/amplitudes.h"
#include "tbfp/imperfections.h"
#include "tbfp/monte_carlo.h"

namespace tbfp {

/// Stop counts binned by dt = t_b - t_a. The zero of dt is the delay of
/// equal-turn coincidences.
struct DifferenceHistogram {
  StopChannel channel = StopChannel::db;
  double bin_width_ns = 0.0;
  /// Lattice-aligned bins are centred on multiples of the bin width;
  /// otherwise bin k starts at dt = k * bin_width_ns.
  bool lattice_aligned = true;
  double delta_tau_ns = 0.0;
  double gate_width_ns = 0.0;
  double zero_delay_ns = 0.0;
  int zero_slot = 0;
  std::uint64_t total_gates = 0;
  std::map<long, std::uint64_t> bins;

  double bin_center(long k) const;
  std::uint64_t total() const;
};

DifferenceHistogram build_histogram(const TdcEventStream& stream, StopChannel channel, double bin_width_ns,
                                    bool lattice_aligned = true);

/// Sums bin-wise; histograms must share binning and gate.
DifferenceHistogram merge(const DifferenceHistogram& a, const DifferenceHistogram& b);

/// Selection of whole lattice peaks.
struct WindowSpec {
  enum class Kind { central, central3, full, peaks };
  Kind kind = Kind::central;
  std::vector<int> peaks;

  static WindowSpec central() { return {Kind::central, {}}; }
  static WindowSpec central3() { return {Kind::central3, {}}; }
  static WindowSpec full() { return {Kind::full, {}}; }
  static WindowSpec of(std::vector<int> peaks) { return {Kind::peaks, std::move(peaks)}; }
  /// "central", "central3", "full" or a comma list of peak indices.
  static WindowSpec parse(const std::string& text);
  std::string name() const;
  /// Peaks covered, for a gate spanning [min_peak, max_peak].
  std::vector<int> peaks_in(int min_peak, int max_peak) const;
};

/// Gate extent in lattice peaks; the last one may be partial.
std::pair<int, int> gate_peak_range(double delta_tau_ns, double gate_width_ns, int zero_slot);

/// Stops inside the window. Needs a lattice-aligned histogram whose bin width
/// divides Delta-tau an odd number of times.
std::uint64_t window_counts(const DifferenceHistogram& histogram, const WindowSpec& window);

/// Time the window covers inside the gate, ns.
double window_width_ns(const WindowSpec& window, double delta_tau_ns, double gate_width_ns, int zero_slot);

struct RawScanPoint {
  double coordinate = 0.0;
  std::uint64_t coincidences = 0;
  std::uint64_t singles = 0;
  std::uint64_t gates = 0;
};

struct NetRatePoint {
  double coordinate = 0.0;
  double net = 0.0;
  double std_error = 0.0;
  std::uint64_t raw = 0;
  std::uint64_t singles = 0;
  bool dark_subtracted = false;
  /// False when there were no singles to normalize by.
  bool valid = true;
};

/// (coincidences - dark_rate * window_width * gates) / singles with Poisson errors.
std::vector<NetRatePoint> net_normalize(const std::vector<RawScanPoint>& points, double dark_rate,
                                        double window_width_s);

/// Dark rate estimated from the counts in `off_peaks`, for data without a
/// separate calibration. Hz.
double off_peak_dark_rate(const DifferenceHistogram& histogram, const WindowSpec& off_peaks);

struct AiryFit {
  /// amplitude / ((1 - rho)^2 + 4 rho sin^2((phi - phase0) / 2))
  double amplitude = 0.0;
  double rho = 0.0;
  double phase0 = 0.0;
  double rho_error = 0.0;
  double reduced_chi_square = 0.0;
  bool converged = false;

  double operator()(double phase) const;
  double visibility() const;
};

/// Weighted least-squares Airy fit; errors of zero get unit weight.
AiryFit fit_airy(const std::vector<double>& phase, const std::vector<double>& value,
                 const std::vector<double>& std_error);

struct TaggedStream {
  double coordinate = 0.0;
  const TdcEventStream* stream = nullptr;
};

struct ScanOptions {
  StopChannel channel = StopChannel::db;
  WindowSpec window = WindowSpec::full();
  double dark_rate = 0.0;
  bool subtract_dark = true;
  bool fit = false;
  int bootstrap_resamples = 200;
  std::uint64_t seed = 1;
};

struct ScanResult {
  PhaseScanCurve curve;
  std::vector<NetRatePoint> points;
  std::vector<RawScanPoint> raw;
  Estimate visibility;
  std::optional<AiryFit> fit;
};

/// Net normalized window counts per scan coordinate. Streams sharing a
/// coordinate are pooled. Visibility comes from the fitted curve when a fit
/// is requested and converges, else from the raw extrema; its error is a
/// parametric Poisson bootstrap.
ScanResult assemble_scan(const std::vector<TaggedStream>& streams, const ScanOptions& options);
ScanResult assemble_scan(std::vector<RawScanPoint> raw, const ScanOptions& options, double window_width_s);

/// Reads `start_ns,stop_channel,stop_delay_ns` rows. Consecutive rows with
/// the same start form one gate; an empty channel marks a gate without stops.
TdcEventStream read_generic_csv(std::istream& in, double delta_tau_ns, double gate_width_ns, int zero_slot);

}  // namespace tbfp
