#pragma once

#include <complex>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tbfp/model.h"

namespace tbfp {

using Complex = std::complex<double>;

class UnsupportedChannelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TruncationError : public std::runtime_error {
 public:
  TruncationError(const std::string& message, int suggested_turns)
      : std::runtime_error(message), suggested_turns_(suggested_turns) {}
  int suggested_turns() const noexcept { return suggested_turns_; }

 private:
  int suggested_turns_;
};

/// Where a photon leaves its analyzer. `a_back` is light returned by the
/// mirror cavity toward the source; it is counted but never detected.
enum class ExitChannel { a_main, a_back, b_main, b_control };

/// Stop detectors behind interferometer b.
enum class StopChannel { db, db_prime };

const char* to_string(StopChannel channel);
StopChannel parse_stop_channel(const std::string& text);

enum class PathExit { main, control };

/// Amplitude for leaving the analyzer after `turns` round trips. `main` is
/// the transmitted port; `control` is the reflected port of the loop
/// interferometer, where zero turns is the direct reflection r1.
Complex path_amplitude(const InterferometerSpec& spec, int turns, PathExit exit);

/// Joint outcome for photon a at D_a and photon b at one of the stop detectors.
struct JointEntry {
  int exit_time_a = 0;
  int exit_time_b = 0;
  StopChannel channel = StopChannel::db;
  /// Polarization-matched (interfering) amplitude.
  Complex amplitude;
  /// Probability carried by polarization-mismatched components.
  double incoherent = 0.0;

  double probability() const { return std::norm(amplitude) + incoherent; }
};

class JointAmplitudeTable {
 public:
  JointAmplitudeTable(int dimension, int turns);

  int dimension() const { return dimension_; }
  int turns() const { return turns_; }
  /// Exit times span [1, last_time()].
  int last_time() const { return dimension_ + turns_; }

  const JointEntry& at(int exit_time_a, int exit_time_b, StopChannel channel) const;
  JointEntry& at(int exit_time_a, int exit_time_b, StopChannel channel);

  /// Entries in (channel, exit_time_a, exit_time_b) order.
  const std::vector<JointEntry>& entries() const { return entries_; }

  double total_back_reflection_probability = 0.0;
  double detected_probability() const;
  double total_probability() const { return detected_probability() + total_back_reflection_probability; }

  /// True when every creation bin j that could reach this outcome within the
  /// truncation lies inside the pulse train.
  bool complete(int exit_time_a, int exit_time_b) const;

 private:
  std::size_t index(int ta, int tb, StopChannel channel) const;

  int dimension_;
  int turns_;
  std::vector<JointEntry> entries_;
};

/// Coherent sum over creation bins for every joint exit time. Requires a
/// finite pulse train.
JointAmplitudeTable evolve_state(const ExperimentConfig& config);

/// Peak index n = exit_time_b - exit_time_a.
struct PeakDistribution {
  StopChannel channel = StopChannel::db;
  double phase_a = 0.0;
  double phase_b = 0.0;
  /// Summed over every outcome of the finite train.
  std::map<int, double> edge_in;
  /// Per-outcome probability of complete outcomes scaled by D: the
  /// unbounded-train value.
  std::map<int, double> edge_out;
};

PeakDistribution peak_distribution(const JointAmplitudeTable& table, StopChannel channel,
                                   double phase_a = 0.0, double phase_b = 0.0);

/// Peak probability of an unbounded pulse train, evaluated from one
/// representative outcome.
double stationary_peak(const ExperimentConfig& config, StopChannel channel, int n);

/// Stationary distribution over every reachable n (|n| <= turns).
PeakDistribution stationary_peak_distribution(const ExperimentConfig& config, StopChannel channel);

/// Peak probabilities the detectors see: edge-in for a finite train,
/// stationary for an unbounded one.
std::map<int, double> detected_peaks(const ExperimentConfig& config, StopChannel channel);

/// Probability that photon a reaches D_a.
double trigger_probability(const ExperimentConfig& config);

/// A set of peak indices; `all` selects every reachable peak.
struct PeakWindow {
  bool all = false;
  std::vector<int> peaks;

  static PeakWindow everything() { return PeakWindow{true, {}}; }
  static PeakWindow of(std::vector<int> peaks) { return PeakWindow{false, std::move(peaks)}; }
  static PeakWindow range(int lo, int hi);
  bool contains(int n) const;
};

struct PhaseScanCurve {
  StopChannel channel = StopChannel::db;
  std::vector<double> phase;
  std::vector<double> value;
  /// Empty for exact curves.
  std::vector<double> std_error;

  std::size_t argmax() const;
  std::size_t argmin() const;
};

/// Window probability as a function of the phase sum. For each grid value the
/// phase of interferometer a is set so that phase_a + phase_b equals it.
PhaseScanCurve phase_scan_exact(const ExperimentConfig& config, const std::vector<double>& phase_grid,
                                const PeakWindow& window, StopChannel channel = StopChannel::db,
                                int workers = 1);

/// Window probability expanded in powers of exp(i*Phi):
/// P(Phi) = constant + sum_d 2 Re(coefficients[d] exp(i d Phi)) with
/// coefficients[0] real. Built once, evaluated cheaply for any phase sum.
class PhaseResponse {
 public:
  double at(double phase_sum) const;
  const std::vector<Complex>& coefficients() const { return coefficients_; }
  double incoherent() const { return incoherent_; }

 private:
  friend PhaseResponse phase_response(const ExperimentConfig&, StopChannel, const PeakWindow&);
  std::vector<Complex> coefficients_;
  double incoherent_ = 0.0;
  double pump_phase_step_ = 0.0;
};

PhaseResponse phase_response(const ExperimentConfig& config, StopChannel channel,
                             const PeakWindow& window);

std::vector<double> uniform_grid(int points, double lo = -kPi, double hi = kPi);

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

}  // namespace tbfp
