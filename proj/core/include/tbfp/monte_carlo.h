#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tbfp/amplitudes.h"
#include "tbfp/model.h"

namespace tbfp {

/// The rate chain implies more than one pair per pump pulse.
class MultiPairError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class HashMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(int line, const std::string& message);
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct TdcStop {
  StopChannel channel = StopChannel::db;
  /// Delay after the start, ns.
  double delay_ns = 0.0;

  bool operator==(const TdcStop&) const = default;
};

/// One gate opened by a D_a click.
struct TdcEvent {
  double start_ns = 0.0;
  /// Sorted by delay, then channel.
  std::vector<TdcStop> stops;

  bool operator==(const TdcEvent&) const = default;
};

struct TdcEventStream {
  std::string config_hash;
  std::uint64_t seed = 0;
  double delta_tau_ns = 0.0;
  double gate_width_ns = 0.0;
  int zero_slot = 0;
  std::vector<TdcEvent> events;

  /// Delay of equal-turn coincidences (peak n = 0), ns.
  double zero_delay_ns() const { return (zero_slot + 0.5) * delta_tau_ns; }
  bool operator==(const TdcEventStream&) const = default;
};

struct RunSummary {
  double duration = 0.0;
  std::uint64_t singles_da = 0;
  double gate_rate = 0.0;
  std::uint64_t stops_db = 0;
  std::uint64_t stops_dbp = 0;
  std::uint64_t dark_stops_db = 0;
  std::uint64_t dark_stops_dbp = 0;
  /// Expected D_a click rate from the rate chain, Hz.
  double expected_trigger_rate = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;

  bool operator==(const RunSummary&) const = default;
};

struct SimulationResult {
  TdcEventStream stream;
  RunSummary summary;
};

/// Probability of each gate peak on `channel` given a photon click on D_a,
/// averaged over the configured phase noise and pair spectrum.
std::map<int, double> conditional_stop_distribution(const ExperimentConfig& config, StopChannel channel);

/// D_a click rate: photon clicks plus D_a dark counts, Hz.
double trigger_rate(const ExperimentConfig& config, const RateChain& rates);

/// Simulates every gate opened during `duration` seconds.
SimulationResult simulate_run(const ExperimentConfig& config, const RateChain& rates, double duration,
                              std::uint64_t seed, int workers = 1);

/// Simulates exactly `gates` gates; the duration is the span they cover.
SimulationResult simulate_gates(const ExperimentConfig& config, const RateChain& rates, std::uint64_t gates,
                                std::uint64_t seed, int workers = 1);

/// Line-per-gate text format: `# key=value` header lines, then
/// `start_ns,Db:delay_ns;Dbp:delay_ns` per gate (nothing after the comma for
/// a gate without stops). Numbers round-trip exactly.
void write_event_stream(std::ostream& out, const TdcEventStream& stream);
TdcEventStream read_event_stream(std::istream& in);

void write_run_summary(std::ostream& out, const RunSummary& summary);
RunSummary read_run_summary(std::istream& in);

struct PeakResidual {
  StopChannel channel = StopChannel::db;
  /// Gate lattice slot; peak n = slot - zero_slot.
  int slot = 0;
  int peak = 0;
  double observed = 0.0;
  double expected = 0.0;
  double z = 0.0;
};

struct FitReport {
  double chi_square = 0.0;
  int degrees_of_freedom = 0;
  double p_value = 1.0;
  std::uint64_t gates = 0;
  std::vector<PeakResidual> residuals;

  double max_abs_z() const;
};

/// Pearson chi-square of the stop-delay histogram against the exact
/// distribution for `config`. Bins with fewer than 5 expected counts are
/// merged; gates without a recorded stop form one more bin.
FitReport empirical_vs_exact(const TdcEventStream& stream, const ExperimentConfig& config);

/// Same comparison against a caller-supplied oracle (conditional peak
/// probabilities per channel). The hash check still uses `config`.
FitReport empirical_vs_distribution(const TdcEventStream& stream, const ExperimentConfig& config,
                                    const std::map<int, double>& db, const std::map<int, double>& dbp);

}  // namespace tbfp
