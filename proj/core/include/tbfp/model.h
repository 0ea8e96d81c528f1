#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tbfp {

/// Raised when a configuration value violates a type invariant. `field()`
/// names the offending value as a dotted path, e.g. "interferometer_a.coupler1.r".
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string field, const std::string& message);
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
/// FWHM of a Gaussian expressed in standard deviations.
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

/// Amplitude reflectivity/transmissivity of one coupler or mirror.
/// Reflection keeps a real amplitude +r, transmission picks up +i*t.
struct CouplerSpec {
  double r = 0.0;
  double t = 1.0;
  double pass_loss = 0.0;

  bool operator==(const CouplerSpec&) const = default;
};

/// Mirror: fiber Fabry-Perot (interferometer a); the second port sends light
/// back toward the source. Loop: fiber ring between two couplers
/// (interferometer b); the second port feeds the control detector.
enum class Geometry { mirror, loop };

struct InterferometerSpec {
  Geometry geometry = Geometry::mirror;
  CouplerSpec coupler1;
  CouplerSpec coupler2;
  /// Round-trip phase in radians, used unreduced in computations.
  double phase = 0.0;
  /// Power lost per round trip.
  double turn_loss = 0.0;
  /// Fraction of the interfering amplitude that stays polarization-matched per round trip.
  double pol_contrast_per_turn = 1.0;

  /// (r1 r2)^2 (1 - turn_loss): power kept per round trip.
  double round_trip_gain() const;
  bool operator==(const InterferometerSpec&) const = default;
};

inline InterferometerSpec mirror_default() {
  InterferometerSpec spec;
  spec.geometry = Geometry::mirror;
  return spec;
}

inline InterferometerSpec loop_default() {
  InterferometerSpec spec;
  spec.geometry = Geometry::loop;
  return spec;
}

struct SourceSpec {
  /// Pump pulses per train. Zero selects the unbounded (stationary) train.
  int dimension = 20;
  /// Pump phase increment between successive pulses.
  double pump_phase_step = 0.0;
  double repetition_period = 1.0 / 430e6;
  double pair_probability_per_pulse = 0.01;

  bool unbounded() const { return dimension == 0; }
  /// Per-bin amplitude magnitude 1/sqrt(D); 1 for the unbounded train, where
  /// probabilities are reported per train position.
  double bin_magnitude() const;
  bool operator==(const SourceSpec&) const = default;
};

enum class DetectorRole { trigger_da, stop_db, stop_dbprime };

struct DetectorSpec {
  double efficiency = 1.0;
  /// Dark counts per second of open gate.
  double dark_rate = 0.0;
  DetectorRole role = DetectorRole::trigger_da;

  bool operator==(const DetectorSpec&) const = default;
};

struct GateSpec {
  double width = 50e-9;
  /// Lattice slot holding equal-turn coincidences (peak n = 0).
  int zero_slot = 10;
  /// Gaussian timing jitter (standard deviation, seconds) on true stops.
  double jitter = 0.0;
  /// Maximum stops kept per channel and gate; 0 keeps all.
  int max_stops_per_channel = 0;

  bool operator==(const GateSpec&) const = default;
};

/// Photon-pair spectrum used to average over wavelength.
struct SpectralSpec {
  double center_a = 810e-9;
  double center_b = 1550e-9;
  double fwhm_a = 0.0;
  double fwhm_b = 0.0;
  int points = 1;
  /// Residual per-turn optical path mismatch, interferometer a minus b.
  double path_mismatch = 0.0;

  bool operator==(const SpectralSpec&) const = default;
};

enum class NoiseArm { a, b };

/// Experimental limitations applied on top of an ideal configuration.
struct NoiseSpec {
  double phase_noise_fwhm = 0.0;
  double pol_contrast_per_turn = 1.0;
  double turn_loss_a = 0.0;
  double turn_loss_b = 0.0;
  NoiseArm arm = NoiseArm::a;

  bool operator==(const NoiseSpec&) const = default;
};

/// Source-to-trigger rate chain.
struct RateChain {
  double pair_rate_into_fibers = 430e3;
  double transmission_a_db = -14.0;
  double efficiency_da = 0.45;

  bool operator==(const RateChain&) const = default;
};

struct ExperimentConfig {
  SourceSpec source;
  InterferometerSpec interferometer_a = mirror_default();
  InterferometerSpec interferometer_b = loop_default();
  std::array<DetectorSpec, 3> detectors{
      DetectorSpec{0.45, 0.0, DetectorRole::trigger_da},
      DetectorSpec{0.16, 15.6, DetectorRole::stop_db},
      DetectorSpec{0.18, 17.6, DetectorRole::stop_dbprime}};
  GateSpec gate;
  /// Round-trip truncation; unset means derive from the tail bound.
  std::optional<int> max_turns;
  SpectralSpec spectral;
  double phase_noise_fwhm = 0.0;
  NoiseArm noise_arm = NoiseArm::a;
  double pair_rate_into_fibers = 430e3;
  double transmission_a_db = -14.0;

  const DetectorSpec& detector(DetectorRole role) const;
  /// Whole Delta-tau slots that fit inside the gate.
  int gate_slots() const;
  /// Time-bin spacings covered by the gate slots.
  int gate_time_bins() const { return gate_slots() - 1; }
  int min_gate_peak() const { return -gate.zero_slot; }
  int max_gate_peak() const { return gate_slots() - 1 - gate.zero_slot; }
  /// Truncation bound in effect (explicit or derived).
  int turns() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Power-ratio description of a coupler: r = sqrt(R), t = sqrt(1 - R - loss).
CouplerSpec coupler_from_power(double reflectance, double pass_loss = 0.0);

enum class PassGeometry { double_pass, single_pass };

/// Round-trip phase produced by a length change. Mirror cavities traverse
/// the length twice per turn.
double phase_from_length(double delta_length, double wavelength, double group_index = 1.0,
                         PassGeometry geometry = PassGeometry::double_pass);

/// Smallest K whose neglected round-trip tail stays below `tail`.
int truncation_for_tail(const InterferometerSpec& a, const InterferometerSpec& b,
                        double tail = 1e-12);

/// Probability mass beyond K round trips in either interferometer.
double truncation_tail(const InterferometerSpec& a, const InterferometerSpec& b, int turns);

NoiseSpec noise_from(const ExperimentConfig& config);
/// Copy of `config` with losses, polarization contrast and phase noise taken from `noise`.
ExperimentConfig apply_noise(ExperimentConfig config, const NoiseSpec& noise);
RateChain rate_chain_from(const ExperimentConfig& config);

/// Checks every invariant; throws ValidationError on the first violation and
/// returns the non-fatal warnings.
std::vector<std::string> check_invariants(const ExperimentConfig& config);

}  // namespace tbfp
