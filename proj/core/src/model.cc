#include "tbfp/model.h"

#include <cmath>
#include <limits>

namespace tbfp {

ValidationError::ValidationError(std::string field, const std::string& message)
    : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

double InterferometerSpec::round_trip_gain() const {
  const double rr = coupler1.r * coupler2.r;
  return rr * rr * (1.0 - turn_loss);
}

double SourceSpec::bin_magnitude() const {
  return unbounded() ? 1.0 : 1.0 / std::sqrt(static_cast<double>(dimension));
}

const DetectorSpec& ExperimentConfig::detector(DetectorRole role) const {
  for (const auto& d : detectors) {
    if (d.role == role) return d;
  }
  throw ValidationError("detectors", "missing detector role");
}

int ExperimentConfig::gate_slots() const {
  // Slots are whole Delta-tau intervals; the small slack absorbs rounding in
  // width / period for exact multiples.
  return static_cast<int>(std::floor(gate.width / source.repetition_period * (1.0 + 1e-12)));
}

int ExperimentConfig::turns() const {
  return max_turns ? *max_turns : truncation_for_tail(interferometer_a, interferometer_b);
}

CouplerSpec coupler_from_power(double reflectance, double pass_loss) {
  if (!(reflectance >= 0.0 && reflectance <= 1.0)) {
    throw ValidationError("reflectance", "must lie in [0, 1]");
  }
  if (!(pass_loss >= 0.0 && pass_loss < 1.0)) {
    throw ValidationError("pass_loss", "must lie in [0, 1)");
  }
  const double transmitted = 1.0 - reflectance - pass_loss;
  if (transmitted < -1e-15) {
    throw ValidationError("pass_loss", "reflectance + pass_loss exceeds 1");
  }
  return CouplerSpec{std::sqrt(reflectance), std::sqrt(std::max(0.0, transmitted)), pass_loss};
}

double phase_from_length(double delta_length, double wavelength, double group_index,
                         PassGeometry geometry) {
  if (!(wavelength > 0.0)) throw ValidationError("wavelength", "must be positive");
  const double passes = geometry == PassGeometry::double_pass ? 2.0 : 1.0;
  return kTwoPi * group_index * passes * delta_length / wavelength;
}

namespace {

// Power still circulating when the photon returns to coupler 1 for the
// (K+1)-th time; everything truncated descends from it.
double arm_tail(const InterferometerSpec& spec, int turns) {
  const double q = spec.round_trip_gain();
  const double entry = spec.coupler1.t * spec.coupler1.t * spec.coupler2.r * spec.coupler2.r *
                       (1.0 - spec.turn_loss);
  if (q == 0.0) return turns == 0 ? entry : 0.0;
  return entry * std::pow(q, turns);
}

}  // namespace

double truncation_tail(const InterferometerSpec& a, const InterferometerSpec& b, int turns) {
  return arm_tail(a, turns) + arm_tail(b, turns);
}

int truncation_for_tail(const InterferometerSpec& a, const InterferometerSpec& b, double tail) {
  if (a.round_trip_gain() >= 1.0 || b.round_trip_gain() >= 1.0) {
    throw ValidationError("max_turns", "round-trip gain must stay below 1");
  }
  constexpr int kLimit = 200000;
  int k = 0;
  while (truncation_tail(a, b, k) >= tail) {
    if (++k > kLimit) throw ValidationError("max_turns", "tail bound needs too many round trips");
  }
  return k;
}

NoiseSpec noise_from(const ExperimentConfig& config) {
  NoiseSpec noise;
  noise.phase_noise_fwhm = config.phase_noise_fwhm;
  // A single contrast value drives both arms; take the smaller one.
  noise.pol_contrast_per_turn = std::min(config.interferometer_a.pol_contrast_per_turn,
                                         config.interferometer_b.pol_contrast_per_turn);
  noise.turn_loss_a = config.interferometer_a.turn_loss;
  noise.turn_loss_b = config.interferometer_b.turn_loss;
  noise.arm = config.noise_arm;
  return noise;
}

ExperimentConfig apply_noise(ExperimentConfig config, const NoiseSpec& noise) {
  if (!(noise.turn_loss_a >= 0.0 && noise.turn_loss_a < 1.0)) {
    throw ValidationError("noise.turn_loss_a", "must lie in [0, 1)");
  }
  if (!(noise.turn_loss_b >= 0.0 && noise.turn_loss_b < 1.0)) {
    throw ValidationError("noise.turn_loss_b", "must lie in [0, 1)");
  }
  if (!(noise.pol_contrast_per_turn > 0.0 && noise.pol_contrast_per_turn <= 1.0)) {
    throw ValidationError("noise.pol_contrast_per_turn", "must lie in (0, 1]");
  }
  if (!(noise.phase_noise_fwhm >= 0.0)) {
    throw ValidationError("noise.phase_noise_fwhm", "must be non-negative");
  }
  config.interferometer_a.turn_loss = noise.turn_loss_a;
  config.interferometer_b.turn_loss = noise.turn_loss_b;
  config.interferometer_a.pol_contrast_per_turn = noise.pol_contrast_per_turn;
  config.interferometer_b.pol_contrast_per_turn = noise.pol_contrast_per_turn;
  config.phase_noise_fwhm = noise.phase_noise_fwhm;
  config.noise_arm = noise.arm;
  return config;
}

RateChain rate_chain_from(const ExperimentConfig& config) {
  return RateChain{config.pair_rate_into_fibers, config.transmission_a_db,
                   config.detector(DetectorRole::trigger_da).efficiency};
}

namespace {

bool in_closed(double x, double lo, double hi) { return x >= lo && x <= hi; }

void check_coupler(const CouplerSpec& c, const std::string& path) {
  if (!in_closed(c.r, 0.0, 1.0)) throw ValidationError(path + ".r", "must lie in [0, 1]");
  if (!in_closed(c.t, 0.0, 1.0)) throw ValidationError(path + ".t", "must lie in [0, 1]");
  if (!(c.pass_loss >= 0.0 && c.pass_loss < 1.0)) {
    throw ValidationError(path + ".pass_loss", "must lie in [0, 1)");
  }
  const double power = c.r * c.r + c.t * c.t;
  if (power > 1.0 + 1e-12) throw ValidationError(path, "r^2 + t^2 exceeds 1");
  if (std::abs(power - (1.0 - c.pass_loss)) > 1e-9) {
    throw ValidationError(path, "r^2 + t^2 must equal 1 - pass_loss");
  }
}

void check_interferometer(const InterferometerSpec& s, const std::string& path) {
  check_coupler(s.coupler1, path + ".coupler1");
  check_coupler(s.coupler2, path + ".coupler2");
  if (!std::isfinite(s.phase)) throw ValidationError(path + ".phase", "must be finite");
  if (!(s.turn_loss >= 0.0 && s.turn_loss < 1.0)) {
    throw ValidationError(path + ".turn_loss", "must lie in [0, 1)");
  }
  if (!(s.pol_contrast_per_turn > 0.0 && s.pol_contrast_per_turn <= 1.0)) {
    throw ValidationError(path + ".pol_contrast", "must lie in (0, 1]");
  }
  if (s.round_trip_gain() >= 1.0) {
    throw ValidationError(path, "round-trip gain (r1 r2)^2 must stay below 1");
  }
}

}  // namespace

std::vector<std::string> check_invariants(const ExperimentConfig& c) {
  std::vector<std::string> warnings;
  const auto& src = c.source;
  if (src.dimension < 0) throw ValidationError("source.dimension", "must be >= 1 or inf");
  if (!(src.repetition_period > 0.0) || !std::isfinite(src.repetition_period)) {
    throw ValidationError("source.repetition_period", "must be positive");
  }
  if (!std::isfinite(src.pump_phase_step)) {
    throw ValidationError("source.pump_phase_step", "must be finite");
  }
  if (!(src.pair_probability_per_pulse >= 0.0 && src.pair_probability_per_pulse < 1.0)) {
    throw ValidationError("source.pair_probability", "must lie in [0, 1)");
  }
  if (src.dimension == 1) warnings.push_back("source.dimension: no inter-bin interference possible");
  if (!src.unbounded() && src.dimension * src.pair_probability_per_pulse > 0.1) {
    warnings.push_back("source.pair_probability: D * p is not << 1, multi-pair emission ignored");
  }

  check_interferometer(c.interferometer_a, "interferometer_a");
  check_interferometer(c.interferometer_b, "interferometer_b");

  static constexpr std::array<const char*, 3> kNames = {"da", "db", "dbp"};
  static constexpr std::array<DetectorRole, 3> kRoles = {
      DetectorRole::trigger_da, DetectorRole::stop_db, DetectorRole::stop_dbprime};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& d = c.detectors[i];
    const std::string path = std::string("detectors.") + kNames[i];
    if (d.role != kRoles[i]) throw ValidationError(path, "unexpected detector role");
    if (!in_closed(d.efficiency, 0.0, 1.0)) {
      throw ValidationError(path + "_efficiency", "must lie in [0, 1]");
    }
    if (!(d.dark_rate >= 0.0) || !std::isfinite(d.dark_rate)) {
      throw ValidationError(path + "_dark_rate", "must be non-negative");
    }
  }

  if (!(c.gate.width > 0.0) || c.gate.width / src.repetition_period < 1.0) {
    throw ValidationError("gate.width", "must span at least one repetition period");
  }
  if (c.gate.zero_slot < 0 || c.gate.zero_slot >= c.gate_slots()) {
    throw ValidationError("gate.zero_slot", "must index a slot inside the gate");
  }
  if (!(c.gate.jitter >= 0.0)) throw ValidationError("gate.jitter", "must be non-negative");
  if (c.gate.max_stops_per_channel < 0) {
    throw ValidationError("gate.max_stops", "must be non-negative");
  }
  if (c.max_turns && *c.max_turns < 0) {
    throw ValidationError("truncation.max_turns", "must be non-negative");
  }

  const auto& sp = c.spectral;
  if (sp.points < 1) throw ValidationError("spectral.points", "must be >= 1");
  if (!(sp.center_a > 0.0)) throw ValidationError("spectral.center_a", "must be positive");
  if (!(sp.center_b > 0.0)) throw ValidationError("spectral.center_b", "must be positive");
  if (!(sp.fwhm_a >= 0.0)) throw ValidationError("spectral.fwhm_a", "must be non-negative");
  if (!(sp.fwhm_b >= 0.0)) throw ValidationError("spectral.fwhm_b", "must be non-negative");
  if (sp.points > 1 && !(sp.fwhm_a > 0.0 && sp.fwhm_b > 0.0)) {
    throw ValidationError("spectral.fwhm", "bandwidths must be positive when points > 1");
  }
  if (!std::isfinite(sp.path_mismatch)) {
    throw ValidationError("spectral.path_mismatch", "must be finite");
  }
  if (!(c.phase_noise_fwhm >= 0.0)) {
    throw ValidationError("noise.phase_noise_fwhm", "must be non-negative");
  }
  if (!(c.pair_rate_into_fibers >= 0.0)) throw ValidationError("rates.pair_rate", "must be non-negative");
  if (!std::isfinite(c.transmission_a_db)) {
    throw ValidationError("rates.transmission_a", "must be finite");
  }
  if (c.pair_rate_into_fibers * src.repetition_period > 1.0) {
    throw ValidationError("rates.pair_rate", "more than one pair per pump pulse");
  }
  return warnings;
}

}  // namespace tbfp
