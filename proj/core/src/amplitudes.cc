#include "tbfp/amplitudes.h"

#include <algorithm>
#include <cmath>
#include <thread>

#include "tbfp/parallel.h"

namespace tbfp {

const char* to_string(StopChannel channel) { return channel == StopChannel::db ? "Db" : "Dbp"; }

StopChannel parse_stop_channel(const std::string& text) {
  if (text == "Db" || text == "db") return StopChannel::db;
  if (text == "Dbp" || text == "dbp" || text == "Db'") return StopChannel::db_prime;
  throw ValidationError("channel", "expected Db or Dbp, got '" + text + "'");
}

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    compensation_ += (sum_ - t) + x;
  } else {
    compensation_ += (x - t) + sum_;
  }
  sum_ = t;
}

namespace {

const Complex kI{0.0, 1.0};

// Port amplitude without the per-turn phase factor.
Complex base_amplitude(const InterferometerSpec& s, int turns, PathExit exit) {
  const double g = std::sqrt(1.0 - s.turn_loss);
  const double loop = s.coupler1.r * s.coupler2.r;
  if (exit == PathExit::main) {
    return (kI * s.coupler1.t) * (kI * s.coupler2.t) * std::pow(loop * g, turns);
  }
  if (turns == 0) return Complex{s.coupler1.r, 0.0};
  return (kI * s.coupler1.t) * (kI * s.coupler1.t) * s.coupler2.r * std::pow(loop, turns - 1) *
         std::pow(g, turns);
}

// Per-arm lookup tables up to the truncation bound.
struct Arm {
  std::vector<Complex> main;      // includes exp(i k phase)
  std::vector<Complex> other;     // back (mirror) or control (loop) port
  std::vector<Complex> main_base;  // phase-free
  std::vector<Complex> other_base;
  std::vector<double> eta;  // polarization overlap amplitude eta^k
};

Arm make_arm(const InterferometerSpec& s, int turns) {
  Arm arm;
  const auto n = static_cast<std::size_t>(turns) + 1;
  arm.main.resize(n);
  arm.other.resize(n);
  arm.main_base.resize(n);
  arm.other_base.resize(n);
  arm.eta.resize(n);
  for (int k = 0; k <= turns; ++k) {
    const Complex phase = std::polar(1.0, k * s.phase);
    arm.main_base[k] = base_amplitude(s, k, PathExit::main);
    arm.other_base[k] = base_amplitude(s, k, PathExit::control);
    arm.main[k] = arm.main_base[k] * phase;
    arm.other[k] = arm.other_base[k] * phase;
    arm.eta[k] = std::pow(s.pol_contrast_per_turn, k);
  }
  return arm;
}

struct Engine {
  int dimension;
  int turns;
  double magnitude;
  double pump_step;
  Arm a;
  Arm b;

  explicit Engine(const ExperimentConfig& config)
      : dimension(config.source.dimension),
        turns(config.turns()),
        magnitude(config.source.bin_magnitude()),
        pump_step(config.source.pump_phase_step),
        a(make_arm(config.interferometer_a, turns)),
        b(make_arm(config.interferometer_b, turns)) {}

  const std::vector<Complex>& port_b(StopChannel ch) const {
    return ch == StopChannel::db ? b.main : b.other;
  }

  // Coherent amplitude and incoherent probability of one finite-train
  // outcome, summed over creation bins in increasing j.
  void outcome(const std::vector<Complex>& pa, const std::vector<Complex>& pb, int ta, int tb,
               Complex& amplitude, double& incoherent) const {
    const int lo = std::max({1, ta - turns, tb - turns});
    const int hi = std::min({dimension, ta, tb});
    CompensatedSum re, im, inc;
    for (int j = lo; j <= hi; ++j) {
      const int ka = ta - j;
      const int kb = tb - j;
      const Complex term = magnitude * std::polar(1.0, j * pump_step) * pa[ka] * pb[kb];
      const double overlap = a.eta[ka] * b.eta[kb];
      const Complex coherent = term * overlap;
      re.add(coherent.real());
      im.add(coherent.imag());
      if (overlap < 1.0) inc.add(std::norm(term) * (1.0 - overlap * overlap));
    }
    amplitude = Complex{re.value(), im.value()};
    incoherent = inc.value();
  }

  // Representative outcome of the unbounded train for peak n; terms in
  // decreasing turn count, matching the finite-train order.
  double stationary(const std::vector<Complex>& pb, int n) const {
    const int shift_a = std::max(0, -n);
    const int shift_b = std::max(0, n);
    const int kmax = turns - std::max(shift_a, shift_b);
    CompensatedSum re, im, inc;
    for (int k = kmax; k >= 0; --k) {
      const int ka = k + shift_a;
      const int kb = k + shift_b;
      const Complex term = std::polar(1.0, -ka * pump_step) * a.main[ka] * pb[kb];
      const double overlap = a.eta[ka] * b.eta[kb];
      const Complex coherent = term * overlap;
      re.add(coherent.real());
      im.add(coherent.imag());
      if (overlap < 1.0) inc.add(std::norm(term) * (1.0 - overlap * overlap));
    }
    return std::norm(Complex{re.value(), im.value()}) + inc.value();
  }
};

void check_truncation(const ExperimentConfig& config) {
  if (!config.max_turns) return;
  const double tail =
      truncation_tail(config.interferometer_a, config.interferometer_b, *config.max_turns);
  if (tail > 1e-6) {
    const int suggested =
        truncation_for_tail(config.interferometer_a, config.interferometer_b, 1e-12);
    throw TruncationError("truncation tail " + std::to_string(tail) +
                              " exceeds 1e-6; use max_turns >= " + std::to_string(suggested),
                          suggested);
  }
}

void require_finite(const ExperimentConfig& config) {
  if (config.source.unbounded()) {
    throw ValidationError("source.dimension", "a finite pulse train is required here");
  }
}

}  // namespace

Complex path_amplitude(const InterferometerSpec& spec, int turns, PathExit exit) {
  if (turns < 0) throw ValidationError("turns", "must be non-negative");
  if (exit == PathExit::control && spec.geometry == Geometry::mirror) {
    throw UnsupportedChannelError("control exit is only defined for the loop interferometer");
  }
  return base_amplitude(spec, turns, exit) * std::polar(1.0, turns * spec.phase);
}

JointAmplitudeTable::JointAmplitudeTable(int dimension, int turns)
    : dimension_(dimension), turns_(turns) {
  const int n = last_time();
  entries_.resize(2 * static_cast<std::size_t>(n) * n);
  for (int c = 0; c < 2; ++c) {
    const auto channel = c == 0 ? StopChannel::db : StopChannel::db_prime;
    for (int ta = 1; ta <= n; ++ta) {
      for (int tb = 1; tb <= n; ++tb) {
        auto& e = entries_[index(ta, tb, channel)];
        e.exit_time_a = ta;
        e.exit_time_b = tb;
        e.channel = channel;
      }
    }
  }
}

std::size_t JointAmplitudeTable::index(int ta, int tb, StopChannel channel) const {
  const int n = last_time();
  if (ta < 1 || ta > n || tb < 1 || tb > n) {
    throw std::out_of_range("exit time outside [1, D + K]");
  }
  const std::size_t c = channel == StopChannel::db ? 0 : 1;
  return (c * n + static_cast<std::size_t>(ta - 1)) * n + static_cast<std::size_t>(tb - 1);
}

const JointEntry& JointAmplitudeTable::at(int ta, int tb, StopChannel channel) const {
  return entries_[index(ta, tb, channel)];
}

JointEntry& JointAmplitudeTable::at(int ta, int tb, StopChannel channel) {
  return entries_[index(ta, tb, channel)];
}

double JointAmplitudeTable::detected_probability() const {
  CompensatedSum sum;
  for (const auto& e : entries_) sum.add(e.probability());
  return sum.value();
}

bool JointAmplitudeTable::complete(int ta, int tb) const {
  return std::max(ta, tb) - turns_ >= 1 && std::min(ta, tb) <= dimension_;
}

JointAmplitudeTable evolve_state(const ExperimentConfig& config) {
  require_finite(config);
  check_truncation(config);
  const Engine engine(config);
  JointAmplitudeTable table(engine.dimension, engine.turns);
  const int last = table.last_time();
  for (const auto channel : {StopChannel::db, StopChannel::db_prime}) {
    const auto& pb = engine.port_b(channel);
    for (int ta = 1; ta <= last; ++ta) {
      for (int tb = 1; tb <= last; ++tb) {
        auto& e = table.at(ta, tb, channel);
        engine.outcome(engine.a.main, pb, ta, tb, e.amplitude, e.incoherent);
      }
    }
  }
  // Light returned by interferometer a, paired with either b port.
  CompensatedSum back;
  for (const auto* pb : {&engine.b.main, &engine.b.other}) {
    for (int ta = 1; ta <= last; ++ta) {
      for (int tb = 1; tb <= last; ++tb) {
        Complex amplitude;
        double incoherent = 0.0;
        engine.outcome(engine.a.other, *pb, ta, tb, amplitude, incoherent);
        back.add(std::norm(amplitude) + incoherent);
      }
    }
  }
  table.total_back_reflection_probability = back.value();
  return table;
}

PeakDistribution peak_distribution(const JointAmplitudeTable& table, StopChannel channel,
                                   double phase_a, double phase_b) {
  PeakDistribution dist;
  dist.channel = channel;
  dist.phase_a = phase_a;
  dist.phase_b = phase_b;
  std::map<int, CompensatedSum> edge_in;
  std::map<int, CompensatedSum> edge_out;
  std::map<int, int> complete_count;
  const int last = table.last_time();
  for (int ta = 1; ta <= last; ++ta) {
    for (int tb = 1; tb <= last; ++tb) {
      const int n = tb - ta;
      const double p = table.at(ta, tb, channel).probability();
      edge_in[n].add(p);
      if (table.complete(ta, tb)) {
        edge_out[n].add(p);
        ++complete_count[n];
      }
    }
  }
  for (const auto& [n, s] : edge_in) dist.edge_in[n] = s.value();
  for (const auto& [n, s] : edge_out) {
    dist.edge_out[n] = s.value() * table.dimension() / complete_count[n];
  }
  return dist;
}

double stationary_peak(const ExperimentConfig& config, StopChannel channel, int n) {
  check_truncation(config);
  const Engine engine(config);
  if (std::abs(n) > engine.turns) return 0.0;
  return engine.stationary(engine.port_b(channel), n);
}

PeakDistribution stationary_peak_distribution(const ExperimentConfig& config, StopChannel channel) {
  check_truncation(config);
  const Engine engine(config);
  PeakDistribution dist;
  dist.channel = channel;
  dist.phase_a = config.interferometer_a.phase;
  dist.phase_b = config.interferometer_b.phase;
  for (int n = -engine.turns; n <= engine.turns; ++n) {
    dist.edge_in[n] = engine.stationary(engine.port_b(channel), n);
  }
  dist.edge_out = dist.edge_in;
  return dist;
}

namespace {

// Edge-in peak probabilities of one channel without materializing the table.
std::map<int, double> finite_peaks(const Engine& engine, StopChannel channel) {
  const int last = engine.dimension + engine.turns;
  const auto& pb = engine.port_b(channel);
  std::map<int, CompensatedSum> sums;
  for (int ta = 1; ta <= last; ++ta) {
    for (int tb = 1; tb <= last; ++tb) {
      if (std::max({1, ta - engine.turns, tb - engine.turns}) > std::min({engine.dimension, ta, tb})) {
        continue;
      }
      Complex amplitude;
      double incoherent = 0.0;
      engine.outcome(engine.a.main, pb, ta, tb, amplitude, incoherent);
      sums[tb - ta].add(std::norm(amplitude) + incoherent);
    }
  }
  std::map<int, double> out;
  for (const auto& [n, s] : sums) out[n] = s.value();
  return out;
}

int max_peak(const Engine& engine) {
  return engine.dimension == 0 ? engine.turns : engine.turns + engine.dimension - 1;
}

void check_window(const PeakWindow& window, int limit) {
  if (window.all) return;
  if (window.peaks.empty()) throw ValidationError("window", "peak window is empty");
  for (int n : window.peaks) {
    if (std::abs(n) > limit) {
      throw ValidationError("window", "peak " + std::to_string(n) + " is outside the computed range");
    }
  }
}

double window_probability(const Engine& engine, StopChannel channel, const PeakWindow& window) {
  const auto& pb = engine.port_b(channel);
  CompensatedSum sum;
  if (engine.dimension == 0) {
    for (int n = -engine.turns; n <= engine.turns; ++n) {
      if (window.contains(n)) sum.add(engine.stationary(pb, n));
    }
  } else {
    for (const auto& [n, p] : finite_peaks(engine, channel)) {
      if (window.contains(n)) sum.add(p);
    }
  }
  return sum.value();
}

}  // namespace

std::map<int, double> detected_peaks(const ExperimentConfig& config, StopChannel channel) {
  check_truncation(config);
  const Engine engine(config);
  if (engine.dimension == 0) return stationary_peak_distribution(config, channel).edge_in;
  return finite_peaks(engine, channel);
}

double trigger_probability(const ExperimentConfig& config) {
  const Engine engine(config);
  CompensatedSum sum;
  for (const auto& amp : engine.a.main) sum.add(std::norm(amp));
  return sum.value();
}

PeakWindow PeakWindow::range(int lo, int hi) {
  PeakWindow w;
  for (int n = lo; n <= hi; ++n) w.peaks.push_back(n);
  return w;
}

bool PeakWindow::contains(int n) const {
  return all || std::find(peaks.begin(), peaks.end(), n) != peaks.end();
}

std::size_t PhaseScanCurve::argmax() const {
  return static_cast<std::size_t>(std::max_element(value.begin(), value.end()) - value.begin());
}

std::size_t PhaseScanCurve::argmin() const {
  return static_cast<std::size_t>(std::min_element(value.begin(), value.end()) - value.begin());
}

PhaseScanCurve phase_scan_exact(const ExperimentConfig& config, const std::vector<double>& phase_grid,
                                const PeakWindow& window, StopChannel channel, int workers) {
  if (phase_grid.empty()) throw ValidationError("phase_grid", "must not be empty");
  check_truncation(config);
  check_window(window, max_peak(Engine(config)));
  PhaseScanCurve curve;
  curve.channel = channel;
  curve.phase = phase_grid;
  curve.value.resize(phase_grid.size());
  parallel_for(phase_grid.size(), workers, [&](std::size_t i) {
    ExperimentConfig c = config;
    c.interferometer_a.phase = phase_grid[i] - c.interferometer_b.phase;
    curve.value[i] = window_probability(Engine(c), channel, window);
  });
  return curve;
}

double PhaseResponse::at(double phase_sum) const {
  const double phi = phase_sum - pump_phase_step_;
  double sum = incoherent_;
  if (coefficients_.empty()) return sum;
  sum += coefficients_[0].real();
  const Complex step = std::polar(1.0, phi);
  Complex rotor = step;
  for (std::size_t d = 1; d < coefficients_.size(); ++d) {
    sum += 2.0 * (coefficients_[d] * rotor).real();
    rotor *= step;
  }
  return sum;
}

namespace {

// Accumulates the autocorrelation of v into coefficients.
void add_autocorrelation(const std::vector<Complex>& v, std::vector<Complex>& coefficients) {
  if (coefficients.size() < v.size()) coefficients.resize(v.size());
  for (std::size_t d = 0; d < v.size(); ++d) {
    Complex c{};
    for (std::size_t k = 0; k + d < v.size(); ++k) c += v[k + d] * std::conj(v[k]);
    coefficients[d] += c;
  }
}

}  // namespace

PhaseResponse phase_response(const ExperimentConfig& config, StopChannel channel,
                             const PeakWindow& window) {
  check_truncation(config);
  ExperimentConfig flat = config;
  flat.interferometer_a.phase = 0.0;
  flat.interferometer_b.phase = 0.0;
  const Engine engine(flat);
  check_window(window, max_peak(engine));
  PhaseResponse response;
  response.pump_phase_step_ = config.source.pump_phase_step;
  CompensatedSum incoherent;
  std::vector<Complex> v;

  // v[k] multiplies exp(i k Phi) where k counts turns of photon a.
  auto add_terms = [&](int ka_lo, int ka_hi, int n, double weight) {
    // Offsetting by ka_lo drops a global phase.
    v.assign(static_cast<std::size_t>(ka_hi - ka_lo) + 1, Complex{});
    for (int ka = ka_lo; ka <= ka_hi; ++ka) {
      const int kb = ka + n;
      const Complex term = weight * engine.a.main_base[ka] * (channel == StopChannel::db
                                                                  ? engine.b.main_base[kb]
                                                                  : engine.b.other_base[kb]);
      const double overlap = engine.a.eta[ka] * engine.b.eta[kb];
      v[ka - ka_lo] = term * overlap;
      if (overlap < 1.0) incoherent.add(std::norm(term) * (1.0 - overlap * overlap));
    }
    add_autocorrelation(v, response.coefficients_);
  };

  if (engine.dimension == 0) {
    for (int n = -engine.turns; n <= engine.turns; ++n) {
      if (!window.contains(n)) continue;
      add_terms(std::max(0, -n), engine.turns - std::max(0, n), n, 1.0);
    }
  } else {
    const int last = engine.dimension + engine.turns;
    for (int ta = 1; ta <= last; ++ta) {
      for (int tb = 1; tb <= last; ++tb) {
        const int n = tb - ta;
        if (!window.contains(n)) continue;
        const int lo = std::max({1, ta - engine.turns, tb - engine.turns});
        const int hi = std::min({engine.dimension, ta, tb});
        if (lo > hi) continue;
        add_terms(ta - hi, ta - lo, n, engine.magnitude);
      }
    }
  }
  response.incoherent_ = incoherent.value();
  return response;
}

std::vector<double> uniform_grid(int points, double lo, double hi) {
  if (points < 1) throw ValidationError("points", "must be >= 1");
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) grid[i] = lo + (hi - lo) * i / points;
  return grid;
}

}  // namespace tbfp
