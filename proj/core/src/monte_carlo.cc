#include "tbfp/monte_carlo.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "tbfp/config_io.h"
#include "tbfp/imperfections.h"
#include "tbfp/parallel.h"

namespace tbfp {

FormatError::FormatError(int line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

namespace {

constexpr std::size_t kBatchGates = 16384;
constexpr int kNoiseNodes = 24;

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Inversion sampler; the means here are tiny.
int poisson(std::mt19937_64& rng, double mean) {
  if (mean <= 0.0) return 0;
  double u = unit(rng);
  double p = std::exp(-mean);
  int k = 0;
  double cdf = p;
  while (u > cdf && k < 1000) {
    ++k;
    p *= mean / k;
    cdf += p;
  }
  return k;
}

bool has_imperfections(const ExperimentConfig& config) {
  return config.phase_noise_fwhm > 0.0 || config.spectral.points > 1;
}

struct Outcome {
  StopChannel channel;
  int slot;
  double probability;
};

struct SimulationPlan {
  std::vector<Outcome> outcomes;
  double dark_gate_fraction = 0.0;
  double efficiency[2] = {0.0, 0.0};
  double dark_mean[2] = {0.0, 0.0};
  double delta_tau_ns = 0.0;
  double gate_width_ns = 0.0;
  double jitter_ns = 0.0;
  int max_stops = 0;
};

int channel_index(StopChannel c) { return c == StopChannel::db ? 0 : 1; }

SimulationPlan make_plan(const ExperimentConfig& config, const RateChain& rates) {
  SimulationPlan plan;
  plan.delta_tau_ns = config.source.repetition_period * 1e9;
  plan.gate_width_ns = config.gate.width * 1e9;
  plan.jitter_ns = config.gate.jitter * 1e9;
  plan.max_stops = config.gate.max_stops_per_channel;
  const auto& db = config.detector(DetectorRole::stop_db);
  const auto& dbp = config.detector(DetectorRole::stop_dbprime);
  plan.efficiency[0] = db.efficiency;
  plan.efficiency[1] = dbp.efficiency;
  plan.dark_mean[0] = db.dark_rate * config.gate.width;
  plan.dark_mean[1] = dbp.dark_rate * config.gate.width;
  const double total = trigger_rate(config, rates);
  const double dark = config.detector(DetectorRole::trigger_da).dark_rate;
  plan.dark_gate_fraction = total > 0.0 ? dark / total : 0.0;
  for (const auto channel : {StopChannel::db, StopChannel::db_prime}) {
    for (const auto& [n, p] : conditional_stop_distribution(config, channel)) {
      plan.outcomes.push_back(Outcome{channel, n + config.gate.zero_slot, p});
    }
  }
  return plan;
}

struct PendingStop {
  TdcStop stop;
  bool dark;
};

struct BatchCounts {
  std::uint64_t stops[2] = {0, 0};
  std::uint64_t dark[2] = {0, 0};
};

void simulate_gate(const SimulationPlan& plan, std::mt19937_64& rng, TdcEvent& event, BatchCounts& counts) {
  std::vector<PendingStop> pending;
  const bool dark_gate = unit(rng) < plan.dark_gate_fraction;
  const double u = unit(rng);
  const double keep = unit(rng);
  if (!dark_gate) {
    double cdf = 0.0;
    for (const auto& o : plan.outcomes) {
      cdf += o.probability;
      if (u < cdf) {
        if (keep < plan.efficiency[channel_index(o.channel)]) {
          double delay = (o.slot + 0.5) * plan.delta_tau_ns;
          if (plan.jitter_ns > 0.0) {
            std::normal_distribution<double> normal(0.0, plan.jitter_ns);
            delay += normal(rng);
          }
          if (delay >= 0.0 && delay < plan.gate_width_ns) pending.push_back({{o.channel, delay}, false});
        }
        break;
      }
    }
  }
  for (const auto channel : {StopChannel::db, StopChannel::db_prime}) {
    const int k = poisson(rng, plan.dark_mean[channel_index(channel)]);
    for (int i = 0; i < k; ++i) pending.push_back({{channel, unit(rng) * plan.gate_width_ns}, true});
  }
  std::sort(pending.begin(), pending.end(), [](const PendingStop& x, const PendingStop& y) {
    if (x.stop.delay_ns != y.stop.delay_ns) return x.stop.delay_ns < y.stop.delay_ns;
    return channel_index(x.stop.channel) < channel_index(y.stop.channel);
  });
  int kept[2] = {0, 0};
  for (const auto& p : pending) {
    const int c = channel_index(p.stop.channel);
    if (plan.max_stops > 0 && kept[c] >= plan.max_stops) continue;
    ++kept[c];
    ++counts.stops[c];
    if (p.dark) ++counts.dark[c];
    event.stops.push_back(p.stop);
  }
}

// Start times: exponential gaps snapped down to the pump lattice.
std::vector<double> start_times(double rate, double delta_tau_ns, std::mt19937_64& rng, double duration,
                                std::uint64_t gates, double& elapsed) {
  std::vector<double> out;
  if (gates > 0) out.reserve(gates);
  double t = 0.0;
  while (true) {
    const double gap = -std::log1p(-unit(rng)) / rate;
    if (gates > 0 ? out.size() == gates : t + gap >= duration) break;
    t += gap;
    out.push_back(std::floor(t * 1e9 / delta_tau_ns) * delta_tau_ns);
  }
  elapsed = gates > 0 ? t : duration;
  return out;
}

SimulationResult run(const ExperimentConfig& config, const RateChain& rates, double duration,
                     std::uint64_t gates, std::uint64_t seed, int workers) {
  check_invariants(config);
  if (rates.pair_rate_into_fibers * config.source.repetition_period > 1.0) {
    throw MultiPairError("rate chain implies more than one pair per pump pulse");
  }
  const double rate = trigger_rate(config, rates);
  if (!(rate > 0.0)) throw ValidationError("rates", "trigger rate is zero; no gate would open");
  const SimulationPlan plan = make_plan(config, rates);

  SimulationResult result;
  auto& stream = result.stream;
  stream.config_hash = config_hash(config);
  stream.seed = seed;
  stream.delta_tau_ns = plan.delta_tau_ns;
  stream.gate_width_ns = plan.gate_width_ns;
  stream.zero_slot = config.gate.zero_slot;

  std::mt19937_64 master(derive_seed(seed, 0));
  double elapsed = 0.0;
  const auto starts = start_times(rate, plan.delta_tau_ns, master, duration, gates, elapsed);
  stream.events.resize(starts.size());
  const std::size_t batches = (starts.size() + kBatchGates - 1) / kBatchGates;
  std::vector<BatchCounts> counts(batches);
  parallel_for(batches, workers, [&](std::size_t b) {
    std::mt19937_64 rng(derive_seed(seed, b + 1));
    const std::size_t end = std::min(starts.size(), (b + 1) * kBatchGates);
    for (std::size_t i = b * kBatchGates; i < end; ++i) {
      stream.events[i].start_ns = starts[i];
      simulate_gate(plan, rng, stream.events[i], counts[b]);
    }
  });

  auto& s = result.summary;
  s.duration = elapsed;
  s.singles_da = starts.size();
  s.gate_rate = elapsed > 0.0 ? static_cast<double>(s.singles_da) / elapsed : 0.0;
  for (const auto& c : counts) {
    s.stops_db += c.stops[0];
    s.stops_dbp += c.stops[1];
    s.dark_stops_db += c.dark[0];
    s.dark_stops_dbp += c.dark[1];
  }
  s.expected_trigger_rate = rate;
  s.config_hash = stream.config_hash;
  s.seed = seed;
  return result;
}

}  // namespace

std::map<int, double> conditional_stop_distribution(const ExperimentConfig& config, StopChannel channel) {
  const double trigger = trigger_probability(config);
  std::map<int, double> out;
  if (!has_imperfections(config)) {
    const auto peaks = detected_peaks(config, channel);
    for (int n = config.min_gate_peak(); n <= config.max_gate_peak(); ++n) {
      const auto it = peaks.find(n);
      out[n] = it == peaks.end() ? 0.0 : it->second / trigger;
    }
    return out;
  }
  const auto samples = spectral_samples(config.spectral);
  const double sigma = config.phase_noise_fwhm / kFwhmPerSigma;
  std::vector<double> nodes, weights;
  gauss_hermite_normal(sigma > 0.0 ? kNoiseNodes : 1, nodes, weights);
  const double phase_sum = config.interferometer_a.phase + config.interferometer_b.phase;
  const int reach = config.source.unbounded() ? config.turns() : config.turns() + config.source.dimension - 1;
  for (int n = config.min_gate_peak(); n <= config.max_gate_peak(); ++n) {
    if (std::abs(n) > reach) {
      out[n] = 0.0;
      continue;
    }
    const PhaseResponse response = phase_response(config, channel, PeakWindow::of({n}));
    double sum = 0.0;
    for (std::size_t q = 0; q < nodes.size(); ++q) {
      for (const auto& s : samples) {
        sum += weights[q] * s.weight *
               response.at(phase_sum + sigma * nodes[q] + s.delta_phase_a + s.delta_phase_b);
      }
    }
    out[n] = sum / trigger;
  }
  return out;
}

double trigger_rate(const ExperimentConfig& config, const RateChain& rates) {
  return rates.pair_rate_into_fibers * std::pow(10.0, rates.transmission_a_db / 10.0) * rates.efficiency_da +
         config.detector(DetectorRole::trigger_da).dark_rate;
}

SimulationResult simulate_run(const ExperimentConfig& config, const RateChain& rates, double duration,
                              std::uint64_t seed, int workers) {
  if (!(duration > 0.0)) throw ValidationError("duration", "must be > 0");
  return run(config, rates, duration, 0, seed, workers);
}

SimulationResult simulate_gates(const ExperimentConfig& config, const RateChain& rates, std::uint64_t gates,
                                std::uint64_t seed, int workers) {
  if (gates == 0) throw ValidationError("gates", "must be > 0");
  return run(config, rates, 0.0, gates, seed, workers);
}

// ---- event stream text format ----

namespace {

double parse_double(std::string_view text, int line) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError(line, "bad number '" + std::string(text) + "'");
  return v;
}

std::uint64_t parse_u64(std::string_view text, int line) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError(line, "bad integer '" + std::string(text) + "'");
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void write_event_stream(std::ostream& out, const TdcEventStream& stream) {
  out << "# tbfp events\n";
  out << "# config_hash=" << stream.config_hash << '\n';
  out << "# seed=" << stream.seed << '\n';
  out << "# delta_tau_ns=" << format_double(stream.delta_tau_ns) << '\n';
  out << "# gate_width_ns=" << format_double(stream.gate_width_ns) << '\n';
  out << "# zero_slot=" << stream.zero_slot << '\n';
  out << "# gates=" << stream.events.size() << '\n';
  std::string line;
  for (const auto& e : stream.events) {
    line = format_double(e.start_ns);
    line += ',';
    for (std::size_t i = 0; i < e.stops.size(); ++i) {
      if (i) line += ';';
      line += to_string(e.stops[i].channel);
      line += ':';
      line += format_double(e.stops[i].delay_ns);
    }
    line += '\n';
    out << line;
  }
}

TdcEventStream read_event_stream(std::istream& in) {
  TdcEventStream stream;
  std::string raw;
  int line_no = 0;
  std::optional<std::uint64_t> declared;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = trim(body.substr(0, eq));
      const auto value = trim(body.substr(eq + 1));
      if (key == "config_hash") stream.config_hash = value;
      else if (key == "seed") stream.seed = parse_u64(value, line_no);
      else if (key == "delta_tau_ns") stream.delta_tau_ns = parse_double(value, line_no);
      else if (key == "gate_width_ns") stream.gate_width_ns = parse_double(value, line_no);
      else if (key == "zero_slot") stream.zero_slot = static_cast<int>(parse_u64(value, line_no));
      else if (key == "gates") declared = parse_u64(value, line_no);
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) throw FormatError(line_no, "expected 'start_ns,stops'");
    TdcEvent event;
    event.start_ns = parse_double(trim(line.substr(0, comma)), line_no);
    std::string_view rest = trim(line.substr(comma + 1));
    while (!rest.empty()) {
      const auto semi = rest.find(';');
      const auto item = trim(rest.substr(0, semi));
      const auto colon = item.find(':');
      if (colon == std::string_view::npos) throw FormatError(line_no, "expected 'channel:delay_ns'");
      TdcStop stop;
      try {
        stop.channel = parse_stop_channel(std::string(trim(item.substr(0, colon))));
      } catch (const std::exception& e) {
        throw FormatError(line_no, e.what());
      }
      stop.delay_ns = parse_double(trim(item.substr(colon + 1)), line_no);
      event.stops.push_back(stop);
      rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
    }
    stream.events.push_back(std::move(event));
  }
  if (declared && *declared != stream.events.size()) {
    throw FormatError(line_no, "header declares " + std::to_string(*declared) + " gates, found " +
                                   std::to_string(stream.events.size()));
  }
  return stream;
}

void write_run_summary(std::ostream& out, const RunSummary& s) {
  out << "duration_s=" << format_double(s.duration) << '\n'
      << "singles_da=" << s.singles_da << '\n'
      << "gate_rate_hz=" << format_double(s.gate_rate) << '\n'
      << "expected_trigger_rate_hz=" << format_double(s.expected_trigger_rate) << '\n'
      << "stops_db=" << s.stops_db << '\n'
      << "stops_dbp=" << s.stops_dbp << '\n'
      << "dark_stops_db=" << s.dark_stops_db << '\n'
      << "dark_stops_dbp=" << s.dark_stops_dbp << '\n'
      << "config_hash=" << s.config_hash << '\n'
      << "seed=" << s.seed << '\n';
}

RunSummary read_run_summary(std::istream& in) {
  RunSummary s;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError(line_no, "expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "duration_s") s.duration = parse_double(value, line_no);
    else if (key == "singles_da") s.singles_da = parse_u64(value, line_no);
    else if (key == "gate_rate_hz") s.gate_rate = parse_double(value, line_no);
    else if (key == "expected_trigger_rate_hz") s.expected_trigger_rate = parse_double(value, line_no);
    else if (key == "stops_db") s.stops_db = parse_u64(value, line_no);
    else if (key == "stops_dbp") s.stops_dbp = parse_u64(value, line_no);
    else if (key == "dark_stops_db") s.dark_stops_db = parse_u64(value, line_no);
    else if (key == "dark_stops_dbp") s.dark_stops_dbp = parse_u64(value, line_no);
    else if (key == "config_hash") s.config_hash = value;
    else if (key == "seed") s.seed = parse_u64(value, line_no);
    else throw FormatError(line_no, "unknown key '" + std::string(key) + "'");
  }
  return s;
}

// ---- goodness of fit ----

double FitReport::max_abs_z() const {
  double m = 0.0;
  for (const auto& r : residuals) m = std::max(m, std::abs(r.z));
  return m;
}

FitReport empirical_vs_exact(const TdcEventStream& stream, const ExperimentConfig& config) {
  if (stream.config_hash != config_hash(config)) {
    throw HashMismatchError("event stream hash " + stream.config_hash + " does not match config hash " +
                            config_hash(config));
  }
  return empirical_vs_distribution(stream, config, conditional_stop_distribution(config, StopChannel::db),
                                   conditional_stop_distribution(config, StopChannel::db_prime));
}

FitReport empirical_vs_distribution(const TdcEventStream& stream, const ExperimentConfig& config,
                                    const std::map<int, double>& db, const std::map<int, double>& dbp) {
  if (stream.config_hash != config_hash(config)) {
    throw HashMismatchError("event stream hash " + stream.config_hash + " does not match config hash " +
                            config_hash(config));
  }
  const double dt = config.source.repetition_period * 1e9;
  const double width = config.gate.width * 1e9;
  const double jitter = config.gate.jitter * 1e9;
  const int slots = static_cast<int>(std::ceil(width / dt - 1e-9));
  const auto gates = static_cast<double>(stream.events.size());
  const RateChain rates = rate_chain_from(config);
  const double total_rate = trigger_rate(config, rates);
  const double photon_gates =
      gates * (total_rate > 0.0 ? 1.0 - config.detector(DetectorRole::trigger_da).dark_rate / total_rate : 0.0);

  auto normal_cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };

  FitReport report;
  report.gates = stream.events.size();
  std::vector<double> expected(2 * static_cast<std::size_t>(slots), 0.0);
  std::vector<double> observed(expected.size(), 0.0);
  const std::map<int, double>* dists[2] = {&db, &dbp};
  const DetectorRole roles[2] = {DetectorRole::stop_db, DetectorRole::stop_dbprime};
  for (int c = 0; c < 2; ++c) {
    const auto& det = config.detector(roles[c]);
    for (int s = 0; s < slots; ++s) {
      const double lo = s * dt;
      const double hi = std::min(width, (s + 1) * dt);
      expected[c * slots + s] += gates * det.dark_rate * (hi - lo) * 1e-9;
    }
    for (const auto& [n, p] : *dists[c]) {
      const double centre = (n + config.gate.zero_slot + 0.5) * dt;
      const double mass = photon_gates * p * det.efficiency;
      for (int s = 0; s < slots; ++s) {
        const double lo = s * dt;
        const double hi = std::min(width, (s + 1) * dt);
        double frac = 0.0;
        if (jitter > 0.0) {
          frac = normal_cdf((hi - centre) / jitter) - normal_cdf((lo - centre) / jitter);
        } else {
          frac = centre >= lo && centre < hi ? 1.0 : 0.0;
        }
        expected[c * slots + s] += mass * frac;
      }
    }
  }
  double total_stops = 0.0;
  for (const auto& e : stream.events) {
    for (const auto& stop : e.stops) {
      const int s = std::clamp(static_cast<int>(std::floor(stop.delay_ns / dt)), 0, slots - 1);
      observed[channel_index(stop.channel) * slots + s] += 1.0;
      total_stops += 1.0;
    }
  }
  for (int c = 0; c < 2; ++c) {
    for (int s = 0; s < slots; ++s) {
      PeakResidual r;
      r.channel = c == 0 ? StopChannel::db : StopChannel::db_prime;
      r.slot = s;
      r.peak = s - config.gate.zero_slot;
      r.observed = observed[c * slots + s];
      r.expected = expected[c * slots + s];
      r.z = r.expected > 0.0 ? (r.observed - r.expected) / std::sqrt(r.expected)
                             : (r.observed > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      report.residuals.push_back(r);
    }
  }

  // Gates without a stop close the multinomial.
  double expected_stops = 0.0;
  for (double e : expected) expected_stops += e;
  expected.push_back(gates - expected_stops);
  observed.push_back(gates - total_stops);

  std::vector<std::pair<double, double>> groups;
  double eo = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    eo += observed[i];
    ee += expected[i];
    if (ee >= 5.0) {
      groups.emplace_back(eo, ee);
      eo = ee = 0.0;
    }
  }
  if (ee > 0.0 || eo > 0.0) {
    if (groups.empty()) groups.emplace_back(eo, ee);
    else {
      groups.back().first += eo;
      groups.back().second += ee;
    }
  }
  for (const auto& [o, e] : groups) {
    if (e > 0.0) report.chi_square += (o - e) * (o - e) / e;
    else if (o > 0.0) report.chi_square = std::numeric_limits<double>::infinity();
  }
  report.degrees_of_freedom = std::max(1, static_cast<int>(groups.size()) - 1);
  report.p_value = std::isfinite(report.chi_square)
                       ? boost::math::gamma_q(0.5 * report.degrees_of_freedom, 0.5 * report.chi_square)
                       : 0.0;
  return report;
}

}  // namespace tbfp
