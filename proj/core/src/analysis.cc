#include "tbfp/analysis.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

namespace tbfp {

namespace {

long floor_div(long a, long b) {
  long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Number of bins per Delta-tau, or 0 when the width does not divide it.
long bins_per_lattice(double bin_width, double delta_tau) {
  const double m = delta_tau / bin_width;
  const double rounded = std::round(m);
  if (rounded < 1.0 || std::abs(m - rounded) > 1e-9 * rounded) return 0;
  return static_cast<long>(rounded);
}

}  // namespace

double DifferenceHistogram::bin_center(long k) const {
  return lattice_aligned ? k * bin_width_ns : (k + 0.5) * bin_width_ns;
}

std::uint64_t DifferenceHistogram::total() const {
  std::uint64_t t = 0;
  for (const auto& [k, c] : bins) t += c;
  return t;
}

DifferenceHistogram build_histogram(const TdcEventStream& stream, StopChannel channel, double bin_width_ns,
                                    bool lattice_aligned) {
  if (!(bin_width_ns > 0.0)) throw ValidationError("bin_width", "must be > 0");
  if (lattice_aligned && bins_per_lattice(bin_width_ns, stream.delta_tau_ns) == 0) {
    throw ValidationError("bin_width", "must divide the pulse spacing evenly in lattice-aligned mode");
  }
  DifferenceHistogram h;
  h.channel = channel;
  h.bin_width_ns = bin_width_ns;
  h.lattice_aligned = lattice_aligned;
  h.delta_tau_ns = stream.delta_tau_ns;
  h.gate_width_ns = stream.gate_width_ns;
  h.zero_delay_ns = stream.zero_delay_ns();
  h.zero_slot = stream.zero_slot;
  h.total_gates = stream.events.size();
  for (const auto& e : stream.events) {
    for (const auto& s : e.stops) {
      if (s.channel != channel) continue;
      const double x = (s.delay_ns - h.zero_delay_ns) / bin_width_ns;
      const long k = static_cast<long>(std::floor(lattice_aligned ? x + 0.5 : x));
      ++h.bins[k];
    }
  }
  return h;
}

DifferenceHistogram merge(const DifferenceHistogram& a, const DifferenceHistogram& b) {
  if (a.channel != b.channel || a.bin_width_ns != b.bin_width_ns || a.lattice_aligned != b.lattice_aligned ||
      a.delta_tau_ns != b.delta_tau_ns || a.gate_width_ns != b.gate_width_ns ||
      a.zero_slot != b.zero_slot) {
    throw ValidationError("histogram", "histograms differ in binning or gate");
  }
  DifferenceHistogram out = a;
  out.total_gates += b.total_gates;
  for (const auto& [k, c] : b.bins) out.bins[k] += c;
  return out;
}

WindowSpec WindowSpec::parse(const std::string& text) {
  if (text == "central") return central();
  if (text == "central3") return central3();
  if (text == "full") return full();
  std::vector<int> peaks;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    int n = 0;
    const auto* end = item.data() + item.size();
    const auto [ptr, ec] = std::from_chars(item.data(), end, n);
    if (ec != std::errc() || ptr != end) {
      throw ValidationError("window", "expected central, central3, full or a peak list, got '" + text + "'");
    }
    peaks.push_back(n);
  }
  if (peaks.empty()) throw ValidationError("window", "peak list is empty");
  return of(std::move(peaks));
}

std::string WindowSpec::name() const {
  switch (kind) {
    case Kind::central: return "central";
    case Kind::central3: return "central3";
    case Kind::full: return "full";
    case Kind::peaks: break;
  }
  std::string s;
  for (std::size_t i = 0; i < peaks.size(); ++i) s += (i ? "," : "") + std::to_string(peaks[i]);
  return s;
}

std::vector<int> WindowSpec::peaks_in(int min_peak, int max_peak) const {
  std::vector<int> out;
  switch (kind) {
    case Kind::central: out = {0}; break;
    case Kind::central3: out = {-1, 0, 1}; break;
    case Kind::full:
      for (int n = min_peak; n <= max_peak; ++n) out.push_back(n);
      return out;
    case Kind::peaks: out = peaks; break;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (int n : out) {
    if (n < min_peak || n > max_peak) {
      throw ValidationError("window", "peak " + std::to_string(n) + " lies outside the gate [" +
                                          std::to_string(min_peak) + ", " + std::to_string(max_peak) + "]");
    }
  }
  return out;
}

std::pair<int, int> gate_peak_range(double delta_tau_ns, double gate_width_ns, int zero_slot) {
  const int slots = static_cast<int>(std::ceil(gate_width_ns / delta_tau_ns - 1e-9));
  return {-zero_slot, slots - 1 - zero_slot};
}

std::uint64_t window_counts(const DifferenceHistogram& h, const WindowSpec& window) {
  if (!h.lattice_aligned) throw ValidationError("histogram", "windows need a lattice-aligned histogram");
  const long m = bins_per_lattice(h.bin_width_ns, h.delta_tau_ns);
  if (m % 2 == 0) throw ValidationError("histogram", "bin width must split the pulse spacing an odd number of times");
  const auto [lo, hi] = gate_peak_range(h.delta_tau_ns, h.gate_width_ns, h.zero_slot);
  const auto peaks = window.peaks_in(lo, hi);
  if (window.kind == WindowSpec::Kind::full) return h.total();
  std::uint64_t sum = 0;
  for (const auto& [k, c] : h.bins) {
    const long n = floor_div(k + (m - 1) / 2, m);
    if (std::binary_search(peaks.begin(), peaks.end(), static_cast<int>(n))) sum += c;
  }
  return sum;
}

double window_width_ns(const WindowSpec& window, double delta_tau_ns, double gate_width_ns, int zero_slot) {
  if (window.kind == WindowSpec::Kind::full) return gate_width_ns;
  const auto [lo, hi] = gate_peak_range(delta_tau_ns, gate_width_ns, zero_slot);
  double width = 0.0;
  for (int n : window.peaks_in(lo, hi)) {
    const double start = (n + zero_slot) * delta_tau_ns;
    width += std::max(0.0, std::min(gate_width_ns, start + delta_tau_ns) - std::max(0.0, start));
  }
  return width;
}

std::vector<NetRatePoint> net_normalize(const std::vector<RawScanPoint>& points, double dark_rate,
                                        double window_width_s) {
  std::vector<NetRatePoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    NetRatePoint r;
    r.coordinate = p.coordinate;
    r.raw = p.coincidences;
    r.singles = p.singles;
    r.dark_subtracted = dark_rate > 0.0;
    if (p.singles == 0) {
      r.valid = false;
      r.net = 0.0;
      r.std_error = 0.0;
    } else {
      const double singles = static_cast<double>(p.singles);
      const double dark = dark_rate * window_width_s * static_cast<double>(p.gates);
      r.net = (static_cast<double>(p.coincidences) - dark) / singles;
      r.std_error = std::sqrt(std::max<double>(1.0, static_cast<double>(p.coincidences))) / singles;
    }
    out.push_back(r);
  }
  return out;
}

double off_peak_dark_rate(const DifferenceHistogram& h, const WindowSpec& off_peaks) {
  if (h.total_gates == 0) return 0.0;
  const double width = window_width_ns(off_peaks, h.delta_tau_ns, h.gate_width_ns, h.zero_slot) * 1e-9;
  if (!(width > 0.0)) throw ValidationError("window", "off-peak window has no width");
  return static_cast<double>(window_counts(h, off_peaks)) / (static_cast<double>(h.total_gates) * width);
}

// ---- Airy fit ----

double AiryFit::operator()(double phase) const {
  const double s = std::sin(0.5 * (phase - phase0));
  return amplitude / ((1.0 - rho) * (1.0 - rho) + 4.0 * rho * s * s);
}

double AiryFit::visibility() const { return 2.0 * rho / (1.0 + rho * rho); }

namespace {

struct AiryResiduals {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const std::vector<double>* phase;
  const std::vector<double>* value;
  std::vector<double> weight;

  int inputs() const { return 3; }
  int values() const { return static_cast<int>(phase->size()); }

  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
    AiryFit m;
    m.amplitude = x[0];
    m.rho = x[1];
    m.phase0 = x[2];
    for (int i = 0; i < values(); ++i) f[i] = ((*value)[i] - m((*phase)[i])) * weight[i];
    return 0;
  }
};

}  // namespace

AiryFit fit_airy(const std::vector<double>& phase, const std::vector<double>& value,
                 const std::vector<double>& std_error) {
  if (phase.size() != value.size() || phase.size() < 4) {
    throw ValidationError("fit", "needs at least four matching points");
  }
  AiryResiduals functor;
  functor.phase = &phase;
  functor.value = &value;
  functor.weight.resize(phase.size());
  for (std::size_t i = 0; i < phase.size(); ++i) {
    const double e = i < std_error.size() ? std_error[i] : 0.0;
    functor.weight[i] = e > 0.0 ? 1.0 / e : 1.0;
  }

  const auto [lo, hi] = std::minmax_element(value.begin(), value.end());
  AiryFit fit;
  const double v = *hi + *lo > 0.0 ? std::clamp((*hi - *lo) / (*hi + *lo), 1e-3, 0.999) : 0.5;
  double rho = (1.0 - std::sqrt(1.0 - v * v)) / v;
  Eigen::VectorXd x(3);
  x << *hi * (1.0 - rho) * (1.0 - rho), rho, phase[static_cast<std::size_t>(hi - value.begin())];

  Eigen::NumericalDiff<AiryResiduals> numeric(functor);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<AiryResiduals>> lm(numeric);
  lm.parameters.maxfev = 2000;
  lm.parameters.xtol = 1e-12;
  lm.parameters.ftol = 1e-12;
  const auto status = lm.minimize(x);

  fit.amplitude = x[0];
  fit.rho = x[1];
  fit.phase0 = std::remainder(x[2], kTwoPi);
  Eigen::VectorXd f(functor.values());
  functor(x, f);
  const int dof = functor.values() - 3;
  fit.reduced_chi_square = dof > 0 ? f.squaredNorm() / dof : 0.0;
  fit.converged = status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters &&
                  status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation &&
                  fit.rho > 0.0 && fit.rho < 1.0 && std::isfinite(fit.amplitude);
  if (fit.converged) {
    Eigen::MatrixXd jac(functor.values(), 3);
    numeric.df(x, jac);
    const Eigen::MatrixXd cov = (jac.transpose() * jac).inverse();
    fit.rho_error = std::sqrt(std::max(0.0, cov(1, 1)) * std::max(1.0, fit.reduced_chi_square));
  }
  return fit;
}

// ---- scan assembly ----

namespace {

double curve_visibility(const std::vector<double>& phase, const std::vector<double>& values,
                        const std::vector<double>& errors, bool fit, std::optional<AiryFit>* fit_out) {
  if (fit && values.size() >= 4) {
    const AiryFit f = fit_airy(phase, values, errors);
    if (fit_out) *fit_out = f;
    if (f.converged) return f.visibility();
  }
  return visibility(values);
}

}  // namespace

ScanResult assemble_scan(std::vector<RawScanPoint> raw, const ScanOptions& options, double window_width_s) {
  std::sort(raw.begin(), raw.end(),
            [](const RawScanPoint& a, const RawScanPoint& b) { return a.coordinate < b.coordinate; });
  std::vector<RawScanPoint> pooled;
  for (const auto& p : raw) {
    if (!pooled.empty() && pooled.back().coordinate == p.coordinate) {
      pooled.back().coincidences += p.coincidences;
      pooled.back().singles += p.singles;
      pooled.back().gates += p.gates;
    } else {
      pooled.push_back(p);
    }
  }
  if (pooled.size() < 2) throw ValidationError("scan", "needs at least two scan coordinates");

  const double dark = options.subtract_dark ? options.dark_rate : 0.0;
  ScanResult result;
  result.raw = pooled;
  result.points = net_normalize(pooled, dark, window_width_s);
  result.curve.channel = options.channel;
  for (const auto& p : result.points) {
    if (!p.valid) continue;
    result.curve.phase.push_back(p.coordinate);
    result.curve.value.push_back(p.net);
    result.curve.std_error.push_back(p.std_error);
  }
  if (result.curve.value.size() < 2) throw ValidationError("scan", "fewer than two valid scan points");

  result.visibility.value = curve_visibility(result.curve.phase, result.curve.value, result.curve.std_error,
                                             options.fit, &result.fit);
  const bool refit = options.fit && result.fit && result.fit->converged;

  if (options.bootstrap_resamples >= 2) {
    std::mt19937_64 rng(options.seed);
    std::vector<double> draws;
    std::vector<RawScanPoint> resampled;
    for (int b = 0; b < options.bootstrap_resamples; ++b) {
      resampled.clear();
      for (const auto& p : pooled) {
        if (p.singles == 0) continue;
        RawScanPoint q = p;
        if (p.coincidences > 0) {
          std::poisson_distribution<std::uint64_t> poisson(static_cast<double>(p.coincidences));
          q.coincidences = poisson(rng);
        }
        resampled.push_back(q);
      }
      const auto net = net_normalize(resampled, dark, window_width_s);
      std::vector<double> phase, value, error;
      for (const auto& p : net) {
        phase.push_back(p.coordinate);
        value.push_back(p.net);
        error.push_back(p.std_error);
      }
      draws.push_back(curve_visibility(phase, value, error, refit, nullptr));
    }
    double mean = 0.0;
    for (double d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    double var = 0.0;
    for (double d : draws) var += (d - mean) * (d - mean);
    result.visibility.std_error = std::sqrt(var / static_cast<double>(draws.size() - 1));
  }
  return result;
}

ScanResult assemble_scan(const std::vector<TaggedStream>& streams, const ScanOptions& options) {
  if (streams.empty()) throw ValidationError("scan", "no streams");
  const TdcEventStream& first = *streams.front().stream;
  std::vector<RawScanPoint> raw;
  for (const auto& tagged : streams) {
    const auto& s = *tagged.stream;
    if (s.delta_tau_ns != first.delta_tau_ns || s.gate_width_ns != first.gate_width_ns ||
        s.zero_slot != first.zero_slot) {
      throw ValidationError("scan", "streams differ in pulse spacing or gate");
    }
    const auto h = build_histogram(s, options.channel, s.delta_tau_ns, true);
    RawScanPoint p;
    p.coordinate = tagged.coordinate;
    p.coincidences = window_counts(h, options.window);
    p.singles = s.events.size();
    p.gates = s.events.size();
    raw.push_back(p);
  }
  const double width_s =
      window_width_ns(options.window, first.delta_tau_ns, first.gate_width_ns, first.zero_slot) * 1e-9;
  return assemble_scan(std::move(raw), options, width_s);
}

// ---- generic CSV input ----

TdcEventStream read_generic_csv(std::istream& in, double delta_tau_ns, double gate_width_ns, int zero_slot) {
  TdcEventStream stream;
  stream.delta_tau_ns = delta_tau_ns;
  stream.gate_width_ns = gate_width_ns;
  stream.zero_slot = zero_slot;
  std::string line;
  int number = 0;
  bool header_seen = false;
  auto parse = [&](std::string text, double& out) {
    while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.pop_back();
    std::size_t start = text.find_first_not_of(' ');
    if (start == std::string::npos) return false;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data() + start, end, out);
    return ec == std::errc() && ptr == end;
  };
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    double start = 0.0;
    if (!parse(fields.empty() ? "" : fields[0], start)) {
      if (!header_seen && stream.events.empty()) {
        header_seen = true;
        continue;
      }
      throw FormatError(number, "bad start_ns");
    }
    if (stream.events.empty() || stream.events.back().start_ns != start) {
      stream.events.push_back(TdcEvent{start, {}});
    }
    std::string channel = fields.size() > 1 ? fields[1] : "";
    channel.erase(std::remove(channel.begin(), channel.end(), ' '), channel.end());
    if (channel.empty()) continue;
    TdcStop stop;
    try {
      stop.channel = parse_stop_channel(channel);
    } catch (const std::exception& e) {
      throw FormatError(number, e.what());
    }
    if (fields.size() < 3 || !parse(fields[2], stop.delay_ns)) throw FormatError(number, "bad stop_delay_ns");
    if (stop.delay_ns < 0.0 || stop.delay_ns >= gate_width_ns) {
      throw FormatError(number, "stop delay outside the gate");
    }
    stream.events.back().stops.push_back(stop);
  }
  return stream;
}

}  // namespace tbfp
