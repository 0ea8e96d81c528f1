#include "tbfp/config_io.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tbfp {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

enum class Kind { quantity, integer, dimension, geometry, arm, turns };

struct KeySpec {
  const char* name;
  Kind kind;
  const char* dimension;  // for Kind::quantity
};

constexpr KeySpec kKeys[] = {
    {"source.dimension", Kind::dimension, ""},
    {"source.repetition_rate", Kind::quantity, "frequency"},
    {"source.repetition_period", Kind::quantity, "time"},
    {"source.pump_phase_step", Kind::quantity, "angle"},
    {"source.pair_probability", Kind::quantity, "ratio"},
    {"interferometer_a.geometry", Kind::geometry, ""},
    {"interferometer_a.reflectance1", Kind::quantity, "ratio"},
    {"interferometer_a.r1", Kind::quantity, "ratio"},
    {"interferometer_a.t1", Kind::quantity, "ratio"},
    {"interferometer_a.loss1", Kind::quantity, "ratio"},
    {"interferometer_a.reflectance2", Kind::quantity, "ratio"},
    {"interferometer_a.r2", Kind::quantity, "ratio"},
    {"interferometer_a.t2", Kind::quantity, "ratio"},
    {"interferometer_a.loss2", Kind::quantity, "ratio"},
    {"interferometer_a.phase", Kind::quantity, "angle"},
    {"interferometer_a.turn_loss", Kind::quantity, "ratio"},
    {"interferometer_a.pol_contrast", Kind::quantity, "ratio"},
    {"interferometer_b.geometry", Kind::geometry, ""},
    {"interferometer_b.reflectance1", Kind::quantity, "ratio"},
    {"interferometer_b.r1", Kind::quantity, "ratio"},
    {"interferometer_b.t1", Kind::quantity, "ratio"},
    {"interferometer_b.loss1", Kind::quantity, "ratio"},
    {"interferometer_b.reflectance2", Kind::quantity, "ratio"},
    {"interferometer_b.r2", Kind::quantity, "ratio"},
    {"interferometer_b.t2", Kind::quantity, "ratio"},
    {"interferometer_b.loss2", Kind::quantity, "ratio"},
    {"interferometer_b.phase", Kind::quantity, "angle"},
    {"interferometer_b.turn_loss", Kind::quantity, "ratio"},
    {"interferometer_b.pol_contrast", Kind::quantity, "ratio"},
    {"detectors.da_efficiency", Kind::quantity, "ratio"},
    {"detectors.da_dark_rate", Kind::quantity, "frequency"},
    {"detectors.db_efficiency", Kind::quantity, "ratio"},
    {"detectors.db_dark_rate", Kind::quantity, "frequency"},
    {"detectors.dbp_efficiency", Kind::quantity, "ratio"},
    {"detectors.dbp_dark_rate", Kind::quantity, "frequency"},
    {"gate.width", Kind::quantity, "time"},
    {"gate.zero_slot", Kind::integer, ""},
    {"gate.jitter", Kind::quantity, "time"},
    {"gate.max_stops", Kind::integer, ""},
    {"truncation.max_turns", Kind::turns, ""},
    {"spectral.center_a", Kind::quantity, "length"},
    {"spectral.center_b", Kind::quantity, "length"},
    {"spectral.fwhm_a", Kind::quantity, "length"},
    {"spectral.fwhm_b", Kind::quantity, "length"},
    {"spectral.points", Kind::integer, ""},
    {"spectral.path_mismatch", Kind::quantity, "length"},
    {"noise.phase_noise_fwhm", Kind::quantity, "angle"},
    {"noise.arm", Kind::arm, ""},
    {"rates.pair_rate", Kind::quantity, "frequency"},
    {"rates.transmission_a", Kind::quantity, "db"},
};

const KeySpec* find_key(std::string_view name) {
  for (const auto& k : kKeys) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string valid_key_list() {
  std::string out;
  for (const auto& k : kKeys) {
    if (!out.empty()) out += ", ";
    out += k.name;
  }
  return out;
}

struct Unit {
  const char* name;
  double scale;
};

constexpr Unit kTimeUnits[] = {{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"ns", 1e-9}, {"ps", 1e-12}};
constexpr Unit kFrequencyUnits[] = {{"hz", 1.0}, {"khz", 1e3}, {"mhz", 1e6}, {"ghz", 1e9}};
constexpr Unit kLengthUnits[] = {{"m", 1.0}, {"mm", 1e-3}, {"um", 1e-6}, {"nm", 1e-9}, {"pm", 1e-12}};
constexpr Unit kAngleUnits[] = {{"rad", 1.0}, {"mrad", 1e-3}, {"deg", kPi / 180.0}, {"pi", kPi}};
constexpr Unit kRatioUnits[] = {{"%", 0.01}};
constexpr Unit kDbUnits[] = {{"db", 1.0}};

template <std::size_t N>
bool lookup(const Unit (&units)[N], const std::string& name, double& scale) {
  for (const auto& u : units) {
    if (name == u.name) {
      scale = u.scale;
      return true;
    }
  }
  return false;
}

int parse_int(const std::string& text, const std::string& field) {
  int value = 0;
  const auto t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ValidationError(field, "expected an integer, got '" + t + "'");
  }
  return value;
}

}  // namespace

double parse_quantity(std::string_view text, std::string_view dimension) {
  const std::string t = trim(text);
  double value = 0.0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc()) throw std::invalid_argument("not a number: '" + t + "'");
  const std::string unit = lower(trim(std::string_view(ptr, static_cast<std::size_t>(end - ptr))));
  if (unit.empty()) return value;
  double scale = 1.0;
  bool ok = false;
  if (dimension == "time") ok = lookup(kTimeUnits, unit, scale);
  else if (dimension == "frequency") ok = lookup(kFrequencyUnits, unit, scale);
  else if (dimension == "length") ok = lookup(kLengthUnits, unit, scale);
  else if (dimension == "angle") ok = lookup(kAngleUnits, unit, scale);
  else if (dimension == "ratio") ok = lookup(kRatioUnits, unit, scale);
  else if (dimension == "db") ok = lookup(kDbUnits, unit, scale);
  if (!ok) {
    throw std::invalid_argument("unit '" + unit + "' is not a " + std::string(dimension) + " unit");
  }
  return value * scale;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

RawConfig parse_config_text(std::string_view text) {
  RawConfig raw;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') {
        throw ValidationError("line " + std::to_string(number), "unterminated section header");
      }
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("line " + std::to_string(number), "expected 'key = value'");
    }
    std::string key = trim(std::string_view(s).substr(0, eq));
    std::string value = std::string(std::string_view(s).substr(eq + 1));
    if (const auto hash = value.find('#'); hash != std::string::npos) value.resize(hash);
    value = trim(value);
    const std::string full = section.empty() ? key : section + "." + key;
    raw.values[full] = value;
    raw.lines[full] = number;
  }
  return raw;
}

void apply_overrides(RawConfig& raw, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(o, "override must have the form key=value");
    }
    const std::string key = trim(std::string_view(o).substr(0, eq));
    if (!find_key(key)) {
      throw ValidationError(key, "unknown key; valid keys: " + valid_key_list());
    }
    raw.values[key] = trim(std::string_view(o).substr(eq + 1));
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& spec : kKeys) k.emplace_back(spec.name);
    return k;
  }();
  return keys;
}

namespace {

class Reader {
 public:
  explicit Reader(const RawConfig& raw) : raw_(raw) {}

  bool has(const std::string& key) const { return raw_.values.count(key) != 0; }

  double quantity(const std::string& key, double fallback) const {
    const auto it = raw_.values.find(key);
    if (it == raw_.values.end()) return fallback;
    try {
      return parse_quantity(it->second, find_key(key)->dimension);
    } catch (const std::invalid_argument& e) {
      throw ValidationError(key, e.what());
    }
  }

  int integer(const std::string& key, int fallback) const {
    const auto it = raw_.values.find(key);
    return it == raw_.values.end() ? fallback : parse_int(it->second, key);
  }

  std::string word(const std::string& key, const std::string& fallback) const {
    const auto it = raw_.values.find(key);
    return it == raw_.values.end() ? fallback : lower(it->second);
  }

 private:
  const RawConfig& raw_;
};

CouplerSpec read_coupler(const Reader& in, const std::string& prefix, const std::string& index) {
  const std::string path = prefix + ".coupler" + index;
  const double loss = in.quantity(prefix + ".loss" + index, 0.0);
  const bool has_r = in.has(prefix + ".r" + index);
  const bool has_t = in.has(prefix + ".t" + index);
  const bool has_power = in.has(prefix + ".reflectance" + index);
  if (has_power && (has_r || has_t)) {
    throw ValidationError(path, "give either reflectance or r/t amplitudes, not both");
  }
  if (!(loss >= 0.0 && loss < 1.0)) throw ValidationError(path + ".pass_loss", "must lie in [0, 1)");
  if (has_r || has_t) {
    CouplerSpec c;
    c.pass_loss = loss;
    c.r = in.quantity(prefix + ".r" + index, 0.0);
    if (!(c.r >= 0.0 && c.r <= 1.0)) throw ValidationError(path + ".r", "must lie in [0, 1]");
    if (has_t) {
      c.t = in.quantity(prefix + ".t" + index, 0.0);
    } else {
      c.t = std::sqrt(std::max(0.0, 1.0 - loss - c.r * c.r));
    }
    if (!has_r) c.r = std::sqrt(std::max(0.0, 1.0 - loss - c.t * c.t));
    return c;
  }
  try {
    return coupler_from_power(in.quantity(prefix + ".reflectance" + index, 0.9), loss);
  } catch (const ValidationError& e) {
    throw ValidationError(path + "." + e.field(), "out of range");
  }
}

InterferometerSpec read_interferometer(const Reader& in, const std::string& prefix,
                                       Geometry fallback) {
  InterferometerSpec s;
  const std::string g = in.word(prefix + ".geometry", fallback == Geometry::mirror ? "mirror" : "loop");
  if (g == "mirror") s.geometry = Geometry::mirror;
  else if (g == "loop") s.geometry = Geometry::loop;
  else throw ValidationError(prefix + ".geometry", "expected mirror or loop");
  s.coupler1 = read_coupler(in, prefix, "1");
  s.coupler2 = read_coupler(in, prefix, "2");
  s.phase = in.quantity(prefix + ".phase", 0.0);
  s.turn_loss = in.quantity(prefix + ".turn_loss", 0.0);
  s.pol_contrast_per_turn = in.quantity(prefix + ".pol_contrast", 1.0);
  return s;
}

}  // namespace

ValidatedConfig validate_config(const RawConfig& raw) {
  for (const auto& [key, value] : raw.values) {
    if (!find_key(key)) {
      throw ValidationError(key, "unknown key; valid keys: " + valid_key_list());
    }
  }
  const Reader in(raw);
  ExperimentConfig c;

  const std::string dim = in.word("source.dimension", "20");
  if (dim == "inf" || dim == "infinite" || dim == "unbounded") {
    c.source.dimension = 0;
  } else {
    c.source.dimension = parse_int(dim, "source.dimension");
    if (c.source.dimension < 1) throw ValidationError("source.dimension", "must be >= 1 or inf");
  }
  if (in.has("source.repetition_rate") && in.has("source.repetition_period")) {
    throw ValidationError("source.repetition_rate", "give either rate or period, not both");
  }
  if (in.has("source.repetition_rate")) {
    const double rate = in.quantity("source.repetition_rate", 430e6);
    if (!(rate > 0.0)) throw ValidationError("source.repetition_rate", "must be positive");
    c.source.repetition_period = 1.0 / rate;
  } else {
    c.source.repetition_period = in.quantity("source.repetition_period", 1.0 / 430e6);
  }
  c.source.pump_phase_step = in.quantity("source.pump_phase_step", 0.0);
  c.source.pair_probability_per_pulse = in.quantity("source.pair_probability", 0.01);

  c.interferometer_a = read_interferometer(in, "interferometer_a", Geometry::mirror);
  c.interferometer_b = read_interferometer(in, "interferometer_b", Geometry::loop);

  c.detectors[0] = {in.quantity("detectors.da_efficiency", 0.45),
                    in.quantity("detectors.da_dark_rate", 0.0), DetectorRole::trigger_da};
  c.detectors[1] = {in.quantity("detectors.db_efficiency", 0.16),
                    in.quantity("detectors.db_dark_rate", 15.6), DetectorRole::stop_db};
  c.detectors[2] = {in.quantity("detectors.dbp_efficiency", 0.18),
                    in.quantity("detectors.dbp_dark_rate", 17.6), DetectorRole::stop_dbprime};

  c.gate.width = in.quantity("gate.width", 50e-9);
  c.gate.zero_slot = in.integer("gate.zero_slot", 10);
  c.gate.jitter = in.quantity("gate.jitter", 0.0);
  c.gate.max_stops_per_channel = in.integer("gate.max_stops", 0);

  const std::string turns = in.word("truncation.max_turns", "auto");
  if (turns != "auto") c.max_turns = parse_int(turns, "truncation.max_turns");

  c.spectral.center_a = in.quantity("spectral.center_a", 810e-9);
  c.spectral.center_b = in.quantity("spectral.center_b", 1550e-9);
  c.spectral.fwhm_a = in.quantity("spectral.fwhm_a", 0.0);
  c.spectral.fwhm_b = in.quantity("spectral.fwhm_b", 0.0);
  c.spectral.points = in.integer("spectral.points", 1);
  c.spectral.path_mismatch = in.quantity("spectral.path_mismatch", 0.0);

  c.phase_noise_fwhm = in.quantity("noise.phase_noise_fwhm", 0.0);
  const std::string arm = in.word("noise.arm", "a");
  if (arm == "a") c.noise_arm = NoiseArm::a;
  else if (arm == "b") c.noise_arm = NoiseArm::b;
  else throw ValidationError("noise.arm", "expected a or b");

  c.pair_rate_into_fibers = in.quantity("rates.pair_rate", 430e3);
  c.transmission_a_db = in.quantity("rates.transmission_a", -14.0);

  ValidatedConfig out{c, check_invariants(c)};
  return out;
}

namespace {

void write_interferometer(std::ostringstream& out, const char* name, const InterferometerSpec& s) {
  out << '[' << name << "]\n";
  out << "geometry = " << (s.geometry == Geometry::mirror ? "mirror" : "loop") << '\n';
  out << "r1 = " << format_double(s.coupler1.r) << '\n';
  out << "t1 = " << format_double(s.coupler1.t) << '\n';
  out << "loss1 = " << format_double(s.coupler1.pass_loss) << '\n';
  out << "r2 = " << format_double(s.coupler2.r) << '\n';
  out << "t2 = " << format_double(s.coupler2.t) << '\n';
  out << "loss2 = " << format_double(s.coupler2.pass_loss) << '\n';
  out << "phase = " << format_double(s.phase) << '\n';
  out << "turn_loss = " << format_double(s.turn_loss) << '\n';
  out << "pol_contrast = " << format_double(s.pol_contrast_per_turn) << "\n\n";
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "[source]\n";
  out << "dimension = " << (c.source.unbounded() ? std::string("inf") : std::to_string(c.source.dimension))
      << '\n';
  out << "repetition_period = " << format_double(c.source.repetition_period) << '\n';
  out << "pump_phase_step = " << format_double(c.source.pump_phase_step) << '\n';
  out << "pair_probability = " << format_double(c.source.pair_probability_per_pulse) << "\n\n";
  write_interferometer(out, "interferometer_a", c.interferometer_a);
  write_interferometer(out, "interferometer_b", c.interferometer_b);
  out << "[detectors]\n";
  out << "da_efficiency = " << format_double(c.detectors[0].efficiency) << '\n';
  out << "da_dark_rate = " << format_double(c.detectors[0].dark_rate) << '\n';
  out << "db_efficiency = " << format_double(c.detectors[1].efficiency) << '\n';
  out << "db_dark_rate = " << format_double(c.detectors[1].dark_rate) << '\n';
  out << "dbp_efficiency = " << format_double(c.detectors[2].efficiency) << '\n';
  out << "dbp_dark_rate = " << format_double(c.detectors[2].dark_rate) << "\n\n";
  out << "[gate]\n";
  out << "width = " << format_double(c.gate.width) << '\n';
  out << "zero_slot = " << c.gate.zero_slot << '\n';
  out << "jitter = " << format_double(c.gate.jitter) << '\n';
  out << "max_stops = " << c.gate.max_stops_per_channel << "\n\n";
  out << "[truncation]\n";
  out << "max_turns = " << (c.max_turns ? std::to_string(*c.max_turns) : std::string("auto")) << "\n\n";
  out << "[spectral]\n";
  out << "center_a = " << format_double(c.spectral.center_a) << '\n';
  out << "center_b = " << format_double(c.spectral.center_b) << '\n';
  out << "fwhm_a = " << format_double(c.spectral.fwhm_a) << '\n';
  out << "fwhm_b = " << format_double(c.spectral.fwhm_b) << '\n';
  out << "points = " << c.spectral.points << '\n';
  out << "path_mismatch = " << format_double(c.spectral.path_mismatch) << "\n\n";
  out << "[noise]\n";
  out << "phase_noise_fwhm = " << format_double(c.phase_noise_fwhm) << '\n';
  out << "arm = " << (c.noise_arm == NoiseArm::a ? "a" : "b") << "\n\n";
  out << "[rates]\n";
  out << "pair_rate = " << format_double(c.pair_rate_into_fibers) << '\n';
  out << "transmission_a = " << format_double(c.transmission_a_db) << '\n';
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = serialize_config(config);
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

constexpr const char* kFig3Ideal = R"(# Ideal analyzers with R/T = 90/10 couplers, no losses.
[source]
dimension = 200
repetition_rate = 430 MHz
pair_probability = 1e-4

[interferometer_a]
geometry = mirror
reflectance1 = 0.9
reflectance2 = 0.9

[interferometer_b]
geometry = loop
reflectance1 = 0.9
reflectance2 = 0.9
)";

constexpr const char* kPaperExperiment = R"(# Laboratory setup: unbounded pulse train, measured losses and spectra.
[source]
dimension = inf
repetition_rate = 430 MHz
pair_probability = 0.01

[interferometer_a]
geometry = mirror
reflectance1 = 0.9
reflectance2 = 0.9
turn_loss = 5%

[interferometer_b]
geometry = loop
reflectance1 = 0.9
reflectance2 = 0.9
turn_loss = 5%

[detectors]
da_efficiency = 0.45
db_efficiency = 0.16
db_dark_rate = 15.6 Hz
dbp_efficiency = 0.18
dbp_dark_rate = 17.6 Hz

[gate]
width = 50 ns
zero_slot = 10

[spectral]
center_a = 810 nm
center_b = 1550 nm
fwhm_a = 5.4 nm
fwhm_b = 20 nm
points = 8
path_mismatch = 10 um

[noise]
phase_noise_fwhm = 0.125 pi

[rates]
pair_rate = 430 kHz
transmission_a = -14 dB
)";

constexpr const char* kFig8Degraded = R"(# Broadened fringes: losses, pair spectrum, phase noise, residual polarization drift.
[source]
dimension = inf
repetition_rate = 430 MHz

[interferometer_a]
geometry = mirror
reflectance1 = 0.9
reflectance2 = 0.9
turn_loss = 5%
pol_contrast = 0.98

[interferometer_b]
geometry = loop
reflectance1 = 0.9
reflectance2 = 0.9
turn_loss = 5%
pol_contrast = 0.98

[spectral]
center_a = 810 nm
center_b = 1550 nm
fwhm_a = 5.4 nm
fwhm_b = 20 nm
points = 8
path_mismatch = 10 um

[noise]
phase_noise_fwhm = 0.125 pi
)";

constexpr const char* kLosslessD1 = R"(# Single pump pulse: no indistinguishable alternatives.
[source]
dimension = 1

[interferometer_a]
reflectance1 = 0.9
reflectance2 = 0.9

[interferometer_b]
reflectance1 = 0.9
reflectance2 = 0.9
)";

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"fig3-ideal", "fig8-degraded", "paper-experiment",
                                                  "lossless-d1"};
  return names;
}

std::string preset_text(std::string_view name) {
  if (name == "fig3-ideal") return kFig3Ideal;
  if (name == "fig8-degraded") return kFig8Degraded;
  if (name == "paper-experiment") return kPaperExperiment;
  if (name == "lossless-d1") return kLosslessD1;
  throw ValidationError("config", "unknown preset '" + std::string(name) + "'");
}

RawConfig load_raw_config(const std::string& path_or_preset) {
  const auto& names = preset_names();
  if (std::find(names.begin(), names.end(), path_or_preset) != names.end()) {
    return parse_config_text(preset_text(path_or_preset));
  }
  std::ifstream in(path_or_preset);
  if (!in) throw ValidationError("config", "cannot read '" + path_or_preset + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

}  // namespace tbfp
