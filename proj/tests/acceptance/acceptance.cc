// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.h"
#include "tbfp/amplitudes.h"
#include "tbfp/analysis.h"
#include "tbfp/closed_form.h"
#include "tbfp/config_io.h"
#include "tbfp/monte_carlo.h"
#include "tbfp/parallel.h"

namespace fs = std::filesystem;
using namespace tbfp;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

ExperimentConfig preset(const std::string& name) { return validate_config(load_raw_config(name)).config; }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tbfp_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != cli::kOk) std::fprintf(stderr, "tbfp exited %d: %s", code, err.str().c_str());
  return code;
}

// Rows of a CSV artifact, comments and header dropped.
std::vector<std::vector<std::string>> csv_rows(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// ---- criteria ----

Outcome conservation() {
  Outcome o;
  double worst = 0.0;
  const auto grid = uniform_grid(16);
  for (int d : {1, 2, 5, 20}) {
    auto c = preset("fig3-ideal");
    c.source.dimension = d;
    for (double phi : grid) {
      c.interferometer_a.phase = phi;
      worst = std::max(worst, std::abs(evolve_state(c).total_probability() - 1.0));
    }
  }
  o.pass = worst <= 1e-9;
  o.detail = fmt("max |total - 1| = %.2e", worst);
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  const auto c = preset("fig3-ideal");
  const auto params = ClosedFormParams::from_config(c);
  const auto table = evolve_state(c);
  double worst_ratio = 0.0;
  for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
    const auto d = peak_distribution(table, ch).edge_out;
    auto closed = [&](int n) { return ch == StopChannel::db ? p_peak(n, params).value : p_prime_peak(n, params).value; };
    for (int n = -5; n <= 5; ++n) {
      const double exact = d.at(n) / d.at(0);
      const double cf = closed(n) / closed(0);
      worst_ratio = std::max(worst_ratio, std::abs(exact - cf) / cf);
    }
  }
  const auto grid = uniform_grid(32);
  std::vector<double> ex(grid.size()), cf(grid.size());
  parallel_for(grid.size(), 1, [&](std::size_t i) {
    auto ci = c;
    ci.interferometer_a.phase = grid[i];
    ex[i] = peak_distribution(evolve_state(ci), StopChannel::db).edge_out.at(0);
    cf[i] = p_peak(0, ClosedFormParams::from_config(ci)).value;
  });
  const double mx = *std::max_element(ex.begin(), ex.end());
  const double mc = *std::max_element(cf.begin(), cf.end());
  double worst_shape = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) worst_shape = std::max(worst_shape, std::abs(ex[i] / mx - cf[i] / mc));
  o.pass = worst_ratio <= 1e-6 && worst_shape <= 1e-3;
  o.detail = fmt("max ratio error %.2e", worst_ratio) + fmt(", max shape error %.2e", worst_shape);
  return o;
}

Outcome fig3_reproduction() {
  Outcome o;
  const auto dir = scratch("fig3");
  if (cli_run({"closed-form", "--config", "fig3-ideal", "--points", "4096", "--out", dir.string()}) != cli::kOk) {
    return {false, "closed-form failed"};
  }
  PhaseScanCurve db, dbp;
  for (const auto& row : csv_rows(dir / "curves.csv")) {
    db.phase.push_back(std::stod(row[0]));
    dbp.phase.push_back(std::stod(row[0]));
    db.value.push_back(std::stod(row[1]));
    dbp.value.push_back(std::stod(row[2]));
  }
  const bool anti = db.argmax() == dbp.argmin() && db.argmin() == dbp.argmax();
  const double contrast = db.value[db.argmax()] / db.value[db.argmin()];
  const double target = std::pow(1.81 / 0.19, 2);
  const double fwhm = curve_fwhm(db);
  const double fwhm_target = 4.0 * std::asin(0.19 / (2.0 * std::sqrt(0.81)));
  o.pass = anti && std::abs(contrast / target - 1.0) <= 1e-4 && std::abs(fwhm / fwhm_target - 1.0) <= 5e-3 &&
           std::abs(fwhm - 0.4230) <= 0.4230 * 5e-3;
  o.detail = std::string(anti ? "extrema anti-correlated" : "extrema NOT anti-correlated") +
             fmt(", contrast %.4f", contrast) + fmt(" (target %.4f)", target) + fmt(", FWHM %.5f rad", fwhm);
  return o;
}

Outcome wing_law() {
  Outcome o;
  auto c = preset("fig3-ideal");
  auto wing = [](const ExperimentConfig& cfg) {
    const auto d = peak_distribution(evolve_state(cfg), StopChannel::db).edge_out;
    std::vector<double> ratios;
    for (int n = 0; n < 5; ++n) {
      ratios.push_back(d.at(n + 1) / d.at(n));
      ratios.push_back(d.at(-n - 1) / d.at(-n));
    }
    return ratios;
  };
  double worst_ideal = 0.0;
  for (double r : wing(c)) worst_ideal = std::max(worst_ideal, std::abs(r - 0.81));
  c.interferometer_a.turn_loss = 0.05;
  c.interferometer_b.turn_loss = 0.05;
  c.max_turns.reset();
  const auto lossy = wing(c);
  double worst_lossy = 0.0;
  for (double r : lossy) worst_lossy = std::max(worst_lossy, std::abs(r - 0.731));
  o.pass = worst_ideal <= 1e-9 && worst_lossy <= 1e-3;
  o.detail = fmt("lossless max |ratio - 0.81| = %.2e", worst_ideal) + fmt("; 5%% loss ratio = %.6f", lossy[0]) +
             " (target 0.731 +- 1e-3; 5% power loss per turn gives 0.81 * 0.95 = 0.7695)";
  return o;
}

Outcome synchronous_oscillation() {
  Outcome o;
  const auto dir = scratch("sync");
  if (cli_run({"scan", "--config", "paper-experiment", "--points", "32", "--gates", "100000", "--out",
               dir.string()}) != cli::kOk) {
    return {false, "scan failed"};
  }
  std::map<std::string, std::string> argmax;
  for (const auto& row : csv_rows(dir / "visibility.csv")) {
    if (row[0] == "Db") argmax[row[1]] = row[4];
  }
  o.pass = argmax.size() == 3 && argmax["central"] == argmax["central3"] && argmax["central"] == argmax["full"];
  o.detail = "Db argmax: central " + argmax["central"] + ", central3 " + argmax["central3"] + ", full " + argmax["full"];
  return o;
}

Outcome degradation() {
  Outcome o;
  const auto dir = scratch("degrade");
  if (cli_run({"degrade", "--config", "fig8-degraded", "--points", "64", "--draws", "200", "--resamples", "200",
               "--out", dir.string()}) != cli::kOk) {
    return {false, "degrade failed"};
  }
  std::map<std::string, std::pair<double, double>> v;
  for (const auto& row : csv_rows(dir / "visibility.csv")) v[row[0]] = {std::stod(row[1]), std::stod(row[2])};
  const auto ideal = v["ideal_full"], central = v["central"], full = v["full"];
  const auto gap_cf = v["gap_central_minus_full"], gap_ic = v["gap_ideal_minus_central"];
  const bool order = full.first < central.first && central.first < ideal.first;
  const double z_cf = gap_cf.first / gap_cf.second;
  const double z_ic = gap_ic.first / gap_ic.second;
  o.pass = order && z_cf > 5.0 && z_ic > 5.0;
  o.detail = fmt("V full %.4f", full.first) + fmt(" < central %.4f", central.first) +
             fmt(" < ideal %.4f", ideal.first) + fmt("; gaps %.1f sigma", z_cf) + fmt(" and %.1f sigma", z_ic);
  return o;
}

Outcome monte_carlo_closure() {
  Outcome o;
  const auto c = preset("fig3-ideal");
  const auto rates = rate_chain_from(c);
  int passed = 0;
  double worst_p = 1.0;
  for (int s = 0; s < 20; ++s) {
    const auto sim = simulate_gates(c, rates, 1000000, derive_seed(2024, s));
    const auto fit = empirical_vs_exact(sim.stream, c);
    passed += fit.p_value > 1e-3;
    worst_p = std::min(worst_p, fit.p_value);
  }

  // Dark-only: no photon reaches a stop detector; subtract the calibrated rates.
  auto dark = c;
  dark.detectors[1].efficiency = 0.0;
  dark.detectors[2].efficiency = 0.0;
  dark.detectors[1].dark_rate = 15.6;
  dark.detectors[2].dark_rate = 17.6;
  const auto sim = simulate_gates(dark, rates, 1000000, 77);
  bool net_ok = true;
  std::string net_text;
  const double dt = sim.stream.delta_tau_ns, w = sim.stream.gate_width_ns;
  for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
    const auto h = build_histogram(sim.stream, ch, dt);
    const double rate = dark.detector(ch == StopChannel::db ? DetectorRole::stop_db : DetectorRole::stop_dbprime).dark_rate;
    for (const auto& win : {WindowSpec::central(), WindowSpec::full()}) {
      RawScanPoint p{0.0, window_counts(h, win), sim.stream.events.size(), sim.stream.events.size()};
      const auto net = net_normalize({p}, rate, window_width_ns(win, dt, w, sim.stream.zero_slot) * 1e-9)[0];
      const double z = net.net / net.std_error;
      net_ok &= std::abs(z) <= 3.0;
      net_text += std::string(" ") + to_string(ch) + "/" + win.name() + fmt(" z=%.2f", z);
    }
  }
  o.pass = passed >= 19 && net_ok;
  o.detail = std::to_string(passed) + "/20 seeds p > 1e-3" + fmt(" (min p %.3g);", worst_p) + " dark-only net" + net_text;
  return o;
}

Outcome rate_chain() {
  Outcome o;
  const auto c = preset("paper-experiment");
  const auto sim = simulate_run(c, rate_chain_from(c), 1.0, 1);
  const double rate = sim.summary.gate_rate;
  o.pass = rate >= 4.6e3 / 2.0 && rate <= 4.6e3 * 2.0;
  o.detail = fmt("gate rate %.0f Hz", rate) + fmt(" (chain %.0f Hz, band 2300..9200 Hz)", sim.summary.expected_trigger_rate);
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto base = scratch("determinism");
  const auto events = (base / "events_in.txt").string();
  {
    const auto c = preset("paper-experiment");
    std::ofstream f(events, std::ios::binary);
    write_event_stream(f, simulate_gates(c, rate_chain_from(c), 20000, 5).stream);
  }
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"closed-form", {"closed-form", "--points", "256"}},
      {"exact", {"exact", "--set", "source.dimension=40", "--points", "16"}},
      {"scan", {"scan", "--config", "paper-experiment", "--points", "8", "--gates", "20000"}},
      {"degrade", {"degrade", "--config", "fig8-degraded", "--points", "16", "--draws", "40", "--resamples", "40"}},
      {"simulate", {"simulate", "--config", "paper-experiment", "--gates", "40000"}},
      {"analyze", {"analyze", "--config", "paper-experiment", "--events", events}},
      {"compare-events", {"compare", "events", "exact", "--config", "paper-experiment", "--events", events}},
      {"compare-exact", {"compare", "exact", "closed-form", "--set", "source.dimension=130", "--points", "4"}},
  };
  std::vector<std::string> bad;
  for (const auto& [name, args] : commands) {
    std::vector<fs::path> dirs;
    for (const char* run : {"w1a", "w1b", "w4"}) {
      auto a = args;
      const auto dir = base / (name + "_" + run);
      a.insert(a.end(), {"--seed", "3", "--out", dir.string(), "--workers", run[1] == '4' ? "4" : "1"});
      if (cli_run(a) != cli::kOk) bad.push_back(name + " (exit)");
      dirs.push_back(dir);
    }
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dirs[0])) {
      ++files;
      const auto bytes = slurp(e.path());
      for (std::size_t k = 1; k < dirs.size(); ++k) {
        if (slurp(dirs[k] / e.path().filename()) != bytes) bad.push_back(name + ":" + e.path().filename().string());
      }
    }
    if (files < 2) bad.push_back(name + " (no artifacts)");
  }
  o.pass = bad.empty();
  o.detail = std::to_string(commands.size()) + " subcommand runs x {1, 1, 4 workers}";
  for (const auto& b : bad) o.detail += "; differs: " + b;
  return o;
}

}  // namespace

int main() {
  const std::vector<std::tuple<int, const char*, double, std::function<Outcome()>>> criteria{
      {1, "conservation", 10, conservation},
      {2, "oracle equivalence", 60, oracle_equivalence},
      {3, "closed-form curves", 1, fig3_reproduction},
      {4, "wing law", 60, wing_law},
      {5, "synchronous oscillation", 300, synchronous_oscillation},
      {6, "degradation", 600, degradation},
      {7, "Monte Carlo closure", 600, monte_carlo_closure},
      {8, "rate chain", 60, rate_chain},
      {9, "determinism", 0, determinism},
  };
  int failures = 0;
  for (const auto& [id, name, budget, run] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = budget <= 0 || secs <= budget;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("[%s] %d %s: %s (%.1f s%s)\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs,
                in_time ? "" : ", over time budget");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
