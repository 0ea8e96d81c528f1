#include "cli.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "tbfp/amplitudes.h"
#include "tbfp/analysis.h"
#include "tbfp/closed_form.h"
#include "tbfp/config_io.h"
#include "tbfp/csv.h"
#include "tbfp/imperfections.h"
#include "tbfp/model.h"
#include "tbfp/monte_carlo.h"
#include "tbfp/parallel.h"

#ifndef TBFP_VERSION
#define TBFP_VERSION "0.0.0"
#endif

namespace tbfp::cli {

namespace {

namespace fs = std::filesystem;

/// Comparison exceeded its tolerance; maps to kFailure.
class ToleranceExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config = "fig3-ideal";
  std::string out = "out";
  std::uint64_t seed = 1;
  int workers = 1;
  std::vector<std::string> sets;
};

struct Context {
  ExperimentConfig config;
  std::string hash;
  fs::path out;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string command;
  std::vector<std::string> rerun;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

CsvMeta meta(const Context& ctx, CsvMeta extra = {}) {
  CsvMeta m{{"config_hash", ctx.hash}, {"seed", std::to_string(ctx.seed)}};
  m.insert(m.end(), extra.begin(), extra.end());
  return m;
}

void write_manifest(const Context& ctx) {
  auto f = open_out(ctx.out / "manifest.txt");
  f << "# command=" << ctx.command << '\n';
  f << "# rerun=tbfp " << ctx.command << " --config manifest.txt";
  for (const auto& a : ctx.rerun) f << ' ' << a;
  f << '\n';
  f << "# seed=" << ctx.seed << '\n';
  f << "# config_hash=" << ctx.hash << '\n';
  f << "# version=" << TBFP_VERSION << '\n';
  f << serialize_config(ctx.config);
}

// Gate peaks the engine can reach.
std::pair<int, int> reachable_gate(const ExperimentConfig& c) {
  const int reach = c.source.unbounded() ? c.turns() : c.turns() + c.source.dimension - 1;
  return {std::max(c.min_gate_peak(), -reach), std::min(c.max_gate_peak(), reach)};
}

PeakWindow engine_window(const ExperimentConfig& c, const WindowSpec& w) {
  const auto [lo, hi] = reachable_gate(c);
  std::vector<int> peaks;
  for (int n : w.peaks_in(c.min_gate_peak(), c.max_gate_peak())) {
    if (n >= lo && n <= hi) peaks.push_back(n);
  }
  if (peaks.empty()) throw ValidationError("window", "window holds no reachable peak");
  return PeakWindow::of(peaks);
}

const std::vector<WindowSpec>& standard_windows() {
  static const std::vector<WindowSpec> w{WindowSpec::central(), WindowSpec::central3(), WindowSpec::full()};
  return w;
}

ExperimentConfig with_phase_sum(ExperimentConfig c, double phase_sum) {
  c.interferometer_a.phase = phase_sum - c.interferometer_b.phase;
  return c;
}

// ---- closed-form ----

int cmd_closed_form(Context& ctx, int points) {
  const auto params = ClosedFormParams::from_config(ctx.config);
  const auto grid = uniform_grid(points);
  const auto curves = normalized_curves(params, grid);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    rows.push_back({cell(grid[i]), cell(curves.db.value[i]), cell(curves.db_prime.value[i])});
  }
  auto f = open_out(ctx.out / "curves.csv");
  write_csv(f, meta(ctx, {{"normalization", "each curve to its own maximum"}}), {"phase", "db", "db_prime"},
            rows);

  const auto m = airy_metrics(params);
  auto g = open_out(ctx.out / "metrics.csv");
  write_csv(g, meta(ctx), {"metric", "value"},
            {{"loop_gain", cell(params.loop_gain())},
             {"fringe_contrast", cell(m.fringe_contrast)},
             {"coefficient_of_finesse", cell(m.coefficient_of_finesse)},
             {"fwhm_phase", cell(m.fwhm_phase)},
             {"fwhm_phase_grid", cell(curve_fwhm(curves.db))},
             {"db_argmax_phase", cell(grid[curves.db.argmax()])},
             {"db_prime_argmin_phase", cell(grid[curves.db_prime.argmin()])}});

  std::vector<std::vector<std::string>> peaks;
  for (int n = ctx.config.min_gate_peak(); n <= ctx.config.max_gate_peak(); ++n) {
    peaks.push_back({cell(n), cell(p_peak(n, params).value), cell(p_prime_peak(n, params).value)});
  }
  auto h = open_out(ctx.out / "peaks.csv");
  write_csv(h, meta(ctx, {{"phase_sum", cell(params.phase_sum)}, {"scale", "proportional"}}),
            {"n", "db", "db_prime"}, peaks);
  return kOk;
}

// ---- exact ----

int cmd_exact(Context& ctx, int points) {
  const auto& c = ctx.config;
  std::vector<std::vector<std::string>> rows;
  CsvMeta totals;
  if (c.source.unbounded()) {
    for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
      const auto d = stationary_peak_distribution(c, ch);
      for (const auto& [n, p] : d.edge_in) rows.push_back({to_string(ch), cell(n), cell(p), cell(p)});
    }
  } else {
    const auto table = evolve_state(c);
    for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
      const auto d = peak_distribution(table, ch, c.interferometer_a.phase, c.interferometer_b.phase);
      for (const auto& [n, p] : d.edge_in) {
        const auto it = d.edge_out.find(n);
        rows.push_back({to_string(ch), cell(n), cell(p), it == d.edge_out.end() ? "" : cell(it->second)});
      }
    }
    totals = {{"detected_probability", cell(table.detected_probability())},
              {"back_reflection_probability", cell(table.total_back_reflection_probability)},
              {"total_probability", cell(table.total_probability())}};
  }
  auto f = open_out(ctx.out / "peaks.csv");
  write_csv(f, meta(ctx, totals), {"channel", "n", "edge_in", "edge_out"}, rows);

  const auto grid = uniform_grid(points);
  std::vector<std::string> header{"phase"};
  std::vector<PhaseResponse> responses;
  for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
    for (const auto& w : standard_windows()) {
      header.push_back(std::string(to_string(ch)) + "_" + w.name());
      responses.push_back(phase_response(c, ch, engine_window(c, w)));
    }
  }
  std::vector<std::vector<std::string>> scan;
  for (double phi : grid) {
    std::vector<std::string> row{cell(phi)};
    for (const auto& r : responses) row.push_back(cell(r.at(phi)));
    scan.push_back(std::move(row));
  }
  auto g = open_out(ctx.out / "scan.csv");
  write_csv(g, meta(ctx, {{"phase", "phase sum phi_a + phi_b"}}), header, scan);
  return kOk;
}

// ---- scan (Monte Carlo) ----

int cmd_scan(Context& ctx, int points, std::uint64_t gates) {
  const auto grid = uniform_grid(points);
  const auto rates = rate_chain_from(ctx.config);
  std::map<std::pair<int, int>, std::vector<RawScanPoint>> raw;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto cfg = with_phase_sum(ctx.config, grid[i]);
    const auto sim = simulate_gates(cfg, rates, gates, derive_seed(ctx.seed, i), ctx.workers);
    for (int c = 0; c < 2; ++c) {
      const auto ch = c == 0 ? StopChannel::db : StopChannel::db_prime;
      const auto h = build_histogram(sim.stream, ch, sim.stream.delta_tau_ns, true);
      for (int w = 0; w < 3; ++w) {
        RawScanPoint p;
        p.coordinate = grid[i];
        p.coincidences = window_counts(h, standard_windows()[w]);
        p.singles = p.gates = sim.stream.events.size();
        raw[{c, w}].push_back(p);
      }
    }
  }
  std::vector<std::vector<std::string>> rows, vis;
  const double dt = ctx.config.source.repetition_period * 1e9;
  const double width = ctx.config.gate.width * 1e9;
  for (const auto& [key, points_raw] : raw) {
    const auto ch = key.first == 0 ? StopChannel::db : StopChannel::db_prime;
    const auto& w = standard_windows()[key.second];
    ScanOptions opt;
    opt.channel = ch;
    opt.window = w;
    opt.dark_rate = ctx.config.detector(ch == StopChannel::db ? DetectorRole::stop_db : DetectorRole::stop_dbprime)
                        .dark_rate;
    opt.seed = derive_seed(ctx.seed, 1000 + 3 * key.first + key.second);
    const auto result =
        assemble_scan(points_raw, opt, window_width_ns(w, dt, width, ctx.config.gate.zero_slot) * 1e-9);
    for (const auto& p : result.points) {
      rows.push_back({cell(p.coordinate), to_string(ch), w.name(), cell(p.raw), cell(p.singles), cell(p.net),
                      cell(p.std_error)});
    }
    vis.push_back({to_string(ch), w.name(), cell(result.visibility.value), cell(result.visibility.std_error),
                   cell(result.curve.phase[result.curve.argmax()]),
                   cell(result.curve.phase[result.curve.argmin()])});
  }
  auto f = open_out(ctx.out / "scan.csv");
  write_csv(f, meta(ctx, {{"gates_per_point", std::to_string(gates)}}),
            {"phase", "channel", "window", "coincidences", "singles", "net", "std_error"}, rows);
  auto g = open_out(ctx.out / "visibility.csv");
  write_csv(g, meta(ctx), {"channel", "window", "visibility", "std_error", "argmax_phase", "argmin_phase"}, vis);
  return kOk;
}

// ---- degrade ----

int cmd_degrade(Context& ctx, int points, int draws, int resamples) {
  const auto& c = ctx.config;
  const NoiseSpec noise = noise_from(c);
  const auto grid = uniform_grid(points);
  const ExperimentConfig ideal = apply_noise(c, NoiseSpec{});
  const SpectralSpec monochrome{c.spectral.center_a, c.spectral.center_b, 0.0, 0.0, 1, 0.0};

  std::vector<std::string> names{"ideal_full"};
  std::vector<DegradedScan> scans;
  scans.push_back(degraded_phase_scan(ideal, NoiseSpec{}, monochrome, grid, engine_window(ideal, WindowSpec::full()),
                                      StopChannel::db, 1, ctx.seed, ctx.workers));
  for (const auto& w : standard_windows()) {
    names.push_back(w.name());
    scans.push_back(degraded_phase_scan(c, noise, c.spectral, grid, engine_window(c, w), StopChannel::db, draws,
                                        ctx.seed, ctx.workers));
  }
  std::vector<std::string> header{"phase"};
  for (const auto& n : names) {
    header.push_back(n);
    header.push_back(n + "_std_error");
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::vector<std::string> row{cell(grid[i])};
    for (const auto& s : scans) {
      row.push_back(cell(s.curve.value[i]));
      row.push_back(cell(s.curve.std_error.empty() ? 0.0 : s.curve.std_error[i]));
    }
    rows.push_back(std::move(row));
  }
  auto f = open_out(ctx.out / "degrade.csv");
  write_csv(f, meta(ctx, {{"noise_hash", scans.back().noise_hash}, {"channel", "Db"},
                          {"phase_draws", std::to_string(draws)}}),
            header, rows);

  std::vector<std::vector<std::string>> vis;
  const auto boot_seed = derive_seed(ctx.seed, 0xb007);
  std::vector<Estimate> est;
  for (std::size_t k = 0; k < scans.size(); ++k) {
    est.push_back(scans[k].samples.front().size() > 1 ? bootstrap_visibility(scans[k], resamples, boot_seed)
                                                       : Estimate{visibility(scans[k].curve.value), 0.0});
    vis.push_back({names[k], cell(est.back().value), cell(est.back().std_error)});
  }
  // Paired gaps: central minus full shares the phase draws.
  const Estimate gap_cf = scans[1].samples.front().size() > 1
                              ? bootstrap_visibility_gap(scans[1], scans[3], resamples, boot_seed)
                              : Estimate{est[1].value - est[3].value, 0.0};
  const Estimate gap_ic{est[0].value - est[1].value, est[1].std_error};
  vis.push_back({"gap_central_minus_full", cell(gap_cf.value), cell(gap_cf.std_error)});
  vis.push_back({"gap_ideal_minus_central", cell(gap_ic.value), cell(gap_ic.std_error)});
  auto g = open_out(ctx.out / "visibility.csv");
  write_csv(g, meta(ctx, {{"bootstrap_resamples", std::to_string(resamples)}}), {"curve", "visibility", "std_error"},
            vis);

  std::vector<std::vector<std::string>> prof;
  for (const auto& [n, v] : per_turn_visibility_profile(c, noise, c.spectral)) prof.push_back({cell(n), cell(v)});
  auto h = open_out(ctx.out / "profile.csv");
  write_csv(h, meta(ctx, {{"channel", "Db"}}), {"n", "visibility"}, prof);
  return kOk;
}

// ---- simulate ----

int cmd_simulate(Context& ctx, double duration, std::uint64_t gates) {
  const auto rates = rate_chain_from(ctx.config);
  const auto sim = gates > 0 ? simulate_gates(ctx.config, rates, gates, ctx.seed, ctx.workers)
                             : simulate_run(ctx.config, rates, duration, ctx.seed, ctx.workers);
  auto f = open_out(ctx.out / "events.txt");
  write_event_stream(f, sim.stream);
  auto g = open_out(ctx.out / "summary.txt");
  write_run_summary(g, sim.summary);
  return kOk;
}

// ---- analyze ----

struct Input {
  std::string path;
  double coordinate = 0.0;
  bool has_coordinate = false;
};

Input parse_input(const std::string& text) {
  Input in;
  const auto at = text.rfind('@');
  in.path = text.substr(0, at);
  if (at != std::string::npos) {
    in.coordinate = parse_quantity(text.substr(at + 1), "angle");
    in.has_coordinate = true;
  }
  return in;
}

TdcEventStream load_stream(const Input& in, const ExperimentConfig& c, bool generic) {
  std::ifstream f(in.path, std::ios::binary);
  if (!f) throw ValidationError("events", "cannot read '" + in.path + "'");
  if (generic) return read_generic_csv(f, c.source.repetition_period * 1e9, c.gate.width * 1e9, c.gate.zero_slot);
  return read_event_stream(f);
}

int cmd_analyze(Context& ctx, const std::vector<std::string>& inputs, bool generic, double bin_width_ns,
                bool fit, bool off_peak_dark) {
  if (inputs.empty()) throw ValidationError("events", "no input files");
  std::vector<Input> parsed;
  std::vector<TdcEventStream> streams;
  for (const auto& s : inputs) {
    parsed.push_back(parse_input(s));
    streams.push_back(load_stream(parsed.back(), ctx.config, generic));
  }
  const auto& first = streams.front();
  const double width_bin = bin_width_ns > 0.0 ? bin_width_ns : first.delta_tau_ns;
  std::vector<std::vector<std::string>> windows;
  std::map<StopChannel, double> dark;
  for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
    DifferenceHistogram total = build_histogram(first, ch, width_bin, true);
    for (std::size_t i = 1; i < streams.size(); ++i) total = merge(total, build_histogram(streams[i], ch, width_bin, true));
    std::vector<std::vector<std::string>> rows;
    for (const auto& [k, count] : total.bins) rows.push_back({cell(static_cast<std::int64_t>(k)), cell(total.bin_center(k)), cell(count)});
    auto f = open_out(ctx.out / (std::string("histogram_") + to_string(ch) + ".csv"));
    write_csv(f, meta(ctx, {{"channel", to_string(ch)}, {"bin_width_ns", cell(width_bin)},
                            {"gates", std::to_string(total.total_gates)}, {"stream_config_hash", first.config_hash}}),
              {"bin", "dt_ns", "count"}, rows);

    const auto role = ch == StopChannel::db ? DetectorRole::stop_db : DetectorRole::stop_dbprime;
    double rate = ctx.config.detector(role).dark_rate;
    if (off_peak_dark) {
      const auto [lo, hi] = gate_peak_range(total.delta_tau_ns, total.gate_width_ns, total.zero_slot);
      std::vector<int> off;
      for (int n = lo; n <= hi; ++n) {
        if (std::abs(n) > 3) off.push_back(n);
      }
      const auto coarse = build_histogram(first, ch, first.delta_tau_ns, true);
      DifferenceHistogram all = coarse;
      for (std::size_t i = 1; i < streams.size(); ++i) all = merge(all, build_histogram(streams[i], ch, first.delta_tau_ns, true));
      rate = off_peak_dark_rate(all, WindowSpec::of(off));
    }
    dark[ch] = rate;
    for (const auto& w : standard_windows()) {
      const auto count = window_counts(total, w);
      const double ww = window_width_ns(w, total.delta_tau_ns, total.gate_width_ns, total.zero_slot);
      const auto net = net_normalize({RawScanPoint{0.0, count, total.total_gates, total.total_gates}}, rate, ww * 1e-9);
      windows.push_back({to_string(ch), w.name(), cell(count), cell(total.total_gates), cell(ww), cell(rate),
                         cell(net[0].net), cell(net[0].std_error), net[0].valid ? "1" : "0"});
    }
  }
  auto g = open_out(ctx.out / "windows.csv");
  write_csv(g, meta(ctx, {{"inputs", std::to_string(streams.size())}}),
            {"channel", "window", "coincidences", "singles", "width_ns", "dark_rate_hz", "net", "std_error", "valid"},
            windows);

  const bool scan = std::all_of(parsed.begin(), parsed.end(), [](const Input& i) { return i.has_coordinate; });
  if (scan && streams.size() >= 2) {
    std::vector<std::vector<std::string>> rows, vis;
    for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
      for (const auto& w : standard_windows()) {
        std::vector<TaggedStream> tagged;
        for (std::size_t i = 0; i < streams.size(); ++i) tagged.push_back({parsed[i].coordinate, &streams[i]});
        ScanOptions opt;
        opt.channel = ch;
        opt.window = w;
        opt.dark_rate = dark[ch];
        opt.fit = fit;
        opt.seed = ctx.seed;
        const auto r = assemble_scan(tagged, opt);
        for (const auto& p : r.points) {
          rows.push_back({cell(p.coordinate), to_string(ch), w.name(), cell(p.raw), cell(p.singles), cell(p.net),
                          cell(p.std_error), p.valid ? "1" : "0"});
        }
        const bool ok = r.fit && r.fit->converged;
        vis.push_back({to_string(ch), w.name(), cell(r.visibility.value), cell(r.visibility.std_error),
                       ok ? cell(r.fit->rho) : "", ok ? cell(r.fit->rho_error) : "",
                       ok ? cell(r.fit->phase0) : ""});
      }
    }
    auto f = open_out(ctx.out / "scan.csv");
    write_csv(f, meta(ctx), {"coordinate", "channel", "window", "coincidences", "singles", "net", "std_error", "valid"},
              rows);
    auto h = open_out(ctx.out / "visibility.csv");
    write_csv(h, meta(ctx), {"channel", "window", "visibility", "std_error", "rho", "rho_error", "phase0"}, vis);
  }
  return kOk;
}

// ---- compare ----

int cmd_compare(Context& ctx, const std::vector<std::string>& targets, double tolerance, int points,
                const std::string& events, int max_peak) {
  const auto& c = ctx.config;
  std::vector<std::vector<std::string>> rows;
  bool failed = false;
  auto sorted = targets;
  std::sort(sorted.begin(), sorted.end());
  if (sorted == std::vector<std::string>{"closed-form", "exact"}) {
    if (tolerance <= 0.0) tolerance = 1e-6;
    if (c.source.unbounded()) throw ValidationError("source.dimension", "exact comparison needs a finite train");
    // The central peak needs outcomes untouched by either train edge.
    if (c.source.dimension <= c.turns()) {
      throw ValidationError("source.dimension", "exact comparison needs dimension > max_turns (" +
                                                    std::to_string(c.turns()) + ")");
    }
    const auto params = ClosedFormParams::from_config(c);
    const auto table = evolve_state(c);
    for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
      const auto d = peak_distribution(table, ch, c.interferometer_a.phase, c.interferometer_b.phase);
      const double e0 = d.edge_out.at(0);
      const double c0 = ch == StopChannel::db ? p_peak(0, params).value : p_prime_peak(0, params).value;
      for (int n = -max_peak; n <= max_peak; ++n) {
        const auto it = d.edge_out.find(n);
        if (it == d.edge_out.end()) throw ValidationError("compare", "peak " + std::to_string(n) + " not complete");
        const double exact = it->second / e0;
        const double closed = (ch == StopChannel::db ? p_peak(n, params).value : p_prime_peak(n, params).value) / c0;
        const double diff = std::abs(exact - closed) / std::max(std::abs(closed), 1e-300);
        failed |= !(diff <= tolerance);
        rows.push_back({"ratio", to_string(ch), cell(n), "", cell(exact), cell(closed), cell(diff)});
      }
    }
    // n = 0 shape over the phase sum, both max-normalized.
    const auto grid = uniform_grid(points);
    std::vector<double> ex(grid.size()), cf(grid.size());
    parallel_for(grid.size(), ctx.workers, [&](std::size_t i) {
      const auto cfg = with_phase_sum(c, grid[i]);
      const auto t = evolve_state(cfg);
      ex[i] = peak_distribution(t, StopChannel::db).edge_out.at(0);
      cf[i] = p_peak(0, ClosedFormParams::from_config(cfg)).value;
    });
    const double mx = *std::max_element(ex.begin(), ex.end());
    const double mc = *std::max_element(cf.begin(), cf.end());
    const double shape_tol = std::max(tolerance, 1e-3);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double diff = std::abs(ex[i] / mx - cf[i] / mc);
      failed |= !(diff <= shape_tol);
      rows.push_back({"shape", "Db", "0", cell(grid[i]), cell(ex[i] / mx), cell(cf[i] / mc), cell(diff)});
    }
    auto f = open_out(ctx.out / "compare.csv");
    write_csv(f, meta(ctx, {{"tolerance", cell(tolerance)}, {"shape_tolerance", cell(shape_tol)}}),
              {"kind", "channel", "n", "phase", "exact", "closed_form", "diff"}, rows);
  } else if (sorted == std::vector<std::string>{"events", "exact"}) {
    if (tolerance <= 0.0) tolerance = 1e-3;
    if (events.empty()) throw ValidationError("events", "--events is required");
    std::ifstream in(events, std::ios::binary);
    if (!in) throw ValidationError("events", "cannot read '" + events + "'");
    const auto stream = read_event_stream(in);
    const auto report = empirical_vs_exact(stream, c);
    for (const auto& r : report.residuals) {
      rows.push_back({to_string(r.channel), cell(r.slot), cell(r.peak), cell(r.observed), cell(r.expected), cell(r.z)});
    }
    failed = !(report.p_value >= tolerance);
    auto f = open_out(ctx.out / "compare.csv");
    write_csv(f, meta(ctx, {{"chi_square", cell(report.chi_square)},
                            {"degrees_of_freedom", std::to_string(report.degrees_of_freedom)},
                            {"p_value", cell(report.p_value)},
                            {"gates", std::to_string(report.gates)},
                            {"min_p_value", cell(tolerance)}}),
              {"channel", "slot", "n", "observed", "expected", "z"}, rows);
  } else {
    throw ValidationError("compare", "targets must be 'exact closed-form' or 'events exact'");
  }
  if (failed) throw ToleranceExceeded("comparison exceeded tolerance; see compare.csv");
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-photon Fabry-Perot time-bin simulator", "tbfp"};
  app.set_version_flag("--version", TBFP_VERSION);
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 success; 1 runtime failure or compare tolerance exceeded; 2 usage, config or input error.\n"
      "Errors are reported on stderr as a single line 'error: <kind>: <message>'.");

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Preset name or config file path")->capture_default_str();
    sub->add_option("--out", common.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", common.seed, "Random seed")->capture_default_str();
    sub->add_option("--workers", common.workers, "Worker threads (outputs do not depend on it)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--set", common.sets, "Override a config key: section.key=value (repeatable)");
  };

  int points = 0, draws = 200, resamples = 200, max_peak = 5;
  std::uint64_t gates = 0;
  double duration = 0.0, tolerance = 0.0, bin_width = 0.0;
  std::vector<std::string> inputs, targets;
  std::string events;
  bool generic = false, fit = false, off_peak = false;

  auto* closed = app.add_subcommand("closed-form", "Infinite-train closed-form curves and Airy metrics");
  add_common(closed);
  closed->add_option("--points", points, "Phase grid points (default 512)");

  auto* exact = app.add_subcommand("exact", "Exact peak distribution and window phase scans");
  add_common(exact);
  exact->add_option("--points", points, "Phase grid points (default 64)");

  auto* scan = app.add_subcommand("scan", "Monte Carlo phase scan with central, central3 and full windows");
  add_common(scan);
  scan->add_option("--points", points, "Phase grid points (default 32)");
  scan->add_option("--gates", gates, "Gates per scan point (default 100000)");

  auto* degrade = app.add_subcommand("degrade", "Scans averaged over phase noise, spectrum and loss");
  add_common(degrade);
  degrade->add_option("--points", points, "Phase grid points (default 64)");
  degrade->add_option("--draws", draws, "Phase-noise draws per point")->capture_default_str();
  degrade->add_option("--resamples", resamples, "Bootstrap resamples")->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo event stream and run summary");
  add_common(simulate);
  simulate->add_option("--duration", duration, "Acquisition time, seconds (default 1)");
  simulate->add_option("--gates", gates, "Simulate exactly this many gates instead of a duration");

  auto* analyze = app.add_subcommand("analyze", "Histograms, windows and phase scans from event files");
  add_common(analyze);
  analyze->add_option("--events", inputs, "Event file, optionally FILE@phase for scans (repeatable)")->required();
  analyze->add_flag("--generic-csv", generic, "Inputs use start_ns,stop_channel,stop_delay_ns rows");
  analyze->add_option("--bin-width", bin_width, "Histogram bin width, ns (default: pulse spacing)");
  analyze->add_flag("--fit", fit, "Fit an Airy lineshape to scans");
  analyze->add_flag("--off-peak-dark", off_peak, "Estimate dark rates from peaks with |n| > 3");

  auto* compare = app.add_subcommand("compare", "Cross-check two computations: 'exact closed-form' or 'events exact'");
  add_common(compare);
  compare->add_option("targets", targets, "Two targets")->expected(2)->required();
  compare->add_option("--tolerance", tolerance,
                      "Relative ratio tolerance (exact closed-form, default 1e-6) or minimum p-value "
                      "(events exact, default 1e-3)");
  compare->add_option("--points", points, "Phase points for the shape check (default 32)");
  compare->add_option("--events", events, "Event file for 'events exact'");
  compare->add_option("--max-peak", max_peak, "Largest |n| compared")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << TBFP_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    RawConfig raw = load_raw_config(common.config);
    apply_overrides(raw, common.sets);
    auto validated = validate_config(raw);
    for (const auto& w : validated.warnings) err << "warning: " << w << '\n';

    Context ctx;
    ctx.config = validated.config;
    ctx.hash = config_hash(ctx.config);
    ctx.out = common.out;
    ctx.seed = common.seed;
    ctx.workers = common.workers;
    ctx.command = name;
    // Flags that reproduce the artifacts; config, overrides, output and
    // worker count are left out.
    for (std::size_t i = 1; i < args.size(); ++i) {
      const auto& a = args[i];
      if (a == "--config" || a == "--out" || a == "--workers" || a == "--set") {
        ++i;
        continue;
      }
      if (a.rfind("--config=", 0) == 0 || a.rfind("--out=", 0) == 0 || a.rfind("--workers=", 0) == 0 ||
          a.rfind("--set=", 0) == 0) {
        continue;
      }
      ctx.rerun.push_back(a);
    }
    fs::create_directories(ctx.out);
    write_manifest(ctx);

    int code = kOk;
    if (name == "closed-form") code = cmd_closed_form(ctx, points > 0 ? points : 512);
    else if (name == "exact") code = cmd_exact(ctx, points > 0 ? points : 64);
    else if (name == "scan") code = cmd_scan(ctx, points > 0 ? points : 32, gates > 0 ? gates : 100000);
    else if (name == "degrade") code = cmd_degrade(ctx, points > 0 ? points : 64, draws, resamples);
    else if (name == "simulate") code = cmd_simulate(ctx, duration > 0.0 ? duration : 1.0, gates);
    else if (name == "analyze") code = cmd_analyze(ctx, inputs, generic, bin_width, fit, off_peak);
    else if (name == "compare") code = cmd_compare(ctx, targets, tolerance, points > 0 ? points : 32, events, max_peak);
    out << "wrote " << ctx.out.string() << '\n';
    return code;
  } catch (const ToleranceExceeded& e) {
    err << "error: tolerance: " << e.what() << '\n';
    return kFailure;
  } catch (const ValidationError& e) {
    err << "error: validation: " << e.field() << ": " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: format: " << e.what() << '\n';
    return kUsage;
  } catch (const HashMismatchError& e) {
    err << "error: hash-mismatch: " << e.what() << '\n';
    return kUsage;
  } catch (const TruncationError& e) {
    err << "error: truncation: " << e.what() << " (suggested max_turns " << e.suggested_turns() << ")\n";
    return kUsage;
  } catch (const MultiPairError& e) {
    err << "error: multi-pair: " << e.what() << '\n';
    return kUsage;
  } catch (const UnsupportedChannelError& e) {
    err << "error: unsupported-channel: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "error: divergence: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: runtime: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace tbfp::cli
