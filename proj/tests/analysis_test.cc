#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "tbfp/analysis.h"
#include "tbfp/closed_form.h"
#include "tbfp/config_io.h"
#include "tbfp/parallel.h"

using namespace tbfp;

namespace {

ExperimentConfig preset(const std::string& name) { return validate_config(load_raw_config(name)).config; }

ExperimentConfig dark_only() {
  auto c = preset("paper-experiment");
  c.detectors[1].efficiency = 0.0;
  c.detectors[2].efficiency = 0.0;
  c.detectors[1].dark_rate = 1e5;
  return c;
}

}  // namespace

TEST(analysis, windows_partition_the_gate) {
  const auto c = preset("paper-experiment");
  const auto sim = simulate_gates(c, rate_chain_from(c), 100000, 4);
  const double dt = sim.stream.delta_tau_ns;
  for (int split : {1, 3, 5}) {
    const auto h = build_histogram(sim.stream, StopChannel::db, dt / split);
    const auto [lo, hi] = gate_peak_range(dt, sim.stream.gate_width_ns, sim.stream.zero_slot);
    EXPECT_EQ(lo, -10);
    EXPECT_EQ(hi, 11);
    std::uint64_t sum = 0;
    for (int n = lo; n <= hi; ++n) sum += window_counts(h, WindowSpec::of({n}));
    EXPECT_EQ(sum, window_counts(h, WindowSpec::full()));
    EXPECT_EQ(sum, h.total());
    EXPECT_EQ(window_counts(h, WindowSpec::central3()),
              window_counts(h, WindowSpec::of({-1})) + window_counts(h, WindowSpec::central()) +
                  window_counts(h, WindowSpec::of({1})));
  }
  EXPECT_EQ(build_histogram(sim.stream, StopChannel::db, dt).total(), sim.summary.stops_db);
}

TEST(analysis, window_ratio_matches_exact_distribution) {
  auto c = preset("paper-experiment");
  for (auto& d : c.detectors) d.dark_rate = 0.0;
  const auto sim = simulate_gates(c, rate_chain_from(c), 400000, 6);
  const auto h = build_histogram(sim.stream, StopChannel::db, sim.stream.delta_tau_ns);
  const auto p = conditional_stop_distribution(c, StopChannel::db);
  const double expected = (p.at(-1) + p.at(0) + p.at(1)) / p.at(0);
  const double c0 = static_cast<double>(window_counts(h, WindowSpec::central()));
  const double c3 = static_cast<double>(window_counts(h, WindowSpec::central3()));
  // binomial error of the ratio
  const double err = std::sqrt((c3 - c0) * c3 / c0) / c0 + 1e-12;
  EXPECT_NEAR(c3 / c0, expected, 4.0 * err);
}

TEST(analysis, dark_counts_are_flat) {
  const auto c = dark_only();
  const auto sim = simulate_gates(c, rate_chain_from(c), 200000, 12);
  const double dt = sim.stream.delta_tau_ns, w = sim.stream.gate_width_ns;
  const auto h = build_histogram(sim.stream, StopChannel::db, dt);
  const double full = static_cast<double>(window_counts(h, WindowSpec::full()));
  const double central = static_cast<double>(window_counts(h, WindowSpec::central()));
  // A dark-only histogram splits by covered time, so central / full = delta_tau / W.
  EXPECT_NEAR(central / full, dt / w, 4.0 * std::sqrt(central) / full);
  EXPECT_NEAR(window_width_ns(WindowSpec::central(), dt, w, 10), dt, 1e-12);
  EXPECT_NEAR(window_width_ns(WindowSpec::of({11}), dt, w, 10), w - 21 * dt, 1e-9);
  EXPECT_EQ(window_width_ns(WindowSpec::full(), dt, w, 10), w);

  const double rate = off_peak_dark_rate(h, WindowSpec::of({-10, -9, -8, 8, 9, 10}));
  EXPECT_NEAR(rate, 1e5, 4.0 * std::sqrt(1e5 * 6 * dt * 1e-9 * 200000) / (6 * dt * 1e-9 * 200000));

  // Subtracting the known dark rate leaves nothing.
  RawScanPoint raw{0.0, window_counts(h, WindowSpec::central()), sim.stream.events.size(), sim.stream.events.size()};
  const auto net = net_normalize({raw}, 1e5, dt * 1e-9)[0];
  EXPECT_NEAR(net.net, 0.0, 4.0 * net.std_error);
  EXPECT_TRUE(net.dark_subtracted);
}

TEST(analysis, net_normalization) {
  const std::vector<RawScanPoint> pts{{0.0, 400, 10000, 10000}, {1.0, 800, 20000, 20000}, {2.0, 5, 0, 0}};
  const auto net = net_normalize(pts, 0.0, 1e-9);
  EXPECT_NEAR(net[0].net, 0.04, 1e-15);
  EXPECT_NEAR(net[1].net, net[0].net, 1e-15);  // linear in exposure
  EXPECT_NEAR(net[0].std_error, 20.0 / 10000, 1e-15);
  EXPECT_FALSE(net[0].dark_subtracted);
  EXPECT_FALSE(net[2].valid);
  const auto sub = net_normalize(pts, 1e6, 10e-9);
  EXPECT_NEAR(sub[0].net, (400 - 1e6 * 10e-9 * 10000) / 10000, 1e-15);
  EXPECT_EQ(sub[0].raw, 400u);
}

TEST(analysis, window_and_binning_errors) {
  EXPECT_THROW(WindowSpec::parse("centre"), ValidationError);
  EXPECT_THROW(WindowSpec::parse(""), ValidationError);
  EXPECT_EQ(WindowSpec::parse("-1,0,2").peaks, (std::vector<int>{-1, 0, 2}));
  EXPECT_EQ(WindowSpec::parse("central3").name(), "central3");
  EXPECT_EQ(WindowSpec::of({2, -1}).name(), "2,-1");
  EXPECT_THROW(WindowSpec::of({12}).peaks_in(-10, 11), ValidationError);
  EXPECT_EQ(WindowSpec::full().peaks_in(-2, 2).size(), 5u);

  const auto c = preset("paper-experiment");
  const auto sim = simulate_gates(c, rate_chain_from(c), 1000, 4);
  const double dt = sim.stream.delta_tau_ns;
  EXPECT_THROW(build_histogram(sim.stream, StopChannel::db, dt / 2.5), ValidationError);
  EXPECT_THROW(build_histogram(sim.stream, StopChannel::db, 0.0), ValidationError);
  EXPECT_THROW(window_counts(build_histogram(sim.stream, StopChannel::db, dt / 2), WindowSpec::central()),
               ValidationError);
  EXPECT_THROW(window_counts(build_histogram(sim.stream, StopChannel::db, 0.7, false), WindowSpec::central()),
               ValidationError);
  EXPECT_THROW(window_counts(build_histogram(sim.stream, StopChannel::db, dt), WindowSpec::of({30})),
               ValidationError);
}

TEST(analysis, histograms_merge) {
  const auto c = preset("paper-experiment");
  const auto a = simulate_gates(c, rate_chain_from(c), 5000, 1);
  const auto b = simulate_gates(c, rate_chain_from(c), 7000, 2);
  const double dt = a.stream.delta_tau_ns;
  const auto m = merge(build_histogram(a.stream, StopChannel::db, dt), build_histogram(b.stream, StopChannel::db, dt));
  EXPECT_EQ(m.total_gates, 12000u);
  EXPECT_EQ(m.total(), a.summary.stops_db + b.summary.stops_db);
  EXPECT_THROW(merge(build_histogram(a.stream, StopChannel::db, dt), build_histogram(b.stream, StopChannel::db, dt / 3)),
               ValidationError);
}

TEST(analysis, airy_fit_recovers_closed_form) {
  const auto grid = uniform_grid(48);
  std::vector<double> value, err;
  for (double phi : grid) {
    auto p = ClosedFormParams::symmetric(0.9, phi - 0.3);
    value.push_back(p_peak(0, p).value);
    err.push_back(0.01 * value.back());
  }
  const auto fit = fit_airy(grid, value, err);
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(fit.rho, 0.81, 1e-6);
  EXPECT_NEAR(fit.phase0, 0.3, 1e-6);
  EXPECT_NEAR(fit.visibility(), 2 * 0.81 / (1 + 0.81 * 0.81), 1e-6);
  EXPECT_THROW(fit_airy({0, 1}, {1, 2}, {}), ValidationError);
}

TEST(analysis, simulated_scan_fits_loop_gain) {
  auto c = preset("fig3-ideal");
  c.source.dimension = 0;
  for (auto& d : c.detectors) d.dark_rate = 0.0;
  const auto grid = uniform_grid(24);
  std::vector<TdcEventStream> streams;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto ci = c;
    ci.interferometer_a.phase = grid[i];
    streams.push_back(simulate_gates(ci, rate_chain_from(ci), 60000, derive_seed(3, i)).stream);
  }
  std::vector<TaggedStream> tagged;
  for (std::size_t i = 0; i < grid.size(); ++i) tagged.push_back({grid[i], &streams[i]});
  ScanOptions opt;
  opt.window = WindowSpec::central();
  opt.fit = true;
  opt.bootstrap_resamples = 20;
  const auto db = assemble_scan(tagged, opt);
  ASSERT_TRUE(db.fit && db.fit->converged);
  EXPECT_NEAR(db.fit->rho, 0.81, 0.02);
  EXPECT_GT(db.visibility.std_error, 0.0);

  opt.channel = StopChannel::db_prime;
  opt.fit = false;
  const auto dbp = assemble_scan(tagged, opt);
  // The stop detectors are anti-correlated around Phi = 0.
  EXPECT_NEAR(db.curve.phase[db.curve.argmax()], 0.0, 0.3);
  EXPECT_NEAR(dbp.curve.phase[dbp.curve.argmin()], 0.0, 0.3);
}

TEST(analysis, duplicate_coordinates_are_pooled) {
  const std::vector<RawScanPoint> raw{{1.0, 10, 100, 100}, {0.0, 5, 50, 50}, {1.0, 30, 300, 300}};
  ScanOptions opt;
  opt.bootstrap_resamples = 0;
  const auto s = assemble_scan(raw, opt, 1e-9);
  ASSERT_EQ(s.raw.size(), 2u);
  EXPECT_EQ(s.raw[1].coincidences, 40u);
  EXPECT_EQ(s.raw[1].singles, 400u);
  EXPECT_NEAR(s.points[1].net, 0.1, 1e-15);
  EXPECT_THROW(assemble_scan(std::vector<RawScanPoint>{{1.0, 1, 1, 1}}, opt, 1e-9), ValidationError);
}

TEST(analysis, generic_csv) {
  std::istringstream in(
      "start_ns,stop_channel,stop_delay_ns\n"
      "0,Db,24.4\n"
      "0,Dbp,3.5\n"
      "100,,\n"
      "# comment\n"
      "200,db,1.0\n");
  const auto s = read_generic_csv(in, 2.325, 50.0, 10);
  ASSERT_EQ(s.events.size(), 3u);
  EXPECT_EQ(s.events[0].stops.size(), 2u);
  EXPECT_EQ(s.events[0].stops[1].channel, StopChannel::db_prime);
  EXPECT_TRUE(s.events[1].stops.empty());
  EXPECT_EQ(s.events[2].start_ns, 200.0);

  auto line_of = [](const std::string& text) {
    std::istringstream bad(text);
    try {
      read_generic_csv(bad, 2.325, 50.0, 10);
    } catch (const FormatError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("0,Db,1\n0,Dq,1\n"), 2);
  EXPECT_EQ(line_of("0,Db,70\n"), 1);
  EXPECT_EQ(line_of("0,Db,x\n"), 1);
  EXPECT_EQ(line_of("h,e,a\nx,Db,1\n"), 2);
}
