#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "tbfp/config_io.h"
#include "tbfp/monte_carlo.h"

using namespace tbfp;

namespace {

ExperimentConfig preset(const std::string& name) { return validate_config(load_raw_config(name)).config; }

ExperimentConfig noiseless_experiment() {
  auto c = preset("paper-experiment");
  c.phase_noise_fwhm = 0.0;
  c.spectral.points = 1;
  return c;
}

}  // namespace

TEST(monte_carlo, conditional_distribution_is_a_sub_probability) {
  for (const char* name : {"fig3-ideal", "paper-experiment", "fig8-degraded"}) {
    const auto c = preset(name);
    double total = 0.0;
    for (const auto ch : {StopChannel::db, StopChannel::db_prime}) {
      const auto d = conditional_stop_distribution(c, ch);
      EXPECT_EQ(d.begin()->first, c.min_gate_peak());
      EXPECT_EQ(d.rbegin()->first, c.max_gate_peak());
      for (const auto& [n, p] : d) {
        EXPECT_GE(p, 0.0);
        total += p;
      }
    }
    EXPECT_GT(total, 0.5) << name;
    EXPECT_LE(total, 1.0 + 1e-12) << name;
  }
}

TEST(monte_carlo, noise_free_path_matches_quadrature_path) {
  // A vanishing phase noise takes the quadrature branch; results must agree.
  auto c = noiseless_experiment();
  const auto direct = conditional_stop_distribution(c, StopChannel::db);
  c.phase_noise_fwhm = 1e-12;
  const auto quad = conditional_stop_distribution(c, StopChannel::db);
  for (const auto& [n, p] : direct) EXPECT_NEAR(quad.at(n), p, 1e-12) << n;
}

TEST(monte_carlo, deterministic_for_seed_and_workers) {
  const auto c = preset("paper-experiment");
  const auto rates = rate_chain_from(c);
  const auto a = simulate_gates(c, rates, 40000, 17, 1);
  const auto b = simulate_gates(c, rates, 40000, 17, 4);
  const auto other = simulate_gates(c, rates, 40000, 18, 1);
  EXPECT_EQ(a.stream, b.stream);
  EXPECT_EQ(a.summary, b.summary);
  EXPECT_NE(a.stream.events, other.stream.events);
  EXPECT_EQ(a.stream.events.size(), 40000u);
}

TEST(monte_carlo, streams_round_trip) {
  const auto c = preset("paper-experiment");
  auto sim = simulate_gates(c, rate_chain_from(c), 3000, 5);
  sim.stream.events[0].stops.push_back({StopChannel::db_prime, 0.1 + 0.2});
  std::stringstream text;
  write_event_stream(text, sim.stream);
  EXPECT_EQ(read_event_stream(text), sim.stream);

  std::stringstream summary;
  write_run_summary(summary, sim.summary);
  EXPECT_EQ(read_run_summary(summary), sim.summary);
}

TEST(monte_carlo, malformed_streams_report_line) {
  auto expect_line = [](const std::string& text, int line) {
    std::istringstream in(text);
    try {
      read_event_stream(in);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const FormatError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  expect_line("# tbfp events\n1.0,Db:2.0\n3.0\n", 3);
  expect_line("1.0,Dc:2.0\n", 1);
  expect_line("1.0,Db:abc\n", 1);
  expect_line("1.0,Db\n", 1);
  expect_line("# gates=2\n1.0,\n", 2);
  std::istringstream summary("duration_s=1\nbogus=3\n");
  EXPECT_THROW(read_run_summary(summary), FormatError);
}

TEST(monte_carlo, true_stops_sit_on_the_lattice) {
  auto c = noiseless_experiment();
  for (auto& d : c.detectors) d.dark_rate = 0.0;
  const auto sim = simulate_gates(c, rate_chain_from(c), 50000, 3);
  const double dt = sim.stream.delta_tau_ns;
  std::uint64_t stops = 0;
  for (const auto& e : sim.stream.events) {
    EXPECT_NEAR(std::remainder(e.start_ns, dt), 0.0, 1e-6 * dt);
    for (const auto& s : e.stops) {
      ++stops;
      const double slot = s.delay_ns / dt - 0.5;
      EXPECT_NEAR(slot, std::round(slot), 1e-9);
      EXPECT_GE(s.delay_ns, 0.0);
      EXPECT_LT(s.delay_ns, sim.stream.gate_width_ns);
    }
  }
  EXPECT_EQ(stops, sim.summary.stops_db + sim.summary.stops_dbp);
  EXPECT_EQ(sim.summary.dark_stops_db + sim.summary.dark_stops_dbp, 0u);
}

TEST(monte_carlo, dark_only_counts_scale_with_open_gate_time) {
  auto c = preset("paper-experiment");
  c.detectors[1].efficiency = 0.0;
  c.detectors[2].efficiency = 0.0;
  c.detectors[1].dark_rate = 2e5;
  c.detectors[2].dark_rate = 1e5;
  const std::uint64_t gates = 200000;
  const auto sim = simulate_gates(c, rate_chain_from(c), gates, 8);
  const double expect_db = 2e5 * c.gate.width * gates;
  const double expect_dbp = 1e5 * c.gate.width * gates;
  EXPECT_NEAR(sim.summary.stops_db, expect_db, 4.0 * std::sqrt(expect_db));
  EXPECT_NEAR(sim.summary.stops_dbp, expect_dbp, 4.0 * std::sqrt(expect_dbp));
  EXPECT_EQ(sim.summary.stops_db, sim.summary.dark_stops_db);
  for (const auto& e : sim.stream.events) {
    for (const auto& s : e.stops) {
      EXPECT_GE(s.delay_ns, 0.0);
      EXPECT_LT(s.delay_ns, sim.stream.gate_width_ns);
    }
  }
}

TEST(monte_carlo, gate_rate_follows_rate_chain) {
  const auto c = preset("paper-experiment");
  const auto rates = rate_chain_from(c);
  const auto sim = simulate_run(c, rates, 5.0, 21);
  const double expected = trigger_rate(c, rates);
  EXPECT_NEAR(expected, 430e3 * std::pow(10.0, -1.4) * 0.45, 1e-6);
  const double n = expected * 5.0;
  EXPECT_NEAR(static_cast<double>(sim.summary.singles_da), n, 3.0 * std::sqrt(n));
  EXPECT_EQ(sim.summary.duration, 5.0);
  EXPECT_EQ(sim.summary.expected_trigger_rate, expected);
  EXPECT_THROW(simulate_run(c, rates, 0.0, 1), ValidationError);
  EXPECT_THROW(simulate_gates(c, rates, 0, 1), ValidationError);
}

TEST(monte_carlo, max_stops_per_channel) {
  auto c = preset("paper-experiment");
  c.detectors[1].dark_rate = 1e8;
  c.gate.max_stops_per_channel = 1;
  const auto sim = simulate_gates(c, rate_chain_from(c), 2000, 4);
  for (const auto& e : sim.stream.events) {
    int db = 0;
    for (const auto& s : e.stops) db += s.channel == StopChannel::db;
    EXPECT_LE(db, 1);
  }
}

TEST(monte_carlo, multi_pair_rate_is_refused) {
  const auto c = preset("paper-experiment");
  auto rates = rate_chain_from(c);
  rates.pair_rate_into_fibers = 1e9;
  EXPECT_THROW(simulate_gates(c, rates, 10, 1), MultiPairError);
  rates = rate_chain_from(c);
  rates.pair_rate_into_fibers = 0.0;
  EXPECT_THROW(simulate_gates(c, rates, 10, 1), ValidationError);
}

TEST(monte_carlo, comparison_refuses_foreign_streams) {
  const auto c = preset("paper-experiment");
  const auto sim = simulate_gates(c, rate_chain_from(c), 100, 1);
  auto other = c;
  other.interferometer_b.phase = 0.1;
  EXPECT_THROW(empirical_vs_exact(sim.stream, other), HashMismatchError);
}

TEST(monte_carlo, histogram_agrees_with_exact_distribution) {
  auto c = preset("paper-experiment");
  c.gate.jitter = 0.2e-9;
  const auto sim = simulate_gates(c, rate_chain_from(c), 300000, 99);
  const auto fit = empirical_vs_exact(sim.stream, c);
  EXPECT_GT(fit.p_value, 1e-3) << "chi2=" << fit.chi_square << " dof=" << fit.degrees_of_freedom;
  EXPECT_LT(fit.max_abs_z(), 5.0);
  EXPECT_EQ(fit.gates, 300000u);
}

TEST(monte_carlo, wrong_phase_is_rejected) {
  auto c = noiseless_experiment();
  c.interferometer_a.phase = 0.2;  // on the fringe slope
  const auto sim = simulate_gates(c, rate_chain_from(c), 1000000, 2);
  EXPECT_GT(empirical_vs_exact(sim.stream, c).p_value, 1e-3);
  auto shifted = c;
  shifted.interferometer_a.phase = 0.35;
  const auto wrong = empirical_vs_distribution(sim.stream, c,
                                               conditional_stop_distribution(shifted, StopChannel::db),
                                               conditional_stop_distribution(shifted, StopChannel::db_prime));
  EXPECT_LT(wrong.p_value, 1e-6);
}
