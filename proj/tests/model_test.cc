#include <cmath>

#include <gtest/gtest.h>

#include "tbfp/config_io.h"
#include "tbfp/model.h"

using namespace tbfp;

namespace {

ExperimentConfig preset(const std::string& name) { return validate_config(load_raw_config(name)).config; }

template <typename F>
std::string field_of(F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST(model, coupler_from_power) {
  const auto c = coupler_from_power(0.9);
  EXPECT_NEAR(c.r * c.r + c.t * c.t, 1.0, 1e-15);
  EXPECT_NEAR(c.r, std::sqrt(0.9), 1e-15);
  const auto lossy = coupler_from_power(0.9, 0.02);
  EXPECT_NEAR(lossy.r * lossy.r + lossy.t * lossy.t, 0.98, 1e-15);
  EXPECT_THROW(coupler_from_power(1.2), ValidationError);
  EXPECT_THROW(coupler_from_power(0.9, 0.2), ValidationError);
}

TEST(model, round_trip_gain) {
  InterferometerSpec s;
  s.coupler1 = coupler_from_power(0.9);
  s.coupler2 = coupler_from_power(0.9);
  EXPECT_NEAR(s.round_trip_gain(), 0.81, 1e-15);
  s.turn_loss = 0.05;
  EXPECT_NEAR(s.round_trip_gain(), 0.81 * 0.95, 1e-15);
}

TEST(model, phase_from_length) {
  // Half a wavelength of extra mirror spacing is one full round-trip wave.
  EXPECT_NEAR(phase_from_length(405e-9, 810e-9), kTwoPi, 1e-12);
  EXPECT_NEAR(phase_from_length(405e-9, 810e-9, 1.0, PassGeometry::single_pass), kPi, 1e-12);
  EXPECT_NEAR(phase_from_length(1e-6, 1550e-9, 1.468, PassGeometry::single_pass),
              kTwoPi * 1.468 * 1e-6 / 1550e-9, 1e-12);
  EXPECT_THROW(phase_from_length(1e-6, 0.0), ValidationError);
}

TEST(model, truncation_bound_meets_tail) {
  const auto c = preset("fig3-ideal");
  const int k = truncation_for_tail(c.interferometer_a, c.interferometer_b, 1e-12);
  EXPECT_LT(truncation_tail(c.interferometer_a, c.interferometer_b, k), 1e-12);
  EXPECT_GE(truncation_tail(c.interferometer_a, c.interferometer_b, k - 1), 1e-12);
  // Loss shortens the needed truncation.
  const auto lossy = preset("paper-experiment");
  EXPECT_LT(lossy.turns(), c.turns());
}

// Power leaving one arm after more than K turns, summed term by term.
double emitted_beyond(const InterferometerSpec& s, int k) {
  const double r1 = s.coupler1.r, t1 = s.coupler1.t, r2 = s.coupler2.r, t2 = s.coupler2.t;
  const double g2 = 1.0 - s.turn_loss;
  double sum = 0.0;
  for (int m = k + 1; m < 20000; ++m) {
    sum += t1 * t1 * t2 * t2 * std::pow(r1 * r1 * r2 * r2 * g2, m);
    sum += std::pow(t1, 4) * r2 * r2 * std::pow(r1 * r2, 2 * (m - 1)) * std::pow(g2, m);
  }
  return sum;
}

TEST(model, truncation_tail_is_arm_power_beyond_k) {
  InterferometerSpec s;
  s.coupler1 = coupler_from_power(0.7);
  s.coupler2 = coupler_from_power(0.8);
  for (int k : {0, 3, 10}) {
    EXPECT_NEAR(truncation_tail(s, s, k) / 2.0, emitted_beyond(s, k), 1e-13);
  }
  s.turn_loss = 0.1;
  for (int k : {0, 3, 10}) EXPECT_GE(truncation_tail(s, s, k) / 2.0, emitted_beyond(s, k));
}

TEST(model, gate_geometry) {
  const auto c = preset("paper-experiment");
  EXPECT_EQ(c.gate_slots(), 21);
  EXPECT_EQ(c.gate_time_bins(), 20);
  EXPECT_EQ(c.min_gate_peak(), -10);
  EXPECT_EQ(c.max_gate_peak(), 10);
}

TEST(model, invariants_report_field_paths) {
  auto c = preset("fig3-ideal");
  c.interferometer_a.coupler1.r = 1.5;
  EXPECT_EQ(field_of([&] { check_invariants(c); }), "interferometer_a.coupler1.r");

  c = preset("fig3-ideal");
  c.interferometer_b.coupler2.t = 0.9;  // r^2 + t^2 > 1
  EXPECT_EQ(field_of([&] { check_invariants(c); }).rfind("interferometer_b.coupler2", 0), 0u);

  c = preset("fig3-ideal");
  c.source.repetition_period = -1.0;
  EXPECT_EQ(field_of([&] { check_invariants(c); }), "source.repetition_period");

  c = preset("fig3-ideal");
  c.detectors[1].efficiency = 1.2;
  EXPECT_FALSE(field_of([&] { check_invariants(c); }).empty());

  c = preset("fig3-ideal");
  c.gate.zero_slot = 40;
  EXPECT_EQ(field_of([&] { check_invariants(c); }), "gate.zero_slot");
}

TEST(model, warnings_are_non_fatal) {
  const auto d1 = validate_config(load_raw_config("lossless-d1"));
  ASSERT_EQ(d1.warnings.size(), 1u);
  EXPECT_NE(d1.warnings[0].find("no inter-bin interference"), std::string::npos);

  auto raw = load_raw_config("fig3-ideal");
  apply_overrides(raw, {"source.pair_probability=0.01"});
  const auto v = validate_config(raw);
  ASSERT_EQ(v.warnings.size(), 1u);
  EXPECT_NE(v.warnings[0].find("D * p"), std::string::npos);
}

TEST(model, multi_pair_rate_is_an_error) {
  auto raw = load_raw_config("paper-experiment");
  apply_overrides(raw, {"rates.pair_rate=1 GHz"});
  EXPECT_THROW(validate_config(raw), ValidationError);
}

TEST(model, apply_noise_overrides_losses_and_contrast) {
  const auto c = preset("fig3-ideal");
  NoiseSpec n;
  n.turn_loss_a = 0.05;
  n.turn_loss_b = 0.02;
  n.pol_contrast_per_turn = 0.97;
  n.phase_noise_fwhm = 0.3;
  const auto d = apply_noise(c, n);
  EXPECT_EQ(d.interferometer_a.turn_loss, 0.05);
  EXPECT_EQ(d.interferometer_b.turn_loss, 0.02);
  EXPECT_EQ(d.interferometer_a.pol_contrast_per_turn, 0.97);
  EXPECT_EQ(d.phase_noise_fwhm, 0.3);
  EXPECT_EQ(noise_from(d), n);
  n.turn_loss_a = 1.0;
  EXPECT_THROW(apply_noise(c, n), ValidationError);
}

TEST(model, rate_chain_from_config) {
  const auto c = preset("paper-experiment");
  const auto r = rate_chain_from(c);
  EXPECT_EQ(r.pair_rate_into_fibers, 430e3);
  EXPECT_EQ(r.transmission_a_db, -14.0);
  EXPECT_EQ(r.efficiency_da, 0.45);
}
