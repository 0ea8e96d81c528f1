#include "tbfp/closed_form.h"

#include <algorithm>
#include <cmath>
#include <complex>

namespace tbfp {

double ClosedFormParams::loop_gain() const { return r2a * r2b * r1a * r1b; }

ClosedFormParams ClosedFormParams::from_config(const ExperimentConfig& config) {
  const auto& a = config.interferometer_a;
  const auto& b = config.interferometer_b;
  ClosedFormParams p;
  p.t1a = a.coupler1.t;
  p.r1a = a.coupler1.r;
  p.t2a = a.coupler2.t;
  p.r2a = a.coupler2.r;
  p.t1b = b.coupler1.t;
  p.r1b = b.coupler1.r;
  p.t2b = b.coupler2.t;
  p.r2b = b.coupler2.r;
  p.phase_sum = a.phase + b.phase - config.source.pump_phase_step;
  return p;
}

ClosedFormParams ClosedFormParams::symmetric(double reflectance, double phase_sum) {
  const double r = std::sqrt(reflectance);
  const double t = std::sqrt(1.0 - reflectance);
  return ClosedFormParams{t, r, t, r, t, r, t, r, phase_sum};
}

namespace {

void require_convergent(const ClosedFormParams& p) {
  const double rho = p.loop_gain();
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw DivergenceError("loop gain r2a r2b r1a r1b must lie in [0, 1)");
  }
}

// |1 - rho exp(i Phi)|^2 written without cancellation near resonance.
double airy_denominator(double rho, double phase_sum) {
  const double s = std::sin(0.5 * phase_sum);
  return (1.0 - rho) * (1.0 - rho) + 4.0 * rho * s * s;
}

}  // namespace

ProportionalValue p_peak(int n, const ClosedFormParams& p) {
  require_convergent(p);
  const double head = p.t1a * p.t1b * p.t2a * p.t2b;
  const double p0 = head * head / airy_denominator(p.loop_gain(), p.phase_sum);
  if (n == 0) return {p0};
  if (n < 0) return {std::pow(p.r2a * p.r1a, 2 * -n) * p0};
  return {std::pow(p.r2b * p.r1b, 2 * n) * p0};
}

ProportionalValue p_prime_peak(int n, const ClosedFormParams& p) {
  require_convergent(p);
  const double rho = p.loop_gain();
  if (n >= 1) {
    const double head = p.t1a * p.t2a * p.t1b * p.t1b * p.r2b;
    const double p1 = head * head / airy_denominator(rho, p.phase_sum);
    return {std::pow(p.r2b * p.r1b, 2 * (n - 1)) * p1};
  }
  // (t1a t2a / r1b) [-r1b^2 + t1b^2 rho e / (1 - rho e)] with the 1/r1b
  // carried into the sum so that r1b = 0 stays finite. Every extra turn of
  // photon a multiplies the whole sum by r2a r1a.
  const std::complex<double> e = std::polar(1.0, p.phase_sum);
  const std::complex<double> amplitude =
      p.t1a * p.t2a *
      (-p.r1b + p.t1b * p.t1b * p.r2a * p.r2b * p.r1a * e / (1.0 - rho * e));
  const double p0 = std::norm(amplitude);
  if (n == 0) return {p0};
  return {std::pow(p.r2a * p.r1a, 2 * -n) * p0};
}

AiryMetrics airy_metrics(const ClosedFormParams& params) {
  require_convergent(params);
  const double rho = params.loop_gain();
  AiryMetrics m;
  m.fringe_contrast = (1.0 + rho) * (1.0 + rho) / ((1.0 - rho) * (1.0 - rho));
  m.coefficient_of_finesse = 4.0 * rho / ((1.0 - rho) * (1.0 - rho));
  const double threshold = 3.0 - 2.0 * std::sqrt(2.0);
  if (rho > threshold) {
    m.fwhm_phase = 4.0 * std::asin((1.0 - rho) / (2.0 * std::sqrt(rho)));
  }
  return m;
}

NormalizedCurves normalized_curves(const ClosedFormParams& params, const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("phase_grid", "must not be empty");
  require_convergent(params);
  const double qa = std::pow(params.r2a * params.r1a, 2);
  const double qb = std::pow(params.r2b * params.r1b, 2);
  NormalizedCurves out;
  out.db.channel = StopChannel::db;
  out.db_prime.channel = StopChannel::db_prime;
  out.db.phase = grid;
  out.db_prime.phase = grid;
  for (double phi : grid) {
    ClosedFormParams p = params;
    p.phase_sum = phi;
    // Geometric sums over the wings of both histograms.
    const double db = p_peak(0, p).value * (1.0 + qa / (1.0 - qa) + qb / (1.0 - qb));
    const double dbp = p_prime_peak(0, p).value * (1.0 + qa / (1.0 - qa)) +
                       p_prime_peak(1, p).value / (1.0 - qb);
    out.db.value.push_back(db);
    out.db_prime.value.push_back(dbp);
  }
  for (auto* curve : {&out.db, &out.db_prime}) {
    const double peak = *std::max_element(curve->value.begin(), curve->value.end());
    if (peak > 0.0) {
      for (auto& v : curve->value) v /= peak;
    }
  }
  return out;
}

double curve_fwhm(const PhaseScanCurve& curve) {
  const auto n = curve.value.size();
  if (n < 3) throw ValidationError("curve", "needs at least three points");
  const std::size_t top = curve.argmax();
  const double half = 0.5 * curve.value[top];
  const double step = curve.phase[1] - curve.phase[0];
  auto crossing = [&](int direction) {
    for (std::size_t s = 1; s < n; ++s) {
      const std::size_t i = (top + n + direction * static_cast<long>(s - 1)) % n;
      const std::size_t j = (top + n + direction * static_cast<long>(s)) % n;
      if (curve.value[j] <= half) {
        const double frac = (curve.value[i] - half) / (curve.value[i] - curve.value[j]);
        return (static_cast<double>(s - 1) + frac) * step;
      }
    }
    return kPi;
  };
  return std::min(kTwoPi, crossing(+1) + crossing(-1));
}

}  // namespace tbfp
