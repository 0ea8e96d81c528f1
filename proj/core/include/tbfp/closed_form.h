#pragma once

#include <stdexcept>
#include <vector>

#include "tbfp/amplitudes.h"
#include "tbfp/model.h"

namespace tbfp {

class DivergenceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Coupler amplitudes of both analyzers and the phase sum, for the lossless
/// unbounded-train expressions.
struct ClosedFormParams {
  double t1a = 1.0, r1a = 0.0, t2a = 1.0, r2a = 0.0;
  double t1b = 1.0, r1b = 0.0, t2b = 1.0, r2b = 0.0;
  double phase_sum = 0.0;

  /// r2a r2b r1a r1b.
  double loop_gain() const;
  static ClosedFormParams from_config(const ExperimentConfig& config);
  /// All eight couplers with power reflectance R and no loss.
  static ClosedFormParams symmetric(double reflectance, double phase_sum = 0.0);
};

/// Peak probabilities are only defined up to a common factor; callers
/// should compare ratios and normalized shapes.
struct ProportionalValue {
  double value = 0.0;
  bool proportional = true;
};

/// Coincidence peak n between D_a and D_b.
ProportionalValue p_peak(int n, const ClosedFormParams& params);

/// Coincidence peak n between D_a and the control detector D_b'.
ProportionalValue p_prime_peak(int n, const ClosedFormParams& params);

struct AiryMetrics {
  double fringe_contrast = 1.0;
  double coefficient_of_finesse = 0.0;
  double fwhm_phase = kTwoPi;
};

AiryMetrics airy_metrics(const ClosedFormParams& params);

struct NormalizedCurves {
  PhaseScanCurve db;
  PhaseScanCurve db_prime;
};

/// All-peak sums for both stop detectors, each scaled to its own maximum.
NormalizedCurves normalized_curves(const ClosedFormParams& params, const std::vector<double>& phase_grid);

/// Half-maximum full width of a peaked curve, by linear interpolation
/// around the maximum; treats the grid as periodic over 2 pi.
double curve_fwhm(const PhaseScanCurve& curve);

}  // namespace tbfp
