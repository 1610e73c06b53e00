#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "hemo/core/types.hpp"

namespace hemo::sigproc {

// Bandpass specification. Filtering is performed spectrally (reflection
// padding + FFT), so the output is zero-phase by construction; with
// zero_phase=true the applied magnitude is the forward-backward (squared)
// Butterworth response, otherwise a single pass.
struct FilterSpec {
  double low_hz = 0.5;
  double high_hz = 10.0;
  int order = 4;
  bool zero_phase = true;

  void validate(double fs = kFsHz) const;
};

// Butterworth bandpass transmission (amplitude gain) at frequency f for this
// spec. Exposed for tests and for noise-shaping diagnostics.
double filter_gain(const FilterSpec& spec, double f_hz);

Eigen::VectorXd bandpass(const Eigen::VectorXd& x, const FilterSpec& spec,
                         double fs = kFsHz);
WaveformSegment bandpass(const WaveformSegment& seg, const FilterSpec& spec);

struct StreamSegment {
  double t0_s = 0.0;
  WaveformSegment seg;
};

// Non-overlapping consecutive windows; the trailing remainder is discarded.
std::vector<StreamSegment> segment_stream(const Eigen::VectorXd& samples,
                                          WaveKind kind, double fs = kFsHz,
                                          double seg_seconds = kSegmentSeconds);

// False iff the segment contains NaN/Inf, is constant (peak-to-peak < 1e-6),
// or is an APW with samples outside [10, 300] mmHg.
bool quality_check(const WaveformSegment& seg);

inline constexpr double kApwMinMmhg = 10.0;
inline constexpr double kApwMaxMmhg = 300.0;

// Affine map recorded by normalization: x = offset + scale * x_norm.
struct NormScale {
  double offset = 0.0;
  double scale = 1.0;
};

// Min-max scaling to [0, 1]. Throws on constant input.
std::pair<Eigen::VectorXd, NormScale> normalize_segment(const Eigen::VectorXd& x);
Eigen::VectorXd denormalize_segment(const Eigen::VectorXd& x_norm, const NormScale& s);

// Causal exponential moving average, alpha = 2 / (window + 1), y_0 = x_0.
std::vector<double> ema_smooth(const std::vector<double>& series, int window = 16);

}  // namespace hemo::sigproc
