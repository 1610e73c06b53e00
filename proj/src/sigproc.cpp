#include "hemo/sigproc/sigproc.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>
#include <unsupported/Eigen/FFT>

namespace hemo::sigproc {

void FilterSpec::validate(double fs) const {
  if (!(low_hz > 0.0) || !(high_hz > low_hz) || !(high_hz < fs / 2.0)) {
    throw std::invalid_argument("filter spec requires 0 < low < high < fs/2");
  }
  if (order < 1) throw std::invalid_argument("filter order must be >= 1");
}

double filter_gain(const FilterSpec& spec, double f_hz) {
  if (f_hz <= 0.0) return 0.0;
  // Analog Butterworth bandpass prototype magnitude. X = 0 at the geometric
  // band center, +-1 at the corners.
  const double x = (f_hz * f_hz - spec.low_hz * spec.high_hz) /
                   ((spec.high_hz - spec.low_hz) * f_hz);
  const double mag2 = 1.0 / (1.0 + std::pow(x * x, spec.order));
  const double single = std::sqrt(mag2);
  return spec.zero_phase ? mag2 : single;
}

Eigen::VectorXd bandpass(const Eigen::VectorXd& x, const FilterSpec& spec,
                         double fs) {
  spec.validate(fs);
  const int n = static_cast<int>(x.size());
  if (n < 2) throw std::invalid_argument("bandpass: input too short");

  // Reflection padding long enough for the low-frequency corner transient.
  const int pad = std::min(n - 1, 500);
  const int m = n + 2 * pad;
  std::vector<double> buf(static_cast<std::size_t>(m));
  for (int i = 0; i < pad; ++i) buf[i] = x[pad - i];
  for (int i = 0; i < n; ++i) buf[pad + i] = x[i];
  for (int i = 0; i < pad; ++i) buf[pad + n + i] = x[n - 2 - i];

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec_bins;
  fft.fwd(spec_bins, buf);
  for (int k = 0; k < m; ++k) {
    const double f = std::min(k, m - k) * fs / m;
    spec_bins[static_cast<std::size_t>(k)] *= filter_gain(spec, f);
  }
  std::vector<double> out;
  fft.inv(out, spec_bins);

  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = out[static_cast<std::size_t>(pad + i)];
  return y;
}

WaveformSegment bandpass(const WaveformSegment& seg, const FilterSpec& spec) {
  WaveformSegment out = WaveformSegment::from_double(
      bandpass(seg.as_double(), spec, seg.fs_hz), seg.kind);
  out.fs_hz = seg.fs_hz;
  return out;
}

std::vector<StreamSegment> segment_stream(const Eigen::VectorXd& samples,
                                          WaveKind kind, double fs,
                                          double seg_seconds) {
  const double exact = fs * seg_seconds;
  const int win = static_cast<int>(std::lround(exact));
  if (std::abs(exact - win) > 1e-9 || win < 1) {
    throw std::invalid_argument("fs * seg_seconds must be a positive integer");
  }
  std::vector<StreamSegment> out;
  const int n_windows = static_cast<int>(samples.size()) / win;
  out.reserve(static_cast<std::size_t>(n_windows));
  for (int w = 0; w < n_windows; ++w) {
    StreamSegment s;
    s.t0_s = w * seg_seconds;
    s.seg = WaveformSegment::from_double(samples.segment(w * win, win), kind);
    s.seg.fs_hz = static_cast<float>(fs);
    out.push_back(std::move(s));
  }
  return out;
}

bool quality_check(const WaveformSegment& seg) {
  if (seg.size() == 0) return false;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < seg.size(); ++i) {
    const double v = seg.samples[i];
    if (!std::isfinite(v)) return false;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-6) return false;
  if (seg.kind == WaveKind::Apw && (lo < kApwMinMmhg || hi > kApwMaxMmhg)) {
    return false;
  }
  return true;
}

std::pair<Eigen::VectorXd, NormScale> normalize_segment(const Eigen::VectorXd& x) {
  if (x.size() == 0) throw std::invalid_argument("normalize: empty segment");
  const double lo = x.minCoeff();
  const double hi = x.maxCoeff();
  if (!(hi - lo > 0.0)) {
    throw std::invalid_argument("normalize: constant segment");
  }
  NormScale s{lo, hi - lo};
  return {(x.array() - lo) / (hi - lo), s};
}

Eigen::VectorXd denormalize_segment(const Eigen::VectorXd& x_norm,
                                    const NormScale& s) {
  return s.offset + (x_norm.array() * s.scale).matrix().array();
}

std::vector<double> ema_smooth(const std::vector<double>& series, int window) {
  if (series.empty()) throw std::invalid_argument("ema_smooth: empty series");
  if (window < 1) throw std::invalid_argument("ema_smooth: window must be >= 1");
  const double alpha = 2.0 / (window + 1.0);
  std::vector<double> out(series.size());
  out[0] = series[0];
  for (std::size_t t = 1; t < series.size(); ++t) {
    out[t] = alpha * series[t] + (1.0 - alpha) * out[t - 1];
  }
  return out;
}

}  // namespace hemo::sigproc
