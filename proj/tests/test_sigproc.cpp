#include <doctest.h>

#include <cmath>
#include <numbers>

#include "hemo/core/rng.hpp"
#include "hemo/sigproc/sigproc.hpp"

using namespace hemo;
using sigproc::FilterSpec;

namespace {

Eigen::VectorXd sine(double f_hz, int n, double fs = kFsHz, double amp = 1.0) {
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) {
    x[i] = amp * std::sin(2.0 * std::numbers::pi * f_hz * i / fs);
  }
  return x;
}

double rms(const Eigen::VectorXd& x) {
  return std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("segment_stream windowing") {
  Eigen::VectorXd x(2500);
  for (int i = 0; i < 2500; ++i) x[i] = i;
  const auto segs = sigproc::segment_stream(x, WaveKind::Ppg);
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].t0_s == 0.0);
  CHECK(segs[1].t0_s == 8.0);
  CHECK(segs[0].seg.samples[0] == 0.0f);
  CHECK(segs[1].seg.samples[0] == 1000.0f);

  CHECK(sigproc::segment_stream(x.head(999), WaveKind::Ppg).empty());
  const auto one = sigproc::segment_stream(x.head(1000), WaveKind::Ppg);
  REQUIRE(one.size() == 1);
  CHECK((one[0].seg.as_double() - x.head(1000)).cwiseAbs().maxCoeff() == 0.0);

  // Concatenating outputs reproduces the input prefix.
  Eigen::VectorXd cat(2000);
  cat << segs[0].seg.as_double(), segs[1].seg.as_double();
  CHECK((cat - x.head(2000)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(sigproc::segment_stream(x, WaveKind::Ppg, 125.0, 8.0001),
                  std::invalid_argument);
}

TEST_CASE("bandpass spectral behavior") {
  const FilterSpec spec;  // 0.5-10 Hz, order 4, zero phase

  // Constant offset is removed to below 1%.
  const Eigen::VectorXd dc = Eigen::VectorXd::Constant(1000, 80.0);
  CHECK(sigproc::bandpass(dc, spec).cwiseAbs().maxCoeff() < 0.8);

  // In-band tone passes within 5% RMS (measured away from the edges).
  const Eigen::VectorXd inband = sine(2.0, 1000);
  const Eigen::VectorXd y_in = sigproc::bandpass(inband, spec);
  CHECK(rms(y_in.segment(100, 800)) ==
        doctest::Approx(rms(inband.segment(100, 800))).epsilon(0.05));

  // Out-of-band tone drops below 10% RMS.
  const Eigen::VectorXd out = sine(30.0, 1000);
  CHECK(rms(sigproc::bandpass(out, spec)) < 0.1 * rms(out));

  // >= 20 dB one octave outside the band on both sides.
  CHECK(sigproc::filter_gain(spec, 20.0) < 0.1);
  CHECK(sigproc::filter_gain(spec, 0.25) < 0.1);
  CHECK(sigproc::filter_gain(spec, std::sqrt(0.5 * 10.0)) ==
        doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(sigproc::bandpass(dc, FilterSpec{10.0, 0.5, 4, true}),
                  std::invalid_argument);
  CHECK_THROWS_AS(sigproc::bandpass(dc, FilterSpec{0.5, 80.0, 4, true}),
                  std::invalid_argument);
}

TEST_CASE("bandpass is linear") {
  Rng rng(3);
  Eigen::VectorXd x(1000), y(1000);
  for (int i = 0; i < 1000; ++i) {
    x[i] = rng.normal();
    y[i] = rng.normal();
  }
  const FilterSpec spec;
  const Eigen::VectorXd lhs = sigproc::bandpass(2.0 * x + 3.0 * y, spec);
  const Eigen::VectorXd rhs =
      2.0 * sigproc::bandpass(x, spec) + 3.0 * sigproc::bandpass(y, spec);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-6 * lhs.cwiseAbs().maxCoeff());
}

TEST_CASE("quality_check") {
  WaveformSegment apw = WaveformSegment::from_double(
      (sine(1.2, 1000).array() * 20.0 + 90.0).matrix(), WaveKind::Apw);
  CHECK(sigproc::quality_check(apw));

  WaveformSegment with_nan = apw;
  with_nan.samples[500] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(sigproc::quality_check(with_nan));

  WaveformSegment high = apw;
  high.samples[10] = 320.0f;
  CHECK_FALSE(sigproc::quality_check(high));

  WaveformSegment low = apw;
  low.samples[10] = 5.0f;
  CHECK_FALSE(sigproc::quality_check(low));

  WaveformSegment flat =
      WaveformSegment::from_double(Eigen::VectorXd::Constant(1000, 0.5), WaveKind::Ppg);
  CHECK_FALSE(sigproc::quality_check(flat));

  // PPG has no absolute bounds.
  WaveformSegment ppg = WaveformSegment::from_double(
      (sine(1.2, 1000).array() * 400.0).matrix(), WaveKind::Ppg);
  CHECK(sigproc::quality_check(ppg));
}

TEST_CASE("normalize_segment") {
  Eigen::VectorXd x(3);
  x << 100.0, 150.0, 200.0;
  const auto [y, sc] = sigproc::normalize_segment(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.5);
  CHECK(y[2] == 1.0);
  CHECK(sc.offset == 100.0);
  CHECK(sc.scale == 100.0);
  const Eigen::VectorXd back = sigproc::denormalize_segment(y, sc);
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(sigproc::normalize_segment(Eigen::VectorXd::Constant(5, 2.0)),
                  std::invalid_argument);
}

TEST_CASE("ema_smooth recurrence") {
  const std::vector<double> constant(10, 3.5);
  for (double v : sigproc::ema_smooth(constant, 16)) {
    CHECK(v == doctest::Approx(3.5).epsilon(1e-15));
  }

  std::vector<double> ramp{0.0, 1.0, 2.0, 3.0};
  CHECK(sigproc::ema_smooth(ramp, 1) == ramp);

  const auto y = sigproc::ema_smooth({0.0, 1.0}, 16);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(2.0 / 17.0).epsilon(1e-12));

  // Bounded by [min, max] and monotone-trend preserving.
  Rng rng(9);
  std::vector<double> series(200);
  for (auto& v : series) v = rng.uniform(-2.0, 5.0);
  const auto s = sigproc::ema_smooth(series, 16);
  const double lo = *std::min_element(series.begin(), series.end());
  const double hi = *std::max_element(series.begin(), series.end());
  for (double v : s) {
    CHECK(v >= lo);
    CHECK(v <= hi);
  }
  std::vector<double> inc(50);
  for (int i = 0; i < 50; ++i) inc[static_cast<std::size_t>(i)] = i * i;
  const auto si = sigproc::ema_smooth(inc, 8);
  for (std::size_t i = 1; i < si.size(); ++i) CHECK(si[i] >= si[i - 1]);

  CHECK_THROWS_AS(sigproc::ema_smooth({}, 16), std::invalid_argument);
  CHECK_THROWS_AS(sigproc::ema_smooth({1.0}, 0), std::invalid_argument);
}
