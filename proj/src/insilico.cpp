#include "hemo/insilico/insilico.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <unsupported/Eigen/FFT>

#include "hemo/core/rng.hpp"

namespace hemo::insilico {

namespace {

// Beat shape constants. The template is: half-sine systolic upstroke of
// width pft peaking at 1, a brief end-systolic fall to a shoulder level
// h(sv), then an exponential runoff (tau = svr * C) closing at 0 one period
// later, with a dicrotic wave of relative amplitude a_d(sv) superposed
// early in the runoff. Stroke volume shapes the waveform itself (shoulder
// level and reflected-wave size), not only its scale, which keeps it
// identifiable from amplitude-normalized segments.
constexpr double kShoulderLo = 0.52;        // end-systolic level at sv = 40
constexpr double kShoulderHi = 0.70;        // end-systolic level at sv = 130
constexpr double kEsFallFrac = 0.12;        // end-systolic fall, fraction of period
constexpr double kNotchWidthFrac = 0.18;    // dicrotic wave width, fraction of period
constexpr double kNotchAmpLo = 0.10;
constexpr double kNotchAmpHi = 0.30;

double sv_unit(double sv) { return (sv - 40.0) / 90.0; }

double shoulder_level(double sv) {
  return kShoulderLo + (kShoulderHi - kShoulderLo) * sv_unit(sv);
}

// Pulse pressure from stroke volume against effective arterial compliance.
constexpr double kPulseComplianceFactor = 1.4;

// Mean pressure: monotone compressed form of the conventional relation
// MAP = CO * SVR / 80. The raw relation spans far outside plausible
// pressures over the uniform prior box; the power compression keeps the
// default prior's beat extremes inside the anomalous-BP acceptance ranges
// while preserving strict monotonicity in hr*sv*svr.
constexpr double kMapRefMmhg = 90.0;
constexpr double kMapRawRef = 158.0;  // raw MAP at the prior box center
constexpr double kMapExponent = 0.4;

// Beat-to-beat variability (heart rate, ejection width, amplitude): real
// rhythms are not strictly periodic, and the induced spread is what keeps
// the parameter posteriors at a finite, learnable width.
constexpr double kHrvSigma = 0.025;      // per-beat period jitter
constexpr double kPftJitterSigma = 0.02; // per-beat upstroke-width jitter
constexpr double kAmpJitterSigma = 0.02; // per-beat amplitude jitter

double beat_shape(double u, double period, double pft, const ParamVector& theta) {
  const double t_es = pft + kEsFallFrac * period;
  const double shoulder = shoulder_level(theta.sv);
  if (u <= pft) {
    return std::sin(0.5 * std::numbers::pi * u / pft);
  }
  if (u <= t_es) {
    const double f = (u - pft) / (t_es - pft);
    return shoulder + (1.0 - shoulder) * std::cos(0.5 * std::numbers::pi * f);
  }
  const double tau = windkessel_tau_s(theta.svr);
  const double e_close = std::exp(-(period - t_es) / tau);
  const double s_inf = -shoulder * e_close / (1.0 - e_close);
  double s = s_inf + (shoulder - s_inf) * std::exp(-(u - t_es) / tau);
  const double w_n = kNotchWidthFrac * period;
  if (u < t_es + w_n) {
    const double a_d = kNotchAmpLo + (kNotchAmpHi - kNotchAmpLo) * sv_unit(theta.sv);
    const double ph = std::numbers::pi * (u - t_es) / w_n;
    s += a_d * std::sin(ph) * std::sin(ph);
  }
  return s;
}

double clamped_normal(Rng& rng, double sigma) {
  return std::clamp(sigma * rng.normal(), -2.0 * sigma, 2.0 * sigma);
}

}  // namespace

void PriorSpec::validate() const {
  for (int i = 0; i < kNumParams; ++i) {
    const auto r = range(i);
    if (!(r[0] > 0.0) || !(r[1] > r[0])) {
      throw std::invalid_argument("prior range invalid for parameter " +
                                  std::string(param_name(i)));
    }
  }
}

bool PriorSpec::contains(const ParamVector& theta) const {
  const Eigen::Vector4d v = theta.to_vector();
  for (int i = 0; i < kNumParams; ++i) {
    const auto r = range(i);
    if (v[i] < r[0] || v[i] > r[1]) return false;
  }
  return true;
}

std::array<double, 2> PriorSpec::range(int param) const {
  switch (param) {
    case 0: return hr;
    case 1: return sv;
    case 2: return pft;
    case 3: return svr;
    default: throw std::invalid_argument("parameter index out of range");
  }
}

std::vector<ParamVector> sample_prior(int n, const PriorSpec& prior,
                                      std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_prior: n must be >= 1");
  prior.validate();
  Rng rng(seed);
  std::vector<ParamVector> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ParamVector t;
    t.hr = rng.uniform(prior.hr[0], prior.hr[1]);
    t.sv = rng.uniform(prior.sv[0], prior.sv[1]);
    t.pft = rng.uniform(prior.pft[0], prior.pft[1]);
    t.svr = rng.uniform(prior.svr[0], prior.svr[1]);
    out.push_back(t);
  }
  return out;
}

double target_map_mmhg(const ParamVector& theta) {
  const double raw = theta.map_mmhg();
  return kMapRefMmhg * std::pow(raw / kMapRawRef, kMapExponent);
}

Eigen::VectorXd synth_apw(const ParamVector& theta, int n_samples,
                          std::uint64_t shape_seed) {
  if (n_samples < 1) throw std::invalid_argument("synth_apw: empty output");
  const double mean_period = 60.0 / theta.hr;
  const double dt = 1.0 / kFsHz;
  const double pp = theta.sv / (kPulseComplianceFactor * kCompliance);
  Rng rng(derive_seed(shape_seed, "apw.beats"));

  Eigen::VectorXd s(n_samples);
  // Beats are laid out sequentially; the grid starts a random fraction of
  // one period into the first beat so segments are never beat-aligned.
  double beat_start = -rng.uniform() * mean_period;
  int i = 0;
  while (i < n_samples) {
    const double period = mean_period * (1.0 + clamped_normal(rng, kHrvSigma));
    double pft = theta.pft * (1.0 + clamped_normal(rng, kPftJitterSigma));
    pft = std::min(pft, 0.6 * period);
    const double amp = 1.0 + clamped_normal(rng, kAmpJitterSigma);
    while (i < n_samples && i * dt < beat_start + period) {
      s[i] = amp * beat_shape(i * dt - beat_start, period, pft, theta);
      ++i;
    }
    beat_start += period;
  }
  const double base = target_map_mmhg(theta) - pp * s.mean();
  return (base + pp * s.array()).matrix();
}

WaveformSegment simulate_apw(const ParamVector& theta, std::uint64_t seed) {
  static const PriorSpec support;
  if (!support.contains(theta)) {
    throw std::invalid_argument("simulate_apw: theta outside prior support");
  }
  return WaveformSegment::from_double(
      synth_apw(theta, kSegmentSamples, derive_seed(seed, "apw.shape")),
      WaveKind::Apw);
}

Eigen::VectorXd windkessel_response(const Eigen::VectorXd& drive, double tau_s,
                                    double fs) {
  if (drive.size() == 0) throw std::invalid_argument("windkessel: empty drive");
  const double alpha = std::exp(-1.0 / (fs * tau_s));
  Eigen::VectorXd p(drive.size());
  p[0] = drive[0];  // steady-state start, keeps the response affine in the drive
  for (int i = 1; i < drive.size(); ++i) {
    p[i] = alpha * p[i - 1] + (1.0 - alpha) * drive[i - 1];
  }
  return p;
}

WaveformSegment simulate_ppg_windkessel(const ParamVector& theta,
                                        const WaveformSegment& apw) {
  const Eigen::VectorXd p =
      windkessel_response(apw.as_double(), windkessel_tau_s(theta.svr), apw.fs_hz);
  const double lo = p.minCoeff();
  const double hi = p.maxCoeff();
  Eigen::VectorXd out;
  if (hi - lo < 1e-12) {
    out = Eigen::VectorXd::Zero(p.size());
  } else {
    out = (p.array() - lo) / (hi - lo);
  }
  WaveformSegment seg = WaveformSegment::from_double(out, WaveKind::Ppg);
  seg.fs_hz = apw.fs_hz;
  return seg;
}

Eigen::VectorXd add_measurement_noise(const Eigen::VectorXd& wave,
                                      const NoiseSpec& noise) {
  if (noise.sigma_gauss < 0.0 || noise.sigma_red < 0.0) {
    throw std::invalid_argument("noise sigmas must be >= 0");
  }
  Eigen::VectorXd out = wave;
  const int n = static_cast<int>(wave.size());
  if (noise.sigma_gauss > 0.0) {
    Rng rng(derive_seed(noise.seed, "noise.gauss"));
    for (int i = 0; i < n; ++i) out[i] += noise.sigma_gauss * rng.normal();
  }
  if (noise.sigma_red > 0.0 && n > 1) {
    Rng rng(derive_seed(noise.seed, "noise.red"));
    std::vector<double> white(static_cast<std::size_t>(n));
    for (auto& w : white) w = rng.normal();
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> bins;
    fft.fwd(bins, white);
    for (int k = 0; k < n; ++k) {
      const double f = std::min(k, n - k) * kFsHz / n;
      bins[static_cast<std::size_t>(k)] *=
          (k == 0) ? 0.0 : std::pow(f, noise.red_exponent / 2.0);
    }
    std::vector<double> shaped;
    fft.inv(shaped, bins);
    Eigen::Map<Eigen::VectorXd> red(shaped.data(), n);
    const double sd = std::sqrt((red.array() - red.mean()).square().sum() / n);
    if (sd > 0.0) out += (noise.sigma_red / sd) * red;
  }
  return out;
}

WaveformSegment add_measurement_noise(const WaveformSegment& wave,
                                      const NoiseSpec& noise) {
  WaveformSegment out = WaveformSegment::from_double(
      add_measurement_noise(wave.as_double(), noise), wave.kind);
  out.fs_hz = wave.fs_hz;
  return out;
}

std::vector<LabeledSimRecord> filter_anomalous_bp(
    const std::vector<LabeledSimRecord>& records, BpRange sbp, BpRange dbp) {
  std::vector<LabeledSimRecord> kept;
  kept.reserve(records.size());
  for (const auto& r : records) {
    if (r.apw.size() == 0) {
      throw std::invalid_argument("filter_anomalous_bp: record without APW");
    }
    const double systolic = r.apw.samples.maxCoeff();
    const double diastolic = r.apw.samples.minCoeff();
    if (systolic >= sbp.lo && systolic <= sbp.hi && diastolic >= dbp.lo &&
        diastolic <= dbp.hi) {
      kept.push_back(r);
    }
  }
  return kept;
}

LabeledSimRecord make_record(const ParamVector& theta, std::uint64_t record_seed,
                             const NoiseSpec& noise,
                             const sigproc::FilterSpec& filter,
                             bool with_windkessel_ppg) {
  LabeledSimRecord rec;
  rec.theta = theta;
  rec.seed = record_seed;

  const WaveformSegment clean = simulate_apw(theta, record_seed);
  NoiseSpec rec_noise = noise;
  rec_noise.seed = derive_seed(record_seed, "record.noise");
  const Eigen::VectorXd noisy = add_measurement_noise(clean.as_double(), rec_noise);

  // The band stops below 0.5 Hz, which would erase absolute pressure; the
  // segment mean is restored so systolic/diastolic levels stay calibrated.
  Eigen::VectorXd conditioned = sigproc::bandpass(noisy, filter, kFsHz);
  conditioned.array() += noisy.mean();
  rec.apw = WaveformSegment::from_double(conditioned, WaveKind::Apw);

  if (with_windkessel_ppg) {
    const WaveformSegment raw_ppg = simulate_ppg_windkessel(
        theta, WaveformSegment::from_double(noisy, WaveKind::Apw));
    rec.ppg_wk = sigproc::bandpass(raw_ppg, filter);
  }
  return rec;
}

std::vector<LabeledSimRecord> build_insilico_dataset(const BuildOptions& opts) {
  if (opts.n < 1) throw std::invalid_argument("build_insilico_dataset: n >= 1");
  opts.prior.validate();
  opts.filter.validate(kFsHz);

  const auto thetas =
      sample_prior(opts.n, opts.prior, derive_seed(opts.seed, "insilico.prior"));
  std::vector<LabeledSimRecord> records(static_cast<std::size_t>(opts.n));

  // Records are independent given their derived seed; generation order does
  // not affect the result, so chunks may run in parallel.
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < opts.n; ++i) {
    const std::uint64_t rec_seed =
        derive_seed(opts.seed, "insilico.record", static_cast<std::uint64_t>(i));
    records[static_cast<std::size_t>(i)] =
        make_record(thetas[static_cast<std::size_t>(i)], rec_seed, opts.noise,
                    opts.filter, opts.with_windkessel_ppg);
  }
  return filter_anomalous_bp(records);
}

}  // namespace hemo::insilico
