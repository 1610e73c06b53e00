#include "hemo/pipeline/benchmark.hpp"

#include <cmath>
#include <numbers>

#include "hemo/core/rng.hpp"

namespace hemo::pipeline {

namespace {

// Extra samples on both sides of a window so delay, smoothing tails and the
// beat phase never clip inside the cropped segment.
constexpr int kMargin = 64;

Eigen::VectorXd gaussian_kernel(double sigma_samples) {
  const int half = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_samples)));
  Eigen::VectorXd k(2 * half + 1);
  for (int i = -half; i <= half; ++i) {
    k[i + half] = std::exp(-0.5 * (i / sigma_samples) * (i / sigma_samples));
  }
  return k / k.sum();
}

}  // namespace

SubjectTransfer draw_transfer(const TransferRanges& r, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "transfer"));
  SubjectTransfer t;
  t.gain = rng.uniform(r.gain[0], r.gain[1]);
  t.delay_s = rng.uniform(r.delay_s[0], r.delay_s[1]);
  t.beta = rng.uniform(r.nl_beta[0], r.nl_beta[1]);
  t.gamma = rng.uniform(r.nl_gamma[0], r.nl_gamma[1]);
  t.smooth_s = rng.uniform(r.smooth_s[0], r.smooth_s[1]);
  t.noise_sigma = rng.uniform(r.noise_sigma[0], r.noise_sigma[1]);
  return t;
}

Eigen::VectorXd apply_transfer(const Eigen::VectorXd& apw_ext,
                               const SubjectTransfer& tr, std::uint64_t noise_seed) {
  const int n = static_cast<int>(apw_ext.size());
  const double delay = tr.delay_s * kFsHz;

  // Fractional delay by linear interpolation, clamped at the left edge
  // (inside the margin, never inside the cropped window).
  Eigen::VectorXd delayed(n);
  for (int i = 0; i < n; ++i) {
    const double s = std::max(0.0, i - delay);
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(n - 1, lo + 1);
    const double w = s - lo;
    delayed[i] = (1.0 - w) * apw_ext[lo] + w * apw_ext[hi];
  }

  // Smooth monotone nonlinearity around a typical pressure operating point.
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    const double u = (delayed[i] - 90.0) / 50.0;
    v[i] = u + tr.beta * std::tanh(tr.gamma * u);
  }

  // Peripheral damping.
  const Eigen::VectorXd kern = gaussian_kernel(tr.smooth_s * kFsHz);
  const int half = (static_cast<int>(kern.size()) - 1) / 2;
  Eigen::VectorXd smoothed(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = -half; j <= half; ++j) {
      const int idx = std::clamp(i + j, 0, n - 1);
      acc += kern[j + half] * v[idx];
    }
    smoothed[i] = acc;
  }

  insilico::NoiseSpec ppg_noise;
  ppg_noise.sigma_gauss = tr.noise_sigma;
  ppg_noise.sigma_red = 0.5 * tr.noise_sigma;
  ppg_noise.seed = derive_seed(noise_seed, "transfer.noise");
  return insilico::add_measurement_noise(tr.gain * smoothed, ppg_noise);
}

ParamVector ParamDrift::at(double t_s) const {
  Eigen::Vector4d v;
  for (int i = 0; i < kNumParams; ++i) {
    v[i] = center[i] +
           amp1[i] * std::sin(2.0 * std::numbers::pi * t_s / period1_s[i] + phase1[i]) +
           amp2[i] * std::sin(2.0 * std::numbers::pi * t_s / period2_s[i] + phase2[i]);
  }
  return ParamVector::from_vector(v);
}

ParamDrift draw_drift(const insilico::PriorSpec& prior, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "drift"));
  ParamDrift d;
  for (int i = 0; i < kNumParams; ++i) {
    const auto r = prior.range(i);
    const double w = r[1] - r[0];
    d.center[i] = rng.uniform(r[0] + 0.2 * w, r[1] - 0.2 * w);
    d.amp1[i] = rng.uniform(0.04, 0.12) * w;
    d.amp2[i] = rng.uniform(0.02, 0.06) * w;
    d.period1_s[i] = rng.uniform(240.0, 600.0);
    d.period2_s[i] = rng.uniform(700.0, 1600.0);
    d.phase1[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    d.phase2[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return d;
}

namespace {

struct GeneratedSegment {
  WaveformSegment apw;
  WaveformSegment ppg;
};

GeneratedSegment generate_segment(const ParamVector& theta,
                                  const SubjectTransfer& transfer,
                                  const insilico::NoiseSpec& apw_noise,
                                  const sigproc::FilterSpec& filter,
                                  std::uint64_t seed) {
  const int ext_n = kSegmentSamples + 2 * kMargin;
  const Eigen::VectorXd clean =
      insilico::synth_apw(theta, ext_n, derive_seed(seed, "apw.shape"));

  insilico::NoiseSpec noise = apw_noise;
  noise.seed = derive_seed(seed, "record.noise");
  const Eigen::VectorXd noisy = insilico::add_measurement_noise(clean, noise);

  // The PPG reads the clean physiology through the subject's transfer and
  // carries its own noise; the APW channel carries the measurement noise.
  const Eigen::VectorXd ppg_ext =
      apply_transfer(clean, transfer, derive_seed(seed, "ppg"));

  const Eigen::VectorXd apw_win = noisy.segment(kMargin, kSegmentSamples);
  Eigen::VectorXd apw_cond = sigproc::bandpass(apw_win, filter, kFsHz);
  apw_cond.array() += apw_win.mean();

  const Eigen::VectorXd ppg_win = ppg_ext.segment(kMargin, kSegmentSamples);
  const Eigen::VectorXd ppg_cond = sigproc::bandpass(ppg_win, filter, kFsHz);

  GeneratedSegment out;
  out.apw = WaveformSegment::from_double(apw_cond, WaveKind::Apw);
  out.ppg = WaveformSegment::from_double(ppg_cond, WaveKind::Ppg);
  return out;
}

std::string subject_name(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
  return buf;
}

}  // namespace

std::vector<SubjectSeries> make_eval_subjects(const BenchmarkSpec& spec,
                                              std::uint64_t seed) {
  std::vector<SubjectSeries> out;
  for (int s = 0; s < spec.n_subjects; ++s) {
    const std::uint64_t subj_seed =
        derive_seed(seed, "bench.subject", static_cast<std::uint64_t>(s));
    const SubjectTransfer transfer = draw_transfer(spec.transfer, subj_seed);
    const ParamDrift drift = draw_drift(spec.prior, subj_seed);

    SubjectSeries series;
    series.subject_id = subject_name("S", s);
    series.records.resize(static_cast<std::size_t>(spec.segments_per_subject));
#pragma omp parallel for schedule(dynamic)
    for (int r = 0; r < spec.segments_per_subject; ++r) {
      const double t = r * kSegmentSeconds;
      const ParamVector theta = drift.at(t);
      const std::uint64_t rec_seed =
          derive_seed(subj_seed, "segment", static_cast<std::uint64_t>(r));
      const GeneratedSegment g = generate_segment(theta, transfer,
                                                  spec.apw_noise, spec.filter,
                                                  rec_seed);
      SeriesRecord rec;
      rec.timestamp_s = t;
      rec.ppg = g.ppg;
      rec.apw = g.apw;
      rec.theta_true = theta;
      series.records[static_cast<std::size_t>(r)] = std::move(rec);
    }
    series.check_invariants();
    out.push_back(std::move(series));
  }
  return out;
}

std::vector<PairedSegment> make_paired_dataset(int n_pairs, int n_pseudo_subjects,
                                               const BenchmarkSpec& spec,
                                               std::uint64_t seed) {
  if (n_pairs < 1 || n_pseudo_subjects < 1) {
    throw std::invalid_argument("make_paired_dataset: bad sizes");
  }
  std::vector<SubjectTransfer> transfers(static_cast<std::size_t>(n_pseudo_subjects));
  for (int s = 0; s < n_pseudo_subjects; ++s) {
    transfers[static_cast<std::size_t>(s)] = draw_transfer(
        spec.transfer, derive_seed(seed, "paired.subject", static_cast<std::uint64_t>(s)));
  }
  const auto thetas = insilico::sample_prior(n_pairs, spec.prior,
                                             derive_seed(seed, "paired.prior"));
  std::vector<PairedSegment> out(static_cast<std::size_t>(n_pairs));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n_pairs; ++i) {
    const int s = i % n_pseudo_subjects;
    const std::uint64_t rec_seed =
        derive_seed(seed, "paired.record", static_cast<std::uint64_t>(i));
    const GeneratedSegment g =
        generate_segment(thetas[static_cast<std::size_t>(i)],
                         transfers[static_cast<std::size_t>(s)], spec.apw_noise,
                         spec.filter, rec_seed);
    PairedSegment p;
    p.apw = g.apw;
    p.ppg = g.ppg;
    p.subject_id = subject_name("P", s);
    out[static_cast<std::size_t>(i)] = std::move(p);
  }
  return out;
}

std::vector<LabeledSimRecord> supervised_records(
    const std::vector<SubjectSeries>& subjects,
    const std::vector<std::string>& include_ids) {
  std::vector<LabeledSimRecord> out;
  for (const auto& s : subjects) {
    if (std::find(include_ids.begin(), include_ids.end(), s.subject_id) ==
        include_ids.end()) {
      continue;
    }
    for (std::size_t r = 0; r < s.records.size(); ++r) {
      if (!s.records[r].theta_true) {
        throw std::invalid_argument("supervised_records: unlabeled series");
      }
      LabeledSimRecord rec;
      rec.theta = *s.records[r].theta_true;
      rec.apw = s.records[r].ppg;  // conditioning slot carries the PPG
      rec.seed = 0;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace hemo::pipeline
