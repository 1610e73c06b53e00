#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <unsupported/Eigen/FFT>

#include "hemo/core/rng.hpp"
#include "hemo/insilico/insilico.hpp"

using namespace hemo;
using insilico::NoiseSpec;
using insilico::PriorSpec;

namespace {

double sample_std(const Eigen::VectorXd& x) {
  return std::sqrt((x.array() - x.mean()).square().sum() /
                   static_cast<double>(x.size()));
}

// Lag of the autocorrelation peak over [lo, hi].
int autocorr_peak_lag(const Eigen::VectorXd& x, int lo, int hi) {
  const Eigen::VectorXd c = x.array() - x.mean();
  int best = lo;
  double best_v = -1e300;
  for (int lag = lo; lag <= hi; ++lag) {
    const int n = static_cast<int>(c.size()) - lag;
    const double v = c.head(n).dot(c.tail(n));
    if (v > best_v) {
      best_v = v;
      best = lag;
    }
  }
  return best;
}

ParamVector mid_theta() { return ParamVector{75.0, 85.0, 0.14, 1200.0}; }

}  // namespace

TEST_CASE("sample_prior support, determinism, LLN") {
  const PriorSpec prior;
  const auto draws = sample_prior(1000, prior, 42);
  REQUIRE(draws.size() == 1000);
  for (const auto& t : draws) {
    CHECK(prior.contains(t));
    CHECK(t.finite_positive());
  }
  const auto again = sample_prior(1000, prior, 42);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    CHECK(draws[i].hr == again[i].hr);
    CHECK(draws[i].svr == again[i].svr);
  }

  const auto big = sample_prior(100000, prior, 7);
  double mean_hr = 0.0;
  for (const auto& t : big) mean_hr += t.hr;
  mean_hr /= static_cast<double>(big.size());
  CHECK(mean_hr == doctest::Approx(0.5 * (45.0 + 160.0)).epsilon(0.01));

  CHECK_THROWS_AS(sample_prior(0, prior, 1), std::invalid_argument);
}

TEST_CASE("simulate_apw periodicity, determinism, support check") {
  ParamVector t = mid_theta();
  t.hr = 60.0;
  const WaveformSegment seg = insilico::simulate_apw(t, 5);
  CHECK(seg.size() == kSegmentSamples);
  // hr = 60 -> 1 s mean period -> autocorrelation peak at lag 125, within
  // the per-beat period variability.
  const int lag = autocorr_peak_lag(seg.as_double(), 60, 190);
  CHECK(std::abs(lag - 125) <= 4);

  const WaveformSegment seg2 = insilico::simulate_apw(t, 5);
  CHECK((seg.samples - seg2.samples).cwiseAbs().maxCoeff() == 0.0f);

  ParamVector bad = t;
  bad.hr = 200.0;
  CHECK_THROWS_AS(insilico::simulate_apw(bad, 5), std::invalid_argument);
}

TEST_CASE("pulse pressure grows strictly with stroke volume") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(77, "pp", seed));
    ParamVector t = mid_theta();
    t.hr = rng.uniform(50.0, 150.0);
    t.pft = rng.uniform(0.09, 0.19);
    t.svr = rng.uniform(800.0, 2000.0);
    double prev = -1.0;
    for (double sv : {60.0, 80.0, 100.0}) {
      t.sv = sv;
      const auto w = insilico::simulate_apw(t, seed).as_double();
      const double pp = w.maxCoeff() - w.minCoeff();
      CHECK(pp > prev);
      prev = pp;
    }
  }
}

TEST_CASE("mean pressure is monotone in svr (averaged over paired draws)") {
  double acc_lo = 0.0, acc_hi = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    Rng rng(derive_seed(31, "map", seed));
    ParamVector t = mid_theta();
    t.hr = rng.uniform(50.0, 150.0);
    t.sv = rng.uniform(45.0, 125.0);
    t.pft = rng.uniform(0.09, 0.19);
    t.svr = 900.0;
    acc_lo += insilico::simulate_apw(t, seed).as_double().mean();
    t.svr = 1800.0;
    acc_hi += insilico::simulate_apw(t, seed).as_double().mean();
    ++n;
  }
  CHECK(acc_hi / n > acc_lo / n);
  // And exactly per theta: the synthesizer pins the segment mean (up to
  // the float32 segment storage).
  ParamVector t = mid_theta();
  const double m = insilico::simulate_apw(t, 3).as_double().mean();
  CHECK(m == doctest::Approx(insilico::target_map_mmhg(t)).epsilon(1e-5));
}

TEST_CASE("windkessel response matches the analytic exponential") {
  const double tau = insilico::windkessel_tau_s(1200.0);
  // Step drive: first sample 0, then constant c. With the zero-order-hold
  // integrator the step takes effect one sample later, so the continuous
  // solution is c*(1 - exp(-(t - dt)/tau)).
  const int n = 1000;
  Eigen::VectorXd drive = Eigen::VectorXd::Constant(n, 4.0);
  drive[0] = 0.0;
  const Eigen::VectorXd p = insilico::windkessel_response(drive, tau);
  for (int i = 1; i < n; ++i) {
    const double analytic =
        4.0 * (1.0 - std::exp(-static_cast<double>(i - 1) / (kFsHz * tau)));
    CHECK(std::abs(p[i] - analytic) <= 1e-3 * std::max(1.0, std::abs(analytic)));
  }
}

TEST_CASE("windkessel ppg: guard, peak lag, affine invariance") {
  const ParamVector t = mid_theta();

  // Degenerate constant input -> flat zero output after the guard.
  WaveformSegment flat =
      WaveformSegment::from_double(Eigen::VectorXd::Zero(kSegmentSamples), WaveKind::Apw);
  const WaveformSegment out = insilico::simulate_ppg_windkessel(t, flat);
  CHECK(out.samples.cwiseAbs().maxCoeff() == 0.0f);

  // PPG peaks lag APW peaks for draws across the prior.
  const auto thetas = sample_prior(50, PriorSpec{}, 11);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const WaveformSegment apw = insilico::simulate_apw(thetas[i], 100 + i);
    const WaveformSegment ppg = insilico::simulate_ppg_windkessel(thetas[i], apw);
    const Eigen::VectorXd a = apw.as_double().array() - apw.as_double().mean();
    const Eigen::VectorXd p = ppg.as_double().array() - ppg.as_double().mean();
    int best_lag = 0;
    double best = -1e300;
    for (int lag = 0; lag <= 50; ++lag) {
      const int m = kSegmentSamples - lag;
      const double v = a.head(m).dot(p.tail(m));
      if (v > best) {
        best = v;
        best_lag = lag;
      }
    }
    CHECK(best_lag >= 1);
  }

  // Affine rescaling of the input leaves the normalized output unchanged.
  const WaveformSegment apw = insilico::simulate_apw(t, 9);
  const WaveformSegment base = insilico::simulate_ppg_windkessel(t, apw);
  WaveformSegment scaled = WaveformSegment::from_double(
      (2.5 * apw.as_double().array() + 30.0).matrix(), WaveKind::Apw);
  const WaveformSegment same = insilico::simulate_ppg_windkessel(t, scaled);
  CHECK((base.samples - same.samples).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("measurement noise: identity, moments, spectral slope") {
  const Eigen::VectorXd x = insilico::simulate_apw(mid_theta(), 1).as_double();

  NoiseSpec off;
  off.sigma_gauss = 0.0;
  off.sigma_red = 0.0;
  CHECK((insilico::add_measurement_noise(x, off) - x).cwiseAbs().maxCoeff() == 0.0);

  const int big_n = 100000;
  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(big_n);

  NoiseSpec g;
  g.sigma_gauss = 1.0;
  g.sigma_red = 0.0;
  g.seed = 5;
  const Eigen::VectorXd gn = insilico::add_measurement_noise(zeros, g);
  CHECK(sample_std(gn) == doctest::Approx(1.0).epsilon(0.03));

  NoiseSpec r;
  r.sigma_gauss = 0.0;
  r.sigma_red = 2.0;
  r.seed = 6;
  const Eigen::VectorXd rn = insilico::add_measurement_noise(zeros, r);
  CHECK(sample_std(rn) == doctest::Approx(2.0).epsilon(1e-9));

  // Log-periodogram slope of the red component within +-0.3 of -2 over
  // 0.1-10 Hz. The noise is synthesized on this grid, so the full-length
  // periodogram bins are independent and leakage-free.
  {
    Eigen::FFT<double> fft;
    std::vector<double> buf(rn.data(), rn.data() + rn.size());
    std::vector<std::complex<double>> bins;
    fft.fwd(bins, buf);
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int cnt = 0;
    for (int k = 1; k < big_n / 2; ++k) {
      const double f = k * kFsHz / big_n;
      if (f < 0.1 || f > 10.0) continue;
      const double p = std::norm(bins[static_cast<std::size_t>(k)]);
      const double lx = std::log(f);
      const double ly = std::log(p);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      ++cnt;
    }
    const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    CHECK(slope == doctest::Approx(-2.0).epsilon(0.15));
  }

  // Composed variance ~ sigma_gauss^2 + sigma_red^2 within 10%.
  NoiseSpec both;
  both.sigma_gauss = 1.5;
  both.sigma_red = 1.0;
  both.seed = 7;
  const Eigen::VectorXd bn = insilico::add_measurement_noise(zeros, both);
  const double var = sample_std(bn) * sample_std(bn);
  CHECK(var == doctest::Approx(1.5 * 1.5 + 1.0).epsilon(0.10));

  NoiseSpec negative;
  negative.sigma_gauss = -1.0;
  CHECK_THROWS_AS(insilico::add_measurement_noise(x, negative),
                  std::invalid_argument);
}

TEST_CASE("filter_anomalous_bp equals the per-record predicate") {
  auto thetas = sample_prior(60, PriorSpec{}, 21);
  std::vector<LabeledSimRecord> records;
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    LabeledSimRecord r;
    r.theta = thetas[i];
    r.apw = insilico::simulate_apw(thetas[i], 1000 + i);
    r.seed = i;
    records.push_back(std::move(r));
  }
  // Inject extremes.
  records[3].apw.samples.array() += 200.0f;   // systolic > 210
  records[7].apw.samples.array() -= 60.0f;    // diastolic < 35
  records[11].apw.samples[500] = 250.0f;      // single-spike systolic breach

  const auto kept = insilico::filter_anomalous_bp(records);
  std::vector<std::uint64_t> expect;
  for (const auto& r : records) {
    const double sbp = r.apw.samples.maxCoeff();
    const double dbp = r.apw.samples.minCoeff();
    if (sbp >= 70.0 && sbp <= 210.0 && dbp >= 35.0 && dbp <= 130.0) {
      expect.push_back(r.seed);
    }
  }
  REQUIRE(kept.size() == expect.size());
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].seed == expect[i]);
  CHECK(kept.size() < records.size());

  // All-in-range batch passes through unchanged.
  std::vector<LabeledSimRecord> clean(records.begin() + 20, records.begin() + 30);
  const auto kept2 = insilico::filter_anomalous_bp(clean);
  bool all_in = true;
  for (const auto& r : clean) {
    const double sbp = r.apw.samples.maxCoeff();
    const double dbp = r.apw.samples.minCoeff();
    all_in = all_in && sbp >= 70.0 && sbp <= 210.0 && dbp >= 35.0 && dbp <= 130.0;
  }
  if (all_in) CHECK(kept2.size() == clean.size());
}

TEST_CASE("build_insilico_dataset: determinism, yield, reproducibility") {
  insilico::BuildOptions opts;
  opts.n = 1000;
  opts.seed = 99;
  opts.with_windkessel_ppg = true;
  const auto ds = insilico::build_insilico_dataset(opts);
  // At least 90% of default-prior records survive the BP filter.
  CHECK(ds.size() >= 900);
  CHECK(ds.size() <= 1000);

  const auto ds2 = insilico::build_insilico_dataset(opts);
  REQUIRE(ds.size() == ds2.size());
  for (std::size_t i = 0; i < ds.size(); i += 97) {
    CHECK((ds[i].apw.samples - ds2[i].apw.samples).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((ds[i].ppg_wk->samples - ds2[i].ppg_wk->samples).cwiseAbs().maxCoeff() ==
          0.0f);
  }

  // Each record rebuilds from its stored (theta, seed).
  for (std::size_t i = 0; i < ds.size(); i += 211) {
    const auto rebuilt = insilico::make_record(ds[i].theta, ds[i].seed, opts.noise,
                                               opts.filter, true);
    CHECK((rebuilt.apw.samples - ds[i].apw.samples).cwiseAbs().maxCoeff() == 0.0f);
  }

  // Conditioned records stay inside the plausibility window.
  for (const auto& r : ds) {
    CHECK(r.apw.samples.minCoeff() >= 10.0f);
    CHECK(r.apw.samples.maxCoeff() <= 300.0f);
  }
}

TEST_CASE("paper-scale build keeps the order of magnitude") {
  insilico::BuildOptions opts;
  opts.n = 32000;
  opts.seed = 2024;
  const auto ds = insilico::build_insilico_dataset(opts);
  CHECK(ds.size() >= 28800);  // >= 90% yield
  CHECK(ds.size() <= 32000);
}
