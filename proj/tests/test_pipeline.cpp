#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <set>

#include "hemo/core/rng.hpp"
#include "hemo/pipeline/benchmark.hpp"
#include "hemo/pipeline/pipeline.hpp"
#include "hemo/sigproc/sigproc.hpp"

using namespace hemo;

namespace {

pipeline::HybridModel random_hybrid(std::uint64_t seed, int m = 10, int k = 20) {
  pipeline::HybridModel h;
  h.translator = std::make_shared<cvae::CvaeModel>(cvae::CvaeConfig{}, seed);
  auto npe_model = std::make_shared<npe::NpeModel>(npe::NpeConfig{}, seed + 1);
  npe_model->std_mean = Eigen::Vector4d(100.0, 85.0, 0.14, 1450.0);
  npe_model->std_scale = Eigen::Vector4d(30.0, 25.0, 0.03, 400.0);
  h.posterior = npe_model;
  h.m = m;
  h.k = k;
  return h;
}

std::vector<SubjectSeries> tiny_benchmark(int subjects, int segments,
                                          std::uint64_t seed) {
  pipeline::BenchmarkSpec spec;
  spec.n_subjects = subjects;
  spec.segments_per_subject = segments;
  return pipeline::make_eval_subjects(spec, seed);
}

}  // namespace

TEST_CASE("prediction aggregation equals the enumeration oracle") {
  auto model = random_hybrid(3);
  const auto subjects = tiny_benchmark(1, 1, 5);
  const WaveformSegment& ppg = subjects[0].records[0].ppg;

  const auto samples = pipeline::predict_samples(ppg, model, 42);
  REQUIRE(samples.size() == 200);
  const auto out = pipeline::predict(ppg, model, 42);
  REQUIRE_FALSE(out.rejected);
  CHECK(out.result.m == 10);
  CHECK(out.result.k == 20);

  // Brute-force mean/std over the enumerated samples, CO per sample.
  for (int p = 0; p < kNumReports; ++p) {
    double mean = 0.0;
    for (const auto& s : samples) {
      const double v =
          (p == 4) ? s.co() : s.to_vector()[p];
      mean += v;
    }
    mean /= 200.0;
    double var = 0.0;
    for (const auto& s : samples) {
      const double v = (p == 4) ? s.co() : s.to_vector()[p];
      var += (v - mean) * (v - mean);
    }
    var /= 200.0;
    CHECK(out.result.mean[p] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(out.result.stddev[p] == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
  }

  // Derived consistency: every sample satisfies co = hr*sv/1000, and the
  // aggregated CO mean is the mean of per-sample CO, not the product of
  // aggregated means.
  for (const auto& s : samples) {
    CHECK(s.co() == doctest::Approx(s.hr * s.sv / 1000.0).epsilon(1e-15));
  }
  const double product_of_means =
      out.result.mean[0] * out.result.mean[1] / 1000.0;
  CHECK(out.result.mean[4] != doctest::Approx(product_of_means).epsilon(1e-9));
}

TEST_CASE("degenerate aggregation and rejection") {
  auto model = random_hybrid(7, 1, 1);
  const auto subjects = tiny_benchmark(1, 1, 6);
  const WaveformSegment& ppg = subjects[0].records[0].ppg;

  const auto out = pipeline::predict(ppg, model, 9);
  REQUIRE_FALSE(out.rejected);
  CHECK(out.result.stddev.cwiseAbs().maxCoeff() == 0.0);
  const auto samples = pipeline::predict_samples(ppg, model, 9);
  CHECK(out.result.mean[0] == doctest::Approx(samples[0].hr));

  WaveformSegment bad = ppg;
  bad.samples[5] = std::numeric_limits<float>::quiet_NaN();
  const auto rej = pipeline::predict(bad, model, 9);
  CHECK(rej.rejected);

  // Bit-for-bit reproducibility with the same seed.
  auto model2 = random_hybrid(7, 1, 1);
  const auto again = pipeline::predict(ppg, model2, 9);
  CHECK(again.result.mean[0] == out.result.mean[0]);
  CHECK(again.result.mean[3] == out.result.mean[3]);
}

TEST_CASE("baseline prediction contracts") {
  pipeline::BaselineModels models;
  models.m = 2;
  models.k = 3;
  auto npe_model = std::make_shared<npe::NpeModel>(npe::NpeConfig{}, 31);
  npe_model->std_mean = Eigen::Vector4d(100.0, 85.0, 0.14, 1450.0);
  npe_model->std_scale = Eigen::Vector4d(30.0, 25.0, 0.03, 400.0);
  models.npe = npe_model;
  models.det = std::make_shared<cvae::DetModel>(cvae::DetConfig{}, 32);

  const auto subjects = tiny_benchmark(1, 1, 8);
  const WaveformSegment& ppg = subjects[0].records[0].ppg;
  const WaveformSegment& apw = *subjects[0].records[0].apw;

  const auto direct =
      pipeline::predict_baseline(pipeline::BaselineKind::ApwDirect, apw, models, 4);
  CHECK_FALSE(direct.rejected);
  CHECK(direct.result.m * direct.result.k == 6);

  const auto det = pipeline::predict_baseline(pipeline::BaselineKind::DetTranslator,
                                              ppg, models, 4);
  CHECK_FALSE(det.rejected);

  // APW baseline refuses a PPG segment; missing models throw.
  CHECK_THROWS_AS(pipeline::predict_baseline(pipeline::BaselineKind::ApwDirect,
                                             ppg, models, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(pipeline::predict_baseline(pipeline::BaselineKind::PpgWindkessel,
                                             ppg, models, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(pipeline::baseline_from("nonsense"), std::invalid_argument);
  CHECK(pipeline::baseline_from("apw") == pipeline::BaselineKind::ApwDirect);
}

TEST_CASE("rank_by_uncertainty ordering and ties") {
  auto model = random_hybrid(11, 2, 2);
  const auto subjects = tiny_benchmark(1, 6, 12);
  std::vector<WaveformSegment> segments;
  for (const auto& r : subjects[0].records) segments.push_back(r.ppg);

  const auto ranked =
      pipeline::rank_by_uncertainty(segments, model, Report::Hr, 77);
  REQUIRE(ranked.size() == segments.size());
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    CHECK(ranked[i - 1].second >= ranked[i].second);
  }
  // Equals a brute-force sort of independently computed stds.
  std::vector<std::pair<int, double>> brute;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto o = pipeline::predict(segments[i], model, derive_seed(77, "rank"));
    brute.emplace_back(static_cast<int>(i), o.result.std_of(Report::Hr));
  }
  std::stable_sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    CHECK(ranked[i].first == brute[i].first);
    CHECK(ranked[i].second == brute[i].second);
  }

  // All-identical segments: equal stds, index order preserved.
  std::vector<WaveformSegment> same(4, segments[0]);
  const auto tied = pipeline::rank_by_uncertainty(same, model, Report::Sv, 5);
  for (std::size_t i = 0; i < tied.size(); ++i) {
    CHECK(tied[i].first == static_cast<int>(i));
    CHECK(tied[i].second == tied[0].second);
  }

  CHECK_THROWS_AS(pipeline::rank_by_uncertainty(same, model, Report::Pft, 5),
                  std::invalid_argument);
}

TEST_CASE("benchmark generators: structure, support, determinism") {
  pipeline::BenchmarkSpec spec;
  spec.n_subjects = 3;
  spec.segments_per_subject = 5;
  const auto subjects = pipeline::make_eval_subjects(spec, 2024);
  REQUIRE(subjects.size() == 3);
  std::set<std::string> ids;
  for (const auto& s : subjects) {
    ids.insert(s.subject_id);
    REQUIRE(s.records.size() == 5);
    for (std::size_t r = 0; r < s.records.size(); ++r) {
      const auto& rec = s.records[r];
      CHECK(rec.timestamp_s == doctest::Approx(8.0 * static_cast<double>(r)));
      CHECK(rec.ppg.size() == kSegmentSamples);
      CHECK(rec.apw->size() == kSegmentSamples);
      CHECK(spec.prior.contains(*rec.theta_true));
      CHECK(sigproc::quality_check(*rec.apw));
      CHECK(sigproc::quality_check(rec.ppg));
    }
  }
  CHECK(ids.size() == 3);

  const auto again = pipeline::make_eval_subjects(spec, 2024);
  CHECK((subjects[1].records[2].ppg.samples - again[1].records[2].ppg.samples)
            .cwiseAbs()
            .maxCoeff() == 0.0f);

  // Drifting parameters actually move.
  double lo = 1e9, hi = -1e9;
  for (const auto& rec : subjects[0].records) {
    lo = std::min(lo, rec.theta_true->hr);
    hi = std::max(hi, rec.theta_true->hr);
  }
  CHECK(hi > lo);

  // Paired generator: pseudo-subject grouping and alignment.
  const auto pairs = pipeline::make_paired_dataset(40, 4, spec, 7);
  REQUIRE(pairs.size() == 40);
  std::set<std::string> pseudo;
  for (const auto& p : pairs) {
    pseudo.insert(*p.subject_id);
    CHECK(p.apw.size() == kSegmentSamples);
    CHECK(p.ppg.size() == kSegmentSamples);
  }
  CHECK(pseudo.size() == 4);

  // Transfer keeps the PPG informative: correlation with the APW is not
  // degenerate but the map differs across subjects.
  const auto t1 = pipeline::draw_transfer(spec.transfer, 1);
  const auto t2 = pipeline::draw_transfer(spec.transfer, 2);
  CHECK(t1.delay_s != t2.delay_s);
  CHECK(t1.delay_s >= 0.02);
  CHECK(t1.delay_s <= 0.08);

  // Supervised records carry the PPG in the conditioning slot.
  const auto sup = pipeline::supervised_records(subjects, {subjects[0].subject_id});
  REQUIRE(sup.size() == 5);
  CHECK((sup[2].apw.samples - subjects[0].records[2].ppg.samples)
            .cwiseAbs()
            .maxCoeff() == 0.0f);
}

TEST_CASE("prediction csv round trip") {
  namespace fs = std::filesystem;
  std::vector<pipeline::SeriesPrediction> rows(3);
  rows[0].subject = "S0";
  rows[0].timestamp_s = 0.0;
  rows[0].rejected = false;
  rows[0].result.mean << 70.0, 80.0, 0.12, 1200.0, 5.6;
  rows[0].result.stddev << 1.0, 2.0, 0.01, 30.0, 0.2;
  rows[1] = rows[0];
  rows[1].timestamp_s = 8.0;
  rows[2].subject = "S1";
  rows[2].timestamp_s = 0.0;
  rows[2].rejected = true;

  const fs::path p = fs::temp_directory_path() / "hemo_pred_test.csv";
  pipeline::write_predictions_csv(rows, p);
  const auto back = pipeline::read_predictions_csv(p);
  REQUIRE(back.size() == 3);
  CHECK(back[0].subject == "S0");
  CHECK(back[1].timestamp_s == 8.0);
  CHECK(back[0].result.mean[0] == doctest::Approx(70.0));
  CHECK(back[0].result.stddev[3] == doctest::Approx(30.0));
  CHECK(back[2].rejected);
  fs::remove(p);
}
