#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "hemo/core/io.hpp"
#include "hemo/core/rng.hpp"
#include "hemo/core/types.hpp"

using namespace hemo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hemo_test_" + name);
  fs::remove_all(p);
  return p;
}

WaveformSegment noise_segment(std::uint64_t seed, WaveKind kind) {
  Rng rng(seed);
  Eigen::VectorXf v(kSegmentSamples);
  for (int i = 0; i < kSegmentSamples; ++i) {
    v[i] = static_cast<float>(rng.uniform(50.0, 150.0));
  }
  WaveformSegment s;
  s.samples = v;
  s.kind = kind;
  return s;
}

}  // namespace

TEST_CASE("param vector derived fields and ordering") {
  const ParamVector t{72.0, 80.0, 0.12, 1100.0};
  CHECK(t.co() == doctest::Approx(72.0 * 80.0 / 1000.0));
  CHECK(t.map_mmhg() == doctest::Approx(t.co() * 1100.0 / 80.0));
  CHECK(t.finite_positive());
  const Eigen::Vector4d v = t.to_vector();
  CHECK(v[0] == 72.0);   // hr
  CHECK(v[1] == 80.0);   // sv
  CHECK(v[2] == 0.12);   // pft
  CHECK(v[3] == 1100.0); // svr
  const ParamVector back = ParamVector::from_vector(v);
  CHECK(back.hr == t.hr);
  CHECK(back.svr == t.svr);
  CHECK_FALSE(ParamVector{0.0, 1.0, 1.0, 1.0}.finite_positive());
}

TEST_CASE("labeled sim dataset round trip is bit exact") {
  const fs::path dir = temp_dir("labeled");
  std::vector<LabeledSimRecord> recs(10);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].theta = ParamVector{60.0 + i, 70.0, 0.1f, 1000.0};
    recs[i].apw = noise_segment(i + 1, WaveKind::Apw);
    recs[i].ppg_wk = noise_segment(100 + i, WaveKind::Ppg);
    recs[i].seed = 0xDEADBEEF00ULL + i;
  }
  io::write_dataset(recs, dir);
  CHECK(io::dataset_type(dir) == "labeled_sim");
  const auto manifest = io::read_manifest(dir);
  CHECK(manifest.at("count") == 10);
  CHECK(fs::file_size(dir / "apw.f32") == 10 * 1000 * sizeof(float));

  const auto back = io::read_labeled_sim(dir);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].seed == recs[i].seed);
    CHECK(static_cast<float>(back[i].theta.hr) ==
          static_cast<float>(recs[i].theta.hr));
    CHECK((back[i].apw.samples - recs[i].apw.samples).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((back[i].ppg_wk->samples - recs[i].ppg_wk->samples).cwiseAbs().maxCoeff() ==
          0.0f);
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset io error paths") {
  const fs::path dir = temp_dir("errors");
  CHECK_THROWS_WITH_AS(io::write_dataset(std::vector<LabeledSimRecord>{}, dir),
                       "empty dataset", std::invalid_argument);

  std::vector<LabeledSimRecord> recs(3);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].theta = ParamVector{70.0, 70.0, 0.1, 1000.0};
    recs[i].apw = noise_segment(i, WaveKind::Apw);
    recs[i].seed = i;
  }
  // Heterogeneous optional fields.
  recs[1].ppg_wk = noise_segment(9, WaveKind::Ppg);
  CHECK_THROWS_AS(io::write_dataset(recs, dir), std::invalid_argument);
  recs[1].ppg_wk.reset();

  io::write_dataset(recs, dir);
  // Manifest count no longer matches the field file.
  {
    std::ofstream f(dir / "apw.f32", std::ios::binary | std::ios::trunc);
    std::vector<float> short_data(2 * kSegmentSamples, 0.0f);
    f.write(reinterpret_cast<const char*>(short_data.data()),
            static_cast<std::streamsize>(short_data.size() * sizeof(float)));
  }
  CHECK_THROWS_AS(io::read_labeled_sim(dir), std::runtime_error);

  // Unknown type tag.
  {
    auto m = io::read_manifest(dir);
    m["type"] = "mystery";
    std::ofstream f(dir / "manifest.json");
    f << m.dump(2);
  }
  CHECK_THROWS_AS(io::read_labeled_sim(dir), std::runtime_error);
  CHECK_THROWS_AS(io::read_manifest(temp_dir("missing")), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("paired and subject series round trips") {
  const fs::path dir = temp_dir("paired");
  std::vector<PairedSegment> pairs(6);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].apw = noise_segment(i, WaveKind::Apw);
    pairs[i].ppg = noise_segment(50 + i, WaveKind::Ppg);
    pairs[i].subject_id = "P" + std::to_string(i % 2);
    pairs[i].timestamp_s = 8.0 * static_cast<double>(i);
  }
  io::write_dataset(pairs, dir);
  const auto back = io::read_paired(dir);
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(*back[i].subject_id == *pairs[i].subject_id);
    CHECK(*back[i].timestamp_s == *pairs[i].timestamp_s);
    CHECK((back[i].ppg.samples - pairs[i].ppg.samples).cwiseAbs().maxCoeff() == 0.0f);
  }
  fs::remove_all(dir);

  const fs::path sdir = temp_dir("series");
  std::vector<SubjectSeries> subjects(2);
  for (int s = 0; s < 2; ++s) {
    subjects[static_cast<std::size_t>(s)].subject_id = "S" + std::to_string(s);
    for (int r = 0; r < 4; ++r) {
      SeriesRecord rec;
      rec.timestamp_s = 8.0 * r;
      rec.ppg = noise_segment(static_cast<std::uint64_t>(s * 10 + r), WaveKind::Ppg);
      rec.apw = noise_segment(static_cast<std::uint64_t>(200 + s * 10 + r), WaveKind::Apw);
      rec.theta_true = ParamVector{70.0 + r, 80.0, 0.1, 1200.0};
      subjects[static_cast<std::size_t>(s)].records.push_back(std::move(rec));
    }
  }
  io::write_dataset(subjects, sdir);
  const auto sback = io::read_subject_series(sdir);
  REQUIRE(sback.size() == 2);
  CHECK(sback[1].subject_id == "S1");
  CHECK(sback[1].records.size() == 4);
  CHECK(sback[0].records[3].theta_true->hr == doctest::Approx(73.0));
  CHECK((sback[0].records[2].ppg.samples - subjects[0].records[2].ppg.samples)
            .cwiseAbs()
            .maxCoeff() == 0.0f);
  fs::remove_all(sdir);
}

TEST_CASE("split_dataset determinism and membership") {
  std::vector<LabeledSimRecord> recs(100);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].theta = ParamVector{60.0 + static_cast<double>(i), 70.0, 0.1, 1000.0};
    recs[i].apw = noise_segment(i, WaveKind::Apw);
    recs[i].seed = i;
  }
  const auto parts = io::split_dataset(recs, {0.8, 0.2}, 7);
  CHECK(parts[0].size() == 80);
  CHECK(parts[1].size() == 20);
  const auto parts2 = io::split_dataset(recs, {0.8, 0.2}, 7);
  for (std::size_t i = 0; i < parts[1].size(); ++i) {
    CHECK(parts[1][i].seed == parts2[1][i].seed);
  }
  // Disjoint cover.
  std::set<std::uint64_t> seen;
  for (const auto& p : parts) {
    for (const auto& r : p) CHECK(seen.insert(r.seed).second);
  }
  CHECK(seen.size() == 100);

  CHECK_THROWS_AS(io::split_dataset(recs, {0.5, 0.6}, 1), std::invalid_argument);
  CHECK_THROWS_AS(io::split_dataset(recs, {0.5, -0.1, 0.6}, 1),
                  std::invalid_argument);
}

TEST_CASE("split_dataset by subject keeps subjects whole") {
  std::vector<PairedSegment> pairs;
  for (int s = 0; s < 3; ++s) {
    for (int r = 0; r < 10; ++r) {
      PairedSegment p;
      p.apw = noise_segment(static_cast<std::uint64_t>(s * 10 + r), WaveKind::Apw);
      p.ppg = noise_segment(static_cast<std::uint64_t>(900 + s * 10 + r), WaveKind::Ppg);
      p.subject_id = "subj" + std::to_string(s);
      pairs.push_back(std::move(p));
    }
  }
  const auto parts = io::split_dataset(pairs, {0.67, 0.33}, 3, true);
  // Whole subjects: 2 train, 1 val.
  std::set<std::string> train_subjects, val_subjects;
  for (const auto& p : parts[0]) train_subjects.insert(*p.subject_id);
  for (const auto& p : parts[1]) val_subjects.insert(*p.subject_id);
  CHECK(train_subjects.size() == 2);
  CHECK(val_subjects.size() == 1);
  CHECK(parts[0].size() == 20);
  CHECK(parts[1].size() == 10);
  for (const auto& s : val_subjects) CHECK(train_subjects.count(s) == 0);

  // Missing subject ids.
  pairs[4].subject_id.reset();
  CHECK_THROWS_AS(io::split_dataset(pairs, {0.67, 0.33}, 3, true),
                  std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = temp_dir("ckpt");
  io::Checkpoint c;
  c.kind = io::ModelKind::Npe;
  c.config = {{"flow_steps", 3}, {"note", "test"}};
  c.metrics = {{"val", 1.25}};
  Rng rng(5);
  io::NamedArray a;
  a.name = "layer.w";
  a.rows = 4;
  a.cols = 3;
  for (int i = 0; i < 12; ++i) a.data.push_back(static_cast<float>(rng.normal()));
  c.weights.push_back(a);
  io::write_checkpoint(c, dir);
  const auto back = io::read_checkpoint(dir);
  CHECK(back.kind == io::ModelKind::Npe);
  CHECK(back.config.at("flow_steps") == 3);
  CHECK(back.metrics.at("val") == 1.25);
  REQUIRE(back.weights.size() == 1);
  CHECK(back.weights[0].rows == 4);
  for (int i = 0; i < 12; ++i) CHECK(back.weights[0].data[static_cast<std::size_t>(i)] == a.data[static_cast<std::size_t>(i)]);
  CHECK_THROWS_AS(io::model_kind_from("WRONG"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("seed derivation is stable and branch separated") {
  const std::uint64_t a = derive_seed(1, "stage");
  const std::uint64_t b = derive_seed(1, "stage");
  const std::uint64_t c = derive_seed(1, "other");
  const std::uint64_t d = derive_seed(2, "stage");
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a != d);
  CHECK(derive_seed(1, "stage", 0) != derive_seed(1, "stage", 1));
}
