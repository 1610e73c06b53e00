#include "hemo/core/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hemo::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_raw(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

std::vector<char> read_raw(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(n));
  f.read(buf.data(), n);
  if (!f) throw std::runtime_error("short read from " + path.string());
  return buf;
}

void write_f32(const fs::path& path, const std::vector<float>& v) {
  write_raw(path, v.data(), v.size() * sizeof(float));
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
  const auto buf = read_raw(path);
  if (buf.size() != expected * sizeof(float)) {
    throw std::runtime_error("length mismatch in " + path.string() + ": got " +
                             std::to_string(buf.size() / sizeof(float)) +
                             " floats, manifest expects " + std::to_string(expected));
  }
  std::vector<float> v(expected);
  std::memcpy(v.data(), buf.data(), buf.size());
  return v;
}

void write_i64(const fs::path& path, const std::vector<std::int64_t>& v) {
  write_raw(path, v.data(), v.size() * sizeof(std::int64_t));
}

std::vector<std::int64_t> read_i64(const fs::path& path, std::size_t expected) {
  const auto buf = read_raw(path);
  if (buf.size() != expected * sizeof(std::int64_t)) {
    throw std::runtime_error("length mismatch in " + path.string());
  }
  std::vector<std::int64_t> v(expected);
  std::memcpy(v.data(), buf.data(), buf.size());
  return v;
}

json field_entry(const std::string& name, const std::string& dtype, int cols) {
  return json{{"name", name},
              {"file", name + "." + dtype},
              {"dtype", dtype},
              {"cols", cols}};
}

void write_manifest(const fs::path& dir, json manifest) {
  std::ofstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + dir.string());
  f << manifest.dump(2) << "\n";
}

json base_manifest(const std::string& type, std::size_t count, const json& extra) {
  json m;
  m["schema_version"] = 1;
  m["type"] = type;
  m["count"] = count;
  m["fs_hz"] = kFsHz;
  m["segment_samples"] = kSegmentSamples;
  if (!extra.is_null() && !extra.empty()) m["extra"] = extra;
  return m;
}

void append_segment(std::vector<float>& dst, const WaveformSegment& s) {
  check_segment_length(s);
  dst.insert(dst.end(), s.samples.data(), s.samples.data() + s.samples.size());
}

WaveformSegment take_segment(const std::vector<float>& src, std::size_t row,
                             WaveKind kind) {
  WaveformSegment s;
  s.samples = Eigen::Map<const Eigen::VectorXf>(
      src.data() + row * kSegmentSamples, kSegmentSamples);
  s.kind = kind;
  return s;
}

}  // namespace

void write_dataset(const std::vector<LabeledSimRecord>& records,
                   const fs::path& dir, const json& extra) {
  if (records.empty()) throw std::invalid_argument("empty dataset");
  const bool with_ppg = records.front().ppg_wk.has_value();
  for (const auto& r : records) {
    if (r.ppg_wk.has_value() != with_ppg) {
      throw std::invalid_argument("heterogeneous records: ppg_wk present in some only");
    }
  }
  fs::create_directories(dir);

  std::vector<float> theta, apw, ppg;
  std::vector<std::int64_t> seeds;
  for (const auto& r : records) {
    const Eigen::Vector4d v = r.theta.to_vector();
    for (int i = 0; i < kNumParams; ++i) theta.push_back(static_cast<float>(v[i]));
    append_segment(apw, r.apw);
    if (with_ppg) append_segment(ppg, *r.ppg_wk);
    seeds.push_back(static_cast<std::int64_t>(r.seed));
  }
  write_f32(dir / "theta.f32", theta);
  write_f32(dir / "apw.f32", apw);
  if (with_ppg) write_f32(dir / "ppg_wk.f32", ppg);
  write_i64(dir / "seed.i64", seeds);

  json m = base_manifest("labeled_sim", records.size(), extra);
  m["units"] = {{"theta", {"beats/min", "mL", "s", "dyn.s/cm5"}}, {"apw", "mmHg"}};
  m["fields"] = json::array({field_entry("theta", "f32", kNumParams),
                             field_entry("apw", "f32", kSegmentSamples),
                             field_entry("seed", "i64", 1)});
  if (with_ppg) m["fields"].push_back(field_entry("ppg_wk", "f32", kSegmentSamples));
  write_manifest(dir, m);
}

void write_dataset(const std::vector<PairedSegment>& records, const fs::path& dir,
                   const json& extra) {
  if (records.empty()) throw std::invalid_argument("empty dataset");
  const bool with_subject = records.front().subject_id.has_value();
  const bool with_time = records.front().timestamp_s.has_value();
  for (const auto& r : records) {
    if (r.subject_id.has_value() != with_subject ||
        r.timestamp_s.has_value() != with_time) {
      throw std::invalid_argument("heterogeneous records: optional fields differ");
    }
  }
  fs::create_directories(dir);

  std::vector<float> apw, ppg, ts;
  std::vector<std::string> subject_ids;
  std::vector<std::int64_t> subject_idx;
  for (const auto& r : records) {
    append_segment(apw, r.apw);
    append_segment(ppg, r.ppg);
    if (with_time) ts.push_back(static_cast<float>(*r.timestamp_s));
    if (with_subject) {
      const auto it = std::find(subject_ids.begin(), subject_ids.end(), *r.subject_id);
      if (it == subject_ids.end()) {
        subject_idx.push_back(static_cast<std::int64_t>(subject_ids.size()));
        subject_ids.push_back(*r.subject_id);
      } else {
        subject_idx.push_back(it - subject_ids.begin());
      }
    }
  }
  write_f32(dir / "apw.f32", apw);
  write_f32(dir / "ppg.f32", ppg);
  if (with_time) write_f32(dir / "timestamp.f32", ts);
  if (with_subject) write_i64(dir / "subject_idx.i64", subject_idx);

  json m = base_manifest("paired_segments", records.size(), extra);
  m["units"] = {{"apw", "mmHg"}, {"ppg", "au"}};
  m["fields"] = json::array({field_entry("apw", "f32", kSegmentSamples),
                             field_entry("ppg", "f32", kSegmentSamples)});
  if (with_time) m["fields"].push_back(field_entry("timestamp", "f32", 1));
  if (with_subject) {
    m["fields"].push_back(field_entry("subject_idx", "i64", 1));
    m["subjects"] = subject_ids;
  }
  write_manifest(dir, m);
}

void write_dataset(const std::vector<SubjectSeries>& subjects, const fs::path& dir,
                   const json& extra) {
  if (subjects.empty()) throw std::invalid_argument("empty dataset");
  std::size_t count = 0;
  const bool with_apw = !subjects.front().records.empty() &&
                        subjects.front().records.front().apw.has_value();
  const bool with_theta = !subjects.front().records.empty() &&
                          subjects.front().records.front().theta_true.has_value();
  for (const auto& s : subjects) {
    s.check_invariants();
    for (const auto& r : s.records) {
      if (r.apw.has_value() != with_apw || r.theta_true.has_value() != with_theta) {
        throw std::invalid_argument("heterogeneous records: optional fields differ");
      }
      ++count;
    }
  }
  fs::create_directories(dir);

  std::vector<float> ppg, apw, theta, ts;
  json subj = json::array();
  for (const auto& s : subjects) {
    subj.push_back(json{{"id", s.subject_id}, {"count", s.records.size()}});
    for (const auto& r : s.records) {
      ts.push_back(static_cast<float>(r.timestamp_s));
      append_segment(ppg, r.ppg);
      if (with_apw) append_segment(apw, *r.apw);
      if (with_theta) {
        const Eigen::Vector4d v = r.theta_true->to_vector();
        for (int i = 0; i < kNumParams; ++i) theta.push_back(static_cast<float>(v[i]));
      }
    }
  }
  write_f32(dir / "timestamp.f32", ts);
  write_f32(dir / "ppg.f32", ppg);
  if (with_apw) write_f32(dir / "apw.f32", apw);
  if (with_theta) write_f32(dir / "theta.f32", theta);

  json m = base_manifest("subject_series", count, extra);
  m["units"] = {{"ppg", "au"}, {"apw", "mmHg"},
                {"theta", {"beats/min", "mL", "s", "dyn.s/cm5"}}};
  m["subjects"] = subj;
  m["fields"] = json::array({field_entry("timestamp", "f32", 1),
                             field_entry("ppg", "f32", kSegmentSamples)});
  if (with_apw) m["fields"].push_back(field_entry("apw", "f32", kSegmentSamples));
  if (with_theta) m["fields"].push_back(field_entry("theta", "f32", kNumParams));
  write_manifest(dir, m);
}

json read_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  std::ifstream f(p);
  if (!f) throw std::runtime_error("missing manifest: " + p.string());
  json m;
  f >> m;
  return m;
}

std::string dataset_type(const fs::path& dir) {
  return read_manifest(dir).at("type").get<std::string>();
}

namespace {

std::size_t manifest_count(const json& m) {
  return m.at("count").get<std::size_t>();
}

bool has_field(const json& m, const std::string& name) {
  for (const auto& f : m.at("fields")) {
    if (f.at("name") == name) return true;
  }
  return false;
}

void expect_type(const json& m, const std::string& type) {
  const std::string t = m.at("type").get<std::string>();
  if (t != type) {
    throw std::runtime_error("unsupported dataset type '" + t + "', expected '" +
                             type + "'");
  }
}

ParamVector theta_at(const std::vector<float>& theta, std::size_t row) {
  Eigen::Vector4d v;
  for (int i = 0; i < kNumParams; ++i) {
    v[i] = theta[row * kNumParams + static_cast<std::size_t>(i)];
  }
  return ParamVector::from_vector(v);
}

}  // namespace

std::vector<LabeledSimRecord> read_labeled_sim(const fs::path& dir) {
  const json m = read_manifest(dir);
  expect_type(m, "labeled_sim");
  const std::size_t n = manifest_count(m);
  const auto theta = read_f32(dir / "theta.f32", n * kNumParams);
  const auto apw = read_f32(dir / "apw.f32", n * kSegmentSamples);
  const auto seeds = read_i64(dir / "seed.i64", n);
  const bool with_ppg = has_field(m, "ppg_wk");
  std::vector<float> ppg;
  if (with_ppg) ppg = read_f32(dir / "ppg_wk.f32", n * kSegmentSamples);

  std::vector<LabeledSimRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].theta = theta_at(theta, i);
    if (!out[i].theta.finite_positive()) {
      throw std::runtime_error("invalid theta in record " + std::to_string(i));
    }
    out[i].apw = take_segment(apw, i, WaveKind::Apw);
    if (with_ppg) out[i].ppg_wk = take_segment(ppg, i, WaveKind::Ppg);
    out[i].seed = static_cast<std::uint64_t>(seeds[i]);
  }
  return out;
}

std::vector<PairedSegment> read_paired(const fs::path& dir) {
  const json m = read_manifest(dir);
  expect_type(m, "paired_segments");
  const std::size_t n = manifest_count(m);
  const auto apw = read_f32(dir / "apw.f32", n * kSegmentSamples);
  const auto ppg = read_f32(dir / "ppg.f32", n * kSegmentSamples);
  const bool with_time = has_field(m, "timestamp");
  const bool with_subject = has_field(m, "subject_idx");
  std::vector<float> ts;
  std::vector<std::int64_t> sidx;
  std::vector<std::string> subjects;
  if (with_time) ts = read_f32(dir / "timestamp.f32", n);
  if (with_subject) {
    sidx = read_i64(dir / "subject_idx.i64", n);
    subjects = m.at("subjects").get<std::vector<std::string>>();
  }

  std::vector<PairedSegment> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].apw = take_segment(apw, i, WaveKind::Apw);
    out[i].ppg = take_segment(ppg, i, WaveKind::Ppg);
    if (with_time) out[i].timestamp_s = ts[i];
    if (with_subject) out[i].subject_id = subjects.at(static_cast<std::size_t>(sidx[i]));
  }
  return out;
}

std::vector<SubjectSeries> read_subject_series(const fs::path& dir) {
  const json m = read_manifest(dir);
  expect_type(m, "subject_series");
  const std::size_t n = manifest_count(m);
  const auto ts = read_f32(dir / "timestamp.f32", n);
  const auto ppg = read_f32(dir / "ppg.f32", n * kSegmentSamples);
  const bool with_apw = has_field(m, "apw");
  const bool with_theta = has_field(m, "theta");
  std::vector<float> apw, theta;
  if (with_apw) apw = read_f32(dir / "apw.f32", n * kSegmentSamples);
  if (with_theta) theta = read_f32(dir / "theta.f32", n * kNumParams);

  std::vector<SubjectSeries> out;
  std::size_t row = 0;
  std::size_t total = 0;
  for (const auto& s : m.at("subjects")) {
    SubjectSeries series;
    series.subject_id = s.at("id").get<std::string>();
    const std::size_t cnt = s.at("count").get<std::size_t>();
    total += cnt;
    for (std::size_t i = 0; i < cnt; ++i, ++row) {
      SeriesRecord r;
      r.timestamp_s = ts.at(row);
      r.ppg = take_segment(ppg, row, WaveKind::Ppg);
      if (with_apw) r.apw = take_segment(apw, row, WaveKind::Apw);
      if (with_theta) r.theta_true = theta_at(theta, row);
      series.records.push_back(std::move(r));
    }
    series.check_invariants();
    out.push_back(std::move(series));
  }
  if (total != n) {
    throw std::runtime_error("subject counts disagree with manifest count");
  }
  return out;
}

std::vector<double> check_fractions(const std::vector<double>& fractions) {
  if (fractions.size() < 2) {
    throw std::invalid_argument("need at least two split fractions");
  }
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw std::invalid_argument("split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
  return fractions;
}

std::vector<int> partition_sizes(int n, const std::vector<double>& fractions) {
  std::vector<int> sizes(fractions.size(), 0);
  int assigned = 0;
  for (std::size_t p = 1; p < fractions.size(); ++p) {
    sizes[p] = static_cast<int>(std::lround(fractions[p] * n));
    assigned += sizes[p];
  }
  sizes[0] = n - assigned;  // remainder goes to the first partition
  if (sizes[0] < 0) throw std::invalid_argument("split fractions round above n");
  return sizes;
}

std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Cvae: return "CVAE";
    case ModelKind::Npe: return "NPE";
    case ModelKind::DetCnn: return "DET_CNN";
  }
  throw std::invalid_argument("bad model kind");
}

ModelKind model_kind_from(const std::string& name) {
  if (name == "CVAE") return ModelKind::Cvae;
  if (name == "NPE") return ModelKind::Npe;
  if (name == "DET_CNN") return ModelKind::DetCnn;
  throw std::runtime_error("unknown model kind '" + name + "'");
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir / "weights");
  json m;
  m["schema_version"] = 1;
  m["type"] = "checkpoint";
  m["model_kind"] = model_kind_name(ckpt.kind);
  m["config"] = ckpt.config;
  m["metrics"] = ckpt.metrics;
  m["weights"] = json::array();
  for (const auto& w : ckpt.weights) {
    if (w.data.size() != static_cast<std::size_t>(w.rows) * static_cast<std::size_t>(w.cols)) {
      throw std::invalid_argument("weight array size mismatch: " + w.name);
    }
    m["weights"].push_back(json{
        {"name", w.name}, {"file", "weights/" + w.name + ".f32"},
        {"rows", w.rows}, {"cols", w.cols}, {"dtype", "f32"}});
    write_f32(dir / "weights" / (w.name + ".f32"), w.data);
  }
  write_manifest(dir, m);
}

Checkpoint read_checkpoint(const fs::path& dir) {
  const json m = read_manifest(dir);
  expect_type(m, "checkpoint");
  Checkpoint c;
  c.kind = model_kind_from(m.at("model_kind").get<std::string>());
  c.config = m.at("config");
  c.metrics = m.value("metrics", json::object());
  for (const auto& w : m.at("weights")) {
    NamedArray a;
    a.name = w.at("name").get<std::string>();
    a.rows = w.at("rows").get<int>();
    a.cols = w.at("cols").get<int>();
    a.data = read_f32(dir / w.at("file").get<std::string>(),
                      static_cast<std::size_t>(a.rows) * static_cast<std::size_t>(a.cols));
    c.weights.push_back(std::move(a));
  }
  return c;
}

}  // namespace hemo::io
