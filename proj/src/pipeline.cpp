#include "hemo/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "hemo/sigproc/sigproc.hpp"

namespace hemo::pipeline {

void HybridModel::validate() const {
  if (!translator || !posterior) {
    throw std::invalid_argument("hybrid model: missing checkpoint");
  }
  if (m < 1 || k < 1) throw std::invalid_argument("hybrid model: m, k >= 1");
}

std::string baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::ApwDirect: return "apw";
    case BaselineKind::PpgWindkessel: return "ppg_windkessel";
    case BaselineKind::PpgSupervised: return "ppg_supervised";
    case BaselineKind::DetTranslator: return "det_translator";
  }
  throw std::invalid_argument("bad baseline kind");
}

BaselineKind baseline_from(const std::string& name) {
  if (name == "apw") return BaselineKind::ApwDirect;
  if (name == "ppg_windkessel") return BaselineKind::PpgWindkessel;
  if (name == "ppg_supervised") return BaselineKind::PpgSupervised;
  if (name == "det_translator") return BaselineKind::DetTranslator;
  throw std::invalid_argument("unknown baseline kind '" + name + "'");
}

std::vector<ParamVector> predict_samples(const WaveformSegment& ppg,
                                         const HybridModel& model,
                                         std::uint64_t seed) {
  model.validate();
  const auto apws = model.translator->sample_apw(
      ppg, model.m, derive_seed(seed, "predict.apw"));
  std::vector<ParamVector> samples;
  samples.reserve(static_cast<std::size_t>(model.m) *
                  static_cast<std::size_t>(model.k));
  for (int j = 0; j < model.m; ++j) {
    const auto draws = model.posterior->sample_posterior(
        apws[static_cast<std::size_t>(j)], model.k,
        derive_seed(seed, "predict.theta", static_cast<std::uint64_t>(j)));
    samples.insert(samples.end(), draws.begin(), draws.end());
  }
  return samples;
}

PredictionResult aggregate_samples(const std::vector<ParamVector>& samples,
                                   int m, int k) {
  if (samples.empty()) throw std::invalid_argument("aggregate: no samples");
  if (static_cast<int>(samples.size()) != m * k) {
    throw std::invalid_argument("aggregate: sample count != m*k");
  }
  const double n = static_cast<double>(samples.size());
  PredictionResult r;
  r.m = m;
  r.k = k;
  r.mean.setZero();
  r.stddev.setZero();
  for (const auto& s : samples) {
    Eigen::Matrix<double, kNumReports, 1> v;
    v << s.hr, s.sv, s.pft, s.svr, s.co();
    r.mean += v;
  }
  r.mean /= n;
  for (const auto& s : samples) {
    Eigen::Matrix<double, kNumReports, 1> v;
    v << s.hr, s.sv, s.pft, s.svr, s.co();
    r.stddev += (v - r.mean).cwiseProduct(v - r.mean);
  }
  r.stddev = (r.stddev / n).cwiseSqrt();
  return r;
}

PredictOutcome predict(const WaveformSegment& ppg, const HybridModel& model,
                       std::uint64_t seed) {
  model.validate();
  PredictOutcome out;
  if (!sigproc::quality_check(ppg)) {
    out.rejected = true;
    return out;
  }
  out.result = aggregate_samples(predict_samples(ppg, model, seed), model.m,
                                 model.k);
  return out;
}

PredictOutcome predict_baseline(BaselineKind kind, const WaveformSegment& input,
                                const BaselineModels& models, std::uint64_t seed) {
  if (models.m < 1 || models.k < 1) {
    throw std::invalid_argument("baseline models: m, k >= 1");
  }
  PredictOutcome out;
  if (!sigproc::quality_check(input)) {
    out.rejected = true;
    return out;
  }
  const int total = models.m * models.k;
  std::vector<ParamVector> samples;
  switch (kind) {
    case BaselineKind::ApwDirect: {
      if (!models.npe) throw std::invalid_argument("apw baseline: missing NPE model");
      if (input.kind != WaveKind::Apw) {
        throw std::invalid_argument("apw baseline expects an APW segment");
      }
      samples = models.npe->sample_posterior(input, total,
                                             derive_seed(seed, "baseline.apw"));
      break;
    }
    case BaselineKind::PpgWindkessel: {
      if (!models.npe_windkessel) {
        throw std::invalid_argument("windkessel baseline: missing model");
      }
      samples = models.npe_windkessel->sample_posterior(
          input, total, derive_seed(seed, "baseline.wk"));
      break;
    }
    case BaselineKind::PpgSupervised: {
      if (!models.npe_supervised) {
        throw std::invalid_argument("supervised baseline: missing model");
      }
      samples = models.npe_supervised->sample_posterior(
          input, total, derive_seed(seed, "baseline.sup"));
      break;
    }
    case BaselineKind::DetTranslator: {
      if (!models.det || !models.npe) {
        throw std::invalid_argument("det baseline: missing model");
      }
      const WaveformSegment apw_hat = models.det->translate(input);
      samples = models.npe->sample_posterior(apw_hat, total,
                                             derive_seed(seed, "baseline.det"));
      break;
    }
  }
  out.result = aggregate_samples(samples, models.m, models.k);
  return out;
}

std::vector<std::pair<int, double>> rank_by_uncertainty(
    const std::vector<WaveformSegment>& segments, const HybridModel& model,
    Report param, std::uint64_t seed) {
  if (param == Report::Pft) {
    throw std::invalid_argument("rank_by_uncertainty: param must be hr, sv, co or svr");
  }
  // One shared draw stream: identical segments receive identical
  // predictions, so their ranks tie and keep index order.
  const std::uint64_t draw_seed = derive_seed(seed, "rank");
  std::vector<std::pair<int, double>> out;
  out.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto o = predict(segments[i], model, draw_seed);
    const double s = o.rejected ? std::numeric_limits<double>::infinity()
                                : o.result.std_of(param);
    out.emplace_back(static_cast<int>(i), s);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

void write_predictions_csv(const std::vector<SeriesPrediction>& rows,
                           const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "subject,timestamp,rejected";
  for (int p = 0; p < kNumReports; ++p) {
    f << ',' << param_name(p) << "_mean," << param_name(p) << "_std";
  }
  f << '\n';
  f.precision(10);
  for (const auto& r : rows) {
    f << r.subject << ',' << r.timestamp_s << ',' << (r.rejected ? 1 : 0);
    for (int p = 0; p < kNumReports; ++p) {
      if (r.rejected) {
        f << ",,";
      } else {
        f << ',' << r.result.mean[p] << ',' << r.result.stddev[p];
      }
    }
    f << '\n';
  }
}

std::vector<eval::ScoreRow> score_predictions(
    const std::vector<SubjectSeries>& truth,
    const std::vector<SeriesPrediction>& preds, const std::string& method,
    std::uint64_t run_seed, int window) {
  // Reported biomarkers and where to find them.
  struct ParamSpec {
    const char* name;
    int report_idx;
  };
  const ParamSpec params[] = {{"hr", 0}, {"sv", 1}, {"svr", 3}, {"co", 4}};

  std::vector<eval::ScoreRow> rows;
  for (const auto& subject : truth) {
    // Collect surviving, truth-aligned predictions in time order.
    std::vector<const SeriesPrediction*> hits;
    for (const auto& rec : subject.records) {
      for (const auto& p : preds) {
        if (p.subject == subject.subject_id && !p.rejected &&
            std::abs(p.timestamp_s - rec.timestamp_s) < 1e-6) {
          hits.push_back(&p);
          break;
        }
      }
    }
    for (const auto& ps : params) {
      std::vector<double> pred_series, true_series;
      std::size_t hit_i = 0;
      for (const auto& rec : subject.records) {
        if (hit_i < hits.size() &&
            std::abs(hits[hit_i]->timestamp_s - rec.timestamp_s) < 1e-6) {
          const double v = hits[hit_i]->result.mean[ps.report_idx];
          if (std::isfinite(v) && rec.theta_true) {
            pred_series.push_back(v);
            const ParamVector& t = *rec.theta_true;
            switch (ps.report_idx) {
              case 0: true_series.push_back(t.hr); break;
              case 1: true_series.push_back(t.sv); break;
              case 3: true_series.push_back(t.svr); break;
              default: true_series.push_back(t.co()); break;
            }
          }
          ++hit_i;
        }
      }
      eval::ScoreRow row;
      row.method = method;
      row.param = ps.name;
      row.subject = subject.subject_id;
      row.run_seed = run_seed;
      if (pred_series.size() >= 3) {
        row.rho = eval::per_subject_trend_score(pred_series, true_series, window);
      }
      if (!pred_series.empty()) {
        row.mae = eval::per_subject_mae(pred_series, true_series);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<SeriesPrediction> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty csv: " + path.string());
  std::vector<SeriesPrediction> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    SeriesPrediction r;
    std::getline(ss, cell, ',');
    r.subject = cell;
    std::getline(ss, cell, ',');
    r.timestamp_s = std::stod(cell);
    std::getline(ss, cell, ',');
    r.rejected = cell == "1";
    for (int p = 0; p < kNumReports; ++p) {
      std::getline(ss, cell, ',');
      r.result.mean[p] = cell.empty() ? std::nan("") : std::stod(cell);
      std::getline(ss, cell, ',');
      r.result.stddev[p] = cell.empty() ? std::nan("") : std::stod(cell);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace hemo::pipeline
