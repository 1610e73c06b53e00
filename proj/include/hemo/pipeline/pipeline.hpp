#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "hemo/core/types.hpp"
#include "hemo/cvae/cvae.hpp"
#include "hemo/npe/npe.hpp"

namespace hemo::pipeline {

// Hybrid predictor: PPG -> m plausible APWs (cVAE) -> k posterior draws per
// APW (NPE) -> aggregate over m*k samples.
struct HybridModel {
  std::shared_ptr<cvae::CvaeModel> translator;
  std::shared_ptr<npe::NpeModel> posterior;
  int m = 10;
  int k = 20;

  void validate() const;
};

enum class BaselineKind { ApwDirect, PpgWindkessel, PpgSupervised, DetTranslator };

std::string baseline_name(BaselineKind k);
BaselineKind baseline_from(const std::string& name);

struct PredictOutcome {
  bool rejected = false;  // failed quality check; distinct from a failure
  PredictionResult result;
};

// All m*k posterior samples in draw order (the enumeration the aggregate is
// checked against). CO is derived per sample inside ParamVector.
std::vector<ParamVector> predict_samples(const WaveformSegment& ppg,
                                         const HybridModel& model,
                                         std::uint64_t seed);

// Population mean/std over the samples for (hr, sv, pft, svr, co).
PredictionResult aggregate_samples(const std::vector<ParamVector>& samples,
                                   int m, int k);

PredictOutcome predict(const WaveformSegment& ppg, const HybridModel& model,
                       std::uint64_t seed);

struct BaselineModels {
  std::shared_ptr<npe::NpeModel> npe;             // trained on in-silico APWs
  std::shared_ptr<npe::NpeModel> npe_windkessel;  // trained on in-silico Windkessel PPGs
  std::shared_ptr<npe::NpeModel> npe_supervised;  // trained on labeled PPGs
  std::shared_ptr<cvae::DetModel> det;
  int m = 10;
  int k = 20;
};

// APW_DIRECT takes the true APW; the PPG baselines take the PPG. All
// aggregate m*k samples so uncertainty magnitudes stay comparable.
PredictOutcome predict_baseline(BaselineKind kind, const WaveformSegment& input,
                                const BaselineModels& models, std::uint64_t seed);

// Descending predicted std of the named parameter (hr, sv, co or svr), ties
// broken by segment index. Quality-rejected segments rank first (infinite
// uncertainty).
std::vector<std::pair<int, double>> rank_by_uncertainty(
    const std::vector<WaveformSegment>& segments, const HybridModel& model,
    Report param, std::uint64_t seed);

// Per-segment predictions over subject series, one row per segment.
struct SeriesPrediction {
  std::string subject;
  double timestamp_s = 0.0;
  bool rejected = false;
  PredictionResult result;
};

template <class PredictFn>
std::vector<SeriesPrediction> predict_series(
    const std::vector<SubjectSeries>& subjects, std::uint64_t seed,
    PredictFn&& fn) {
  std::vector<SeriesPrediction> rows;
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    for (std::size_t ri = 0; ri < subjects[si].records.size(); ++ri) {
      const std::uint64_t rec_seed =
          derive_seed(seed, {seed_tag("series"), si, ri});
      SeriesPrediction row;
      row.subject = subjects[si].subject_id;
      row.timestamp_s = subjects[si].records[ri].timestamp_s;
      const PredictOutcome out = fn(subjects[si].records[ri], rec_seed);
      row.rejected = out.rejected;
      row.result = out.result;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_predictions_csv(const std::vector<SeriesPrediction>& rows,
                           const std::filesystem::path& path);
std::vector<SeriesPrediction> read_predictions_csv(const std::filesystem::path& path);

}  // namespace hemo::pipeline

#include "hemo/eval/eval.hpp"

namespace hemo::pipeline {

// Joins predictions to labeled truth on (subject, timestamp), drops
// rejected segments, and scores the four reported biomarkers (hr, sv, svr,
// co) per subject: EMA-smoothed Spearman trend correlation plus raw MAE.
std::vector<eval::ScoreRow> score_predictions(
    const std::vector<SubjectSeries>& truth,
    const std::vector<SeriesPrediction>& preds, const std::string& method,
    std::uint64_t run_seed, int window = 16);

}  // namespace hemo::pipeline
