#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hemo {

inline constexpr int kSegmentSamples = 1000;
inline constexpr double kFsHz = 125.0;
inline constexpr double kSegmentSeconds = 8.0;

// Free parameters inferred by the posterior model, in this fixed order
// everywhere (serialization, flows, reports).
enum class Param : int { Hr = 0, Sv = 1, Pft = 2, Svr = 3 };
inline constexpr int kNumParams = 4;

// Reported quantities: the four free parameters plus derived cardiac output.
enum class Report : int { Hr = 0, Sv = 1, Pft = 2, Svr = 3, Co = 4 };
inline constexpr int kNumReports = 5;

inline const char* param_name(int i) {
  static const char* names[kNumReports] = {"hr", "sv", "pft", "svr", "co"};
  return names[i];
}

// Physiological parameter vector: heart rate [beats/min], stroke volume [mL],
// peak flow time [s], systemic vascular resistance [dyn.s/cm^5].
struct ParamVector {
  double hr = 0.0;
  double sv = 0.0;
  double pft = 0.0;
  double svr = 0.0;

  // Cardiac output [L/min], derived, never inferred directly.
  double co() const { return hr * sv / 1000.0; }
  // Mean arterial pressure [mmHg] from the conventional resistance relation
  // SVR = 80 * MAP / CO (venous pressure neglected).
  double map_mmhg() const { return co() * svr / 80.0; }

  Eigen::Vector4d to_vector() const { return {hr, sv, pft, svr}; }
  static ParamVector from_vector(const Eigen::Vector4d& v) {
    return {v[0], v[1], v[2], v[3]};
  }

  bool finite_positive() const {
    for (double x : {hr, sv, pft, svr}) {
      if (!std::isfinite(x) || x <= 0.0) return false;
    }
    return true;
  }
};

enum class WaveKind { Apw, Ppg };

// One 8 s segment at 125 Hz. Samples are stored as float32, the on-disk
// dataset precision; all downstream math promotes to double.
struct WaveformSegment {
  Eigen::VectorXf samples;
  WaveKind kind = WaveKind::Apw;
  float fs_hz = static_cast<float>(kFsHz);

  int size() const { return static_cast<int>(samples.size()); }
  Eigen::VectorXd as_double() const { return samples.cast<double>(); }

  static WaveformSegment from_double(const Eigen::VectorXd& x, WaveKind kind) {
    WaveformSegment s;
    s.samples = x.cast<float>();
    s.kind = kind;
    return s;
  }
};

inline void check_segment_length(const WaveformSegment& s) {
  if (s.size() != kSegmentSamples) {
    throw std::invalid_argument("segment length " + std::to_string(s.size()) +
                                " != " + std::to_string(kSegmentSamples));
  }
}

// Temporally aligned APW/PPG pair from the same acquisition window.
struct PairedSegment {
  WaveformSegment apw;
  WaveformSegment ppg;
  std::optional<std::string> subject_id;
  std::optional<double> timestamp_s;
};

// One simulator draw: parameters, the synthesized APW, optionally the
// Windkessel-derived PPG, and the per-record seed that reproduces the APW.
struct LabeledSimRecord {
  ParamVector theta;
  WaveformSegment apw;
  std::optional<WaveformSegment> ppg_wk;
  std::uint64_t seed = 0;
};

struct SeriesRecord {
  double timestamp_s = 0.0;
  WaveformSegment ppg;
  std::optional<WaveformSegment> apw;
  std::optional<ParamVector> theta_true;
};

// Time-ordered labeled segments for one subject, for trend evaluation.
struct SubjectSeries {
  std::string subject_id;
  std::vector<SeriesRecord> records;

  void check_invariants() const {
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (!(records[i].timestamp_s > records[i - 1].timestamp_s)) {
        throw std::invalid_argument("subject " + subject_id +
                                    ": timestamps not strictly increasing");
      }
    }
  }
};

// Posterior summary over m*k samples: per-report-parameter mean and standard
// deviation in parameter units (hr, sv, pft, svr, co).
struct PredictionResult {
  Eigen::Matrix<double, kNumReports, 1> mean;
  Eigen::Matrix<double, kNumReports, 1> stddev;
  int m = 0;
  int k = 0;

  double mean_of(Report r) const { return mean[static_cast<int>(r)]; }
  double std_of(Report r) const { return stddev[static_cast<int>(r)]; }
};

}  // namespace hemo
