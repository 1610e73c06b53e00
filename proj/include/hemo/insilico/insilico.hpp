#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "hemo/core/types.hpp"
#include "hemo/sigproc/sigproc.hpp"

namespace hemo::insilico {

// Uniform prior box over the free parameters. The ranges double as the
// simulator's validity domain.
struct PriorSpec {
  std::array<double, 2> hr{45.0, 160.0};    // beats/min
  std::array<double, 2> sv{40.0, 130.0};    // mL
  std::array<double, 2> pft{0.08, 0.20};    // s
  std::array<double, 2> svr{700.0, 2200.0}; // dyn.s/cm^5

  void validate() const;
  bool contains(const ParamVector& theta) const;
  std::array<double, 2> range(int param) const;
};

struct NoiseSpec {
  double sigma_gauss = 2.0;  // mmHg
  double sigma_red = 2.0;    // mmHg
  double red_exponent = -2.0;
  std::uint64_t seed = 0;
};

// Arterial Windkessel constants shared by the APW synthesizer and the PPG
// model. Compliance in mL/mmHg; 1 mmHg = 1333.22 dyn/cm^2.
inline constexpr double kCompliance = 1.1;
inline constexpr double kDynPerMmhg = 1333.22;

inline double windkessel_tau_s(double svr) {
  return svr / kDynPerMmhg * kCompliance;
}

std::vector<ParamVector> sample_prior(int n, const PriorSpec& prior,
                                      std::uint64_t seed);

// Beat-template APW synthesizer at 125 Hz, any length. The shape seed
// drives the beat-grid phase and the per-beat period/width/amplitude
// variability.
Eigen::VectorXd synth_apw(const ParamVector& theta, int n_samples,
                          std::uint64_t shape_seed);

// Mean pressure targeted by the synthesizer for a given theta [mmHg].
double target_map_mmhg(const ParamVector& theta);

// Public 8 s segment op; the beat phase is drawn from the seed.
WaveformSegment simulate_apw(const ParamVector& theta, std::uint64_t seed);

// First-order relaxation toward the drive signal with time constant tau:
// P' = (drive - P) / tau, integrated exactly for piecewise-constant drive.
Eigen::VectorXd windkessel_response(const Eigen::VectorXd& drive, double tau_s,
                                    double fs = kFsHz);

// Two-element Windkessel PPG: RC response to the APW, min-max normalized to
// [0, 1]. A constant response (degenerate input) yields a flat zero segment.
WaveformSegment simulate_ppg_windkessel(const ParamVector& theta,
                                        const WaveformSegment& apw);

// wave + white Gaussian noise (sigma_gauss) + spectrally shaped red noise
// (power ~ f^red_exponent, rescaled to sample std sigma_red).
Eigen::VectorXd add_measurement_noise(const Eigen::VectorXd& wave,
                                      const NoiseSpec& noise);
WaveformSegment add_measurement_noise(const WaveformSegment& wave,
                                      const NoiseSpec& noise);

struct BpRange {
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr BpRange kSbpRange{70.0, 210.0};
inline constexpr BpRange kDbpRange{35.0, 130.0};

// Keeps records whose systolic (max of beat maxima) and diastolic (min of
// beat minima) pressures fall inside the ranges; order preserved.
std::vector<LabeledSimRecord> filter_anomalous_bp(
    const std::vector<LabeledSimRecord>& records, BpRange sbp = kSbpRange,
    BpRange dbp = kDbpRange);

struct BuildOptions {
  int n = 1000;
  PriorSpec prior;
  NoiseSpec noise;            // noise.seed ignored; per-record streams derive from seed
  sigproc::FilterSpec filter; // applied with the segment mean restored
  std::uint64_t seed = 0;
  bool with_windkessel_ppg = false;
};

// One record of the in-silico pipeline for a fixed (theta, record seed):
// synth -> noise -> bandpass with mean restored [-> Windkessel PPG].
LabeledSimRecord make_record(const ParamVector& theta, std::uint64_t record_seed,
                             const NoiseSpec& noise,
                             const sigproc::FilterSpec& filter,
                             bool with_windkessel_ppg);

// sample_prior -> simulate_apw -> add_measurement_noise -> bandpass ->
// filter_anomalous_bp. Returns <= n records, each reproducible from its
// stored seed via make_record.
std::vector<LabeledSimRecord> build_insilico_dataset(const BuildOptions& opts);

}  // namespace hemo::insilico
