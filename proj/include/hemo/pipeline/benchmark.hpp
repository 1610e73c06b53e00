#pragma once

#include <cstdint>
#include <vector>

#include "hemo/core/types.hpp"
#include "hemo/insilico/insilico.hpp"
#include "hemo/sigproc/sigproc.hpp"

namespace hemo::pipeline {

// Ambiguous synthetic benchmark: evaluation subjects pair simulated APWs
// with PPGs produced by a subject-specific non-Windkessel transfer (gain,
// delay, smooth monotone nonlinearity, smoothing kernel, own noise), so a
// PPG maps to many physiologically plausible APWs.
struct TransferRanges {
  std::array<double, 2> gain{0.6, 1.8};
  std::array<double, 2> delay_s{0.02, 0.08};
  std::array<double, 2> nl_beta{-0.3, 0.4};   // |beta|*gamma < 1 keeps it monotone
  std::array<double, 2> nl_gamma{0.8, 2.2};
  std::array<double, 2> smooth_s{0.008, 0.024};
  std::array<double, 2> noise_sigma{0.01, 0.04};
};

struct SubjectTransfer {
  double gain = 1.0;
  double delay_s = 0.04;
  double beta = 0.0;
  double gamma = 1.0;
  double smooth_s = 0.012;
  double noise_sigma = 0.02;
};

SubjectTransfer draw_transfer(const TransferRanges& ranges, std::uint64_t seed);

// Applies the transfer to an extended APW trace (margin samples on both
// sides absorb the delay and smoothing tails). Same length as the input.
Eigen::VectorXd apply_transfer(const Eigen::VectorXd& apw_ext,
                               const SubjectTransfer& tr, std::uint64_t noise_seed);

struct BenchmarkSpec {
  int n_subjects = 12;
  int segments_per_subject = 150;
  insilico::PriorSpec prior;
  insilico::NoiseSpec apw_noise;
  sigproc::FilterSpec filter;
  TransferRanges transfer;
};

// Slowly drifting parameters: two superposed sinusoids per component, kept
// strictly inside the prior box.
struct ParamDrift {
  Eigen::Vector4d center, amp1, amp2, period1_s, period2_s, phase1, phase2;
  ParamVector at(double t_s) const;
};

ParamDrift draw_drift(const insilico::PriorSpec& prior, std::uint64_t seed);

std::vector<SubjectSeries> make_eval_subjects(const BenchmarkSpec& spec,
                                              std::uint64_t seed);

// Unlabeled paired (APW, PPG) set for translator training: i.i.d. prior
// draws grouped into pseudo-subjects, each with its own transfer.
std::vector<PairedSegment> make_paired_dataset(int n_pairs, int n_pseudo_subjects,
                                               const BenchmarkSpec& spec,
                                               std::uint64_t seed);

// Labeled PPG records for the PPG-supervised baseline: the conditioning
// slot (apw field) carries the subject's PPG segment.
std::vector<LabeledSimRecord> supervised_records(
    const std::vector<SubjectSeries>& subjects,
    const std::vector<std::string>& include_ids);

}  // namespace hemo::pipeline
