#pragma once

#include <json.hpp>
#include <vector>

#include "hemo/core/io.hpp"
#include "hemo/core/types.hpp"
#include "hemo/nn/adam.hpp"
#include "hemo/nn/layers.hpp"
#include "hemo/nn/train.hpp"
#include "hemo/npe/flow.hpp"

namespace hemo::npe {

struct NpeConfig {
  int flow_steps = 3;
  int embedding_dim = 140;
  double lr = 0.0003;
  int batch_size = 256;
  int max_epochs = 50;
  double val_fraction = 0.2;
  int patience = 20;
  int mlp_hidden = 256;   // embedding head hidden width
  int flow_hidden = 128;  // conditioner hidden width
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static NpeConfig from_json(const nlohmann::json& j);
};

// 1D-CNN encoder mapping a normalized APW segment to the conditioning
// vector: five stride-2 convolutions (channels 40, 40, 40, 20, 10, kernel 3,
// no padding) with ReLU, a max-pool after the third, then a two-layer MLP
// head. Length chain 1000 -> 499 -> 249 -> 124 -> 62 -> 30 -> 14.
class EmbedNet {
 public:
  EmbedNet() = default;
  EmbedNet(const NpeConfig& cfg, Rng& rng);

  nn::Mat<float> forward(const nn::Batch<float>& x, bool train);
  void backward(const nn::Mat<float>& demb);
  void collect(std::vector<nn::ParamRef<float>>& out);

  static constexpr int kFlatChannels = 10;
  static constexpr int kFlatLen = 14;

 private:
  nn::Conv1d<float> c1_, c2_, c3_, c4_, c5_;
  nn::LeakyRelu<float> r1_{0.0}, r2_{0.0}, r3_{0.0}, r4_{0.0}, r5_{0.0}, rh_{0.0};
  nn::MaxPool1d<float> pool_{2};
  nn::Linear<float> h1_, h2_;
};

struct FlowState {
  Eigen::Vector4d z;
  double log_det = 0.0;
};

class NpeModel {
 public:
  NpeModel() = default;
  NpeModel(const NpeConfig& cfg, std::uint64_t init_seed);

  // Normalized segment (values in [0,1], length 1000) -> 140-vector.
  Eigen::VectorXd encode_apw(const WaveformSegment& apw_normalized);

  // theta must already be standardized by the model statistics.
  FlowState flow_forward(const Eigen::Vector4d& theta_std,
                         const Eigen::VectorXd& embedding);
  Eigen::Vector4d flow_inverse(const Eigen::Vector4d& z,
                               const Eigen::VectorXd& embedding) const;

  // log p(theta | apw) in raw parameter units, including the
  // standardization Jacobian correction.
  double log_prob(const ParamVector& theta, const WaveformSegment& apw);

  // k draws: z ~ N(0, I) -> flow inverse -> de-standardize. Draw j uses the
  // counter-derived stream (seed, "npe.draw", j).
  std::vector<ParamVector> sample_posterior(const WaveformSegment& apw, int k,
                                            std::uint64_t seed);

  Eigen::Vector4d standardize(const ParamVector& t) const;
  ParamVector destandardize(const Eigen::Vector4d& v) const;

  std::vector<nn::ParamRef<float>> float_params();
  std::vector<nn::ParamRef<double>> double_params();

  io::Checkpoint to_checkpoint(const nlohmann::json& metrics = {}) const;
  static NpeModel from_checkpoint(const io::Checkpoint& ckpt);

  NpeConfig cfg;
  EmbedNet embed;
  CondFlow flow;
  Eigen::Vector4d std_mean = Eigen::Vector4d::Zero();
  Eigen::Vector4d std_scale = Eigen::Vector4d::Ones();
};

// Min-max normalized single-channel batch from records' APWs.
nn::Batch<float> normalized_apw_batch(const std::vector<LabeledSimRecord>& records,
                                      const std::vector<int>& idx,
                                      bool use_windkessel_ppg = false);

// Mean negative log posterior density of the standardized parameters,
// -mean[log N(z; 0, I) + log_det], evaluated without gradients.
double npe_loss(NpeModel& model, const std::vector<LabeledSimRecord>& records,
                bool use_windkessel_ppg = false);

struct NpeTrainResult {
  NpeModel model;
  io::Checkpoint checkpoint;
  nn::TrainLog log;
};

// Maximum-likelihood training with a validation split, early stopping, and
// best-checkpoint restore. Standardization statistics come from the
// training split. With use_windkessel_ppg the records' ppg_wk channel is
// the conditioning signal instead of the APW (the PPG-Windkessel baseline).
// When external_val is given the whole record set trains and validation
// runs on those records instead (subject-separated validation).
NpeTrainResult train_npe(const std::vector<LabeledSimRecord>& records,
                         const NpeConfig& cfg, bool use_windkessel_ppg = false,
                         const std::vector<LabeledSimRecord>* external_val = nullptr);

}  // namespace hemo::npe
