#pragma once

#include <json.hpp>
#include <vector>

#include "hemo/core/io.hpp"
#include "hemo/core/types.hpp"
#include "hemo/nn/adam.hpp"
#include "hemo/nn/layers.hpp"
#include "hemo/nn/train.hpp"

namespace hemo::cvae {

using FMat = nn::Mat<float>;
using FBatch = nn::Batch<float>;

struct CvaeConfig {
  int latent_dim = 128;
  double lr = 0.0005;
  int batch_size = 256;
  int max_epochs = 300;
  int patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static CvaeConfig from_json(const nlohmann::json& j);
};

// Encoder: two-channel (APW, PPG) input through four stride-2 convolutions
// (kernel 5, padding 2, channels 32/64/128/256), each BatchNorm + LeakyReLU,
// then linear heads for mean and log-variance. Length chain
// 1000 -> 500 -> 250 -> 125 -> 63, flattened to 256*63 = 16128.
class Encoder {
 public:
  Encoder() = default;
  Encoder(int latent_dim, Rng& rng);

  std::pair<FMat, FMat> forward(const FBatch& x, bool train);
  void backward(const FMat& dmu, const FMat& dlogvar);
  void collect(std::vector<nn::ParamRef<float>>& out, const std::string& prefix);

  static constexpr int kFlatChannels = 256;
  static constexpr int kFlatLen = 63;

 private:
  nn::Conv1d<float> c1_, c2_, c3_, c4_;
  nn::BatchNorm1d<float> b1_, b2_, b3_, b4_;
  nn::LeakyRelu<float> r1_, r2_, r3_, r4_;
  nn::Linear<float> mu_, logvar_;
};

// PPG feature extractor: four stride-2 convolutions (kernel 5, padding 2,
// channels 16/32/64/128) with LeakyReLU, flattened (128*63 = 8064) and
// projected to the latent dimensionality.
class PpgFeatureNet {
 public:
  PpgFeatureNet() = default;
  PpgFeatureNet(int out_dim, Rng& rng);

  FMat forward(const FBatch& ppg, bool train);
  void backward(const FMat& dfeat);
  void collect(std::vector<nn::ParamRef<float>>& out, const std::string& prefix);

  static constexpr int kFlatChannels = 128;
  static constexpr int kFlatLen = 63;

 private:
  nn::Conv1d<float> c1_, c2_, c3_, c4_;
  nn::LeakyRelu<float> r1_, r2_, r3_, r4_;
  nn::Linear<float> head_;
};

// Linear expansion to 256 channels of length 63, then four stride-2
// transposed convolutions (kernel 5, padding 2, output padding 1, channels
// 128/64/32/1), each BatchNorm + LeakyReLU; 63 -> 126 -> 252 -> 504 -> 1008,
// cropped to 1000.
class TconvStack {
 public:
  TconvStack() = default;
  TconvStack(int in_dim, Rng& rng);

  FBatch forward(const FMat& in, bool train);
  FMat backward(const FBatch& dxhat);
  void collect(std::vector<nn::ParamRef<float>>& out, const std::string& prefix);

  static constexpr int kSeedChannels = 256;
  static constexpr int kSeedLen = 63;
  static constexpr int kRawLen = 1008;

 private:
  nn::Linear<float> fuse_;
  nn::ConvTranspose1d<float> t1_, t2_, t3_, t4_;
  nn::BatchNorm1d<float> b1_, b2_, b3_, b4_;
  nn::LeakyRelu<float> r1_, r2_, r3_, r4_;
};

class CvaeModel {
 public:
  CvaeModel() = default;
  CvaeModel(const CvaeConfig& cfg, std::uint64_t init_seed);

  // Batched training-path forward/backward. Inputs are min-max normalized
  // segments; the encoder consumes a two-channel (APW, PPG) batch.
  std::pair<FMat, FMat> encode(const FBatch& apw_ppg, bool train);
  FBatch decode(const FMat& z, const FBatch& ppg, bool train);
  FMat decoder_backward(const FBatch& dxhat);  // returns dz
  void encoder_backward(const FMat& dmu, const FMat& dlogvar);

  // Single-segment ops on normalized segments.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> encode_one(
      const WaveformSegment& apw_norm, const WaveformSegment& ppg_norm);
  WaveformSegment decode_one(const Eigen::VectorXd& z,
                             const WaveformSegment& ppg_norm);

  // m decoded APWs from latent prior draws; the PPG is normalized
  // internally. Draw j uses stream (seed, "cvae.draw", j).
  std::vector<WaveformSegment> sample_apw(const WaveformSegment& ppg, int m,
                                          std::uint64_t seed);

  std::vector<nn::ParamRef<float>> params();
  io::Checkpoint to_checkpoint(const nlohmann::json& metrics = {}) const;
  static CvaeModel from_checkpoint(const io::Checkpoint& ckpt);

  CvaeConfig cfg;
  Encoder encoder;
  PpgFeatureNet ppg_feat;
  TconvStack tconv;
};

// Closed-form KL(N(mu, diag(exp(logvar))) || N(0, I)).
double kl_standard_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);
Eigen::VectorXd kl_grad_mu(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);
Eigen::VectorXd kl_grad_logvar(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);

// Mean ELBO loss (reconstruction 0.5*sum-squared-error + closed-form KL)
// over a batch of normalized pairs, evaluated without gradients using one
// reparameterization draw per record from eps_seed.
double elbo_loss(CvaeModel& model, const std::vector<PairedSegment>& batch,
                 std::uint64_t eps_seed = 0);

struct CvaeTrainResult {
  CvaeModel model;
  io::Checkpoint checkpoint;
  nn::TrainLog log;
};

CvaeTrainResult train_cvae(const std::vector<PairedSegment>& pairs,
                           const CvaeConfig& cfg);

// Deterministic PPG -> APW translator: the decoder's PPG path plus the
// transposed-convolution stack, no latent, trained with plain MSE.
struct DetConfig {
  double lr = 0.0005;
  int batch_size = 256;
  int max_epochs = 300;
  int patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DetConfig from_json(const nlohmann::json& j);
};

class DetModel {
 public:
  DetModel() = default;
  DetModel(const DetConfig& cfg, std::uint64_t init_seed);

  FBatch forward(const FBatch& ppg, bool train);
  void backward(const FBatch& dxhat);
  WaveformSegment translate(const WaveformSegment& ppg);  // normalizes internally

  std::vector<nn::ParamRef<float>> params();
  io::Checkpoint to_checkpoint(const nlohmann::json& metrics = {}) const;
  static DetModel from_checkpoint(const io::Checkpoint& ckpt);

  DetConfig cfg;
  PpgFeatureNet ppg_feat;
  TconvStack tconv;
};

struct DetTrainResult {
  DetModel model;
  io::Checkpoint checkpoint;
  nn::TrainLog log;
};

DetTrainResult train_det_translator(const std::vector<PairedSegment>& pairs,
                                    const DetConfig& cfg);

// Normalized float batches from paired records.
FBatch normalized_two_channel_batch(const std::vector<PairedSegment>& pairs,
                                    const std::vector<int>& idx);
FBatch normalized_ppg_batch(const std::vector<PairedSegment>& pairs,
                            const std::vector<int>& idx);
FBatch normalized_apw_target_batch(const std::vector<PairedSegment>& pairs,
                                   const std::vector<int>& idx);

}  // namespace hemo::cvae
