#include "hemo/cvae/cvae.hpp"

#include <cmath>
#include <stdexcept>

#include "hemo/sigproc/sigproc.hpp"

namespace hemo::cvae {

using nlohmann::json;

void CvaeConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size < 1 || max_epochs < 0 || patience < 1) {
    throw std::invalid_argument("bad cvae training config");
  }
}

json CvaeConfig::to_json() const {
  return json{{"latent_dim", latent_dim}, {"lr", lr},
              {"batch_size", batch_size}, {"max_epochs", max_epochs},
              {"patience", patience},     {"seed", seed}};
}

CvaeConfig CvaeConfig::from_json(const json& j) {
  CvaeConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void DetConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size < 1 || max_epochs < 0 || patience < 1) {
    throw std::invalid_argument("bad det training config");
  }
}

json DetConfig::to_json() const {
  return json{{"lr", lr}, {"batch_size", batch_size},
              {"max_epochs", max_epochs}, {"patience", patience}, {"seed", seed}};
}

DetConfig DetConfig::from_json(const json& j) {
  DetConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Encoder::Encoder(int latent_dim, Rng& rng) {
  c1_ = nn::Conv1d<float>(2, 32, 5, 2, 2, rng);
  c2_ = nn::Conv1d<float>(32, 64, 5, 2, 2, rng);
  c3_ = nn::Conv1d<float>(64, 128, 5, 2, 2, rng);
  c4_ = nn::Conv1d<float>(128, 256, 5, 2, 2, rng);
  b1_ = nn::BatchNorm1d<float>(32);
  b2_ = nn::BatchNorm1d<float>(64);
  b3_ = nn::BatchNorm1d<float>(128);
  b4_ = nn::BatchNorm1d<float>(256);
  mu_ = nn::Linear<float>(kFlatChannels * kFlatLen, latent_dim, rng);
  logvar_ = nn::Linear<float>(kFlatChannels * kFlatLen, latent_dim, rng);
}

std::pair<FMat, FMat> Encoder::forward(const FBatch& x, bool train) {
  auto a = r1_.forward(b1_.forward(c1_.forward(x, train), train), train);
  a = r2_.forward(b2_.forward(c2_.forward(a, train), train), train);
  a = r3_.forward(b3_.forward(c3_.forward(a, train), train), train);
  a = r4_.forward(b4_.forward(c4_.forward(a, train), train), train);
  const FMat flat = nn::flatten_batch(a);
  return {mu_.forward(flat, train), logvar_.forward(flat, train)};
}

void Encoder::backward(const FMat& dmu, const FMat& dlogvar) {
  FMat dflat = mu_.backward(dmu) + logvar_.backward(dlogvar);
  FBatch d = nn::unflatten_batch(dflat, kFlatChannels, kFlatLen);
  d = c4_.backward(b4_.backward(r4_.backward(d)));
  d = c3_.backward(b3_.backward(r3_.backward(d)));
  d = c2_.backward(b2_.backward(r2_.backward(d)));
  c1_.backward(b1_.backward(r1_.backward(d)));
}

void Encoder::collect(std::vector<nn::ParamRef<float>>& out,
                      const std::string& prefix) {
  c1_.collect(out, prefix + ".c1");
  c2_.collect(out, prefix + ".c2");
  c3_.collect(out, prefix + ".c3");
  c4_.collect(out, prefix + ".c4");
  b1_.collect(out, prefix + ".b1");
  b2_.collect(out, prefix + ".b2");
  b3_.collect(out, prefix + ".b3");
  b4_.collect(out, prefix + ".b4");
  b1_.collect_state(out, prefix + ".b1");
  b2_.collect_state(out, prefix + ".b2");
  b3_.collect_state(out, prefix + ".b3");
  b4_.collect_state(out, prefix + ".b4");
  mu_.collect(out, prefix + ".mu");
  logvar_.collect(out, prefix + ".logvar");
}

PpgFeatureNet::PpgFeatureNet(int out_dim, Rng& rng) {
  c1_ = nn::Conv1d<float>(1, 16, 5, 2, 2, rng);
  c2_ = nn::Conv1d<float>(16, 32, 5, 2, 2, rng);
  c3_ = nn::Conv1d<float>(32, 64, 5, 2, 2, rng);
  c4_ = nn::Conv1d<float>(64, 128, 5, 2, 2, rng);
  head_ = nn::Linear<float>(kFlatChannels * kFlatLen, out_dim, rng);
}

FMat PpgFeatureNet::forward(const FBatch& ppg, bool train) {
  auto a = r1_.forward(c1_.forward(ppg, train), train);
  a = r2_.forward(c2_.forward(a, train), train);
  a = r3_.forward(c3_.forward(a, train), train);
  a = r4_.forward(c4_.forward(a, train), train);
  return head_.forward(nn::flatten_batch(a), train);
}

void PpgFeatureNet::backward(const FMat& dfeat) {
  FBatch d = nn::unflatten_batch(head_.backward(dfeat), kFlatChannels, kFlatLen);
  d = c4_.backward(r4_.backward(d));
  d = c3_.backward(r3_.backward(d));
  d = c2_.backward(r2_.backward(d));
  c1_.backward(r1_.backward(d));
}

void PpgFeatureNet::collect(std::vector<nn::ParamRef<float>>& out,
                            const std::string& prefix) {
  c1_.collect(out, prefix + ".c1");
  c2_.collect(out, prefix + ".c2");
  c3_.collect(out, prefix + ".c3");
  c4_.collect(out, prefix + ".c4");
  head_.collect(out, prefix + ".head");
}

TconvStack::TconvStack(int in_dim, Rng& rng) {
  fuse_ = nn::Linear<float>(in_dim, kSeedChannels * kSeedLen, rng);
  t1_ = nn::ConvTranspose1d<float>(256, 128, 5, 2, 2, 1, rng);
  t2_ = nn::ConvTranspose1d<float>(128, 64, 5, 2, 2, 1, rng);
  t3_ = nn::ConvTranspose1d<float>(64, 32, 5, 2, 2, 1, rng);
  t4_ = nn::ConvTranspose1d<float>(32, 1, 5, 2, 2, 1, rng);
  b1_ = nn::BatchNorm1d<float>(128);
  b2_ = nn::BatchNorm1d<float>(64);
  b3_ = nn::BatchNorm1d<float>(32);
  b4_ = nn::BatchNorm1d<float>(1);
}

FBatch TconvStack::forward(const FMat& in, bool train) {
  FBatch a = nn::unflatten_batch(fuse_.forward(in, train), kSeedChannels, kSeedLen);
  a = r1_.forward(b1_.forward(t1_.forward(a, train), train), train);
  a = r2_.forward(b2_.forward(t2_.forward(a, train), train), train);
  a = r3_.forward(b3_.forward(t3_.forward(a, train), train), train);
  a = r4_.forward(b4_.forward(t4_.forward(a, train), train), train);
  // Crop 1008 -> 1000.
  FBatch out(a.size());
  nn::parallel_chunks(static_cast<int>(a.size()), [&](int, int i) {
    out[static_cast<std::size_t>(i)] =
        a[static_cast<std::size_t>(i)].leftCols(kSegmentSamples);
  });
  return out;
}

FMat TconvStack::backward(const FBatch& dxhat) {
  FBatch d(dxhat.size());
  nn::parallel_chunks(static_cast<int>(dxhat.size()), [&](int, int i) {
    nn::Mat<float> g = nn::Mat<float>::Zero(1, kRawLen);
    g.leftCols(kSegmentSamples) = dxhat[static_cast<std::size_t>(i)];
    d[static_cast<std::size_t>(i)] = std::move(g);
  });
  d = t4_.backward(b4_.backward(r4_.backward(d)));
  d = t3_.backward(b3_.backward(r3_.backward(d)));
  d = t2_.backward(b2_.backward(r2_.backward(d)));
  d = t1_.backward(b1_.backward(r1_.backward(d)));
  return fuse_.backward(nn::flatten_batch(d));
}

void TconvStack::collect(std::vector<nn::ParamRef<float>>& out,
                         const std::string& prefix) {
  fuse_.collect(out, prefix + ".fuse");
  t1_.collect(out, prefix + ".t1");
  t2_.collect(out, prefix + ".t2");
  t3_.collect(out, prefix + ".t3");
  t4_.collect(out, prefix + ".t4");
  b1_.collect(out, prefix + ".b1");
  b2_.collect(out, prefix + ".b2");
  b3_.collect(out, prefix + ".b3");
  b4_.collect(out, prefix + ".b4");
  b1_.collect_state(out, prefix + ".b1");
  b2_.collect_state(out, prefix + ".b2");
  b3_.collect_state(out, prefix + ".b3");
  b4_.collect_state(out, prefix + ".b4");
}

CvaeModel::CvaeModel(const CvaeConfig& config, std::uint64_t init_seed) {
  config.validate();
  cfg = config;
  Rng rng(derive_seed(init_seed, "cvae.init"));
  encoder = Encoder(cfg.latent_dim, rng);
  ppg_feat = PpgFeatureNet(cfg.latent_dim, rng);
  tconv = TconvStack(2 * cfg.latent_dim, rng);
}

std::pair<FMat, FMat> CvaeModel::encode(const FBatch& apw_ppg, bool train) {
  return encoder.forward(apw_ppg, train);
}

FBatch CvaeModel::decode(const FMat& z, const FBatch& ppg, bool train) {
  const FMat feat = ppg_feat.forward(ppg, train);
  FMat cat(feat.rows() + z.rows(), z.cols());
  cat.topRows(feat.rows()) = feat;
  cat.bottomRows(z.rows()) = z;
  return tconv.forward(cat, train);
}

FMat CvaeModel::decoder_backward(const FBatch& dxhat) {
  const FMat dcat = tconv.backward(dxhat);
  ppg_feat.backward(dcat.topRows(cfg.latent_dim));
  return dcat.bottomRows(cfg.latent_dim);
}

void CvaeModel::encoder_backward(const FMat& dmu, const FMat& dlogvar) {
  encoder.backward(dmu, dlogvar);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> CvaeModel::encode_one(
    const WaveformSegment& apw_norm, const WaveformSegment& ppg_norm) {
  check_segment_length(apw_norm);
  check_segment_length(ppg_norm);
  FBatch x(1);
  x[0].resize(2, kSegmentSamples);
  x[0].row(0) = apw_norm.samples.transpose();
  x[0].row(1) = ppg_norm.samples.transpose();
  auto [mu, lv] = encoder.forward(x, false);
  return {mu.col(0).cast<double>(), lv.col(0).cast<double>()};
}

WaveformSegment CvaeModel::decode_one(const Eigen::VectorXd& z,
                                      const WaveformSegment& ppg_norm) {
  if (z.size() != cfg.latent_dim) {
    throw std::invalid_argument("decode: latent dimension mismatch");
  }
  check_segment_length(ppg_norm);
  FBatch ppg(1);
  ppg[0] = ppg_norm.samples.transpose();
  FMat zz(cfg.latent_dim, 1);
  zz.col(0) = z.cast<float>();
  FBatch xhat = decode(zz, ppg, false);
  WaveformSegment out;
  out.samples = xhat[0].row(0).transpose();
  out.kind = WaveKind::Apw;
  return out;
}

std::vector<WaveformSegment> CvaeModel::sample_apw(const WaveformSegment& ppg,
                                                   int m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("sample_apw: m must be >= 1");
  const auto [x, sc] = sigproc::normalize_segment(ppg.as_double());
  FBatch ppg_b(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) ppg_b[static_cast<std::size_t>(i)] = x.transpose().cast<float>();
  FMat z(cfg.latent_dim, m);
  for (int j = 0; j < m; ++j) {
    Rng rng(derive_seed(seed, "cvae.draw", static_cast<std::uint64_t>(j)));
    for (int i = 0; i < cfg.latent_dim; ++i) {
      z(i, j) = static_cast<float>(rng.normal());
    }
  }
  FBatch xhat = decode(z, ppg_b, false);
  std::vector<WaveformSegment> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    out[static_cast<std::size_t>(i)].samples =
        xhat[static_cast<std::size_t>(i)].row(0).transpose();
    out[static_cast<std::size_t>(i)].kind = WaveKind::Apw;
  }
  return out;
}

std::vector<nn::ParamRef<float>> CvaeModel::params() {
  std::vector<nn::ParamRef<float>> out;
  encoder.collect(out, "enc");
  ppg_feat.collect(out, "dec.feat");
  tconv.collect(out, "dec.tconv");
  return out;
}

namespace {

io::Checkpoint checkpoint_from_params(io::ModelKind kind,
                                      std::vector<nn::ParamRef<float>> params,
                                      const json& config, const json& metrics) {
  io::Checkpoint c;
  c.kind = kind;
  c.config = config;
  c.metrics = metrics;
  for (const auto& p : params) {
    io::NamedArray a;
    a.name = p.name;
    a.rows = static_cast<int>(p.value->rows());
    a.cols = static_cast<int>(p.value->cols());
    a.data.resize(static_cast<std::size_t>(p.value->size()));
    Eigen::Map<Eigen::MatrixXf>(a.data.data(), p.value->rows(), p.value->cols()) =
        *p.value;
    c.weights.push_back(std::move(a));
  }
  return c;
}

void params_from_checkpoint(std::vector<nn::ParamRef<float>> params,
                            const io::Checkpoint& ckpt) {
  for (const auto& w : ckpt.weights) {
    bool found = false;
    for (auto& p : params) {
      if (p.name != w.name) continue;
      if (p.value->rows() != w.rows || p.value->cols() != w.cols) {
        throw std::runtime_error("weight shape mismatch: " + w.name);
      }
      *p.value = Eigen::Map<const Eigen::MatrixXf>(w.data.data(), w.rows, w.cols);
      found = true;
      break;
    }
    if (!found) throw std::runtime_error("unknown weight in checkpoint: " + w.name);
  }
}

}  // namespace

io::Checkpoint CvaeModel::to_checkpoint(const json& metrics) const {
  auto& self = const_cast<CvaeModel&>(*this);
  return checkpoint_from_params(io::ModelKind::Cvae, self.params(),
                                cfg.to_json(), metrics);
}

CvaeModel CvaeModel::from_checkpoint(const io::Checkpoint& ckpt) {
  if (ckpt.kind != io::ModelKind::Cvae) {
    throw std::runtime_error("checkpoint is not a CVAE model");
  }
  CvaeModel m(CvaeConfig::from_json(ckpt.config), 0);
  params_from_checkpoint(m.params(), ckpt);
  return m;
}

double kl_standard_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 -
                logvar.array())
                   .sum();
}

Eigen::VectorXd kl_grad_mu(const Eigen::VectorXd& mu, const Eigen::VectorXd&) {
  return mu;
}

Eigen::VectorXd kl_grad_logvar(const Eigen::VectorXd&, const Eigen::VectorXd& logvar) {
  return 0.5 * (logvar.array().exp() - 1.0).matrix();
}

FBatch normalized_two_channel_batch(const std::vector<PairedSegment>& pairs,
                                    const std::vector<int>& idx) {
  FBatch out(idx.size());
  nn::parallel_chunks(static_cast<int>(idx.size()), [&](int, int i) {
    const auto& p = pairs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    check_segment_length(p.apw);
    check_segment_length(p.ppg);
    const auto [a, sa] = sigproc::normalize_segment(p.apw.as_double());
    const auto [y, sy] = sigproc::normalize_segment(p.ppg.as_double());
    nn::Mat<float> x(2, kSegmentSamples);
    x.row(0) = a.transpose().cast<float>();
    x.row(1) = y.transpose().cast<float>();
    out[static_cast<std::size_t>(i)] = std::move(x);
  });
  return out;
}

FBatch normalized_ppg_batch(const std::vector<PairedSegment>& pairs,
                            const std::vector<int>& idx) {
  FBatch out(idx.size());
  nn::parallel_chunks(static_cast<int>(idx.size()), [&](int, int i) {
    const auto& p = pairs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    check_segment_length(p.ppg);
    const auto [y, sy] = sigproc::normalize_segment(p.ppg.as_double());
    out[static_cast<std::size_t>(i)] = y.transpose().cast<float>();
  });
  return out;
}

FBatch normalized_apw_target_batch(const std::vector<PairedSegment>& pairs,
                                   const std::vector<int>& idx) {
  FBatch out(idx.size());
  nn::parallel_chunks(static_cast<int>(idx.size()), [&](int, int i) {
    const auto& p = pairs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    check_segment_length(p.apw);
    const auto [a, sa] = sigproc::normalize_segment(p.apw.as_double());
    out[static_cast<std::size_t>(i)] = a.transpose().cast<float>();
  });
  return out;
}

namespace {

// One reparameterized ELBO evaluation; fills the pieces needed for backward.
struct ElboPieces {
  double recon = 0.0;
  double kl = 0.0;
  FMat mu, logvar, eps, z;
  FBatch xhat;
};

ElboPieces elbo_forward(CvaeModel& model, const FBatch& two_ch,
                        const FBatch& ppg, bool train, std::uint64_t eps_seed) {
  ElboPieces p;
  std::tie(p.mu, p.logvar) = model.encode(two_ch, train);
  const int b = static_cast<int>(p.mu.cols());
  const int d = static_cast<int>(p.mu.rows());
  p.eps.resize(d, b);
  {
    Rng rng(eps_seed);
    for (int j = 0; j < b; ++j) {
      for (int i = 0; i < d; ++i) p.eps(i, j) = static_cast<float>(rng.normal());
    }
  }
  p.z = p.mu + p.eps.cwiseProduct((0.5f * p.logvar).array().exp().matrix());
  p.xhat = model.decode(p.z, ppg, train);

  double recon = 0.0;
  for (int i = 0; i < b; ++i) {
    const auto& xh = p.xhat[static_cast<std::size_t>(i)];
    const auto& x = two_ch[static_cast<std::size_t>(i)];
    recon += 0.5 * (xh.row(0) - x.row(0)).cast<double>().array().square().sum();
  }
  p.recon = recon / b;
  double kl = 0.0;
  for (int j = 0; j < b; ++j) {
    kl += kl_standard_normal(p.mu.col(j).cast<double>(),
                             p.logvar.col(j).cast<double>());
  }
  p.kl = kl / b;
  return p;
}

}  // namespace

double elbo_loss(CvaeModel& model, const std::vector<PairedSegment>& batch,
                 std::uint64_t eps_seed) {
  if (batch.empty()) throw std::invalid_argument("elbo_loss: empty batch");
  std::vector<int> idx(batch.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  const auto two_ch = normalized_two_channel_batch(batch, idx);
  const auto ppg = normalized_ppg_batch(batch, idx);
  const auto p = elbo_forward(model, two_ch, ppg, false,
                              derive_seed(eps_seed, "cvae.eval_eps"));
  const double loss = p.recon + p.kl;
  if (!std::isfinite(loss)) throw std::runtime_error("elbo_loss: non-finite loss");
  return loss;
}

CvaeTrainResult train_cvae(const std::vector<PairedSegment>& pairs,
                           const CvaeConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(pairs.size()) < 2 * cfg.batch_size) {
    throw std::invalid_argument("train_cvae: need at least 2*batch_size pairs");
  }

  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng split_rng(derive_seed(cfg.seed, "cvae.split"));
  split_rng.shuffle(order);
  const int n_val =
      std::max(1, static_cast<int>(std::lround(0.2 * pairs.size())));
  std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());

  CvaeModel model(cfg, cfg.seed);
  nn::Adam<float> opt(model.params(), cfg.lr);

  const auto val_two_ch = normalized_two_channel_batch(pairs, val_idx);
  const auto val_ppg = normalized_ppg_batch(pairs, val_idx);
  const std::uint64_t val_eps = derive_seed(cfg.seed, "cvae.val_eps");

  nn::TrainLog log;
  nn::EarlyStopper stopper(cfg.patience);
  io::Checkpoint best = model.to_checkpoint();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> perm = train_idx;
    Rng shuffle_rng(derive_seed(cfg.seed, "cvae.shuffle",
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(perm);

    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + 1 < perm.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(perm.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<int> bidx(perm.begin() + static_cast<long>(start),
                            perm.begin() + static_cast<long>(stop));
      const auto two_ch = normalized_two_channel_batch(pairs, bidx);
      const auto ppg = normalized_ppg_batch(pairs, bidx);
      const int b = static_cast<int>(bidx.size());

      opt.zero_grad();
      auto p = elbo_forward(
          model, two_ch, ppg, true,
          derive_seed(cfg.seed, "cvae.eps",
                      static_cast<std::uint64_t>(epoch) * 1000003ULL + batches));
      const double loss = p.recon + p.kl;
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_cvae: loss diverged (NaN) at epoch " +
                                 std::to_string(epoch));
      }

      // d(recon)/dxhat
      FBatch dxhat(static_cast<std::size_t>(b));
      nn::parallel_chunks(b, [&](int, int i) {
        dxhat[static_cast<std::size_t>(i)] =
            (p.xhat[static_cast<std::size_t>(i)].row(0) -
             two_ch[static_cast<std::size_t>(i)].row(0)) /
            static_cast<float>(b);
      });
      const FMat dz = model.decoder_backward(dxhat);
      // Reparameterization + closed-form KL gradients.
      const FMat sigma = (0.5f * p.logvar).array().exp().matrix();
      FMat dmu = dz + p.mu / static_cast<float>(b);
      FMat dlogvar =
          0.5f * dz.cwiseProduct(p.eps).cwiseProduct(sigma) +
          0.5f * (p.logvar.array().exp() - 1.0f).matrix() / static_cast<float>(b);
      model.encoder_backward(dmu, dlogvar);
      opt.step();

      epoch_loss += loss;
      ++batches;
    }
    log.train_loss.push_back(epoch_loss / std::max(1, batches));

    const auto vp = elbo_forward(model, val_two_ch, val_ppg, false, val_eps);
    const double val = vp.recon + vp.kl;
    log.val_loss.push_back(val);
    if (stopper.observe(val)) {
      log.best_epoch = epoch;
      log.best_val = val;
      best = model.to_checkpoint();
    }
    if (stopper.should_stop()) {
      log.early_stopped = true;
      break;
    }
  }

  CvaeTrainResult out{CvaeModel::from_checkpoint(best), std::move(best),
                      std::move(log)};
  out.checkpoint.metrics =
      json{{"best_val_loss", out.log.best_val},
           {"best_epoch", out.log.best_epoch},
           {"final_train_loss",
            out.log.train_loss.empty() ? 0.0 : out.log.train_loss.back()},
           {"epochs_run", out.log.val_loss.size()},
           {"early_stopped", out.log.early_stopped}};
  return out;
}

DetModel::DetModel(const DetConfig& config, std::uint64_t init_seed) {
  config.validate();
  cfg = config;
  Rng rng(derive_seed(init_seed, "det.init"));
  ppg_feat = PpgFeatureNet(128, rng);
  tconv = TconvStack(128, rng);
}

FBatch DetModel::forward(const FBatch& ppg, bool train) {
  return tconv.forward(ppg_feat.forward(ppg, train), train);
}

void DetModel::backward(const FBatch& dxhat) {
  ppg_feat.backward(tconv.backward(dxhat));
}

WaveformSegment DetModel::translate(const WaveformSegment& ppg) {
  const auto [y, sy] = sigproc::normalize_segment(ppg.as_double());
  FBatch b(1);
  b[0] = y.transpose().cast<float>();
  FBatch xhat = forward(b, false);
  WaveformSegment out;
  out.samples = xhat[0].row(0).transpose();
  out.kind = WaveKind::Apw;
  return out;
}

std::vector<nn::ParamRef<float>> DetModel::params() {
  std::vector<nn::ParamRef<float>> out;
  ppg_feat.collect(out, "det.feat");
  tconv.collect(out, "det.tconv");
  return out;
}

io::Checkpoint DetModel::to_checkpoint(const json& metrics) const {
  auto& self = const_cast<DetModel&>(*this);
  return checkpoint_from_params(io::ModelKind::DetCnn, self.params(),
                                cfg.to_json(), metrics);
}

DetModel DetModel::from_checkpoint(const io::Checkpoint& ckpt) {
  if (ckpt.kind != io::ModelKind::DetCnn) {
    throw std::runtime_error("checkpoint is not a DET_CNN model");
  }
  DetModel m(DetConfig::from_json(ckpt.config), 0);
  params_from_checkpoint(m.params(), ckpt);
  return m;
}

DetTrainResult train_det_translator(const std::vector<PairedSegment>& pairs,
                                    const DetConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(pairs.size()) < 2 * cfg.batch_size) {
    throw std::invalid_argument("train_det: need at least 2*batch_size pairs");
  }

  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng split_rng(derive_seed(cfg.seed, "det.split"));
  split_rng.shuffle(order);
  const int n_val =
      std::max(1, static_cast<int>(std::lround(0.2 * pairs.size())));
  std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());

  DetModel model(cfg, cfg.seed);
  nn::Adam<float> opt(model.params(), cfg.lr);

  const auto val_ppg = normalized_ppg_batch(pairs, val_idx);
  const auto val_target = normalized_apw_target_batch(pairs, val_idx);

  auto mse = [](const FBatch& xhat, const FBatch& target) {
    double loss = 0.0;
    for (std::size_t i = 0; i < xhat.size(); ++i) {
      loss += 0.5 * (xhat[i] - target[i]).cast<double>().array().square().sum();
    }
    return loss / static_cast<double>(xhat.size());
  };

  nn::TrainLog log;
  nn::EarlyStopper stopper(cfg.patience);
  io::Checkpoint best = model.to_checkpoint();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> perm = train_idx;
    Rng shuffle_rng(derive_seed(cfg.seed, "det.shuffle",
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(perm);

    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + 1 < perm.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(perm.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<int> bidx(perm.begin() + static_cast<long>(start),
                            perm.begin() + static_cast<long>(stop));
      const auto ppg = normalized_ppg_batch(pairs, bidx);
      const auto target = normalized_apw_target_batch(pairs, bidx);
      const int b = static_cast<int>(bidx.size());

      opt.zero_grad();
      FBatch xhat = model.forward(ppg, true);
      const double loss = mse(xhat, target);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_det: loss diverged (NaN) at epoch " +
                                 std::to_string(epoch));
      }
      FBatch dxhat(static_cast<std::size_t>(b));
      nn::parallel_chunks(b, [&](int, int i) {
        dxhat[static_cast<std::size_t>(i)] =
            (xhat[static_cast<std::size_t>(i)] -
             target[static_cast<std::size_t>(i)]) /
            static_cast<float>(b);
      });
      model.backward(dxhat);
      opt.step();
      epoch_loss += loss;
      ++batches;
    }
    log.train_loss.push_back(epoch_loss / std::max(1, batches));

    FBatch val_xhat = model.forward(val_ppg, false);
    const double val = mse(val_xhat, val_target);
    log.val_loss.push_back(val);
    if (stopper.observe(val)) {
      log.best_epoch = epoch;
      log.best_val = val;
      best = model.to_checkpoint();
    }
    if (stopper.should_stop()) {
      log.early_stopped = true;
      break;
    }
  }

  DetTrainResult out{DetModel::from_checkpoint(best), std::move(best),
                     std::move(log)};
  out.checkpoint.metrics =
      json{{"best_val_loss", out.log.best_val},
           {"best_epoch", out.log.best_epoch},
           {"final_train_loss",
            out.log.train_loss.empty() ? 0.0 : out.log.train_loss.back()},
           {"epochs_run", out.log.val_loss.size()},
           {"early_stopped", out.log.early_stopped}};
  return out;
}

}  // namespace hemo::cvae
