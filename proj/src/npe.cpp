#include "hemo/npe/npe.hpp"

#include <stdexcept>

#include "hemo/sigproc/sigproc.hpp"

namespace hemo::npe {

using nlohmann::json;

void NpeConfig::validate() const {
  if (flow_steps < 1) throw std::invalid_argument("flow_steps must be >= 1");
  if (embedding_dim < 1) throw std::invalid_argument("embedding_dim must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size < 1 || max_epochs < 0 || patience < 1) {
    throw std::invalid_argument("bad npe training config");
  }
  if (!(val_fraction > 0.0) || !(val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must be in (0, 1)");
  }
}

json NpeConfig::to_json() const {
  return json{{"flow_steps", flow_steps}, {"embedding_dim", embedding_dim},
              {"lr", lr},                 {"batch_size", batch_size},
              {"max_epochs", max_epochs}, {"val_fraction", val_fraction},
              {"patience", patience},     {"mlp_hidden", mlp_hidden},
              {"flow_hidden", flow_hidden}, {"seed", seed}};
}

NpeConfig NpeConfig::from_json(const json& j) {
  NpeConfig c;
  c.flow_steps = j.value("flow_steps", c.flow_steps);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.patience = j.value("patience", c.patience);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.flow_hidden = j.value("flow_hidden", c.flow_hidden);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

EmbedNet::EmbedNet(const NpeConfig& cfg, Rng& rng) {
  c1_ = nn::Conv1d<float>(1, 40, 3, 2, 0, rng);
  c2_ = nn::Conv1d<float>(40, 40, 3, 2, 0, rng);
  c3_ = nn::Conv1d<float>(40, 40, 3, 2, 0, rng);
  c4_ = nn::Conv1d<float>(40, 20, 3, 2, 0, rng);
  c5_ = nn::Conv1d<float>(20, 10, 3, 2, 0, rng);
  h1_ = nn::Linear<float>(kFlatChannels * kFlatLen, cfg.mlp_hidden, rng);
  h2_ = nn::Linear<float>(cfg.mlp_hidden, cfg.embedding_dim, rng);
}

nn::Mat<float> EmbedNet::forward(const nn::Batch<float>& x, bool train) {
  auto a = r1_.forward(c1_.forward(x, train), train);
  a = r2_.forward(c2_.forward(a, train), train);
  a = r3_.forward(c3_.forward(a, train), train);
  a = pool_.forward(a, train);
  a = r4_.forward(c4_.forward(a, train), train);
  a = r5_.forward(c5_.forward(a, train), train);
  nn::Mat<float> flat = nn::flatten_batch(a);
  nn::Mat<float> h = rh_.forward_mat(h1_.forward(flat, train), train);
  return h2_.forward(h, train);
}

void EmbedNet::backward(const nn::Mat<float>& demb) {
  nn::Mat<float> dh = rh_.backward_mat(h2_.backward(demb));
  nn::Mat<float> dflat = h1_.backward(dh);
  nn::Batch<float> d = nn::unflatten_batch(dflat, kFlatChannels, kFlatLen);
  d = c5_.backward(r5_.backward(d));
  d = c4_.backward(r4_.backward(d));
  d = pool_.backward(d);
  d = c3_.backward(r3_.backward(d));
  d = c2_.backward(r2_.backward(d));
  c1_.backward(r1_.backward(d));
}

void EmbedNet::collect(std::vector<nn::ParamRef<float>>& out) {
  c1_.collect(out, "embed.c1");
  c2_.collect(out, "embed.c2");
  c3_.collect(out, "embed.c3");
  c4_.collect(out, "embed.c4");
  c5_.collect(out, "embed.c5");
  h1_.collect(out, "embed.h1");
  h2_.collect(out, "embed.h2");
}

NpeModel::NpeModel(const NpeConfig& config, std::uint64_t init_seed) {
  config.validate();
  cfg = config;
  Rng rng(derive_seed(init_seed, "npe.init"));
  embed = EmbedNet(cfg, rng);
  flow = CondFlow(kNumParams, cfg.embedding_dim, cfg.flow_steps,
                  cfg.flow_hidden, derive_seed(init_seed, "npe.flow"));
}

Eigen::VectorXd NpeModel::encode_apw(const WaveformSegment& apw_normalized) {
  check_segment_length(apw_normalized);
  nn::Batch<float> x(1);
  x[0] = apw_normalized.samples.transpose();
  return embed.forward(x, false).col(0).cast<double>();
}

FlowState NpeModel::flow_forward(const Eigen::Vector4d& theta_std,
                                 const Eigen::VectorXd& embedding) {
  DMat t(kNumParams, 1);
  t.col(0) = theta_std;
  DMat e(embedding.size(), 1);
  e.col(0) = embedding;
  auto f = flow.forward(t, e, false);
  if (!f.z.allFinite() || !std::isfinite(f.log_det[0])) {
    throw std::runtime_error("flow_forward: non-finite output");
  }
  return {f.z.col(0), f.log_det[0]};
}

Eigen::Vector4d NpeModel::flow_inverse(const Eigen::Vector4d& z,
                                       const Eigen::VectorXd& embedding) const {
  DMat zz(kNumParams, 1);
  zz.col(0) = z;
  DMat e(embedding.size(), 1);
  e.col(0) = embedding;
  Eigen::Vector4d theta = flow.inverse(zz, e).col(0);
  if (!theta.allFinite()) {
    throw std::runtime_error("flow_inverse: non-finite output");
  }
  return theta;
}

Eigen::Vector4d NpeModel::standardize(const ParamVector& t) const {
  return (t.to_vector() - std_mean).cwiseQuotient(std_scale);
}

ParamVector NpeModel::destandardize(const Eigen::Vector4d& v) const {
  return ParamVector::from_vector(v.cwiseProduct(std_scale) + std_mean);
}

double NpeModel::log_prob(const ParamVector& theta, const WaveformSegment& apw) {
  const auto [x, sc] = sigproc::normalize_segment(apw.as_double());
  WaveformSegment norm = WaveformSegment::from_double(x, apw.kind);
  const Eigen::VectorXd e = encode_apw(norm);
  const FlowState f = flow_forward(standardize(theta), e);
  return std_normal_log_density(f.z) + f.log_det -
         std_scale.array().log().sum();
}

std::vector<ParamVector> NpeModel::sample_posterior(const WaveformSegment& apw,
                                                    int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("sample_posterior: k must be >= 1");
  const auto [x, sc] = sigproc::normalize_segment(apw.as_double());
  WaveformSegment norm = WaveformSegment::from_double(x, apw.kind);
  const Eigen::VectorXd e = encode_apw(norm);

  DMat z(kNumParams, k);
  for (int j = 0; j < k; ++j) {
    Rng rng(derive_seed(seed, "npe.draw", static_cast<std::uint64_t>(j)));
    for (int i = 0; i < kNumParams; ++i) z(i, j) = rng.normal();
  }
  DMat emb(e.size(), k);
  emb.colwise() = e;
  const DMat theta_std = flow.inverse(z, emb);

  std::vector<ParamVector> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    out.push_back(destandardize(theta_std.col(j)));
  }
  return out;
}

std::vector<nn::ParamRef<float>> NpeModel::float_params() {
  std::vector<nn::ParamRef<float>> out;
  embed.collect(out);
  return out;
}

std::vector<nn::ParamRef<double>> NpeModel::double_params() {
  std::vector<nn::ParamRef<double>> out;
  flow.collect(out, "flow");
  return out;
}

io::Checkpoint NpeModel::to_checkpoint(const json& metrics) const {
  io::Checkpoint c;
  c.kind = io::ModelKind::Npe;
  c.config = cfg.to_json();
  c.config["std_mean"] = std::vector<double>(std_mean.data(), std_mean.data() + 4);
  c.config["std_scale"] =
      std::vector<double>(std_scale.data(), std_scale.data() + 4);
  c.metrics = metrics;

  auto& self = const_cast<NpeModel&>(*this);
  for (const auto& p : self.float_params()) {
    io::NamedArray a;
    a.name = p.name;
    a.rows = static_cast<int>(p.value->rows());
    a.cols = static_cast<int>(p.value->cols());
    a.data.resize(static_cast<std::size_t>(p.value->size()));
    Eigen::Map<Eigen::MatrixXf>(a.data.data(), p.value->rows(), p.value->cols()) =
        *p.value;
    c.weights.push_back(std::move(a));
  }
  for (const auto& p : self.double_params()) {
    io::NamedArray a;
    a.name = p.name;
    a.rows = static_cast<int>(p.value->rows());
    a.cols = static_cast<int>(p.value->cols());
    a.data.resize(static_cast<std::size_t>(p.value->size()));
    Eigen::Map<Eigen::MatrixXf>(a.data.data(), p.value->rows(), p.value->cols()) =
        p.value->cast<float>();
    c.weights.push_back(std::move(a));
  }
  return c;
}

NpeModel NpeModel::from_checkpoint(const io::Checkpoint& ckpt) {
  if (ckpt.kind != io::ModelKind::Npe) {
    throw std::runtime_error("checkpoint is not an NPE model");
  }
  NpeModel m(NpeConfig::from_json(ckpt.config), 0);
  const auto mean = ckpt.config.at("std_mean").get<std::vector<double>>();
  const auto scale = ckpt.config.at("std_scale").get<std::vector<double>>();
  for (int i = 0; i < kNumParams; ++i) {
    m.std_mean[i] = mean.at(static_cast<std::size_t>(i));
    m.std_scale[i] = scale.at(static_cast<std::size_t>(i));
  }
  auto fp = m.float_params();
  auto dp = m.double_params();
  for (const auto& w : ckpt.weights) {
    bool found = false;
    for (auto& p : fp) {
      if (p.name == w.name) {
        if (p.value->rows() != w.rows || p.value->cols() != w.cols) {
          throw std::runtime_error("weight shape mismatch: " + w.name);
        }
        *p.value = Eigen::Map<const Eigen::MatrixXf>(w.data.data(), w.rows, w.cols);
        found = true;
        break;
      }
    }
    if (found) continue;
    for (auto& p : dp) {
      if (p.name == w.name) {
        if (p.value->rows() != w.rows || p.value->cols() != w.cols) {
          throw std::runtime_error("weight shape mismatch: " + w.name);
        }
        *p.value = Eigen::Map<const Eigen::MatrixXf>(w.data.data(), w.rows, w.cols)
                       .cast<double>();
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("unknown weight in checkpoint: " + w.name);
  }
  return m;
}

nn::Batch<float> normalized_apw_batch(const std::vector<LabeledSimRecord>& records,
                                      const std::vector<int>& idx,
                                      bool use_windkessel_ppg) {
  nn::Batch<float> out(idx.size());
  nn::parallel_chunks(static_cast<int>(idx.size()), [&](int, int i) {
    const auto& rec = records[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    const WaveformSegment& seg =
        use_windkessel_ppg ? rec.ppg_wk.value() : rec.apw;
    check_segment_length(seg);
    const auto [x, sc] = sigproc::normalize_segment(seg.as_double());
    out[static_cast<std::size_t>(i)] = x.transpose().cast<float>();
  });
  return out;
}

namespace {

struct LossGrad {
  double loss = 0.0;
  DMat dz;
  DRow dlogdet;
};

// loss_i = 0.5 |z_i|^2 + (d/2) log 2pi - logdet_i, averaged over the batch.
LossGrad gauss_nll(const CondFlow::Fwd& f) {
  const int b = static_cast<int>(f.z.cols());
  const int d = static_cast<int>(f.z.rows());
  LossGrad g;
  const double c = 0.5 * d * std::log(2.0 * std::numbers::pi);
  g.loss = (0.5 * f.z.array().square().colwise().sum() - f.log_det.array() + c)
               .mean();
  g.dz = f.z / b;
  g.dlogdet = DRow::Constant(b, -1.0 / b);
  return g;
}

DMat standardized_theta(const std::vector<LabeledSimRecord>& records,
                        const std::vector<int>& idx, const NpeModel& m) {
  DMat t(kNumParams, static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    t.col(static_cast<int>(i)) =
        m.standardize(records[static_cast<std::size_t>(idx[i])].theta);
  }
  return t;
}

}  // namespace

double npe_loss(NpeModel& model, const std::vector<LabeledSimRecord>& records,
                bool use_windkessel_ppg) {
  if (records.empty()) throw std::invalid_argument("npe_loss: empty batch");
  std::vector<int> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  const auto x = normalized_apw_batch(records, idx, use_windkessel_ppg);
  const DMat emb = model.embed.forward(x, false).cast<double>();
  const DMat theta = standardized_theta(records, idx, model);
  auto f = model.flow.forward(theta, emb, false);
  const auto g = gauss_nll(f);
  if (!std::isfinite(g.loss)) {
    throw std::runtime_error("npe_loss: non-finite loss");
  }
  return g.loss;
}

NpeTrainResult train_npe(const std::vector<LabeledSimRecord>& records,
                         const NpeConfig& cfg, bool use_windkessel_ppg,
                         const std::vector<LabeledSimRecord>* external_val) {
  cfg.validate();
  if (static_cast<int>(records.size()) < 2 * cfg.batch_size) {
    throw std::invalid_argument("train_npe: need at least 2*batch_size records");
  }
  if (use_windkessel_ppg) {
    for (const auto& r : records) {
      if (!r.ppg_wk) {
        throw std::invalid_argument("train_npe: records lack Windkessel PPG");
      }
    }
  }

  // Deterministic train/val split, unless validation records are supplied.
  std::vector<int> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::vector<int> val_idx, train_idx;
  const std::vector<LabeledSimRecord>& val_records =
      external_val ? *external_val : records;
  if (external_val) {
    if (external_val->empty()) {
      throw std::invalid_argument("train_npe: empty external validation set");
    }
    train_idx = order;
    val_idx.resize(external_val->size());
    for (std::size_t i = 0; i < val_idx.size(); ++i) val_idx[i] = static_cast<int>(i);
  } else {
    Rng split_rng(derive_seed(cfg.seed, "npe.split"));
    split_rng.shuffle(order);
    const int n_val = std::max(
        1, static_cast<int>(std::lround(cfg.val_fraction * records.size())));
    val_idx.assign(order.begin(), order.begin() + n_val);
    train_idx.assign(order.begin() + n_val, order.end());
  }

  NpeModel model(cfg, cfg.seed);

  // Standardization statistics from the training split.
  {
    Eigen::Vector4d mean = Eigen::Vector4d::Zero();
    for (int i : train_idx) {
      mean += records[static_cast<std::size_t>(i)].theta.to_vector();
    }
    mean /= static_cast<double>(train_idx.size());
    Eigen::Vector4d var = Eigen::Vector4d::Zero();
    for (int i : train_idx) {
      const Eigen::Vector4d d =
          records[static_cast<std::size_t>(i)].theta.to_vector() - mean;
      var += d.cwiseProduct(d);
    }
    var /= static_cast<double>(train_idx.size());
    model.std_mean = mean;
    model.std_scale = var.cwiseSqrt().cwiseMax(1e-12);
  }

  nn::Adam<float> opt_f(model.float_params(), cfg.lr);
  nn::Adam<double> opt_d(model.double_params(), cfg.lr);

  const nn::Batch<float> val_x =
      normalized_apw_batch(val_records, val_idx, use_windkessel_ppg);
  const DMat val_theta = standardized_theta(val_records, val_idx, model);

  auto eval_val = [&]() {
    const DMat emb = model.embed.forward(val_x, false).cast<double>();
    auto f = model.flow.forward(val_theta, emb, false);
    return gauss_nll(f).loss;
  };

  nn::TrainLog log;
  nn::EarlyStopper stopper(cfg.patience);
  io::Checkpoint best = model.to_checkpoint();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> perm = train_idx;
    Rng shuffle_rng(derive_seed(cfg.seed, "npe.shuffle",
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
      const auto x = normalized_apw_batch(records, bidx, use_windkessel_ppg);
      const DMat theta = standardized_theta(records, bidx, model);

      opt_f.zero_grad();
      opt_d.zero_grad();
      const DMat emb = model.embed.forward(x, true).cast<double>();
      auto f = model.flow.forward(theta, emb, true);
      const auto g = gauss_nll(f);
      if (!std::isfinite(g.loss)) {
        throw std::runtime_error("train_npe: loss diverged (NaN) at epoch " +
                                 std::to_string(epoch));
      }
      DMat demb = DMat::Zero(emb.rows(), emb.cols());
      model.flow.backward(g.dz, g.dlogdet, demb);
      model.embed.backward(demb.cast<float>());
      opt_f.step();
      opt_d.step();
      epoch_loss += g.loss;
      ++batches;
    }
    log.train_loss.push_back(epoch_loss / std::max(1, batches));

    const double val = eval_val();
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

  NpeTrainResult out{NpeModel::from_checkpoint(best), std::move(best), std::move(log)};
  out.checkpoint.metrics =
      json{{"best_val_loss", out.log.best_val},
           {"best_epoch", out.log.best_epoch},
           {"final_train_loss",
            out.log.train_loss.empty() ? 0.0 : out.log.train_loss.back()},
           {"epochs_run", out.log.val_loss.size()},
           {"early_stopped", out.log.early_stopped}};
  return out;
}

}  // namespace hemo::npe
