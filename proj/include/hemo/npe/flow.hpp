#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "hemo/core/rng.hpp"
#include "hemo/nn/core.hpp"
#include "hemo/nn/layers.hpp"

namespace hemo::npe {

using DMat = nn::Mat<double>;
using DRow = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline constexpr double kScaleClamp = 5.0;

// One affine autoregressive step z_j = theta_j * exp(s_j) + t_j, where
// (s, t) come from a MADE-masked MLP over [theta, embedding]. rank[j] gives
// dimension j's position (1-based) in this step's autoregressive ordering;
// s_j and t_j depend only on dimensions of strictly lower rank plus the
// embedding. Hidden units of degree 0 see the embedding alone, so even the
// first dimension is conditioned on the observation.
class FlowStep {
 public:
  FlowStep(std::vector<int> rank, int emb_dim, int hidden, Rng& rng)
      : rank_(std::move(rank)), d_(static_cast<int>(rank_.size())),
        emb_dim_(emb_dim), hidden_(hidden),
        relu_mask1_(), relu_mask2_() {
    l1_ = nn::MaskedLinear<double>(mask_in(), rng);
    l2_ = nn::MaskedLinear<double>(mask_hidden(), rng);
    l3_ = nn::MaskedLinear<double>(mask_out(), rng);
    // Identity at initialization: zero final layer -> s = t = 0.
    l3_.zero_params();
  }

  struct Fwd {
    DMat z;
    DRow log_det;
  };

  Fwd forward(const DMat& theta, const DMat& emb, bool cache) {
    const auto [s_raw, t] = conditioner(theta, emb, cache);
    DMat s_c = s_raw.cwiseMax(-kScaleClamp).cwiseMin(kScaleClamp);
    DMat exps = s_c.array().exp().matrix();
    Fwd out;
    out.z = theta.cwiseProduct(exps) + t;
    out.log_det = s_c.colwise().sum();
    if (cache) {
      theta_ = theta;
      s_raw_ = s_raw;
      exps_ = exps;
    }
    return out;
  }

  DMat inverse(const DMat& z, const DMat& emb) const {
    DMat theta = DMat::Zero(d_, z.cols());
    for (int r = 1; r <= d_; ++r) {
      const auto [s_raw, t] = conditioner_const(theta, emb);
      for (int j = 0; j < d_; ++j) {
        if (rank_[static_cast<std::size_t>(j)] != r) continue;
        const auto s_c = s_raw.row(j).cwiseMax(-kScaleClamp).cwiseMin(kScaleClamp);
        theta.row(j) =
            (z.row(j) - t.row(j)).cwiseProduct((-s_c).array().exp().matrix());
      }
    }
    return theta;
  }

  // dz: gradient on this step's output, dld: gradient on its log-det term.
  // Returns the gradient on the step input; embedding gradient accumulates
  // into demb.
  DMat backward(const DMat& dz, const DRow& dld, DMat& demb) {
    DMat ds_c = dz.cwiseProduct(theta_).cwiseProduct(exps_);
    ds_c.noalias() += DMat::Ones(d_, 1) * dld;
    const DMat pass =
        (s_raw_.array().abs() < kScaleClamp).cast<double>().matrix();
    DMat dout(2 * d_, dz.cols());
    dout.topRows(d_) = ds_c.cwiseProduct(pass);
    dout.bottomRows(d_) = dz;

    DMat dh2 = l3_.backward(dout);
    dh2 = dh2.cwiseProduct(relu_mask2_);
    DMat dh1 = l2_.backward(dh2);
    dh1 = dh1.cwiseProduct(relu_mask1_);
    DMat dx = l1_.backward(dh1);

    demb += dx.bottomRows(emb_dim_);
    return dx.topRows(d_) + dz.cwiseProduct(exps_);
  }

  void collect(std::vector<nn::ParamRef<double>>& out, const std::string& prefix) {
    l1_.collect(out, prefix + ".l1");
    l2_.collect(out, prefix + ".l2");
    l3_.collect(out, prefix + ".l3");
  }

  void zero_params() {
    l1_.zero_params();
    l2_.zero_params();
    l3_.zero_params();
  }

  // Boolean dependency of z on theta implied by the masks (d x d).
  Eigen::MatrixXi dependency() const {
    const DMat chain =
        l3_.mask().topRows(d_) * l2_.mask() * l1_.mask().leftCols(d_);
    Eigen::MatrixXi dep = (chain.array() > 0.0).cast<int>();
    for (int j = 0; j < d_; ++j) dep(j, j) = 1;  // z_j multiplies theta_j
    return dep;
  }

  const std::vector<int>& rank() const { return rank_; }

 private:
  std::pair<DMat, DMat> conditioner(const DMat& theta, const DMat& emb,
                                    bool cache) {
    DMat x(d_ + emb_dim_, theta.cols());
    x.topRows(d_) = theta;
    x.bottomRows(emb_dim_) = emb;
    DMat h1p = l1_.forward(x, cache);
    DMat m1 = (h1p.array() > 0.0).cast<double>().matrix();
    DMat h1 = h1p.cwiseProduct(m1);
    DMat h2p = l2_.forward(h1, cache);
    DMat m2 = (h2p.array() > 0.0).cast<double>().matrix();
    DMat h2 = h2p.cwiseProduct(m2);
    DMat out = l3_.forward(h2, cache);
    if (cache) {
      relu_mask1_ = std::move(m1);
      relu_mask2_ = std::move(m2);
    }
    return {out.topRows(d_), out.bottomRows(d_)};
  }

  std::pair<DMat, DMat> conditioner_const(const DMat& theta, const DMat& emb) const {
    DMat x(d_ + emb_dim_, theta.cols());
    x.topRows(d_) = theta;
    x.bottomRows(emb_dim_) = emb;
    DMat h1 = l1_.apply(x).cwiseMax(0.0);
    DMat h2 = l2_.apply(h1).cwiseMax(0.0);
    DMat out = l3_.apply(h2);
    return {out.topRows(d_), out.bottomRows(d_)};
  }

  int hidden_degree(int k) const { return k % d_; }

  DMat mask_in() const {
    DMat m(hidden_, d_ + emb_dim_);
    for (int k = 0; k < hidden_; ++k) {
      for (int j = 0; j < d_ + emb_dim_; ++j) {
        const int deg_in = j < d_ ? rank_[static_cast<std::size_t>(j)] : 0;
        m(k, j) = deg_in <= hidden_degree(k) ? 1.0 : 0.0;
      }
    }
    return m;
  }

  DMat mask_hidden() const {
    DMat m(hidden_, hidden_);
    for (int k2 = 0; k2 < hidden_; ++k2) {
      for (int k1 = 0; k1 < hidden_; ++k1) {
        m(k2, k1) = hidden_degree(k1) <= hidden_degree(k2) ? 1.0 : 0.0;
      }
    }
    return m;
  }

  DMat mask_out() const {
    DMat m(2 * d_, hidden_);
    for (int row = 0; row < 2 * d_; ++row) {
      const int deg_out = rank_[static_cast<std::size_t>(row % d_)];
      for (int k = 0; k < hidden_; ++k) {
        m(row, k) = hidden_degree(k) < deg_out ? 1.0 : 0.0;
      }
    }
    return m;
  }

  std::vector<int> rank_;
  int d_ = 0, emb_dim_ = 0, hidden_ = 0;
  nn::MaskedLinear<double> l1_, l2_, l3_;
  DMat relu_mask1_, relu_mask2_;
  DMat theta_, s_raw_, exps_;
};

// Composition of affine autoregressive steps with the dimension order
// reversed between consecutive steps.
class CondFlow {
 public:
  CondFlow() = default;
  CondFlow(int d, int emb_dim, int steps, int hidden, std::uint64_t seed)
      : d_(d) {
    Rng rng(derive_seed(seed, "flow.init"));
    for (int s = 0; s < steps; ++s) {
      std::vector<int> rank(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) {
        rank[static_cast<std::size_t>(j)] = (s % 2 == 0) ? j + 1 : d - j;
      }
      steps_.emplace_back(std::move(rank), emb_dim, hidden, rng);
    }
  }

  struct Fwd {
    DMat z;
    DRow log_det;
  };

  Fwd forward(const DMat& theta, const DMat& emb, bool cache) {
    Fwd out;
    out.z = theta;
    out.log_det = DRow::Zero(theta.cols());
    for (auto& step : steps_) {
      auto f = step.forward(out.z, emb, cache);
      out.z = std::move(f.z);
      out.log_det += f.log_det;
    }
    return out;
  }

  DMat inverse(const DMat& z, const DMat& emb) const {
    DMat cur = z;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      cur = it->inverse(cur, emb);
    }
    return cur;
  }

  DMat backward(const DMat& dz_final, const DRow& dlog_det, DMat& demb) {
    DMat dz = dz_final;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      dz = it->backward(dz, dlog_det, demb);
    }
    return dz;
  }

  void collect(std::vector<nn::ParamRef<double>>& out, const std::string& prefix) {
    for (std::size_t s = 0; s < steps_.size(); ++s) {
      steps_[s].collect(out, prefix + ".step" + std::to_string(s));
    }
  }

  void zero_params() {
    for (auto& s : steps_) s.zero_params();
  }

  // Composed boolean dependency of the final z on the input theta.
  Eigen::MatrixXi dependency() const {
    Eigen::MatrixXi total = Eigen::MatrixXi::Identity(d_, d_);
    for (const auto& s : steps_) {
      total = ((s.dependency() * total).array() > 0).cast<int>();
    }
    return total;
  }

  int dim() const { return d_; }
  int num_steps() const { return static_cast<int>(steps_.size()); }

 private:
  int d_ = 0;
  std::vector<FlowStep> steps_;
};

inline double std_normal_log_density(const Eigen::VectorXd& z) {
  return -0.5 * z.squaredNorm() -
         0.5 * z.size() * std::log(2.0 * std::numbers::pi);
}

}  // namespace hemo::npe
