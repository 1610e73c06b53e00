#pragma once

#include <cmath>
#include <stdexcept>

#include "hemo/core/rng.hpp"
#include "hemo/nn/core.hpp"

namespace hemo::nn {

inline int conv_out_len(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

inline int convt_out_len(int in, int kernel, int stride, int pad, int out_pad) {
  return (in - 1) * stride - 2 * pad + kernel + out_pad;
}

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for weights and biases.
template <class S>
void init_uniform(Mat<S>& w, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int j = 0; j < w.cols(); ++j) {
    for (int i = 0; i < w.rows(); ++i) {
      w(i, j) = static_cast<S>(rng.uniform(-bound, bound));
    }
  }
}

// Strided convolution via per-chunk im2col: each chunk's samples are
// gathered into one patch matrix so the work becomes a single large GEMM.
template <class S>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int cin, int cout, int kernel, int stride, int pad, Rng& rng)
      : cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(pad) {
    w_.resize(cout, cin * kernel);
    b_.resize(cout, 1);
    init_uniform(w_, cin * kernel, rng);
    init_uniform(b_, cin * kernel, rng);
    gw_.setZero(cout, cin * kernel);
    gb_.setZero(cout, 1);
  }

  int out_len(int in_len) const { return conv_out_len(in_len, k_, stride_, pad_); }

  Batch<S> forward(const Batch<S>& x, bool cache_for_backward) {
    const int n = static_cast<int>(x.size());
    const int lin = static_cast<int>(x.front().cols());
    const int lout = out_len(lin);
    Batch<S> y(static_cast<std::size_t>(n));
    if (cache_for_backward) {
      xpad_.assign(static_cast<std::size_t>(n), Mat<S>());
    }
#pragma omp parallel for schedule(dynamic, 1)
    for (int c = 0; c < kChunks; ++c) {
      const ChunkRange r = chunk_range(n, c);
      if (r.end <= r.begin) continue;
      const int nb = r.end - r.begin;
      Mat<S> patches(cin_ * k_, static_cast<Eigen::Index>(nb) * lout);
      for (int i = r.begin; i < r.end; ++i) {
        Mat<S> xp = Mat<S>::Zero(cin_, lin + 2 * pad_);
        xp.middleCols(pad_, lin) = x[static_cast<std::size_t>(i)];
        fill_patches(patches, xp, (i - r.begin) * lout, lout);
        if (cache_for_backward) {
          xpad_[static_cast<std::size_t>(i)] = std::move(xp);
        }
      }
      Mat<S> out = w_ * patches;
      out.colwise() += b_.col(0);
      for (int i = r.begin; i < r.end; ++i) {
        y[static_cast<std::size_t>(i)] = out.middleCols((i - r.begin) * lout, lout);
      }
    }
    return y;
  }

  Batch<S> backward(const Batch<S>& dy) {
    const int n = static_cast<int>(dy.size());
    const int lout = static_cast<int>(dy.front().cols());
    const int lpad = static_cast<int>(xpad_.front().cols());
    const int lin = lpad - 2 * pad_;
    Batch<S> dx(static_cast<std::size_t>(n));
    std::vector<Mat<S>> gw_c(kChunks);
    std::vector<Mat<S>> gb_c(kChunks);
#pragma omp parallel for schedule(dynamic, 1)
    for (int c = 0; c < kChunks; ++c) {
      const ChunkRange r = chunk_range(n, c);
      gw_c[static_cast<std::size_t>(c)].setZero(cout_, cin_ * k_);
      gb_c[static_cast<std::size_t>(c)].setZero(cout_, 1);
      if (r.end <= r.begin) continue;
      const int nb = r.end - r.begin;
      Mat<S> patches(cin_ * k_, static_cast<Eigen::Index>(nb) * lout);
      Mat<S> g(cout_, static_cast<Eigen::Index>(nb) * lout);
      for (int i = r.begin; i < r.end; ++i) {
        fill_patches(patches, xpad_[static_cast<std::size_t>(i)],
                     (i - r.begin) * lout, lout);
        g.middleCols((i - r.begin) * lout, lout) = dy[static_cast<std::size_t>(i)];
      }
      gw_c[static_cast<std::size_t>(c)].noalias() = g * patches.transpose();
      gb_c[static_cast<std::size_t>(c)] = g.rowwise().sum();
      const Mat<S> dpatches = w_.transpose() * g;
      for (int i = r.begin; i < r.end; ++i) {
        Mat<S> dxp = Mat<S>::Zero(cin_, lpad);
        for (int kk = 0; kk < k_; ++kk) {
          Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>> dslice(
              dxp.data() + static_cast<std::ptrdiff_t>(kk) * cin_, cin_, lout,
              Eigen::OuterStride<>(static_cast<Eigen::Index>(stride_) * cin_));
          dslice += dpatches.block(kk * cin_, (i - r.begin) * lout, cin_, lout);
        }
        dx[static_cast<std::size_t>(i)] = dxp.middleCols(pad_, lin);
      }
    }
    for (int c = 0; c < kChunks; ++c) {
      gw_ += gw_c[static_cast<std::size_t>(c)];
      gb_ += gb_c[static_cast<std::size_t>(c)];
    }
    return dx;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

 private:
  void fill_patches(Mat<S>& patches, const Mat<S>& xp, int col0, int lout) const {
    for (int kk = 0; kk < k_; ++kk) {
      Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>> slice(
          xp.data() + static_cast<std::ptrdiff_t>(kk) * cin_, cin_, lout,
          Eigen::OuterStride<>(static_cast<Eigen::Index>(stride_) * cin_));
      patches.block(kk * cin_, col0, cin_, lout) = slice;
    }
  }

  int cin_ = 0, cout_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  Mat<S> w_, b_, gw_, gb_;
  Batch<S> xpad_;
};

template <class S>
class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(int cin, int cout, int kernel, int stride, int pad,
                  int out_pad, Rng& rng)
      : cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(pad),
        out_pad_(out_pad) {
    w_.resize(cout, cin * kernel);
    b_.resize(cout, 1);
    init_uniform(w_, cin * kernel, rng);
    init_uniform(b_, cin * kernel, rng);
    gw_.setZero(cout, cin * kernel);
    gb_.setZero(cout, 1);
  }

  int out_len(int in_len) const {
    return convt_out_len(in_len, k_, stride_, pad_, out_pad_);
  }

  Batch<S> forward(const Batch<S>& x, bool cache_for_backward) {
    const int n = static_cast<int>(x.size());
    const int lin = static_cast<int>(x.front().cols());
    const int lout = out_len(lin);
    Batch<S> y(static_cast<std::size_t>(n));
    if (cache_for_backward) xin_.assign(static_cast<std::size_t>(n), Mat<S>());
#pragma omp parallel for schedule(dynamic, 1)
    for (int c = 0; c < kChunks; ++c) {
      const ChunkRange r = chunk_range(n, c);
      if (r.end <= r.begin) continue;
      const int nb = r.end - r.begin;
      // One GEMM per chunk: stack inputs, produce per-tap contribution rows,
      // then scatter tap kk of input column j onto output column
      // t = j*stride - pad + kk.
      Mat<S> xs(cin_, static_cast<Eigen::Index>(nb) * lin);
      for (int i = r.begin; i < r.end; ++i) {
        xs.middleCols((i - r.begin) * lin, lin) = x[static_cast<std::size_t>(i)];
        if (cache_for_backward) {
          xin_[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
        }
      }
      const Mat<S> contrib = stacked_w() * xs;  // (cout*k) x (nb*lin)
      for (int i = r.begin; i < r.end; ++i) {
        Mat<S>& out = y[static_cast<std::size_t>(i)];
        out = b_.replicate(1, lout);
        for (int kk = 0; kk < k_; ++kk) {
          const auto [j0, j1] = valid_j(lin, lout, kk);
          if (j1 <= j0) continue;
          Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>> dst(
              out.data() +
                  static_cast<std::ptrdiff_t>(j0 * stride_ - pad_ + kk) * cout_,
              cout_, j1 - j0,
              Eigen::OuterStride<>(static_cast<Eigen::Index>(stride_) * cout_));
          dst += contrib.block(kk * cout_, (i - r.begin) * lin + j0, cout_, j1 - j0);
        }
      }
    }
    return y;
  }

  Batch<S> backward(const Batch<S>& dy) {
    const int n = static_cast<int>(dy.size());
    const int lout = static_cast<int>(dy.front().cols());
    const int lin = static_cast<int>(xin_.front().cols());
    Batch<S> dx(static_cast<std::size_t>(n));
    std::vector<Mat<S>> gw_c(kChunks);
    std::vector<Mat<S>> gb_c(kChunks);
#pragma omp parallel for schedule(dynamic, 1)
    for (int c = 0; c < kChunks; ++c) {
      const ChunkRange r = chunk_range(n, c);
      gw_c[static_cast<std::size_t>(c)].setZero(cout_, cin_ * k_);
      gb_c[static_cast<std::size_t>(c)].setZero(cout_, 1);
      if (r.end <= r.begin) continue;
      const int nb = r.end - r.begin;
      // Gather the output gradient per tap, then two GEMMs per chunk.
      Mat<S> xs(cin_, static_cast<Eigen::Index>(nb) * lin);
      Mat<S> gtap = Mat<S>::Zero(static_cast<Eigen::Index>(cout_) * k_,
                                 static_cast<Eigen::Index>(nb) * lin);
      for (int i = r.begin; i < r.end; ++i) {
        const Mat<S>& g = dy[static_cast<std::size_t>(i)];
        xs.middleCols((i - r.begin) * lin, lin) = xin_[static_cast<std::size_t>(i)];
        gb_c[static_cast<std::size_t>(c)] += g.rowwise().sum();
        for (int kk = 0; kk < k_; ++kk) {
          const auto [j0, j1] = valid_j(lin, lout, kk);
          if (j1 <= j0) continue;
          Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>> gslice(
              g.data() +
                  static_cast<std::ptrdiff_t>(j0 * stride_ - pad_ + kk) * cout_,
              cout_, j1 - j0,
              Eigen::OuterStride<>(static_cast<Eigen::Index>(stride_) * cout_));
          gtap.block(kk * cout_, (i - r.begin) * lin + j0, cout_, j1 - j0) = gslice;
        }
      }
      Mat<S> gw2 = gtap * xs.transpose();  // (cout*k) x cin
      for (int kk = 0; kk < k_; ++kk) {
        gw_c[static_cast<std::size_t>(c)].middleCols(kk * cin_, cin_) +=
            gw2.middleRows(kk * cout_, cout_);
      }
      const Mat<S> dxs = stacked_w().transpose() * gtap;  // cin x (nb*lin)
      for (int i = r.begin; i < r.end; ++i) {
        dx[static_cast<std::size_t>(i)] = dxs.middleCols((i - r.begin) * lin, lin);
      }
    }
    for (int c = 0; c < kChunks; ++c) {
      gw_ += gw_c[static_cast<std::size_t>(c)];
      gb_ += gb_c[static_cast<std::size_t>(c)];
    }
    return dx;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

 private:
  std::pair<int, int> valid_j(int lin, int lout, int kk) const {
    // j*stride - pad + kk in [0, lout)
    int j0 = 0;
    while (j0 * stride_ - pad_ + kk < 0) ++j0;
    int j1 = lin;
    while (j1 > j0 && (j1 - 1) * stride_ - pad_ + kk >= lout) --j1;
    return {j0, j1};
  }

  // Tap blocks stacked vertically: rows [kk*cout, (kk+1)*cout) hold W_kk.
  Mat<S> stacked_w() const {
    Mat<S> w2(static_cast<Eigen::Index>(cout_) * k_, cin_);
    for (int kk = 0; kk < k_; ++kk) {
      w2.middleRows(kk * cout_, cout_) = w_.middleCols(kk * cin_, cin_);
    }
    return w2;
  }

  int cin_ = 0, cout_ = 0, k_ = 0, stride_ = 1, pad_ = 0, out_pad_ = 0;
  Mat<S> w_, b_, gw_, gb_;
  Batch<S> xin_;
};

// Batch normalization over (batch, length) per channel, PyTorch semantics:
// biased variance for normalization, unbiased in the running estimate.
template <class S>
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(int channels, double momentum = 0.1)
      : c_(channels), momentum_(momentum) {
    gamma_.setOnes(channels, 1);
    beta_.setZero(channels, 1);
    ggamma_.setZero(channels, 1);
    gbeta_.setZero(channels, 1);
    run_mean_.setZero(channels, 1);
    run_var_.setOnes(channels, 1);
  }

  Batch<S> forward(const Batch<S>& x, bool train) {
    const int n = static_cast<int>(x.size());
    const int len = static_cast<int>(x.front().cols());
    const double count = static_cast<double>(n) * len;
    Vec<S> mean(c_), invstd(c_);
    if (train) {
      std::vector<Vec<S>> sum_c(kChunks), sq_c(kChunks);
      for (int c = 0; c < kChunks; ++c) {
        sum_c[static_cast<std::size_t>(c)].setZero(c_);
        sq_c[static_cast<std::size_t>(c)].setZero(c_);
      }
      parallel_chunks(n, [&](int c, int i) {
        sum_c[static_cast<std::size_t>(c)] +=
            x[static_cast<std::size_t>(i)].rowwise().sum();
        sq_c[static_cast<std::size_t>(c)] +=
            x[static_cast<std::size_t>(i)].array().square().matrix().rowwise().sum();
      });
      Vec<S> sum = Vec<S>::Zero(c_), sq = Vec<S>::Zero(c_);
      for (int c = 0; c < kChunks; ++c) {
        sum += sum_c[static_cast<std::size_t>(c)];
        sq += sq_c[static_cast<std::size_t>(c)];
      }
      mean = sum / static_cast<S>(count);
      Vec<S> var = (sq / static_cast<S>(count) - mean.array().square().matrix())
                       .cwiseMax(Vec<S>::Zero(c_));
      invstd = (var.array() + static_cast<S>(kEps)).rsqrt();
      const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
      run_mean_ = (1.0 - momentum_) * run_mean_ + momentum_ * mean;
      run_var_ = (1.0 - momentum_) * run_var_ +
                 momentum_ * (var * static_cast<S>(unbias));
      mean_ = mean;
      invstd_ = invstd;
    } else {
      mean = run_mean_;
      invstd = (run_var_.array() + static_cast<S>(kEps)).rsqrt();
    }
    Batch<S> y(static_cast<std::size_t>(n));
    if (train) xhat_.assign(static_cast<std::size_t>(n), Mat<S>());
    parallel_chunks(n, [&](int, int i) {
      Mat<S> xh = (x[static_cast<std::size_t>(i)].colwise() - mean).array().colwise() *
                  invstd.array();
      y[static_cast<std::size_t>(i)] =
          (xh.array().colwise() * gamma_.col(0).array()).colwise() +
          beta_.col(0).array();
      if (train) xhat_[static_cast<std::size_t>(i)] = std::move(xh);
    });
    return y;
  }

  Batch<S> backward(const Batch<S>& dy) {
    const int n = static_cast<int>(dy.size());
    const int len = static_cast<int>(dy.front().cols());
    const S count = static_cast<S>(n) * static_cast<S>(len);
    std::vector<Vec<S>> dsum_c(kChunks), dxh_c(kChunks);
    for (int c = 0; c < kChunks; ++c) {
      dsum_c[static_cast<std::size_t>(c)].setZero(c_);
      dxh_c[static_cast<std::size_t>(c)].setZero(c_);
    }
    parallel_chunks(n, [&](int c, int i) {
      const auto& g = dy[static_cast<std::size_t>(i)];
      dsum_c[static_cast<std::size_t>(c)] += g.rowwise().sum();
      dxh_c[static_cast<std::size_t>(c)] +=
          (g.array() * xhat_[static_cast<std::size_t>(i)].array())
              .matrix()
              .rowwise()
              .sum();
    });
    Vec<S> sum_dy = Vec<S>::Zero(c_), sum_dy_xhat = Vec<S>::Zero(c_);
    for (int c = 0; c < kChunks; ++c) {
      sum_dy += dsum_c[static_cast<std::size_t>(c)];
      sum_dy_xhat += dxh_c[static_cast<std::size_t>(c)];
    }
    gbeta_ += sum_dy;
    ggamma_ += sum_dy_xhat;

    Batch<S> dx(static_cast<std::size_t>(n));
    parallel_chunks(n, [&](int, int i) {
      const auto& g = dy[static_cast<std::size_t>(i)];
      const auto& xh = xhat_[static_cast<std::size_t>(i)];
      Mat<S> term = g * count;
      term.colwise() -= sum_dy;
      term -= (xh.array().colwise() * sum_dy_xhat.col(0).array()).matrix();
      dx[static_cast<std::size_t>(i)] =
          (term.array().colwise() *
           (gamma_.col(0).array() * invstd_.array() / count))
              .matrix();
    });
    return dx;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma_, &ggamma_});
    out.push_back({prefix + ".beta", &beta_, &gbeta_});
  }

  // Running statistics persist in checkpoints but take no gradient.
  void collect_state(std::vector<ParamRef<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".run_mean", &run_mean_, nullptr});
    out.push_back({prefix + ".run_var", &run_var_, nullptr});
  }

 private:
  static constexpr double kEps = 1e-5;
  int c_ = 0;
  double momentum_ = 0.1;
  Mat<S> gamma_, beta_, ggamma_, gbeta_, run_mean_, run_var_;
  Vec<S> mean_, invstd_;
  Batch<S> xhat_;
};

template <class S>
class LeakyRelu {
 public:
  explicit LeakyRelu(double slope = 0.01) : slope_(static_cast<S>(slope)) {}

  Batch<S> forward(const Batch<S>& x, bool cache_for_backward) {
    Batch<S> y(x.size());
    if (cache_for_backward) pos_.assign(x.size(), Mat<S>());
    parallel_chunks(static_cast<int>(x.size()), [&](int, int i) {
      const auto& xi = x[static_cast<std::size_t>(i)];
      y[static_cast<std::size_t>(i)] =
          xi.array().max(xi.array() * slope_).matrix();
      if (cache_for_backward) {
        pos_[static_cast<std::size_t>(i)] =
            (xi.array() > S(0)).template cast<S>().matrix();
      }
    });
    return y;
  }

  Batch<S> backward(const Batch<S>& dy) {
    Batch<S> dx(dy.size());
    parallel_chunks(static_cast<int>(dy.size()), [&](int, int i) {
      const auto& p = pos_[static_cast<std::size_t>(i)].array();
      dx[static_cast<std::size_t>(i)] =
          (dy[static_cast<std::size_t>(i)].array() * (p + (S(1) - p) * slope_))
              .matrix();
    });
    return dx;
  }

  Mat<S> forward_mat(const Mat<S>& x, bool cache_for_backward) {
    if (cache_for_backward) {
      mat_pos_ = (x.array() > S(0)).template cast<S>().matrix();
    }
    return x.array().max(x.array() * slope_).matrix();
  }

  Mat<S> backward_mat(const Mat<S>& dy) const {
    return (dy.array() *
            (mat_pos_.array() + (S(1) - mat_pos_.array()) * slope_))
        .matrix();
  }

 private:
  S slope_;
  Batch<S> pos_;
  Mat<S> mat_pos_;
};

template <class S>
class MaxPool1d {
 public:
  explicit MaxPool1d(int kernel = 2) : k_(kernel) {}

  Batch<S> forward(const Batch<S>& x, bool cache_for_backward) {
    const int n = static_cast<int>(x.size());
    const int c = static_cast<int>(x.front().rows());
    const int lout = static_cast<int>(x.front().cols()) / k_;
    Batch<S> y(static_cast<std::size_t>(n));
    if (cache_for_backward) {
      arg_.assign(static_cast<std::size_t>(n), Eigen::MatrixXi());
    }
    lin_ = static_cast<int>(x.front().cols());
    parallel_chunks(n, [&](int, int i) {
      const auto& xi = x[static_cast<std::size_t>(i)];
      Mat<S>& out = y[static_cast<std::size_t>(i)];
      out.resize(c, lout);
      Eigen::MatrixXi am(c, lout);
      for (int t = 0; t < lout; ++t) {
        for (int ch = 0; ch < c; ++ch) {
          int best = 0;
          S v = xi(ch, t * k_);
          for (int j = 1; j < k_; ++j) {
            if (xi(ch, t * k_ + j) > v) {
              v = xi(ch, t * k_ + j);
              best = j;
            }
          }
          out(ch, t) = v;
          am(ch, t) = best;
        }
      }
      if (cache_for_backward) arg_[static_cast<std::size_t>(i)] = std::move(am);
    });
    return y;
  }

  Batch<S> backward(const Batch<S>& dy) {
    const int n = static_cast<int>(dy.size());
    const int c = static_cast<int>(dy.front().rows());
    const int lout = static_cast<int>(dy.front().cols());
    Batch<S> dx(static_cast<std::size_t>(n));
    parallel_chunks(n, [&](int, int i) {
      Mat<S> g = Mat<S>::Zero(c, lin_);
      const auto& am = arg_[static_cast<std::size_t>(i)];
      const auto& d = dy[static_cast<std::size_t>(i)];
      for (int t = 0; t < lout; ++t) {
        for (int ch = 0; ch < c; ++ch) {
          g(ch, t * k_ + am(ch, t)) += d(ch, t);
        }
      }
      dx[static_cast<std::size_t>(i)] = std::move(g);
    });
    return dx;
  }

 private:
  int k_ = 2;
  int lin_ = 0;
  std::vector<Eigen::MatrixXi> arg_;
};

// Dense layer on column-stacked batches (features x batch).
template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng) : in_(in), out_(out) {
    w_.resize(out, in);
    b_.resize(out, 1);
    init_uniform(w_, in, rng);
    init_uniform(b_, in, rng);
    gw_.setZero(out, in);
    gb_.setZero(out, 1);
  }

  Mat<S> forward(const Mat<S>& x, bool cache_for_backward) {
    if (cache_for_backward) x_ = x;
    Mat<S> y = w_ * x;
    y.colwise() += b_.col(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    gw_.noalias() += dy * x_.transpose();
    gb_ += dy.rowwise().sum();
    return w_.transpose() * dy;
  }

  Mat<S> apply(const Mat<S>& x) const {
    Mat<S> y = w_ * x;
    y.colwise() += b_.col(0);
    return y;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

  Mat<S>& weight() { return w_; }
  Mat<S>& bias() { return b_; }

 private:
  int in_ = 0, out_ = 0;
  Mat<S> w_, b_, gw_, gb_, x_;
};

// Dense layer with a fixed binary connectivity mask (MADE-style). The mask
// is applied in the forward product, so masked weight entries are inert no
// matter what value they hold.
template <class S>
class MaskedLinear {
 public:
  MaskedLinear() = default;
  MaskedLinear(Mat<S> mask, Rng& rng)
      : mask_(std::move(mask)) {
    const int out = static_cast<int>(mask_.rows());
    const int in = static_cast<int>(mask_.cols());
    w_.resize(out, in);
    b_.resize(out, 1);
    init_uniform(w_, in, rng);
    init_uniform(b_, in, rng);
    w_ = w_.cwiseProduct(mask_);
    gw_.setZero(out, in);
    gb_.setZero(out, 1);
  }

  Mat<S> forward(const Mat<S>& x, bool cache_for_backward) {
    if (cache_for_backward) x_ = x;
    return apply(x);
  }

  Mat<S> backward(const Mat<S>& dy) {
    gw_.noalias() += (dy * x_.transpose());
    gw_ = gw_.cwiseProduct(mask_);
    gb_ += dy.rowwise().sum();
    return w_.cwiseProduct(mask_).transpose() * dy;
  }

  Mat<S> apply(const Mat<S>& x) const {
    Mat<S> y = w_.cwiseProduct(mask_) * x;
    y.colwise() += b_.col(0);
    return y;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

  void zero_params() {
    w_.setZero();
    b_.setZero();
  }

  const Mat<S>& mask() const { return mask_; }

 private:
  Mat<S> mask_, w_, b_, gw_, gb_, x_;
};

}  // namespace hemo::nn
