#pragma once

#include <cmath>

#include "hemo/nn/core.hpp"

namespace hemo::nn {

template <class S>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<ParamRef<S>> params, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
      v_.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      if (p.grad) p.grad->setZero();
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.grad) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      m = static_cast<S>(b1_) * m + static_cast<S>(1.0 - b1_) * (*p.grad);
      v = (static_cast<S>(b2_) * v.array() +
           static_cast<S>(1.0 - b2_) * p.grad->array().square())
              .matrix();
      p.value->array() -=
          static_cast<S>(lr_) * (m.array() / static_cast<S>(bc1)) /
          ((v.array() / static_cast<S>(bc2)).sqrt() + static_cast<S>(eps_));
    }
  }

 private:
  std::vector<ParamRef<S>> params_;
  double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

}  // namespace hemo::nn
