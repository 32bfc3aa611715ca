#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "carfield/errors.hpp"
#include "carfield/field.hpp"

namespace carfield {

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr = 1e-3;
  double eps = 1e-8;
  double lr_final = 1e-4;
  int64_t step_max = 200000;

  void validate() const {
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw InvalidArgument("optimizer config: betas must lie in [0, 1)");
    }
    if (lr <= 0 || lr_final <= 0 || eps <= 0) {
      throw InvalidArgument("optimizer config: lr, lr_final, and eps must be positive");
    }
    if (step_max < 1) throw InvalidArgument("optimizer config: step_max must be positive");
  }
};

// Geometric interpolation from lr to lr_final over step_max, constant after.
inline double lr_at(const OptimConfig& cfg, int64_t step) {
  const double frac =
      static_cast<double>(std::min(step, cfg.step_max)) / static_cast<double>(cfg.step_max);
  return cfg.lr * std::pow(cfg.lr_final / cfg.lr, frac);
}

// Rectified Adam over a fixed parameter registry. Falls back to the
// momentum-only update while the variance rectification term is inactive
// (early steps), per the original recurrence.
template <typename T>
class RAdam {
 public:
  RAdam(std::vector<Param<T>*> params, OptimConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (Param<T>* p : params_) {
      m_.push_back(MatX<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(MatX<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  int64_t steps_done() const { return t_; }
  double current_lr() const { return lr_at(cfg_, t_); }

  // Consumes the gradients accumulated in each Param::grad.
  void step() {
    const double alpha = lr_at(cfg_, t_);
    ++t_;
    const double b1t = std::pow(cfg_.beta1, static_cast<double>(t_));
    const double b2t = std::pow(cfg_.beta2, static_cast<double>(t_));
    const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
    const double rho = rho_inf - 2.0 * static_cast<double>(t_) * b2t / (1.0 - b2t);
    const bool rectified = rho > 4.0;
    double rect = 0.0;
    if (rectified) {
      rect = std::sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf) /
                       ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
    }
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T m_corr = static_cast<T>(1.0 / (1.0 - b1t));
    const T v_corr = static_cast<T>(1.0 / (1.0 - b2t));
    const T eps = static_cast<T>(cfg_.eps);

    for (size_t i = 0; i < params_.size(); ++i) {
      const MatX<T>& g = params_[i]->grad;
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      if (rectified) {
        const T scale = static_cast<T>(alpha * rect);
        params_[i]->value.array() -=
            scale * (m_[i].array() * m_corr) / ((v_[i].array() * v_corr).sqrt() + eps);
      } else {
        params_[i]->value -= static_cast<T>(alpha) * m_corr * m_[i];
      }
    }
  }

 private:
  std::vector<Param<T>*> params_;
  OptimConfig cfg_;
  std::vector<MatX<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace carfield
