#pragma once

// Per-network-group optimizers. Adam (beta1 = 0.5, GAN convention) drives
// the encoder, decoder and image discriminator; RMSProp drives the
// weight-clipped latent critics.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "repgan/tensor.hpp"

namespace repgan {

template <class S>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Param<S>*> params, S lr, S beta1 = S(0.5), S beta2 = S(0.999), S eps = S(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > S(0))) throw std::invalid_argument("Adam: lr must be > 0");
    slots_.reserve(params_.size());
    for (auto* p : params_)
      slots_.push_back({Mat<S>::Zero(p->value.rows(), p->value.cols()),
                        Mat<S>::Zero(p->value.rows(), p->value.cols())});
  }

  // Applies one update from the accumulated gradients, then zeroes them.
  void step() {
    ++t_;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<S>& p = *params_[i];
      auto& [m, v] = slots_[i];
      m = beta1_ * m + (S(1) - beta1_) * p.grad;
      v.array() = beta2_ * v.array() + (S(1) - beta2_) * p.grad.array().square();
      p.value.array() -= lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
      p.grad.setZero();
    }
  }

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }

  // State enumeration for checkpointing; names derive from the params.
  void for_each_state(const std::function<void(const std::string&, Mat<S>&)>& fn) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      fn(params_[i]->name + ".adam_m", slots_[i].first);
      fn(params_[i]->name + ".adam_v", slots_[i].second);
    }
  }

 private:
  std::vector<Param<S>*> params_;
  std::vector<std::pair<Mat<S>, Mat<S>>> slots_;
  S lr_{}, beta1_{}, beta2_{}, eps_{};
  std::uint64_t t_ = 0;
};

template <class S>
class RMSProp {
 public:
  RMSProp() = default;
  RMSProp(std::vector<Param<S>*> params, S lr, S rho = S(0.9), S eps = S(1e-8))
      : params_(std::move(params)), lr_(lr), rho_(rho), eps_(eps) {
    if (!(lr > S(0))) throw std::invalid_argument("RMSProp: lr must be > 0");
    ms_.reserve(params_.size());
    for (auto* p : params_) ms_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<S>& p = *params_[i];
      Mat<S>& ms = ms_[i];
      ms.array() = rho_ * ms.array() + (S(1) - rho_) * p.grad.array().square();
      p.value.array() -= lr_ * p.grad.array() / (ms.array().sqrt() + eps_);
      p.grad.setZero();
    }
  }

  void for_each_state(const std::function<void(const std::string&, Mat<S>&)>& fn) {
    for (std::size_t i = 0; i < params_.size(); ++i) fn(params_[i]->name + ".rms_ms", ms_[i]);
  }

 private:
  std::vector<Param<S>*> params_;
  std::vector<Mat<S>> ms_;
  S lr_{}, rho_{}, eps_{};
};

}  // namespace repgan
