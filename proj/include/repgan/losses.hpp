#pragma once

// The seven terms of the training objective as differentiable scalars.
// Reconstruction terms: L2 image loss, categorical cross-entropy, Gaussian
// negative log-likelihood. Adversarial terms: sigmoid GAN for the image
// discriminator, WGAN-style score differences for the latent critics.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

#include "repgan/tensor.hpp"

namespace repgan {

enum class Phase { XRepX, RepXRep };

inline const char* phase_name(Phase p) { return p == Phase::XRepX ? "x-Rep-x" : "Rep-x-Rep"; }

struct LossReport {
  double adv_c = 0, adv_s = 0, adv_n = 0, adv_x = 0;
  double rec_x = 0, rec_c = 0, rec_s = 0;
  Phase phase = Phase::XRepX;
  std::uint64_t step = 0;

  bool all_finite() const {
    for (double v : {adv_c, adv_s, adv_n, adv_x, rec_x, rec_c, rec_s})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline constexpr double kLogClamp = 1e-12;

// Per-pixel mean squared error (denominator = batch * pixels).
template <class S>
Var<S> rec_x_loss(Tape<S>& t, Var<S> x, Var<S> x_hat) {
  return t.mean_all(t.square(t.sub(x, x_hat)));
}

// -sum(c_true .* log(c_probs)) averaged over the batch.
template <class S>
Var<S> rec_c_loss(Tape<S>& t, Var<S> c_true, Var<S> c_probs) {
  const S inv_b = S(1) / static_cast<S>(c_true.value().rows());
  auto ll = t.sum_all(t.mul(c_true, t.log_clamped(c_probs, static_cast<S>(kLogClamp))));
  return t.scale(ll, -inv_b);
}

// Gaussian NLL: sum_d [0.5 ln(2 pi) + ln sigma_d + (s_d - mu_d)^2 / (2 sigma_d^2)],
// averaged over the batch.
template <class S>
Var<S> rec_s_loss(Tape<S>& t, Var<S> s_true, Var<S> mu, Var<S> sigma) {
  const Eigen::Index b = s_true.value().rows();
  const Eigen::Index d = s_true.value().cols();
  const S inv_b = S(1) / static_cast<S>(b);
  auto quad = t.div(t.square(t.sub(s_true, mu)), t.scale(t.square(sigma), S(2)));
  auto terms = t.add(t.log_clamped(sigma, static_cast<S>(kLogClamp)), quad);
  auto summed = t.scale(t.sum_all(terms), inv_b);
  const S half_ln_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));
  return t.add_const(summed, static_cast<S>(d) * half_ln_2pi);
}

// Image-discriminator losses. Inputs are probabilities in (0,1); the logs
// are clamped so saturated discriminators cannot produce inf.
template <class S>
Var<S> adv_x_disc_loss(Tape<S>& t, Var<S> d_real, Var<S> d_fake) {
  auto real_term = t.mean_all(t.log_clamped(d_real, static_cast<S>(kLogClamp)));
  auto fake_term =
      t.mean_all(t.log_clamped(t.add_const(t.scale(d_fake, S(-1)), S(1)), static_cast<S>(kLogClamp)));
  return t.scale(t.add(real_term, fake_term), S(-1));
}

// Non-saturating generator loss -mean(log d_fake).
template <class S>
Var<S> adv_x_gen_loss(Tape<S>& t, Var<S> d_fake) {
  return t.scale(t.mean_all(t.log_clamped(d_fake, static_cast<S>(kLogClamp))), S(-1));
}

template <class S>
std::pair<Var<S>, Var<S>> adv_x_losses(Tape<S>& t, Var<S> d_real, Var<S> d_fake) {
  return {adv_x_disc_loss(t, d_real, d_fake), adv_x_gen_loss(t, d_fake)};
}

// Latent-critic losses on raw scores. The critic drives prior scores up
// and encoded scores down; the encoder maximizes its own scores.
template <class S>
Var<S> adv_z_critic_loss(Tape<S>& t, Var<S> scores_prior, Var<S> scores_encoded) {
  return t.sub(t.mean_all(scores_encoded), t.mean_all(scores_prior));
}

template <class S>
Var<S> adv_z_encoder_loss(Tape<S>& t, Var<S> scores_encoded) {
  return t.scale(t.mean_all(scores_encoded), S(-1));
}

template <class S>
std::pair<Var<S>, Var<S>> adv_z_losses(Tape<S>& t, Var<S> scores_prior, Var<S> scores_encoded) {
  return {adv_z_critic_loss(t, scores_prior, scores_encoded), adv_z_encoder_loss(t, scores_encoded)};
}

}  // namespace repgan
