#pragma once

// Latent data model: the disentangled (c, s, n) triple or the entangled
// single Gaussian z, prior sampling, and the reparameterization transform.

#include <optional>
#include <stdexcept>

#include "repgan/rng.hpp"
#include "repgan/tensor.hpp"

namespace repgan {

struct LatentConfig {
  int kc = 10;                 // categorical slot size
  int ks = 2;                  // continuous slot size
  int kn = 20;                 // noise slot size
  double slot_variance = 0.5;  // prior variance of s and n (and z)
  std::optional<int> entangled_dim;  // single-Gaussian variant when set

  bool entangled() const { return entangled_dim.has_value(); }
  int code_dim() const { return entangled() ? *entangled_dim : kc + ks + kn; }

  void validate() const {
    if (entangled()) {
      if (*entangled_dim < 1) throw std::invalid_argument("latent: entangled_dim must be >= 1");
    } else {
      if (kc < 2) throw std::invalid_argument("latent: kc must be >= 2");
      if (ks < 0 || kn < 0) throw std::invalid_argument("latent: ks and kn must be >= 0");
    }
    if (!(slot_variance > 0.0)) throw std::invalid_argument("latent: slot_variance must be > 0");
  }
};

// A batch of latent codes, one per row.
template <class S>
struct LatentBatch {
  Mat<S> c;  // B x kc one-hot rows   (disentangled)
  Mat<S> s;  // B x ks                (disentangled)
  Mat<S> n;  // B x kn                (disentangled)
  Mat<S> z;  // B x dim               (entangled)

  bool entangled() const { return z.size() != 0; }

  Mat<S> concat() const {
    if (entangled()) return z;
    Mat<S> out(c.rows(), c.cols() + s.cols() + n.cols());
    out << c, s, n;
    return out;
  }
};

// One-hot rows sampled uniformly over kc categories.
template <class S>
Mat<S> sample_categorical(int kc, int batch, RngStream& rng) {
  if (kc < 2) throw std::invalid_argument("sample_categorical: kc must be >= 2");
  Mat<S> out = Mat<S>::Zero(batch, kc);
  for (int b = 0; b < batch; ++b) out(b, rng.uniform_int(kc)) = S(1);
  return out;
}

// I.i.d. N(0, variance) entries.
template <class S>
Mat<S> sample_gaussian(int dim, double variance, int batch, RngStream& rng) {
  if (dim < 1) throw std::invalid_argument("sample_gaussian: dim must be >= 1");
  if (!(variance > 0.0)) throw std::invalid_argument("sample_gaussian: variance must be > 0");
  const double sd = std::sqrt(variance);
  Mat<S> out(batch, dim);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<S>(rng.normal() * sd);
  return out;
}

template <class S>
LatentBatch<S> sample_prior(const LatentConfig& cfg, int batch, RngStream& rng) {
  cfg.validate();
  LatentBatch<S> out;
  if (cfg.entangled()) {
    out.z = sample_gaussian<S>(*cfg.entangled_dim, cfg.slot_variance, batch, rng);
    return out;
  }
  out.c = sample_categorical<S>(cfg.kc, batch, rng);
  out.s = cfg.ks > 0 ? sample_gaussian<S>(cfg.ks, cfg.slot_variance, batch, rng) : Mat<S>(batch, 0);
  out.n = cfg.kn > 0 ? sample_gaussian<S>(cfg.kn, cfg.slot_variance, batch, rng) : Mat<S>(batch, 0);
  return out;
}

// mu + sigma .* eps, differentiable w.r.t. mu and sigma.
template <class S>
Var<S> reparameterize(Tape<S>& t, Var<S> mu, Var<S> sigma, Var<S> eps) {
  if (sigma.value().minCoeff() <= S(0))
    throw std::invalid_argument("reparameterize: sigma must be positive");
  return t.add(mu, t.mul(sigma, eps));
}

// Plain-value flavor for evaluation paths.
template <class S>
Mat<S> reparameterize(const Mat<S>& mu, const Mat<S>& sigma, const Mat<S>& eps) {
  if (sigma.minCoeff() <= S(0))
    throw std::invalid_argument("reparameterize: sigma must be positive");
  return mu + sigma.cwiseProduct(eps);
}

}  // namespace repgan
