#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace repgan {

// Dense row-major matrix. Batches are stored one sample per row; image
// rasters are flattened height x width x channel (channel innermost), so a
// B x (H*W*C) matrix reinterprets as (B*H*W) x C without copying.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using MatMap = Eigen::Map<Mat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

// A named trainable tensor with persistent gradient storage. Parameters
// live outside any tape; tapes bind to them per forward pass.
template <class S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

template <class S>
class Tape;

// Lightweight handle into a tape node.
template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, int id) : tape_(tape), id_(id) {}
  const Mat<S>& value() const;
  const Mat<S>& grad() const;
  int id() const { return id_; }
  Tape<S>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

struct Conv2dSpec {
  int in_h = 0, in_w = 0, in_c = 0;
  int out_c = 0;
  int kernel = 0, stride = 1, pad = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int patch_cols() const { return kernel * kernel * in_c; }
};

// Per-feature batch-norm statistics, owned by the layer and serialized
// with the model (they are state, not optimized parameters).
template <class S>
struct BatchNormState {
  Mat<S> running_mean;  // 1 x C
  Mat<S> running_var;   // 1 x C
  void init(int channels) {
    running_mean = Mat<S>::Zero(1, channels);
    running_var = Mat<S>::Ones(1, channels);
  }
};

// Reverse-mode tape. Building ops records closures; backward() replays
// them newest-first and flushes leaf gradients into bound Params.
template <class S>
class Tape {
 public:
  struct Node {
    Mat<S> value;
    const Mat<S>* ext = nullptr;  // leaves may alias external storage
    Mat<S> grad;                  // allocated lazily on first contribution
    bool needs_grad = false;
    std::function<void()> back;  // empty for leaves
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input: gradient is never tracked.
  Var<S> constant(Mat<S> v) { return push(std::move(v), false, {}); }

  // Zero-copy constant over caller-owned storage, which must outlive the
  // tape (used for data batches).
  Var<S> constant_ref(const Mat<S>& v) { return push_ref(v, false); }

  // Input whose gradient is wanted (used by gradient checks and by losses
  // differentiated w.r.t. raw data).
  Var<S> input(Mat<S> v) { return push(std::move(v), true, {}); }

  // Binds a parameter as a leaf without copying it. If trainable is false
  // the leaf behaves like a constant and weight-gradient GEMMs are skipped.
  Var<S> leaf(Param<S>& p, bool trainable = true) {
    Var<S> v = push_ref(p.value, trainable);
    if (trainable) bindings_.push_back({v.id(), &p});
    return v;
  }

  const Mat<S>& value(int id) const { return nodes_[id].ext ? *nodes_[id].ext : nodes_[id].value; }
  const Mat<S>& grad(int id) const { return nodes_[id].grad; }

  // Backpropagates from a scalar node and accumulates leaf gradients into
  // their bound Params (+=, so callers control when grads are zeroed).
  void backward(Var<S> loss) {
    if (value(loss.id()).size() != 1) throw std::logic_error("backward: loss must be scalar");
    ensure_grad(loss.id());
    nodes_[loss.id()].grad(0, 0) = S(1);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back();
    }
    for (auto& [id, param] : bindings_) {
      if (nodes_[id].grad.size() != 0) param->grad += nodes_[id].grad;
    }
  }

  // ---- primitive ops ----

  Var<S> matmul(Var<S> a, Var<S> b) {
    const Mat<S>& A = val(a);
    const Mat<S>& B = val(b);
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dims differ");
    Mat<S> out(A.rows(), B.cols());
    out.noalias() = A * B;
    return push(std::move(out), needs(a) || needs(b), [this, a, b](int o) {
      const Mat<S>& g = nodes_[o].grad;
      if (needs(a)) grad_ref(a).noalias() += g * val(b).transpose();
      if (needs(b)) grad_ref(b).noalias() += val(a).transpose() * g;
    });
  }

  Var<S> add(Var<S> a, Var<S> b) {
    check_same(a, b, "add");
    Mat<S> out = val(a) + val(b);
    return push(std::move(out), needs(a) || needs(b), [this, a, b](int o) {
      const Mat<S>& g = nodes_[o].grad;
      if (needs(a)) grad_ref(a) += g;
      if (needs(b)) grad_ref(b) += g;
    });
  }

  Var<S> sub(Var<S> a, Var<S> b) {
    check_same(a, b, "sub");
    Mat<S> out = val(a) - val(b);
    return push(std::move(out), needs(a) || needs(b), [this, a, b](int o) {
      const Mat<S>& g = nodes_[o].grad;
      if (needs(a)) grad_ref(a) += g;
      if (needs(b)) grad_ref(b) -= g;
    });
  }

  Var<S> mul(Var<S> a, Var<S> b) {
    check_same(a, b, "mul");
    Mat<S> out = val(a).cwiseProduct(val(b));
    return push(std::move(out), needs(a) || needs(b), [this, a, b](int o) {
      const Mat<S>& g = nodes_[o].grad;
      if (needs(a)) grad_ref(a) += g.cwiseProduct(val(b));
      if (needs(b)) grad_ref(b) += g.cwiseProduct(val(a));
    });
  }

  Var<S> div(Var<S> a, Var<S> b) {
    check_same(a, b, "div");
    Mat<S> out = val(a).cwiseQuotient(val(b));
    return push(std::move(out), needs(a) || needs(b), [this, a, b](int o) {
      const Mat<S>& g = nodes_[o].grad;
      if (needs(a)) grad_ref(a) += g.cwiseQuotient(val(b));
      if (needs(b)) grad_ref(b) -= g.cwiseProduct(val(a)).cwiseQuotient(val(b).cwiseProduct(val(b)));
    });
  }

  // Broadcast-add a 1 x F row vector to every row.
  Var<S> add_rowvec(Var<S> x, Var<S> b) {
    const Mat<S>& X = val(x);
    const Mat<S>& B = val(b);
    if (B.rows() != 1 || B.cols() != X.cols()) throw std::invalid_argument("add_rowvec: bad bias shape");
    Mat<S> out = X.rowwise() + B.row(0);
    return push(std::move(out), needs(x) || needs(b), [this, x, b](int o) {
      const Mat<S>& g = nodes_[o].grad;
      if (needs(x)) grad_ref(x) += g;
      if (needs(b)) grad_ref(b) += g.colwise().sum();
    });
  }

  Var<S> scale(Var<S> x, S c) {
    Mat<S> out = val(x) * c;
    return push(std::move(out), needs(x), [this, x, c](int o) {
      if (needs(x)) grad_ref(x) += nodes_[o].grad * c;
    });
  }

  Var<S> add_const(Var<S> x, S c) {
    Mat<S> out = val(x).array() + c;
    return push(std::move(out), needs(x), [this, x](int o) {
      if (needs(x)) grad_ref(x) += nodes_[o].grad;
    });
  }

  Var<S> relu(Var<S> x) {
    Mat<S> out = val(x).cwiseMax(S(0));
    return push(std::move(out), needs(x), [this, x](int o) {
      if (!needs(x)) return;
      grad_ref(x).array() += nodes_[o].grad.array() * (val(x).array() > S(0)).template cast<S>();
    });
  }

  Var<S> leaky_relu(Var<S> x, S slope) {
    Mat<S> out = val(x).cwiseMax(val(x) * slope);
    return push(std::move(out), needs(x), [this, x, slope](int o) {
      if (!needs(x)) return;
      auto mask = (val(x).array() > S(0)).template cast<S>();
      grad_ref(x).array() += nodes_[o].grad.array() * (mask + (S(1) - mask) * slope);
    });
  }

  Var<S> sigmoid(Var<S> x) {
    Mat<S> out = (S(1) / (S(1) + (-val(x).array()).exp())).matrix();
    return push(std::move(out), needs(x), [this, x](int o) {
      if (!needs(x)) return;
      const auto& y = nodes_[o].value.array();
      grad_ref(x).array() += nodes_[o].grad.array() * y * (S(1) - y);
    });
  }

  Var<S> exp_(Var<S> x) {
    Mat<S> out = val(x).array().exp().matrix();
    return push(std::move(out), needs(x), [this, x](int o) {
      if (!needs(x)) return;
      grad_ref(x).array() += nodes_[o].grad.array() * nodes_[o].value.array();
    });
  }

  // log(max(x, eps)); gradient is 1/x inside the clamp and 0 below it.
  Var<S> log_clamped(Var<S> x, S eps) {
    Mat<S> out = val(x).array().max(eps).log().matrix();
    return push(std::move(out), needs(x), [this, x, eps](int o) {
      if (!needs(x)) return;
      auto inside = (val(x).array() >= eps).template cast<S>();
      grad_ref(x).array() += nodes_[o].grad.array() * inside / val(x).array().max(eps);
    });
  }

  Var<S> clamp(Var<S> x, S lo, S hi) {
    Mat<S> out = val(x).array().max(lo).min(hi).matrix();
    return push(std::move(out), needs(x), [this, x, lo, hi](int o) {
      if (!needs(x)) return;
      auto inside = ((val(x).array() >= lo) && (val(x).array() <= hi)).template cast<S>();
      grad_ref(x).array() += nodes_[o].grad.array() * inside;
    });
  }

  Var<S> square(Var<S> x) {
    Mat<S> out = val(x).array().square().matrix();
    return push(std::move(out), needs(x), [this, x](int o) {
      if (!needs(x)) return;
      grad_ref(x).array() += nodes_[o].grad.array() * S(2) * val(x).array();
    });
  }

  // Numerically stabilized row-wise softmax.
  Var<S> softmax_rows(Var<S> x) {
    Mat<S> out = val(x);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      auto row = out.row(r).array();
      row -= row.maxCoeff();
      row = row.exp();
      row /= row.sum();
    }
    return push(std::move(out), needs(x), [this, x](int o) {
      if (!needs(x)) return;
      const Mat<S>& y = nodes_[o].value;
      const Mat<S>& g = nodes_[o].grad;
      Mat<S>& gx = grad_ref(x);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const S dot = y.row(r).dot(g.row(r));
        gx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    });
  }

  Var<S> sum_all(Var<S> x) {
    Mat<S> out(1, 1);
    out(0, 0) = val(x).sum();
    return push(std::move(out), needs(x), [this, x](int o) {
      if (needs(x)) grad_ref(x).array() += nodes_[o].grad(0, 0);
    });
  }

  Var<S> mean_all(Var<S> x) {
    Mat<S> out(1, 1);
    out(0, 0) = val(x).mean();
    return push(std::move(out), needs(x), [this, x](int o) {
      if (needs(x)) grad_ref(x).array() += nodes_[o].grad(0, 0) / static_cast<S>(val(x).size());
    });
  }

  Var<S> concat_cols(std::span<const Var<S>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index rows = val(parts[0]).rows(), cols = 0;
    bool any = false;
    for (const auto& p : parts) {
      if (val(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
      cols += val(p).cols();
      any = any || needs(p);
    }
    Mat<S> out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      out.middleCols(at, val(p).cols()) = val(p);
      at += val(p).cols();
    }
    std::vector<Var<S>> ps(parts.begin(), parts.end());
    return push(std::move(out), any, [this, ps = std::move(ps)](int o) {
      const Mat<S>& g = nodes_[o].grad;
      Eigen::Index at = 0;
      for (const auto& p : ps) {
        const Eigen::Index w = val(p).cols();
        if (needs(p)) grad_ref(p) += g.middleCols(at, w);
        at += w;
      }
    });
  }

  Var<S> slice_cols(Var<S> x, Eigen::Index first, Eigen::Index count) {
    Mat<S> out = val(x).middleCols(first, count);
    return push(std::move(out), needs(x), [this, x, first, count](int o) {
      if (needs(x)) grad_ref(x).middleCols(first, count) += nodes_[o].grad;
    });
  }

  // Convolution via im2col + GEMM. x: B x (H*W*C), w: (k*k*inC) x outC,
  // b: 1 x outC. Output: B x (outH*outW*outC).
  Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, const Conv2dSpec& cs) {
    const Mat<S>& X = val(x);
    const int B = static_cast<int>(X.rows());
    const int oh = cs.out_h(), ow = cs.out_w();
    if (X.cols() != cs.in_h * cs.in_w * cs.in_c) throw std::invalid_argument("conv2d: bad input width");
    if (val(w).rows() != cs.patch_cols() || val(w).cols() != cs.out_c)
      throw std::invalid_argument("conv2d: bad weight shape");

    auto patches = std::make_shared<Mat<S>>(im2col(X, cs));
    Mat<S> out2d(B * oh * ow, cs.out_c);
    out2d.noalias() = *patches * val(w);
    out2d.rowwise() += val(b).row(0);
    MatMap<S> out(out2d.data(), B, static_cast<Eigen::Index>(oh) * ow * cs.out_c);
    Mat<S> shaped = out;
    return push(std::move(shaped), needs(x) || needs(w) || needs(b),
                [this, x, w, b, cs, patches, B, oh, ow](int o) {
                  ConstMatMap<S> g2d(nodes_[o].grad.data(),
                                     static_cast<Eigen::Index>(B) * oh * ow, cs.out_c);
                  if (needs(w)) grad_ref(w).noalias() += patches->transpose() * g2d;
                  if (needs(b)) grad_ref(b) += g2d.colwise().sum();
                  if (needs(x)) {
                    Mat<S> dpatch(g2d.rows(), cs.patch_cols());
                    dpatch.noalias() = g2d * val(w).transpose();
                    col2im_add(dpatch, cs, grad_ref(x));
                  }
                });
  }

  // Transposed convolution (the adjoint of conv2d with the same spec).
  // cs describes the *downsampling* direction: output raster (cs.in_*) is
  // the deconv result, input x is B x (outH*outW*outC_of_cs).
  // w: (k*k*cs.out_c... see conv layout) shared with an equivalent conv.
  // Concretely: x: B x (oh*ow*cs.out_c) -> y: B x (in_h*in_w*in_c).
  Var<S> deconv2d(Var<S> x, Var<S> w, Var<S> b, const Conv2dSpec& cs) {
    const Mat<S>& X = val(x);
    const int B = static_cast<int>(X.rows());
    const int oh = cs.out_h(), ow = cs.out_w();
    if (X.cols() != static_cast<Eigen::Index>(oh) * ow * cs.out_c)
      throw std::invalid_argument("deconv2d: bad input width");
    if (val(w).rows() != cs.patch_cols() || val(w).cols() != cs.out_c)
      throw std::invalid_argument("deconv2d: bad weight shape");
    if (val(b).cols() != cs.in_c) throw std::invalid_argument("deconv2d: bad bias width");

    ConstMatMap<S> x2d(X.data(), static_cast<Eigen::Index>(B) * oh * ow, cs.out_c);
    Mat<S> patches(x2d.rows(), cs.patch_cols());
    patches.noalias() = x2d * val(w).transpose();
    Mat<S> y = Mat<S>::Zero(B, static_cast<Eigen::Index>(cs.in_h) * cs.in_w * cs.in_c);
    col2im_add(patches, cs, y);
    // per-channel bias on the upsampled raster
    MatMap<S> y2d(y.data(), static_cast<Eigen::Index>(B) * cs.in_h * cs.in_w, cs.in_c);
    y2d.rowwise() += val(b).row(0);
    return push(std::move(y), needs(x) || needs(w) || needs(b),
                [this, x, w, b, cs, B, oh, ow](int o) {
                  Mat<S> dpatch = im2col(nodes_[o].grad, cs);
                  ConstMatMap<S> x2d(val(x).data(), static_cast<Eigen::Index>(B) * oh * ow, cs.out_c);
                  if (needs(x)) {
                    MatMap<S> gx2d(grad_ref(x).data(), x2d.rows(), cs.out_c);
                    gx2d.noalias() += dpatch * val(w);
                  }
                  if (needs(w)) grad_ref(w).noalias() += dpatch.transpose() * x2d;
                  if (needs(b)) {
                    ConstMatMap<S> g2d(nodes_[o].grad.data(),
                                       static_cast<Eigen::Index>(B) * cs.in_h * cs.in_w, cs.in_c);
                    grad_ref(b) += g2d.colwise().sum();
                  }
                });
  }

  // Batch normalization over `channels`-sized feature groups. The node is
  // treated as a (size/channels) x channels matrix, which matches both FC
  // outputs (rows = batch) and HWC conv rasters (rows = B*H*W).
  // In train mode batch statistics normalize and running stats are updated
  // (unbiased variance, torch-style momentum); in eval mode running stats
  // normalize and the op is a pure function.
  Var<S> batchnorm(Var<S> x, Var<S> gamma, Var<S> beta, BatchNormState<S>& state,
                   int channels, bool train, S momentum, S eps) {
    const Mat<S>& X = val(x);
    if (X.size() % channels != 0) throw std::invalid_argument("batchnorm: size not divisible by channels");
    const Eigen::Index n = X.size() / channels;
    ConstMatMap<S> x2d(X.data(), n, channels);

    auto mean = std::make_shared<Mat<S>>(1, channels);
    auto inv_std = std::make_shared<Mat<S>>(1, channels);
    if (train) {
      mean->row(0) = x2d.colwise().mean();
      Mat<S> var(1, channels);
      var.row(0) = (x2d.rowwise() - mean->row(0)).array().square().colwise().mean();
      inv_std->row(0) = (var.row(0).array() + eps).rsqrt();
      const S unbias = n > 1 ? static_cast<S>(n) / static_cast<S>(n - 1) : S(1);
      state.running_mean = (S(1) - momentum) * state.running_mean + momentum * *mean;
      state.running_var = (S(1) - momentum) * state.running_var + momentum * (var * unbias);
    } else {
      *mean = state.running_mean;
      inv_std->row(0) = (state.running_var.row(0).array() + eps).rsqrt();
    }

    auto xhat = std::make_shared<Mat<S>>(n, channels);
    *xhat = (x2d.rowwise() - mean->row(0)).array().rowwise() * inv_std->row(0).array();
    Mat<S> out2d = (xhat->array().rowwise() * val(gamma).row(0).array()).rowwise() +
                   val(beta).row(0).array();
    MatMap<S> out(out2d.data(), X.rows(), X.cols());
    Mat<S> shaped = out;
    return push(std::move(shaped), needs(x) || needs(gamma) || needs(beta),
                [this, x, gamma, beta, xhat, inv_std, n, channels, train](int o) {
                  ConstMatMap<S> g2d(nodes_[o].grad.data(), n, channels);
                  if (needs(beta)) grad_ref(beta) += g2d.colwise().sum();
                  if (needs(gamma)) grad_ref(gamma) += (g2d.array() * xhat->array()).colwise().sum().matrix();
                  if (!needs(x)) return;
                  MatMap<S> gx2d(grad_ref(x).data(), n, channels);
                  if (train) {
                    // d/dx of batch-stat normalization
                    Mat<S> gxh = g2d.array().rowwise() * val(gamma).row(0).array();
                    Mat<S> sum_g = gxh.colwise().sum();                                // 1 x C
                    Mat<S> sum_gx = (gxh.array() * xhat->array()).colwise().sum();     // 1 x C
                    const S invn = S(1) / static_cast<S>(n);
                    gx2d.array() += (gxh.array() - (sum_g.array() * invn).replicate(n, 1) -
                                     xhat->array() * (sum_gx.array() * invn).replicate(n, 1))
                                        .rowwise() *
                                    inv_std->row(0).array();
                  } else {
                    gx2d.array() += g2d.array().rowwise() *
                                    (val(gamma).row(0).array() * inv_std->row(0).array());
                  }
                });
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var<S>;

  const Mat<S>& val(Var<S> v) const { return value(v.id()); }
  bool needs(Var<S> v) const { return nodes_[v.id()].needs_grad; }

  Mat<S>& grad_ref(Var<S> v) {
    Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(val(v).rows(), val(v).cols());
    return n.grad;
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(value(id).rows(), value(id).cols());
  }

  void check_same(Var<S> a, Var<S> b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  Var<S> push(Mat<S> value, bool needs_grad, std::function<void(int)> back) {
    const int id = static_cast<int>(nodes_.size());
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (back && needs_grad) n.back = [this, id, back = std::move(back)]() { back(id); };
    nodes_.push_back(std::move(n));
    return Var<S>(this, id);
  }

  Var<S> push_ref(const Mat<S>& value, bool needs_grad) {
    const int id = static_cast<int>(nodes_.size());
    Node n;
    n.ext = &value;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var<S>(this, id);
  }

  // Gathers k x k x C patches for every output pixel of `cs`.
  Mat<S> im2col(const Mat<S>& x, const Conv2dSpec& cs) const {
    const int B = static_cast<int>(x.rows());
    const int oh = cs.out_h(), ow = cs.out_w();
    Mat<S> patches(static_cast<Eigen::Index>(B) * oh * ow, cs.patch_cols());
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
      const S* src = x.data() + static_cast<std::ptrdiff_t>(b) * x.cols();
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo) {
          S* dst = patches.data() +
                   (static_cast<std::ptrdiff_t>(b) * oh * ow + static_cast<std::ptrdiff_t>(y) * ow + xo) *
                       cs.patch_cols();
          for (int ky = 0; ky < cs.kernel; ++ky) {
            const int iy = y * cs.stride - cs.pad + ky;
            for (int kx = 0; kx < cs.kernel; ++kx) {
              const int ix = xo * cs.stride - cs.pad + kx;
              S* cell = dst + (static_cast<std::ptrdiff_t>(ky) * cs.kernel + kx) * cs.in_c;
              if (iy < 0 || iy >= cs.in_h || ix < 0 || ix >= cs.in_w) {
                std::fill(cell, cell + cs.in_c, S(0));
              } else {
                const S* px = src + (static_cast<std::ptrdiff_t>(iy) * cs.in_w + ix) * cs.in_c;
                std::copy(px, px + cs.in_c, cell);
              }
            }
          }
        }
      }
    }
    return patches;
  }

  // Scatter-adds patch rows back onto the input raster (adjoint of im2col).
  void col2im_add(const Mat<S>& patches, const Conv2dSpec& cs, Mat<S>& x) const {
    const int B = static_cast<int>(x.rows());
    const int oh = cs.out_h(), ow = cs.out_w();
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
      S* dst = x.data() + static_cast<std::ptrdiff_t>(b) * x.cols();
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo) {
          const S* src = patches.data() +
                         (static_cast<std::ptrdiff_t>(b) * oh * ow + static_cast<std::ptrdiff_t>(y) * ow + xo) *
                             cs.patch_cols();
          for (int ky = 0; ky < cs.kernel; ++ky) {
            const int iy = y * cs.stride - cs.pad + ky;
            if (iy < 0 || iy >= cs.in_h) continue;
            for (int kx = 0; kx < cs.kernel; ++kx) {
              const int ix = xo * cs.stride - cs.pad + kx;
              if (ix < 0 || ix >= cs.in_w) continue;
              const S* cell = src + (static_cast<std::ptrdiff_t>(ky) * cs.kernel + kx) * cs.in_c;
              S* px = dst + (static_cast<std::ptrdiff_t>(iy) * cs.in_w + ix) * cs.in_c;
              for (int c = 0; c < cs.in_c; ++c) px[c] += cell[c];
            }
          }
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param<S>*>> bindings_;
};

template <class S>
const Mat<S>& Var<S>::value() const {
  return tape_->value(id_);
}
template <class S>
const Mat<S>& Var<S>::grad() const {
  return tape_->grad(id_);
}

// Convenience operators; all dispatch through the owning tape.
template <class S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return a.tape()->add(a, b);
}
template <class S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return a.tape()->sub(a, b);
}
template <class S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return a.tape()->mul(a, b);
}

}  // namespace repgan
