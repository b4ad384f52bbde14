#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "repgan/rng.hpp"
#include "repgan/tensor.hpp"

using namespace repgan;
using repgan::testing::max_rel_grad_error;
using repgan::testing::random_mat;

namespace {

using D = double;
constexpr double kTol = 1e-6;

Param<D> make_param(const char* name, Eigen::Index r, Eigen::Index c, RngStream& rng,
                    double scale = 1.0) {
  Param<D> p(name, r, c);
  p.value = random_mat<D>(r, c, rng, scale);
  return p;
}

}  // namespace

TEST_CASE("matmul forward matches naive loops") {
  RngStream rng(1);
  Mat<D> a = random_mat<D>(3, 4, rng), b = random_mat<D>(4, 5, rng);
  Tape<D> t;
  Mat<D> out = t.matmul(t.constant(a), t.constant(b)).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      CHECK(out(i, j) == doctest::Approx(acc).epsilon(kTol));
    }
}

TEST_CASE("gradients of elementwise and matrix primitives") {
  RngStream rng(2);
  auto a = make_param("a", 4, 3, rng);
  auto b = make_param("b", 4, 3, rng);
  auto w = make_param("w", 3, 5, rng);
  auto bias = make_param("bias", 1, 5, rng);

  SUBCASE("matmul + bias + mean") {
    const double err = max_rel_grad_error<D>({&a, &w, &bias}, [&](Tape<D>& t) {
      auto y = t.add_rowvec(t.matmul(t.leaf(a), t.leaf(w)), t.leaf(bias));
      return t.mean_all(t.square(y));
    });
    CHECK(err < 1e-6);
  }
  SUBCASE("add/sub/mul/div chain") {
    const double err = max_rel_grad_error<D>({&a, &b}, [&](Tape<D>& t) {
      auto va = t.leaf(a), vb = t.leaf(b);
      auto safe_b = t.add_const(t.square(vb), 0.5);  // keep denominators away from 0
      auto y = t.div(t.mul(t.add(va, vb), t.sub(va, vb)), safe_b);
      return t.sum_all(y);
    });
    CHECK(err < 1e-6);
  }
  SUBCASE("scale and add_const") {
    const double err = max_rel_grad_error<D>({&a}, [&](Tape<D>& t) {
      return t.mean_all(t.add_const(t.scale(t.leaf(a), -2.5), 0.75));
    });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("gradients of activations") {
  RngStream rng(3);
  auto x = make_param("x", 5, 7, rng);

  SUBCASE("leaky_relu") {
    const double err = max_rel_grad_error<D>({&x}, [&](Tape<D>& t) {
      return t.sum_all(t.square(t.leaky_relu(t.leaf(x), 0.2)));
    });
    CHECK(err < 1e-5);
  }
  SUBCASE("relu") {
    const double err = max_rel_grad_error<D>({&x}, [&](Tape<D>& t) {
      return t.sum_all(t.square(t.relu(t.leaf(x))));
    });
    CHECK(err < 1e-5);
  }
  SUBCASE("sigmoid") {
    const double err = max_rel_grad_error<D>(
        {&x}, [&](Tape<D>& t) { return t.sum_all(t.square(t.sigmoid(t.leaf(x)))); });
    CHECK(err < 1e-6);
  }
  SUBCASE("exp") {
    const double err = max_rel_grad_error<D>(
        {&x}, [&](Tape<D>& t) { return t.sum_all(t.exp_(t.scale(t.leaf(x), 0.3))); });
    CHECK(err < 1e-6);
  }
  SUBCASE("log_clamped on positive values") {
    auto pos = make_param("pos", 4, 4, rng);
    pos.value = pos.value.array().abs() + 0.5;
    const double err = max_rel_grad_error<D>(
        {&pos}, [&](Tape<D>& t) { return t.sum_all(t.log_clamped(t.leaf(pos), 1e-12)); });
    CHECK(err < 1e-6);
  }
  SUBCASE("clamp passes gradient only inside the interval") {
    const double err = max_rel_grad_error<D>(
        {&x}, [&](Tape<D>& t) { return t.sum_all(t.square(t.clamp(t.leaf(x), -0.8, 0.8))); });
    CHECK(err < 1e-5);
  }
}

TEST_CASE("softmax rows sum to one and gradient checks") {
  RngStream rng(4);
  auto x = make_param("x", 6, 10, rng);
  Tape<D> t;
  Mat<D> y = t.softmax_rows(t.leaf(x)).value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    CHECK(y.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.row(r).minCoeff() > 0.0);
  }
  const Mat<D> w = random_mat<D>(6, 10, rng);
  const double err = max_rel_grad_error<D>({&x}, [&](Tape<D>& t2) {
    auto p = t2.softmax_rows(t2.leaf(x));
    return t2.sum_all(t2.mul(p, t2.constant_ref(w)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("concat and slice round-trip with gradients") {
  RngStream rng(5);
  auto a = make_param("a", 3, 2, rng);
  auto b = make_param("b", 3, 4, rng);
  auto c = make_param("c", 3, 1, rng);
  const double err = max_rel_grad_error<D>({&a, &b, &c}, [&](Tape<D>& t) {
    std::vector<Var<D>> parts{t.leaf(a), t.leaf(b), t.leaf(c)};
    auto cat = t.concat_cols(std::span<const Var<D>>(parts));
    auto mid = t.slice_cols(cat, 2, 4);
    return t.mean_all(t.square(t.add_const(cat, 0.1))) + t.sum_all(t.square(mid));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("conv2d matches a naive direct convolution") {
  RngStream rng(6);
  Conv2dSpec cs{.in_h = 6, .in_w = 6, .in_c = 2, .out_c = 3, .kernel = 4, .stride = 2, .pad = 1};
  const int B = 2;
  Mat<D> x = random_mat<D>(B, cs.in_h * cs.in_w * cs.in_c, rng);
  Mat<D> w = random_mat<D>(cs.patch_cols(), cs.out_c, rng);
  Mat<D> bias = random_mat<D>(1, cs.out_c, rng);

  Tape<D> t;
  Mat<D> y = t.conv2d(t.constant(x), t.constant(w), t.constant(bias), cs).value();
  REQUIRE(y.rows() == B);
  REQUIRE(y.cols() == cs.out_h() * cs.out_w() * cs.out_c);

  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < cs.out_h(); ++oy)
      for (int ox = 0; ox < cs.out_w(); ++ox)
        for (int oc = 0; oc < cs.out_c; ++oc) {
          double acc = bias(0, oc);
          for (int ky = 0; ky < cs.kernel; ++ky)
            for (int kx = 0; kx < cs.kernel; ++kx)
              for (int ic = 0; ic < cs.in_c; ++ic) {
                const int iy = oy * cs.stride - cs.pad + ky;
                const int ix = ox * cs.stride - cs.pad + kx;
                if (iy < 0 || iy >= cs.in_h || ix < 0 || ix >= cs.in_w) continue;
                acc += x(b, (iy * cs.in_w + ix) * cs.in_c + ic) *
                       w((ky * cs.kernel + kx) * cs.in_c + ic, oc);
              }
          const double got = y(b, (oy * cs.out_w() + ox) * cs.out_c + oc);
          CHECK(got == doctest::Approx(acc).epsilon(1e-9));
        }
}

TEST_CASE("conv2d gradients") {
  RngStream rng(7);
  Conv2dSpec cs{.in_h = 6, .in_w = 6, .in_c = 2, .out_c = 3, .kernel = 4, .stride = 2, .pad = 1};
  auto x = make_param("x", 2, cs.in_h * cs.in_w * cs.in_c, rng);
  auto w = make_param("w", cs.patch_cols(), cs.out_c, rng, 0.5);
  auto b = make_param("b", 1, cs.out_c, rng, 0.1);
  const double err = max_rel_grad_error<D>({&x, &w, &b}, [&](Tape<D>& t) {
    return t.mean_all(t.square(t.conv2d(t.leaf(x), t.leaf(w), t.leaf(b), cs)));
  });
  CHECK(err < 1e-5);
}

TEST_CASE("deconv2d is the adjoint of conv2d and upsamples shapes") {
  RngStream rng(8);
  // spec describes the downsampling direction 8 -> 4 (stride 2); deconv
  // therefore maps 4 -> 8.
  Conv2dSpec cs{.in_h = 8, .in_w = 8, .in_c = 2, .out_c = 3, .kernel = 4, .stride = 2, .pad = 1};
  auto z = make_param("z", 2, cs.out_h() * cs.out_w() * cs.out_c, rng);
  auto w = make_param("w", cs.patch_cols(), cs.out_c, rng, 0.5);
  auto b = make_param("b", 1, cs.in_c, rng, 0.1);
  {
    Tape<D> t;
    auto y = t.deconv2d(t.leaf(z), t.leaf(w), t.leaf(b), cs);
    CHECK(y.value().rows() == 2);
    CHECK(y.value().cols() == cs.in_h * cs.in_w * cs.in_c);
  }
  const double err = max_rel_grad_error<D>({&z, &w, &b}, [&](Tape<D>& t) {
    return t.mean_all(t.square(t.deconv2d(t.leaf(z), t.leaf(w), t.leaf(b), cs)));
  });
  CHECK(err < 1e-5);

  // adjoint identity: <conv(x), y> == <x, deconv(y)> when bias is zero
  Mat<D> x = random_mat<D>(2, cs.in_h * cs.in_w * cs.in_c, rng);
  Mat<D> y = random_mat<D>(2, cs.out_h() * cs.out_w() * cs.out_c, rng);
  Mat<D> zero_cb = Mat<D>::Zero(1, cs.out_c), zero_db = Mat<D>::Zero(1, cs.in_c);
  Tape<D> t;
  Mat<D> cx = t.conv2d(t.constant(x), t.constant(w.value), t.constant(zero_cb), cs).value();
  Mat<D> dy = t.deconv2d(t.constant(y), t.constant(w.value), t.constant(zero_db), cs).value();
  const double lhs = (cx.array() * y.array()).sum();
  const double rhs = (x.array() * dy.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
}

TEST_CASE("batchnorm normalizes in train mode and gradient checks") {
  RngStream rng(9);
  const int C = 4;
  auto x = make_param("x", 12, C, rng, 2.0);
  x.value.array() += 1.5;
  auto gamma = make_param("gamma", 1, C, rng, 0.3);
  gamma.value.array() += 1.0;
  auto beta = make_param("beta", 1, C, rng, 0.3);

  SUBCASE("train-mode output has zero mean and unit variance before affine") {
    BatchNormState<D> st;
    st.init(C);
    Tape<D> t;
    Param<D> g1("g", 1, C), b0("b", 1, C);
    g1.value.setOnes();
    auto y = t.batchnorm(t.leaf(x), t.leaf(g1), t.leaf(b0), st, C, true, 0.1, 1e-5);
    for (int c = 0; c < C; ++c) {
      CHECK(y.value().col(c).mean() == doctest::Approx(0.0).epsilon(1e-10));
      const double var = y.value().col(c).array().square().mean();
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
    // running stats moved toward batch stats
    CHECK(st.running_mean(0, 0) != 0.0);
  }

  SUBCASE("gradcheck train mode") {
    const Mat<D> wsum = random_mat<D>(12, C, rng);
    const double err = max_rel_grad_error<D>({&x, &gamma, &beta}, [&](Tape<D>& t) {
      BatchNormState<D> st;
      st.init(C);
      auto y = t.batchnorm(t.leaf(x), t.leaf(gamma), t.leaf(beta), st, C, true, 0.1, 1e-5);
      return t.sum_all(t.mul(y, t.constant_ref(wsum)));
    });
    CHECK(err < 1e-5);
  }

  SUBCASE("gradcheck eval mode") {
    BatchNormState<D> st;
    st.init(C);
    st.running_mean = random_mat<D>(1, C, rng, 0.2);
    st.running_var = random_mat<D>(1, C, rng, 0.1).array().abs() + 0.5;
    const double err = max_rel_grad_error<D>({&x, &gamma, &beta}, [&](Tape<D>& t) {
      auto y = t.batchnorm(t.leaf(x), t.leaf(gamma), t.leaf(beta), st, C, false, 0.1, 1e-5);
      return t.mean_all(t.square(y));
    });
    CHECK(err < 1e-6);
  }

  SUBCASE("eval mode is a pure function") {
    BatchNormState<D> st;
    st.init(C);
    const Mat<D> rm = st.running_mean, rv = st.running_var;
    Tape<D> t;
    t.batchnorm(t.leaf(x), t.leaf(gamma), t.leaf(beta), st, C, false, 0.1, 1e-5);
    CHECK(st.running_mean == rm);
    CHECK(st.running_var == rv);
  }
}

TEST_CASE("batchnorm groups conv rasters by channel") {
  // A B x (H*W*C) raster must be normalized per channel, not per column.
  RngStream rng(10);
  const int B = 3, H = 2, W = 2, C = 2;
  auto x = make_param("x", B, H * W * C, rng);
  // put a large offset on channel 1 only
  for (Eigen::Index r = 0; r < x.value.rows(); ++r)
    for (int px = 0; px < H * W; ++px) x.value(r, px * C + 1) += 10.0;
  BatchNormState<D> st;
  st.init(C);
  Param<D> g("g", 1, C), b("b", 1, C);
  g.value.setOnes();
  Tape<D> t;
  Mat<D> y = t.batchnorm(t.leaf(x), t.leaf(g), t.leaf(b), st, C, true, 0.1, 1e-5).value();
  // per-channel means over all samples and pixels are zero
  for (int c = 0; c < C; ++c) {
    double mean = 0;
    for (int r = 0; r < B; ++r)
      for (int px = 0; px < H * W; ++px) mean += y(r, px * C + c);
    CHECK(mean / (B * H * W) == doctest::Approx(0.0).epsilon(1e-10));
  }
}

TEST_CASE("frozen leaves receive no gradient") {
  RngStream rng(11);
  auto w = make_param("w", 3, 3, rng);
  auto x = make_param("x", 2, 3, rng);
  Tape<D> t;
  auto y = t.mean_all(t.square(t.matmul(t.leaf(x), t.leaf(w, /*trainable=*/false))));
  t.backward(y);
  CHECK(w.grad.isZero());
  CHECK(!x.grad.isZero());
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  RngStream rng(12);
  auto x = make_param("x", 2, 2, rng);
  auto run = [&] {
    Tape<D> t;
    t.backward(t.sum_all(t.square(t.leaf(x))));
  };
  run();
  const Mat<D> once = x.grad;
  run();
  CHECK((x.grad - 2.0 * once).isZero(1e-12));
  x.zero_grad();
  CHECK(x.grad.isZero());
}
