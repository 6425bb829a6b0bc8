#include <doctest.h>

#include "gradcheck.hpp"
#include "l2i/nn.hpp"

using namespace l2i;
using ad::Var;
using Mat = ad::Matrix<double>;

namespace {

constexpr double kTol = 1e-6;

struct Fixture {
  nn::ParamStore<double> store;
  Rng rng{42};

  Var<double> param(const std::string& name, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
    return store.add(name, nn::normal_matrix<double>(r, c, sd, rng));
  }

  double check(const Var<double>& p, const std::function<Var<double>()>& loss) {
    return gradcheck::max_relative_error(store, p, loss, 12, rng);
  }
};

}  // namespace

TEST_CASE("elementwise and matrix ops match central differences") {
  Fixture f;
  auto a = f.param("a", 4, 3), b = f.param("b", 3, 5), c = f.param("c", 4, 3), row = f.param("row", 1, 3);
  auto s = f.param("s", 1, 1);
  auto loss = [&] {
    Var<double> x = ad::matmul(ad::tanh(ad::add_row(ad::cmul(a, c), row)), b);
    x = ad::silu(ad::sub(ad::scale_by(x, s), ad::scale(ad::matmul(ad::matmul_nt(ad::slice_cols(x, 0, 3), a), x), 0.1)));
    return gradcheck::project(x, 1);
  };
  for (auto* p : {&a, &b, &c, &row, &s}) CHECK(f.check(*p, loss) < kTol);
}

TEST_CASE("softmax, concat, gather and slicing gradients") {
  Fixture f;
  auto a = f.param("a", 3, 4), b = f.param("b", 2, 4), table = f.param("table", 5, 4);
  Eigen::VectorXd w(5);
  w << 0.5, 1.0, 0.0, 2.0, -1.0;
  auto loss = [&] {
    const Var<double> stacked = ad::vconcat<double>({a, b});
    const Var<double> wide = ad::hconcat<double>({stacked, ad::gather_rows(table, {4, 1, 1, 0, 3})});
    const Var<double> rows = ad::mul_rows(ad::softmax_rows(wide), w);
    return gradcheck::project(ad::slice_rows(rows, 1, 3), 2);
  };
  for (auto* p : {&a, &b, &table}) CHECK(f.check(*p, loss) < kTol);
}

TEST_CASE("layer and group normalisation gradients") {
  Fixture f;
  auto x = f.param("x", 8, 6), gain = f.param("gain", 1, 6), bias = f.param("bias", 1, 6);
  auto loss = [&] {
    return ad::add(gradcheck::project(ad::layer_norm(x, gain, bias), 3),
                   gradcheck::project(ad::group_norm(x, 2, 3, gain, bias), 4));
  };
  for (auto* p : {&x, &gain, &bias}) CHECK(f.check(*p, loss) < kTol);
}

TEST_CASE("convolution, upsampling and mse gradients") {
  Fixture f;
  const ad::ImageShape shape{2, 5, 4};
  auto x = f.param("x", shape.rows(), 3), w = f.param("w", 27, 2, 0.3), b = f.param("b", 1, 2);
  auto loss = [&] {
    const Var<double> y = ad::conv2d(x, shape, w, b, 3, 2, 1);
    const int oh = ad::conv_out_size(5, 3, 2, 1), ow = ad::conv_out_size(4, 3, 2, 1);
    const Var<double> up = ad::upsample2x(y, {2, oh, ow});
    Rng target_rng(9);
    return ad::mse(up, nn::normal_matrix<double>(up.rows(), up.cols(), 1.0, target_rng));
  };
  for (auto* p : {&x, &w, &b}) CHECK(f.check(*p, loss) < kTol);
}

TEST_CASE("convolution matches a direct sum") {
  Rng rng(1);
  const ad::ImageShape shape{1, 4, 5};
  const Mat x = nn::normal_matrix<double>(shape.rows(), 2, 1.0, rng);
  const Mat w = nn::normal_matrix<double>(18, 3, 1.0, rng);
  const Mat b = nn::normal_matrix<double>(1, 3, 1.0, rng);
  const Mat y = ad::conv2d(ad::constant(x), shape, ad::constant(w), ad::constant(b), 3, 1, 1).value();
  for (int oy = 0; oy < 4; ++oy) {
    for (int ox = 0; ox < 5; ++ox) {
      for (int co = 0; co < 3; ++co) {
        double acc = b(0, co);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy + ky - 1, ix = ox + kx - 1;
            if (iy < 0 || iy >= 4 || ix < 0 || ix >= 5) continue;
            for (int ci = 0; ci < 2; ++ci) acc += x(iy * 5 + ix, ci) * w((ky * 3 + kx) * 2 + ci, co);
          }
        }
        CHECK(y(oy * 5 + ox, co) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("ops outside a tape record nothing") {
  Fixture f;
  auto a = f.param("a", 2, 2);
  const Var<double> y = ad::tanh(a);
  CHECK_FALSE(y.requires_grad());
  ad::Tape<double> tape;
  const Var<double> z = ad::tanh(a);
  CHECK(z.requires_grad());
  CHECK(tape.size() == 1);
  CHECK_THROWS_AS(tape.backward(z), Error);
}

TEST_CASE("shape errors are typed") {
  const Var<double> a = ad::constant<double>(Mat::Zero(2, 3));
  try {
    ad::matmul(a, a);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ShapeMismatch);
  }
}

TEST_CASE("attention matches the reference with several heads") {
  nn::ParamStore<double> store;
  Rng rng(3);
  const nn::AttentionBlock<double> block(store, "attn", {6, 5, 8, 2, false}, rng);
  const Mat q = nn::normal_matrix<double>(4, 6, 1.0, rng);
  const Mat ctx = nn::normal_matrix<double>(7, 5, 1.0, rng);
  const Mat out = block(ad::constant(q), ad::constant(ctx)).value();
  const Mat q2 = q * block.wq().value(), k2 = ctx * block.wk().value(), v2 = ctx * block.wv().value();
  for (int h = 0; h < 2; ++h) {
    Mat logits = q2.middleCols(h * 4, 4) * k2.middleCols(h * 4, 4).transpose() / 2.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      logits.row(r) = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
      logits.row(r) /= logits.row(r).sum();
    }
    CHECK((out.middleCols(h * 4, 4) - logits * v2.middleCols(h * 4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(block(ad::constant(ctx), ad::constant(ctx)), Error);
}
