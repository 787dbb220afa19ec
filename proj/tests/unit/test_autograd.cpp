#include "dtts/autograd.hpp"
#include "dtts/nn.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace dtts;
using dtts::testing::gradient_check;
using dtts::testing::random_matrix;

namespace {

Var leaf(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  return Var(random_matrix(r, c, rng, scale), true);
}

// Weighted sum so every output entry gets a distinct upstream gradient.
Var probe(const Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ag::sum(ag::mul(y, ag::constant(random_matrix(y.rows(), y.cols(), rng))));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("elementwise and matrix ops match finite differences") {
    std::mt19937_64 rng(1);
    Var a = leaf(3, 4, rng), b = leaf(4, 5, rng), c = leaf(3, 4, rng);
    Var pos(random_matrix(3, 4, rng).cwiseAbs().array() + 0.5, true);
    CHECK(gradient_check(a, [&] { return probe(ag::matmul(a, b)); }) < kTol);
    CHECK(gradient_check(b, [&] { return probe(ag::matmul(a, b)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::matmul_nt(a, c)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::transpose(a)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::mul(a, c)); }) < kTol);
    CHECK(gradient_check(pos, [&] { return probe(ag::div(a, pos)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::div(a, pos)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::sub(ag::scale(a, 2.0), c)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::sigmoid(a)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::tanh(a)); }) < kTol);
    CHECK(gradient_check(a, [&] { return probe(ag::exp(a)); }) < kTol);
    CHECK(gradient_check(pos, [&] { return probe(ag::log(pos)); }) < kTol);
    CHECK(gradient_check(a, [&] { return ag::mean(ag::mul(a, a)); }) < kTol);
  }

  TEST_CASE("row broadcasts") {
    std::mt19937_64 rng(2);
    Var x = leaf(5, 3, rng), r = leaf(1, 3, rng);
    CHECK(gradient_check(r, [&] { return probe(ag::add_row(x, r)); }) < kTol);
    CHECK(gradient_check(r, [&] { return probe(ag::mul_row(x, r)); }) < kTol);
    CHECK(gradient_check(x, [&] { return probe(ag::mul_row(x, r)); }) < kTol);
  }

  TEST_CASE("relu gradient away from the kink") {
    Matrix v(2, 2);
    v << -1.0, 0.5, 2.0, -0.3;
    Var x(v, true);
    ag::sum(ag::relu(x)).backward();
    Matrix expected(2, 2);
    expected << 0.0, 1.0, 1.0, 0.0;
    CHECK(x.grad() == expected);
  }

  TEST_CASE("shape ops") {
    std::mt19937_64 rng(3);
    Var x = leaf(6, 4, rng), y = leaf(2, 4, rng), z = leaf(6, 2, rng);
    CHECK(gradient_check(x, [&] { return probe(ag::slice_rows(x, 1, 3)); }) < kTol);
    CHECK(gradient_check(x, [&] { return probe(ag::slice_cols(x, 1, 2)); }) < kTol);
    CHECK(gradient_check(y, [&] { return probe(ag::concat_rows({x, y, x})); }) < kTol);
    CHECK(gradient_check(z, [&] { return probe(ag::concat_cols({x, z})); }) < kTol);
    CHECK(gradient_check(x, [&] { return probe(ag::reshape(x, 3, 8)); }) < kTol);
    CHECK(gradient_check(x, [&] { return probe(ag::gather_rows(x, {5, -1, 0, 0, 2})); }) < kTol);
    auto idx = std::make_shared<const std::vector<Index>>(std::vector<Index>{0, 23, -1, 7, 7, 11});
    CHECK(gradient_check(x, [&] { return probe(ag::gather(x, idx, 2, 3)); }) < kTol);
    CHECK(gradient_check(x, [&] { return probe(ag::mask_rows(x, {1, 0, 1, 1, 0, 1})); }) < kTol);
  }

  TEST_CASE("gather_rows fills -1 with zeros") {
    Matrix v(2, 2);
    v << 1, 2, 3, 4;
    Var g = ag::gather_rows(ag::constant(v), {1, -1, 0});
    Matrix expected(3, 2);
    expected << 3, 4, 0, 0, 1, 2;
    CHECK(g.value() == expected);
  }

  TEST_CASE("layer norm") {
    std::mt19937_64 rng(4);
    Var x = leaf(4, 6, rng), g = leaf(1, 6, rng), b = leaf(1, 6, rng);
    CHECK(gradient_check(x, [&] { return probe(ag::layer_norm(x, g, b)); }) < 1e-5);
    CHECK(gradient_check(g, [&] { return probe(ag::layer_norm(x, g, b)); }) < kTol);
    CHECK(gradient_check(b, [&] { return probe(ag::layer_norm(x, g, b)); }) < kTol);
    // Unit gain, zero bias: each row has mean 0 and variance ~1.
    Var y = ag::layer_norm(ag::constant(x.value()), ag::constant(Matrix::Ones(1, 6)),
                           ag::constant(Matrix::Zero(1, 6)));
    for (Index r = 0; r < 4; ++r) {
      const auto row = y.value().row(r);
      CHECK(std::abs(row.mean()) < 1e-12);
      CHECK(std::abs(row.squaredNorm() / 6.0 - 1.0) < 1e-3);
    }
  }

  TEST_CASE("masked softmax") {
    std::mt19937_64 rng(5);
    Var x = leaf(3, 5, rng);
    const std::vector<std::uint8_t> valid = {1, 1, 0, 1, 0};
    CHECK(gradient_check(x, [&] { return probe(ag::masked_softmax_rows(x, valid)); }) < kTol);
    const Matrix p = ag::masked_softmax_rows(x, valid).value();
    for (Index r = 0; r < 3; ++r) {
      CHECK(p(r, 2) == 0.0);
      CHECK(p(r, 4) == 0.0);
      CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    const Matrix none = ag::masked_softmax_rows(x, {0, 0, 0, 0, 0}).value();
    CHECK(none.isZero(0.0));
  }

  TEST_CASE("conv1d matches a direct same-padded oracle and has exact gradients") {
    std::mt19937_64 rng(6);
    const SeqLayout layout{2, 5};
    const Index in = 3, out = 2, k = 3;
    Var x = leaf(layout.rows(), in, rng), w = leaf(k * in, out, rng), b = leaf(1, out, rng);
    const Matrix y = ag::conv1d(x, w, b, layout, k).value();
    for (Index item = 0; item < layout.batch; ++item) {
      for (Index t = 0; t < layout.length; ++t) {
        for (Index o = 0; o < out; ++o) {
          double acc = b.value()(0, o);
          for (Index tap = 0; tap < k; ++tap) {
            const Index s = t + tap - k / 2;
            if (s < 0 || s >= layout.length) continue;
            for (Index c = 0; c < in; ++c) {
              acc += x.value()(item * layout.length + s, c) * w.value()(tap * in + c, o);
            }
          }
          CHECK(y(item * layout.length + t, o) == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
    CHECK(gradient_check(x, [&] { return probe(ag::conv1d(x, w, b, layout, k)); }) < kTol);
    CHECK(gradient_check(w, [&] { return probe(ag::conv1d(x, w, b, layout, k)); }) < kTol);
    CHECK(gradient_check(b, [&] { return probe(ag::conv1d(x, w, b, layout, k)); }) < kTol);
  }

  TEST_CASE("depthwise conv1d") {
    std::mt19937_64 rng(7);
    const SeqLayout layout{2, 6};
    Var x = leaf(layout.rows(), 4, rng), w = leaf(5, 4, rng), b = leaf(1, 4, rng);
    const Matrix y = ag::depthwise_conv1d(x, w, b, layout).value();
    for (Index item = 0; item < 2; ++item) {
      for (Index t = 0; t < 6; ++t) {
        for (Index c = 0; c < 4; ++c) {
          double acc = b.value()(0, c);
          for (Index tap = 0; tap < 5; ++tap) {
            const Index s = t + tap - 2;
            if (s >= 0 && s < 6) acc += x.value()(item * 6 + s, c) * w.value()(tap, c);
          }
          CHECK(y(item * 6 + t, c) == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
    CHECK(gradient_check(x, [&] { return probe(ag::depthwise_conv1d(x, w, b, layout)); }) < kTol);
    CHECK(gradient_check(w, [&] { return probe(ag::depthwise_conv1d(x, w, b, layout)); }) < kTol);
  }

  TEST_CASE("masked l1") {
    Matrix p(2, 2), t(2, 2), m(2, 2);
    p << 1, 2, 3, 4;
    t << 0, 0, 0, 0;
    m << 1, 0, 0, 1;
    CHECK(ag::masked_l1(ag::constant(p), t, m).item() == doctest::Approx(2.5));
    CHECK_THROWS(ag::masked_l1(ag::constant(p), t, Matrix::Zero(2, 2)));
  }

  TEST_CASE("dropout is identity outside training and rescales inside") {
    std::mt19937_64 rng(8);
    Var x(Matrix::Ones(200, 50));
    CHECK(ag::dropout(x, 0.5, false, rng).value() == x.value());
    const Matrix y = ag::dropout(x, 0.5, true, rng).value();
    for (Index i = 0; i < y.size(); ++i) CHECK((y.data()[i] == 0.0 || y.data()[i] == 2.0));
    CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.05));
  }

  TEST_CASE("no-grad guard records nothing") {
    Var x(Matrix::Ones(2, 2), true);
    {
      ag::NoGradGuard guard;
      Var y = ag::scale(x, 3.0);
      CHECK_FALSE(y.requires_grad());
    }
    CHECK(ag::scale(x, 3.0).requires_grad());
  }

  TEST_CASE("detach blocks gradient") {
    Var x(Matrix::Ones(1, 1), true);
    ag::sum(ag::add(ag::detach(x), x)).backward();
    CHECK(x.grad()(0, 0) == 1.0);
  }

  TEST_CASE("gru and conv2d layers") {
    std::mt19937_64 rng(9);
    ParamStore store(3);
    Gru gru(store, "gru", 3, 4);
    Var x = leaf(5, 3, rng);
    CHECK(gradient_check(x, [&] { return probe(gru(x)); }) < 1e-5);
    for (const auto& p : store.parameters()) {
      CHECK(gradient_check(p.var, [&] { return probe(gru(x)); }, 1e-6, 6) < 1e-5);
    }
    ParamStore store2(4);
    Conv2d conv(store2, "conv", 2, 3, 3, 2, 1);
    Var img = leaf(7 * 5, 2, rng);
    auto run = [&] { return probe(conv(img, 7, 5).values); };
    CHECK(conv(img, 7, 5).height == 4);
    CHECK(conv(img, 7, 5).width == 3);
    CHECK(gradient_check(img, run) < 1e-5);
    for (const auto& p : store2.parameters()) CHECK(gradient_check(p.var, run) < 1e-5);
  }

  TEST_CASE("embedding rejects out-of-range ids") {
    ParamStore store(0);
    Embedding table(store, "speakers", 2, 4);
    CHECK_NOTHROW(table({0, 1, 1}));
    CHECK_THROWS_AS(table({2}), std::out_of_range);
    const Matrix e = table({1, 1}).value();
    CHECK(e.row(0) == e.row(1));
  }
}
