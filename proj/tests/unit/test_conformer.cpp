#include "dtts/conformer.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace dtts;
using dtts::testing::random_matrix;
using dtts::testing::rel_error;

namespace {

ConformerConfig small_config(int blocks = 1) {
  ConformerConfig c;
  c.num_blocks = blocks;
  c.dim = 16;
  c.ff_hidden = 24;
  c.ff_kernel = 3;
  c.dw_kernel = 7;
  c.heads = 2;
  c.dropout = 0.0;
  c.max_relative_position = 1024;
  return c;
}

HiddenSequence sequence(Matrix values, SeqLayout layout, const std::vector<Index>& lengths) {
  HiddenSequence h{Var(std::move(values)), layout, make_row_mask(layout, lengths)};
  for (Index r = 0; r < layout.rows(); ++r) {
    if (!h.mask[static_cast<std::size_t>(r)]) h.values.mutable_value().row(r).setZero();
  }
  return h;
}

HiddenSequence full_sequence(const Matrix& values) {
  return sequence(values, {1, values.rows()}, {values.rows()});
}

const Matrix& param(const ParamStore& store, const std::string& name) {
  const NamedParameter* p = store.find(name);
  REQUIRE_MESSAGE(p != nullptr, name);
  return p->var.value();
}

// Plain layer norm with the store's gamma and beta.
Matrix reference_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    for (Index c = 0; c < x.cols(); ++c) {
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * gamma(0, c) + beta(0, c);
    }
  }
  return out;
}

Matrix affine(const ParamStore& store, const std::string& name, const Matrix& x) {
  Matrix y = x * param(store, name + ".weight");
  if (const auto* b = store.find(name + ".bias")) y.rowwise() += b->var.value().row(0);
  return y;
}

bool rows_zero(const Matrix& m, const std::vector<std::uint8_t>& mask) {
  for (Index r = 0; r < m.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)] && m.row(r).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

BlockContext eval_ctx(ConformerTrace* trace = nullptr) { return {ForwardContext{}, trace}; }

}  // namespace

TEST_SUITE("conformer") {
  TEST_CASE("config validation") {
    CHECK_NOTHROW(small_config().validate());
    auto bad = small_config();
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_config();
    bad.dw_kernel = 6;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_config();
    bad.ff_kernel = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_config();
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_config();
    bad.max_relative_position = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }

  TEST_CASE("feed-forward with zero parameters passes input through") {
    ParamStore store(1);
    ConvFeedForward ff(store, "ff", small_config());
    store.fill_prefix("ff", 0.0);
    std::mt19937_64 rng(2);
    const Matrix x = random_matrix(9, 16, rng);
    CHECK(ff(full_sequence(x), eval_ctx()).values.value() == x);
  }

  TEST_CASE("depthwise module with zero parameters passes input through") {
    ParamStore store(1);
    DepthwiseConvModule conv(store, "conv", small_config());
    store.fill_prefix("conv", 0.0);
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(9, 16, rng);
    CHECK(conv(full_sequence(x), eval_ctx()).values.value() == x);
  }

  TEST_CASE("modules preserve shape and zero masked rows") {
    ParamStore store(4);
    const auto cfg = small_config();
    ConvFeedForward ff(store, "ff", cfg);
    DepthwiseConvModule conv(store, "conv", cfg);
    RelativeSelfAttention attn(store, "attn", cfg);
    ConformerBlock block(store, "block", cfg);
    std::mt19937_64 rng(5);
    for (Index T : {1, 2, 5, 13}) {
      const SeqLayout layout{3, T};
      const HiddenSequence x = sequence(random_matrix(layout.rows(), 16, rng), layout,
                                        {T, std::max<Index>(1, T - 1), T / 2});
      for (const auto& out : {ff(x, eval_ctx()), conv(x, eval_ctx()), attn(x, eval_ctx()),
                              block(x, eval_ctx())}) {
        CHECK(out.values.rows() == layout.rows());
        CHECK(out.values.cols() == 16);
        CHECK(out.values.value().allFinite());
        CHECK(rows_zero(out.values.value(), x.mask));
      }
    }
  }

  TEST_CASE("appending padded frames leaves valid outputs unchanged") {
    ParamStore store(6);
    const auto cfg = small_config();
    ConvFeedForward ff(store, "ff", cfg);
    DepthwiseConvModule conv(store, "conv", cfg);
    ConformerBlock block(store, "block", cfg);
    std::mt19937_64 rng(7);
    const Index T = 8;
    const Matrix x = random_matrix(T, 16, rng);
    Matrix padded = Matrix::Zero(T + 5, 16);
    padded.topRows(T) = x;
    const HiddenSequence solo = full_sequence(x);
    const HiddenSequence ext = sequence(padded, {1, T + 5}, {T});
    auto gap = [&](const HiddenSequence& a, const HiddenSequence& b) {
      return (a.values.value() - b.values.value().topRows(T)).cwiseAbs().maxCoeff();
    };
    CHECK(gap(ff(solo, eval_ctx()), ff(ext, eval_ctx())) < 1e-12);
    CHECK(gap(conv(solo, eval_ctx()), conv(ext, eval_ctx())) < 1e-12);
    CHECK(gap(block(solo, eval_ctx()), block(ext, eval_ctx())) < 1e-12);
  }

  TEST_CASE("depthwise module is time invariant away from the edges") {
    ParamStore store(8);
    const auto cfg = small_config();
    DepthwiseConvModule conv(store, "conv", cfg);
    std::mt19937_64 rng(9);
    const Matrix row = random_matrix(1, 16, rng);
    const Index T = 15;
    const Matrix out = conv(full_sequence(row.replicate(T, 1)), eval_ctx()).values.value();
    const Index halo = cfg.dw_kernel / 2;
    for (Index t = halo + 1; t < T - halo; ++t) {
      CHECK((out.row(t) - out.row(halo)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("single frame is finite everywhere") {
    ParamStore store(10);
    ConformerStack stack(store, "s", small_config(2));
    std::mt19937_64 rng(11);
    const auto out = stack(full_sequence(random_matrix(1, 16, rng)), eval_ctx());
    CHECK(out.output.values.value().allFinite());
  }

  TEST_CASE("position table matches the sinusoid definition") {
    const Index L = 5, D = 6;
    const Matrix table = RelativeSelfAttention::relative_positions(L, D, 1024);
    REQUIRE(table.rows() == 2 * L - 1);
    for (Index m = 0; m < table.rows(); ++m) {
      const double offset = static_cast<double>(m - (L - 1));
      for (Index k = 0; k < D / 2; ++k) {
        const double angle = offset / std::pow(10000.0, 2.0 * k / D);
        CHECK(table(m, 2 * k) == doctest::Approx(std::sin(angle)).epsilon(1e-14));
        CHECK(table(m, 2 * k + 1) == doctest::Approx(std::cos(angle)).epsilon(1e-14));
      }
    }
    const Matrix clipped = RelativeSelfAttention::relative_positions(L, D, 2);
    CHECK(clipped.row(0) == clipped.row(2));
    CHECK(clipped.row(8) == clipped.row(6));
    CHECK(clipped.row(4) == table.row(4));
  }

  TEST_CASE("attention logits follow content and relative offset terms") {
    ParamStore store(12);
    const auto cfg = small_config();
    RelativeSelfAttention attn(store, "a", cfg);
    std::mt19937_64 rng(13);
    for (const char* bias : {"a.content_bias", "a.position_bias"}) {
      const NamedParameter* p = store.find(bias);
      p->var.node()->value = random_matrix(p->rows, p->cols, rng);
    }
    const Index L = 6, D = 16, dh = 8;
    const Matrix x = random_matrix(L, D, rng);
    ConformerTrace trace;
    attn(full_sequence(x), eval_ctx(&trace));
    REQUIRE(trace.attention_logits.size() == 2);

    const Matrix y = reference_norm(x, param(store, "a.norm.gamma"), param(store, "a.norm.beta"));
    const Matrix q = affine(store, "a.query", y);
    const Matrix k = affine(store, "a.key", y);
    const Matrix u = param(store, "a.content_bias");
    const Matrix v = param(store, "a.position_bias");
    const Matrix wr = param(store, "a.position.weight");
    double worst = 0.0;
    for (Index h = 0; h < 2; ++h) {
      for (Index i = 0; i < L; ++i) {
        for (Index j = 0; j < L; ++j) {
          Matrix r(1, D);
          const double off = static_cast<double>(i - j);
          for (Index c = 0; c < D; c += 2) {
            const double w = std::pow(10000.0, -static_cast<double>(c) / D);
            r(0, c) = std::sin(off * w);
            r(0, c + 1) = std::cos(off * w);
          }
          const Matrix pr = r * wr;
          double content = 0.0, position = 0.0;
          for (Index c = 0; c < dh; ++c) {
            const Index col = h * dh + c;
            content += (q(i, col) + u(h, c)) * k(j, col);
            position += (q(i, col) + v(h, c)) * pr(0, col);
          }
          const double expected = (content + position) / std::sqrt(static_cast<double>(dh));
          worst = std::max(worst, std::abs(trace.attention_logits[static_cast<std::size_t>(h)](i, j) -
                                           expected));
        }
      }
    }
    CHECK(worst < 1e-10);
  }

  TEST_CASE("constant content gives Toeplitz logits") {
    ParamStore store(14);
    RelativeSelfAttention attn(store, "a", small_config());
    std::mt19937_64 rng(15);
    const Index L = 11;
    const Matrix x = random_matrix(1, 16, rng).replicate(L, 1);
    ConformerTrace trace;
    attn(full_sequence(x), eval_ctx(&trace));
    REQUIRE(!trace.attention_logits.empty());
    double worst = 0.0, spread = 0.0;
    for (const Matrix& logits : trace.attention_logits) {
      for (Index i = 1; i < L; ++i) {
        for (Index j = 1; j < L; ++j) {
          worst = std::max(worst, std::abs(logits(i, j) - logits(i - 1, j - 1)));
        }
      }
      spread = std::max(spread, logits.maxCoeff() - logits.minCoeff());
    }
    CHECK(worst < 1e-12);
    CHECK(spread > 1e-3);  // positions still matter
  }

  TEST_CASE("single frame attention returns the projected value") {
    ParamStore store(16);
    RelativeSelfAttention attn(store, "a", small_config());
    std::mt19937_64 rng(17);
    for (const auto& p : store.parameters()) {
      if (p.name.find(".bias") != std::string::npos) p.var.node()->value = random_matrix(p.rows, p.cols, rng);
    }
    const Matrix x = random_matrix(1, 16, rng);
    const Matrix out = attn(full_sequence(x), eval_ctx()).values.value();
    const Matrix y = reference_norm(x, param(store, "a.norm.gamma"), param(store, "a.norm.beta"));
    const Matrix expected = x + affine(store, "a.output", affine(store, "a.value", y));
    CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("masked keys do not influence valid outputs") {
    ParamStore store(18);
    RelativeSelfAttention attn(store, "a", small_config());
    std::mt19937_64 rng(19);
    const SeqLayout layout{1, 7};
    HiddenSequence x = sequence(random_matrix(7, 16, rng), layout, {5});
    const Matrix base = attn(x, eval_ctx()).values.value();
    x.values.mutable_value().bottomRows(2) = random_matrix(2, 16, rng, 10.0);
    const Matrix perturbed = attn(x, eval_ctx()).values.value();
    CHECK((base.topRows(5) - perturbed.topRows(5)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(perturbed.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("block runs modules in order") {
    ParamStore store(20);
    ConformerBlock block(store, "b", small_config());
    std::mt19937_64 rng(21);
    ConformerTrace trace;
    block(full_sequence(random_matrix(4, 16, rng)), eval_ctx(&trace));
    const std::vector<std::string> expected = {"conv_feed_forward", "depthwise_conv",
                                               "relative_self_attention", "conv_feed_forward",
                                               "final_norm"};
    CHECK(trace.modules == expected);
  }

  TEST_CASE("zeroed branch projections reduce the block to layer norm") {
    ParamStore store(22);
    ConformerBlock block(store, "b", small_config());
    for (const char* p : {"b.ff1.conv2", "b.conv.pointwise_out", "b.attention.output", "b.ff2.conv2"}) {
      store.fill_prefix(p, 0.0);
    }
    std::mt19937_64 rng(23);
    const Matrix x = random_matrix(6, 16, rng, 3.0);
    const Matrix out = block(full_sequence(x), eval_ctx()).values.value();
    const Matrix expected = reference_norm(x, Matrix::Ones(1, 16), Matrix::Zero(1, 16));
    CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("forward passes are deterministic") {
    ParamStore store(24);
    ConformerStack stack(store, "s", small_config(2));
    std::mt19937_64 rng(25);
    const HiddenSequence x = full_sequence(random_matrix(9, 16, rng));
    CHECK(stack(x, eval_ctx()).output.values.value() == stack(x, eval_ctx()).output.values.value());
  }

  TEST_CASE("stack returns every block output") {
    std::mt19937_64 rng(26);
    const HiddenSequence x = full_sequence(random_matrix(5, 16, rng));
    ParamStore empty_store(27);
    ConformerStack empty(empty_store, "s", small_config(0));
    const auto none = empty(x, eval_ctx());
    CHECK(none.per_block.empty());
    CHECK(none.output.values.value() == x.values.value());

    ParamStore store(28);
    ConformerStack six(store, "s", small_config(6));
    CHECK(six.size() == 6);
    const auto out = six(x, eval_ctx());
    REQUIRE(out.per_block.size() == 6);
    for (const auto& h : out.per_block) {
      CHECK(h.values.rows() == 5);
      CHECK(h.values.cols() == 16);
    }
    CHECK(out.per_block.back().values.value() == out.output.values.value());
    CHECK(out.per_block[0].values.value() != out.per_block[1].values.value());
  }

  TEST_CASE("two-block stack gradients match finite differences") {
    ParamStore store(29);
    ConformerStack stack(store, "s", small_config(2));
    std::mt19937_64 rng(30);
    for (const auto& p : store.parameters()) {
      if (p.name.find("bias") != std::string::npos || p.name.find("beta") != std::string::npos) {
        p.var.node()->value = random_matrix(p.rows, p.cols, rng, 0.1);
      }
    }
    const SeqLayout layout{2, 6};
    const HiddenSequence x = sequence(random_matrix(12, 16, rng), layout, {6, 4});
    const Matrix weights = random_matrix(12, 16, rng);
    auto loss = [&] {
      const auto out = stack(x, eval_ctx());
      return ag::sum(ag::mul(out.output.values, ag::constant(weights)));
    };
    store.zero_grad();
    loss().backward();

    const auto& params = store.parameters();
    std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
    const double h = 1e-6;
    double worst = 0.0;
    int checked = 0;
    while (checked < 30) {
      const NamedParameter& p = params[pick(rng)];
      std::uniform_int_distribution<Index> entry(0, p.size() - 1);
      const Index k = entry(rng);
      const double analytic = p.var.grad().size() ? p.var.grad().data()[k] : 0.0;
      double& w = p.var.node()->value.data()[k];
      const double saved = w;
      w = saved + h;
      const double up = loss().item();
      w = saved - h;
      const double down = loss().item();
      w = saved;
      const double err = rel_error(analytic, (up - down) / (2.0 * h));
      INFO(p.name, "[", k, "] analytic ", analytic);
      CHECK(err < 1e-3);
      worst = std::max(worst, err);
      ++checked;
    }
    MESSAGE("worst relative error " << worst);
  }
}
