#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "chordgen/attention.hpp"
#include "support/gradcheck.hpp"

using namespace chordgen;
using chordgen::testing::gradcheck;
using chordgen::testing::random_tensor;

namespace {

// Direct O(L² · d) evaluation: for every (i, j) pair gather the relative row
// for offset j - i and form the logit explicitly.
Tensor<double> naive_attention(const Tensor<double>& Q, const Tensor<double>& K, const Tensor<double>& V,
                               const Tensor<double>* R, const AttentionLayout& layout) {
  const std::size_t B = layout.batch, L = layout.length, H = layout.heads, D = Q.cols(), dh = D / H;
  Tensor<double> O({B * L, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> logits(L, -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          if (!layout.key_valid.empty() && !layout.key_valid[b * L + j]) continue;
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) {
            const double q = Q.at(b * L + i, h * dh + c);
            s += q * K.at(b * L + j, h * dh + c);
            if (R) {
              const std::size_t row = layout.max_len - 1 + j - i;
              const std::size_t col = R->cols() == dh ? c : h * dh + c;
              s += q * R->at(row, col);
            }
          }
          logits[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, logits[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;
        double sum = 0;
        for (auto& l : logits) sum += (l = std::exp(l - mx));
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t c = 0; c < dh; ++c) O.at(b * L + i, h * dh + c) += logits[j] / sum * V.at(b * L + j, h * dh + c);
        }
      }
    }
  }
  return O;
}

Tensor<double> run(const Tensor<double>& Q, const Tensor<double>& K, const Tensor<double>& V, const Tensor<double>* R,
                   const AttentionLayout& layout) {
  Graph<double> g(false);
  std::optional<Var> rel;
  if (R) rel = g.input(*R);
  return g.value(relative_attention(g, g.input(Q), g.input(K), g.input(V), rel, layout));
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Skew, MatchesIndexDefinition) {
  detail::RowMatrix<double> qer(5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int m = 0; m < 5; ++m) qer(i, m) = 10 * i + m;
  }
  const auto s = detail::skew<double>(qer);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j <= i; ++j) EXPECT_EQ(s(i, j), qer(i, 4 + j - i));
  }
}

TEST(RelativeAttention, SkewEqualsNaiveGather) {
  Rng rng(21);
  for (std::size_t L : {1u, 2u, 5u, 16u, 33u, 64u}) {
    for (bool per_head : {false, true}) {
      const std::size_t B = 2, H = 3, dh = 4, D = H * dh, max_len = 64;
      AttentionLayout layout{B, L, H, max_len, {}};
      const auto Q = random_tensor({B * L, D}, rng), K = random_tensor({B * L, D}, rng), V = random_tensor({B * L, D}, rng);
      const auto R = random_tensor({2 * max_len - 1, per_head ? D : dh}, rng);
      EXPECT_LT(max_abs_diff(run(Q, K, V, &R, layout), naive_attention(Q, K, V, &R, layout)), 1e-10) << "L=" << L;
    }
  }
}

TEST(RelativeAttention, SkewEqualsNaiveWithPaddedKeys) {
  Rng rng(22);
  const std::size_t B = 3, L = 9, H = 2, dh = 3, D = H * dh, max_len = 12;
  AttentionLayout layout{B, L, H, max_len, std::vector<std::uint8_t>(B * L, 1)};
  for (std::size_t j = 6; j < L; ++j) layout.key_valid[L + j] = 0;  // second sequence has length 6
  for (std::size_t j = 2; j < L; ++j) layout.key_valid[2 * L + j] = 0;
  const auto Q = random_tensor({B * L, D}, rng), K = random_tensor({B * L, D}, rng), V = random_tensor({B * L, D}, rng);
  const auto R = random_tensor({2 * max_len - 1, dh}, rng);
  EXPECT_LT(max_abs_diff(run(Q, K, V, &R, layout), naive_attention(Q, K, V, &R, layout)), 1e-10);
}

TEST(RelativeAttention, ZeroTableIsVanillaAttention) {
  Rng rng(23);
  const std::size_t L = 7, H = 2, D = 8, max_len = 10;
  AttentionLayout layout{1, L, H, max_len, {}};
  const auto Q = random_tensor({L, D}, rng), K = random_tensor({L, D}, rng), V = random_tensor({L, D}, rng);
  const Tensor<double> zeros({2 * max_len - 1, D / H});
  const auto with_zero = run(Q, K, V, &zeros, layout);
  EXPECT_LT(max_abs_diff(with_zero, run(Q, K, V, nullptr, layout)), 1e-14);
  EXPECT_LT(max_abs_diff(with_zero, naive_attention(Q, K, V, nullptr, layout)), 1e-12);
}

TEST(RelativeAttention, FutureKeysGetZeroWeight) {
  Rng rng(24);
  const std::size_t L = 8, D = 4, max_len = 8;
  AttentionLayout layout{1, L, 1, max_len, {}};
  const auto Q = random_tensor({L, D}, rng), K = random_tensor({L, D}, rng), V = random_tensor({L, D}, rng);
  const auto R = random_tensor({2 * max_len - 1, D}, rng);
  const auto base = run(Q, K, V, &R, layout);
  for (std::size_t t = 0; t < L; ++t) {
    auto K2 = K, V2 = V;
    for (std::size_t c = 0; c < D; ++c) {
      K2.at(t, c) = 1e3;
      V2.at(t, c) = 1e6;
    }
    const auto out = run(Q, K2, V2, &R, layout);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t c = 0; c < D; ++c) EXPECT_EQ(out.at(i, c), base.at(i, c));
    }
  }
}

TEST(RelativeAttention, GradCheck) {
  Rng rng(25);
  struct Case {
    std::size_t B, L, H, dh, max_len;
    bool per_head;
    bool pad;
  };
  for (const Case& cs : {Case{1, 1, 1, 2, 2, false, false}, Case{1, 5, 2, 3, 6, false, false}, Case{2, 6, 2, 2, 8, true, true},
                         Case{3, 4, 1, 4, 4, false, true}}) {
    const std::size_t D = cs.H * cs.dh;
    AttentionLayout layout{cs.B, cs.L, cs.H, cs.max_len, {}};
    if (cs.pad) {
      layout.key_valid.assign(cs.B * cs.L, 1);
      layout.key_valid[cs.B * cs.L - 1] = 0;
    }
    Parameter<double> q("q", random_tensor({cs.B * cs.L, D}, rng)), k("k", random_tensor({cs.B * cs.L, D}, rng)),
        v("v", random_tensor({cs.B * cs.L, D}, rng)),
        r("r", random_tensor({2 * cs.max_len - 1, cs.per_head ? D : cs.dh}, rng));
    const auto w = random_tensor({cs.B * cs.L, D}, rng);
    const auto res = gradcheck({&q, &k, &v, &r}, [&](Graph<double>& g) {
      return weighted_sum(g, relative_attention(g, g.param(q), g.param(k), g.param(v), g.param(r), layout), w);
    });
    EXPECT_LT(res.max_rel_error, 1e-6) << "L=" << cs.L;
  }
}

TEST(RelativeAttention, ShapeErrors) {
  Graph<double> g(false);
  const auto x = g.input(Tensor<double>({4, 4}));
  const auto bad_rel = g.input(Tensor<double>({5, 3}));
  EXPECT_THROW(relative_attention(g, x, x, x, bad_rel, AttentionLayout{1, 4, 2, 4, {}}), Error);
  try {
    relative_attention(g, x, x, x, std::nullopt, AttentionLayout{1, 4, 2, 3, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::sequence_too_long);
  }
  EXPECT_THROW(relative_attention(g, x, x, x, std::nullopt, AttentionLayout{2, 4, 2, 8, {}}), Error);
}
