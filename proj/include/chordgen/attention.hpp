#pragma once

// Causal multi-head self-attention with learned relative-position logits.
//
// For query i and key j <= i the logit is
//   (q_i · k_j + q_i · r_{j-i}) / sqrt(d_head)
// where r_o is the row of the relative table for offset o = j - i. The table
// has 2 * max_len - 1 rows covering offsets -(max_len-1) .. +(max_len-1); row
// index is o + max_len - 1, so causal attention reads only the lower half.
// The relative term is computed as Q · Erᵀ over the L rows of offsets
// -(L-1)..0 and then skewed into query/key coordinates, which needs O(L²)
// memory instead of materializing an L×L×d_head gather.

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "chordgen/autograd.hpp"

namespace chordgen {

struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t length = 1;
  std::size_t heads = 1;
  std::size_t max_len = 1;
  std::vector<std::uint8_t> key_valid;  // batch * length; empty means all valid
};

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// QEr [L, L] with column m holding offset m - (L-1) -> S [L, L] with
/// S[i][j] = QEr[i][L-1+j-i] for j <= i. Left-pad a zero column, read the
/// flat buffer as (L+1) x L, drop the first row. Entries with j > i are
/// left over from the reshape and must be masked by the caller.
template <class T>
RowMatrix<T> skew(const RowMatrix<T>& qer) {
  const Eigen::Index L = qer.rows();
  std::vector<T> padded(static_cast<std::size_t>(L * (L + 1)), T(0));
  for (Eigen::Index i = 0; i < L; ++i) {
    for (Eigen::Index m = 0; m < L; ++m) padded[static_cast<std::size_t>(i * (L + 1) + m + 1)] = qer(i, m);
  }
  RowMatrix<T> s(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    for (Eigen::Index j = 0; j < L; ++j) s(i, j) = padded[static_cast<std::size_t>((i + 1) * L + j)];
  }
  return s;
}

/// Adjoint of skew restricted to the causal triangle: routes dS[i][j]
/// (j <= i) back to column L-1+j-i of row i.
template <class T>
RowMatrix<T> unskew(const RowMatrix<T>& ds) {
  const Eigen::Index L = ds.rows();
  std::vector<T> padded(static_cast<std::size_t>(L * (L + 1)), T(0));
  for (Eigen::Index i = 0; i < L; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) padded[static_cast<std::size_t>((i + 1) * L + j)] += ds(i, j);
  }
  RowMatrix<T> out(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    for (Eigen::Index m = 0; m < L; ++m) out(i, m) = padded[static_cast<std::size_t>(i * (L + 1) + m + 1)];
  }
  return out;
}

}  // namespace detail

/// q, k, v: [batch * length, heads * d_head]; rel: [2 * max_len - 1, d_head]
/// shared by all heads, or [2 * max_len - 1, heads * d_head] with one column
/// block per head (pass nullopt for plain attention). Returns the
/// concatenated head outputs [batch * length, heads * d_head]. Keys that are
/// in the future or marked invalid get exactly zero weight.
template <class T>
Var relative_attention(Graph<T>& g, Var q, Var k, Var v, std::optional<Var> rel, const AttentionLayout& layout) {
  using Mat = detail::RowMatrix<T>;
  using Stride = Eigen::OuterStride<>;
  using Block = Eigen::Map<const Mat, 0, Stride>;
  using MutBlock = Eigen::Map<Mat, 0, Stride>;

  const auto& Q = g.value(q);
  const auto& K = g.value(k);
  const auto& V = g.value(v);
  const std::size_t B = layout.batch, L = layout.length, H = layout.heads;
  require_shape(Q.shape() == K.shape() && Q.shape() == V.shape(), "attention q/k/v shapes differ");
  require_shape(Q.rows() == B * L, "attention rows must equal batch * length");
  require_shape(H > 0 && Q.cols() % H == 0, "attention width must divide by heads");
  require_shape(layout.key_valid.empty() || layout.key_valid.size() == B * L, "attention key mask length");
  const std::size_t D = Q.cols();
  const std::size_t dh = D / H;
  if (L > layout.max_len) {
    throw Error(ErrorCode::sequence_too_long,
                "length " + std::to_string(L) + " exceeds max_len " + std::to_string(layout.max_len));
  }
  if (rel) {
    const auto& R = g.value(*rel);
    require_shape(R.rows() == 2 * layout.max_len - 1 && (R.cols() == dh || R.cols() == D),
                  "relative table must be [2 * max_len - 1, d_head or width], got " + shape_string(R.shape()));
  }
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto er_first = static_cast<Eigen::Index>(layout.max_len - L);  // row of offset -(L-1)
  const auto Li = static_cast<Eigen::Index>(L), dhi = static_cast<Eigen::Index>(dh);
  const Stride stride(static_cast<Eigen::Index>(D));

  auto probs = std::make_shared<std::vector<Mat>>(B * H);
  auto valid = std::make_shared<std::vector<std::uint8_t>>(layout.key_valid);
  if (valid->empty()) valid->assign(B * L, 1);

  Tensor<T> O({B * L, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = b * L * D + h * dh;
      Block Qh(Q.data() + off, Li, dhi, stride), Kh(K.data() + off, Li, dhi, stride), Vh(V.data() + off, Li, dhi, stride);
      Mat S = Qh * Kh.transpose();
      if (rel) {
        const auto& R = g.value(*rel);
        const auto col = static_cast<Eigen::Index>(R.cols() == dh ? 0 : h * dh);
        const Mat qer = Qh * R.mat().block(er_first, col, Li, dhi).transpose();
        S += detail::skew<T>(qer);
      }
      Mat& P = (*probs)[b * H + h];
      P.setZero(Li, Li);
      for (Eigen::Index i = 0; i < Li; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) {
          if ((*valid)[b * L + static_cast<std::size_t>(j)]) mx = std::max(mx, S(i, j) * inv_sqrt);
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // no visible key: zero output
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          if ((*valid)[b * L + static_cast<std::size_t>(j)]) sum += (P(i, j) = std::exp(S(i, j) * inv_sqrt - mx));
        }
        P.row(i).head(i + 1) /= sum;
      }
      MutBlock Oh(O.data() + off, Li, dhi, stride);
      Oh.noalias() = P * Vh;
    }
  }

  const bool needs = g.needs_grad(q) || g.needs_grad(k) || g.needs_grad(v) || (rel && g.needs_grad(*rel));
  Var out{g.size()};
  return g.push(std::move(O), needs, [&g, q, k, v, rel, out, probs, B, L, H, D, dh, inv_sqrt, er_first] {
    const auto& Q = g.value(q);
    const auto& K = g.value(k);
    const auto& V = g.value(v);
    const auto& dO = g.grad(out);
    Tensor<T>* dQ = g.needs_grad(q) ? &g.grad(q) : nullptr;
    Tensor<T>* dK = g.needs_grad(k) ? &g.grad(k) : nullptr;
    Tensor<T>* dV = g.needs_grad(v) ? &g.grad(v) : nullptr;
    Tensor<T>* dR = rel && g.needs_grad(*rel) ? &g.grad(*rel) : nullptr;
    const auto Li = static_cast<Eigen::Index>(L), dhi = static_cast<Eigen::Index>(dh);
    const Stride stride(static_cast<Eigen::Index>(D));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = b * L * D + h * dh;
        const Mat& P = (*probs)[b * H + h];
        Block Qh(Q.data() + off, Li, dhi, stride), Kh(K.data() + off, Li, dhi, stride), Vh(V.data() + off, Li, dhi, stride);
        Block dOh(dO.data() + off, Li, dhi, stride);
        if (dV) MutBlock(dV->data() + off, Li, dhi, stride).noalias() += P.transpose() * dOh;
        const Mat dP = dOh * Vh.transpose();
        const auto rowdot = (dP.array() * P.array()).rowwise().sum().eval();
        const Mat dS = (P.array() * (dP.array().colwise() - rowdot)).matrix() * inv_sqrt;
        if (dQ) MutBlock(dQ->data() + off, Li, dhi, stride).noalias() += dS * Kh;
        if (dK) MutBlock(dK->data() + off, Li, dhi, stride).noalias() += dS.transpose() * Qh;
        if (rel) {
          const Mat dqer = detail::unskew<T>(dS);
          const auto& R = g.value(*rel);
          const auto col = static_cast<Eigen::Index>(R.cols() == dh ? 0 : h * dh);
          if (dQ) MutBlock(dQ->data() + off, Li, dhi, stride).noalias() += dqer * R.mat().block(er_first, col, Li, dhi);
          if (dR) dR->mat().block(er_first, col, Li, dhi).noalias() += dqer.transpose() * Qh;
        }
      }
    }
  });
}

}  // namespace chordgen
