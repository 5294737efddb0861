#pragma once

// Tape-based reverse-mode differentiation. A Graph records nodes in creation
// order; backward() walks them in reverse, so creation order is the
// topological order. Parameters live outside the graph and receive their
// gradients when backward() reaches their leaf node.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chordgen/random.hpp"
#include "chordgen/tensor.hpp"

namespace chordgen {

template <class T = double>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  // AdamW weight decay applies

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool d = true) : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(d) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

struct Var {
  std::size_t id = 0;
};

template <class T = double>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var input(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var param(Parameter<T>& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.value;
  }

  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.shape() != value(v).shape()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  bool has_grad(Var v) const { return nodes_.at(v.id).grad.size() == value(v).size() && !value(v).empty(); }

  /// Seed d(loss)/d(loss) = 1 on a single-element node and propagate.
  void backward(Var loss) {
    if (!grad_enabled_) throw Error(ErrorCode::invalid_argument, "backward on a no-grad graph");
    require_shape(value(loss).size() == 1, "backward needs a scalar loss");
    grad(loss)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward();
      if (n.param) {
        if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
        n.param->grad.mat() += n.grad.mat();
      }
    }
  }

  /// Record a node. `backward` reads this node's gradient and accumulates
  /// into its inputs; it is dropped when no input needs a gradient.
  Var push(Tensor<T> value, bool needs_grad, std::function<void()> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = grad_enabled_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    std::function<void()> backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;  // stable references across push_back
};

// ---------------------------------------------------------------------------
// Ops. Each takes the graph and input Vars and returns the output Var.

/// C = A B for A [m, k], B [k, n].
template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require_shape(A.cols() == B.rows(), "matmul " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  Tensor<T> C({A.rows(), B.cols()});
  C.mat().noalias() = A.mat() * B.mat();
  Var out{g.size()};
  return g.push(std::move(C), g.needs_grad(a) || g.needs_grad(b), [&g, a, b, out] {
    const auto& dC = g.grad(out).mat();
    if (g.needs_grad(a)) g.grad(a).mat().noalias() += dC * g.value(b).mat().transpose();
    if (g.needs_grad(b)) g.grad(b).mat().noalias() += g.value(a).mat().transpose() * dC;
  });
}

/// C = A Bᵀ for A [m, k], B [n, k] (used by the tied output head).
template <class T>
Var matmul_nt(Graph<T>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require_shape(A.cols() == B.cols(), "matmul_nt " + shape_string(A.shape()) + " x " + shape_string(B.shape()) + "ᵀ");
  Tensor<T> C({A.rows(), B.rows()});
  C.mat().noalias() = A.mat() * B.mat().transpose();
  Var out{g.size()};
  return g.push(std::move(C), g.needs_grad(a) || g.needs_grad(b), [&g, a, b, out] {
    const auto& dC = g.grad(out).mat();
    if (g.needs_grad(a)) g.grad(a).mat().noalias() += dC * g.value(b).mat();
    if (g.needs_grad(b)) g.grad(b).mat().noalias() += dC.transpose() * g.value(a).mat();
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require_shape(A.shape() == B.shape(), "add " + shape_string(A.shape()) + " + " + shape_string(B.shape()));
  Tensor<T> C(A.shape());
  C.mat() = A.mat() + B.mat();
  Var out{g.size()};
  return g.push(std::move(C), g.needs_grad(a) || g.needs_grad(b), [&g, a, b, out] {
    if (g.needs_grad(a)) g.grad(a).mat() += g.grad(out).mat();
    if (g.needs_grad(b)) g.grad(b).mat() += g.grad(out).mat();
  });
}

/// Row-broadcast bias: X [m, n] + b [n].
template <class T>
Var add_bias(Graph<T>& g, Var x, Var b) {
  const auto& X = g.value(x);
  const auto& B = g.value(b);
  require_shape(B.size() == X.cols(), "add_bias " + shape_string(X.shape()) + " + " + shape_string(B.shape()));
  Tensor<T> Y(X.shape());
  Y.mat() = X.mat().rowwise() + B.mat().row(0);
  Var out{g.size()};
  return g.push(std::move(Y), g.needs_grad(x) || g.needs_grad(b), [&g, x, b, out] {
    const auto& dY = g.grad(out).mat();
    if (g.needs_grad(x)) g.grad(x).mat() += dY;
    if (g.needs_grad(b)) {
      g.grad(b).mat().row(0) += dY.colwise().sum();
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var x, T s) {
  Tensor<T> Y(g.value(x).shape());
  Y.mat() = g.value(x).mat() * s;
  Var out{g.size()};
  return g.push(std::move(Y), g.needs_grad(x), [&g, x, out, s] { g.grad(x).mat() += g.grad(out).mat() * s; });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  const auto& X = g.value(x);
  Tensor<T> Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] > T(0) ? X[i] : T(0);
  Var out{g.size()};
  return g.push(std::move(Y), g.needs_grad(x), [&g, x, out] {
    const auto& X = g.value(x);
    const auto& dY = g.grad(out);
    auto& dX = g.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (X[i] > T(0)) dX[i] += dY[i];
    }
  });
}

/// Row-wise softmax with max subtraction.
template <class T>
Var softmax_rows(Graph<T>& g, Var x) {
  const auto& X = g.value(x);
  Tensor<T> Y(X.shape());
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const T* xr = X.data() + r * n;
    T* yr = Y.data() + r * n;
    T mx = *std::max_element(xr, xr + n);
    T sum = 0;
    for (std::size_t c = 0; c < n; ++c) sum += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < n; ++c) yr[c] /= sum;
  }
  Var out{g.size()};
  return g.push(std::move(Y), g.needs_grad(x), [&g, x, out] {
    const auto& Y = g.value(out).mat();
    const auto& dY = g.grad(out).mat();
    const auto dot = (dY.array() * Y.array()).rowwise().sum().eval();
    g.grad(x).mat().array() += Y.array() * (dY.array().colwise() - dot);
  });
}

/// Per-row normalization to zero mean / unit variance, then gamma * x̂ + beta.
template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const auto& X = g.value(x);
  const auto& G = g.value(gamma);
  const auto& B = g.value(beta);
  const std::size_t n = X.cols();
  require_shape(G.size() == n && B.size() == n, "layer_norm parameters must match the last dim");
  auto xhat = std::make_shared<Tensor<T>>(X.shape());
  auto inv_std = std::make_shared<std::vector<T>>(X.rows());
  Tensor<T> Y(X.shape());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const T* xr = X.data() + r * n;
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    T* hr = xhat->data() + r * n;
    T* yr = Y.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      hr[c] = (xr[c] - mean) * is;
      yr[c] = G[c] * hr[c] + B[c];
    }
  }
  Var out{g.size()};
  return g.push(std::move(Y), g.needs_grad(x) || g.needs_grad(gamma) || g.needs_grad(beta),
                [&g, x, gamma, beta, out, xhat, inv_std, n] {
                  const auto& dY = g.grad(out);
                  const auto& G = g.value(gamma);
                  const std::size_t rows = dY.rows();
                  if (g.needs_grad(gamma) || g.needs_grad(beta)) {
                    auto& dG = g.grad(gamma);
                    auto& dB = g.grad(beta);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < n; ++c) {
                        dG[c] += dY[r * n + c] * (*xhat)[r * n + c];
                        dB[c] += dY[r * n + c];
                      }
                    }
                  }
                  if (!g.needs_grad(x)) return;
                  auto& dX = g.grad(x);
                  std::vector<T> dh(n);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dh = 0;
                    T mean_dh_h = 0;
                    for (std::size_t c = 0; c < n; ++c) {
                      dh[c] = dY[r * n + c] * G[c];
                      mean_dh += dh[c];
                      mean_dh_h += dh[c] * (*xhat)[r * n + c];
                    }
                    mean_dh /= static_cast<T>(n);
                    mean_dh_h /= static_cast<T>(n);
                    const T is = (*inv_std)[r];
                    for (std::size_t c = 0; c < n; ++c) {
                      dX[r * n + c] += is * (dh[c] - mean_dh - (*xhat)[r * n + c] * mean_dh_h);
                    }
                  }
                });
}

/// Gather rows of `table` [V, d] by id; ids outside [0, V) are rejected.
template <class T>
Var embedding(Graph<T>& g, Var table, std::vector<std::int32_t> ids) {
  const auto& E = g.value(table);
  const std::size_t d = E.cols();
  Tensor<T> Y({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= E.rows()) {
      throw Error(ErrorCode::invalid_argument, "embedding id " + std::to_string(ids[i]) + " out of range");
    }
    std::copy_n(E.data() + static_cast<std::size_t>(ids[i]) * d, d, Y.data() + i * d);
  }
  Var out{g.size()};
  return g.push(std::move(Y), g.needs_grad(table), [&g, table, out, ids = std::move(ids), d] {
    const auto& dY = g.grad(out);
    auto& dE = g.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      T* row = dE.data() + static_cast<std::size_t>(ids[i]) * d;
      for (std::size_t c = 0; c < d; ++c) row[c] += dY[i * d + c];
    }
  });
}

namespace detail {

/// Uniform [0, 1) draw for element `index` of the stream `seed`.
inline double counter_uniform(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(splitmix64(seed ^ splitmix64(index)) >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Inverted dropout. Element i is kept iff counter_uniform(seed, i) >= p, so
/// the mask depends only on (seed, element index). Identity when not training.
template <class T>
Var dropout(Graph<T>& g, Var x, double p, std::uint64_t seed, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw Error(ErrorCode::invalid_argument, "dropout probability must be < 1");
  const auto& X = g.value(x);
  const T keep_scale = T(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(X.size());
  Tensor<T> Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*mask)[i] = detail::counter_uniform(seed, i) >= p ? keep_scale : T(0);
    Y[i] = X[i] * (*mask)[i];
  }
  Var out{g.size()};
  return g.push(std::move(Y), g.needs_grad(x), [&g, x, out, mask] {
    const auto& dY = g.grad(out);
    auto& dX = g.grad(x);
    for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i] * (*mask)[i];
  });
}

/// sum(x ⊙ w) for a constant weight tensor; reduces anything to a scalar.
template <class T>
Var weighted_sum(Graph<T>& g, Var x, Tensor<T> w) {
  const auto& X = g.value(x);
  require_shape(X.size() == w.size(), "weighted_sum weight shape");
  T s = 0;
  for (std::size_t i = 0; i < X.size(); ++i) s += X[i] * w[i];
  Var out{g.size()};
  return g.push(Tensor<T>({1}, std::vector<T>{s}), g.needs_grad(x), [&g, x, out, w = std::move(w)] {
    const T d = g.grad(out)[0];
    auto& dX = g.grad(x);
    for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += d * w[i];
  });
}

/// Summed negative log-likelihood of `targets` over rows with mask != 0,
/// divided by `normalizer` (default: number of counted rows). Passing the
/// token count of a whole accumulation group makes accumulated micro-batch
/// gradients equal the gradient of the group as one batch.
template <class T>
Var cross_entropy(Graph<T>& g, Var logits, const std::vector<std::int32_t>& targets,
                  const std::vector<std::uint8_t>& mask, std::optional<double> normalizer = std::nullopt) {
  const auto& Z = g.value(logits);
  const std::size_t rows = Z.rows();
  const std::size_t V = Z.cols();
  require_shape(targets.size() == rows && mask.size() == rows, "cross_entropy targets/mask length");
  std::size_t counted = 0;
  for (auto m : mask) counted += m != 0;
  if (counted == 0) throw Error(ErrorCode::all_masked, "cross_entropy with every position masked");
  const T norm = static_cast<T>(normalizer ? *normalizer : static_cast<double>(counted));
  auto probs = std::make_shared<Tensor<T>>(Z.shape());
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= V) {
      throw Error(ErrorCode::invalid_argument, "target id " + std::to_string(targets[r]) + " out of range");
    }
    const T* zr = Z.data() + r * V;
    T* pr = probs->data() + r * V;
    const T mx = *std::max_element(zr, zr + V);
    T sum = 0;
    for (std::size_t c = 0; c < V; ++c) sum += (pr[c] = std::exp(zr[c] - mx));
    for (std::size_t c = 0; c < V; ++c) pr[c] /= sum;
    total += std::log(sum) + mx - zr[targets[r]];
  }
  if (!std::isfinite(static_cast<double>(total))) throw Error(ErrorCode::non_finite_loss, "cross_entropy is not finite");
  Var out{g.size()};
  return g.push(Tensor<T>({1}, std::vector<T>{total / norm}), g.needs_grad(logits),
                [&g, logits, out, probs, targets, mask, norm, V] {
                  const T d = g.grad(out)[0] / norm;
                  auto& dZ = g.grad(logits);
                  for (std::size_t r = 0; r < mask.size(); ++r) {
                    if (!mask[r]) continue;
                    const T* pr = probs->data() + r * V;
                    T* dr = dZ.data() + r * V;
                    for (std::size_t c = 0; c < V; ++c) dr[c] += d * pr[c];
                    dr[targets[r]] -= d;
                  }
                });
}

}  // namespace chordgen
