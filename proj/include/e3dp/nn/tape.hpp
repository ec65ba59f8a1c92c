#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "e3dp/error.hpp"

namespace e3dp::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named parameter arrays. std::map keeps iteration (and serialization) order stable.
template <typename S>
using ParamSet = std::map<std::string, Matrix<S>>;

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Compressed neighbor lists: neighbors of row i are
/// indices[offsets[i] .. offsets[i+1]).
struct Neighborhood {
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> indices;

  std::size_t rows() const noexcept { return offsets.size() - 1; }
};

/// Reverse-mode recording of matrix operations. One tape per forward pass.
template <typename S>
class Tape {
 public:
  using Mat = Matrix<S>;
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var constant(Mat value) { return push(std::move(value), nullptr, false); }

  Var parameter(const std::string& name, const Mat& value) {
    Var v = push(value, nullptr, true);
    params_.emplace_back(name, v.id);
    return v;
  }

  /// Appends a node; `backward` reads this node's grad and accumulates into its inputs.
  Var push(Mat value, Backward backward, bool requires_grad) {
    nodes_.push_back({std::move(value), Mat(), std::move(backward), requires_grad});
    return {nodes_.size() - 1};
  }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first access.
  Mat& grad(Var v) { return grad(v.id); }
  Mat& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  S scalar(Var v) const { return nodes_[v.id].value(0, 0); }

  /// Backpropagates from a 1x1 node.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw Error("backward() needs a scalar loss");
    grad(loss)(0, 0) += S(1);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, id);
    }
  }

  /// Adds parameter-leaf gradients into `grads` (created as needed).
  void accumulate(ParamSet<S>& grads, S weight = S(1)) {
    for (const auto& [name, id] : params_) {
      if (!has_grad(id)) continue;
      auto it = grads.find(name);
      if (it == grads.end()) it = grads.emplace(name, Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols())).first;
      it->second += weight * nodes_[id].grad;
    }
  }

  /// Fingerprint of every non-smooth branch taken so far (ReLU signs,
  /// norm floors).
  std::uint64_t kink_signature() const noexcept { return kink_signature_; }
  void mix_signature(std::uint64_t bits) noexcept {
    kink_signature_ = (kink_signature_ ^ bits) * 0x100000001b3ULL;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
};

// ---------------------------------------------------------------------------
// Operations

/// x * W + b (b broadcast over rows). W is in x out, b is 1 x out.
template <typename S>
Var linear(Tape<S>& t, Var x, Var w, Var b) {
  using Mat = Matrix<S>;
  Mat y = t.value(x) * t.value(w);
  y.rowwise() += t.value(b).row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  return t.push(std::move(y),
                [x, w, b](Tape<S>& tp, std::size_t self) {
                  const Mat& g = tp.grad(self);
                  if (tp.requires_grad(w)) tp.grad(w).noalias() += tp.value(x).transpose() * g;
                  if (tp.requires_grad(b)) tp.grad(b).row(0) += g.colwise().sum();
                  if (tp.requires_grad(x)) tp.grad(x).noalias() += g * tp.value(w).transpose();
                },
                rg);
}

/// x * W without a bias.
template <typename S>
Var matmul(Tape<S>& t, Var x, Var w) {
  using Mat = Matrix<S>;
  Mat y = t.value(x) * t.value(w);
  const bool rg = t.requires_grad(x) || t.requires_grad(w);
  return t.push(std::move(y),
                [x, w](Tape<S>& tp, std::size_t self) {
                  const Mat& g = tp.grad(self);
                  if (tp.requires_grad(w)) tp.grad(w).noalias() += tp.value(x).transpose() * g;
                  if (tp.requires_grad(x)) tp.grad(x).noalias() += g * tp.value(w).transpose();
                },
                rg);
}

template <typename S>
Var relu(Tape<S>& t, Var x) {
  using Mat = Matrix<S>;
  const Mat& xv = t.value(x);
  Mat y = xv.cwiseMax(S(0));
  std::uint64_t bits = 0;
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    bits = (bits * 31) ^ (xv.data()[i] > S(0) ? 1u : 0u);
    if ((i & 31) == 31) {
      t.mix_signature(bits);
      bits = 0;
    }
  }
  t.mix_signature(bits);
  return t.push(std::move(y),
                [x](Tape<S>& tp, std::size_t self) {
                  const Mat& g = tp.grad(self);
                  tp.grad(x) += (tp.value(x).array() > S(0)).select(g, S(0));
                },
                t.requires_grad(x));
}

/// Row-wise mean over each row's neighbor list.
template <typename S>
Var aggregate_mean(Tape<S>& t, Var x, const Neighborhood& nb) {
  using Mat = Matrix<S>;
  const Mat& xv = t.value(x);
  if (static_cast<Eigen::Index>(nb.rows()) != xv.rows()) throw Error("neighborhood size does not match feature rows");
  Mat y = Mat::Zero(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < nb.rows(); ++i) {
    const auto b = nb.offsets[i], e = nb.offsets[i + 1];
    for (auto k = b; k < e; ++k) y.row(static_cast<Eigen::Index>(i)) += xv.row(nb.indices[k]);
    if (e > b) y.row(static_cast<Eigen::Index>(i)) /= static_cast<S>(e - b);
  }
  return t.push(std::move(y),
                [x, &nb](Tape<S>& tp, std::size_t self) {
                  const Mat& g = tp.grad(self);
                  Mat& gx = tp.grad(x);
                  for (std::size_t i = 0; i < nb.rows(); ++i) {
                    const auto b = nb.offsets[i], e = nb.offsets[i + 1];
                    if (e == b) continue;
                    const S inv = S(1) / static_cast<S>(e - b);
                    for (auto k = b; k < e; ++k) gx.row(nb.indices[k]) += inv * g.row(static_cast<Eigen::Index>(i));
                  }
                },
                t.requires_grad(x));
}

/// Column-wise standardization: (x - mean) / sqrt(var + var_eps), biased variance.
template <typename S>
Var standardize(Tape<S>& t, Var x, S var_eps) {
  using Mat = Matrix<S>;
  using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;
  const Mat& xv = t.value(x);
  const S n = static_cast<S>(xv.rows());
  const Row mean = xv.colwise().sum() / n;
  Mat centered = xv.rowwise() - mean;
  const Row var = centered.array().square().colwise().sum().matrix() / n;
  const Row inv_std = (var.array() + var_eps).sqrt().inverse().matrix();
  Mat y = centered.array().rowwise() * inv_std.array();
  return t.push(std::move(y),
                [x, inv_std](Tape<S>& tp, std::size_t self) {
                  const Mat& g = tp.grad(self);
                  const Mat& yv = tp.value(Var{self});
                  const S rows = static_cast<S>(g.rows());
                  const Row g_mean = g.colwise().sum() / rows;
                  const Row gy_mean = (g.array() * yv.array()).colwise().sum().matrix() / rows;
                  Mat d = g.rowwise() - g_mean;
                  d.array() -= yv.array().rowwise() * gy_mean.array();
                  tp.grad(x).array() += d.array().rowwise() * inv_std.array();
                },
                t.requires_grad(x));
}

template <typename S>
Var gather_rows(Tape<S>& t, Var x, std::span<const std::size_t> rows) {
  using Mat = Matrix<S>;
  const Mat& xv = t.value(x);
  Mat y(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) y.row(static_cast<Eigen::Index>(r)) = xv.row(static_cast<Eigen::Index>(rows[r]));
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.push(std::move(y),
                [x, idx = std::move(idx)](Tape<S>& tp, std::size_t self) {
                  const Mat& g = tp.grad(self);
                  Mat& gx = tp.grad(x);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    gx.row(static_cast<Eigen::Index>(idx[r])) += g.row(static_cast<Eigen::Index>(r));
                },
                t.requires_grad(x));
}

/// scale * a^T b.
template <typename S>
Var matmul_tn(Tape<S>& t, Var a, Var b, S scale) {
  using Mat = Matrix<S>;
  Mat y = scale * (t.value(a).transpose() * t.value(b));
  return t.push(std::move(y),
                [a, b, scale](Tape<S>& tp, std::size_t self) {
                  const Mat& g = tp.grad(self);
                  if (tp.requires_grad(a)) tp.grad(a).noalias() += scale * (tp.value(b) * g.transpose());
                  if (tp.requires_grad(b)) tp.grad(b).noalias() += scale * (tp.value(a) * g);
                },
                t.requires_grad(a) || t.requires_grad(b));
}

/// Weighted sum of same-shaped nodes.
template <typename S>
Var weighted_sum(Tape<S>& t, std::vector<std::pair<Var, S>> terms) {
  using Mat = Matrix<S>;
  if (terms.empty()) throw Error("weighted_sum of nothing");
  Mat y = Mat::Zero(t.value(terms[0].first).rows(), t.value(terms[0].first).cols());
  bool rg = false;
  for (const auto& [v, w] : terms) {
    y += w * t.value(v);
    rg = rg || t.requires_grad(v);
  }
  return t.push(std::move(y),
                [terms](Tape<S>& tp, std::size_t self) {
                  const Mat g = tp.grad(self);
                  for (const auto& [v, w] : terms)
                    if (tp.requires_grad(v)) tp.grad(v) += w * g;
                },
                rg);
}

/// Sum of all entries, as a 1x1 node.
template <typename S>
Var sum_all(Tape<S>& t, Var x) {
  using Mat = Matrix<S>;
  Mat y(1, 1);
  y(0, 0) = t.value(x).sum();
  return t.push(std::move(y),
                [x](Tape<S>& tp, std::size_t self) { tp.grad(x).array() += tp.grad(self)(0, 0); },
                t.requires_grad(x));
}

/// Multiplies every entry by a constant.
template <typename S>
Var scale(Tape<S>& t, Var x, S s) {
  return weighted_sum<S>(t, {{x, s}});
}

}  // namespace e3dp::nn
