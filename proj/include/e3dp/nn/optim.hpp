#pragma once

#include <cmath>

#include "e3dp/nn/tape.hpp"

namespace e3dp::nn {

/// lr0 * (1 - iter/total)^power.
inline double poly_lr(long long iter, long long total, double lr0, double power) {
  if (total <= 0) throw ConfigError("poly_lr: total iterations must be positive");
  if (iter < 0 || iter > total) throw ConfigError("poly_lr: iteration outside [0, total]");
  if (!(lr0 > 0.0)) throw ConfigError("poly_lr: initial learning rate must be positive");
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

/// SGD with a classical momentum buffer: v = momentum * v + g + wd * p; p -= lr * v.
/// Parameters without a gradient entry are left untouched.
template <typename S>
void sgd_step(ParamSet<S>& params, const ParamSet<S>& grads, ParamSet<S>& velocity, S lr, S momentum,
              S weight_decay = S(0)) {
  for (auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto v = velocity.find(name);
    if (v == velocity.end()) v = velocity.emplace(name, Matrix<S>::Zero(p.rows(), p.cols())).first;
    v->second = momentum * v->second + g->second;
    if (weight_decay != S(0)) v->second += weight_decay * p;
    p -= lr * v->second;
  }
}

template <typename S>
bool all_finite(const ParamSet<S>& set) {
  for (const auto& [name, m] : set)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace e3dp::nn
