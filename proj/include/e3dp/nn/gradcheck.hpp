#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "e3dp/nn/tape.hpp"

namespace e3dp::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;         // "name[index]" of the worst entry
  std::size_t checked = 0;   // coordinates compared
  std::size_t excluded = 0;  // coordinates whose +-eps probe changed a ReLU pattern
};

/// Builds the scalar loss on a fresh tape from the given parameters.
template <typename S>
using LossBuilder = std::function<Var(Tape<S>&, const ParamSet<S>&)>;

/// Compares reverse-mode gradients with central differences
/// (f(p+eps) - f(p-eps)) / 2eps for every parameter entry.
///
/// Relative error is |a - n| / max(|a|, |n|, 1e-6), taken as zero when
/// |a - n| is below 16 ulp of the loss divided by 2eps. Coordinates where the
/// probe flips any recorded branch (a ReLU input crossing zero, a norm
/// crossing its floor) sit on a kink, where the central difference is not a
/// derivative; they are skipped and counted in `excluded`.
template <typename S>
GradCheckResult grad_check(const LossBuilder<S>& loss, ParamSet<S> params, S eps) {
  ParamSet<S> grads;
  std::uint64_t base_sig;
  {
    Tape<S> t;
    Var l = loss(t, params);
    if (!std::isfinite(static_cast<double>(t.scalar(l)))) throw Error("grad_check: non-finite loss");
    t.backward(l);
    t.accumulate(grads);
    base_sig = t.kink_signature();
  }
  auto eval = [&](std::uint64_t& sig) {
    Tape<S> t;
    Var l = loss(t, params);
    sig = t.kink_signature();
    const S v = t.scalar(l);
    if (!std::isfinite(static_cast<double>(v))) throw Error("grad_check: non-finite loss");
    return v;
  };
  GradCheckResult res;
  for (auto& [name, p] : params) {
    const auto g = grads.find(name);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const S orig = p.data()[i];
      std::uint64_t sp, sm;
      p.data()[i] = orig + eps;
      const S fp = eval(sp);
      p.data()[i] = orig - eps;
      const S fm = eval(sm);
      p.data()[i] = orig;
      if (sp != base_sig || sm != base_sig) {
        ++res.excluded;
        continue;
      }
      const double numeric = static_cast<double>(fp - fm) / (2.0 * static_cast<double>(eps));
      const double analytic = g == grads.end() ? 0.0 : static_cast<double>(g->second.data()[i]);
      // The difference quotient cannot resolve anything below the rounding
      // of fp and fm; mismatches under that level count as agreement.
      const double resolution = 16.0 * static_cast<double>(std::numeric_limits<S>::epsilon()) *
                                std::max(std::abs(static_cast<double>(fp)), std::abs(static_cast<double>(fm))) /
                                (2.0 * static_cast<double>(eps));
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double diff = std::abs(analytic - numeric);
      const double rel = diff <= resolution ? 0.0 : diff / denom;
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace e3dp::nn
