#pragma once

#include <functional>

#include "irk/params.hpp"

namespace irk {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  int64_t checked = 0;
};

// Central finite differences against reverse-mode gradients. `build` records
// the scalar loss for the current parameter values on the supplied graph;
// it must be deterministic. Relative error denominator is max(|a|,|b|,1e-8).
template <typename T>
GradCheckReport finite_diff_check(const std::function<Var<T>(Graph<T>&)>& build,
                                  ParamStore<T>& params, double h) {
  if (!(h > 0)) throw ContractError("finite_diff_check: step must be positive");

  auto eval = [&](void) -> double {
    Graph<T> g(params);
    Var<T> loss = build(g);
    double v = g.value(loss);
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss value");
    return v;
  };

  params.zero_grads();
  {
    Graph<T> g(params);
    Var<T> loss = build(g);
    if (!std::isfinite(double(loss.val()[0])))
      throw NumericError("finite_diff_check: non-finite loss value");
    g.backward(loss);
  }

  GradCheckReport rep;
  for (const auto& name : params.names()) {
    auto& p = params.at(name);
    for (size_t i = 0; i < p.values.size(); ++i) {
      T saved = p.values[i];
      p.values[i] = T(double(saved) + h);
      double fp = eval();
      p.values[i] = T(double(saved) - h);
      double fm = eval();
      p.values[i] = saved;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = double(p.grad[i]);
      double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-8});
      double rel = std::fabs(numeric - analytic) / denom;
      rep.checked += 1;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = int(i);
      }
    }
  }
  return rep;
}

}  // namespace irk
