#pragma once

#include <set>

#include "irk/params.hpp"

namespace irk {

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

// Decoupled-weight-decay Adam. Decay is applied directly to the parameter,
// separate from the bias-corrected moment update.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t steps() const { return t_; }

  // Updates every parameter except those named in `skip`. Parameters without
  // an allocated grad buffer are treated as zero-gradient (decay still applies).
  void step(ParamStore<T>& params, const std::set<std::string>* skip = nullptr) {
    // Validate before mutating anything; a NaN gradient aborts the whole step.
    for (const auto& name : params.names()) {
      if (skip && skip->count(name)) continue;
      const auto& g = params.at(name).grad;
      for (T v : g)
        if (!std::isfinite(double(v)))
          throw NumericError("adamw_step: non-finite gradient in " + name);
    }
    t_ += 1;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (const auto& name : params.names()) {
      if (skip && skip->count(name)) continue;
      auto& p = params.at(name);
      auto& mom = state_[name];
      if (mom.m.size() != p.values.size()) {
        mom.m.assign(p.values.size(), 0.0);
        mom.v.assign(p.values.size(), 0.0);
      }
      const bool has_grad = p.grad.size() == p.values.size();
      for (size_t i = 0; i < p.values.size(); ++i) {
        double g = has_grad ? double(p.grad[i]) : 0.0;
        mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
        mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
        double mhat = mom.m[i] / bc1;
        double vhat = mom.v[i] / bc2;
        double w = double(p.values[i]);
        w -= cfg_.lr * cfg_.weight_decay * w;
        w -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        p.values[i] = T(w);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::unordered_map<std::string, Moments> state_;
  int64_t t_ = 0;
};

}  // namespace irk
