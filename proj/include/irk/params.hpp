#pragma once

#include <unordered_map>

#include "irk/tape.hpp"

namespace irk {

// Named parameter tensors in deterministic (insertion) order. The order is
// what checkpoints, the optimizer, and the finite-difference checker iterate.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& create(const std::string& name, Shape shape) {
    if (map_.count(name)) throw ContractError("parameter already exists: " + name);
    order_.push_back(name);
    return map_.emplace(name, Tensor<T>(std::move(shape))).first->second;
  }

  Tensor<T>& create(const std::string& name, Tensor<T> t) {
    if (map_.count(name)) throw ContractError("parameter already exists: " + name);
    order_.push_back(name);
    return map_.emplace(name, std::move(t)).first->second;
  }

  bool has(const std::string& name) const { return map_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  void zero_grads() {
    for (auto& n : order_) {
      auto& t = map_.at(n);
      t.ensure_grad();
      t.zero_grad();
    }
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (auto& name : order_) n += map_.at(name).numel();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (auto& name : order_) out.create(name, map_.at(name).template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<T>> map_;
};

// One forward/backward pass: leases parameters onto a fresh tape (one node
// per name, so reuse accumulates correctly) and scatters gradients back.
template <typename T>
class Graph {
 public:
  explicit Graph(ParamStore<T>& params) : params_(&params) {}

  Tape<T>& tape() { return tape_; }

  Var<T> param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var<T> v = tape_.leaf(params_->at(name));
    bound_.emplace(name, v);
    return v;
  }

  Var<T> constant(const Tensor<T>& t) { return tape_.leaf(t); }
  Var<T> constant(Shape shape, std::vector<T> vals) {
    return tape_.leaf(std::move(shape), std::move(vals));
  }

  double value(Var<T> v) const {
    if (irk::numel(v.shape()) != 1) throw ContractError("value: node is not scalar");
    return double(v.val()[0]);
  }

  // Tape backward plus accumulation into ParamStore grad buffers.
  void backward(Var<T> loss) {
    tape_.backward(loss);
    for (auto& [name, var] : bound_) {
      auto& p = params_->at(name);
      p.ensure_grad();
      const auto& g = tape_.grad(var.id);
      for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    }
  }

 private:
  ParamStore<T>* params_;
  Tape<T> tape_;
  std::unordered_map<std::string, Var<T>> bound_;
};

}  // namespace irk
