// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/core/autodiff.hpp"

#include <cmath>

#include "lmoe/core/error.hpp"

namespace lmoe {

std::string partition_name(Partition p) {
  switch (p) {
    case Partition::kShared:
      return "shared";
    case Partition::kGating:
      return "gating";
    case Partition::kExpert:
      return "expert";
  }
  return "unknown";
}

Parameter& ParameterStore::add(std::string name, Tensor init,
                               Partition partition, int expert,
                               bool trainable) {
  if (index_.contains(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  if (partition == Partition::kExpert && expert < 0) {
    throw ConfigError("expert parameter without owner: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  p->trainable = trainable;
  p->partition = partition;
  p->expert = expert;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::vector<Parameter*> ParameterStore::shared() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable && p->is_shared()) out.push_back(p.get());
  }
  return out;
}

std::vector<Parameter*> ParameterStore::expert_owned(int expert) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable && p->partition == Partition::kExpert &&
        (expert < 0 || p->expert == expert)) {
      out.push_back(p.get());
    }
  }
  return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

std::size_t ParameterStore::shared_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->trainable && p->is_shared()) n += p->value.numel();
  }
  return n;
}

std::vector<double> ParameterStore::flatten_grads(
    const std::vector<Parameter*>& ps) const {
  std::size_t n = 0;
  for (const auto* p : ps) n += p->grad.numel();
  std::vector<double> flat;
  flat.reserve(n);
  for (const auto* p : ps) {
    flat.insert(flat.end(), p->grad.vec().begin(), p->grad.vec().end());
  }
  return flat;
}

void ParameterStore::assign_grads(const std::vector<Parameter*>& ps,
                                  std::span<const double> flat) const {
  std::size_t off = 0;
  for (auto* p : ps) {
    const std::size_t n = p->grad.numel();
    if (off + n > flat.size()) {
      throw InvalidInput("assign_grads: flat vector too short");
    }
    std::copy(flat.begin() + off, flat.begin() + off + n, p->grad.data());
    off += n;
  }
  if (off != flat.size()) {
    throw InvalidInput("assign_grads: flat vector too long");
  }
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_leaf_.find(&p); it != param_leaf_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.value = p.value;
  n.needs_grad = record_ && p.trainable;
  n.param = n.needs_grad ? &p : nullptr;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_leaf_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::push(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor* Tape::accum(int id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw InvalidInput("backward: loss from another tape");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.numel() != 1) {
    throw InvalidInput("backward: loss must be scalar, got shape " +
                       shape_str(lv.shape()));
  }
  if (!std::isfinite(lv[0])) throw InvalidInput("backward: non-finite loss");

  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad = Tensor(lv.shape(), 1.0);
  nodes_[loss.id].has_grad = true;

  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.needs_grad) continue;
    if (n.param != nullptr) {
      auto& g = n.param->grad.vec();
      const auto& src = n.grad.vec();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

std::vector<Tensor> finite_diff_gradient(const std::function<double()>& loss_fn,
                                         const std::vector<Parameter*>& params,
                                         double h) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) {
    Tensor g(p->value.shape());
    for (std::size_t j = 0; j < p->value.numel(); ++j) {
      const double orig = p->value[j];
      p->value[j] = orig + h;
      const double fp = loss_fn();
      p->value[j] = orig - h;
      const double fm = loss_fn();
      p->value[j] = orig;
      g[j] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace lmoe
