// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmoe/core/tensor.hpp"

namespace lmoe {

// Which update rule owns a parameter. Gating weights are modulated together
// with the shared partition, but keep their own tag for reporting.
enum class Partition { kShared, kGating, kExpert };

std::string partition_name(Partition p);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  Partition partition = Partition::kShared;
  int expert = -1;  // owning expert for Partition::kExpert

  bool is_shared() const { return partition != Partition::kExpert; }
  void zero_grad() { grad.fill(0.0); }
};

// Owns every parameter of a model in registration order. The order defines
// the layout of flattened gradient vectors and of checkpoints.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor init, Partition partition,
                 int expert = -1, bool trainable = true);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  void zero_grad();

  // Trainable shared-partition parameters (shared + gating), in order.
  std::vector<Parameter*> shared();
  std::vector<Parameter*> expert_owned(int expert = -1);
  std::vector<Parameter*> trainable();

  std::size_t shared_count() const;

  std::vector<double> flatten_grads(const std::vector<Parameter*>& ps) const;
  void assign_grads(const std::vector<Parameter*>& ps,
                    std::span<const double> flat) const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Ordered record of primitive ops (the computation record). Each node keeps
// its forward value and a closure that pushes its adjoint into its inputs.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  // A tape that records values only; nothing on it needs gradients.
  static Tape inference() {
    Tape t;
    t.record_ = false;
    return t;
  }
  bool recording() const { return record_; }

  Var constant(Tensor value);
  // Leaf bound to a parameter. Repeated calls for the same parameter return
  // the same leaf. Frozen parameters become constants.
  Var param(Parameter& p);

  Var push(Tensor value, std::vector<int> inputs, BackwardFn backward);

  // Replays adjoints from a scalar loss and accumulates into the gradients of
  // every reachable trainable parameter. Adjoints from earlier calls on the
  // same tape are discarded first, so several losses can share one forward.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  // Adjoint of a node; zero tensor if nothing reached it.
  const Tensor& grad(int id);
  // Writable adjoint of an input, allocated on first touch. Returns nullptr
  // for inputs that do not need gradients.
  Tensor* accum(int id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_leaf_;
  bool record_ = true;
};

// Central-difference gradient of a scalar function of the given parameters.
// The function reads the parameters' current values; they are restored.
std::vector<Tensor> finite_diff_gradient(const std::function<double()>& loss_fn,
                                         const std::vector<Parameter*>& params,
                                         double h = 1e-5);

}  // namespace lmoe
