// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small differentiable networks with a hand-written backward pass.
//
// Two reference architectures are supported:
//   MLP      : [Linear -> ReLU]* -> Linear
//   SmallCNN : [Conv3x3(pad 1) -> ReLU -> MaxPool2]* -> Flatten -> [Linear -> ReLU]* -> Linear
// The final layer always emits raw logits.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ciard/tensor.hpp"

namespace ciard {

enum class Arch { Mlp, SmallCnn };

std::string arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct ModelSpec {
  Arch arch = Arch::Mlp;
  Shape input_shape;                    // per-sample: [D] for MLP, [C, H, W] for SmallCNN
  std::vector<std::size_t> conv_channels;  // SmallCNN only
  std::vector<std::size_t> hidden;         // fully connected hidden widths
  std::size_t num_classes = 2;

  static ModelSpec mlp(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes);
  static ModelSpec small_cnn(Shape chw, std::vector<std::size_t> channels, std::vector<std::size_t> hidden,
                             std::size_t num_classes);

  /// Throws ParameterError when the spec cannot describe a network.
  void validate() const;

  /// Single-line textual form used by checkpoint manifests.
  std::string to_string() const;
  static ModelSpec from_string(const std::string& text);

  bool operator==(const ModelSpec&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;

  bool operator==(const NamedTensor&) const = default;
};

/// Named parameter tensors, in layer order. Names are unique and shapes never change.
class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Tensor value);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t total_elements() const;

  NamedTensor& operator[](std::size_t i) { return items_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return items_[i]; }
  const Tensor* find(const std::string& name) const;

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  /// Equal-shaped set with every element zero.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;
  ParamSet& operator+=(const ParamSet& other);

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<NamedTensor> items_;
};

/// Layout (name + shape) of every parameter implied by a spec.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelSpec& spec);

/// A network instance: architecture, parameters and a frozen flag.
class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, ParamSet params);

  /// He (fan-in) initialised weights, zero biases.
  static Model init(const ModelSpec& spec, std::uint64_t seed);
  /// All parameters zero.
  static Model zeros(const ModelSpec& spec);

  const ModelSpec& spec() const noexcept { return spec_; }
  const ParamSet& params() const noexcept { return params_; }
  /// Checked mutable access: throws FrozenModelError on a frozen model.
  ParamSet& mutable_params();

  bool frozen() const noexcept { return frozen_; }
  void set_frozen(bool f) noexcept { frozen_ = f; }

  std::uint64_t seed() const noexcept { return seed_; }
  void set_seed(std::uint64_t s) noexcept { seed_ = s; }
  /// Free-form provenance string stored in checkpoints.
  const std::string& lineage() const noexcept { return lineage_; }
  void set_lineage(std::string l) { lineage_ = std::move(l); }

  std::size_t num_parameters() const { return params_.total_elements(); }

 private:
  ModelSpec spec_;
  ParamSet params_;
  bool frozen_ = false;
  std::uint64_t seed_ = 0;
  std::string lineage_;
};

/// Intermediate activations retained by a forward pass for backprop.
struct ForwardTape {
  Tensor input;
  std::vector<Tensor> pre;   // per layer input, in order
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // per pooling layer
  Tensor logits;
};

/// x: [B, input_shape...]. Returns [B, C] logits.
Tensor forward(const Model& model, const Tensor& x);
ForwardTape forward_with_tape(const Model& model, const Tensor& x);

struct Backprop {
  ParamSet param_grads;
  Tensor input_grad;
};

/// Backpropagates d(objective)/d(logits) through a recorded forward pass.
Backprop backward(const Model& model, const ForwardTape& tape, const Tensor& dlogits);

/// Objective value plus its gradient with respect to the logits.
struct ObjectiveValue {
  double value = 0.0;
  Tensor dlogits;
};
using Objective = std::function<ObjectiveValue(const Tensor& logits)>;

struct Gradients {
  double value = 0.0;
  ParamSet param_grads;
  Tensor input_grad;
};

Gradients gradients(const Model& model, const Tensor& x, const Objective& objective);

/// FNV-1a over parameter names, shapes and raw bytes.
std::uint64_t param_digest(const Model& model);

}  // namespace ciard
