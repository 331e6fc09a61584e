#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "genspec/tensor.hpp"

namespace genspec {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered collection of trainable leaves. Holds shallow handles, so updates
// through the set are visible to the owning model.
class ParameterSet {
 public:
  void add(std::string name, Tensor& t);
  void extend(const ParameterSet& other);

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  const std::vector<NamedTensor>& items() const { return items_; }
  std::vector<NamedTensor>& items() { return items_; }
  const Tensor& get(const std::string& name) const;

  void zero_grad();
  /// Copies values from `source` by name; every parameter must be present with a matching shape.
  void load(const std::vector<NamedTensor>& source);

 private:
  std::vector<NamedTensor> items_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Decoupled (AdamW) decay when true; classic L2 folded into the gradient otherwise.
  bool decoupled = true;
  /// Linear warmup length; 0 disables.
  std::size_t warmup_steps = 0;
};

struct OptimState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

OptimState make_optim_state(const ParameterSet& params, const AdamConfig& config);

/// Learning rate in effect for the update that moves the counter to `step`.
double scheduled_lr(const AdamConfig& config, std::size_t step);

/// One bias-corrected adaptive update. Parameters without a gradient buffer
/// are treated as having zero gradient. Throws NumericError naming the first
/// parameter with a non-finite gradient, before anything is modified.
void optim_step(ParameterSet& params, OptimState& state);

}  // namespace genspec
