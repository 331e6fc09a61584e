#include "genspec/optim.hpp"

#include <algorithm>
#include <cmath>

#include "genspec/error.hpp"

namespace genspec {

void ParameterSet::add(std::string name, Tensor& t) {
  for (const auto& item : items_) {
    if (item.name == name) throw UsageError("duplicate parameter name '" + name + "'");
  }
  t.set_requires_grad(true);
  items_.push_back({std::move(name), t});
}

void ParameterSet::extend(const ParameterSet& other) {
  for (auto item : other.items_) add(item.name, item.tensor);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.tensor.numel();
  return n;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.name == name) return item.tensor;
  }
  throw DataError("no parameter named '" + name + "'");
}

void ParameterSet::zero_grad() {
  for (auto& item : items_) item.tensor.zero_grad();
}

void ParameterSet::load(const std::vector<NamedTensor>& source) {
  for (auto& item : items_) {
    auto it = std::find_if(source.begin(), source.end(), [&](const NamedTensor& s) { return s.name == item.name; });
    if (it == source.end()) throw DataError("checkpoint lacks parameter '" + item.name + "'");
    if (it->tensor.shape() != item.tensor.shape()) {
      throw DataError("parameter '" + item.name + "' has shape " + shape_str(it->tensor.shape()) + ", expected " +
                      shape_str(item.tensor.shape()));
    }
    std::copy(it->tensor.data().begin(), it->tensor.data().end(), item.tensor.data_mut().begin());
  }
}

OptimState make_optim_state(const ParameterSet& params, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw UsageError("learning rate must be positive");
  if (!(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 && config.beta2 < 1.0)) {
    throw UsageError("betas must lie in (0,1)");
  }
  if (config.weight_decay < 0.0) throw UsageError("weight decay must be non-negative");
  OptimState state;
  state.config = config;
  for (const auto& item : params.items()) {
    state.first_moment.emplace_back(item.tensor.numel(), 0.0);
    state.second_moment.emplace_back(item.tensor.numel(), 0.0);
  }
  return state;
}

double scheduled_lr(const AdamConfig& config, std::size_t step) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.lr;
  return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
}

void optim_step(ParameterSet& params, OptimState& state) {
  auto& items = params.items();
  if (items.size() != state.first_moment.size()) {
    throw ShapeError("optimizer state tracks " + std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(items.size()));
  }
  for (std::size_t p = 0; p < items.size(); ++p) {
    if (state.first_moment[p].size() != items[p].tensor.numel()) {
      throw ShapeError("optimizer moments for '" + items[p].name + "' are not shape-congruent");
    }
    if (!items[p].tensor.has_grad()) continue;
    for (double g : items[p].tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + items[p].name + "'");
    }
  }

  const AdamConfig& cfg = state.config;
  state.step += 1;
  const double lr = scheduled_lr(cfg, state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (std::size_t p = 0; p < items.size(); ++p) {
    Tensor& t = items[p].tensor;
    auto value = t.data_mut();
    const bool has = t.has_grad();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      double g = has ? t.grad()[i] : 0.0;
      if (!cfg.decoupled) g += cfg.weight_decay * value[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      if (cfg.decoupled) value[i] -= lr * cfg.weight_decay * value[i];
      value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace genspec
