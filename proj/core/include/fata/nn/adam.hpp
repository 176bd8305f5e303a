#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/nn/params.hpp"

namespace fata::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Adam with bias correction and optional global-norm clipping. Moments are
/// kept in double regardless of the parameter type.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet<T>& params, AdamConfig config);

  /// Applies one update. Returns false (and changes nothing) when any gradient
  /// is non-finite. `trainable` (optional) skips frozen tensors.
  bool step(ParamSet<T>& params, const GradSet<T>& grads, const std::vector<bool>* trainable = nullptr);

  [[nodiscard]] std::uint64_t steps() const { return t_; }
  [[nodiscard]] const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  [[nodiscard]] double last_grad_norm() const { return last_norm_; }

  /// Raw moment state for checkpoints: m then v for each tensor, in order.
  [[nodiscard]] std::vector<double> state() const;
  void load_state(std::uint64_t steps, const std::vector<double>& flat);

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
  double last_norm_ = 0.0;
};

/// Sum of squares of all gradient entries, square-rooted.
template <typename T>
double global_norm(const GradSet<T>& grads);

}  // namespace fata::nn
