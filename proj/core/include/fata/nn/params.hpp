#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fata/nn/tape.hpp"
#include "fata/nn/tensor.hpp"

namespace fata::nn {

enum class Init {
  Normal,  // truncated normal(0, 0.02)
  Zeros,
  Ones,
  Fixed,   // explicit values given at registration
};

inline constexpr double kInitStddev = 0.02;

/// Ordered, named collection of trainable tensors.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, Init init = Init::Normal,
                  std::vector<double> fixed = {});

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] const std::string& name(std::size_t i) const { return names_.at(i); }
  [[nodiscard]] Init init_kind(std::size_t i) const { return inits_.at(i); }
  [[nodiscard]] Tensor<T>& value(std::size_t i) { return values_.at(i); }
  [[nodiscard]] const Tensor<T>& value(std::size_t i) const { return values_.at(i); }
  [[nodiscard]] std::optional<std::size_t> find(std::string_view name) const;
  [[nodiscard]] std::size_t total_size() const;

  /// Resets every tensor per its Init; deterministic in `seed`, and each
  /// tensor draws from its own stream.
  void initialize(std::uint64_t seed);

  [[nodiscard]] std::vector<Tensor<T>> zeros_like() const;

  template <typename U>
  [[nodiscard]] ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      out.add(names_[i], values_[i].rows(), values_[i].cols(), inits_[i], fixed_[i]);
      out.value(i) = values_[i].template cast<U>();
    }
    return out;
  }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::vector<Init> inits_;
  std::vector<std::vector<double>> fixed_;
};

template <typename T>
using GradSet = std::vector<Tensor<T>>;

/// Binds a ParamSet onto a tape lazily, one leaf per parameter. Gradients flow
/// into `grads` (same order as the ParamSet) for parameters marked trainable.
template <typename T>
class Bound {
 public:
  Bound(Tape<T>& tape, const ParamSet<T>& params, GradSet<T>* grads = nullptr,
        const std::vector<bool>* trainable = nullptr)
      : tape_(tape), params_(params), grads_(grads), trainable_(trainable), cache_(params.size()) {}

  Var operator()(std::size_t index) {
    auto& slot = cache_.at(index);
    if (!slot.valid()) {
      const bool train = grads_ != nullptr && (trainable_ == nullptr || (*trainable_)[index]);
      slot = tape_.bind(params_.value(index), train ? &(*grads_)[index] : nullptr);
    }
    return slot;
  }

  [[nodiscard]] Tape<T>& tape() { return tape_; }
  [[nodiscard]] const ParamSet<T>& params() const { return params_; }

 private:
  Tape<T>& tape_;
  const ParamSet<T>& params_;
  GradSet<T>* grads_;
  const std::vector<bool>* trainable_;
  std::vector<Var> cache_;
};

}  // namespace fata::nn
