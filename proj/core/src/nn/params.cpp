#include "fata/nn/params.hpp"

#include <stdexcept>

#include "fata/rng.hpp"

namespace fata::nn {

template <typename T>
std::size_t ParamSet<T>::add(std::string name, std::size_t rows, std::size_t cols, Init init,
                             std::vector<double> fixed) {
  if (find(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  if (init == Init::Fixed && fixed.size() != rows * cols) {
    throw std::invalid_argument("fixed init for '" + name + "' has the wrong length");
  }
  names_.push_back(std::move(name));
  values_.emplace_back(rows, cols);
  inits_.push_back(init);
  fixed_.push_back(std::move(fixed));
  return values_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParamSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

template <typename T>
std::size_t ParamSet<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <typename T>
void ParamSet<T>::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    auto& v = values_[i];
    switch (inits_[i]) {
      case Init::Normal: {
        Rng rng(derive_seed(seed, i));
        for (auto& x : v.values()) x = static_cast<T>(truncated_normal(rng, kInitStddev));
        break;
      }
      case Init::Zeros:
        v.fill(T(0));
        break;
      case Init::Ones:
        v.fill(T(1));
        break;
      case Init::Fixed:
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<T>(fixed_[i][k]);
        break;
    }
  }
}

template <typename T>
std::vector<Tensor<T>> ParamSet<T>::zeros_like() const {
  std::vector<Tensor<T>> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.emplace_back(v.rows(), v.cols());
  return out;
}

template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace fata::nn
