#include "fata/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace fata::nn {

template <typename T>
double global_norm(const GradSet<T>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (T x : g.values()) s += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(s);
}

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params, AdamConfig config) : config_(config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).size(), 0.0);
    v_.emplace_back(params.value(i).size(), 0.0);
  }
}

template <typename T>
bool Adam<T>::step(ParamSet<T>& params, const GradSet<T>& grads, const std::vector<bool>* trainable) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter set");
  }
  last_norm_ = global_norm(grads);
  if (!std::isfinite(last_norm_)) return false;
  double factor = 1.0;
  if (config_.clip_norm > 0.0 && last_norm_ > config_.clip_norm) factor = config_.clip_norm / last_norm_;

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    auto& p = params.value(i);
    const auto& g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]) * factor;
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
      if (config_.weight_decay > 0.0) update += config_.weight_decay * static_cast<double>(p[k]);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - config_.lr * update);
    }
  }
  return true;
}

template <typename T>
std::vector<double> Adam<T>::state() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.insert(out.end(), m_[i].begin(), m_[i].end());
    out.insert(out.end(), v_[i].begin(), v_[i].end());
  }
  return out;
}

template <typename T>
void Adam<T>::load_state(std::uint64_t steps, const std::vector<double>& flat) {
  std::size_t need = 0;
  for (const auto& m : m_) need += 2 * m.size();
  if (flat.size() != need) throw std::invalid_argument("optimizer state has the wrong length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    for (auto& x : m_[i]) x = flat[pos++];
    for (auto& x : v_[i]) x = flat[pos++];
  }
  t_ = steps;
}

template class Adam<float>;
template class Adam<double>;
template double global_norm<float>(const GradSet<float>&);
template double global_norm<double>(const GradSet<double>&);

}  // namespace fata::nn
