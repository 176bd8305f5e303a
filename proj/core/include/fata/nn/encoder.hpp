#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fata/nn/params.hpp"
#include "fata/rng.hpp"

namespace fata::nn {

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  double dropout = 0.1;
  std::size_t max_positions = 512;

  /// Throws ConfigError when dim is not divisible by heads or a size is zero.
  void validate() const;

  [[nodiscard]] nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

/// Dropout switch threaded through forward passes; a null rng means eval mode.
struct DropoutContext {
  double rate = 0.0;
  Rng* rng = nullptr;
};

/// Post-norm bidirectional transformer encoder stack (BERT layout): per layer
/// x = LN(x + Drop(Attn(x))), x = LN(x + Drop(FF_gelu(x))).
class Encoder {
 public:
  struct Layer {
    std::size_t wqkv, bqkv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };

  Encoder() = default;

  /// Registers the stack's parameters under `prefix`.
  template <typename T>
  static Encoder create(ParamSet<T>& params, const std::string& prefix, const EncoderConfig& config);

  /// x is n x dim with n a multiple of `block`; each block of rows is an
  /// independent sequence. valid (size n, or empty = all valid) masks keys.
  template <typename T>
  Var forward(Bound<T>& bound, Var x, std::size_t block, std::span<const std::uint8_t> valid,
              const DropoutContext& drop) const;

  [[nodiscard]] const EncoderConfig& config() const { return config_; }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }

 private:
  EncoderConfig config_;
  std::vector<Layer> layers_;
};

}  // namespace fata::nn
