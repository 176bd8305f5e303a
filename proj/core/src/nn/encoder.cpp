#include "fata/nn/encoder.hpp"

#include "fata/error.hpp"
#include "fata/nn/ops.hpp"

namespace fata::nn {

void EncoderConfig::validate() const {
  if (dim == 0 || heads == 0 || ff_dim == 0 || max_positions == 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("encoder dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"dim", dim},         {"layers", layers},   {"heads", heads},
          {"ff_dim", ff_dim},   {"dropout", dropout}, {"max_positions", max_positions}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.max_positions = j.value("max_positions", std::size_t{512});
  return c;
}

template <typename T>
Encoder Encoder::create(ParamSet<T>& params, const std::string& prefix, const EncoderConfig& config) {
  config.validate();
  Encoder enc;
  enc.config_ = config;
  const auto d = config.dim;
  for (std::size_t i = 0; i < config.layers; ++i) {
    const auto p = prefix + ".layer" + std::to_string(i) + ".";
    Layer l{};
    l.wqkv = params.add(p + "attn.wqkv", d, 3 * d);
    l.bqkv = params.add(p + "attn.bqkv", 1, 3 * d, Init::Zeros);
    l.wo = params.add(p + "attn.wo", d, d);
    l.bo = params.add(p + "attn.bo", 1, d, Init::Zeros);
    l.ln1_g = params.add(p + "ln1.gain", 1, d, Init::Ones);
    l.ln1_b = params.add(p + "ln1.offset", 1, d, Init::Zeros);
    l.w1 = params.add(p + "ff.w1", d, config.ff_dim);
    l.b1 = params.add(p + "ff.b1", 1, config.ff_dim, Init::Zeros);
    l.w2 = params.add(p + "ff.w2", config.ff_dim, d);
    l.b2 = params.add(p + "ff.b2", 1, d, Init::Zeros);
    l.ln2_g = params.add(p + "ln2.gain", 1, d, Init::Ones);
    l.ln2_b = params.add(p + "ln2.offset", 1, d, Init::Zeros);
    enc.layers_.push_back(l);
  }
  return enc;
}

template <typename T>
Var Encoder::forward(Bound<T>& bound, Var x, std::size_t block, std::span<const std::uint8_t> valid,
                     const DropoutContext& drop) const {
  auto& tape = bound.tape();
  const auto& xv = tape.value(x);
  if (xv.cols() != config_.dim) throw ConfigError("encoder input width does not match dim");
  if (block > config_.max_positions) {
    throw ConfigError("sequence length " + std::to_string(block) + " exceeds max positions " +
                      std::to_string(config_.max_positions));
  }
  if (!xv.all_finite()) throw NumericError("encoder input contains non-finite values");
  Var h = x;
  for (const auto& l : layers_) {
    Var qkv = linear(tape, h, bound(l.wqkv), bound(l.bqkv));
    Var att = self_attention(tape, qkv, config_.heads, block, valid);
    Var proj = linear(tape, att, bound(l.wo), bound(l.bo));
    proj = dropout(tape, proj, drop.rate, drop.rng);
    h = layer_norm(tape, add(tape, h, proj), bound(l.ln1_g), bound(l.ln1_b));
    Var ff = gelu(tape, linear(tape, h, bound(l.w1), bound(l.b1)));
    ff = linear(tape, ff, bound(l.w2), bound(l.b2));
    ff = dropout(tape, ff, drop.rate, drop.rng);
    h = layer_norm(tape, add(tape, h, ff), bound(l.ln2_g), bound(l.ln2_b));
  }
  return h;
}

template Encoder Encoder::create<float>(ParamSet<float>&, const std::string&, const EncoderConfig&);
template Encoder Encoder::create<double>(ParamSet<double>&, const std::string&, const EncoderConfig&);
template Var Encoder::forward<float>(Bound<float>&, Var, std::size_t, std::span<const std::uint8_t>,
                                     const DropoutContext&) const;
template Var Encoder::forward<double>(Bound<double>&, Var, std::size_t, std::span<const std::uint8_t>,
                                      const DropoutContext&) const;

}  // namespace fata::nn
