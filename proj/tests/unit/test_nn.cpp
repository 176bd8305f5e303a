#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "fata/error.hpp"
#include "fata/nn/adam.hpp"
#include "fata/nn/encoder.hpp"
#include "fata/nn/gradcheck.hpp"
#include "fata/nn/ops.hpp"
#include "fata/nn/params.hpp"

using namespace fata;
using namespace fata::nn;

namespace {

Tensor<double> random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(r, c);
  for (auto& v : t.values()) v = scale * standard_normal(rng);
  return t;
}

using OpFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Reduces an op output to a scalar with fixed random weights, so every output
// element contributes a distinct amount.
double weighted_value(Tape<double>& tape, Var out, Var* loss_out) {
  const auto& y = tape.value(out);
  auto w = random_tensor(y.size(), 1, 999);
  auto flat = reshape(tape, out, 1, y.size());
  auto loss = matmul(tape, flat, tape.constant(w));
  if (loss_out) *loss_out = loss;
  return tape.value(loss)[0];
}

// Max relative error of the op's input gradients against central differences
// over every input coordinate.
double op_grad_error(std::vector<Tensor<double>> inputs, const OpFn& op, double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.input(x));
  Var loss;
  weighted_value(tape, op(tape, vars), &loss);
  tape.backward(loss);
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t(false);
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.input(x));
    return weighted_value(t, op(t, vs), nullptr);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& g = tape.grad(vars[i]);
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double saved = inputs[i][k];
      inputs[i][k] = saved + h;
      const double up = eval(inputs);
      inputs[i][k] = saved - h;
      const double down = eval(inputs);
      inputs[i][k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.empty() ? 0.0 : g[k];
      // Absolute floor for coordinates whose true gradient is ~0.
      const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("op gradients match finite differences") {
  constexpr double kTol = 1e-6;
  SUBCASE("matmul and linear") {
    CHECK(op_grad_error({random_tensor(3, 4, 1), random_tensor(4, 5, 2)},
                        [](auto& t, const auto& v) { return matmul(t, v[0], v[1]); }) < kTol);
    CHECK(op_grad_error({random_tensor(3, 4, 1), random_tensor(4, 2, 2), random_tensor(1, 2, 3)},
                        [](auto& t, const auto& v) { return linear(t, v[0], v[1], v[2]); }) < kTol);
  }
  SUBCASE("elementwise and structural") {
    CHECK(op_grad_error({random_tensor(3, 4, 1), random_tensor(3, 4, 2)},
                        [](auto& t, const auto& v) { return add(t, v[0], v[1]); }) < kTol);
    CHECK(op_grad_error({random_tensor(3, 4, 1), random_tensor(1, 4, 2)},
                        [](auto& t, const auto& v) { return add_row(t, v[0], v[1]); }) < kTol);
    CHECK(op_grad_error({random_tensor(3, 4, 1)}, [](auto& t, const auto& v) { return scale(t, v[0], 2.5); }) < kTol);
    CHECK(op_grad_error({random_tensor(3, 4, 1)}, [](auto& t, const auto& v) { return gelu(t, v[0]); }) < kTol);
    CHECK(op_grad_error({random_tensor(5, 3, 1)}, [](auto& t, const auto& v) {
            const std::vector<std::int32_t> ids{4, 0, 4, 2};
            return gather_rows(t, v[0], std::span<const std::int32_t>(ids));
          }) < kTol);
    CHECK(op_grad_error({random_tensor(2, 3, 1), random_tensor(1, 3, 2)}, [](auto& t, const auto& v) {
            auto c = concat_rows(t, std::span<const Var>(v));
            return reshape(t, slice_rows(t, c, 1, 2), 3, 2);
          }) < kTol);
  }
  SUBCASE("layer norm") {
    CHECK(op_grad_error({random_tensor(3, 6, 1), random_tensor(1, 6, 2), random_tensor(1, 6, 3)},
                        [](auto& t, const auto& v) { return layer_norm(t, v[0], v[1], v[2]); }) < 1e-5);
  }
  SUBCASE("attention with blocks and masked keys") {
    const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1, 1};
    CHECK(op_grad_error({random_tensor(6, 12, 1)}, [&](auto& t, const auto& v) {
            return self_attention(t, v[0], 2, 3, std::span<const std::uint8_t>(valid));
          }) < kTol);
  }
  SUBCASE("time position") {
    const std::vector<double> pos{0, 1, 2, 3};
    const std::vector<double> times{0.0, 0.4, 1.7, 2.2};
    CHECK(op_grad_error({Tensor<double>(1, 3, {0.9, 1.3, 0.2})}, [&](auto& t, const auto& v) {
            return time_position(t, v[0], std::span<const double>(pos), std::span<const double>(times), 8);
          }) < kTol);
  }
  SUBCASE("losses") {
    const std::vector<int> targets{2, 0, 1};
    const std::vector<double> weights{0.5, 0.0, 2.0};
    CHECK(op_grad_error({random_tensor(3, 4, 1)}, [&](auto& t, const auto& v) {
            return softmax_cross_entropy(t, v[0], std::span<const int>(targets), std::span<const double>(weights));
          }) < kTol);
    const std::vector<double> labels{1, 0, 0, 1};
    CHECK(op_grad_error({random_tensor(4, 1, 5, 3.0)}, [&](auto& t, const auto& v) {
            return bce_with_logits(t, v[0], std::span<const double>(labels));
          }) < kTol);
  }
}

TEST_CASE("softmax cross-entropy reference values") {
  const std::vector<double> uniform(8, 0.7);
  CHECK(softmax_cross_entropy(uniform, 3) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  const std::vector<double> confident{30.0, -30.0};
  CHECK(softmax_cross_entropy(confident, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(softmax_cross_entropy(confident, 0) < 1e-12);
  const std::vector<double> ramp{1.0, 2.0, 3.0};
  const double e = std::numbers::e;
  CHECK(softmax_cross_entropy(ramp, 1) == doctest::Approx(std::log(e + e * e + e * e * e) - 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(softmax_cross_entropy(ramp, 3), std::out_of_range);
  CHECK_THROWS_AS(softmax_cross_entropy(ramp, -1), std::out_of_range);
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(softmax_cross_entropy(one, 0), std::invalid_argument);

  // Zero-weight rows contribute nothing and get zero gradient.
  Tape<double> tape;
  auto x = tape.input(Tensor<double>(2, 3, {1, 2, 3, 5, -1, 0}));
  const std::vector<int> tg{1, 7};
  const std::vector<double> w{1.0, 0.0};
  auto l = softmax_cross_entropy(tape, x, std::span<const int>(tg), std::span<const double>(w));
  CHECK(tape.value(l)[0] == doctest::Approx(softmax_cross_entropy(std::vector<double>{1, 2, 3}, 1)));
  tape.backward(l);
  for (std::size_t c = 0; c < 3; ++c) CHECK(tape.grad(x)(1, c) == 0.0);
}

TEST_CASE("tape backward semantics") {
  SUBCASE("sum gives ones, unused leaves stay empty") {
    Tape<double> tape;
    auto a = tape.input(random_tensor(2, 3, 1));
    auto b = tape.input(random_tensor(2, 3, 2));
    auto l = sum(tape, a);
    tape.backward(l);
    for (double g : tape.grad(a).values()) CHECK(g == 1.0);
    CHECK(tape.grad(b).empty());
  }
  SUBCASE("misuse is rejected") {
    Tape<double> tape;
    auto a = tape.input(random_tensor(2, 2, 1));
    CHECK_THROWS_AS(tape.backward(Var{}), std::logic_error);
    CHECK_THROWS_AS(tape.backward(a), std::logic_error);  // not a scalar
    auto l = sum(tape, a);
    tape.backward(l);
    CHECK_THROWS_AS(tape.backward(l), std::logic_error);
    Tape<double> inference(false);
    auto c = sum(inference, inference.input(random_tensor(1, 1, 3)));
    CHECK_THROWS_AS(inference.backward(c), std::logic_error);
  }
  SUBCASE("gradient accumulates over shared use") {
    Tape<double> tape;
    auto a = tape.input(Tensor<double>(1, 1, 3.0));
    auto l = add(tape, scale(tape, a, 2.0), a);
    tape.backward(l);
    CHECK(tape.grad(a)[0] == 3.0);
  }
}

TEST_CASE("layer norm output statistics") {
  Tape<double> tape(false);
  auto x = tape.input(random_tensor(5, 16, 4, 3.0));
  auto y = layer_norm(tape, x, tape.constant(Tensor<double>(1, 16, 1.0)), tape.constant(Tensor<double>(1, 16, 0.0)));
  const auto& Y = tape.value(y);
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    double m = 0, v = 0;
    for (double e : Y.row(r)) m += e;
    m /= 16;
    for (double e : Y.row(r)) v += (e - m) * (e - m);
    v /= 16;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
}

TEST_CASE("attention probabilities") {
  const auto qkv = random_tensor(8, 12, 7);
  const std::vector<std::uint8_t> valid{1, 1, 1, 0, 1, 0, 0, 1};
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t h = 0; h < 2; ++h) {
      const auto p = attention_probs(qkv, 2, 4, std::span<const std::uint8_t>(valid), b, h);
      for (std::size_t q = 0; q < 4; ++q) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
          s += p[q * 4 + k];
          if (!valid[b * 4 + k]) CHECK(p[q * 4 + k] == 0.0);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

namespace {

struct EncoderFixture {
  ParamSet<double> params;
  Encoder enc;
  explicit EncoderFixture(std::size_t layers, std::size_t dim = 8) {
    EncoderConfig c;
    c.dim = dim;
    c.layers = layers;
    c.heads = 2;
    c.ff_dim = 16;
    c.dropout = 0.0;
    enc = Encoder::create(params, "enc", c);
    params.initialize(11);
    // Larger weights than the default init so the tests are not trivially passed.
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.init_kind(i) == Init::Normal) {
        for (auto& v : params.value(i).values()) v *= 20.0;
      }
    }
  }
  Tensor<double> run(const Tensor<double>& x, std::size_t block, const std::vector<std::uint8_t>& valid = {}) {
    Tape<double> tape(false);
    Bound<double> b(tape, params);
    return tape.value(enc.forward(b, tape.input(x), block, std::span<const std::uint8_t>(valid), DropoutContext{}));
  }
};

}  // namespace

TEST_CASE("encoder invariants") {
  SUBCASE("zero layers is the identity") {
    EncoderFixture f(0);
    const auto x = random_tensor(6, 8, 1);
    CHECK(f.run(x, 3) == x);
  }
  SUBCASE("masked keys do not influence valid positions") {
    EncoderFixture f(2);
    auto x = random_tensor(5, 8, 2);
    const std::vector<std::uint8_t> valid{1, 1, 0, 1, 0};
    const auto a = f.run(x, 5, valid);
    for (std::size_t c = 0; c < 8; ++c) {
      x(2, c) += 10.0;
      x(4, c) -= 3.0;
    }
    const auto b = f.run(x, 5, valid);
    for (std::size_t r : {0u, 1u, 3u}) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(a(r, c) == b(r, c));
    }
  }
  SUBCASE("blocks are independent") {
    EncoderFixture f(1);
    auto x = random_tensor(6, 8, 3);
    const auto a = f.run(x, 3);
    x(4, 2) += 1.0;
    const auto b = f.run(x, 3);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(a(r, c) == b(r, c));
    }
  }
  SUBCASE("permutation equivariance without positions") {
    EncoderFixture f(2);
    const auto x = random_tensor(4, 8, 4);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor<double> xp(4, 8);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 8; ++c) xp(r, c) = x(perm[r], c);
    }
    const auto y = f.run(x, 4);
    const auto yp = f.run(xp, 4);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(yp(r, c) - y(perm[r], c)) < 1e-12);
    }
  }
  SUBCASE("input validation") {
    EncoderFixture f(1);
    CHECK_THROWS_AS(f.run(random_tensor(4, 6, 1), 4), ConfigError);
    auto bad = random_tensor(4, 8, 1);
    bad(1, 1) = std::nan("");
    CHECK_THROWS_AS(f.run(bad, 4), NumericError);
    EncoderConfig c;
    c.dim = 10;
    c.heads = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("encoder gradients") {
    EncoderFixture f(2);
    for (std::size_t i = 0; i < f.params.size(); ++i) {
      for (auto& v : f.params.value(i).values()) v /= 20.0;  // back to a smooth regime
    }
    const auto x = random_tensor(6, 8, 5);
    const std::vector<std::uint8_t> valid{1, 1, 1, 1, 0, 1};
    const auto w = random_tensor(48, 1, 6);
    auto loss_of = [&](const ParamSet<double>& ps, GradSet<double>* grads) {
      Tape<double> tape(grads != nullptr);
      Bound<double> b(tape, ps, grads);
      auto y = f.enc.forward(b, tape.input(x, false), 3, std::span<const std::uint8_t>(valid), DropoutContext{});
      auto l = matmul(tape, reshape(tape, y, 1, 48), tape.constant(w));
      if (grads) tape.backward(l);
      return tape.value(l)[0];
    };
    auto grads = f.params.zeros_like();
    loss_of(f.params, &grads);
    const auto coords = sample_coordinates(f.params, 120, 3);
    const auto r = check_gradients(
        f.params, grads, [&](const ParamSet<double>& ps) { return loss_of(ps, nullptr); }, coords, 1e-4);
    double worst = 0.0;
    for (const auto& e : r.entries) {
      worst = std::max(worst, std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-6}));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("time-aware position embedding") {
  SUBCASE("index-only degenerate case") {
    Tape<double> tape(false);
    const std::vector<double> pos{0, 1, 2, 3};
    const std::vector<double> times{0.0, 7.5, 9.0, 30.0};
    auto p = time_position(tape, tape.input(Tensor<double>(1, 3, {1.0, 0.0, 0.0})), std::span<const double>(pos),
                           std::span<const double>(times), 6);
    const auto& P = tape.value(p);
    for (std::size_t j = 0; j < 6; ++j) CHECK(P(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        const double f = std::pow(10000.0, 2.0 * j / 6.0);
        CHECK(std::abs(P(i, j) - (j % 2 == 0 ? std::sin(i / f) : std::cos(i / f))) < 1e-12);
      }
    }
  }
  SUBCASE("worked example with time") {
    // d = 4, (w_p, w_t, b) = (1, 1, 0), i = 2, t = 3: TPos = 5 and the
    // frequencies are 1, 100, 10^4, 10^6.
    Tape<double> tape(false);
    const std::vector<double> pos{2};
    const std::vector<double> times{3};
    auto p = time_position(tape, tape.input(Tensor<double>(1, 3, {1.0, 1.0, 0.0})), std::span<const double>(pos),
                           std::span<const double>(times), 4);
    const auto& P = tape.value(p);
    CHECK(std::abs(P(0, 0) - std::sin(5.0)) < 1e-12);
    CHECK(std::abs(P(0, 1) - std::cos(5.0 / 100.0)) < 1e-12);
    CHECK(std::abs(P(0, 2) - std::sin(5.0 / 1e4)) < 1e-12);
    CHECK(std::abs(P(0, 3) - std::cos(5.0 / 1e6)) < 1e-12);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(P(0, j) - time_position_element(5.0, j, 4)) < 1e-15);
  }
  SUBCASE("values are bounded and sensitivity shrinks with frequency index") {
    const std::size_t d = 8;
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const double tpos_b = 50.0 * standard_normal(rng);
      for (std::size_t j = 0; j < d; ++j) {
        Tape<double> tape;
        auto w = tape.input(Tensor<double>(1, 3, {0.0, 0.0, tpos_b}));
        const std::vector<double> pos{0};
        const std::vector<double> times{0};
        auto p = time_position(tape, w, std::span<const double>(pos), std::span<const double>(times), d);
        CHECK(std::abs(tape.value(p)[j]) <= 1.0);
        Tensor<double> pick(d, 1);
        pick[j] = 1.0;
        auto l = matmul(tape, p, tape.constant(pick));
        tape.backward(l);
        CHECK(std::abs(tape.grad(w)[2]) <= std::pow(10000.0, -2.0 * j / d) + 1e-12);
      }
    }
  }
}

TEST_CASE("parameter initialization") {
  auto make = [](std::uint64_t seed) {
    ParamSet<float> p;
    p.add("w", 4, 5);
    p.add("b", 1, 5, Init::Zeros);
    p.add("g", 1, 5, Init::Ones);
    p.add("t", 1, 3, Init::Fixed, {1.0, 1.0, 0.0});
    p.initialize(seed);
    return p;
  };
  const auto a = make(7);
  CHECK(a == make(7));
  CHECK(!(a == make(8)));
  for (float v : a.value(1).values()) CHECK(v == 0.0f);
  for (float v : a.value(2).values()) CHECK(v == 1.0f);
  CHECK(a.value(3)[0] == 1.0f);
  CHECK(a.value(3)[1] == 1.0f);
  CHECK(a.value(3)[2] == 0.0f);
  for (float v : a.value(0).values()) CHECK(std::abs(v) <= 2.0 * kInitStddev + 1e-7);
  CHECK(a.find("g") == std::optional<std::size_t>(2));
  CHECK(!a.find("nope").has_value());
  ParamSet<float> dup;
  dup.add("x", 1, 1);
  CHECK_THROWS(dup.add("x", 1, 1));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamSet<double> p;
    p.add("w", 2, 3);
    p.initialize(1);
    const auto before = p;
    AdamConfig c;
    c.clip_norm = 0.0;
    Adam<double> opt(p, c);
    CHECK(opt.step(p, p.zeros_like()));
    CHECK(p == before);
  }
  SUBCASE("first step moves each coordinate by about lr against the gradient") {
    ParamSet<double> p;
    p.add("w", 1, 3, Init::Fixed, {0.5, -1.0, 2.0});
    p.initialize(0);
    AdamConfig c;
    c.lr = 0.01;
    c.clip_norm = 0.0;
    Adam<double> opt(p, c);
    GradSet<double> g{Tensor<double>(1, 3, {0.3, -2.0, 1e-3})};
    CHECK(opt.step(p, g));
    // Bias-corrected moments after one step are g and g^2.
    const std::vector<double> start{0.5, -1.0, 2.0};
    for (std::size_t k = 0; k < 3; ++k) {
      const double expect = start[k] - c.lr * g[0][k] / (std::abs(g[0][k]) + c.eps);
      CHECK(std::abs(p.value(0)[k] - expect) < 1e-15);
    }
    CHECK(opt.steps() == 1);
  }
  SUBCASE("non-finite gradients are refused") {
    ParamSet<double> p;
    p.add("w", 1, 2);
    p.initialize(3);
    const auto before = p;
    Adam<double> opt(p, AdamConfig{});
    GradSet<double> g{Tensor<double>(1, 2, {1.0, std::numeric_limits<double>::infinity()})};
    CHECK(!opt.step(p, g));
    CHECK(p == before);
    CHECK(opt.steps() == 0);
  }
  SUBCASE("clipping bounds the global norm") {
    ParamSet<double> p;
    p.add("w", 1, 2, Init::Zeros);
    p.initialize(0);
    AdamConfig c;
    c.clip_norm = 1.0;
    Adam<double> opt(p, c);
    GradSet<double> g{Tensor<double>(1, 2, {30.0, 40.0})};
    CHECK(global_norm(g) == doctest::Approx(50.0));
    opt.step(p, g);
    CHECK(opt.last_grad_norm() == doctest::Approx(50.0));
  }
  SUBCASE("frozen tensors are skipped") {
    ParamSet<double> p;
    p.add("a", 1, 2);
    p.add("b", 1, 2);
    p.initialize(5);
    const auto before = p;
    Adam<double> opt(p, AdamConfig{});
    GradSet<double> g{Tensor<double>(1, 2, 1.0), Tensor<double>(1, 2, 1.0)};
    const std::vector<bool> trainable{false, true};
    opt.step(p, g, &trainable);
    CHECK(p.value(0) == before.value(0));
    CHECK(!(p.value(1) == before.value(1)));
  }
}

TEST_CASE("gradient checker") {
  ParamSet<double> p;
  p.add("w", 2, 2, Init::Fixed, {1.0, -2.0, 0.5, 3.0});
  p.initialize(0);
  // loss = sum(w * c) is linear, so central differences are exact up to round-off.
  const std::vector<double> c{0.3, -1.1, 2.0, 0.7};
  auto loss = [&](const ParamSet<double>& ps) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += ps.value(0)[k] * c[k];
    return s;
  };
  GradSet<double> g{Tensor<double>(2, 2, c)};
  const auto coords = sample_coordinates(p, 4, 1);
  CHECK(coords.size() >= 4);
  const auto r = check_gradients(p, g, loss, coords);
  CHECK(r.max_rel_error < 1e-9);
  CHECK_THROWS_AS(check_gradients(p, g, loss, coords, 0.0), std::invalid_argument);
  CHECK(relative_error(0.0, 0.0) == 0.0);
}
