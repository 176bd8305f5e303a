#include "fata/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace fata::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// C (n x m) += A (n x k) * B (k x m)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (n x k) += A (n x m) * B^T, B is (k x m)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * m;
    T* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * m;
      T acc = T(0);
      for (std::size_t j = 0; j < m; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C (k x m) += A^T * B, A is (n x k), B is (n x m)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      T* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  Tensor<T> C(A.rows(), B.cols());
  gemm_nn(A.data(), B.data(), C.data(), A.rows(), A.cols(), B.cols());
  return tape.record(std::move(C), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    if (t.requires_grad(a)) gemm_nt(g.data(), B.data(), t.grad_of(a).data(), A.rows(), B.cols(), A.cols());
    if (t.requires_grad(b)) gemm_tn(A.data(), g.data(), t.grad_of(b).data(), A.rows(), A.cols(), B.cols());
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  const auto& X = tape.value(x);
  const auto& W = tape.value(weight);
  require(X.cols() == W.rows(), "linear: input width does not match weight rows");
  Tensor<T> Y(X.rows(), W.cols());
  if (bias.valid()) {
    const auto& b = tape.value(bias);
    require(b.rows() == 1 && b.cols() == W.cols(), "linear: bias shape");
    for (std::size_t r = 0; r < Y.rows(); ++r) std::copy(b.data(), b.data() + b.cols(), Y.row(r).data());
  }
  gemm_nn(X.data(), W.data(), Y.data(), X.rows(), X.cols(), W.cols());
  auto fn = [x, weight, bias](Tape<T>& t, const Tensor<T>& g) {
    const auto& X = t.value(x);
    const auto& W = t.value(weight);
    if (t.requires_grad(x)) gemm_nt(g.data(), W.data(), t.grad_of(x).data(), X.rows(), W.cols(), X.cols());
    if (t.requires_grad(weight)) gemm_tn(X.data(), g.data(), t.grad_of(weight).data(), X.rows(), X.cols(), W.cols());
    if (bias.valid() && t.requires_grad(bias)) {
      auto& gb = t.grad_of(bias);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
      }
    }
  };
  if (bias.valid()) return tape.record(std::move(Y), {x, weight, bias}, fn);
  return tape.record(std::move(Y), {x, weight}, fn);
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require(A.shape() == B.shape(), "add: shape mismatch");
  Tensor<T> C = A;
  add_into(C, B);
  return tape.record(std::move(C), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) add_into(t.grad_of(a), g);
    if (t.requires_grad(b)) add_into(t.grad_of(b), g);
  });
}

template <typename T>
Var add_row(Tape<T>& tape, Var a, Var row) {
  const auto& A = tape.value(a);
  const auto& R = tape.value(row);
  require(R.rows() == 1 && R.cols() == A.cols(), "add_row: row shape");
  Tensor<T> C = A;
  for (std::size_t r = 0; r < C.rows(); ++r) {
    for (std::size_t c = 0; c < C.cols(); ++c) C(r, c) += R[c];
  }
  return tape.record(std::move(C), {a, row}, [a, row](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) add_into(t.grad_of(a), g);
    if (t.requires_grad(row)) {
      auto& gr = t.grad_of(row);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
      }
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> C = tape.value(a);
  for (auto& v : C.values()) v *= factor;
  return tape.record(std::move(C), {a}, [a, factor](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  T acc = T(0);
  for (T v : tape.value(a).values()) acc += v;
  return tape.record(Tensor<T>(1, 1, acc), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad_of(a);
    for (auto& v : ga.values()) v += g[0];
  });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::span<const std::int32_t> ids) {
  const auto& W = tape.value(table);
  Tensor<T> out(ids.size(), W.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= W.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(W.rows()) + " rows");
    }
    const auto src = W.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return tape.record(std::move(out), {table}, [table, idx = std::move(idx)](Tape<T>& t, const Tensor<T>& g) {
    auto& gw = t.grad_of(table);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = gw.row(static_cast<std::size_t>(idx[r]));
      const auto src = g.row(r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, std::size_t rows, std::size_t cols) {
  Tensor<T> out = tape.value(a);
  out.reshape(rows, cols);
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var concat_rows(Tape<T>& tape, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = tape.value(parts[0]).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    require(tape.value(p).cols() == cols, "concat_rows: column mismatch");
    rows += tape.value(p).rows();
  }
  Tensor<T> out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& v = tape.value(p);
    std::copy(v.data(), v.data() + v.size(), out.data() + offset);
    offset += v.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record_many(std::move(out), inputs, [inputs](Tape<T>& t, const Tensor<T>& g) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      const auto n = t.value(p).size();
      if (t.requires_grad(p)) {
        auto& gp = t.grad_of(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t begin, std::size_t count) {
  const auto& A = tape.value(a);
  require(begin + count <= A.rows(), "slice_rows: out of range");
  Tensor<T> out(count, A.cols());
  std::copy(A.data() + begin * A.cols(), A.data() + (begin + count) * A.cols(), out.data());
  return tape.record(std::move(out), {a}, [a, begin](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad_of(a);
    const auto off = begin * g.cols();
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var offset, T eps) {
  const auto& X = tape.value(x);
  const auto& G = tape.value(gain);
  const auto& B = tape.value(offset);
  const auto n = X.rows();
  const auto d = X.cols();
  require(G.cols() == d && B.cols() == d, "layer_norm: gain/offset width");
  auto xhat = std::make_shared<Tensor<T>>(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(n);
  Tensor<T> Y(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = X.row(r);
    T mean = T(0);
    for (T v : row) mean += v;
    mean /= static_cast<T>(d);
    T var = T(0);
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * is;
      (*xhat)(r, c) = h;
      Y(r, c) = h * G[c] + B[c];
    }
  }
  return tape.record(std::move(Y), {x, gain, offset}, [x, gain, offset, xhat, inv_std](Tape<T>& t, const Tensor<T>& g) {
    const auto& G = t.value(gain);
    const auto n = g.rows();
    const auto d = g.cols();
    if (t.requires_grad(gain) || t.requires_grad(offset)) {
      Tensor<T>* gg = t.requires_grad(gain) ? &t.grad_of(gain) : nullptr;
      Tensor<T>* gb = t.requires_grad(offset) ? &t.grad_of(offset) : nullptr;
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          if (gg) (*gg)[c] += g(r, c) * (*xhat)(r, c);
          if (gb) (*gb)[c] += g(r, c);
        }
      }
    }
    if (!t.requires_grad(x)) return;
    auto& gx = t.grad_of(x);
    std::vector<T> dh(d);
    for (std::size_t r = 0; r < n; ++r) {
      T mean_dh = T(0);
      T mean_dh_h = T(0);
      for (std::size_t c = 0; c < d; ++c) {
        dh[c] = g(r, c) * G[c];
        mean_dh += dh[c];
        mean_dh_h += dh[c] * (*xhat)(r, c);
      }
      mean_dh /= static_cast<T>(d);
      mean_dh_h /= static_cast<T>(d);
      for (std::size_t c = 0; c < d; ++c) {
        gx(r, c) += (*inv_std)[r] * (dh[c] - mean_dh - (*xhat)(r, c) * mean_dh_h);
      }
    }
  });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
  Tensor<T> Y = tape.value(x);
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (auto& v : Y.values()) v = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  return tape.record(std::move(Y), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const auto& X = t.value(x);
    auto& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = X[i];
      const double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * std::exp(-0.5 * v * v) * kInvSqrt2Pi;
      gx[i] += static_cast<T>(d) * g[i];
    }
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  require(rate < 1.0, "dropout rate must be < 1");
  const auto& X = tape.value(x);
  auto mask = std::make_shared<std::vector<T>>(X.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*mask)[i] = uniform01(*rng) < rate ? T(0) : keep_scale;
    Y[i] = X[i] * (*mask)[i];
  }
  return tape.record(std::move(Y), {x}, [x, mask](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

namespace {

// Softmax over keys for each query of one (block, head). probs is block x block.
template <typename T>
void block_head_probs(const Tensor<T>& qkv, std::size_t d, std::size_t dh, std::size_t block,
                      std::span<const std::uint8_t> valid, std::size_t b, std::size_t h, T* probs) {
  const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const std::size_t base = b * block;
  const std::size_t qoff = h * dh;
  const std::size_t koff = d + h * dh;
  for (std::size_t q = 0; q < block; ++q) {
    const T* qr = qkv.row(base + q).data() + qoff;
    T* pr = probs + q * block;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < block; ++k) {
      if (!valid.empty() && !valid[base + k]) {
        pr[k] = -std::numeric_limits<T>::infinity();
        continue;
      }
      const T* kr = qkv.row(base + k).data() + koff;
      T acc = T(0);
      for (std::size_t e = 0; e < dh; ++e) acc += qr[e] * kr[e];
      pr[k] = acc * s;
      mx = std::max(mx, pr[k]);
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
      std::fill(pr, pr + block, T(0));
      continue;
    }
    T z = T(0);
    for (std::size_t k = 0; k < block; ++k) {
      pr[k] = pr[k] == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(pr[k] - mx);
      z += pr[k];
    }
    for (std::size_t k = 0; k < block; ++k) pr[k] /= z;
  }
}

}  // namespace

template <typename T>
std::vector<T> attention_probs(const Tensor<T>& qkv, std::size_t heads, std::size_t block,
                               std::span<const std::uint8_t> valid, std::size_t block_index, std::size_t head) {
  const auto d = qkv.cols() / 3;
  std::vector<T> probs(block * block);
  block_head_probs(qkv, d, d / heads, block, valid, block_index, head, probs.data());
  return probs;
}

template <typename T>
Var self_attention(Tape<T>& tape, Var qkv, std::size_t heads, std::size_t block, std::span<const std::uint8_t> valid) {
  const auto& QKV = tape.value(qkv);
  require(QKV.cols() % 3 == 0, "self_attention: qkv width must be 3d");
  const auto n = QKV.rows();
  const auto d = QKV.cols() / 3;
  require(heads > 0 && d % heads == 0, "self_attention: dim not divisible by heads");
  require(block > 0 && n % block == 0, "self_attention: rows not a multiple of block");
  require(valid.empty() || valid.size() == n, "self_attention: validity length");
  const auto dh = d / heads;
  const auto nb = n / block;
  auto probs = std::make_shared<std::vector<T>>(nb * heads * block * block);
  Tensor<T> out(n, d);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs->data() + (b * heads + h) * block * block;
      block_head_probs(QKV, d, dh, block, valid, b, h, P);
      for (std::size_t q = 0; q < block; ++q) {
        T* orow = out.row(b * block + q).data() + h * dh;
        for (std::size_t k = 0; k < block; ++k) {
          const T p = P[q * block + k];
          if (p == T(0)) continue;
          const T* vr = QKV.row(b * block + k).data() + 2 * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) orow[e] += p * vr[e];
        }
      }
    }
  }
  return tape.record(std::move(out), {qkv}, [qkv, heads, block, probs](Tape<T>& t, const Tensor<T>& g) {
    const auto& QKV = t.value(qkv);
    auto& G = t.grad_of(qkv);
    const auto n = QKV.rows();
    const auto d = QKV.cols() / 3;
    const auto dh = d / heads;
    const auto nb = n / block;
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<T> dp(block);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const T* P = probs->data() + (b * heads + h) * block * block;
        for (std::size_t q = 0; q < block; ++q) {
          const std::size_t qr = b * block + q;
          const T* go = g.row(qr).data() + h * dh;
          const T* qv = QKV.row(qr).data() + h * dh;
          T* gq = G.row(qr).data() + h * dh;
          T dot = T(0);
          for (std::size_t k = 0; k < block; ++k) {
            const T p = P[q * block + k];
            const std::size_t kr = b * block + k;
            const T* vv = QKV.row(kr).data() + 2 * d + h * dh;
            T acc = T(0);
            for (std::size_t e = 0; e < dh; ++e) acc += go[e] * vv[e];
            dp[k] = acc;
            dot += p * acc;
            if (p != T(0)) {
              T* gv = G.row(kr).data() + 2 * d + h * dh;
              for (std::size_t e = 0; e < dh; ++e) gv[e] += p * go[e];
            }
          }
          for (std::size_t k = 0; k < block; ++k) {
            const T p = P[q * block + k];
            if (p == T(0)) continue;
            const T ds = p * (dp[k] - dot) * s;
            const std::size_t kr = b * block + k;
            const T* kv = QKV.row(kr).data() + d + h * dh;
            T* gk = G.row(kr).data() + d + h * dh;
            for (std::size_t e = 0; e < dh; ++e) {
              gq[e] += ds * kv[e];
              gk[e] += ds * qv[e];
            }
          }
        }
      }
    }
  });
}

double time_position_element(double tpos, std::size_t j, std::size_t dim) {
  const double freq = std::pow(10000.0, 2.0 * static_cast<double>(j) / static_cast<double>(dim));
  return j % 2 == 0 ? std::sin(tpos / freq) : std::cos(tpos / freq);
}

template <typename T>
Var time_position(Tape<T>& tape, Var tpos, std::span<const T> positions, std::span<const T> times, std::size_t dim) {
  const auto& W = tape.value(tpos);
  require(W.size() == 3, "time_position: tpos must hold (w_p, w_t, b)");
  require(positions.size() == times.size(), "time_position: positions/times length");
  const auto n = positions.size();
  std::vector<T> inv_freq(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    inv_freq[j] = static_cast<T>(1.0 / std::pow(10000.0, 2.0 * static_cast<double>(j) / static_cast<double>(dim)));
  }
  auto tp = std::make_shared<std::vector<T>>(n);
  Tensor<T> out(n, dim);
  for (std::size_t r = 0; r < n; ++r) {
    const T v = W[0] * positions[r] + W[1] * times[r] + W[2];
    (*tp)[r] = v;
    for (std::size_t j = 0; j < dim; ++j) {
      const T a = v * inv_freq[j];
      out(r, j) = j % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  std::vector<T> pos(positions.begin(), positions.end());
  std::vector<T> tim(times.begin(), times.end());
  return tape.record(std::move(out), {tpos},
                     [tpos, tp, pos = std::move(pos), tim = std::move(tim), inv_freq = std::move(inv_freq)](
                         Tape<T>& t, const Tensor<T>& g) {
                       auto& gw = t.grad_of(tpos);
                       for (std::size_t r = 0; r < tp->size(); ++r) {
                         T dtp = T(0);
                         for (std::size_t j = 0; j < inv_freq.size(); ++j) {
                           const T a = (*tp)[r] * inv_freq[j];
                           dtp += g(r, j) * (j % 2 == 0 ? std::cos(a) : -std::sin(a)) * inv_freq[j];
                         }
                         gw[0] += dtp * pos[r];
                         gw[1] += dtp * tim[r];
                         gw[2] += dtp;
                       }
                     });
}

template <typename T>
void softmax_inplace(std::span<T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  T z = T(0);
  for (auto& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : row) v /= z;
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> targets, std::span<const T> weights) {
  const auto& L = tape.value(logits);
  require(targets.size() == L.rows() && weights.size() == L.rows(), "softmax_cross_entropy: row count");
  require(L.cols() >= 2, "softmax_cross_entropy: need at least two classes");
  auto probs = std::make_shared<Tensor<T>>(L.rows(), L.cols());
  T loss = T(0);
  for (std::size_t r = 0; r < L.rows(); ++r) {
    if (weights[r] == T(0)) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= L.cols()) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(targets[r]) + " out of range");
    }
    const auto row = L.row(r);
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) mx = std::max(mx, v);
    T z = T(0);
    for (std::size_t c = 0; c < row.size(); ++c) {
      (*probs)(r, c) = std::exp(row[c] - mx);
      z += (*probs)(r, c);
    }
    for (std::size_t c = 0; c < row.size(); ++c) (*probs)(r, c) /= z;
    loss += weights[r] * (mx + std::log(z) - row[static_cast<std::size_t>(targets[r])]);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> wt(weights.begin(), weights.end());
  return tape.record(Tensor<T>(1, 1, loss), {logits},
                     [logits, probs, tg = std::move(tg), wt = std::move(wt)](Tape<T>& t, const Tensor<T>& g) {
                       auto& gl = t.grad_of(logits);
                       for (std::size_t r = 0; r < tg.size(); ++r) {
                         if (wt[r] == T(0)) continue;
                         const T w = wt[r] * g[0];
                         for (std::size_t c = 0; c < gl.cols(); ++c) gl(r, c) += w * (*probs)(r, c);
                         gl(r, static_cast<std::size_t>(tg[r])) -= w;
                       }
                     });
}

double softmax_cross_entropy(std::span<const double> logits, int target) {
  if (logits.size() < 2) throw std::invalid_argument("softmax_cross_entropy: need at least two classes");
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: target out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z) - logits[static_cast<std::size_t>(target)];
}

template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, std::span<const T> labels) {
  const auto& L = tape.value(logits);
  require(L.cols() == 1 && L.rows() == labels.size(), "bce_with_logits: shape");
  T loss = T(0);
  for (std::size_t r = 0; r < L.rows(); ++r) {
    const T z = L[r];
    loss += std::max(z, T(0)) - z * labels[r] + std::log1p(std::exp(-std::abs(z)));
  }
  std::vector<T> y(labels.begin(), labels.end());
  return tape.record(Tensor<T>(1, 1, loss), {logits}, [logits, y = std::move(y)](Tape<T>& t, const Tensor<T>& g) {
    const auto& L = t.value(logits);
    auto& gl = t.grad_of(logits);
    for (std::size_t r = 0; r < y.size(); ++r) {
      const T sig = T(1) / (T(1) + std::exp(-L[r]));
      gl[r] += g[0] * (sig - y[r]);
    }
  });
}

#define FATA_INSTANTIATE_OPS(T)                                                                               \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                                 \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                                            \
  template Var add<T>(Tape<T>&, Var, Var);                                                                    \
  template Var add_row<T>(Tape<T>&, Var, Var);                                                                \
  template Var scale<T>(Tape<T>&, Var, T);                                                                    \
  template Var sum<T>(Tape<T>&, Var);                                                                         \
  template Var gather_rows<T>(Tape<T>&, Var, std::span<const std::int32_t>);                                  \
  template Var reshape<T>(Tape<T>&, Var, std::size_t, std::size_t);                                           \
  template Var concat_rows<T>(Tape<T>&, std::span<const Var>);                                                \
  template Var slice_rows<T>(Tape<T>&, Var, std::size_t, std::size_t);                                        \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                                     \
  template Var gelu<T>(Tape<T>&, Var);                                                                        \
  template Var dropout<T>(Tape<T>&, Var, double, Rng*);                                                       \
  template Var self_attention<T>(Tape<T>&, Var, std::size_t, std::size_t, std::span<const std::uint8_t>);     \
  template std::vector<T> attention_probs<T>(const Tensor<T>&, std::size_t, std::size_t,                      \
                                             std::span<const std::uint8_t>, std::size_t, std::size_t);        \
  template Var time_position<T>(Tape<T>&, Var, std::span<const T>, std::span<const T>, std::size_t);          \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>, std::span<const T>);             \
  template Var bce_with_logits<T>(Tape<T>&, Var, std::span<const T>);                                         \
  template void softmax_inplace<T>(std::span<T>);

FATA_INSTANTIATE_OPS(float)
FATA_INSTANTIATE_OPS(double)

}  // namespace fata::nn
