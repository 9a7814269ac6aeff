#include "i2e/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <Eigen/Core>

#include "i2e/error.hpp"

namespace i2e::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

template <class T>
ConstMap<T> as_matrix(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
MutMap<T> as_mut_matrix(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MutMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

/// Grad buffer of parent i, or nullptr when it does not take gradients.
template <class T>
std::vector<T>* grad_of(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return &p.grad;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  return leaf(std::move(shape), std::move(values), false);
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  std::vector<T> v(numel(shape), T(0));
  return leaf(std::move(shape), std::move(v), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  require(numel(shape) == values.size(),
          "tensor " + shape_str(shape) + " given " + std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <class T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                             std::function<void(Node<T>&)> backward) {
  auto out = leaf(std::move(shape), std::move(values), false);
  bool needs = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.requires_grad(); });
  // Parents are kept even without grad so backward closures can read their values.
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
  }
  return out;
}

template <class T>
T Tensor<T>::item() const {
  require(size() == 1, "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <class T>
void backward(const Tensor<T>& loss) {
  require(loss.size() == 1, "backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed, it is a valid reverse-mode schedule.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Intermediate grads start from zero on every pass; leaves accumulate.
  for (Node<T>* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), T(0));
  }
  loss.node().ensure_grad();
  loss.node().grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(w.shape().size() == 2 && !x.shape().empty() && x.shape().back() == w.dim(0) &&
              b.shape() == Shape{w.dim(1)},
          "dense: x " + shape_str(x.shape()) + " vs W " + shape_str(w.shape()) + " and b " +
              shape_str(b.shape()));
  const std::size_t din = w.dim(0);
  const std::size_t dout = w.dim(1);
  const std::size_t rows = x.size() / din;

  std::vector<T> y(rows * dout);
  auto Y = as_mut_matrix(y, rows, dout);
  Y.noalias() = as_matrix(x.node().value, rows, din) * as_matrix(w.node().value, din, dout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b.node().value.data(),
                                                             static_cast<Eigen::Index>(dout));
  Y.rowwise() += bias;

  Shape shape = x.shape();
  shape.back() = dout;
  return Tensor<T>::from_op(std::move(shape), std::move(y), {x, w, b}, [rows, din, dout](Node<T>& self) {
    auto dY = as_matrix(self.grad, rows, dout);
    if (auto* gx = grad_of(self, 0)) {
      as_mut_matrix(*gx, rows, din).noalias() += dY * as_matrix(parent(self, 1).value, din, dout).transpose();
    }
    if (auto* gw = grad_of(self, 1)) {
      as_mut_matrix(*gw, din, dout).noalias() += as_matrix(parent(self, 0).value, rows, din).transpose() * dY;
    }
    if (auto* gb = grad_of(self, 2)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < dout; ++c) (*gb)[c] += self.grad[r * dout + c];
      }
    }
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(y), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require(bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin()),
          "add_broadcast: " + shape_str(bs) + " is not a suffix of " + shape_str(as));
  const std::size_t inner = b.size();
  const std::size_t outer = a.size() / inner;
  std::vector<T> y(a.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] = a.values()[o * inner + i] + b.values()[i];
  }
  return Tensor<T>::from_op(as, std::move(y), {a, b}, [outer, inner](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) (*g)[i] += self.grad[o * inner + i];
      }
    }
  });
}

template <class T>
T stable_sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(x.values()[i], T(0));
  return Tensor<T>::from_op(x.shape(), std::move(y), {x}, [](Node<T>& self) {
    auto* g = grad_of(self, 0);
    const auto& xv = parent(self, 0).value;
    for (std::size_t i = 0; i < g->size(); ++i) {
      if (xv[i] > 0) (*g)[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(x.values()[i]);
  return Tensor<T>::from_op(x.shape(), std::move(y), {x}, [](Node<T>& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const T s = self.value[i];
      (*g)[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x.values()[i]);
  return Tensor<T>::from_op(x.shape(), std::move(y), {x}, [](Node<T>& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const T t = self.value[i];
      (*g)[i] += self.grad[i] * (T(1) - t * t);
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> y(x.values().begin(), x.values().end());
  return Tensor<T>::from_op(std::move(shape), std::move(y), {x}, [](Node<T>& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require(!x.shape().empty(), "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  require(gain.shape() == Shape{d} && bias.shape() == Shape{d},
          "layer_norm: x " + shape_str(x.shape()) + " vs gain " + shape_str(gain.shape()));
  const std::size_t rows = x.size() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> y(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += xv[r * d + i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const T c = xv[r * d + i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (xv[r * d + i] - mean) * is;
      (*xhat)[r * d + i] = h;
      y[r * d + i] = gain.values()[i] * h + bias.values()[i];
    }
  }
  return Tensor<T>::from_op(x.shape(), std::move(y), {x, gain, bias}, [rows, d, xhat, inv_std](Node<T>& self) {
    const auto& gv = parent(self, 1).value;
    auto* gx = grad_of(self, 0);
    auto* gg = grad_of(self, 1);
    auto* gb = grad_of(self, 2);
    std::vector<T> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dy = &self.grad[r * d];
      const T* h = &(*xhat)[r * d];
      if (gg || gb) {
        for (std::size_t i = 0; i < d; ++i) {
          if (gg) (*gg)[i] += dy[i] * h[i];
          if (gb) (*gb)[i] += dy[i];
        }
      }
      if (!gx) continue;
      T mean_d = 0;
      T mean_dh = 0;
      for (std::size_t i = 0; i < d; ++i) {
        dxhat[i] = dy[i] * gv[i];
        mean_d += dxhat[i];
        mean_dh += dxhat[i] * h[i];
      }
      mean_d /= static_cast<T>(d);
      mean_dh /= static_cast<T>(d);
      for (std::size_t i = 0; i < d; ++i) {
        (*gx)[r * d + i] += (*inv_std)[r] * (dxhat[i] - mean_d - h[i] * mean_dh);
      }
    }
  });
}

template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    std::vector<T>* weights) {
  require(q.shape().size() == 3 && q.shape() == k.shape() && q.shape() == v.shape(),
          "attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
              shape_str(v.shape()));
  const std::size_t B = q.dim(0), S = q.dim(1), D = q.dim(2);
  if (heads == 0 || D % heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(D) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dk = D / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  auto probs = std::make_shared<std::vector<T>>(B * heads * S * S);
  std::vector<T> out(B * S * D, T(0));
  const auto qv = q.values(), kv = k.values(), vv = v.values();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dk;
      for (std::size_t i = 0; i < S; ++i) {
        T* p = &(*probs)[((b * heads + h) * S + i) * S];
        const T* qi = &qv[(b * S + i) * D + off];
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < S; ++j) {
          const T* kj = &kv[(b * S + j) * D + off];
          T s = 0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < S; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < S; ++j) p[j] /= z;
        T* oi = &out[(b * S + i) * D + off];
        for (std::size_t j = 0; j < S; ++j) {
          const T* vj = &vv[(b * S + j) * D + off];
          for (std::size_t c = 0; c < dk; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  if (weights) *weights = *probs;

  return Tensor<T>::from_op(q.shape(), std::move(out), {q, k, v},
                            [B, S, D, heads, dk, scale, probs](Node<T>& self) {
    const auto& qv = parent(self, 0).value;
    const auto& kv = parent(self, 1).value;
    const auto& vv = parent(self, 2).value;
    auto* gq = grad_of(self, 0);
    auto* gk = grad_of(self, 1);
    auto* gv = grad_of(self, 2);
    std::vector<T> dp(S);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dk;
        for (std::size_t i = 0; i < S; ++i) {
          const T* p = &(*probs)[((b * heads + h) * S + i) * S];
          const T* doi = &self.grad[(b * S + i) * D + off];
          // dP_ij = dO_i . V_j ; dV_j += P_ij dO_i
          T rowdot = 0;
          for (std::size_t j = 0; j < S; ++j) {
            const T* vj = &vv[(b * S + j) * D + off];
            T s = 0;
            for (std::size_t c = 0; c < dk; ++c) s += doi[c] * vj[c];
            dp[j] = s;
            rowdot += s * p[j];
            if (gv) {
              T* gvj = &(*gv)[(b * S + j) * D + off];
              for (std::size_t c = 0; c < dk; ++c) gvj[c] += p[j] * doi[c];
            }
          }
          // Softmax backward, then the scaled dot product.
          const T* qi = &qv[(b * S + i) * D + off];
          for (std::size_t j = 0; j < S; ++j) {
            const T ds = p[j] * (dp[j] - rowdot) * scale;
            const T* kj = &kv[(b * S + j) * D + off];
            if (gq) {
              T* gqi = &(*gq)[(b * S + i) * D + off];
              for (std::size_t c = 0; c < dk; ++c) gqi[c] += ds * kj[c];
            }
            if (gk) {
              T* gkj = &(*gk)[(b * S + j) * D + off];
              for (std::size_t c = 0; c < dk; ++c) gkj[c] += ds * qi[c];
            }
          }
        }
      }
    }
  });
}

template <class T>
Tensor<T> lstm(const Tensor<T>& x, const Tensor<T>& wx, const Tensor<T>& wh, const Tensor<T>& b) {
  require(x.shape().size() == 3 && wx.shape().size() == 2 && wh.shape().size() == 2 &&
              x.dim(2) == wx.dim(0) && wx.dim(1) % 4 == 0 && wh.dim(0) * 4 == wx.dim(1) &&
              wh.dim(1) == wx.dim(1) && b.shape() == Shape{wx.dim(1)},
          "lstm: x " + shape_str(x.shape()) + ", wx " + shape_str(wx.shape()) + ", wh " +
              shape_str(wh.shape()) + ", b " + shape_str(b.shape()));
  const std::size_t B = x.dim(0), S = x.dim(1), Din = x.dim(2), H = wh.dim(0), G = 4 * H;

  // Time-major state: gates[t][b][4H] after activation, cell[t][b][H], hidden[t][b][H].
  struct State {
    std::vector<T> gates, cell, tanh_cell, hidden;
  };
  auto st = std::make_shared<State>();
  st->gates.assign(S * B * G, T(0));
  st->cell.assign(S * B * H, T(0));
  st->tanh_cell.assign(S * B * H, T(0));
  st->hidden.assign(S * B * H, T(0));

  RowMat<T> zx = as_matrix(x.node().value, B * S, Din) * as_matrix(wx.node().value, Din, G);
  const auto Wh = as_matrix(wh.node().value, H, G);
  const auto bv = b.values();
  RowMat<T> z(B, G);
  for (std::size_t t = 0; t < S; ++t) {
    if (t > 0) {
      z.noalias() = ConstMap<T>(&st->hidden[(t - 1) * B * H], static_cast<Eigen::Index>(B),
                                static_cast<Eigen::Index>(H)) * Wh;
    } else {
      z.setZero();
    }
    for (std::size_t bi = 0; bi < B; ++bi) {
      T* gates = &st->gates[(t * B + bi) * G];
      for (std::size_t j = 0; j < G; ++j) {
        gates[j] = z(static_cast<Eigen::Index>(bi), static_cast<Eigen::Index>(j)) +
                   zx(static_cast<Eigen::Index>(bi * S + t), static_cast<Eigen::Index>(j)) + bv[j];
      }
      for (std::size_t j = 0; j < H; ++j) {
        gates[j] = stable_sigmoid(gates[j]);
        gates[H + j] = stable_sigmoid(gates[H + j]);
        gates[2 * H + j] = std::tanh(gates[2 * H + j]);
        gates[3 * H + j] = stable_sigmoid(gates[3 * H + j]);
        const T c_prev = t > 0 ? st->cell[((t - 1) * B + bi) * H + j] : T(0);
        const T c = gates[H + j] * c_prev + gates[j] * gates[2 * H + j];
        const std::size_t at = (t * B + bi) * H + j;
        st->cell[at] = c;
        st->tanh_cell[at] = std::tanh(c);
        st->hidden[at] = gates[3 * H + j] * st->tanh_cell[at];
      }
    }
  }

  std::vector<T> y(B * S * H);
  for (std::size_t t = 0; t < S; ++t) {
    for (std::size_t bi = 0; bi < B; ++bi) {
      std::copy_n(&st->hidden[(t * B + bi) * H], H, &y[(bi * S + t) * H]);
    }
  }

  return Tensor<T>::from_op(Shape{B, S, H}, std::move(y), {x, wx, wh, b},
                            [B, S, Din, H, G, st](Node<T>& self) {
    // dz is stored batch-major so that dX = dZ Wx^T is one product.
    RowMat<T> dz(B * S, G);
    RowMat<T> dh_next = RowMat<T>::Zero(B, H);
    RowMat<T> dc_next = RowMat<T>::Zero(B, H);
    RowMat<T> dz_t(B, G);
    const auto Wh = as_matrix(parent(self, 2).value, H, G);
    auto* gwh = grad_of(self, 2);
    for (std::size_t step = S; step-- > 0;) {
      for (std::size_t bi = 0; bi < B; ++bi) {
        const T* gates = &st->gates[(step * B + bi) * G];
        for (std::size_t j = 0; j < H; ++j) {
          const std::size_t at = (step * B + bi) * H + j;
          const auto ib = static_cast<Eigen::Index>(bi), jj = static_cast<Eigen::Index>(j);
          const T dh = self.grad[(bi * S + step) * H + j] + dh_next(ib, jj);
          const T i = gates[j], f = gates[H + j], g = gates[2 * H + j], o = gates[3 * H + j];
          const T tc = st->tanh_cell[at];
          const T dc = dh * o * (T(1) - tc * tc) + dc_next(ib, jj);
          const T c_prev = step > 0 ? st->cell[((step - 1) * B + bi) * H + j] : T(0);
          dz_t(ib, jj) = dc * g * i * (T(1) - i);
          dz_t(ib, static_cast<Eigen::Index>(H + j)) = dc * c_prev * f * (T(1) - f);
          dz_t(ib, static_cast<Eigen::Index>(2 * H + j)) = dc * i * (T(1) - g * g);
          dz_t(ib, static_cast<Eigen::Index>(3 * H + j)) = dh * tc * o * (T(1) - o);
          dc_next(ib, jj) = dc * f;
        }
        dz.row(static_cast<Eigen::Index>(bi * S + step)) = dz_t.row(static_cast<Eigen::Index>(bi));
      }
      if (step > 0) {
        const ConstMap<T> h_prev(&st->hidden[(step - 1) * B * H], static_cast<Eigen::Index>(B),
                                 static_cast<Eigen::Index>(H));
        dh_next.noalias() = dz_t * Wh.transpose();
        if (gwh) as_mut_matrix(*gwh, H, G).noalias() += h_prev.transpose() * dz_t;
      }
    }
    if (auto* gx = grad_of(self, 0)) {
      as_mut_matrix(*gx, B * S, Din).noalias() += dz * as_matrix(parent(self, 1).value, Din, G).transpose();
    }
    if (auto* gwx = grad_of(self, 1)) {
      as_mut_matrix(*gwx, Din, G).noalias() += as_matrix(parent(self, 0).value, B * S, Din).transpose() * dz;
    }
    if (auto* gb = grad_of(self, 3)) {
      for (Eigen::Index r = 0; r < dz.rows(); ++r) {
        for (std::size_t j = 0; j < G; ++j) (*gb)[j] += dz(r, static_cast<Eigen::Index>(j));
      }
    }
  });
}

template <class T>
Tensor<T> dot_constant(const Tensor<T>& x, std::span<const T> r) {
  require(r.size() == x.size(), "dot_constant: size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < r.size(); ++i) s += x.values()[i] * r[i];
  auto rc = std::make_shared<std::vector<T>>(r.begin(), r.end());
  return Tensor<T>::from_op(Shape{1}, {s}, {x}, [rc](Node<T>& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * (*rc)[i];
  });
}

template <class T>
Tensor<T> weighted_bce_with_logits(const Tensor<T>& logits, std::span<const T> targets,
                                   std::span<const T> weights) {
  const std::size_t n = logits.size();
  require(targets.size() == n && (weights.empty() || weights.size() == n),
          "weighted_bce: " + std::to_string(n) + " logits vs " + std::to_string(targets.size()) +
              " targets / " + std::to_string(weights.size()) + " weights");
  require(n > 0, "weighted_bce: empty batch");
  auto coef = std::make_shared<std::vector<T>>(n);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.values()[i];
    const T y = targets[i];
    const T w = weights.empty() ? T(1) : weights[i];
    // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    const T softplus = std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
    total += w * (softplus - y * z);
    (*coef)[i] = w * (stable_sigmoid(z) - y) / static_cast<T>(n);
  }
  return Tensor<T>::from_op(Shape{1}, {total / static_cast<T>(n)}, {logits}, [coef](Node<T>& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * (*coef)[i];
  });
}

template <class T>
Tensor<T> mse(const Tensor<T>& pred, std::span<const T> targets) {
  const std::size_t n = pred.size();
  require(targets.size() == n && n > 0,
          "mse: " + std::to_string(n) + " predictions vs " + std::to_string(targets.size()) + " targets");
  auto coef = std::make_shared<std::vector<T>>(n);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.values()[i] - targets[i];
    total += d * d;
    (*coef)[i] = T(2) * d / static_cast<T>(n);
  }
  return Tensor<T>::from_op(Shape{1}, {total / static_cast<T>(n)}, {pred}, [coef](Node<T>& self) {
    auto* g = grad_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * (*coef)[i];
  });
}

#define I2E_INSTANTIATE(T)                                                                       \
  template class Tensor<T>;                                                                      \
  template void backward<T>(const Tensor<T>&);                                                   \
  template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add_broadcast<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                               \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                        \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                  std::size_t, std::vector<T>*);                                 \
  template Tensor<T> lstm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                             const Tensor<T>&);                                                  \
  template Tensor<T> dot_constant<T>(const Tensor<T>&, std::span<const T>);                      \
  template Tensor<T> weighted_bce_with_logits<T>(const Tensor<T>&, std::span<const T>,           \
                                                 std::span<const T>);                            \
  template Tensor<T> mse<T>(const Tensor<T>&, std::span<const T>);                               \
  template T stable_sigmoid<T>(T);

I2E_INSTANTIATE(float)
I2E_INSTANTIATE(double)

#undef I2E_INSTANTIATE

}  // namespace i2e::nn
