#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsemt/tape.hpp"

namespace sparsemt {
namespace ops {

namespace detail {

inline int normalize_axis(int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
  return a;
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> st(shape.size());
  std::size_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  }
  return st;
}

}  // namespace detail

template <typename S>
Var<S> matmul(Tape<S>& t, Var<S> a, Var<S> b) {
  const Tensor<S>& av = t.value(a);
  const Tensor<S>& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                                shape_str(bv.shape()));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m, n});
  out.as_matrix().noalias() = av.as_matrix() * bv.as_matrix();
  return t.push(std::move(out), [a, b, av, bv, m, k, n](Tape<S>& tp, typename Tape<S>::Node& nd) {
    auto dc = nd.grad.as_matrix(m, n);
    tp.grad_buffer(a.id).as_matrix(m, k).noalias() += dc * bv.as_matrix().transpose();
    tp.grad_buffer(b.id).as_matrix(k, n).noalias() += av.as_matrix().transpose() * dc;
  });
}

template <typename S>
Var<S> add(Tape<S>& t, Var<S> a, Var<S> b) {
  const Tensor<S>& av = t.value(a);
  const Tensor<S>& bv = t.value(b);
  detail::require_same_shape(av, bv, "add");
  Tensor<S> out = Tensor<S>::zeros(av.shape());
  out.as_vector() = av.as_vector() + bv.as_vector();
  return t.push(std::move(out), [a, b](Tape<S>& tp, typename Tape<S>::Node& nd) {
    tp.grad_buffer(a.id).as_vector() += nd.grad.as_vector();
    tp.grad_buffer(b.id).as_vector() += nd.grad.as_vector();
  });
}

// x: [..., d], bias: [d], broadcast over leading dims
template <typename S>
Var<S> add_bias(Tape<S>& t, Var<S> x, Var<S> bias) {
  const Tensor<S>& xv = t.value(x);
  const Tensor<S>& bv = t.value(bias);
  const int d = xv.dim(xv.rank() - 1);
  if (bv.rank() != 1 || bv.dim(0) != d)
    throw std::invalid_argument("add_bias: bias " + shape_str(bv.shape()) +
                                " does not match last dim of " + shape_str(xv.shape()));
  const int rows = static_cast<int>(xv.numel()) / d;
  Tensor<S> out = Tensor<S>::zeros(xv.shape());
  out.as_matrix(rows, d) = xv.as_matrix(rows, d).rowwise() + bv.as_vector().transpose();
  return t.push(std::move(out), [x, bias, rows, d](Tape<S>& tp, typename Tape<S>::Node& nd) {
    auto dy = nd.grad.as_matrix(rows, d);
    tp.grad_buffer(x.id).as_matrix(rows, d) += dy;
    tp.grad_buffer(bias.id).as_vector() += dy.colwise().sum().transpose();
  });
}

template <typename S>
Var<S> mul(Tape<S>& t, Var<S> a, Var<S> b) {
  const Tensor<S>& av = t.value(a);
  const Tensor<S>& bv = t.value(b);
  detail::require_same_shape(av, bv, "mul");
  Tensor<S> out = Tensor<S>::zeros(av.shape());
  out.as_vector() = av.as_vector().cwiseProduct(bv.as_vector());
  return t.push(std::move(out), [a, b, av, bv](Tape<S>& tp, typename Tape<S>::Node& nd) {
    tp.grad_buffer(a.id).as_vector() += nd.grad.as_vector().cwiseProduct(bv.as_vector());
    tp.grad_buffer(b.id).as_vector() += nd.grad.as_vector().cwiseProduct(av.as_vector());
  });
}

template <typename S>
Var<S> scale(Tape<S>& t, Var<S> x, S c) {
  const Tensor<S>& xv = t.value(x);
  Tensor<S> out = Tensor<S>::zeros(xv.shape());
  out.as_vector() = xv.as_vector() * c;
  return t.push(std::move(out), [x, c](Tape<S>& tp, typename Tape<S>::Node& nd) {
    tp.grad_buffer(x.id).as_vector() += nd.grad.as_vector() * c;
  });
}

template <typename S>
Var<S> relu(Tape<S>& t, Var<S> x) {
  const Tensor<S>& xv = t.value(x);
  Tensor<S> out = Tensor<S>::zeros(xv.shape());
  out.as_vector() = xv.as_vector().cwiseMax(S(0));
  return t.push(std::move(out), [x, xv](Tape<S>& tp, typename Tape<S>::Node& nd) {
    Tensor<S>& dx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < xv.numel(); ++i)
      if (xv[i] > S(0)) dx[i] += nd.grad[i];
  });
}

template <typename S>
Var<S> sum(Tape<S>& t, Var<S> x) {
  const Tensor<S>& xv = t.value(x);
  Tensor<S> out = Tensor<S>::scalar(xv.as_vector().sum());
  return t.push(std::move(out), [x](Tape<S>& tp, typename Tape<S>::Node& nd) {
    tp.grad_buffer(x.id).as_vector().array() += nd.grad[0];
  });
}

// Numerically stable softmax along `axis` (max subtraction per lane).
template <typename S>
Var<S> softmax(Tape<S>& t, Var<S> x, int axis = -1) {
  const Tensor<S>& xv = t.value(x);
  const int a = detail::normalize_axis(axis, xv.rank());
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= static_cast<std::size_t>(xv.dim(i));
  const std::size_t len = static_cast<std::size_t>(xv.dim(a));
  for (int i = a + 1; i < xv.rank(); ++i) inner *= static_cast<std::size_t>(xv.dim(i));

  Tensor<S> out = Tensor<S>::zeros(xv.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      S mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      S z = S(0);
      for (std::size_t j = 0; j < len; ++j) {
        S e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  Tensor<S> probs = out;  // shared storage; saved for backward
  return t.push(std::move(out),
                [x, probs, outer, len, inner](Tape<S>& tp, typename Tape<S>::Node& nd) {
                  Tensor<S>& dx = tp.grad_buffer(x.id);
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t in = 0; in < inner; ++in) {
                      const std::size_t base = o * len * inner + in;
                      S dot = S(0);
                      for (std::size_t j = 0; j < len; ++j)
                        dot += nd.grad[base + j * inner] * probs[base + j * inner];
                      for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        dx[idx] += probs[idx] * (nd.grad[idx] - dot);
                      }
                    }
                  }
                });
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine gain and bias (both shaped [d]).
template <typename S>
Var<S> layer_norm(Tape<S>& t, Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-6)) {
  const Tensor<S>& xv = t.value(x);
  const Tensor<S>& gv = t.value(gain);
  const Tensor<S>& bv = t.value(bias);
  const int d = xv.dim(xv.rank() - 1);
  if (gv.rank() != 1 || gv.dim(0) != d || bv.rank() != 1 || bv.dim(0) != d)
    throw std::invalid_argument("layer_norm: gain/bias must be [d], d=" + std::to_string(d));
  const int rows = static_cast<int>(xv.numel()) / d;

  Tensor<S> out = Tensor<S>::zeros(xv.shape());
  Tensor<S> rstd = Tensor<S>::zeros({rows});
  Tensor<S> xhat = Tensor<S>::zeros(xv.shape());
  for (int r = 0; r < rows; ++r) {
    const S* xr = xv.data() + static_cast<std::size_t>(r) * d;
    S mean = S(0);
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= S(d);
    const S rs = S(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    S* xh = xhat.data() + static_cast<std::size_t>(r) * d;
    S* yr = out.data() + static_cast<std::size_t>(r) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mean) * rs;
      yr[j] = xh[j] * gv[static_cast<std::size_t>(j)] + bv[static_cast<std::size_t>(j)];
    }
  }
  return t.push(std::move(out), [x, gain, bias, gv, xhat, rstd, rows,
                                 d](Tape<S>& tp, typename Tape<S>::Node& nd) {
    Tensor<S>& dx = tp.grad_buffer(x.id);
    Tensor<S>& dg = tp.grad_buffer(gain.id);
    Tensor<S>& db = tp.grad_buffer(bias.id);
    for (int r = 0; r < rows; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * d;
      const S* dy = nd.grad.data() + off;
      const S* xh = xhat.data() + off;
      const S rs = rstd[static_cast<std::size_t>(r)];
      S sum_gdy = S(0), sum_gdy_xh = S(0);
      for (int j = 0; j < d; ++j) {
        const S gdy = gv[static_cast<std::size_t>(j)] * dy[j];
        sum_gdy += gdy;
        sum_gdy_xh += gdy * xh[j];
        dg[static_cast<std::size_t>(j)] += dy[j] * xh[j];
        db[static_cast<std::size_t>(j)] += dy[j];
      }
      S* dxr = dx.data() + off;
      for (int j = 0; j < d; ++j) {
        const S gdy = gv[static_cast<std::size_t>(j)] * dy[j];
        dxr[j] += rs * (gdy - (sum_gdy + xh[j] * sum_gdy_xh) / S(d));
      }
    }
  });
}

// Gather rows of `table` ([V, d]) at `ids`; backward scatter-adds into the
// table gradient.
template <typename S>
Var<S> embedding(Tape<S>& t, Var<S> table, const std::vector<int>& ids) {
  const Tensor<S>& tv = t.value(table);
  if (tv.rank() != 2)
    throw std::invalid_argument("embedding: table must be rank-2, got " + shape_str(tv.shape()));
  const int vocab = tv.dim(0), d = tv.dim(1);
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw std::out_of_range("embedding: token id " + std::to_string(id) + " out of range [0, " +
                              std::to_string(vocab) + ")");
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  return t.push(std::move(out), [table, ids, d](Tape<S>& tp, typename Tape<S>::Node& nd) {
    Tensor<S>& dt = tp.grad_buffer(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      S* dst = dt.data() + static_cast<std::size_t>(ids[i]) * d;
      const S* src = nd.grad.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// Inverted dropout; active only when the tape is in train mode with a seeded
// RNG attached. rate = 0 is a pass-through.
template <typename S>
Var<S> dropout(Tape<S>& t, Var<S> x, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (!t.train_mode || rate == 0.0) return x;
  if (t.rng == nullptr) throw std::logic_error("dropout in train mode requires tape.rng");
  const Tensor<S>& xv = t.value(x);
  const S keep_scale = S(1.0 / (1.0 - rate));
  Tensor<S> mask = Tensor<S>::zeros(xv.shape());
  Tensor<S> out = Tensor<S>::zeros(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    if (t.rng->next_double() >= rate) {
      mask[i] = keep_scale;
      out[i] = xv[i] * keep_scale;
    }
  }
  return t.push(std::move(out), [x, mask](Tape<S>& tp, typename Tape<S>::Node& nd) {
    tp.grad_buffer(x.id).as_vector() += nd.grad.as_vector().cwiseProduct(mask.as_vector());
  });
}

template <typename S>
Var<S> reshape(Tape<S>& t, Var<S> x, Shape shape) {
  const Tensor<S>& xv = t.value(x);
  Tensor<S> out = xv.clone().reshaped(std::move(shape));
  Shape orig = xv.shape();
  return t.push(std::move(out), [x, orig](Tape<S>& tp, typename Tape<S>::Node& nd) {
    tp.grad_buffer(x.id).as_vector() += nd.grad.as_vector();
  });
}

// General axis permutation, e.g. perm {0,2,1,3} swaps the middle axes of a
// rank-4 tensor.
template <typename S>
Var<S> transpose(Tape<S>& t, Var<S> x, const std::vector<int>& perm) {
  const Tensor<S>& xv = t.value(x);
  const int rank = xv.rank();
  if (static_cast<int>(perm.size()) != rank)
    throw std::invalid_argument("transpose: perm size does not match tensor rank");
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  Shape out_shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)])
      throw std::invalid_argument("transpose: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = xv.dim(p);
  }
  const auto in_strides = detail::row_major_strides(xv.shape());
  const auto out_strides = detail::row_major_strides(out_shape);
  // out[i0,...,ik] = in[i_{perm[0]}, ...]: out linear index -> in linear index
  std::vector<std::size_t> gather(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i)
    gather[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];

  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const std::size_t n = xv.numel();
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t rem = o, src = 0;
    for (int i = 0; i < rank; ++i) {
      const std::size_t q = rem / out_strides[static_cast<std::size_t>(i)];
      rem %= out_strides[static_cast<std::size_t>(i)];
      src += q * gather[static_cast<std::size_t>(i)];
    }
    out[o] = xv[src];
  }
  return t.push(std::move(out),
                [x, out_strides, gather, rank, n](Tape<S>& tp, typename Tape<S>::Node& nd) {
                  Tensor<S>& dx = tp.grad_buffer(x.id);
                  for (std::size_t o = 0; o < n; ++o) {
                    std::size_t rem = o, src = 0;
                    for (int i = 0; i < rank; ++i) {
                      const std::size_t q = rem / out_strides[static_cast<std::size_t>(i)];
                      rem %= out_strides[static_cast<std::size_t>(i)];
                      src += q * gather[static_cast<std::size_t>(i)];
                    }
                    dx[src] += nd.grad[o];
                  }
                });
}

template <typename S>
Var<S> concat(Tape<S>& t, const std::vector<Var<S>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor<S>& first = t.value(xs[0]);
  const int a = detail::normalize_axis(axis, first.rank());
  Shape out_shape = first.shape();
  std::vector<int> axis_sizes{first.dim(a)};
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Tensor<S>& v = t.value(xs[i]);
    if (v.rank() != first.rank())
      throw std::invalid_argument("concat: rank mismatch");
    for (int j = 0; j < first.rank(); ++j)
      if (j != a && v.dim(j) != out_shape[static_cast<std::size_t>(j)])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(v.shape()) + " vs " +
                                    shape_str(first.shape()));
    axis_sizes.push_back(v.dim(a));
    out_shape[static_cast<std::size_t>(a)] += v.dim(a);
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= static_cast<std::size_t>(first.dim(i));
  for (int i = a + 1; i < first.rank(); ++i) inner *= static_cast<std::size_t>(first.dim(i));
  const std::size_t out_axis_total = static_cast<std::size_t>(out_shape[static_cast<std::size_t>(a)]);

  Tensor<S> out = Tensor<S>::zeros(out_shape);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<S>& v = t.value(xs[i]);
    const std::size_t len = static_cast<std::size_t>(axis_sizes[i]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * len, len, out.data() + o * out_axis_total * inner + offset);
    offset += len;
  }
  auto inputs = xs;
  return t.push(std::move(out), [inputs, axis_sizes, outer, inner,
                                 out_axis_total](Tape<S>& tp, typename Tape<S>::Node& nd) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor<S>& dx = tp.grad_buffer(inputs[i].id);
      const std::size_t len = static_cast<std::size_t>(axis_sizes[i]) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        const S* src = nd.grad.data() + o * out_axis_total * inner + off;
        S* dst = dx.data() + o * len;
        for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
      }
      off += len;
    }
  });
}

// Scaled dot-product attention over [batch, heads, len, head_dim] tensors.
// key_mask marks valid key positions per (batch, key) pair; empty means all
// valid. causal restricts queries to keys at the same or earlier position.
// Softmax probabilities are saved for the backward pass.
template <typename S>
Var<S> attention(Tape<S>& t, Var<S> q, Var<S> k, Var<S> v,
                 const std::vector<std::uint8_t>& key_mask, bool causal) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Tensor<S>& qv = t.value(q);
  const Tensor<S>& kv = t.value(k);
  const Tensor<S>& vv = t.value(v);
  if (qv.rank() != 4 || kv.rank() != 4 || vv.rank() != 4)
    throw std::invalid_argument("attention: q/k/v must be rank-4 [B,H,L,dh]");
  const int B = qv.dim(0), H = qv.dim(1), Lq = qv.dim(2), dh = qv.dim(3);
  const int Lk = kv.dim(2);
  if (kv.dim(0) != B || kv.dim(1) != H || kv.dim(3) != dh || vv.shape() != kv.shape())
    throw std::invalid_argument("attention: inconsistent shapes " + shape_str(qv.shape()) + ", " +
                                shape_str(kv.shape()) + ", " + shape_str(vv.shape()));
  if (!key_mask.empty() && key_mask.size() != static_cast<std::size_t>(B) * Lk)
    throw std::invalid_argument("attention: key mask must have B*Lk entries");
  const S scl = S(1) / std::sqrt(S(dh));
  const S neg_inf = -std::numeric_limits<S>::infinity();

  Tensor<S> out = Tensor<S>::zeros({B, H, Lq, dh});
  Tensor<S> probs = Tensor<S>::zeros({B, H, Lq, Lk});
  const std::size_t blk_q = static_cast<std::size_t>(Lq) * dh;
  const std::size_t blk_k = static_cast<std::size_t>(Lk) * dh;
  const std::size_t blk_p = static_cast<std::size_t>(Lq) * Lk;

  Mat scores(Lq, Lk);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      const std::size_t i = static_cast<std::size_t>(b) * H + h;
      ConstMatrixMap<S> qb(qv.data() + i * blk_q, Lq, dh);
      ConstMatrixMap<S> kb(kv.data() + i * blk_k, Lk, dh);
      ConstMatrixMap<S> vb(vv.data() + i * blk_k, Lk, dh);
      scores.noalias() = qb * kb.transpose() * scl;
      if (!key_mask.empty()) {
        for (int j = 0; j < Lk; ++j)
          if (!key_mask[static_cast<std::size_t>(b) * Lk + j]) scores.col(j).setConstant(neg_inf);
      }
      if (causal) {
        for (int r = 0; r < Lq; ++r)
          for (int j = r + 1; j < Lk; ++j) scores(r, j) = neg_inf;
      }
      MatrixMap<S> pb(probs.data() + i * blk_p, Lq, Lk);
      for (int r = 0; r < Lq; ++r) {
        const S mx = scores.row(r).maxCoeff();
        S z = S(0);
        for (int j = 0; j < Lk; ++j) {
          const S e = std::exp(scores(r, j) - mx);
          pb(r, j) = e;
          z += e;
        }
        pb.row(r) /= z;
      }
      MatrixMap<S>(out.data() + i * blk_q, Lq, dh).noalias() = pb * vb;
    }
  }

  return t.push(std::move(out), [q, k, v, qv, kv, vv, probs, B, H, Lq, Lk, dh, scl, blk_q, blk_k,
                                 blk_p](Tape<S>& tp, typename Tape<S>::Node& nd) {
    Tensor<S>& dq = tp.grad_buffer(q.id);
    Tensor<S>& dk = tp.grad_buffer(k.id);
    Tensor<S>& dv = tp.grad_buffer(v.id);
    Mat dp(Lq, Lk), ds(Lq, Lk);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const std::size_t i = static_cast<std::size_t>(b) * H + h;
        ConstMatrixMap<S> qb(qv.data() + i * blk_q, Lq, dh);
        ConstMatrixMap<S> kb(kv.data() + i * blk_k, Lk, dh);
        ConstMatrixMap<S> vb(vv.data() + i * blk_k, Lk, dh);
        ConstMatrixMap<S> pb(probs.data() + i * blk_p, Lq, Lk);
        ConstMatrixMap<S> doo(nd.grad.data() + i * blk_q, Lq, dh);
        MatrixMap<S>(dv.data() + i * blk_k, Lk, dh).noalias() += pb.transpose() * doo;
        dp.noalias() = doo * vb.transpose();
        // softmax backward per row: ds = p .* (dp - rowsum(dp .* p))
        for (int r = 0; r < Lq; ++r) {
          const S dot = dp.row(r).cwiseProduct(pb.row(r)).sum();
          ds.row(r) = pb.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
        }
        MatrixMap<S>(dq.data() + i * blk_q, Lq, dh).noalias() += ds * kb * scl;
        MatrixMap<S>(dk.data() + i * blk_k, Lk, dh).noalias() += ds.transpose() * qb * scl;
      }
    }
  });
}

// Label-smoothed cross entropy averaged over unmasked positions.
// q(v) = (1-eps) * onehot(target) + eps/V, i.e. the smoothing mass is a
// uniform mixture over the full vocabulary.
template <typename S>
Var<S> cross_entropy_label_smoothed(Tape<S>& t, Var<S> logits, const std::vector<int>& targets,
                                    const std::vector<std::uint8_t>& mask, double epsilon) {
  const Tensor<S>& lv = t.value(logits);
  if (lv.rank() != 2)
    throw std::invalid_argument("cross_entropy: logits must be [positions, vocab]");
  const int n = lv.dim(0), vocab = lv.dim(1);
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
  if (epsilon < 0.0 || epsilon >= 1.0)
    throw std::invalid_argument("cross_entropy: smoothing rate must be in [0,1)");
  int n_active = 0;
  for (int r = 0; r < n; ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    ++n_active;
    if (targets[static_cast<std::size_t>(r)] < 0 || targets[static_cast<std::size_t>(r)] >= vocab)
      throw std::out_of_range("cross_entropy: target id " +
                              std::to_string(targets[static_cast<std::size_t>(r)]) +
                              " out of range [0, " + std::to_string(vocab) + ")");
  }
  if (n_active == 0) throw std::invalid_argument("cross_entropy: all positions masked out");

  Tensor<S> probs = Tensor<S>::zeros(lv.shape());
  const S uniform = S(epsilon) / S(vocab);
  const S on_target = S(1) - S(epsilon) + uniform;
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    const S* row = lv.data() + static_cast<std::size_t>(r) * vocab;
    S mx = row[0];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0, sum_logits = 0.0;
    for (int j = 0; j < vocab; ++j) {
      z += std::exp(static_cast<double>(row[j] - mx));
      sum_logits += static_cast<double>(row[j]);
    }
    const double lse = static_cast<double>(mx) + std::log(z);
    S* prow = probs.data() + static_cast<std::size_t>(r) * vocab;
    for (int j = 0; j < vocab; ++j)
      prow[j] = static_cast<S>(std::exp(static_cast<double>(row[j]) - lse));
    // -sum_v q(v) log p(v) = lse - (1-eps) x_t - (eps/V) sum_v x_v
    loss += lse - (1.0 - epsilon) * static_cast<double>(row[targets[static_cast<std::size_t>(r)]]) -
            (epsilon / vocab) * sum_logits;
  }
  loss /= n_active;

  return t.push(Tensor<S>::scalar(static_cast<S>(loss)),
                [logits, probs, targets, mask, n, vocab, uniform, on_target,
                 n_active](Tape<S>& tp, typename Tape<S>::Node& nd) {
                  const S g = nd.grad[0] / S(n_active);
                  Tensor<S>& dl = tp.grad_buffer(logits.id);
                  for (int r = 0; r < n; ++r) {
                    if (!mask[static_cast<std::size_t>(r)]) continue;
                    const std::size_t off = static_cast<std::size_t>(r) * vocab;
                    for (int j = 0; j < vocab; ++j) dl[off + j] += g * (probs[off + j] - uniform);
                    dl[off + targets[static_cast<std::size_t>(r)]] -= g * (on_target - uniform);
                  }
                });
}

}  // namespace ops
}  // namespace sparsemt
