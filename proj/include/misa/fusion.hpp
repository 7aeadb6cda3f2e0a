#pragma once

// Multi-head self-attention over the stacked subspace vectors, followed by
// row concatenation into the joint vector h_out.

#include <cmath>
#include <string>
#include <vector>

#include "misa/encoders.hpp"
#include "misa/tensor.hpp"

namespace misa {

// Per-head projections are full d_h x d_h; heads add parameters rather than
// splitting the feature dimension.
template <typename T>
struct AttentionParams {
  std::vector<BasicTensor<T>> query;  // each [d_h, d_h]
  std::vector<BasicTensor<T>> key;
  std::vector<BasicTensor<T>> value;
  BasicTensor<T> output;  // [heads * d_h, d_h]

  std::size_t heads() const { return query.size(); }

  template <typename Rng>
  static AttentionParams create(ParameterStore<T>& store, std::size_t hidden,
                                std::size_t heads, Rng& rng) {
    AttentionParams p;
    for (std::size_t i = 0; i < heads; ++i) {
      const auto n = std::to_string(i);
      p.query.push_back(store.add("attention.q." + n, {hidden, hidden},
                                  uniform_init<T>(hidden * hidden, hidden, rng)));
      p.key.push_back(store.add("attention.k." + n, {hidden, hidden},
                                uniform_init<T>(hidden * hidden, hidden, rng)));
      p.value.push_back(store.add("attention.v." + n, {hidden, hidden},
                                  uniform_init<T>(hidden * hidden, hidden, rng)));
    }
    p.output = store.add("attention.o", {heads * hidden, hidden},
                         uniform_init<T>(heads * hidden * hidden, heads * hidden, rng));
    return p;
  }
};

// softmax(Q K^T / sqrt(d)) V for [rows, d] or batched [N, rows, d] inputs.
// The attention weights are written to `weights` when requested.
template <typename T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q,
                                    const BasicTensor<T>& k,
                                    const BasicTensor<T>& v,
                                    BasicTensor<T>* weights = nullptr) {
  if (q.shape() != k.shape() || k.shape() != v.shape()) {
    throw ShapeError("scaled_dot_attention: Q " + to_string(q.shape()) +
                     ", K " + to_string(k.shape()) + ", V " +
                     to_string(v.shape()) + " must agree");
  }
  const auto d = static_cast<double>(q.shape().back());
  auto logits = scale(matmul(q, transpose(k)), static_cast<T>(1.0 / std::sqrt(d)));
  auto attn = softmax(logits, logits.rank() - 1);
  if (weights) *weights = attn;
  return matmul(attn, v);
}

namespace detail {

// [.., rows, d] x [d, e] -> [.., rows, e]
template <typename T>
BasicTensor<T> project_rows(const BasicTensor<T>& m, const BasicTensor<T>& w) {
  if (m.rank() == 2) return matmul(m, w);
  const std::size_t n = m.dim(0), rows = m.dim(1);
  auto flat = reshape(m, {n * rows, m.dim(2)});
  return reshape(matmul(flat, w), {n, rows, w.dim(1)});
}

}  // namespace detail

template <typename T>
struct AttentionResult {
  BasicTensor<T> output;        // same shape as the input
  BasicTensor<T> mean_weights;  // head-averaged attention, no history
};

// MultiHead(M) = (head_1 (+) ... (+) head_n) W^o with Q = K = V = M.
template <typename T>
AttentionResult<T> multihead_self_attention(const BasicTensor<T>& m,
                                            const AttentionParams<T>& params) {
  if (m.rank() != 2 && m.rank() != 3) {
    throw ShapeError("multihead_self_attention: expected [rows, d] or "
                     "[N, rows, d], got " + to_string(m.shape()));
  }
  const std::size_t d = m.shape().back();
  const std::size_t heads = params.heads();
  if (heads == 0) throw ShapeError("multihead_self_attention: no heads");
  if (params.output.shape() != Shape{heads * d, d}) {
    throw ShapeError("multihead_self_attention: W^o has shape " +
                     to_string(params.output.shape()) + ", expected " +
                     to_string(Shape{heads * d, d}));
  }
  std::vector<BasicTensor<T>> outs;
  std::vector<T> mean;
  for (std::size_t i = 0; i < heads; ++i) {
    BasicTensor<T> w;
    outs.push_back(scaled_dot_attention(detail::project_rows(m, params.query[i]),
                                        detail::project_rows(m, params.key[i]),
                                        detail::project_rows(m, params.value[i]),
                                        &w));
    if (mean.empty()) mean.assign(w.size(), T(0));
    for (std::size_t j = 0; j < w.size(); ++j) mean[j] += w.data()[j];
  }
  Shape weight_shape = m.shape();
  weight_shape.back() = m.shape()[m.rank() - 2];
  for (T& x : mean) x /= static_cast<T>(heads);
  auto joined = heads == 1 ? outs.front() : concat(outs, m.rank() - 1);
  return {detail::project_rows(joined, params.output),
          BasicTensor<T>(std::move(weight_shape), std::move(mean))};
}

// Stacks per-row matrices [N, d] into [N, rows, d] in the given order.
template <typename T>
BasicTensor<T> stack_rows(const std::vector<BasicTensor<T>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t n = rows.front().dim(0), d = rows.front().dim(1);
  return reshape(concat(rows, 1), {n, rows.size(), d});
}

// h_out: rows concatenated in order, [N, rows * d] (or [rows * d] unbatched).
template <typename T>
BasicTensor<T> fuse(const BasicTensor<T>& fused) {
  if (fused.rank() == 2) return reshape(fused, {fused.size()});
  if (fused.rank() != 3) {
    throw ShapeError("fuse: expected [N, rows, d], got " +
                     to_string(fused.shape()));
  }
  return reshape(fused, {fused.dim(0), fused.dim(1) * fused.dim(2)});
}

}  // namespace misa
