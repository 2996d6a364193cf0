#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fluencygan/graph.hpp"

namespace fluencygan {

// Differentiable operations on Var. Binary elementwise ops take the larger
// operand first; the second may match it exactly or broadcast as a row
// vector [1 x C], a column vector [R x 1] or a single element, where R x C is
// the matrix view of the first operand.

template <typename S> Var<S> matmul(Var<S> a, Var<S> b);
template <typename S> Var<S> add(Var<S> a, Var<S> b);
template <typename S> Var<S> sub(Var<S> a, Var<S> b);
template <typename S> Var<S> mul(Var<S> a, Var<S> b);
template <typename S> Var<S> div(Var<S> a, Var<S> b);

template <typename S> Var<S> scale(Var<S> a, S factor);
template <typename S> Var<S> add_scalar(Var<S> a, S offset);
template <typename S> Var<S> tanh(Var<S> a);
template <typename S> Var<S> sigmoid(Var<S> a);
template <typename S> Var<S> relu(Var<S> a);
template <typename S> Var<S> log(Var<S> a);
template <typename S> Var<S> exp(Var<S> a);
/// Gradient passes only where lo < x < hi.
template <typename S> Var<S> clamp(Var<S> a, S lo, S hi);

template <typename S> Var<S> sum(Var<S> a);
template <typename S> Var<S> mean(Var<S> a);

/// Softmax along `axis` (-1 or last for rows of the matrix view, 0 for
/// columns of a 2-D tensor), max-subtracted.
template <typename S> Var<S> softmax(Var<S> x, int axis = -1);

/// softmax((logits + noise) / tau) along the last axis; noise is held fixed.
template <typename S> Var<S> gumbel_softmax(Var<S> logits, S tau, const Tensor<S>& noise);

/// Gumbel(0, 1) noise of the given shape.
template <typename S> Tensor<S> sample_gumbel(const Shape& shape, Rng& rng);

/// Valid 1-D convolution over the sequence axis. input [L, E] or [B, L, E],
/// kernel [k, E, F], bias [F]; output [L-k+1, F] or [B, L-k+1, F].
template <typename S> Var<S> conv1d(Var<S> input, Var<S> kernel, Var<S> bias);

/// Max over the sequence axis: [L, F] -> [F], [B, L, F] -> [B, F].
template <typename S> Var<S> max_pool_over_time(Var<S> input);

/// axis -1 joins columns (equal row counts, leading dims of the first part
/// kept); axis 0 stacks rows into a 2-D result.
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts, int axis = -1);

template <typename S> Var<S> slice_cols(Var<S> a, int start, int count);
template <typename S> Var<S> slice_rows(Var<S> a, int start, int count);

/// Row gather on the matrix view; index -1 yields a zero row.
template <typename S> Var<S> gather_rows(Var<S> a, std::span<const int> rows);

template <typename S> Var<S> reshape(Var<S> a, Shape shape);

/// Exact row select for integer ids.
template <typename S> Var<S> embedding_lookup(Var<S> table, std::span<const int> ids);
/// Distribution-weighted sum of rows for a [.., V] distribution.
template <typename S> Var<S> embedding_lookup(Var<S> table, Var<S> distribution);

/// Per-row normalisation over the last axis with affine scale/shift.
template <typename S> Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5));

/// Inverted dropout; identity when p == 0.
template <typename S> Var<S> dropout(Var<S> x, S p, Rng& rng);

/// Mean over rows whose target differs from ignore_index of -log softmax(row)[target].
/// Returns 0 when every row is ignored.
template <typename S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> targets, int ignore_index = -1);

/// Additive attention for a time-major batch.
///
/// enc_proj and enc_out hold T*B rows ordered t*B + b; dec_proj has B rows.
/// score(t, b) = v . tanh(enc_proj[t*B+b] + dec_proj[b]), softmax over the
/// positions where mask[t*B+b] != 0, context[b] = sum_t w(b,t) enc_out[t*B+b].
/// When `weights` is non-null it receives the B x T attention weights.
template <typename S>
Var<S> additive_attention(Var<S> enc_proj, Var<S> dec_proj, Var<S> v, Var<S> enc_out,
                          std::span<const std::uint8_t> mask, int batch,
                          RowMatrix<S>* weights = nullptr);

/// Scaled dot-product multi-head attention over a batch-major layout.
///
/// q has B*Tq rows, k and v have B*Tk rows (row b*T + t), all with D columns
/// split into `heads` heads. key_mask has B*Tk entries (non-zero = attend).
/// `causal` additionally hides keys j > i. When `weights` is non-null it
/// receives the (B*heads*Tq) x Tk probabilities, block (b*heads + h).
template <typename S>
Var<S> multi_head_attention(Var<S> q, Var<S> k, Var<S> v, int batch, int heads,
                            std::span<const std::uint8_t> key_mask, bool causal,
                            RowMatrix<S>* weights = nullptr);

template <typename S> Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S> Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S> Var<S> operator-(Var<S> a) { return scale(a, S(-1)); }
template <typename S> Var<S> operator*(Var<S> a, S s) { return scale(a, s); }
template <typename S> Var<S> operator*(S s, Var<S> a) { return scale(a, s); }

}  // namespace fluencygan
