#pragma once

#include "geolab/tensor.hpp"

namespace geolab::ops {

// Generic entry point: validates shapes for the kind, computes the result and
// records a node on the current graph when any input requires gradients.
TensorPtr forward_op(OpKind kind, const OpAttrs& attrs, const std::vector<TensorPtr>& inputs);

// Elementwise; the two shapes must match exactly, or one side is a one-element
// tensor (the only broadcast the engine allows).
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);  // (m,k) @ (k,n)
TensorPtr reshape(const TensorPtr& a, Shape shape);
TensorPtr transpose(const TensorPtr& a, std::vector<int> perm);
TensorPtr transpose2d(const TensorPtr& a);
TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
TensorPtr slice(const TensorPtr& a, std::vector<std::int64_t> offsets,
                std::vector<std::int64_t> extents);

TensorPtr sum_all(const TensorPtr& a);               // -> scalar
TensorPtr sum_axis(const TensorPtr& a, int axis);    // removes the axis
TensorPtr mean_all(const TensorPtr& a);
TensorPtr mean_axis(const TensorPtr& a, int axis);

TensorPtr softmax(const TensorPtr& a);               // last axis
TensorPtr layernorm(const TensorPtr& a, double eps = 1e-5);  // last axis, no affine
TensorPtr relu(const TensorPtr& a);
TensorPtr gelu(const TensorPtr& a);
TensorPtr exp(const TensorPtr& a);
TensorPtr log(const TensorPtr& a);
TensorPtr sqrt(const TensorPtr& a);
TensorPtr abs(const TensorPtr& a);
TensorPtr clamp(const TensorPtr& a, double lo, double hi);

// arccos with the fixed clamping rule: the argument is clamped to
// [-1+1e-7, 1-1e-7] and the derivative is evaluated at the clamped value, so
// gradients stay bounded at perfect alignment.
TensorPtr arccos(const TensorPtr& a);

// Elementwise Huber penalty: r^2/2 inside |r| <= delta, delta*(|r|-delta/2) outside.
TensorPtr huber(const TensorPtr& a, double delta);

TensorPtr cross3(const TensorPtr& a, const TensorPtr& b);  // last axis == 3
TensorPtr l2_normalize(const TensorPtr& a);                // last axis

// Projects a 3x3 (or flat 9) tensor onto SO(3): R = U V^T from the SVD, with
// the last column of U negated when det would be -1. Differentiable; errors on
// rank-deficient input (smallest singular value < 1e-12).
TensorPtr svd_orthogonalize3(const TensorPtr& a);

// Shared multi-head attention over a blocked key sequence. q,k,v are
// (Tq,D)/(Tk,D)/(Tk,D) with D = heads*head_dim. block_starts partitions the
// key axis into contiguous blocks (one per frame per stream); allowed is a
// Tq x nblocks visibility table. Softmax sums are accumulated per block and
// the per-element block partials are combined in value-sorted order, which
// makes the output an order-free function of the block multiset -- permuting
// frames permutes outputs bit-exactly.
TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v, int heads,
                    double scale, std::vector<std::int64_t> block_starts,
                    std::vector<std::uint8_t> allowed);

// y = x + ones(rows,1) @ b(1,cols): row-broadcast bias built from primitive ops
// so gradients reach b.
TensorPtr add_row_bias(const TensorPtr& x, const TensorPtr& b);
// y = x * (ones(rows,1) @ w(1,cols)), the matching row-broadcast scale.
TensorPtr mul_row_vector(const TensorPtr& x, const TensorPtr& w);

}  // namespace geolab::ops
