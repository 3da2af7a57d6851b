#pragma once

#include <span>
#include <vector>

#include "lantern/rng.hpp"
#include "lantern/tape.hpp"
#include "lantern/tensor.hpp"

namespace lantern::ad {

// Elementwise binary ops. `b` must either match `a`'s shape or broadcast
// against it: shapes are right-aligned, missing or size-1 leading axes of
// `b` stretch. The output always has `a`'s shape.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& x, double c);

// Elementwise unary.
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
// log(max(x, floor)); gradient is zero on the clamped branch.
Tensor clamped_log(Tape& tape, const Tensor& x, double floor);

// Matrix product over rank-2 or rank-3 operands. Rank-3 inputs are batched
// with equal batch extents; a rank-2 operand is shared across the batch.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// Softmax over the last axis, stabilized by max subtraction.
Tensor softmax(Tape& tape, const Tensor& x);

// Normalizes each last-axis row to zero mean / unit population variance,
// then applies gamma * xhat + beta. gamma and beta are shaped to the last
// axis.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Stochastic regularizers. Identity when training is false. Dropout uses
// inverted scaling (kept units divided by 1-rate). Both consume the rng in
// a fixed order so runs are reproducible from the seed.
Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng& rng);
Tensor gaussian_noise(Tape& tape, const Tensor& x, double sigma, bool training, Rng& rng);

// Shape ops.
Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape);
Tensor transpose_last2(Tape& tape, const Tensor& x);
Tensor slice_last(Tape& tape, const Tensor& x, std::int64_t offset, std::int64_t length);
Tensor concat_last(Tape& tape, std::span<const Tensor> parts);

// Reduction to a scalar of shape [1].
Tensor sum_all(Tape& tape, const Tensor& x);

}  // namespace lantern::ad
