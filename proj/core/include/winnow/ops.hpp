#pragma once

#include <vector>

#include "winnow/tensor.hpp"

namespace winnow::ops {

/// 2D cross-correlation, bias-free. input [N,C,H,W], weight [F,C,k,k].
/// Output extents follow floor((H + 2*pad - k) / stride) + 1; an extent
/// below 1 is a ConfigError. Gradients are registered for both operands.
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int pad);

/// Affine map. input [N,D], weight [K,D], bias [K] -> [N,K].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

enum class BnMode { kTrain, kEval };

/// Batch normalization over [N,C,H,W] with per-channel affine terms.
/// Train mode normalizes with batch statistics and folds them into the
/// running buffers (EMA, torch convention: unbiased variance in the running
/// estimate, biased in the normalization). Eval mode uses the running stats.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, BnMode mode, float momentum = 0.1f,
                   float eps = 1e-5f);

Tensor relu(const Tensor& input);

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped
/// (floor behavior).
Tensor maxpool2x2(const Tensor& input);

/// [N,C,H,W] -> [N,C], mean over the spatial extent.
Tensor global_avg_pool(const Tensor& input);

/// Elementwise sum of two same-shape tensors (residual join).
Tensor add(const Tensor& a, const Tensor& b);

/// Sum of all elements -> scalar.
Tensor sum(const Tensor& input);

/// Mean over the batch of -log softmax(logits)[label]; max-subtraction keeps
/// the exponentials bounded. labels must lie in [0, M).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace winnow::ops
