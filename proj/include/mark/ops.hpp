// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mark/tensor.hpp"

namespace mark {

/// Per-channel running statistics owned by a batch-norm layer.  Stored as
/// 32-bit floats like every other persistent value.
struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;

    BatchNormState() = default;
    explicit BatchNormState(size_t channels)
        : running_mean(channels, 0.0f), running_var(channels, 1.0f) {}

    size_t channels() const { return running_mean.size(); }
};

/// out[n,o] = sum_i in[n,i] * w[i,o] + b[o]
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

/// Valid (unpadded by default) cross-correlation with square kernels.
/// input: N×C×H×W, kernels: F×C×k×k, bias: F.  Output H' = (H+2p−k)/stride + 1.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      int stride = 1, int padding = 0);

/// Elementwise max(x, 0); subgradient at 0 is 0.
Tensor relu(const Tensor& input);

/// Non-overlapping window maximum over the two trailing axes of N×C×H×W.
/// Trailing rows/columns that do not fill a window are truncated.  Gradient
/// routes to the first occurrence of the maximum in row-major window order.
Tensor maxpool2d(const Tensor& input, int window);

/// Batch normalization over the channel axis of N×C×H×W (or N×C) input.
/// Training mode normalizes with batch statistics (eps 1e-5) and folds them
/// into `state` with momentum 0.1 (unbiased variance for the running
/// estimate); eval mode normalizes with the running statistics.
Tensor batchnorm_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                         BatchNormState& state, bool training);

/// Mean over the batch of −log softmax(logits)[label], max-subtracted.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// out[n,c,...] = input[n,c,...] * gates[n,c].  Accepts N×C×H×W or N×C input.
Tensor scale_channels(const Tensor& input, const Tensor& gates);

/// Columns [lo, hi) of an N×K matrix.
Tensor slice_cols(const Tensor& input, size_t lo, size_t hi);

/// Same data, new shape (element count preserved).
Tensor reshape(const Tensor& input, Shape new_shape);

/// N×(everything else), for feeding spatial activations into dense layers.
Tensor flatten2d(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Full reduction to a scalar (64-bit accumulation).
Tensor sum(const Tensor& input);

/// Row-wise argmax of an N×C matrix (first index on ties).  Not recorded.
std::vector<int> argmax_rows(const Tensor& logits);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

} // namespace mark
