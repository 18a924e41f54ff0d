#pragma once

#include <utility>
#include <vector>

#include "danhar/tensor.hpp"

namespace danhar {

enum class PoolKind { Avg, Max };

// Cross-correlation (no kernel flip). input N×C_in×H×W, weight C_out×C_in×kh×kw,
// optional bias C_out. Output size must be integral or a ConfigError is thrown.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::pair<int, int> stride = {1, 1}, std::pair<int, int> padding = {0, 0});

// Zero-pads the temporal (last) axis by `left`/`right` columns.
Tensor pad_temporal(const Tensor& input, int left, int right);

// Affine map: input N×F_in, weight F_out×F_in, optional bias F_out.
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Per-channel running statistics for batch normalization.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    static BatchNormState init(int64_t channels);
};

// Train mode normalizes N×C×H×W input with batch statistics per channel and,
// when update_stats is set, folds them into the running statistics. Eval mode
// normalizes with the running statistics.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool train, bool update_stats = true);

// Reduces H and W per channel: N×C×H×W -> N×C.
Tensor pool_channelwise(const Tensor& input, PoolKind kind);

// Reduces the channel axis only: N×C×H×W -> N×1×H×W.
Tensor pool_across_channels(const Tensor& input, PoolKind kind);

// Non-overlapping max pool of the given extent along the temporal (W) axis.
Tensor max_pool_temporal(const Tensor& input, int extent);

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);

// Broadcasting binary ops; a size-1 axis stretches to match (shapes are
// right-aligned, missing leading axes count as 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& input, double factor);

// Sum of all elements -> scalar.
Tensor sum(const Tensor& input);

// Copy with a new shape of equal element count.
Tensor reshape(const Tensor& input, Shape shape);

// Concatenates two N×C×H×W tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Mean over the batch of -log softmax(logits)[label]; max-subtracted softmax.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace danhar
