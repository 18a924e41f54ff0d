#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "danhar/ops.hpp"
#include "danhar/tensor.hpp"

namespace danhar {

enum class AttentionVariant {
    None,
    ChannelOnly,
    TemporalOnly,
    ChannelThenTemporal,
    TemporalThenChannel,
};

AttentionVariant attention_variant_from_string(const std::string& name);
std::string attention_variant_to_string(AttentionVariant variant);

struct AttentionConfig {
    AttentionVariant variant = AttentionVariant::None;
    int reduction = 16;        // channel MLP bottleneck divisor
    int temporal_kernel = 7;   // odd temporal extent of the attention conv

    bool channel_enabled() const {
        return variant == AttentionVariant::ChannelOnly ||
               variant == AttentionVariant::ChannelThenTemporal ||
               variant == AttentionVariant::TemporalThenChannel;
    }
    bool temporal_enabled() const {
        return variant == AttentionVariant::TemporalOnly ||
               variant == AttentionVariant::ChannelThenTemporal ||
               variant == AttentionVariant::TemporalThenChannel;
    }
};

// Bottleneck MLP shared by the avg- and max-pooled branches.
struct ChannelAttentionParams {
    Tensor w1;  // hidden × C
    Tensor b1;  // hidden
    Tensor w2;  // C × hidden
    Tensor b2;  // C
    int reduction = 16;

    int64_t channels() const { return w1.dim(1); }
    int64_t hidden() const { return w1.dim(0); }
};

// Hidden width of the channel MLP: floor(C/r) with a floor of 4.
int64_t channel_attention_hidden(int64_t channels, int reduction);

// Weights drawn fan-in-uniform from rng; biases start at zero so the
// all-zero-input fixture yields sigmoid(0) = 0.5.
ChannelAttentionParams make_channel_attention_params(int64_t channels, int reduction,
                                                     std::mt19937_64& rng);

struct TemporalAttentionParams {
    Tensor kernel;  // 1 × 2 × 1 × kt
    Tensor bias;    // 1

    int64_t temporal_extent() const { return kernel.dim(3); }
};

TemporalAttentionParams make_temporal_attention_params(int temporal_kernel,
                                                       std::mt19937_64& rng);

// Channel and temporal weights captured at an attention site during a
// forward pass, for export and localization analysis.
struct AttentionTrace {
    struct Site {
        std::string layer;
        int64_t batch_index = 0;
        Tensor channel_weights;   // N×C, undefined when channel attention is off
        Tensor temporal_weights;  // N×1×H×W, undefined when temporal attention is off
    };
    std::vector<Site> sites;
};

// W_C = sigmoid(MLP(avgpool) + MLP(maxpool)); every entry in (0,1).
Tensor channel_attention(const Tensor& feature_map, const ChannelAttentionParams& params);

// W_T = sigmoid(conv_{1×kt}([avg-over-C ; max-over-C])) with same padding
// along the temporal axis; every entry in (0,1).
Tensor temporal_attention(const Tensor& feature_map, const TemporalAttentionParams& params);

// Rescales the feature map by the configured attention weights. Composed
// variants recompute the second submodule on the already-rescaled map.
Tensor apply_attention(const Tensor& feature_map, const AttentionConfig& config,
                       const ChannelAttentionParams* channel_params,
                       const TemporalAttentionParams* temporal_params,
                       AttentionTrace* trace = nullptr, const std::string& layer_name = "",
                       int64_t batch_index = 0);

}  // namespace danhar
