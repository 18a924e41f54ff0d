#include "danhar/attention.hpp"

#include <algorithm>
#include <cmath>

namespace danhar {

AttentionVariant attention_variant_from_string(const std::string& name) {
    if (name == "none") return AttentionVariant::None;
    if (name == "channel_only") return AttentionVariant::ChannelOnly;
    if (name == "temporal_only") return AttentionVariant::TemporalOnly;
    if (name == "channel_then_temporal") return AttentionVariant::ChannelThenTemporal;
    if (name == "temporal_then_channel") return AttentionVariant::TemporalThenChannel;
    throw ConfigError("unknown attention variant '" + name + "'");
}

std::string attention_variant_to_string(AttentionVariant variant) {
    switch (variant) {
        case AttentionVariant::None: return "none";
        case AttentionVariant::ChannelOnly: return "channel_only";
        case AttentionVariant::TemporalOnly: return "temporal_only";
        case AttentionVariant::ChannelThenTemporal: return "channel_then_temporal";
        case AttentionVariant::TemporalThenChannel: return "temporal_then_channel";
    }
    throw ConfigError("invalid attention variant value");
}

int64_t channel_attention_hidden(int64_t channels, int reduction) {
    if (reduction < 1) throw ConfigError("reduction ratio must be positive");
    return std::max<int64_t>(channels / reduction, 4);
}

namespace {

Tensor fan_in_uniform(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& v : data) v = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

ChannelAttentionParams make_channel_attention_params(int64_t channels, int reduction,
                                                     std::mt19937_64& rng) {
    const int64_t hidden = channel_attention_hidden(channels, reduction);
    ChannelAttentionParams p;
    p.w1 = fan_in_uniform({hidden, channels}, channels, rng);
    p.b1 = Tensor::zeros({hidden}, true);
    p.w2 = fan_in_uniform({channels, hidden}, hidden, rng);
    p.b2 = Tensor::zeros({channels}, true);
    p.reduction = reduction;
    return p;
}

TemporalAttentionParams make_temporal_attention_params(int temporal_kernel,
                                                       std::mt19937_64& rng) {
    if (temporal_kernel < 1 || temporal_kernel % 2 == 0) {
        throw ConfigError("temporal attention kernel extent must be odd and positive, got " +
                          std::to_string(temporal_kernel));
    }
    TemporalAttentionParams p;
    p.kernel = fan_in_uniform({1, 2, 1, temporal_kernel}, 2 * temporal_kernel, rng);
    p.bias = Tensor::zeros({1}, true);
    return p;
}

Tensor channel_attention(const Tensor& feature_map, const ChannelAttentionParams& params) {
    if (feature_map.shape().size() != 4) {
        throw ShapeError("channel_attention: feature map must be N×C×H×W, got " +
                         shape_to_string(feature_map.shape()));
    }
    const int64_t channels = feature_map.dim(1);
    if (params.channels() != channels || params.w2.dim(0) != channels ||
        params.w2.dim(1) != params.hidden() || params.b1.dim(0) != params.hidden() ||
        params.b2.dim(0) != channels) {
        throw ShapeError("channel_attention: parameters are not sized for " +
                         std::to_string(channels) + " channels");
    }
    auto branch = [&](PoolKind kind) {
        Tensor squeezed = pool_channelwise(feature_map, kind);
        Tensor hidden = relu(dense(squeezed, params.w1, params.b1));
        return dense(hidden, params.w2, params.b2);
    };
    return sigmoid(add(branch(PoolKind::Avg), branch(PoolKind::Max)));
}

Tensor temporal_attention(const Tensor& feature_map, const TemporalAttentionParams& params) {
    if (feature_map.shape().size() != 4) {
        throw ShapeError("temporal_attention: feature map must be N×C×H×W, got " +
                         shape_to_string(feature_map.shape()));
    }
    const int64_t kt = params.temporal_extent();
    if (kt % 2 == 0) throw ConfigError("temporal_attention: kernel extent must be odd");
    Tensor pooled = concat_channels(pool_across_channels(feature_map, PoolKind::Avg),
                                    pool_across_channels(feature_map, PoolKind::Max));
    Tensor pre = conv2d(pooled, params.kernel, params.bias, {1, 1},
                        {0, static_cast<int>((kt - 1) / 2)});
    return sigmoid(pre);
}

Tensor apply_attention(const Tensor& feature_map, const AttentionConfig& config,
                       const ChannelAttentionParams* channel_params,
                       const TemporalAttentionParams* temporal_params, AttentionTrace* trace,
                       const std::string& layer_name, int64_t batch_index) {
    if (config.channel_enabled() && channel_params == nullptr) {
        throw ConfigError("attention variant '" + attention_variant_to_string(config.variant) +
                          "' needs channel parameters");
    }
    if (config.temporal_enabled() && temporal_params == nullptr) {
        throw ConfigError("attention variant '" + attention_variant_to_string(config.variant) +
                          "' needs temporal parameters");
    }

    AttentionTrace::Site site;
    site.layer = layer_name;
    site.batch_index = batch_index;

    auto apply_channel = [&](const Tensor& x) {
        Tensor weights = channel_attention(x, *channel_params);
        if (trace) site.channel_weights = weights.clone();
        const int64_t n = x.dim(0), c = x.dim(1);
        return mul(x, reshape(weights, {n, c, 1, 1}));
    };
    auto apply_temporal = [&](const Tensor& x) {
        Tensor weights = temporal_attention(x, *temporal_params);
        if (trace) site.temporal_weights = weights.clone();
        return mul(x, weights);
    };

    Tensor out = feature_map;
    switch (config.variant) {
        case AttentionVariant::None: break;
        case AttentionVariant::ChannelOnly: out = apply_channel(out); break;
        case AttentionVariant::TemporalOnly: out = apply_temporal(out); break;
        case AttentionVariant::ChannelThenTemporal:
            out = apply_temporal(apply_channel(out));
            break;
        case AttentionVariant::TemporalThenChannel:
            out = apply_channel(apply_temporal(out));
            break;
    }
    if (trace && config.variant != AttentionVariant::None) {
        trace->sites.push_back(std::move(site));
    }
    return out;
}

}  // namespace danhar
