#include "danhar/model.hpp"

#include <cmath>
#include <random>

#include "danhar/container.hpp"

namespace danhar {

Backbone backbone_from_string(const std::string& name) {
    if (name == "plain") return Backbone::Plain;
    if (name == "residual") return Backbone::Residual;
    throw ConfigError("unknown backbone '" + name + "'");
}

std::string backbone_to_string(Backbone backbone) {
    return backbone == Backbone::Plain ? "plain" : "residual";
}

void ModelConfig::validate() const {
    if (channel_plan.empty() || channel_plan.size() % 2 != 0) {
        throw ConfigError("channel plan must hold an even, positive number of conv widths");
    }
    for (int c : channel_plan) {
        if (c < 1) throw ConfigError("channel plan entries must be positive");
    }
    if (conv_kernel < 1) throw ConfigError("conv kernel extent must be positive");
    if (pool_extent < 1) throw ConfigError("pool extent must be positive");
    if (num_classes < 2) throw ConfigError("need at least 2 classes");
    if (sensor_axes < 1 || window_length < 1) {
        throw ConfigError("input dims must be positive");
    }
    int w = window_length;
    for (int b = 0; b < num_blocks(); ++b) w /= pool_extent;
    if (w < 1) {
        throw ConfigError("window length " + std::to_string(window_length) +
                          " is too short for " + std::to_string(num_blocks()) +
                          " poolings of extent " + std::to_string(pool_extent));
    }
    if (attention.reduction < 1) throw ConfigError("reduction ratio must be positive");
    if (attention.temporal_kernel < 1 || attention.temporal_kernel % 2 == 0) {
        throw ConfigError("temporal attention kernel extent must be odd");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"backbone", backbone_to_string(c.backbone)},
                       {"channel_plan", c.channel_plan},
                       {"conv_kernel", c.conv_kernel},
                       {"pool_extent", c.pool_extent},
                       {"num_classes", c.num_classes},
                       {"sensor_axes", c.sensor_axes},
                       {"window_length", c.window_length},
                       {"attention",
                        {{"variant", attention_variant_to_string(c.attention.variant)},
                         {"reduction", c.attention.reduction},
                         {"temporal_kernel", c.attention.temporal_kernel}}},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    c.channel_plan = j.at("channel_plan").get<std::vector<int>>();
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.pool_extent = j.at("pool_extent").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.sensor_axes = j.at("sensor_axes").get<int>();
    c.window_length = j.at("window_length").get<int>();
    const auto& a = j.at("attention");
    c.attention.variant = attention_variant_from_string(a.at("variant").get<std::string>());
    c.attention.reduction = a.at("reduction").get<int>();
    c.attention.temporal_kernel = a.at("temporal_kernel").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
}

namespace {

Tensor fan_in_uniform(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& v : data) v = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

ConvLayer make_conv(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw,
                    std::mt19937_64& rng) {
    ConvLayer layer;
    const int64_t fan_in = in_ch * kh * kw;
    layer.weight = fan_in_uniform({out_ch, in_ch, kh, kw}, fan_in, rng);
    layer.bias = fan_in_uniform({out_ch}, fan_in, rng);
    return layer;
}

BatchNormLayer make_bn(int64_t channels) {
    BatchNormLayer layer;
    layer.gamma = Tensor::full({channels}, 1.0, true);
    layer.beta = Tensor::zeros({channels}, true);
    layer.state = BatchNormState::init(channels);
    return layer;
}

}  // namespace

Model Model::build(const ModelConfig& config) {
    config.validate();
    Model model;
    model.config_ = config;
    std::mt19937_64 rng(config.seed);

    const int64_t k = config.conv_kernel;
    int64_t in_ch = 1;
    for (int b = 0; b < config.num_blocks(); ++b) {
        Block block;
        block.in_channels = static_cast<int>(in_ch);
        block.mid_channels = config.channel_plan[static_cast<size_t>(2 * b)];
        block.out_channels = config.channel_plan[static_cast<size_t>(2 * b + 1)];
        block.conv1 = make_conv(in_ch, block.mid_channels, 1, k, rng);
        block.bn1 = make_bn(block.mid_channels);
        block.conv2 = make_conv(block.mid_channels, block.out_channels, 1, k, rng);
        block.bn2 = make_bn(block.out_channels);
        if (config.backbone == Backbone::Residual && block.in_channels != block.out_channels) {
            ConvLayer proj;
            proj.weight = fan_in_uniform({block.out_channels, in_ch, 1, 1}, in_ch, rng);
            block.skip = std::move(proj);
        }
        if (config.attention.channel_enabled()) {
            block.channel_attn = make_channel_attention_params(
                block.out_channels, config.attention.reduction, rng);
        }
        if (config.attention.temporal_enabled()) {
            block.temporal_attn =
                make_temporal_attention_params(config.attention.temporal_kernel, rng);
        }
        in_ch = block.out_channels;
        model.blocks_.push_back(std::move(block));
    }

    int final_w = config.window_length;
    for (int b = 0; b < config.num_blocks(); ++b) final_w /= config.pool_extent;
    const int64_t flat = in_ch * config.sensor_axes * final_w;
    model.classifier_.weight = fan_in_uniform({config.num_classes, flat}, flat, rng);
    model.classifier_.bias = fan_in_uniform({config.num_classes}, flat, rng);

    model.register_tensors();
    return model;
}

void Model::register_tensors() {
    parameters_.clear();
    state_.clear();
    auto param = [&](const std::string& name, const Tensor& t) {
        parameters_.emplace_back(name, t);
        state_.emplace_back(name, t);
    };
    auto buffer = [&](const std::string& name, const Tensor& t) {
        state_.emplace_back(name, t);
    };
    for (size_t b = 0; b < blocks_.size(); ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        Block& block = blocks_[b];
        param(pre + "conv1.weight", block.conv1.weight);
        param(pre + "conv1.bias", block.conv1.bias);
        param(pre + "bn1.gamma", block.bn1.gamma);
        param(pre + "bn1.beta", block.bn1.beta);
        buffer(pre + "bn1.running_mean", block.bn1.state.running_mean);
        buffer(pre + "bn1.running_var", block.bn1.state.running_var);
        param(pre + "conv2.weight", block.conv2.weight);
        param(pre + "conv2.bias", block.conv2.bias);
        param(pre + "bn2.gamma", block.bn2.gamma);
        param(pre + "bn2.beta", block.bn2.beta);
        buffer(pre + "bn2.running_mean", block.bn2.state.running_mean);
        buffer(pre + "bn2.running_var", block.bn2.state.running_var);
        if (block.skip) param(pre + "skip.weight", block.skip->weight);
        if (block.channel_attn) {
            param(pre + "attention.channel.w1", block.channel_attn->w1);
            param(pre + "attention.channel.b1", block.channel_attn->b1);
            param(pre + "attention.channel.w2", block.channel_attn->w2);
            param(pre + "attention.channel.b2", block.channel_attn->b2);
        }
        if (block.temporal_attn) {
            param(pre + "attention.temporal.kernel", block.temporal_attn->kernel);
            param(pre + "attention.temporal.bias", block.temporal_attn->bias);
        }
    }
    param("classifier.weight", classifier_.weight);
    param("classifier.bias", classifier_.bias);
}

Tensor Model::block_forward(int block_index, const Tensor& input, bool train,
                            AttentionTrace* trace, int64_t batch_index) {
    Block& block = blocks_[static_cast<size_t>(block_index)];
    const int k = config_.conv_kernel;
    const int left = (k - 1) / 2, right = k - 1 - left;
    auto same_conv = [&](const Tensor& x, const ConvLayer& conv) {
        return conv2d(pad_temporal(x, left, right), conv.weight, conv.bias);
    };
    Tensor h = same_conv(input, block.conv1);
    h = relu(batchnorm(h, block.bn1.gamma, block.bn1.beta, block.bn1.state, train));
    h = same_conv(h, block.conv2);
    h = batchnorm(h, block.bn2.gamma, block.bn2.beta, block.bn2.state, train);
    if (config_.backbone == Backbone::Residual) {
        Tensor shortcut = block.skip ? conv2d(input, block.skip->weight, Tensor{}) : input;
        h = add(h, shortcut);
    }
    h = relu(h);
    h = apply_attention(h, config_.attention,
                        block.channel_attn ? &*block.channel_attn : nullptr,
                        block.temporal_attn ? &*block.temporal_attn : nullptr, trace,
                        "block" + std::to_string(block_index), batch_index);
    return max_pool_temporal(h, config_.pool_extent);
}

Tensor Model::forward(const Tensor& batch, bool train, AttentionTrace* trace,
                      int64_t batch_index) {
    if (batch.shape().size() != 4 || batch.dim(1) != 1 ||
        batch.dim(2) != config_.sensor_axes || batch.dim(3) != config_.window_length) {
        throw ShapeError("forward: batch shape " + shape_to_string(batch.shape()) +
                         " does not match configured input 1x" +
                         std::to_string(config_.sensor_axes) + "x" +
                         std::to_string(config_.window_length));
    }
    Tensor h = batch;
    for (int b = 0; b < config_.num_blocks(); ++b) {
        try {
            h = block_forward(b, h, train, trace, batch_index);
        } catch (const NumericError& e) {
            throw NumericError("block " + std::to_string(b) + ": " + e.what());
        }
    }
    const int64_t n = h.dim(0);
    Tensor flat = reshape(h, {n, h.numel() / n});
    return dense(flat, classifier_.weight, classifier_.bias);
}

int64_t Model::parameter_count() const {
    int64_t total = 0;
    for (const auto& [name, t] : parameters_) total += t.numel();
    return total;
}

int64_t Model::attention_parameter_count() const {
    int64_t total = 0;
    for (const auto& [name, t] : parameters_) {
        if (name.find(".attention.") != std::string::npos) total += t.numel();
    }
    return total;
}

void Model::save(const std::string& path) const {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["config"] = config_;
    std::vector<ContainerBlob> blobs;
    blobs.reserve(state_.size());
    for (const auto& [name, t] : state_) {
        blobs.push_back({name, t.shape(), t.values()});
    }
    write_container(path, kCheckpointMagic, std::move(header), blobs);
}

Model Model::load(const std::string& path) {
    Container c = read_container(path, kCheckpointMagic);
    if (!c.header.contains("format_version") ||
        c.header["format_version"].get<int>() != kCheckpointVersion) {
        throw IoError("'" + path + "' has an unsupported checkpoint version");
    }
    ModelConfig config;
    try {
        config = c.header.at("config").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("'" + path + "' has a malformed model config: " + e.what());
    }
    Model model = build(config);
    if (c.blobs.size() != model.state_.size()) {
        throw IoError("'" + path + "' manifest mismatch: expected " +
                      std::to_string(model.state_.size()) + " tensors, found " +
                      std::to_string(c.blobs.size()));
    }
    for (size_t i = 0; i < c.blobs.size(); ++i) {
        auto& [name, tensor] = model.state_[i];
        const ContainerBlob& blob = c.blobs[i];
        if (blob.name != name || blob.shape != tensor.shape()) {
            throw IoError("'" + path + "' manifest mismatch at '" + blob.name + "': expected " +
                          name + " " + shape_to_string(tensor.shape()) + ", found " +
                          shape_to_string(blob.shape));
        }
        tensor.values() = blob.data;
    }
    return model;
}

}  // namespace danhar
