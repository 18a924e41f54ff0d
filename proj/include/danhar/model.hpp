#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "danhar/attention.hpp"
#include "danhar/ops.hpp"
#include "danhar/tensor.hpp"

namespace danhar {

enum class Backbone { Plain, Residual };

Backbone backbone_from_string(const std::string& name);
std::string backbone_to_string(Backbone backbone);

struct ModelConfig {
    Backbone backbone = Backbone::Residual;
    std::vector<int> channel_plan = {128, 128, 256, 256, 384, 384};
    int conv_kernel = 6;     // temporal extent of backbone convs (sensor extent is 1)
    int pool_extent = 2;     // temporal max-pool after each block
    int num_classes = 0;
    int sensor_axes = 0;     // H
    int window_length = 0;   // W
    AttentionConfig attention;
    uint64_t seed = 0;

    int num_blocks() const { return static_cast<int>(channel_plan.size()) / 2; }
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ConvLayer {
    Tensor weight;
    Tensor bias;
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    BatchNormState state;
};

// Two same-kernel conv layers with batch norm, an optional identity/projection
// skip, per-block attention, then a temporal max pool.
struct Block {
    ConvLayer conv1, conv2;
    BatchNormLayer bn1, bn2;
    std::optional<ConvLayer> skip;  // 1×1 projection when widths change
    std::optional<ChannelAttentionParams> channel_attn;
    std::optional<TemporalAttentionParams> temporal_attn;
    int in_channels = 0, mid_channels = 0, out_channels = 0;
};

class Model {
  public:
    static Model build(const ModelConfig& config);

    Tensor forward(const Tensor& batch, bool train, AttentionTrace* trace = nullptr,
                   int64_t batch_index = 0);

    // Runs a single block (conv/bn/relu, skip, attention, pool); exposed for
    // block-level tests.
    Tensor block_forward(int block_index, const Tensor& input, bool train,
                         AttentionTrace* trace = nullptr, int64_t batch_index = 0);

    const ModelConfig& config() const { return config_; }
    std::vector<Block>& blocks() { return blocks_; }

    // Trainable tensors, each under a unique name, in deterministic order.
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return parameters_; }
    // Parameters plus batch-norm running statistics (the checkpointed state).
    const std::vector<std::pair<std::string, Tensor>>& state() const { return state_; }

    int64_t parameter_count() const;
    int64_t attention_parameter_count() const;

    void save(const std::string& path) const;
    static Model load(const std::string& path);

  private:
    ModelConfig config_;
    std::vector<Block> blocks_;
    ConvLayer classifier_;
    std::vector<std::pair<std::string, Tensor>> parameters_;
    std::vector<std::pair<std::string, Tensor>> state_;

    void register_tensors();
};

inline constexpr const char* kCheckpointMagic = "DANHAR01";
inline constexpr int kCheckpointVersion = 1;

}  // namespace danhar
