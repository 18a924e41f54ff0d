#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "danhar/data.hpp"
#include "danhar/model.hpp"
#include "danhar/tensor.hpp"

namespace danhar {

struct TrainConfig {
    int epochs = 500;
    int batch_size = 0;
    double base_lr = 1e-3;  // zero is allowed and makes every update a no-op
    double decay_factor = 0.1;
    int decay_interval = 50;  // epochs between decays
    uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
};

// Learning rate for a zero-based epoch index under step decay.
double lr_at(int epoch, const TrainConfig& config);

// Per-parameter Adam moments; `step()` applies one bias-corrected update to
// every registered parameter from its accumulated gradient.
class AdamState {
  public:
    AdamState(const std::vector<std::pair<std::string, Tensor>>& params,
              double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    void step(double lr);
    int64_t t() const { return t_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double beta1_, beta2_, epsilon_;
    int64_t t_ = 0;
};

struct Metrics {
    double accuracy = 0.0;
    double loss = 0.0;
    std::vector<double> precision;  // per class; 0 when the class is never predicted
    std::vector<double> recall;     // per class; 0 when the class never occurs
    std::vector<std::vector<int64_t>> confusion;  // rows = truth, cols = prediction
};

struct EpochRecord {
    int epoch = 0;  // zero-based
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    // Deep copies of the checkpointed state (parameters + BN running stats)
    // at the best-validation-accuracy epoch; earliest epoch wins ties.
    std::vector<Tensor> best_state;
    int best_epoch = -1;
    double best_val_acc = 0.0;
};

// Runs the training loop in place on `model`; the model is left at its
// final-epoch state and the best-epoch state is returned for restoration.
TrainResult train(Model& model, const WindowedDataset& train_set,
                  const WindowedDataset& val_set, const TrainConfig& config);

// Copies a saved state snapshot back into the model's registered state tensors.
void restore_state(Model& model, const std::vector<Tensor>& snapshot);

Metrics evaluate(Model& model, const WindowedDataset& dataset, int batch_size = 64);

// History rows as `epoch,lr,train_loss,val_loss,val_acc` CSV text.
std::string history_to_csv(const std::vector<EpochRecord>& history);

}  // namespace danhar
