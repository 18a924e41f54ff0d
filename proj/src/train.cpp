#include "danhar/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "danhar/errors.hpp"
#include "danhar/ops.hpp"

namespace danhar {

void TrainConfig::validate() const {
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (base_lr < 0.0) throw ConfigError("base_lr must be non-negative");
    if (decay_factor <= 0.0 || decay_factor > 1.0) {
        throw ConfigError("decay_factor must be in (0, 1]");
    }
    if (decay_interval <= 0) throw ConfigError("decay_interval must be positive");
}

double lr_at(int epoch, const TrainConfig& config) {
    if (epoch < 0) throw ConfigError("epoch must be non-negative");
    return config.base_lr * std::pow(config.decay_factor, epoch / config.decay_interval);
}

AdamState::AdamState(const std::vector<std::pair<std::string, Tensor>>& params,
                     double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    params_.reserve(params.size());
    for (const auto& [name, tensor] : params) {
        (void)name;
        params_.push_back(tensor);
        m_.emplace_back(static_cast<size_t>(tensor.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(tensor.numel()), 0.0);
    }
}

void AdamState::step(double lr) {
    ++t_;
    const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t p = 0; p < params_.size(); ++p) {
        Tensor param = params_[p];
        if (!param.has_grad()) continue;
        std::vector<double>& theta = param.values();
        const std::vector<double>& g = param.grad();
        std::vector<double>& m = m_[p];
        std::vector<double>& v = v_[p];
        for (size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon_);
        }
    }
}

namespace {

std::vector<int> batch_labels(const WindowedDataset& set, const std::vector<int64_t>& indices) {
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (int64_t i : indices) labels.push_back(set.labels[static_cast<size_t>(i)]);
    return labels;
}

}  // namespace

TrainResult train(Model& model, const WindowedDataset& train_set,
                  const WindowedDataset& val_set, const TrainConfig& config) {
    config.validate();
    if (train_set.count == 0) throw ConfigError("training set is empty");

    std::vector<int64_t> order(static_cast<size_t>(train_set.count));
    for (int64_t i = 0; i < train_set.count; ++i) order[static_cast<size_t>(i)] = i;
    std::mt19937_64 rng(config.seed);

    AdamState adam(model.parameters());
    TrainResult result;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        if (config.shuffle) shuffle_indices(order, rng);

        double loss_sum = 0.0;
        int num_batches = 0;
        for (size_t first = 0; first < order.size(); first += static_cast<size_t>(config.batch_size)) {
            const size_t last = std::min(order.size(), first + static_cast<size_t>(config.batch_size));
            const std::vector<int64_t> indices(order.begin() + static_cast<int64_t>(first),
                                               order.begin() + static_cast<int64_t>(last));
            Tensor batch = train_set.batch(indices);
            const std::vector<int> labels = batch_labels(train_set, indices);

            Tape tape;
            Tensor loss;
            try {
                TapeScope scope(tape);
                Tensor logits = model.forward(batch, /*train=*/true);
                loss = cross_entropy(logits, labels);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(num_batches) + ": " + e.what());
            }
            const double loss_value = loss.values()[0];
            if (!std::isfinite(loss_value)) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(num_batches) + ": non-finite loss");
            }

            for (const auto& [name, param] : model.parameters()) {
                (void)name;
                Tensor(param).zero_grad();
            }
            tape.backward(loss);
            adam.step(lr);

            loss_sum += loss_value * static_cast<double>(indices.size());
            ++num_batches;
        }

        Metrics val = evaluate(model, val_set, config.batch_size);

        EpochRecord record;
        record.epoch = epoch;
        record.lr = lr;
        record.train_loss = loss_sum / static_cast<double>(train_set.count);
        record.val_loss = val.loss;
        record.val_acc = val.accuracy;
        result.history.push_back(record);

        if (result.best_epoch < 0 || val.accuracy > result.best_val_acc) {
            result.best_epoch = epoch;
            result.best_val_acc = val.accuracy;
            result.best_state.clear();
            for (const auto& [name, tensor] : model.state()) {
                (void)name;
                result.best_state.push_back(tensor.clone());
            }
        }
    }
    return result;
}

void restore_state(Model& model, const std::vector<Tensor>& snapshot) {
    const auto& state = model.state();
    if (snapshot.size() != state.size()) {
        throw ConfigError("state snapshot has " + std::to_string(snapshot.size()) +
                          " tensors, model expects " + std::to_string(state.size()));
    }
    for (size_t i = 0; i < state.size(); ++i) {
        Tensor target = state[i].second;
        if (snapshot[i].numel() != target.numel()) {
            throw ConfigError("state snapshot tensor " + std::to_string(i) + " has " +
                              std::to_string(snapshot[i].numel()) + " values, expected " +
                              std::to_string(target.numel()));
        }
        target.values() = snapshot[i].values();
    }
}

Metrics evaluate(Model& model, const WindowedDataset& dataset, int batch_size) {
    if (dataset.count == 0) throw ConfigError("evaluation set is empty");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    const int K = model.config().num_classes;
    for (int label : dataset.labels) {
        if (label < 0 || label >= K) {
            throw ConfigError("dataset label " + std::to_string(label) +
                              " out of range for a " + std::to_string(K) + "-class model");
        }
    }

    Metrics metrics;
    metrics.confusion.assign(static_cast<size_t>(K), std::vector<int64_t>(static_cast<size_t>(K), 0));
    double loss_sum = 0.0;

    for (int64_t first = 0; first < dataset.count; first += batch_size) {
        const int64_t last = std::min(dataset.count, first + batch_size);
        std::vector<int64_t> indices;
        for (int64_t i = first; i < last; ++i) indices.push_back(i);
        Tensor batch = dataset.batch(indices);
        const std::vector<int> labels = batch_labels(dataset, indices);

        Tensor logits = model.forward(batch, /*train=*/false);
        loss_sum += cross_entropy(logits, labels).values()[0] * static_cast<double>(indices.size());

        const std::vector<double>& rows = logits.values();
        for (size_t n = 0; n < indices.size(); ++n) {
            int pred = 0;
            for (int k = 1; k < K; ++k) {
                if (rows[n * static_cast<size_t>(K) + static_cast<size_t>(k)] >
                    rows[n * static_cast<size_t>(K) + static_cast<size_t>(pred)]) {
                    pred = k;
                }
            }
            ++metrics.confusion[static_cast<size_t>(labels[n])][static_cast<size_t>(pred)];
        }
    }

    int64_t correct = 0;
    std::vector<int64_t> row_sums(static_cast<size_t>(K), 0), col_sums(static_cast<size_t>(K), 0);
    for (int t = 0; t < K; ++t) {
        for (int p = 0; p < K; ++p) {
            const int64_t n = metrics.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)];
            row_sums[static_cast<size_t>(t)] += n;
            col_sums[static_cast<size_t>(p)] += n;
            if (t == p) correct += n;
        }
    }
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.count);
    metrics.loss = loss_sum / static_cast<double>(dataset.count);
    metrics.precision.resize(static_cast<size_t>(K), 0.0);
    metrics.recall.resize(static_cast<size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
        const auto ki = static_cast<size_t>(k);
        const double diag = static_cast<double>(metrics.confusion[ki][ki]);
        if (col_sums[ki] > 0) metrics.precision[ki] = diag / static_cast<double>(col_sums[ki]);
        if (row_sums[ki] > 0) metrics.recall[ki] = diag / static_cast<double>(row_sums[ki]);
    }
    return metrics;
}

namespace {

// Shortest decimal form that round-trips back to the same double.
std::string format_double(double value) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    (void)ec;
    return std::string(buf, end);
}

}  // namespace

std::string history_to_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out << "epoch,lr,train_loss,val_loss,val_acc\n";
    for (const EpochRecord& r : history) {
        out << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train_loss)
            << ',' << format_double(r.val_loss) << ',' << format_double(r.val_acc) << '\n';
    }
    return out.str();
}

}  // namespace danhar
