#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "danhar/data.hpp"
#include "danhar/model.hpp"
#include "danhar/ops.hpp"
#include "danhar/train.hpp"

using namespace danhar;

namespace {

TrainConfig quick_config(int epochs, int batch_size, double lr, uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.base_lr = lr;
    cfg.seed = seed;
    return cfg;
}

ModelConfig tiny_model_config(const WindowedDataset& ds, int num_classes,
                              AttentionVariant variant) {
    ModelConfig cfg;
    cfg.channel_plan = {4, 4};
    cfg.num_classes = num_classes;
    cfg.sensor_axes = ds.sensor_axes;
    cfg.window_length = static_cast<int>(ds.window_length);
    cfg.attention.variant = variant;
    cfg.attention.reduction = 2;
    cfg.attention.temporal_kernel = 3;
    cfg.seed = 7;
    return cfg;
}

WindowedDataset tiny_dataset(uint64_t seed, int num_classes, int per_class) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.num_classes = num_classes;
    cfg.windows_per_class = per_class;
    cfg.sensor_axes = 2;
    cfg.window_length = 16;
    return synth_generate(cfg);
}

}  // namespace

TEST_CASE("step decay schedule") {
    TrainConfig cfg = quick_config(500, 32, 0.001, 0);
    CHECK(lr_at(0, cfg) == doctest::Approx(0.001));
    CHECK(lr_at(49, cfg) == doctest::Approx(0.001));
    CHECK(lr_at(50, cfg) == doctest::Approx(0.0001));
    CHECK(lr_at(100, cfg) == doctest::Approx(1e-5));

    cfg.decay_factor = 1.0;
    CHECK(lr_at(400, cfg) == doctest::Approx(0.001));
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(quick_config(0, 32, 0.001, 0).validate(), ConfigError);
    CHECK_THROWS_AS(quick_config(10, 0, 0.001, 0).validate(), ConfigError);
    CHECK_THROWS_AS(quick_config(10, 32, -0.001, 0).validate(), ConfigError);
    TrainConfig bad = quick_config(10, 32, 0.001, 0);
    bad.decay_factor = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.decay_factor = 0.1;
    bad.decay_interval = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adam hand-checked updates") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Tensor theta = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
        theta.zero_grad();
        AdamState adam({{"theta", theta}});
        adam.step(0.001);
        CHECK(theta.values() == std::vector<double>{1.0, -2.0, 0.5});
    }

    SUBCASE("first step with g=1 moves by about -lr") {
        // m̂ = 1, v̂ = 1 → Δθ = −lr·1/(1+ε)
        Tensor theta = Tensor::scalar(0.0, true);
        theta.grad()[0] = 1.0;
        AdamState adam({{"theta", theta}});
        adam.step(0.001);
        CHECK(theta.values()[0] == doctest::Approx(-0.001).epsilon(1e-6));

        // constant gradient: bias corrections cancel, second step repeats
        adam.step(0.001);
        CHECK(theta.values()[0] == doctest::Approx(-0.002).epsilon(1e-6));
    }

    SUBCASE("update magnitude is insensitive to gradient scale") {
        for (double c : {0.1, 1.0, 10.0}) {
            Tensor theta = Tensor::scalar(0.0, true);
            theta.grad()[0] = c;
            AdamState adam({{"theta", theta}});
            adam.step(0.001);
            const double step = std::fabs(theta.values()[0]);
            CHECK(step >= 0.9 * 0.001);
            CHECK(step <= 0.001);
        }
    }
}

TEST_CASE("adam drives a quadratic to its optimum through the engine") {
    Tensor theta = Tensor::scalar(0.0, true);
    AdamState adam({{"theta", theta}});
    int steps = 0;
    for (; steps < 2000; ++steps) {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            Tensor diff = add(theta, Tensor::scalar(-3.0));
            loss = mul(diff, diff);
        }
        theta.zero_grad();
        tape.backward(loss);
        adam.step(0.01);
        if (std::fabs(theta.values()[0] - 3.0) < 1e-3) break;
    }
    CHECK(std::fabs(theta.values()[0] - 3.0) < 1e-3);
    CHECK(steps < 2000);
}

TEST_CASE("training loop") {
    WindowedDataset full = tiny_dataset(21, 2, 20);
    SplitPolicy policy;
    policy.fraction = 0.7;
    policy.seed = 3;
    auto [train_set, val_set] = split(full, policy);
    normalize(train_set, val_set);

    SUBCASE("zero learning rate leaves every parameter bit-identical") {
        Model model = Model::build(tiny_model_config(train_set, 2, AttentionVariant::None));
        std::vector<std::vector<double>> before;
        for (const auto& [name, t] : model.parameters()) before.push_back(t.values());
        TrainConfig cfg = quick_config(1, 8, 0.0, 5);
        train(model, train_set, val_set, cfg);
        size_t i = 0;
        for (const auto& [name, t] : model.parameters()) CHECK(t.values() == before[i++]);
    }

    SUBCASE("same seed and config reproduce the loss history exactly") {
        TrainConfig cfg = quick_config(3, 8, 1e-3, 5);
        Model a = Model::build(tiny_model_config(train_set, 2, AttentionVariant::ChannelThenTemporal));
        Model b = Model::build(tiny_model_config(train_set, 2, AttentionVariant::ChannelThenTemporal));
        TrainResult ra = train(a, train_set, val_set, cfg);
        TrainResult rb = train(b, train_set, val_set, cfg);
        CHECK(history_to_csv(ra.history) == history_to_csv(rb.history));

        // a different shuffle seed makes a different history
        cfg.seed = 6;
        Model c = Model::build(tiny_model_config(train_set, 2, AttentionVariant::ChannelThenTemporal));
        TrainResult rc = train(c, train_set, val_set, cfg);
        CHECK(history_to_csv(rc.history) != history_to_csv(ra.history));
    }

    SUBCASE("best checkpoint restores the best validation accuracy") {
        TrainConfig cfg = quick_config(5, 8, 1e-3, 5);
        Model model = Model::build(tiny_model_config(train_set, 2, AttentionVariant::None));
        TrainResult result = train(model, train_set, val_set, cfg);
        REQUIRE(result.history.size() == 5);
        double best = 0.0;
        int best_epoch = -1;
        for (const EpochRecord& r : result.history) {
            if (best_epoch < 0 || r.val_acc > best) {
                best = r.val_acc;
                best_epoch = r.epoch;
            }
        }
        CHECK(result.best_val_acc == doctest::Approx(best));
        CHECK(result.best_epoch == best_epoch);
        restore_state(model, result.best_state);
        Metrics m = evaluate(model, val_set);
        CHECK(m.accuracy == doctest::Approx(result.best_val_acc));
    }

    SUBCASE("non-finite input aborts with epoch and batch context") {
        WindowedDataset poisoned = train_set;
        poisoned.windows[0] = std::numeric_limits<double>::infinity();
        Model model = Model::build(tiny_model_config(train_set, 2, AttentionVariant::None));
        TrainConfig cfg = quick_config(1, static_cast<int>(poisoned.count), 1e-3, 5);
        cfg.shuffle = false;
        try {
            train(model, poisoned, val_set, cfg);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
            CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
        }
    }

    SUBCASE("empty training set is rejected") {
        WindowedDataset empty;
        empty.sensor_axes = train_set.sensor_axes;
        empty.window_length = train_set.window_length;
        Model model = Model::build(tiny_model_config(train_set, 2, AttentionVariant::None));
        CHECK_THROWS_AS(train(model, empty, val_set, quick_config(1, 8, 1e-3, 5)), ConfigError);
    }
}

TEST_CASE("evaluation metrics") {
    WindowedDataset ds = tiny_dataset(31, 4, 10);

    SUBCASE("zeroed classifier predicts class 0 everywhere (ties break low)") {
        Model model = Model::build(tiny_model_config(ds, 4, AttentionVariant::None));
        // silence the classifier so every logit row is uniform
        for (const auto& [name, t] : model.parameters()) {
            if (name.find("classifier") != std::string::npos) {
                Tensor handle = t;
                std::fill(handle.values().begin(), handle.values().end(), 0.0);
            }
        }
        Metrics m = evaluate(model, ds);
        CHECK(m.accuracy == doctest::Approx(0.25));
        int64_t first_col = 0, total = 0;
        for (int t = 0; t < 4; ++t) {
            first_col += m.confusion[static_cast<size_t>(t)][0];
            for (int p = 0; p < 4; ++p) total += m.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)];
        }
        CHECK(first_col == ds.count);
        CHECK(total == ds.count);
        CHECK(m.loss == doctest::Approx(std::log(4.0)));
        CHECK(m.recall[0] == doctest::Approx(1.0));
        CHECK(m.precision[0] == doctest::Approx(0.25));
        CHECK(m.precision[1] == doctest::Approx(0.0));
    }

    SUBCASE("confusion row sums equal true class counts; errors equal off-diagonal sum") {
        Model model = Model::build(tiny_model_config(ds, 4, AttentionVariant::TemporalThenChannel));
        Metrics m = evaluate(model, ds);
        int64_t diag = 0, total = 0;
        for (int t = 0; t < 4; ++t) {
            int64_t row = 0;
            for (int p = 0; p < 4; ++p) {
                row += m.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)];
                if (t == p) diag += m.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)];
            }
            CHECK(row == 10);  // balanced generator: 10 windows per class
            total += row;
        }
        CHECK(total == ds.count);
        CHECK(m.accuracy == doctest::Approx(static_cast<double>(diag) / static_cast<double>(ds.count)));
        const double errors = static_cast<double>(total - diag);
        CHECK(errors == doctest::Approx(static_cast<double>(ds.count) * (1.0 - m.accuracy)));
    }

    SUBCASE("label outside the model's class range is rejected") {
        Model model = Model::build(tiny_model_config(ds, 3, AttentionVariant::None));
        CHECK_THROWS_AS(evaluate(model, ds), ConfigError);
    }
}

TEST_CASE("history csv layout") {
    std::vector<EpochRecord> history{{0, 0.001, 1.5, 1.4, 0.5}};
    const std::string csv = history_to_csv(history);
    CHECK(csv.rfind("epoch,lr,train_loss,val_loss,val_acc\n", 0) == 0);
    CHECK(csv.find("0,0.001,1.5,1.4,0.5\n") != std::string::npos);
}
