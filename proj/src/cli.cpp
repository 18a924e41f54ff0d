#include "danhar/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "danhar/errors.hpp"

namespace danhar::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double value) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    (void)ec;
    return std::string(buf, end);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path + "'");
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

EmbedMode embed_mode_from_string(const std::string& name) {
    if (name == "full") return EmbedMode::Full;
    if (name == "segment") return EmbedMode::Segment;
    throw ConfigError("unknown embed mode '" + name + "' (expected full or segment)");
}

std::string embed_mode_to_string(EmbedMode mode) {
    return mode == EmbedMode::Full ? "full" : "segment";
}

SynthConfig synth_from_json(const json& j, SynthConfig base = {}) {
    base.seed = j.value("seed", base.seed);
    base.num_classes = j.value("num_classes", base.num_classes);
    base.windows_per_class = j.value("windows_per_class", base.windows_per_class);
    base.sensor_axes = j.value("sensor_axes", base.sensor_axes);
    base.window_length = j.value("window_length", base.window_length);
    base.noise_sigma = j.value("noise_sigma", base.noise_sigma);
    if (j.contains("embed_mode")) {
        base.embed_mode = embed_mode_from_string(j.at("embed_mode").get<std::string>());
    }
    return base;
}

json synth_to_json(const SynthConfig& c) {
    return json{{"seed", c.seed},
                {"num_classes", c.num_classes},
                {"windows_per_class", c.windows_per_class},
                {"sensor_axes", c.sensor_axes},
                {"window_length", c.window_length},
                {"embed_mode", embed_mode_to_string(c.embed_mode)},
                {"noise_sigma", c.noise_sigma}};
}

json split_to_json(const SplitPolicy& p) {
    json j{{"kind", p.kind == SplitPolicy::Kind::Random ? "random" : "by_subject"},
           {"fraction", p.fraction},
           {"seed", p.seed}};
    j["test_subjects"] = std::vector<std::string>(p.test_subjects.begin(), p.test_subjects.end());
    return j;
}

SplitPolicy split_from_json(const json& j, SplitPolicy base) {
    if (j.contains("kind")) {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "random") {
            base.kind = SplitPolicy::Kind::Random;
        } else if (kind == "by_subject") {
            base.kind = SplitPolicy::Kind::BySubject;
        } else {
            throw ConfigError("unknown split kind '" + kind + "'");
        }
    }
    base.fraction = j.value("fraction", base.fraction);
    base.seed = j.value("seed", base.seed);
    if (j.contains("test_subjects")) {
        const auto subjects = j.at("test_subjects").get<std::vector<std::string>>();
        base.test_subjects = {subjects.begin(), subjects.end()};
    }
    return base;
}

json train_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},       {"batch_size", c.batch_size},
                {"base_lr", c.base_lr},     {"decay_factor", c.decay_factor},
                {"decay_interval", c.decay_interval}, {"seed", c.seed},
                {"shuffle", c.shuffle}};
}

TrainConfig train_from_json(const json& j, TrainConfig base) {
    base.epochs = j.value("epochs", base.epochs);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.base_lr = j.value("base_lr", base.base_lr);
    base.decay_factor = j.value("decay_factor", base.decay_factor);
    base.decay_interval = j.value("decay_interval", base.decay_interval);
    base.seed = j.value("seed", base.seed);
    base.shuffle = j.value("shuffle", base.shuffle);
    return base;
}

json metrics_to_json(const Metrics& m) {
    return json{{"accuracy", m.accuracy},
                {"loss", m.loss},
                {"precision", m.precision},
                {"recall", m.recall},
                {"confusion", m.confusion}};
}

// Loads the configured data source, splits, normalizes, and fills the
// data-dependent model dimensions.
std::pair<WindowedDataset, WindowedDataset> load_and_split(RunConfig& config) {
    WindowedDataset full;
    if (config.synthetic) {
        full = synth_generate(*config.synthetic);
    } else {
        full = load_archive(config.archive);
    }
    if (full.count == 0) throw ConfigError("data source produced no windows");
    auto [train_set, val_set] = split(full, config.split_policy);
    normalize(train_set, val_set);
    config.model.num_classes = static_cast<int>(full.class_names.size());
    config.model.sensor_axes = full.sensor_axes;
    config.model.window_length = static_cast<int>(full.window_length);
    return {std::move(train_set), std::move(val_set)};
}

struct RunArtifacts {
    Model model;  // final-epoch state
    TrainResult result;
    Metrics final_metrics;
    Metrics best_metrics;
};

RunArtifacts run_training(RunConfig& config, const WindowedDataset& train_set,
                          const WindowedDataset& val_set) {
    config.model.validate();
    config.train.validate();
    Model model = Model::build(config.model);
    TrainResult result = train(model, train_set, val_set, config.train);
    Metrics final_metrics = evaluate(model, val_set, config.train.batch_size);
    RunArtifacts artifacts{std::move(model), std::move(result), std::move(final_metrics), {}};
    return artifacts;
}

std::string ablation_csv_row(const std::string& variant, int64_t params,
                             const std::string& final_acc, const std::string& best_acc) {
    return variant + "," + std::to_string(params) + "," + final_acc + "," + best_acc + "\n";
}

}  // namespace

json RunConfig::to_json() const {
    json j;
    if (synthetic) {
        j["data"]["synthetic"] = synth_to_json(*synthetic);
    } else {
        j["data"]["archive"] = archive;
    }
    j["split"] = split_to_json(split_policy);
    danhar::to_json(j["model"], model);
    j["train"] = train_to_json(train);
    j["out"] = out_dir;
    j["ablate"]["seeds"] = ablation_seeds;
    return j;
}

RunConfig load_run_config(const std::string& config_path, const Overrides& overrides) {
    const json j = read_json(config_path);
    RunConfig config;

    // preset defaults sit below everything in the config file
    if (j.contains("preset")) {
        const DatasetPreset preset = dataset_preset(j.at("preset").get<std::string>());
        config.train.batch_size = preset.batch_size;
        config.train.base_lr = preset.base_lr;
        config.split_policy.kind = preset.split_policy == "by_subject"
                                       ? SplitPolicy::Kind::BySubject
                                       : SplitPolicy::Kind::Random;
        config.split_policy.fraction = preset.train_fraction;
        config.split_policy.test_subjects = preset.test_subjects;
    }

    if (!j.contains("data")) throw ConfigError(config_path + ": missing 'data' section");
    const json& data = j.at("data");
    const bool has_archive = data.contains("archive");
    const bool has_synth = data.contains("synthetic");
    if (has_archive == has_synth) {
        throw ConfigError(config_path + ": 'data' needs exactly one of 'archive' or 'synthetic'");
    }
    if (has_archive) {
        config.archive = data.at("archive").get<std::string>();
    } else {
        config.synthetic = synth_from_json(data.at("synthetic"));
    }

    if (j.contains("split")) config.split_policy = split_from_json(j.at("split"), config.split_policy);
    if (j.contains("model")) {
        // merge the user's partial model section onto the defaults
        json merged;
        danhar::to_json(merged, config.model);
        merged.merge_patch(j.at("model"));
        danhar::from_json(merged, config.model);
    }
    if (j.contains("train")) config.train = train_from_json(j.at("train"), config.train);
    if (j.contains("out")) config.out_dir = j.at("out").get<std::string>();
    if (j.contains("ablate") && j.at("ablate").contains("seeds")) {
        config.ablation_seeds = j.at("ablate").at("seeds").get<std::vector<uint64_t>>();
    }

    // command-line overrides outrank the config file
    if (overrides.seed) {
        config.model.seed = *overrides.seed;
        config.train.seed = *overrides.seed;
        config.split_policy.seed = *overrides.seed;
        if (config.synthetic) config.synthetic->seed = *overrides.seed;
    }
    if (overrides.out) config.out_dir = *overrides.out;
    if (overrides.attention) {
        config.model.attention.variant = attention_variant_from_string(*overrides.attention);
    }
    if (overrides.epochs) config.train.epochs = *overrides.epochs;

    if (config.out_dir.empty()) throw ConfigError(config_path + ": no output directory configured");
    if (config.train.batch_size <= 0) {
        throw ConfigError(config_path + ": no batch size configured (set train.batch_size or a preset)");
    }
    config.train.validate();
    return config;
}

json cmd_prepare(const PrepareOptions& options) {
    if (options.out.empty()) throw ConfigError("prepare requires an output path");
    if (options.synthetic == !options.input_csv.empty()) {
        throw ConfigError("prepare needs exactly one of an input CSV or --synthetic");
    }

    WindowedDataset dataset;
    if (options.synthetic) {
        dataset = synth_generate(options.synth);
    } else {
        int width = options.width, step = options.step;
        if (!options.preset.empty()) {
            const DatasetPreset preset = dataset_preset(options.preset);
            if (width == 0) width = preset.width;
            if (step == 0) step = preset.step;
        }
        if (width <= 0 || step <= 0) {
            throw ConfigError("prepare requires a preset or explicit --width/--step");
        }
        SeriesSet set = load_csv(options.input_csv);
        dataset = sliding_windows(set, width, step, LabelPolicy::Majority);
    }

    save_archive(dataset, options.out);

    std::vector<int64_t> histogram(dataset.class_names.size(), 0);
    for (int label : dataset.labels) ++histogram[static_cast<size_t>(label)];
    json summary{{"num_windows", dataset.count},
                 {"class_histogram", histogram},
                 {"class_names", dataset.class_names},
                 {"dims", {{"sensor_axes", dataset.sensor_axes},
                           {"window_length", dataset.window_length}}}};
    write_text(options.out + ".json", summary.dump(2) + "\n");
    return summary;
}

void cmd_train(RunConfig config) {
    auto [train_set, val_set] = load_and_split(config);
    config.model.validate();
    config.train.validate();

    fs::create_directories(config.out_dir);
    write_text(config.out_dir + "/config.json", config.to_json().dump(2) + "\n");

    RunArtifacts run = run_training(config, train_set, val_set);
    write_text(config.out_dir + "/history.csv", history_to_csv(run.result.history));
    run.model.save(config.out_dir + "/final.ckpt");

    restore_state(run.model, run.result.best_state);
    run.best_metrics = evaluate(run.model, val_set, config.train.batch_size);
    run.model.save(config.out_dir + "/best.ckpt");

    json metrics{{"final", metrics_to_json(run.final_metrics)},
                 {"best", metrics_to_json(run.best_metrics)},
                 {"best_epoch", run.result.best_epoch},
                 {"parameter_count", run.model.parameter_count()},
                 {"attention_parameter_count", run.model.attention_parameter_count()}};
    write_text(config.out_dir + "/metrics.json", metrics.dump(2) + "\n");
}

void cmd_ablate(RunConfig config) {
    static const AttentionVariant kVariants[] = {
        AttentionVariant::None, AttentionVariant::ChannelOnly, AttentionVariant::TemporalOnly,
        AttentionVariant::ChannelThenTemporal, AttentionVariant::TemporalThenChannel};

    auto [train_set, val_set] = load_and_split(config);
    fs::create_directories(config.out_dir);
    write_text(config.out_dir + "/config.json", config.to_json().dump(2) + "\n");

    std::string csv = "variant,params,final_acc,best_acc\n";
    for (AttentionVariant variant : kVariants) {
        const std::string name = attention_variant_to_string(variant);
        double final_sum = 0.0, best_sum = 0.0;
        int successes = 0;
        int64_t params = 0;
        std::string rows;
        for (uint64_t seed : config.ablation_seeds) {
            RunConfig variant_config = config;
            variant_config.model.attention.variant = variant;
            variant_config.model.seed = seed;
            variant_config.train.seed = seed;
            try {
                RunArtifacts run = run_training(variant_config, train_set, val_set);
                params = run.model.parameter_count();
                final_sum += run.final_metrics.accuracy;
                best_sum += run.result.best_val_acc;
                ++successes;
                rows += ablation_csv_row(name, params, format_double(run.final_metrics.accuracy),
                                         format_double(run.result.best_val_acc));
            } catch (const std::exception& e) {
                std::cerr << "warning: " << name << " seed " << seed << " failed: " << e.what()
                          << "\n";
                rows += ablation_csv_row(name, params, "failed", "failed");
            }
        }
        csv += rows;
        if (successes > 0) {
            csv += ablation_csv_row(name + "/mean", params, format_double(final_sum / successes),
                                    format_double(best_sum / successes));
        } else {
            csv += ablation_csv_row(name + "/mean", params, "failed", "failed");
        }
    }
    write_text(config.out_dir + "/ablation.csv", csv);
}

json cmd_evaluate(const std::string& checkpoint, const std::string& archive,
                  const std::string& out_path) {
    Model model = Model::load(checkpoint);
    WindowedDataset dataset = load_archive(archive);
    Metrics metrics = evaluate(model, dataset);
    json j = metrics_to_json(metrics);
    if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
    return j;
}

void cmd_export_attention(const std::string& checkpoint, const std::string& archive,
                          const std::vector<int64_t>& indices, const std::string& out_dir) {
    Model model = Model::load(checkpoint);
    WindowedDataset dataset = load_archive(archive);
    fs::create_directories(out_dir);

    for (int64_t index : indices) {
        if (index < 0 || index >= dataset.count) {
            throw ConfigError("window index " + std::to_string(index) + " out of range [0, " +
                              std::to_string(dataset.count) + ")");
        }
        Tensor batch = dataset.batch({index});
        AttentionTrace trace;
        model.forward(batch, /*train=*/false, &trace, index);

        std::string channel_csv = "layer,channel,weight\n";
        std::string temporal_csv = "layer,h,w,weight\n";
        for (const AttentionTrace::Site& site : trace.sites) {
            if (site.channel_weights.defined()) {
                const std::vector<double>& w = site.channel_weights.values();
                for (size_t c = 0; c < w.size(); ++c) {
                    channel_csv += site.layer + "," + std::to_string(c) + "," +
                                   format_double(w[c]) + "\n";
                }
            }
            if (site.temporal_weights.defined()) {
                const Tensor& t = site.temporal_weights;
                const int64_t H = t.dim(2), W = t.dim(3);
                const std::vector<double>& w = t.values();
                for (int64_t h = 0; h < H; ++h) {
                    for (int64_t x = 0; x < W; ++x) {
                        temporal_csv += site.layer + "," + std::to_string(h) + "," +
                                        std::to_string(x) + "," +
                                        format_double(w[static_cast<size_t>(h * W + x)]) + "\n";
                    }
                }
            }
        }
        const std::string suffix = std::to_string(index) + ".csv";
        write_text(out_dir + "/channel_" + suffix, channel_csv);
        write_text(out_dir + "/temporal_" + suffix, temporal_csv);
    }
}

int run(int argc, const char* const* argv) {
    CLI::App app{"Dual-attention activity recognition toolkit"};
    app.require_subcommand(1);

    // prepare
    PrepareOptions prepare;
    std::string prepare_mode = "full";
    CLI::App* prepare_cmd = app.add_subcommand("prepare", "Window a CSV or generate synthetic data");
    prepare_cmd->add_option("--input", prepare.input_csv, "input CSV path");
    prepare_cmd->add_flag("--synthetic", prepare.synthetic, "generate synthetic data");
    prepare_cmd->add_option("--seed", prepare.synth.seed, "synthetic generator seed");
    prepare_cmd->add_option("--classes", prepare.synth.num_classes, "synthetic class count");
    prepare_cmd->add_option("--per-class", prepare.synth.windows_per_class,
                            "synthetic windows per class");
    prepare_cmd->add_option("--axes", prepare.synth.sensor_axes, "synthetic sensor axes");
    prepare_cmd->add_option("--window", prepare.synth.window_length, "synthetic window length");
    prepare_cmd->add_option("--mode", prepare_mode, "synthetic embed mode: full|segment");
    prepare_cmd->add_option("--noise", prepare.synth.noise_sigma, "synthetic noise sigma");
    prepare_cmd->add_option("--preset", prepare.preset,
                            "dataset preset: wisdm|unimib|pamap2|opportunity|weakly");
    prepare_cmd->add_option("--width", prepare.width, "window width (overrides preset)");
    prepare_cmd->add_option("--step", prepare.step, "window step (overrides preset)");
    prepare_cmd->add_option("--out", prepare.out, "output archive path")->required();

    // train / ablate share config + overrides
    std::string config_path;
    Overrides overrides;
    uint64_t seed_value = 0;
    std::string out_value, attention_value;
    int epochs_value = 0;
    auto add_run_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run config JSON")->required();
        cmd->add_option("--seed", seed_value, "override every seed");
        cmd->add_option("--out", out_value, "override the output directory");
        cmd->add_option("--attention", attention_value,
                        "override the attention variant: none|channel_only|temporal_only|"
                        "channel_then_temporal|temporal_then_channel");
        cmd->add_option("--epochs", epochs_value, "override the epoch count");
    };
    auto collect_overrides = [&](CLI::App* cmd) {
        if (cmd->count("--seed") > 0) overrides.seed = seed_value;
        if (cmd->count("--out") > 0) overrides.out = out_value;
        if (cmd->count("--attention") > 0) overrides.attention = attention_value;
        if (cmd->count("--epochs") > 0) overrides.epochs = epochs_value;
    };
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    add_run_options(train_cmd);
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "Train all five attention variants");
    add_run_options(ablate_cmd);

    // evaluate
    std::string checkpoint_path, archive_path, eval_out;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on an archive");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval_cmd->add_option("--archive", archive_path, "windowed archive")->required();
    eval_cmd->add_option("--out", eval_out, "write metrics JSON here");

    // export-attention
    std::vector<int64_t> window_indices;
    std::string export_out;
    CLI::App* export_cmd =
        app.add_subcommand("export-attention", "Export attention weight maps as CSV");
    export_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    export_cmd->add_option("--archive", archive_path, "windowed archive")->required();
    export_cmd->add_option("--windows", window_indices, "window indices to export")->required();
    export_cmd->add_option("--out", export_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (prepare_cmd->parsed()) {
            prepare.synth.embed_mode = embed_mode_from_string(prepare_mode);
            const json summary = cmd_prepare(prepare);
            std::cout << summary.dump(2) << "\n";
        } else if (train_cmd->parsed()) {
            collect_overrides(train_cmd);
            cmd_train(load_run_config(config_path, overrides));
        } else if (ablate_cmd->parsed()) {
            collect_overrides(ablate_cmd);
            cmd_ablate(load_run_config(config_path, overrides));
        } else if (eval_cmd->parsed()) {
            std::cout << cmd_evaluate(checkpoint_path, archive_path, eval_out).dump(2) << "\n";
        } else if (export_cmd->parsed()) {
            cmd_export_attention(checkpoint_path, archive_path, window_indices, export_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace danhar::cli
