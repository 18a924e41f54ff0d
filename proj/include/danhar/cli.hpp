#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "danhar/data.hpp"
#include "danhar/model.hpp"
#include "danhar/train.hpp"

namespace danhar::cli {

struct PrepareOptions {
    std::string input_csv;  // mutually exclusive with synthetic
    bool synthetic = false;
    SynthConfig synth;
    std::string preset;  // window width/step source when set
    int width = 0, step = 0;  // explicit override of the preset
    std::string out;  // archive path; summary lands at out + ".json"
};

// Windows the input (or generates synthetic data), writes the archive, and
// returns the JSON summary that was written next to it.
nlohmann::json cmd_prepare(const PrepareOptions& options);

// Fully resolved run description (flag > config file > preset default).
struct RunConfig {
    std::string archive;  // mutually exclusive with synthetic
    std::optional<SynthConfig> synthetic;
    SplitPolicy split_policy;
    ModelConfig model;  // data-dependent dims are filled after the data loads
    TrainConfig train;
    std::string out_dir;
    std::vector<uint64_t> ablation_seeds = {0, 1, 2};

    nlohmann::json to_json() const;
};

struct Overrides {
    std::optional<uint64_t> seed;  // applies to model, train, split, and synth
    std::optional<std::string> out;
    std::optional<std::string> attention;
    std::optional<int> epochs;
};

RunConfig load_run_config(const std::string& config_path, const Overrides& overrides);

// Trains per the config; the run directory gains config.json, history.csv,
// final.ckpt, best.ckpt, and metrics.json.
void cmd_train(RunConfig config);

// Trains all five attention variants on identical seeds/splits and writes
// ablation.csv (`variant,params,final_acc,best_acc`; one row per variant and
// seed plus a `<variant>/mean` summary row per variant).
void cmd_ablate(RunConfig config);

// Evaluates a checkpoint on an archive; returns the metrics document and
// writes it to out_path when non-empty.
nlohmann::json cmd_evaluate(const std::string& checkpoint, const std::string& archive,
                            const std::string& out_path);

// Writes channel_<i>.csv (layer,channel,weight) and temporal_<i>.csv
// (layer,h,w,weight) per selected window into out_dir.
void cmd_export_attention(const std::string& checkpoint, const std::string& archive,
                          const std::vector<int64_t>& indices, const std::string& out_dir);

// Full argv entry point: parses arguments, dispatches, and converts failures
// into a single-line `error: ...` on stderr with a nonzero exit code.
int run(int argc, const char* const* argv);

}  // namespace danhar::cli
