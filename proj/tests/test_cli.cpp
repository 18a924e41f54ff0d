#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "danhar/cli.hpp"
#include "danhar/model.hpp"

using namespace danhar;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kTmp = "cli_tmp";

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Tiny synthetic run config: 2 classes, 2-axis 16-sample windows, plan [4,4].
json quick_config(const std::string& out_dir, int epochs = 2) {
    return json{
        {"data", {{"synthetic", {{"seed", 1}, {"num_classes", 2}, {"windows_per_class", 15},
                                 {"sensor_axes", 2}, {"window_length", 16}}}}},
        {"split", {{"kind", "random"}, {"fraction", 0.7}, {"seed", 3}}},
        {"model", {{"channel_plan", {4, 4}},
                   {"attention", {{"variant", "channel_then_temporal"}, {"reduction", 2},
                                  {"temporal_kernel", 3}}},
                   {"seed", 7}}},
        {"train", {{"epochs", epochs}, {"batch_size", 8}, {"base_lr", 1e-3}, {"seed", 5}}},
        {"out", out_dir}};
}

std::string write_config(const json& j, const std::string& name) {
    const std::string path = kTmp + "/" + name;
    write_file(path, j.dump(2));
    return path;
}

// Names listed in a checkpoint's JSON manifest.
std::set<std::string> manifest_names(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    char magic[8];
    in.read(magic, 8);
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    const json h = json::parse(header);
    std::set<std::string> names;
    for (const auto& entry : h.at("manifest")) names.insert(entry.at("name").get<std::string>());
    return names;
}

struct TmpDir {
    TmpDir() {
        fs::remove_all(kTmp);
        fs::create_directories(kTmp);
    }
};
TmpDir tmp_dir_guard;

}  // namespace

TEST_CASE("run config resolution and precedence") {
    SUBCASE("preset supplies training defaults; the file overrides them") {
        json j = quick_config(kTmp + "/run");
        j["preset"] = "wisdm";
        j["train"].erase("base_lr");
        j["train"].erase("batch_size");
        cli::RunConfig cfg = cli::load_run_config(write_config(j, "cfg_preset.json"), {});
        CHECK(cfg.train.batch_size == 210);  // wisdm preset
        CHECK(cfg.train.base_lr == doctest::Approx(1e-3));
        CHECK(cfg.train.epochs == 2);  // from the file

        j["train"]["batch_size"] = 32;  // file outranks preset
        cfg = cli::load_run_config(write_config(j, "cfg_preset2.json"), {});
        CHECK(cfg.train.batch_size == 32);
    }

    SUBCASE("flags outrank the file") {
        cli::Overrides overrides;
        overrides.seed = 42;
        overrides.attention = "none";
        overrides.epochs = 9;
        overrides.out = kTmp + "/other";
        cli::RunConfig cfg = cli::load_run_config(
            write_config(quick_config(kTmp + "/run"), "cfg_flags.json"), overrides);
        CHECK(cfg.model.seed == 42);
        CHECK(cfg.train.seed == 42);
        CHECK(cfg.split_policy.seed == 42);
        REQUIRE(cfg.synthetic.has_value());
        CHECK(cfg.synthetic->seed == 42);
        CHECK(cfg.model.attention.variant == AttentionVariant::None);
        CHECK(cfg.train.epochs == 9);
        CHECK(cfg.out_dir == kTmp + "/other");
    }

    SUBCASE("invalid configs are rejected before training") {
        json j = quick_config(kTmp + "/run");
        j.erase("data");
        CHECK_THROWS_AS(cli::load_run_config(write_config(j, "cfg_nodata.json"), {}), ConfigError);

        j = quick_config(kTmp + "/run");
        j["data"]["archive"] = "somewhere.bin";  // both sources at once
        CHECK_THROWS_AS(cli::load_run_config(write_config(j, "cfg_both.json"), {}), ConfigError);

        j = quick_config(kTmp + "/run");
        j.erase("out");
        CHECK_THROWS_AS(cli::load_run_config(write_config(j, "cfg_noout.json"), {}), ConfigError);

        j = quick_config(kTmp + "/run");
        j["train"]["epochs"] = 0;
        CHECK_THROWS_AS(cli::load_run_config(write_config(j, "cfg_badepochs.json"), {}), ConfigError);

        CHECK_THROWS_AS(cli::load_run_config(kTmp + "/does_not_exist.json", {}), IoError);
    }
}

TEST_CASE("prepare") {
    SUBCASE("synthetic source writes an archive plus summary") {
        cli::PrepareOptions opts;
        opts.synthetic = true;
        opts.synth.seed = 2;
        opts.synth.num_classes = 4;
        opts.synth.windows_per_class = 250;
        opts.out = kTmp + "/synth.bin";
        const json summary = cli::cmd_prepare(opts);
        CHECK(summary.at("num_windows").get<int64_t>() == 1000);
        for (const auto& n : summary.at("class_histogram")) CHECK(n.get<int64_t>() == 250);
        CHECK(fs::exists(opts.out));
        CHECK(fs::exists(opts.out + ".json"));
        WindowedDataset ds = load_archive(opts.out);
        CHECK(ds.count == 1000);
    }

    SUBCASE("CSV source windows with preset geometry") {
        std::ostringstream csv;
        csv << "subject,label,timestamp,x,y,z\n";
        for (int t = 0; t < 300; ++t) {
            csv << "s1,walk," << t * 50 << ",0.1,0.2,0.3\n";
        }
        const std::string csv_path = kTmp + "/walk.csv";
        write_file(csv_path, csv.str());

        cli::PrepareOptions opts;
        opts.input_csv = csv_path;
        opts.preset = "wisdm";
        opts.out = kTmp + "/walk.bin";
        const json summary = cli::cmd_prepare(opts);
        // (300 − 200) / 10 + 1 = 11 windows at wisdm geometry
        CHECK(summary.at("num_windows").get<int64_t>() == 11);
        WindowedDataset ds = load_archive(opts.out);
        CHECK(ds.window_length == 200);
        CHECK(ds.sensor_axes == 3);
    }

    SUBCASE("bad inputs fail cleanly") {
        cli::PrepareOptions opts;
        opts.input_csv = kTmp + "/missing.csv";
        opts.preset = "wisdm";
        opts.out = kTmp + "/never.bin";
        CHECK_THROWS_AS(cli::cmd_prepare(opts), IoError);

        cli::PrepareOptions neither;
        neither.out = kTmp + "/never.bin";
        CHECK_THROWS_AS(cli::cmd_prepare(neither), ConfigError);
    }
}

TEST_CASE("train command artifacts and determinism") {
    const std::string run_a = kTmp + "/run_a";
    const std::string path = write_config(quick_config(run_a), "cfg_train.json");
    cli::cmd_train(cli::load_run_config(path, {}));
    for (const char* artifact : {"config.json", "history.csv", "final.ckpt", "best.ckpt",
                                 "metrics.json"}) {
        CHECK(fs::exists(run_a + "/" + artifact));
    }
    const json metrics = json::parse(read_file(run_a + "/metrics.json"));
    CHECK(metrics.at("best").at("accuracy").get<double>() >=
          metrics.at("final").at("accuracy").get<double>() - 1e-12);
    CHECK(metrics.at("final").at("confusion").size() == 2);

    SUBCASE("rerunning the echoed config reproduces the history byte for byte") {
        const std::string run_b = kTmp + "/run_b";
        cli::Overrides overrides;
        overrides.out = run_b;
        cli::cmd_train(cli::load_run_config(run_a + "/config.json", overrides));
        CHECK(read_file(run_b + "/history.csv") == read_file(run_a + "/history.csv"));
        CHECK(read_file(run_b + "/final.ckpt") == read_file(run_a + "/final.ckpt"));
    }

    SUBCASE("attention variants differ only in attention parameters") {
        const std::string run_none = kTmp + "/run_none";
        cli::Overrides overrides;
        overrides.out = run_none;
        overrides.attention = "none";
        cli::cmd_train(cli::load_run_config(path, overrides));

        const std::set<std::string> with = manifest_names(run_a + "/final.ckpt");
        const std::set<std::string> without = manifest_names(run_none + "/final.ckpt");
        for (const std::string& name : without) CHECK(with.count(name) == 1);
        for (const std::string& name : with) {
            if (without.count(name) == 0) {
                CHECK(name.find(".attention.") != std::string::npos);
            }
        }
        CHECK(with.size() > without.size());
    }

    SUBCASE("evaluate on the best checkpoint reproduces the recorded accuracy") {
        cli::PrepareOptions opts;
        opts.synthetic = true;
        opts.synth = [] {
            SynthConfig c;
            c.seed = 1;
            c.num_classes = 2;
            c.windows_per_class = 15;
            c.sensor_axes = 2;
            c.window_length = 16;
            return c;
        }();
        opts.out = kTmp + "/eval_full.bin";
        cli::cmd_prepare(opts);
        // evaluation over the un-normalized full set just exercises the path
        const json j = cli::cmd_evaluate(run_a + "/best.ckpt", opts.out, kTmp + "/eval.json");
        CHECK(j.at("accuracy").get<double>() >= 0.0);
        CHECK(fs::exists(kTmp + "/eval.json"));
    }
}

TEST_CASE("ablation report shape and parameter ordering") {
    json j = quick_config(kTmp + "/ablate", 1);
    j["ablate"]["seeds"] = {0, 1};
    cli::cmd_ablate(cli::load_run_config(write_config(j, "cfg_ablate.json"), {}));

    std::istringstream csv(read_file(kTmp + "/ablate/ablation.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "variant,params,final_acc,best_acc");
    std::vector<std::string> rows;
    while (std::getline(csv, line)) rows.push_back(line);
    CHECK(rows.size() == 5 * 2 + 5);

    std::map<std::string, int64_t> params;
    int mean_rows = 0;
    for (const std::string& row : rows) {
        std::istringstream fields(row);
        std::string variant, param_str;
        std::getline(fields, variant, ',');
        std::getline(fields, param_str, ',');
        if (variant.ends_with("/mean")) {
            ++mean_rows;
            params[variant.substr(0, variant.size() - 5)] = std::stoll(param_str);
        }
    }
    CHECK(mean_rows == 5);
    CHECK(params.at("none") < params.at("channel_only"));
    CHECK(params.at("none") < params.at("temporal_only"));
    CHECK(params.at("channel_only") < params.at("channel_then_temporal"));
    CHECK(params.at("temporal_only") < params.at("temporal_then_channel"));
    CHECK(params.at("channel_then_temporal") == params.at("temporal_then_channel"));
}

TEST_CASE("attention export") {
    // train quickly, export from the final checkpoint
    const std::string run = kTmp + "/run_export";
    json j = quick_config(run, 1);
    const std::string cfg_path = write_config(j, "cfg_export.json");
    cli::cmd_train(cli::load_run_config(cfg_path, {}));

    cli::PrepareOptions opts;
    opts.synthetic = true;
    opts.synth.seed = 1;
    opts.synth.num_classes = 2;
    opts.synth.windows_per_class = 15;
    opts.synth.sensor_axes = 2;
    opts.synth.window_length = 16;
    opts.out = kTmp + "/export_data.bin";
    cli::cmd_prepare(opts);

    const std::string out_dir = kTmp + "/maps";
    cli::cmd_export_attention(run + "/final.ckpt", opts.out, {0, 5}, out_dir);
    for (const char* name : {"channel_0.csv", "temporal_0.csv", "channel_5.csv",
                             "temporal_5.csv"}) {
        CHECK(fs::exists(out_dir + "/" + std::string(name)));
    }

    // weights parse and sit strictly inside (0,1)
    std::istringstream csv(read_file(out_dir + "/temporal_0.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "layer,h,w,weight");
    int count = 0;
    while (std::getline(csv, line)) {
        const double w = std::stod(line.substr(line.rfind(',') + 1));
        CHECK(w > 0.0);
        CHECK(w < 1.0);
        ++count;
    }
    CHECK(count > 0);

    // deterministic re-export
    const std::string out_dir2 = kTmp + "/maps2";
    cli::cmd_export_attention(run + "/final.ckpt", opts.out, {0}, out_dir2);
    CHECK(read_file(out_dir2 + "/channel_0.csv") == read_file(out_dir + "/channel_0.csv"));
    CHECK(read_file(out_dir2 + "/temporal_0.csv") == read_file(out_dir + "/temporal_0.csv"));

    CHECK_THROWS_AS(cli::cmd_export_attention(run + "/final.ckpt", opts.out, {30}, out_dir),
                    ConfigError);
}

TEST_CASE("binary smoke: exit codes and error channel") {
    const std::string bin = DANHAR_BIN;
    REQUIRE(fs::exists(bin));

    const std::string ok_cmd = bin + " prepare --synthetic --seed 3 --classes 2 --per-class 5" +
                               " --axes 2 --window 16 --out " + kTmp +
                               "/smoke.bin > /dev/null 2>&1";
    CHECK(std::system(ok_cmd.c_str()) == 0);
    CHECK(fs::exists(kTmp + "/smoke.bin"));

    const std::string bad_cmd = bin + " prepare --input " + kTmp +
                                "/nope.csv --preset wisdm --out " + kTmp + "/nope.bin 2> " + kTmp +
                                "/stderr.txt";
    CHECK(std::system(bad_cmd.c_str()) != 0);
    const std::string err = read_file(kTmp + "/stderr.txt");
    CHECK(err.rfind("error: ", 0) == 0);
    CHECK(std::count(err.begin(), err.end(), '\n') == 1);

    const std::string help_cmd = bin + " --help > /dev/null 2>&1";
    CHECK(std::system(help_cmd.c_str()) == 0);
}
