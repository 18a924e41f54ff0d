#include "danhar/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "danhar/container.hpp"

namespace danhar {

Tensor WindowedDataset::batch(const std::vector<int64_t>& indices) const {
    const int64_t per = static_cast<int64_t>(sensor_axes) * window_length;
    std::vector<double> data(indices.size() * static_cast<size_t>(per));
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t idx = indices[i];
        if (idx < 0 || idx >= count) {
            throw ConfigError("window index " + std::to_string(idx) + " out of range [0," +
                              std::to_string(count) + ")");
        }
        std::copy_n(window_data(idx), per, data.begin() + static_cast<int64_t>(i) * per);
    }
    return Tensor::from_data({static_cast<int64_t>(indices.size()), 1, sensor_axes,
                              window_length},
                             std::move(data));
}

DatasetPreset dataset_preset(const std::string& name) {
    DatasetPreset p;
    p.name = name;
    if (name == "wisdm") {
        // 10 s at 20 Hz, 95% overlap
        p.width = 200;
        p.step = 10;
        p.split_policy = "random";
        p.batch_size = 210;
        p.base_lr = 1e-3;
    } else if (name == "unimib") {
        // fixed 151-sample windows, no overlap
        p.width = 151;
        p.step = 151;
        p.split_policy = "random";
        p.batch_size = 128;
        p.base_lr = 1e-3;
    } else if (name == "pamap2") {
        // 5.12 s at 33.3 Hz -> 170 samples; 78% overlap -> step round(170·0.22)
        p.width = 170;
        p.step = 37;
        p.split_policy = "by_subject";
        p.test_subjects = {"5", "6"};
        p.batch_size = 300;
        p.base_lr = 5e-4;
    } else if (name == "opportunity") {
        p.width = 64;
        p.step = 8;
        p.split_policy = "random";
        p.batch_size = 300;
        p.base_lr = 1e-4;
    } else if (name == "weakly") {
        // 40.96 s at 50 Hz
        p.width = 2048;
        p.step = 2048;
        p.split_policy = "random";
        p.batch_size = 200;
        p.base_lr = 1e-3;
    } else {
        throw ConfigError("unknown dataset preset '" + name + "'");
    }
    return p;
}

WindowedDataset sliding_windows(const SeriesSet& set, int width, int step, LabelPolicy policy) {
    if (step <= 0) throw ConfigError("sliding window step must be positive");
    if (width <= 0) throw ConfigError("sliding window width must be positive");
    WindowedDataset out;
    out.window_length = width;
    out.class_names = set.class_names;
    for (size_t s = 0; s < set.series.size(); ++s) {
        const LabeledSeries& series = set.series[s];
        if (out.sensor_axes == 0) out.sensor_axes = series.sensor_axes;
        if (series.sensor_axes != out.sensor_axes) {
            throw ShapeError("series disagree on sensor axis count");
        }
        if (series.length < width) {
            std::cerr << "warning: series '" << series.subject << "' (" << series.length
                      << " samples) is shorter than window width " << width
                      << "; no windows emitted\n";
            continue;
        }
        const int64_t num = (series.length - width) / step + 1;
        for (int64_t i = 0; i < num; ++i) {
            const int64_t start = i * step;
            for (int axis = 0; axis < series.sensor_axes; ++axis) {
                for (int t = 0; t < width; ++t) {
                    out.windows.push_back(series.at(axis, start + t));
                }
            }
            int label;
            if (policy == LabelPolicy::Sequence) {
                if (series.sequence_label < 0) {
                    throw ConfigError("sequence label policy needs a sequence-level label");
                }
                label = series.sequence_label;
            } else {
                if (series.timestep_labels.empty()) {
                    throw ConfigError("majority label policy needs per-timestep labels");
                }
                std::map<int, int64_t> counts;
                for (int t = 0; t < width; ++t) {
                    ++counts[series.timestep_labels[static_cast<size_t>(start + t)]];
                }
                // modal label, ties to the lowest class index (map iterates ascending)
                int64_t best = -1;
                label = -1;
                for (const auto& [cls, n] : counts) {
                    if (n > best) {
                        best = n;
                        label = cls;
                    }
                }
            }
            out.labels.push_back(label);
            out.provenance.push_back({series.subject, series.subject, start});
            ++out.count;
        }
    }
    if (out.sensor_axes == 0) out.sensor_axes = 1;
    return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

struct CsvRow {
    std::string subject;
    std::string label;
    double timestamp = 0.0;  // milliseconds
    std::vector<double> channels;
    size_t line = 0;
};

}  // namespace

SeriesSet load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
    const auto header = split_line(line);
    if (header.size() < 4 || header[0] != "subject" || header[1] != "label" ||
        header[2] != "timestamp") {
        throw IoError("'" + path + "': header must be subject,label,timestamp,<ch0>,...");
    }
    const size_t num_channels = header.size() - 3;

    std::vector<CsvRow> rows;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_line(line);
        if (fields.size() != header.size()) {
            throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields, found " +
                          std::to_string(fields.size()));
        }
        CsvRow row;
        row.subject = fields[0];
        row.label = fields[1];
        row.line = line_no;
        try {
            size_t used = 0;
            row.timestamp = std::stod(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
            for (size_t c = 0; c < num_channels; ++c) {
                if (fields[3 + c].empty()) throw std::invalid_argument("missing channel value");
                row.channels.push_back(std::stod(fields[3 + c], &used));
                if (used != fields[3 + c].size()) throw std::invalid_argument("trailing characters");
            }
        } catch (const std::exception& e) {
            throw IoError(path + ":" + std::to_string(line_no) + ": unparseable row (" +
                          e.what() + ")");
        }
        rows.push_back(std::move(row));
    }

    // deterministic class index assignment: sorted unique label names
    std::vector<std::string> class_names;
    for (const CsvRow& row : rows) class_names.push_back(row.label);
    std::sort(class_names.begin(), class_names.end());
    class_names.erase(std::unique(class_names.begin(), class_names.end()), class_names.end());
    auto class_index = [&](const std::string& name) {
        return static_cast<int>(std::lower_bound(class_names.begin(), class_names.end(), name) -
                                class_names.begin());
    };

    SeriesSet set;
    set.class_names = class_names;
    size_t i = 0;
    while (i < rows.size()) {
        // one contiguous run of a single subject
        size_t j = i;
        while (j < rows.size() && rows[j].subject == rows[i].subject) ++j;
        // nominal sample period from the median timestamp delta of the run
        std::vector<double> deltas;
        for (size_t r = i + 1; r < j; ++r) {
            const double d = rows[r].timestamp - rows[r - 1].timestamp;
            if (d <= 0.0) {
                throw IoError(path + ":" + std::to_string(rows[r].line) +
                              ": non-monotonic timestamp for subject '" + rows[r].subject + "'");
            }
            deltas.push_back(d);
        }
        double nominal = 1.0;
        if (!deltas.empty()) {
            std::vector<double> sorted = deltas;
            std::sort(sorted.begin(), sorted.end());
            nominal = sorted[sorted.size() / 2];
        }
        // split into segments at gaps larger than twice the nominal period
        size_t seg_start = i;
        auto emit = [&](size_t lo, size_t hi) {
            LabeledSeries series;
            series.subject = rows[lo].subject;
            series.sensor_axes = static_cast<int>(num_channels);
            series.length = static_cast<int64_t>(hi - lo);
            series.sample_rate = 1000.0 / nominal;
            series.channels.resize(num_channels * (hi - lo));
            for (size_t r = lo; r < hi; ++r) {
                series.timestep_labels.push_back(class_index(rows[r].label));
                for (size_t c = 0; c < num_channels; ++c) {
                    series.channels[c * (hi - lo) + (r - lo)] = rows[r].channels[c];
                }
            }
            // sequence-level label: modal per-timestep label, ties to lowest index
            std::map<int, int64_t> counts;
            for (int l : series.timestep_labels) ++counts[l];
            int64_t best = -1;
            for (const auto& [cls, n] : counts) {
                if (n > best) {
                    best = n;
                    series.sequence_label = cls;
                }
            }
            set.series.push_back(std::move(series));
        };
        for (size_t r = i + 1; r < j; ++r) {
            if (rows[r].timestamp - rows[r - 1].timestamp > 2.0 * nominal) {
                emit(seg_start, r);
                seg_start = r;
            }
        }
        emit(seg_start, j);
        i = j;
    }
    return set;
}

namespace {

WindowedDataset subset(const WindowedDataset& dataset, const std::vector<int64_t>& indices) {
    WindowedDataset out;
    out.sensor_axes = dataset.sensor_axes;
    out.window_length = dataset.window_length;
    out.class_names = dataset.class_names;
    const int64_t per = static_cast<int64_t>(dataset.sensor_axes) * dataset.window_length;
    for (int64_t idx : indices) {
        const double* src = dataset.window_data(idx);
        out.windows.insert(out.windows.end(), src, src + per);
        out.labels.push_back(dataset.labels[static_cast<size_t>(idx)]);
        out.provenance.push_back(dataset.provenance[static_cast<size_t>(idx)]);
        if (!dataset.segments.empty()) {
            out.segments.push_back(dataset.segments[static_cast<size_t>(idx)]);
        }
        ++out.count;
    }
    return out;
}

}  // namespace

void shuffle_indices(std::vector<int64_t>& indices, std::mt19937_64& rng) {
    for (size_t i = indices.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng() % i);
        std::swap(indices[i - 1], indices[j]);
    }
}

std::pair<WindowedDataset, WindowedDataset> split(const WindowedDataset& dataset,
                                                  const SplitPolicy& policy) {
    std::vector<int64_t> train_idx, test_idx;
    if (policy.kind == SplitPolicy::Kind::Random) {
        if (policy.fraction <= 0.0 || policy.fraction >= 1.0) {
            throw ConfigError("split fraction must be in (0,1)");
        }
        std::vector<int64_t> indices(static_cast<size_t>(dataset.count));
        for (int64_t i = 0; i < dataset.count; ++i) indices[static_cast<size_t>(i)] = i;
        std::mt19937_64 rng(policy.seed);
        shuffle_indices(indices, rng);
        const auto n_train = static_cast<size_t>(
            std::llround(policy.fraction * static_cast<double>(dataset.count)));
        train_idx.assign(indices.begin(), indices.begin() + static_cast<int64_t>(n_train));
        test_idx.assign(indices.begin() + static_cast<int64_t>(n_train), indices.end());
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(test_idx.begin(), test_idx.end());
    } else {
        for (const std::string& subject : policy.test_subjects) {
            bool found = false;
            for (const auto& prov : dataset.provenance) {
                if (prov.subject == subject) {
                    found = true;
                    break;
                }
            }
            if (!found) throw ConfigError("unknown test subject '" + subject + "'");
        }
        for (int64_t i = 0; i < dataset.count; ++i) {
            if (policy.test_subjects.count(dataset.provenance[static_cast<size_t>(i)].subject)) {
                test_idx.push_back(i);
            } else {
                train_idx.push_back(i);
            }
        }
    }
    return {subset(dataset, train_idx), subset(dataset, test_idx)};
}

NormalizationStats normalize(WindowedDataset& train, WindowedDataset& test) {
    if (train.count == 0) throw ConfigError("cannot normalize an empty training set");
    NormalizationStats stats;
    const int axes = train.sensor_axes;
    const int64_t W = train.window_length;
    stats.mean.assign(static_cast<size_t>(axes), 0.0);
    stats.std.assign(static_cast<size_t>(axes), 0.0);
    const double n = static_cast<double>(train.count * W);
    for (int a = 0; a < axes; ++a) {
        double s = 0.0;
        for (int64_t i = 0; i < train.count; ++i) {
            const double* w = train.window_data(i) + a * W;
            for (int64_t t = 0; t < W; ++t) s += w[t];
        }
        const double mean = s / n;
        double var = 0.0;
        for (int64_t i = 0; i < train.count; ++i) {
            const double* w = train.window_data(i) + a * W;
            for (int64_t t = 0; t < W; ++t) var += (w[t] - mean) * (w[t] - mean);
        }
        stats.mean[static_cast<size_t>(a)] = mean;
        stats.std[static_cast<size_t>(a)] = std::max(std::sqrt(var / n), 1e-8);
    }
    apply_normalization(train, stats);
    apply_normalization(test, stats);
    return stats;
}

void apply_normalization(WindowedDataset& dataset, const NormalizationStats& stats) {
    const int64_t W = dataset.window_length;
    for (int64_t i = 0; i < dataset.count; ++i) {
        for (int a = 0; a < dataset.sensor_axes; ++a) {
            double* w = dataset.windows.data() +
                        (i * dataset.sensor_axes + a) * W;
            for (int64_t t = 0; t < W; ++t) {
                w[t] = (w[t] - stats.mean[static_cast<size_t>(a)]) /
                       stats.std[static_cast<size_t>(a)];
            }
        }
    }
    dataset.axis_mean = stats.mean;
    dataset.axis_std = stats.std;
}

WindowedDataset synth_generate(const SynthConfig& config) {
    if (config.num_classes < 2) throw ConfigError("synthetic generator needs at least 2 classes");
    const int K = config.num_classes, H = config.sensor_axes, W = config.window_length;
    WindowedDataset out;
    out.sensor_axes = H;
    out.window_length = W;
    for (int k = 0; k < K; ++k) out.class_names.push_back("class" + std::to_string(k));

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> noise(0.0, config.noise_sigma);

    // fixed per-(class, axis) phases, plus a shared background phase per axis
    std::vector<double> bg_phase(static_cast<size_t>(H));
    for (double& p : bg_phase) p = phase_dist(rng);
    std::vector<double> cls_phase(static_cast<size_t>(K * H));
    for (double& p : cls_phase) p = phase_dist(rng);

    const int64_t seg_len = W / 4;
    std::uniform_int_distribution<int64_t> start_dist(0, W - seg_len);
    const double two_pi = 2.0 * std::numbers::pi;

    for (int k = 0; k < K; ++k) {
        for (int i = 0; i < config.windows_per_class; ++i) {
            SegmentBounds bounds{0, W};
            if (config.embed_mode == EmbedMode::Segment) {
                bounds.begin = start_dist(rng);
                bounds.end = bounds.begin + seg_len;
            }
            for (int a = 0; a < H; ++a) {
                const double phi = cls_phase[static_cast<size_t>(k * H + a)];
                for (int t = 0; t < W; ++t) {
                    double v;
                    if (config.embed_mode == EmbedMode::Full) {
                        // class frequency in cycles per window
                        const double freq = 2.0 + 3.0 * k;
                        v = std::sin(two_pi * freq * t / W + phi);
                    } else {
                        // quiet shared background with the class signature
                        // confined to the recorded segment
                        v = 0.4 * std::sin(two_pi * 1.0 * t / W +
                                           bg_phase[static_cast<size_t>(a)]);
                        if (t >= bounds.begin && t < bounds.end) {
                            const double freq = 2.0 + 1.0 * k;  // cycles per segment
                            v += 1.5 * std::sin(two_pi * freq * (t - bounds.begin) / seg_len +
                                                phi);
                        }
                    }
                    out.windows.push_back(v + noise(rng));
                }
            }
            out.labels.push_back(k);
            out.provenance.push_back({"synthetic", "synthetic", out.count});
            if (config.embed_mode == EmbedMode::Segment) out.segments.push_back(bounds);
            ++out.count;
        }
    }
    return out;
}

void save_archive(const WindowedDataset& dataset, const std::string& path) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["count"] = dataset.count;
    header["sensor_axes"] = dataset.sensor_axes;
    header["window_length"] = dataset.window_length;
    header["labels"] = dataset.labels;
    header["class_names"] = dataset.class_names;
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& p : dataset.provenance) {
        prov.push_back({{"source", p.source}, {"subject", p.subject}, {"offset", p.offset}});
    }
    header["provenance"] = std::move(prov);
    header["axis_mean"] = dataset.axis_mean;
    header["axis_std"] = dataset.axis_std;
    nlohmann::json segments = nlohmann::json::array();
    for (const auto& s : dataset.segments) segments.push_back({s.begin, s.end});
    header["segments"] = std::move(segments);

    std::vector<ContainerBlob> blobs;
    blobs.push_back({"windows",
                     {std::max<int64_t>(dataset.count, 1), 1, dataset.sensor_axes,
                      dataset.window_length},
                     dataset.count > 0 ? dataset.windows
                                       : std::vector<double>(static_cast<size_t>(
                                             dataset.sensor_axes * dataset.window_length))});
    write_container(path, kArchiveMagic, std::move(header), blobs);
}

WindowedDataset load_archive(const std::string& path) {
    Container c = read_container(path, kArchiveMagic);
    WindowedDataset out;
    try {
        out.count = c.header.at("count").get<int64_t>();
        out.sensor_axes = c.header.at("sensor_axes").get<int>();
        out.window_length = c.header.at("window_length").get<int>();
        out.labels = c.header.at("labels").get<std::vector<int>>();
        out.class_names = c.header.at("class_names").get<std::vector<std::string>>();
        for (const auto& p : c.header.at("provenance")) {
            out.provenance.push_back({p.at("source").get<std::string>(),
                                      p.at("subject").get<std::string>(),
                                      p.at("offset").get<int64_t>()});
        }
        out.axis_mean = c.header.at("axis_mean").get<std::vector<double>>();
        out.axis_std = c.header.at("axis_std").get<std::vector<double>>();
        for (const auto& s : c.header.at("segments")) {
            out.segments.push_back({s.at(0).get<int64_t>(), s.at(1).get<int64_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("'" + path + "' has a malformed archive header: " + e.what());
    }
    const ContainerBlob& blob = c.find("windows");
    if (out.count > 0) {
        const int64_t expected =
            out.count * static_cast<int64_t>(out.sensor_axes) * out.window_length;
        if (static_cast<int64_t>(blob.data.size()) != expected) {
            throw IoError("'" + path + "' window blob does not match its manifest dims");
        }
        out.windows = blob.data;
    }
    if (static_cast<int64_t>(out.labels.size()) != out.count) {
        throw IoError("'" + path + "' label count disagrees with window count");
    }
    return out;
}

}  // namespace danhar
