#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "danhar/tensor.hpp"

namespace danhar {

// One contiguous multichannel recording from one subject.
struct LabeledSeries {
    std::string subject;
    int sensor_axes = 0;
    std::vector<double> channels;  // sensor_axes × length, row-major
    int64_t length = 0;
    double sample_rate = 0.0;      // Hz
    std::vector<int> timestep_labels;  // per-timestep (strict); empty when weak
    int sequence_label = -1;           // sequence-level (weak) label

    double at(int axis, int64_t t) const {
        return channels[static_cast<size_t>(axis) * static_cast<size_t>(length) +
                        static_cast<size_t>(t)];
    }
};

struct SeriesSet {
    std::vector<LabeledSeries> series;
    std::vector<std::string> class_names;
};

struct WindowProvenance {
    std::string source;
    std::string subject;
    int64_t offset = 0;  // start index in the source series
};

struct SegmentBounds {
    int64_t begin = 0;
    int64_t end = 0;  // exclusive
};

struct WindowedDataset {
    int64_t count = 0;
    int sensor_axes = 0;   // H
    int window_length = 0; // W
    std::vector<double> windows;  // count × 1 × H × W
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::vector<WindowProvenance> provenance;
    std::vector<double> axis_mean, axis_std;  // set by normalize()
    std::vector<SegmentBounds> segments;      // synthetic segment mode only

    const double* window_data(int64_t i) const {
        return windows.data() + i * sensor_axes * window_length;
    }
    // Materializes windows [first, first+n) as an n×1×H×W batch tensor.
    Tensor batch(const std::vector<int64_t>& indices) const;
};

enum class LabelPolicy { Majority, Sequence };

struct DatasetPreset {
    std::string name;
    int width = 0;
    int step = 0;
    std::string split_policy;  // "random" or "by_subject"
    double train_fraction = 0.7;
    std::set<std::string> test_subjects;
    int batch_size = 0;
    double base_lr = 0.0;
};

// wisdm, unimib, pamap2, opportunity, weakly
DatasetPreset dataset_preset(const std::string& name);

WindowedDataset sliding_windows(const SeriesSet& set, int width, int step, LabelPolicy policy);

// CSV schema: header `subject,label,timestamp,<ch0>,<ch1>,...`, timestamps in
// milliseconds. One series per (subject, contiguous segment); a gap larger
// than twice the nominal sample period starts a new segment.
SeriesSet load_csv(const std::string& path);

struct SplitPolicy {
    enum class Kind { Random, BySubject } kind = Kind::Random;
    double fraction = 0.7;
    uint64_t seed = 0;
    std::set<std::string> test_subjects;
};

std::pair<WindowedDataset, WindowedDataset> split(const WindowedDataset& dataset,
                                                  const SplitPolicy& policy);

// Explicit Fisher-Yates with a modulo draw, stable across standard libraries;
// shared by splitting and the training-loop shuffle.
void shuffle_indices(std::vector<int64_t>& indices, std::mt19937_64& rng);

struct NormalizationStats {
    std::vector<double> mean, std;
};

// Per-axis standardization with train statistics applied to both sets.
NormalizationStats normalize(WindowedDataset& train, WindowedDataset& test);
void apply_normalization(WindowedDataset& dataset, const NormalizationStats& stats);

enum class EmbedMode { Full, Segment };

struct SynthConfig {
    uint64_t seed = 0;
    int num_classes = 4;
    int windows_per_class = 250;
    int sensor_axes = 3;
    int window_length = 64;
    EmbedMode embed_mode = EmbedMode::Full;
    double noise_sigma = 0.3;
};

// Deterministic sinusoid generator; class k has a class-specific frequency
// and per-axis phase. Segment mode hides the class signature in a random
// quarter-window interval over a shared background and records its bounds.
WindowedDataset synth_generate(const SynthConfig& config);

inline constexpr const char* kArchiveMagic = "DANHARD1";

// Windowed-archive container (same layout as checkpoints, magic DANHARD1).
void save_archive(const WindowedDataset& dataset, const std::string& path);
WindowedDataset load_archive(const std::string& path);

}  // namespace danhar
