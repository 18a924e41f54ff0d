#pragma once

// Straight-line re-implementations of the attention arithmetic, written
// against plain vectors with no tensor/tape machinery. These are the
// independent oracles the attention and model tests compare against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// w1: hidden×C, w2: C×hidden. Returns N×C channel weights.
inline std::vector<double> channel_attention(const std::vector<double>& a, int64_t N, int64_t C,
                                             int64_t H, int64_t W,
                                             const std::vector<double>& w1,
                                             const std::vector<double>& b1,
                                             const std::vector<double>& w2,
                                             const std::vector<double>& b2, int64_t hidden) {
    const int64_t plane = H * W;
    std::vector<double> out(static_cast<size_t>(N * C));
    for (int64_t n = 0; n < N; ++n) {
        std::vector<double> g1(static_cast<size_t>(C)), g2(static_cast<size_t>(C));
        for (int64_t c = 0; c < C; ++c) {
            const double* p = a.data() + (n * C + c) * plane;
            double s = 0.0, mx = p[0];
            for (int64_t i = 0; i < plane; ++i) {
                s += p[i];
                mx = std::max(mx, p[i]);
            }
            g1[static_cast<size_t>(c)] = s / static_cast<double>(plane);
            g2[static_cast<size_t>(c)] = mx;
        }
        auto mlp = [&](const std::vector<double>& g) {
            std::vector<double> h(static_cast<size_t>(hidden));
            for (int64_t j = 0; j < hidden; ++j) {
                double acc = b1[static_cast<size_t>(j)];
                for (int64_t c = 0; c < C; ++c) {
                    acc += w1[static_cast<size_t>(j * C + c)] * g[static_cast<size_t>(c)];
                }
                h[static_cast<size_t>(j)] = std::max(0.0, acc);
            }
            std::vector<double> o(static_cast<size_t>(C));
            for (int64_t c = 0; c < C; ++c) {
                double acc = b2[static_cast<size_t>(c)];
                for (int64_t j = 0; j < hidden; ++j) {
                    acc += w2[static_cast<size_t>(c * hidden + j)] * h[static_cast<size_t>(j)];
                }
                o[static_cast<size_t>(c)] = acc;
            }
            return o;
        };
        std::vector<double> avg_branch = mlp(g1), max_branch = mlp(g2);
        for (int64_t c = 0; c < C; ++c) {
            out[static_cast<size_t>(n * C + c)] =
                sig(avg_branch[static_cast<size_t>(c)] + max_branch[static_cast<size_t>(c)]);
        }
    }
    return out;
}

// kernel: 2×kt (avg taps then max taps), same padding along W. Returns N×H×W.
inline std::vector<double> temporal_attention(const std::vector<double>& a, int64_t N, int64_t C,
                                              int64_t H, int64_t W,
                                              const std::vector<double>& kernel, double bias,
                                              int64_t kt) {
    const int64_t plane = H * W;
    const int64_t pad = (kt - 1) / 2;
    std::vector<double> out(static_cast<size_t>(N * plane));
    for (int64_t n = 0; n < N; ++n) {
        std::vector<double> avg(static_cast<size_t>(plane)), mx(static_cast<size_t>(plane));
        for (int64_t i = 0; i < plane; ++i) {
            double s = 0.0, m = a[static_cast<size_t>(n * C * plane + i)];
            for (int64_t c = 0; c < C; ++c) {
                const double v = a[static_cast<size_t>((n * C + c) * plane + i)];
                s += v;
                m = std::max(m, v);
            }
            avg[static_cast<size_t>(i)] = s / static_cast<double>(C);
            mx[static_cast<size_t>(i)] = m;
        }
        for (int64_t h = 0; h < H; ++h) {
            for (int64_t w = 0; w < W; ++w) {
                double acc = bias;
                for (int64_t k = 0; k < kt; ++k) {
                    const int64_t iw = w + k - pad;
                    if (iw < 0 || iw >= W) continue;
                    acc += kernel[static_cast<size_t>(k)] * avg[static_cast<size_t>(h * W + iw)];
                    acc += kernel[static_cast<size_t>(kt + k)] * mx[static_cast<size_t>(h * W + iw)];
                }
                out[static_cast<size_t>(n * plane + h * W + w)] = sig(acc);
            }
        }
    }
    return out;
}

}  // namespace oracle
