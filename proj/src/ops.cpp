#include "danhar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "danhar/threading.hpp"

namespace danhar {

namespace {

void require_rank(const Tensor& t, size_t rank, const char* op, const char* arg) {
    if (t.shape().size() != rank) {
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got " + shape_to_string(t.shape()));
    }
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Records the closure when a tape is live and any operand tracks gradients,
// and marks the output as gradient-tracking so downstream ops chain.
template <typename Fn>
void record_if_needed(Tensor& out, bool needs_grad, Fn&& fn) {
    Tape* tape = active_tape();
    if (!tape || !needs_grad) return;
    out.set_requires_grad(true);
    tape->record(std::forward<Fn>(fn));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::pair<int, int> stride, std::pair<int, int> padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(weight, 4, "conv2d", "weight");
    const int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
    if (weight.dim(1) != Cin) {
        throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(Cin));
    }
    if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != Cout)) {
        throw ShapeError("conv2d: bias shape " + shape_to_string(bias.shape()) +
                         " does not match " + std::to_string(Cout) + " output channels");
    }
    const int64_t sh = stride.first, sw = stride.second;
    const int64_t ph = padding.first, pw = padding.second;
    if (sh < 1 || sw < 1 || ph < 0 || pw < 0) throw ConfigError("conv2d: invalid stride/padding");
    const int64_t num_h = H + 2 * ph - KH, num_w = W + 2 * pw - KW;
    if (num_h < 0 || num_w < 0 || num_h % sh != 0 || num_w % sw != 0) {
        throw ConfigError("conv2d: output size is not a positive integer for input " +
                          shape_to_string(input.shape()) + ", kernel " +
                          shape_to_string(weight.shape()) + ", stride (" + std::to_string(sh) +
                          "," + std::to_string(sw) + "), padding (" + std::to_string(ph) + "," +
                          std::to_string(pw) + ")");
    }
    const int64_t OH = num_h / sh + 1, OW = num_w / sw + 1;

    Tensor out = Tensor::zeros({N, Cout, OH, OW});
    const double* in = input.values().data();
    const double* wt = weight.values().data();
    const double* bv = bias.defined() ? bias.values().data() : nullptr;
    double* ov = out.values().data();

    // Valid output range for a kernel tap: ih = oh*sh + khi - ph must land in [0, H).
    auto lo = [](int64_t k, int64_t p, int64_t s) {
        return k >= p ? int64_t{0} : (p - k + s - 1) / s;
    };
    auto hi = [](int64_t dim, int64_t k, int64_t p, int64_t s, int64_t odim) {
        return std::min(odim - 1, (dim - 1 + p - k) / s);
    };

    parallel_for(N, [&](int64_t n0, int64_t n1) {
        for (int64_t n = n0; n < n1; ++n) {
            for (int64_t co = 0; co < Cout; ++co) {
                double* out_nc = ov + ((n * Cout + co) * OH) * OW;
                if (bv) std::fill(out_nc, out_nc + OH * OW, bv[co]);
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const double* in_nc = in + ((n * Cin + ci) * H) * W;
                    const double* w_cc = wt + ((co * Cin + ci) * KH) * KW;
                    for (int64_t khi = 0; khi < KH; ++khi) {
                        const int64_t oh_lo = lo(khi, ph, sh), oh_hi = hi(H, khi, ph, sh, OH);
                        for (int64_t kwi = 0; kwi < KW; ++kwi) {
                            const double wv = w_cc[khi * KW + kwi];
                            const int64_t ow_lo = lo(kwi, pw, sw), ow_hi = hi(W, kwi, pw, sw, OW);
                            for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                                const int64_t ih = oh * sh + khi - ph;
                                double* orow = out_nc + oh * OW;
                                const double* irow = in_nc + ih * W + kwi - pw;
                                for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                                    orow[ow] += wv * irow[ow * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    check_finite(out, "conv2d");

    bool ig = wants_grad(input), wg = wants_grad(weight), bg = wants_grad(bias);
    record_if_needed(out, ig || wg || bg, [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
        double* gi = ig ? in_t.grad().data() : nullptr;
        double* gw = wg ? w_t.grad().data() : nullptr;
        double* gb = bg ? b_t.grad().data() : nullptr;
        const double* in2 = in_t.values().data();
        const double* wt2 = w_t.values().data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t co = 0; co < Cout; ++co) {
                const double* go_nc = go + ((n * Cout + co) * OH) * OW;
                if (gb) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < OH * OW; ++i) acc += go_nc[i];
                    gb[co] += acc;
                }
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const int64_t in_base = ((n * Cin + ci) * H) * W;
                    const int64_t w_base = ((co * Cin + ci) * KH) * KW;
                    for (int64_t khi = 0; khi < KH; ++khi) {
                        const int64_t oh_lo = lo(khi, ph, sh), oh_hi = hi(H, khi, ph, sh, OH);
                        for (int64_t kwi = 0; kwi < KW; ++kwi) {
                            const double wv = wt2[w_base + khi * KW + kwi];
                            const int64_t ow_lo = lo(kwi, pw, sw), ow_hi = hi(W, kwi, pw, sw, OW);
                            double wacc = 0.0;
                            for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                                const int64_t ih = oh * sh + khi - ph;
                                const double* grow = go_nc + oh * OW;
                                const int64_t ibase = in_base + ih * W + kwi - pw;
                                for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                                    const double g = grow[ow];
                                    if (gi) gi[ibase + ow * sw] += wv * g;
                                    if (gw) wacc += g * in2[ibase + ow * sw];
                                }
                            }
                            if (gw) gw[w_base + khi * KW + kwi] += wacc;
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor pad_temporal(const Tensor& input, int left, int right) {
    require_rank(input, 4, "pad_temporal", "input");
    if (left < 0 || right < 0) throw ConfigError("pad_temporal: negative padding");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t OW = W + left + right;
    Tensor out = Tensor::zeros({N, C, H, OW});
    const double* in = input.values().data();
    double* ov = out.values().data();
    const int64_t rows = N * C * H;
    for (int64_t r = 0; r < rows; ++r) {
        std::memcpy(ov + r * OW + left, in + r * W, sizeof(double) * static_cast<size_t>(W));
    }
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
            const double* grow = go + r * OW + left;
            double* irow = gi + r * W;
            for (int64_t w = 0; w < W; ++w) irow[w] += grow[w];
        }
    });
    return out;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "dense", "input");
    require_rank(weight, 2, "dense", "weight");
    const int64_t N = input.dim(0), Fin = input.dim(1);
    const int64_t Fout = weight.dim(0);
    if (weight.dim(1) != Fin) {
        throw ShapeError("dense: weight expects " + std::to_string(weight.dim(1)) +
                         " input features, input has " + std::to_string(Fin));
    }
    if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != Fout)) {
        throw ShapeError("dense: bias shape " + shape_to_string(bias.shape()) +
                         " does not match " + std::to_string(Fout) + " output features");
    }
    Tensor out = Tensor::zeros({N, Fout});
    const double* in = input.values().data();
    const double* wt = weight.values().data();
    const double* bv = bias.defined() ? bias.values().data() : nullptr;
    double* ov = out.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
        for (int64_t n = n0; n < n1; ++n) {
            const double* irow = in + n * Fin;
            double* orow = ov + n * Fout;
            for (int64_t fo = 0; fo < Fout; ++fo) {
                const double* wrow = wt + fo * Fin;
                double acc = bv ? bv[fo] : 0.0;
                for (int64_t fi = 0; fi < Fin; ++fi) acc += irow[fi] * wrow[fi];
                orow[fo] = acc;
            }
        }
    });
    check_finite(out, "dense");

    bool ig = wants_grad(input), wg = wants_grad(weight), bg = wants_grad(bias);
    record_if_needed(out, ig || wg || bg, [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input, w_t = weight, b_t = bias;
        double* gi = ig ? in_t.grad().data() : nullptr;
        double* gw = wg ? w_t.grad().data() : nullptr;
        double* gb = bg ? b_t.grad().data() : nullptr;
        const double* in2 = in_t.values().data();
        const double* wt2 = w_t.values().data();
        for (int64_t n = 0; n < N; ++n) {
            const double* grow = go + n * Fout;
            const double* irow = in2 + n * Fin;
            for (int64_t fo = 0; fo < Fout; ++fo) {
                const double g = grow[fo];
                if (g == 0.0) continue;
                if (gb) gb[fo] += g;
                const double* wrow = wt2 + fo * Fin;
                if (gi) {
                    double* girow = gi + n * Fin;
                    for (int64_t fi = 0; fi < Fin; ++fi) girow[fi] += g * wrow[fi];
                }
                if (gw) {
                    double* gwrow = gw + fo * Fin;
                    for (int64_t fi = 0; fi < Fin; ++fi) gwrow[fi] += g * irow[fi];
                }
            }
        }
    });
    return out;
}

BatchNormState BatchNormState::init(int64_t channels) {
    BatchNormState s;
    s.running_mean = Tensor::zeros({channels});
    s.running_var = Tensor::full({channels}, 1.0);
    return s;
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool train, bool update_stats) {
    require_rank(input, 4, "batchnorm", "input");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    auto check_param = [&](const Tensor& p, const char* name) {
        if (p.shape().size() != 1 || p.dim(0) != C) {
            throw ShapeError(std::string("batchnorm: ") + name + " shape " +
                             shape_to_string(p.shape()) + " does not match " +
                             std::to_string(C) + " channels");
        }
    };
    check_param(gamma, "gamma");
    check_param(beta, "beta");
    check_param(state.running_mean, "running_mean");
    check_param(state.running_var, "running_var");
    const int64_t M = N * H * W;
    if (M < 1 || (train && M < 2)) {
        throw ConfigError("batchnorm: train mode needs at least 2 values per channel, got " +
                          std::to_string(M));
    }

    Tensor out = Tensor::zeros({N, C, H, W});
    const double* in = input.values().data();
    const double* gv = gamma.values().data();
    const double* bv = beta.values().data();
    double* ov = out.values().data();
    const int64_t plane = H * W;

    std::vector<double> mean(C), inv_std(C);
    // Shared by forward and the recorded backward closure.
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(N * C * plane));
    if (train) {
        for (int64_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const double* p = in + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) m += p[i];
            }
            m /= static_cast<double>(M);
            double var = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const double* p = in + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - m;
                    var += d * d;
                }
            }
            var /= static_cast<double>(M);
            mean[c] = m;
            inv_std[c] = 1.0 / std::sqrt(var + state.epsilon);
            if (update_stats) {
                double* rm = state.running_mean.values().data();
                double* rv = state.running_var.values().data();
                rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * m;
                rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * var;
            }
        }
    } else {
        const double* rm = state.running_mean.values().data();
        const double* rv = state.running_var.values().data();
        for (int64_t c = 0; c < C; ++c) {
            mean[c] = rm[c];
            inv_std[c] = 1.0 / std::sqrt(rv[c] + state.epsilon);
        }
    }
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const double* p = in + (n * C + c) * plane;
            double* q = ov + (n * C + c) * plane;
            double* xh = xhat->data() + (n * C + c) * plane;
            const double m = mean[c], is = inv_std[c], g = gv[c], b = bv[c];
            for (int64_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - m) * is;
                q[i] = g * xh[i] + b;
            }
        }
    }
    check_finite(out, "batchnorm");

    bool ig = wants_grad(input), gg = wants_grad(gamma), bg = wants_grad(beta);
    auto inv_std_saved = std::make_shared<std::vector<double>>(std::move(inv_std));
    record_if_needed(out, ig || gg || bg, [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input, g_t = gamma, b_t = beta;
        double* gi = ig ? in_t.grad().data() : nullptr;
        double* ggm = gg ? g_t.grad().data() : nullptr;
        double* gbt = bg ? b_t.grad().data() : nullptr;
        const double* gv2 = g_t.values().data();
        const std::vector<double>& xh = *xhat;
        const std::vector<double>& is = *inv_std_saved;
        for (int64_t c = 0; c < C; ++c) {
            double sum_go = 0.0, sum_go_xh = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const int64_t base = (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    sum_go += go[base + i];
                    sum_go_xh += go[base + i] * xh[base + i];
                }
            }
            if (ggm) ggm[c] += sum_go_xh;
            if (gbt) gbt[c] += sum_go;
            if (!gi) continue;
            const double g = gv2[c], s = is[c];
            if (train) {
                const double inv_m = 1.0 / static_cast<double>(M);
                for (int64_t n = 0; n < N; ++n) {
                    const int64_t base = (n * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        gi[base + i] += g * s *
                            (go[base + i] - inv_m * sum_go - xh[base + i] * inv_m * sum_go_xh);
                    }
                }
            } else {
                for (int64_t n = 0; n < N; ++n) {
                    const int64_t base = (n * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) gi[base + i] += g * s * go[base + i];
                }
            }
        }
    });
    return out;
}

Tensor pool_channelwise(const Tensor& input, PoolKind kind) {
    require_rank(input, 4, "pool_channelwise", "input");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t plane = H * W;
    Tensor out = Tensor::zeros({N, C});
    const double* in = input.values().data();
    double* ov = out.values().data();
    auto argmax = std::make_shared<std::vector<int64_t>>();
    if (kind == PoolKind::Max) argmax->resize(static_cast<size_t>(N * C));
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* p = in + nc * plane;
        if (kind == PoolKind::Avg) {
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            ov[nc] = acc / static_cast<double>(plane);
        } else {
            int64_t best = 0;
            for (int64_t i = 1; i < plane; ++i) {
                if (p[i] > p[best]) best = i;
            }
            ov[nc] = p[best];
            (*argmax)[static_cast<size_t>(nc)] = best;
        }
    }
    check_finite(out, "pool_channelwise");
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            if (kind == PoolKind::Avg) {
                const double g = go[nc] / static_cast<double>(plane);
                double* p = gi + nc * plane;
                for (int64_t i = 0; i < plane; ++i) p[i] += g;
            } else {
                gi[nc * plane + (*argmax)[static_cast<size_t>(nc)]] += go[nc];
            }
        }
    });
    return out;
}

Tensor pool_across_channels(const Tensor& input, PoolKind kind) {
    require_rank(input, 4, "pool_across_channels", "input");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t plane = H * W;
    Tensor out = Tensor::zeros({N, 1, H, W});
    const double* in = input.values().data();
    double* ov = out.values().data();
    auto argmax = std::make_shared<std::vector<int64_t>>();
    if (kind == PoolKind::Max) argmax->resize(static_cast<size_t>(N * plane));
    for (int64_t n = 0; n < N; ++n) {
        const double* base = in + n * C * plane;
        double* q = ov + n * plane;
        for (int64_t i = 0; i < plane; ++i) {
            if (kind == PoolKind::Avg) {
                double acc = 0.0;
                for (int64_t c = 0; c < C; ++c) acc += base[c * plane + i];
                q[i] = acc / static_cast<double>(C);
            } else {
                int64_t best = 0;
                for (int64_t c = 1; c < C; ++c) {
                    if (base[c * plane + i] > base[best * plane + i]) best = c;
                }
                q[i] = base[best * plane + i];
                (*argmax)[static_cast<size_t>(n * plane + i)] = best;
            }
        }
    }
    check_finite(out, "pool_across_channels");
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        for (int64_t n = 0; n < N; ++n) {
            double* base = gi + n * C * plane;
            const double* g = go + n * plane;
            for (int64_t i = 0; i < plane; ++i) {
                if (kind == PoolKind::Avg) {
                    const double gc = g[i] / static_cast<double>(C);
                    for (int64_t c = 0; c < C; ++c) base[c * plane + i] += gc;
                } else {
                    base[(*argmax)[static_cast<size_t>(n * plane + i)] * plane + i] += g[i];
                }
            }
        }
    });
    return out;
}

Tensor max_pool_temporal(const Tensor& input, int extent) {
    require_rank(input, 4, "max_pool_temporal", "input");
    if (extent < 1) throw ConfigError("max_pool_temporal: extent must be >= 1");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t OW = W / extent;
    if (OW < 1) {
        throw ConfigError("max_pool_temporal: temporal length " + std::to_string(W) +
                          " is shorter than pooling extent " + std::to_string(extent));
    }
    Tensor out = Tensor::zeros({N, C, H, OW});
    const double* in = input.values().data();
    double* ov = out.values().data();
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * C * H * OW));
    const int64_t rows = N * C * H;
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = in + r * W;
        double* q = ov + r * OW;
        for (int64_t ow = 0; ow < OW; ++ow) {
            int64_t best = ow * extent;
            for (int64_t k = 1; k < extent; ++k) {
                if (p[ow * extent + k] > p[best]) best = ow * extent + k;
            }
            q[ow] = p[best];
            (*argmax)[static_cast<size_t>(r * OW + ow)] = best;
        }
    }
    check_finite(out, "max_pool_temporal");
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t ow = 0; ow < OW; ++ow) {
                gi[r * W + (*argmax)[static_cast<size_t>(r * OW + ow)]] += go[r * OW + ow];
            }
        }
    });
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const double* in = input.values().data();
    double* ov = out.values().data();
    const int64_t n = input.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = in[i] > 0.0 ? in[i] : 0.0;
    check_finite(out, "relu");
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        const double* in2 = in_t.values().data();
        for (int64_t i = 0; i < n; ++i) {
            if (in2[i] > 0.0) gi[i] += go[i];
        }
    });
    return out;
}

Tensor sigmoid(const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const double* in = input.values().data();
    double* ov = out.values().data();
    const int64_t n = input.numel();
    // Clamped away from exactly 0/1 so finite inputs stay strictly inside (0,1).
    const double hi_cap = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    const double lo_cap = std::numeric_limits<double>::denorm_min();
    for (int64_t i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-in[i]));
        ov[i] = std::min(hi_cap, std::max(lo_cap, s));
    }
    check_finite(out, "sigmoid");
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input, out_t = out;
        double* gi = in_t.grad().data();
        const double* s = out_t.values().data();
        for (int64_t i = 0; i < n; ++i) gi[i] += go[i] * s[i] * (1.0 - s[i]);
    });
    return out;
}

namespace {

struct BroadcastPlan {
    Shape out_shape;
    std::vector<int64_t> stride_a, stride_b;  // 0 where the axis is stretched
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const size_t rank = std::max(sa.size(), sb.size());
    BroadcastPlan plan;
    plan.out_shape.resize(rank);
    plan.stride_a.resize(rank);
    plan.stride_b.resize(rank);
    // Right-aligned dims, then row-major strides with 0 on stretched axes.
    std::vector<int64_t> da(rank, 1), db(rank, 1);
    for (size_t i = 0; i < sa.size(); ++i) da[rank - sa.size() + i] = sa[i];
    for (size_t i = 0; i < sb.size(); ++i) db[rank - sb.size() + i] = sb[i];
    for (size_t i = 0; i < rank; ++i) {
        if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_to_string(sa) + " and " +
                             shape_to_string(sb) + " are not broadcast-compatible");
        }
        plan.out_shape[i] = std::max(da[i], db[i]);
    }
    int64_t acc_a = 1, acc_b = 1;
    for (size_t i = rank; i-- > 0;) {
        plan.stride_a[i] = da[i] == 1 ? 0 : acc_a;
        plan.stride_b[i] = db[i] == 1 ? 0 : acc_b;
        acc_a *= da[i];
        acc_b *= db[i];
    }
    return plan;
}

enum class BinOp { Add, Mul };

Tensor binary_broadcast(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const BroadcastPlan plan = plan_broadcast(a, b, name);
    Tensor out = Tensor::zeros(plan.out_shape);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    const int64_t total = out.numel();
    const size_t rank = plan.out_shape.size();

    if (a.shape() == b.shape()) {
        if (op == BinOp::Add) {
            for (int64_t i = 0; i < total; ++i) ov[i] = av[i] + bv[i];
        } else {
            for (int64_t i = 0; i < total; ++i) ov[i] = av[i] * bv[i];
        }
    } else {
        std::vector<int64_t> idx(rank, 0);
        int64_t ia = 0, ib = 0;
        for (int64_t flat = 0; flat < total; ++flat) {
            ov[flat] = op == BinOp::Add ? av[ia] + bv[ib] : av[ia] * bv[ib];
            for (size_t ax = rank; ax-- > 0;) {
                ++idx[ax];
                ia += plan.stride_a[ax];
                ib += plan.stride_b[ax];
                if (idx[ax] < plan.out_shape[ax]) break;
                idx[ax] = 0;
                ia -= plan.stride_a[ax] * plan.out_shape[ax];
                ib -= plan.stride_b[ax] * plan.out_shape[ax];
            }
        }
    }
    check_finite(out, name);

    bool ag = wants_grad(a), bg = wants_grad(b);
    record_if_needed(out, ag || bg, [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor a_t = a, b_t = b;
        double* ga = ag ? a_t.grad().data() : nullptr;
        double* gb = bg ? b_t.grad().data() : nullptr;
        const double* av2 = a_t.values().data();
        const double* bv2 = b_t.values().data();
        if (a_t.shape() == b_t.shape()) {
            for (int64_t i = 0; i < total; ++i) {
                if (op == BinOp::Add) {
                    if (ga) ga[i] += go[i];
                    if (gb) gb[i] += go[i];
                } else {
                    if (ga) ga[i] += go[i] * bv2[i];
                    if (gb) gb[i] += go[i] * av2[i];
                }
            }
            return;
        }
        std::vector<int64_t> idx(rank, 0);
        int64_t ia = 0, ib = 0;
        for (int64_t flat = 0; flat < total; ++flat) {
            if (op == BinOp::Add) {
                if (ga) ga[ia] += go[flat];
                if (gb) gb[ib] += go[flat];
            } else {
                if (ga) ga[ia] += go[flat] * bv2[ib];
                if (gb) gb[ib] += go[flat] * av2[ia];
            }
            for (size_t ax = rank; ax-- > 0;) {
                ++idx[ax];
                ia += plan.stride_a[ax];
                ib += plan.stride_b[ax];
                if (idx[ax] < plan.out_shape[ax]) break;
                idx[ax] = 0;
                ia -= plan.stride_a[ax] * plan.out_shape[ax];
                ib -= plan.stride_b[ax] * plan.out_shape[ax];
            }
        }
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinOp::Add, "add"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& input, double factor) {
    Tensor out = Tensor::zeros(input.shape());
    const double* in = input.values().data();
    double* ov = out.values().data();
    const int64_t n = input.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = in[i] * factor;
    check_finite(out, "scale");
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        for (int64_t i = 0; i < n; ++i) gi[i] += go[i] * factor;
    });
    return out;
}

Tensor sum(const Tensor& input) {
    double acc = 0.0;
    for (double v : input.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    check_finite(out, "sum");
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double g = out.grad()[0];
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        const int64_t n = in_t.numel();
        for (int64_t i = 0; i < n; ++i) gi[i] += g;
    });
    return out;
}

Tensor reshape(const Tensor& input, Shape shape) {
    if (shape_numel(shape) != input.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(input.shape()) + " as " +
                         shape_to_string(shape));
    }
    Tensor out = Tensor::from_data(std::move(shape), input.values());
    record_if_needed(out, wants_grad(input), [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor in_t = input;
        double* gi = in_t.grad().data();
        const int64_t n = in_t.numel();
        for (int64_t i = 0; i < n; ++i) gi[i] += go[i];
    });
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank(a, 4, "concat_channels", "first input");
    require_rank(b, 4, "concat_channels", "second input");
    const int64_t N = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3);
    const int64_t Cb = b.dim(1);
    if (b.dim(0) != N || b.dim(2) != H || b.dim(3) != W) {
        throw ShapeError("concat_channels: " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " disagree outside the channel axis");
    }
    const int64_t plane = H * W;
    Tensor out = Tensor::zeros({N, Ca + Cb, H, W});
    double* ov = out.values().data();
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int64_t n = 0; n < N; ++n) {
        std::memcpy(ov + n * (Ca + Cb) * plane, av + n * Ca * plane,
                    sizeof(double) * static_cast<size_t>(Ca * plane));
        std::memcpy(ov + (n * (Ca + Cb) + Ca) * plane, bv + n * Cb * plane,
                    sizeof(double) * static_cast<size_t>(Cb * plane));
    }
    bool ag = wants_grad(a), bg = wants_grad(b);
    record_if_needed(out, ag || bg, [=]() mutable {
        if (!out.has_grad()) return;
        const double* go = out.grad().data();
        Tensor a_t = a, b_t = b;
        double* ga = ag ? a_t.grad().data() : nullptr;
        double* gb = bg ? b_t.grad().data() : nullptr;
        for (int64_t n = 0; n < N; ++n) {
            if (ga) {
                const double* g = go + n * (Ca + Cb) * plane;
                double* p = ga + n * Ca * plane;
                for (int64_t i = 0; i < Ca * plane; ++i) p[i] += g[i];
            }
            if (gb) {
                const double* g = go + (n * (Ca + Cb) + Ca) * plane;
                double* p = gb + n * Cb * plane;
                for (int64_t i = 0; i < Cb * plane; ++i) p[i] += g[i];
            }
        }
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require_rank(logits, 2, "cross_entropy", "logits");
    const int64_t N = logits.dim(0), K = logits.dim(1);
    if (K < 2) throw ConfigError("cross_entropy: needs at least 2 classes");
    if (static_cast<int64_t>(labels.size()) != N) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(N) + " rows");
    }
    for (int label : labels) {
        if (label < 0 || label >= K) {
            throw ConfigError("cross_entropy: label " + std::to_string(label) +
                              " out of range for " + std::to_string(K) + " classes");
        }
    }
    const double* lv = logits.values().data();
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N * K));
    double loss = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        const double* row = lv + n * K;
        double mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double z = 0.0;
        for (int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        const double log_z = std::log(z);
        loss += log_z + mx - row[labels[static_cast<size_t>(n)]];
        double* prow = probs->data() + n * K;
        for (int64_t k = 0; k < K; ++k) prow[k] = std::exp(row[k] - mx) / z;
    }
    Tensor out = Tensor::scalar(loss / static_cast<double>(N));
    check_finite(out, "cross_entropy");
    record_if_needed(out, wants_grad(logits), [=]() mutable {
        if (!out.has_grad()) return;
        const double g = out.grad()[0] / static_cast<double>(N);
        Tensor l_t = logits;
        double* gl = l_t.grad().data();
        for (int64_t n = 0; n < N; ++n) {
            const double* prow = probs->data() + n * K;
            double* grow = gl + n * K;
            const int label = labels[static_cast<size_t>(n)];
            for (int64_t k = 0; k < K; ++k) {
                grow[k] += g * (prow[k] - (k == label ? 1.0 : 0.0));
            }
        }
    });
    return out;
}

}  // namespace danhar
