#include "opnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "opnet/errors.hpp"
#include "opnet/instrument.hpp"
#include "opnet/parallel.hpp"

namespace opnet {

namespace {

std::string shapes(const Tensor& a, const Tensor& b) {
    return to_string(a.shape()) + " and " + to_string(b.shape());
}

// Zero-pads each plane by `pad` on all sides.
Tensor pad_planes(const Tensor& input, std::size_t pad) {
    if (pad == 0) return input;
    const Shape s = input.shape();
    Tensor out({s.b, s.c, s.h + 2 * pad, s.w + 2 * pad});
    for (std::size_t b = 0; b < s.b; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < s.h; ++y) {
                const double* src = &input.data()[input.index(b, c, y, 0)];
                double* dst = &out.data()[out.index(b, c, y + pad, pad)];
                std::copy(src, src + s.w, dst);
            }
        }
    }
    return out;
}

Tensor crop_planes(const Tensor& padded, std::size_t pad) {
    if (pad == 0) return padded;
    const Shape p = padded.shape();
    Tensor out({p.b, p.c, p.h - 2 * pad, p.w - 2 * pad});
    const Shape s = out.shape();
    for (std::size_t b = 0; b < s.b; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t y = 0; y < s.h; ++y) {
                const double* src = &padded.data()[padded.index(b, c, y + pad, pad)];
                std::copy(src, src + s.w, &out.data()[out.index(b, c, y, 0)]);
            }
        }
    }
    return out;
}

// Interpolation taps along one axis.
struct AxisTaps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
    AxisTaps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double step = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * step - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        auto lo = static_cast<std::size_t>(std::floor(src));
        lo = std::min(lo, in - 1);
        t.lo[d] = lo;
        t.hi[d] = std::min(lo + 1, in - 1);
        t.frac[d] = src - static_cast<double>(lo);
    }
    return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvParams

ConvParams ConvParams::random(std::size_t c_in, std::size_t c_out, std::size_t k,
                              bool with_bias, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(c_in * k * k);
    const double bound = fan_in > 0 ? 1.0 / std::sqrt(fan_in) : 0.0;
    ConvParams p;
    p.weight = Tensor::uniform({c_out, c_in, k, k}, rng, -bound, bound);
    if (with_bias) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        p.bias.resize(c_out);
        for (auto& v : p.bias) v = dist(rng);
    }
    return p;
}

ConvParams ConvParams::zeros(std::size_t c_in, std::size_t c_out, std::size_t k,
                             bool with_bias) {
    ConvParams p;
    p.weight = Tensor({c_out, c_in, k, k});
    if (with_bias) p.bias.assign(c_out, 0.0);
    return p;
}

ConvParams ConvParams::zeros_like(const ConvParams& like) {
    return zeros(like.in_channels(), like.out_channels(), like.kernel(), like.has_bias());
}

ConvParams ConvParams::identity(std::size_t channels, bool with_bias) {
    ConvParams p = zeros(channels, channels, 1, with_bias);
    for (std::size_t c = 0; c < channels; ++c) p.weight.at(c, c, 0, 0) = 1.0;
    return p;
}

void ConvParams::validate() const {
    const Shape s = weight.shape();
    if (s.h != s.w || (s.h != 1 && s.h != 3)) {
        throw ContractViolation("convolution kernel must be 1x1 or 3x3, got " + to_string(s));
    }
    if (!bias.empty() && bias.size() != s.b) {
        throw ContractViolation("bias length " + std::to_string(bias.size()) +
                                " does not match C_out " + std::to_string(s.b));
    }
}

// ---------------------------------------------------------------------------
// conv

Traced<ConvGrads> conv(const Tensor& input, const ConvParams& params) {
    params.validate();
    const Shape in = input.shape();
    const std::size_t c_out = params.out_channels();
    const std::size_t c_in = params.in_channels();
    const std::size_t k = params.kernel();
    if (in.c != c_in) {
        throw ContractViolation("conv input " + to_string(in) + " does not match weight " +
                                to_string(params.weight.shape()));
    }
    const std::size_t pad = k / 2;
    Tensor padded = pad_planes(input, pad);
    const std::size_t pw = in.w + 2 * pad;
    Tensor out({in.b, c_out, in.h, in.w});
    const Tensor& weight = params.weight;

    parallel_for(in.b * c_out, [&](std::size_t job) {
        const std::size_t b = job / c_out;
        const std::size_t co = job % c_out;
        auto dst = out.plane(b, co);
        std::fill(dst.begin(), dst.end(), params.has_bias() ? params.bias[co] : 0.0);
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* src = &padded.data()[padded.index(b, ci, 0, 0)];
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wv = weight.at(co, ci, ky, kx);
                    for (std::size_t y = 0; y < in.h; ++y) {
                        const double* row = src + (y + ky) * pw + kx;
                        double* orow = dst.data() + y * in.w;
                        for (std::size_t x = 0; x < in.w; ++x) orow[x] += wv * row[x];
                    }
                }
            }
        }
    });
    record_macs(MacKind::Conv, in.b * c_out * c_in * k * k * in.h * in.w);

    auto vjp = [padded = std::move(padded), params, in, pad](const Tensor& g) {
        const std::size_t c_out = params.out_channels();
        const std::size_t c_in = params.in_channels();
        const std::size_t k = params.kernel();
        const std::size_t pw = in.w + 2 * pad;
        if (g.shape() != Shape{in.b, c_out, in.h, in.w}) {
            throw ContractViolation("conv cotangent " + to_string(g.shape()) +
                                    " does not match output shape");
        }
        ConvGrads grads;
        grads.params = ConvParams::zeros_like(params);

        Tensor d_padded(padded.shape());
        parallel_for(in.b * c_in, [&](std::size_t job) {
            const std::size_t b = job / c_in;
            const std::size_t ci = job % c_in;
            double* dst = &d_padded.data()[d_padded.index(b, ci, 0, 0)];
            for (std::size_t co = 0; co < c_out; ++co) {
                const auto gp = g.plane(b, co);
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const double wv = params.weight.at(co, ci, ky, kx);
                        for (std::size_t y = 0; y < in.h; ++y) {
                            double* row = dst + (y + ky) * pw + kx;
                            const double* grow = gp.data() + y * in.w;
                            for (std::size_t x = 0; x < in.w; ++x) row[x] += wv * grow[x];
                        }
                    }
                }
            }
        });
        grads.input = crop_planes(d_padded, pad);

        Tensor& dw = grads.params.weight;
        parallel_for(c_out, [&](std::size_t co) {
            for (std::size_t ci = 0; ci < c_in; ++ci) {
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        double acc = 0.0;
                        for (std::size_t b = 0; b < in.b; ++b) {
                            const double* src = &padded.data()[padded.index(b, ci, 0, 0)];
                            const auto gp = g.plane(b, co);
                            for (std::size_t y = 0; y < in.h; ++y) {
                                const double* row = src + (y + ky) * pw + kx;
                                const double* grow = gp.data() + y * in.w;
                                for (std::size_t x = 0; x < in.w; ++x) acc += grow[x] * row[x];
                            }
                        }
                        dw.at(co, ci, ky, kx) = acc;
                    }
                }
            }
            if (params.has_bias()) {
                double acc = 0.0;
                for (std::size_t b = 0; b < in.b; ++b) {
                    for (double v : g.plane(b, co)) acc += v;
                }
                grads.params.bias[co] = acc;
            }
        });
        return grads;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// softmax_rows

Traced<Tensor> softmax_rows(const Tensor& logits) {
    const std::size_t d = logits.shape().w;
    if (d == 0) throw ContractViolation("softmax over an empty axis");
    const std::size_t rows = logits.numel() / d;
    Tensor out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &logits.data()[r * d];
        double* y = &out.data()[r * d];
        const double peak = *std::max_element(x, x + d);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - peak);
            sum += y[j];
        }
        for (std::size_t j = 0; j < d; ++j) y[j] /= sum;
    }
    auto vjp = [y = out, d, rows](const Tensor& g) {
        if (g.shape() != y.shape()) {
            throw ContractViolation("softmax cotangent " + to_string(g.shape()) +
                                    " does not match " + to_string(y.shape()));
        }
        Tensor dx(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = &y.data()[r * d];
            const double* gr = &g.data()[r * d];
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
            for (std::size_t j = 0; j < d; ++j) dx.data()[r * d + j] = yr[j] * (gr[j] - dot);
        }
        return dx;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// channel_gram

Traced<PairGrads> channel_gram(const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.b != sb.b || sa.h != sb.h || sa.w != sb.w) {
        throw ContractViolation("channel_gram spatial mismatch: " + shapes(a, b));
    }
    Tensor out(matrix_shape(sa.b, sa.c, sb.c));
    for (std::size_t n = 0; n < sa.b; ++n) {
        for (std::size_t i = 0; i < sa.c; ++i) {
            const auto pa = a.plane(n, i);
            for (std::size_t j = 0; j < sb.c; ++j) {
                const auto pb = b.plane(n, j);
                double acc = 0.0;
                for (std::size_t s = 0; s < pa.size(); ++s) acc += pa[s] * pb[s];
                out.at(n, 0, i, j) = acc;
            }
        }
    }
    record_macs(MacKind::Gram, sa.b * sa.c * sb.c * sa.plane());

    auto vjp = [a, b](const Tensor& g) {
        const Shape sa = a.shape();
        const Shape sb = b.shape();
        if (g.shape() != matrix_shape(sa.b, sa.c, sb.c)) {
            throw ContractViolation("channel_gram cotangent has shape " + to_string(g.shape()));
        }
        PairGrads grads{Tensor(sa), Tensor(sb)};
        for (std::size_t n = 0; n < sa.b; ++n) {
            for (std::size_t i = 0; i < sa.c; ++i) {
                for (std::size_t j = 0; j < sb.c; ++j) {
                    const double gij = g.at(n, 0, i, j);
                    auto da = grads.first.plane(n, i);
                    auto db = grads.second.plane(n, j);
                    const auto pa = a.plane(n, i);
                    const auto pb = b.plane(n, j);
                    for (std::size_t s = 0; s < pa.size(); ++s) {
                        da[s] += gij * pb[s];
                        db[s] += gij * pa[s];
                    }
                }
            }
        }
        return grads;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// weighted_channel_sum

Traced<PairGrads> weighted_channel_sum(const Tensor& weights, const Tensor& values) {
    const Shape sw = weights.shape();
    const Shape sv = values.shape();
    if (sw.c != 1 || sw.b != sv.b || sw.w != sv.c) {
        throw ContractViolation("weighted_channel_sum extent mismatch: " +
                                shapes(weights, values));
    }
    const std::size_t c_out = sw.h;
    Tensor out({sv.b, c_out, sv.h, sv.w});
    for (std::size_t n = 0; n < sv.b; ++n) {
        for (std::size_t i = 0; i < c_out; ++i) {
            auto dst = out.plane(n, i);
            for (std::size_t j = 0; j < sv.c; ++j) {
                const double wij = weights.at(n, 0, i, j);
                const auto src = values.plane(n, j);
                for (std::size_t s = 0; s < dst.size(); ++s) dst[s] += wij * src[s];
            }
        }
    }
    record_macs(MacKind::WeightedSum, sv.b * c_out * sv.c * sv.plane());

    auto vjp = [weights, values](const Tensor& g) {
        const Shape sw = weights.shape();
        const Shape sv = values.shape();
        const std::size_t c_out = sw.h;
        if (g.shape() != Shape{sv.b, c_out, sv.h, sv.w}) {
            throw ContractViolation("weighted_channel_sum cotangent has shape " +
                                    to_string(g.shape()));
        }
        PairGrads grads{Tensor(sw), Tensor(sv)};
        for (std::size_t n = 0; n < sv.b; ++n) {
            for (std::size_t i = 0; i < c_out; ++i) {
                const auto gp = g.plane(n, i);
                for (std::size_t j = 0; j < sv.c; ++j) {
                    const auto vp = values.plane(n, j);
                    auto dv = grads.second.plane(n, j);
                    const double wij = weights.at(n, 0, i, j);
                    double acc = 0.0;
                    for (std::size_t s = 0; s < gp.size(); ++s) {
                        acc += gp[s] * vp[s];
                        dv[s] += wij * gp[s];
                    }
                    grads.first.at(n, 0, i, j) = acc;
                }
            }
        }
        return grads;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// bilinear_resize

Traced<Tensor> bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    const Shape s = input.shape();
    if (s.h == 0 || s.w == 0) {
        throw ContractViolation("bilinear_resize of empty spatial extent " + to_string(s));
    }
    if (out_h == 0 || out_w == 0) {
        throw ContractViolation("bilinear_resize target extent must be positive");
    }
    if (out_h == s.h && out_w == s.w) {
        return {input, [](const Tensor& g) { return g; }};
    }
    AxisTaps ty = axis_taps(s.h, out_h);
    AxisTaps tx = axis_taps(s.w, out_w);
    Tensor out({s.b, s.c, out_h, out_w});
    for (std::size_t n = 0; n < s.b; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const auto src = input.plane(n, c);
            auto dst = out.plane(n, c);
            for (std::size_t y = 0; y < out_h; ++y) {
                const double fy = ty.frac[y];
                const double* r0 = src.data() + ty.lo[y] * s.w;
                const double* r1 = src.data() + ty.hi[y] * s.w;
                for (std::size_t x = 0; x < out_w; ++x) {
                    const double fx = tx.frac[x];
                    const double w00 = (1.0 - fy) * (1.0 - fx);
                    const double w01 = (1.0 - fy) * fx;
                    const double w10 = fy * (1.0 - fx);
                    const double w11 = fy * fx;
                    dst[y * out_w + x] = w00 * r0[tx.lo[x]] + w01 * r0[tx.hi[x]] +
                                         w10 * r1[tx.lo[x]] + w11 * r1[tx.hi[x]];
                }
            }
        }
    }
    record_macs(MacKind::Resize, 4 * s.b * s.c * out_h * out_w);

    auto vjp = [s, ty = std::move(ty), tx = std::move(tx), out_h, out_w](const Tensor& g) {
        if (g.shape() != Shape{s.b, s.c, out_h, out_w}) {
            throw ContractViolation("bilinear_resize cotangent has shape " +
                                    to_string(g.shape()));
        }
        Tensor dx(s);
        for (std::size_t n = 0; n < s.b; ++n) {
            for (std::size_t c = 0; c < s.c; ++c) {
                const auto gp = g.plane(n, c);
                auto dp = dx.plane(n, c);
                for (std::size_t y = 0; y < out_h; ++y) {
                    const double fy = ty.frac[y];
                    double* r0 = dp.data() + ty.lo[y] * s.w;
                    double* r1 = dp.data() + ty.hi[y] * s.w;
                    for (std::size_t x = 0; x < out_w; ++x) {
                        const double fx = tx.frac[x];
                        const double gv = gp[y * out_w + x];
                        r0[tx.lo[x]] += (1.0 - fy) * (1.0 - fx) * gv;
                        r0[tx.hi[x]] += (1.0 - fy) * fx * gv;
                        r1[tx.lo[x]] += fy * (1.0 - fx) * gv;
                        r1[tx.hi[x]] += fy * fx * gv;
                    }
                }
            }
        }
        return dx;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// global_avg_pool

Traced<Tensor> global_avg_pool(const Tensor& input) {
    const Shape s = input.shape();
    if (s.plane() == 0) {
        throw ContractViolation("global_avg_pool of empty spatial extent " + to_string(s));
    }
    Tensor out({s.b, s.c, 1, 1});
    const double count = static_cast<double>(s.plane());
    for (std::size_t n = 0; n < s.b; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (double v : input.plane(n, c)) acc += v;
            out.at(n, c, 0, 0) = acc / count;
        }
    }
    record_macs(MacKind::Pool, s.numel());

    auto vjp = [s, count](const Tensor& g) {
        if (g.shape() != Shape{s.b, s.c, 1, 1}) {
            throw ContractViolation("global_avg_pool cotangent has shape " +
                                    to_string(g.shape()));
        }
        Tensor dx(s);
        for (std::size_t n = 0; n < s.b; ++n) {
            for (std::size_t c = 0; c < s.c; ++c) {
                const double v = g.at(n, c, 0, 0) / count;
                auto dp = dx.plane(n, c);
                std::fill(dp.begin(), dp.end(), v);
            }
        }
        return dx;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// concat_channels

Traced<std::vector<Tensor>> concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractViolation("concat_channels of an empty list");
    const Shape first = parts.front().shape();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        if (s.b != first.b || s.h != first.h || s.w != first.w) {
            throw ContractViolation("concat_channels mismatch: " + shapes(parts.front(), p));
        }
        widths.push_back(s.c);
        total += s.c;
    }
    Tensor out({first.b, total, first.h, first.w});
    for (std::size_t n = 0; n < first.b; ++n) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t len = p.shape().c * first.plane();
            const double* src = p.data().data() + p.index(n, 0, 0, 0);
            std::copy(src, src + len, out.data().data() + out.index(n, offset, 0, 0));
            offset += p.shape().c;
        }
    }

    auto vjp = [first, widths = std::move(widths), total](const Tensor& g) {
        if (g.shape() != Shape{first.b, total, first.h, first.w}) {
            throw ContractViolation("concat_channels cotangent has shape " +
                                    to_string(g.shape()));
        }
        std::vector<Tensor> grads;
        grads.reserve(widths.size());
        std::size_t offset = 0;
        for (std::size_t width : widths) {
            grads.push_back(slice_channels(g, offset, width).value);
            offset += width;
        }
        return grads;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// broadcast_mul

Traced<PairGrads> broadcast_mul(const Tensor& scale, const Tensor& input) {
    const Shape ss = scale.shape();
    const Shape si = input.shape();
    if (ss.b != si.b || ss.c != si.c || ss.h != 1 || ss.w != 1) {
        throw ContractViolation("broadcast_mul channel mismatch: " + shapes(scale, input));
    }
    Tensor out(si);
    for (std::size_t n = 0; n < si.b; ++n) {
        for (std::size_t c = 0; c < si.c; ++c) {
            const double f = scale.at(n, c, 0, 0);
            const auto src = input.plane(n, c);
            auto dst = out.plane(n, c);
            for (std::size_t s = 0; s < src.size(); ++s) dst[s] = f * src[s];
        }
    }
    record_macs(MacKind::Scale, si.numel());

    auto vjp = [scale, input](const Tensor& g) {
        const Shape si = input.shape();
        if (g.shape() != si) {
            throw ContractViolation("broadcast_mul cotangent has shape " + to_string(g.shape()));
        }
        PairGrads grads{Tensor(scale.shape()), Tensor(si)};
        for (std::size_t n = 0; n < si.b; ++n) {
            for (std::size_t c = 0; c < si.c; ++c) {
                const double f = scale.at(n, c, 0, 0);
                const auto gp = g.plane(n, c);
                const auto xp = input.plane(n, c);
                auto dp = grads.second.plane(n, c);
                double acc = 0.0;
                for (std::size_t s = 0; s < gp.size(); ++s) {
                    acc += gp[s] * xp[s];
                    dp[s] = f * gp[s];
                }
                grads.first.at(n, c, 0, 0) = acc;
            }
        }
        return grads;
    };
    return {std::move(out), std::move(vjp)};
}

// ---------------------------------------------------------------------------
// slice / repeat / scale

Traced<Tensor> slice_channels(const Tensor& input, std::size_t begin, std::size_t count) {
    const Shape s = input.shape();
    if (begin + count > s.c) {
        throw ContractViolation("channel slice [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " +
                                to_string(s));
    }
    Tensor out({s.b, count, s.h, s.w});
    const std::size_t len = count * s.plane();
    for (std::size_t n = 0; n < s.b; ++n) {
        const double* src = input.data().data() + input.index(n, begin, 0, 0);
        std::copy(src, src + len, out.data().data() + out.index(n, 0, 0, 0));
    }
    auto vjp = [s, begin, count](const Tensor& g) {
        if (g.shape() != Shape{s.b, count, s.h, s.w}) {
            throw ContractViolation("slice cotangent has shape " + to_string(g.shape()));
        }
        Tensor dx(s);
        const std::size_t len = count * s.plane();
        for (std::size_t n = 0; n < s.b; ++n) {
            const double* src = g.data().data() + g.index(n, 0, 0, 0);
            std::copy(src, src + len, dx.data().data() + dx.index(n, begin, 0, 0));
        }
        return dx;
    };
    return {std::move(out), std::move(vjp)};
}

Traced<Tensor> repeat_channels(const Tensor& input, std::size_t count) {
    const Shape s = input.shape();
    if (s.c != 1) {
        throw ContractViolation("repeat_channels expects one channel, got " + to_string(s));
    }
    Tensor out({s.b, count, s.h, s.w});
    for (std::size_t n = 0; n < s.b; ++n) {
        const auto src = input.plane(n, 0);
        for (std::size_t c = 0; c < count; ++c) std::ranges::copy(src, out.plane(n, c).begin());
    }
    auto vjp = [s, count](const Tensor& g) {
        if (g.shape() != Shape{s.b, count, s.h, s.w}) {
            throw ContractViolation("repeat cotangent has shape " + to_string(g.shape()));
        }
        Tensor dx(s);
        for (std::size_t n = 0; n < s.b; ++n) {
            auto dp = dx.plane(n, 0);
            for (std::size_t c = 0; c < count; ++c) {
                const auto gp = g.plane(n, c);
                for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += gp[i];
            }
        }
        return dx;
    };
    return {std::move(out), std::move(vjp)};
}

Traced<Tensor> scale(const Tensor& input, double factor) {
    return {factor * input, [factor](const Tensor& g) { return factor * g; }};
}

}  // namespace opnet
