#include "opnet/attention.hpp"

#include <string>

#include "opnet/errors.hpp"

namespace opnet {

namespace {

struct QkvGrads {
    Tensor q, k, v;
};

struct HeadResult {
    Traced<QkvGrads> traced;
    Tensor weights;
};

// sim = <q_i, k_j> / T, w = softmax_j(sim), out_i = sum_j w_ij v_j.
HeadResult attend(const Tensor& q, const Tensor& k, const Tensor& v, double temperature) {
    auto sim = channel_gram(q, k);
    auto logits = temperature == 1.0 ? Traced<Tensor>{sim.value, [](const Tensor& g) { return g; }}
                                     : scale(sim.value, 1.0 / temperature);
    auto weights = softmax_rows(logits.value);
    auto out = weighted_channel_sum(weights.value, v);

    Tensor w = weights.value;
    auto vjp = [sim = std::move(sim.vjp), logits = std::move(logits.vjp),
                weights = std::move(weights.vjp), out = out.vjp](const Tensor& g) {
        PairGrads d_out = out(g);
        Tensor d_sim = logits(weights(d_out.first));
        PairGrads d_qk = sim(d_sim);
        return QkvGrads{std::move(d_qk.first), std::move(d_qk.second), std::move(d_out.second)};
    };
    return {{std::move(out.value), std::move(vjp)}, std::move(w)};
}

struct Projected {
    Traced<ConvGrads> q, k, v;
};

Projected project(const Tensor& m, const AttentionParams& params) {
    if (!m.all_finite()) throw ContractViolation("attention input contains non-finite values");
    params.validate();
    if (m.shape().c != params.channels()) {
        throw ContractViolation("attention input " + to_string(m.shape()) + " has " +
                                std::to_string(m.shape().c) + " channels, transforms expect " +
                                std::to_string(params.channels()));
    }
    return {conv(m, params.query), conv(m, params.key), conv(m, params.value)};
}

AttentionGrads backproject(const Projected& p, const Tensor& dq, const Tensor& dk,
                           const Tensor& dv) {
    ConvGrads gq = p.q.vjp(dq);
    ConvGrads gk = p.k.vjp(dk);
    ConvGrads gv = p.v.vjp(dv);
    AttentionGrads grads;
    grads.input = std::move(gq.input);
    grads.input += gk.input;
    grads.input += gv.input;
    grads.params = {std::move(gq.params), std::move(gk.params), std::move(gv.params)};
    return grads;
}

}  // namespace

AttentionParams AttentionParams::random(std::size_t channels, std::mt19937_64& rng) {
    AttentionParams p;
    p.query = ConvParams::random(channels, channels, 1, false, rng);
    p.key = ConvParams::random(channels, channels, 1, false, rng);
    p.value = ConvParams::random(channels, channels, 1, false, rng);
    return p;
}

AttentionParams AttentionParams::identity(std::size_t channels) {
    return {ConvParams::identity(channels), ConvParams::identity(channels),
            ConvParams::identity(channels)};
}

AttentionParams AttentionParams::zeros_like(const AttentionParams& like) {
    return {ConvParams::zeros_like(like.query), ConvParams::zeros_like(like.key),
            ConvParams::zeros_like(like.value)};
}

void AttentionParams::validate() const {
    const std::size_t c = channels();
    for (const ConvParams* t : {&query, &key, &value}) {
        t->validate();
        if (t->kernel() != 1 || t->in_channels() != c || t->out_channels() != c) {
            throw ContractViolation("attention transforms must all be 1x1 " + std::to_string(c) +
                                    "->" + std::to_string(c) + ", got " +
                                    to_string(t->weight.shape()));
        }
    }
}

void OpConfig::validate(std::size_t channels) const {
    if (heads == 0) throw ConfigError("head count must be positive");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (channels % heads != 0) {
        throw ConfigError("channel count C=" + std::to_string(channels) +
                          " is not divisible by head count P=" + std::to_string(heads));
    }
}

Traced<AttentionGrads> ca_forward(const Tensor& m, const AttentionParams& params,
                                  double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    Projected proj = project(m, params);
    HeadResult head = attend(proj.q.value, proj.k.value, proj.v.value, temperature);

    auto vjp = [proj = std::move(proj), head = std::move(head.traced.vjp)](const Tensor& g) {
        QkvGrads d = head(g);
        return backproject(proj, d.q, d.k, d.v);
    };
    return {std::move(head.traced.value), std::move(vjp)};
}

Traced<AttentionGrads> op_multihead_forward(const Tensor& m, const AttentionParams& params,
                                            const OpConfig& cfg) {
    cfg.validate(m.shape().c);
    Projected proj = project(m, params);
    const std::size_t width = m.shape().c / cfg.heads;

    std::vector<VjpFn<QkvGrads>> head_vjps;
    std::vector<Tensor> outputs;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::size_t begin = h * width;
        Tensor q = slice_channels(proj.q.value, begin, width).value;
        Tensor k = slice_channels(proj.k.value, begin, width).value;
        Tensor v = slice_channels(proj.v.value, begin, width).value;
        HeadResult head = attend(q, k, v, cfg.temperature);
        outputs.push_back(std::move(head.traced.value));
        head_vjps.push_back(std::move(head.traced.vjp));
    }
    auto joined = concat_channels(outputs);

    auto vjp = [proj = std::move(proj), head_vjps = std::move(head_vjps),
                join = std::move(joined.vjp), width](const Tensor& g) {
        std::vector<Tensor> parts = join(g);
        const Shape full = proj.q.value.shape();
        Tensor dq(full), dk(full), dv(full);
        for (std::size_t h = 0; h < parts.size(); ++h) {
            QkvGrads d = head_vjps[h](parts[h]);
            const std::size_t len = width * full.plane();
            for (std::size_t n = 0; n < full.b; ++n) {
                const std::size_t at = dq.index(n, h * width, 0, 0);
                const std::size_t from = d.q.index(n, 0, 0, 0);
                std::copy_n(d.q.data().begin() + from, len, dq.data().begin() + at);
                std::copy_n(d.k.data().begin() + from, len, dk.data().begin() + at);
                std::copy_n(d.v.data().begin() + from, len, dv.data().begin() + at);
            }
        }
        return backproject(proj, dq, dk, dv);
    };
    return {std::move(joined.value), std::move(vjp)};
}

std::vector<Tensor> op_multihead_weights(const Tensor& m, const AttentionParams& params,
                                         const OpConfig& cfg) {
    cfg.validate(m.shape().c);
    Projected proj = project(m, params);
    const std::size_t width = m.shape().c / cfg.heads;
    std::vector<Tensor> weights;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::size_t begin = h * width;
        weights.push_back(attend(slice_channels(proj.q.value, begin, width).value,
                                 slice_channels(proj.k.value, begin, width).value,
                                 slice_channels(proj.v.value, begin, width).value,
                                 cfg.temperature)
                              .weights);
    }
    return weights;
}

OpMacs count_op_macs(const Shape& shape, const OpConfig& cfg) {
    cfg.validate(shape.c);
    const std::uint64_t spatial = shape.b * shape.h * shape.w;
    const std::uint64_t c = shape.c;
    const std::uint64_t width = c / cfg.heads;
    return {3 * c * c * spatial, 2 * cfg.heads * width * width * spatial};
}

}  // namespace opnet
