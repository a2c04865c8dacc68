#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "opnet/ops.hpp"
#include "opnet/tensor.hpp"

namespace opnet {

/// Query/key/value channel transforms, each a 1x1 C -> C convolution.
struct AttentionParams {
    ConvParams query;
    ConvParams key;
    ConvParams value;

    std::size_t channels() const { return query.in_channels(); }
    std::size_t param_count() const {
        return query.param_count() + key.param_count() + value.param_count();
    }

    /// Bias-free transforms with uniform fan-in initialisation.
    static AttentionParams random(std::size_t channels, std::mt19937_64& rng);
    static AttentionParams identity(std::size_t channels);
    static AttentionParams zeros_like(const AttentionParams& like);

    void validate() const;
};

/// Multi-head settings. Defaults: two heads, unit temperature.
struct OpConfig {
    std::size_t heads = 2;
    double temperature = 1.0;

    void validate(std::size_t channels) const;
};

struct AttentionGrads {
    Tensor input;
    AttentionParams params;
};

/// Channel attention: q, k, v = transforms(m); w = softmax_j(<q_i, k_j> / T);
/// out_i = sum_j w_ij v_j. Output shape equals input shape.
Traced<AttentionGrads> ca_forward(const Tensor& m, const AttentionParams& params,
                                  double temperature = 1.0);

/// Channel attention run independently on P contiguous channel groups of the
/// full-width q/k/v maps, results concatenated in head order.
Traced<AttentionGrads> op_multihead_forward(const Tensor& m, const AttentionParams& params,
                                            const OpConfig& cfg);

/// Per-head normalised weight matrices, each (B, 1, C/P, C/P).
std::vector<Tensor> op_multihead_weights(const Tensor& m, const AttentionParams& params,
                                         const OpConfig& cfg);

/// Exact multiply-accumulate count of one multi-head block.
struct OpMacs {
    std::uint64_t transforms = 0;  // 3 * B * C^2 * H * W
    std::uint64_t similarity = 0;  // 2 * B * P * (C/P)^2 * H * W
    std::uint64_t total() const { return transforms + similarity; }
};

OpMacs count_op_macs(const Shape& shape, const OpConfig& cfg);

}  // namespace opnet
