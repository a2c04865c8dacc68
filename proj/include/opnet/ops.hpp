#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "opnet/tensor.hpp"

namespace opnet {

/// Maps an output cotangent to the cotangents of every differentiable input.
template <class Grad, class Out = Tensor>
using VjpFn = std::function<Grad(const Out&)>;

/// A forward result paired with its vector-Jacobian product.
template <class Grad, class Out = Tensor>
struct Traced {
    Out value;
    VjpFn<Grad, Out> vjp;
};

/// Weights of a stride-1 convolution with odd kernel k in {1, 3}.
///
/// `weight` is shaped (C_out, C_in, k, k). An empty `bias` means the
/// convolution is bias-free; otherwise it holds C_out entries.
struct ConvParams {
    Tensor weight;
    std::vector<double> bias;

    std::size_t out_channels() const { return weight.shape().b; }
    std::size_t in_channels() const { return weight.shape().c; }
    std::size_t kernel() const { return weight.shape().h; }
    bool has_bias() const { return !bias.empty(); }
    std::size_t param_count() const { return weight.numel() + bias.size(); }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in = C_in * k * k.
    static ConvParams random(std::size_t c_in, std::size_t c_out, std::size_t k, bool with_bias,
                             std::mt19937_64& rng);
    static ConvParams zeros(std::size_t c_in, std::size_t c_out, std::size_t k, bool with_bias);
    /// Same layout as `like`, every entry zero.
    static ConvParams zeros_like(const ConvParams& like);
    /// 1x1 identity map on `channels` channels.
    static ConvParams identity(std::size_t channels, bool with_bias = false);

    void validate() const;
};

struct ConvGrads {
    Tensor input;
    ConvParams params;
};

/// Cotangents of a two-input primitive, in argument order.
struct PairGrads {
    Tensor first;
    Tensor second;
};

/// Stride-1 convolution; 3x3 kernels use zero padding 1 so spatial extents
/// are preserved.
Traced<ConvGrads> conv(const Tensor& input, const ConvParams& params);

/// Row-wise softmax of a (B, 1, N, D) matrix, stabilised by the row max.
Traced<Tensor> softmax_rows(const Tensor& logits);

/// entry (b, i, j) = sum over (h, w) of a[b,i,h,w] * b[b,j,h,w]; shape (B, 1, C_a, C_b).
Traced<PairGrads> channel_gram(const Tensor& a, const Tensor& b);

/// out[b,i] = sum_j weights[b,0,i,j] * values[b,j].
Traced<PairGrads> weighted_channel_sum(const Tensor& weights, const Tensor& values);

/// Bilinear resampling with half-pixel centres:
/// src = (dst + 0.5) * in / out - 0.5, clamped to the valid range.
/// Same-size resizes return a bitwise copy.
Traced<Tensor> bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Spatial mean per channel; shape (B, C, 1, 1).
Traced<Tensor> global_avg_pool(const Tensor& input);

/// Channel concatenation in argument order.
Traced<std::vector<Tensor>> concat_channels(const std::vector<Tensor>& parts);

/// out[b,c,h,w] = scale[b,c,0,0] * input[b,c,h,w].
Traced<PairGrads> broadcast_mul(const Tensor& scale, const Tensor& input);

/// Channels [begin, begin + count).
Traced<Tensor> slice_channels(const Tensor& input, std::size_t begin, std::size_t count);

/// Repeats a single-channel tensor `count` times along the channel axis.
Traced<Tensor> repeat_channels(const Tensor& input, std::size_t count);

/// Multiplies every entry by a constant.
Traced<Tensor> scale(const Tensor& input, double factor);

}  // namespace opnet
