#pragma once

// Composite building blocks: conventional and depthwise-separable conv units,
// residual blocks, the hybrid attention block, and the encoder/decoder steps
// they assemble into.

#include <array>
#include <random>
#include <string>
#include <variant>

#include "rhanet/ops.hpp"

namespace rhanet {
namespace blocks {

// Ordered name→tensor registry. Parameters are learnable; buffers (batch-norm
// running statistics) persist in checkpoints but take no gradient.
template <typename T>
struct ParamMap {
    std::vector<std::pair<std::string, Tensor<T>>> params;
    std::vector<std::pair<std::string, Tensor<T>>> buffers;

    void add_param(const std::string& name, Tensor<T> t) {
        t.set_requires_grad(true);
        params.emplace_back(name, std::move(t));
    }
    void add_buffer(const std::string& name, Tensor<T> t) {
        buffers.emplace_back(name, std::move(t));
    }
};

namespace init {

// Kaiming fan-in scaling: weights ~ N(0, 2/fan_in), biases zero.
template <typename T>
Tensor<T> kaiming_conv_weight(int c_out, int c_in_per_group, int k, std::mt19937& rng) {
    const T stddev = std::sqrt(T(2) / static_cast<T>(c_in_per_group * k * k));
    std::normal_distribution<T> dist(T(0), stddev);
    Tensor<T> w(Shape{c_out, c_in_per_group, k, k});
    for (auto& v : w.values()) v = dist(rng);
    return w;
}

} // namespace init

// A conventional convolution; carries a bias when no batch norm follows.
template <typename T>
struct Conv2dLayer {
    ops::ConvParams<T> p;

    static Conv2dLayer make(int c_in, int c_out, int k, bool bias, std::mt19937& rng) {
        Conv2dLayer l;
        l.p.weight = init::kaiming_conv_weight<T>(c_out, c_in, k, rng);
        if (bias) l.p.bias = Tensor<T>(Shape{c_out}, T(0));
        l.p.stride = 1;
        l.p.padding = (k - 1) / 2;
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return ops::conv2d(x, p); }

    void register_into(ParamMap<T>& m, const std::string& prefix) {
        m.add_param(prefix + ".weight", p.weight);
        if (p.bias) m.add_param(prefix + ".bias", *p.bias);
    }
};

// Depthwise separable unit: DW conv + BN + ReLU, then PW conv + BN + ReLU.
// Neither conv carries a bias; the batch norms absorb the shifts.
template <typename T>
struct DSConvUnit {
    ops::ConvParams<T> depthwise; // C_in×1×3×3
    ops::BatchNormState<T> bn1;
    ops::ConvParams<T> pointwise; // C_out×C_in×1×1
    ops::BatchNormState<T> bn2;

    static DSConvUnit make(int c_in, int c_out, std::mt19937& rng) {
        DSConvUnit u;
        u.depthwise.weight = init::kaiming_conv_weight<T>(c_in, 1, 3, rng);
        u.depthwise.padding = 1;
        u.bn1 = ops::BatchNormState<T>(c_in);
        u.pointwise.weight = init::kaiming_conv_weight<T>(c_out, c_in, 1, rng);
        u.bn2 = ops::BatchNormState<T>(c_out);
        return u;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        auto h = ops::relu(ops::batchnorm2d(ops::depthwise_conv2d(x, depthwise), bn1, training));
        return ops::relu(ops::batchnorm2d(ops::conv2d(h, pointwise), bn2, training));
    }

    // Conv weights only: 9·C_in + C_in·C_out, always below the 9·C_in·C_out
    // of the conventional 3×3 conv it replaces (for C_out > 1).
    int64_t conv_weight_count() const {
        return static_cast<int64_t>(depthwise.weight.size()) + pointwise.weight.size();
    }

    void register_into(ParamMap<T>& m, const std::string& prefix) {
        m.add_param(prefix + ".dw.weight", depthwise.weight);
        m.add_param(prefix + ".bn1.gamma", bn1.gamma);
        m.add_param(prefix + ".bn1.beta", bn1.beta);
        m.add_buffer(prefix + ".bn1.running_mean", bn1.running_mean);
        m.add_buffer(prefix + ".bn1.running_var", bn1.running_var);
        m.add_param(prefix + ".pw.weight", pointwise.weight);
        m.add_param(prefix + ".bn2.gamma", bn2.gamma);
        m.add_param(prefix + ".bn2.beta", bn2.beta);
        m.add_buffer(prefix + ".bn2.running_mean", bn2.running_mean);
        m.add_buffer(prefix + ".bn2.running_var", bn2.running_var);
    }
};

// One spatial conv stage ending in ReLU. Conventional (conv+bias+ReLU) in the
// full-width variants, a DSConvUnit in the depthwise-separable variant.
template <typename T>
struct ConvUnit {
    std::variant<Conv2dLayer<T>, DSConvUnit<T>> impl;

    static ConvUnit make(int c_in, int c_out, bool separable, std::mt19937& rng) {
        ConvUnit u;
        if (separable)
            u.impl = DSConvUnit<T>::make(c_in, c_out, rng);
        else
            u.impl = Conv2dLayer<T>::make(c_in, c_out, 3, /*bias=*/true, rng);
        return u;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        if (auto* conv = std::get_if<Conv2dLayer<T>>(&impl)) return ops::relu(conv->forward(x));
        return std::get<DSConvUnit<T>>(impl).forward(x, training);
    }

    void register_into(ParamMap<T>& m, const std::string& prefix) {
        if (auto* conv = std::get_if<Conv2dLayer<T>>(&impl))
            conv->register_into(m, prefix);
        else
            std::get<DSConvUnit<T>>(impl).register_into(m, prefix);
    }
};

// Identity skip around two depthwise-separable units of equal width.
template <typename T>
struct ResidualBlock {
    DSConvUnit<T> unit1, unit2;

    static ResidualBlock make(int channels, std::mt19937& rng) {
        ResidualBlock r;
        r.unit1 = DSConvUnit<T>::make(channels, channels, rng);
        r.unit2 = DSConvUnit<T>::make(channels, channels, rng);
        return r;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return add(x, unit2.forward(unit1.forward(x, training), training));
    }

    void register_into(ParamMap<T>& m, const std::string& prefix) {
        unit1.register_into(m, prefix + ".unit1");
        unit2.register_into(m, prefix + ".unit2");
    }
};

// Fuses a low-level feature map with its same-size high-level counterpart
// through a softmax channel gate and a sigmoid spatial gate. All six convs
// are conventional 1×1 with bias, in every variant.
template <typename T>
struct HybridAttentionBlock {
    Conv2dLayer<T> conv_p, conv_l, conv_h, conv_c; // C→C
    Conv2dLayer<T> conv_s1, conv_s2;               // C→1

    static HybridAttentionBlock make(int channels, std::mt19937& rng) {
        HybridAttentionBlock h;
        h.conv_p = Conv2dLayer<T>::make(channels, channels, 1, true, rng);
        h.conv_l = Conv2dLayer<T>::make(channels, channels, 1, true, rng);
        h.conv_h = Conv2dLayer<T>::make(channels, channels, 1, true, rng);
        h.conv_c = Conv2dLayer<T>::make(channels, channels, 1, true, rng);
        h.conv_s1 = Conv2dLayer<T>::make(channels, 1, 1, true, rng);
        h.conv_s2 = Conv2dLayer<T>::make(channels, 1, 1, true, rng);
        return h;
    }

    static void check_pair(const Tensor<T>& f_low, const Tensor<T>& f_high) {
        if (f_low.shape() != f_high.shape())
            throw ShapeError("hybrid attention: low-level " + shape_str(f_low.shape()) +
                             " and high-level " + shape_str(f_high.shape()) + " shapes differ");
    }

    // Channel weights, softmax-normalized per sample:
    //   M_p = ReLU(conv_p(GAP(F_l ⊕ F_h)))
    //   M_l = ReLU(conv_l(GAP(F_l))),  M_h = ReLU(conv_h(GAP(F_h)))
    //   M_c = Softmax_channels(ReLU(conv_c(M_p ⊗ M_l ⊕ M_h)))
    // The trailing average pool is the identity on the 1×1 maps.
    Tensor<T> channel_attention(const Tensor<T>& f_low, const Tensor<T>& f_high) const {
        check_pair(f_low, f_high);
        auto m_p = ops::relu(conv_p.forward(ops::global_avg_pool(add(f_low, f_high))));
        auto m_l = ops::relu(conv_l.forward(ops::global_avg_pool(f_low)));
        auto m_h = ops::relu(conv_h.forward(ops::global_avg_pool(f_high)));
        auto fused = add(mul(m_p, m_l), m_h);
        return ops::softmax(ops::relu(conv_c.forward(fused)), /*axis=*/1);
    }

    // M_s = Sigmoid(ReLU(conv_s1(F_l')) ⊕ ReLU(conv_s2(F_h))), a single-channel
    // map whose values lie in [0.5, 1) because both summands are non-negative.
    Tensor<T> spatial_attention(const Tensor<T>& f_low_prime, const Tensor<T>& f_high) const {
        check_pair(f_low_prime, f_high);
        auto a = ops::relu(conv_s1.forward(f_low_prime));
        auto b = ops::relu(conv_s2.forward(f_high));
        return ops::sigmoid(add(a, b));
    }

    // Output = M_s ⊗ F_l, with M_s computed from F_l' = M_c ⊗ F_l. The final
    // multiplication deliberately uses F_l, not F_l'.
    Tensor<T> forward(const Tensor<T>& f_low, const Tensor<T>& f_high) const {
        auto m_c = channel_attention(f_low, f_high);
        auto f_low_prime = mul(m_c, f_low);
        auto m_s = spatial_attention(f_low_prime, f_high);
        return mul(m_s, f_low);
    }

    void register_into(ParamMap<T>& m, const std::string& prefix) {
        conv_p.register_into(m, prefix + ".conv_p");
        conv_l.register_into(m, prefix + ".conv_l");
        conv_h.register_into(m, prefix + ".conv_h");
        conv_c.register_into(m, prefix + ".conv_c");
        conv_s1.register_into(m, prefix + ".conv_s1");
        conv_s2.register_into(m, prefix + ".conv_s2");
    }
};

// Max-pool downsampling followed by two conv stages; halves the spatial
// extents and (per the channel plan) doubles the width.
template <typename T>
struct EncoderBlock {
    ConvUnit<T> conv1, conv2;

    static EncoderBlock make(int c_in, int c_out, bool separable, std::mt19937& rng) {
        EncoderBlock e;
        e.conv1 = ConvUnit<T>::make(c_in, c_out, separable, rng);
        e.conv2 = ConvUnit<T>::make(c_out, c_out, separable, rng);
        return e;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return conv2.forward(conv1.forward(ops::maxpool2x2(x), training), training);
    }

    void register_into(ParamMap<T>& m, const std::string& prefix) {
        conv1.register_into(m, prefix + ".conv1");
        conv2.register_into(m, prefix + ".conv2");
    }
};

// Bilinear ×2 upsampling followed by one conv stage mapping the merged
// channel count down to the next level's width.
template <typename T>
struct DecoderStep {
    ConvUnit<T> conv;

    static DecoderStep make(int c_in, int c_out, bool separable, std::mt19937& rng) {
        DecoderStep d;
        d.conv = ConvUnit<T>::make(c_in, c_out, separable, rng);
        return d;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return conv.forward(ops::bilinear_upsample_x2(x), training);
    }

    void register_into(ParamMap<T>& m, const std::string& prefix) {
        conv.register_into(m, prefix + ".conv");
    }
};

} // namespace blocks
} // namespace rhanet
