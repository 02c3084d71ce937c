#pragma once

// The five network variants: a U-shaped encoder-decoder with optional
// residual bottleneck blocks, optional hybrid attention on every skip, and an
// optional depthwise-separable lightweight build.

#include <cstdint>
#include <optional>

#include "rhanet/blocks.hpp"

namespace rhanet {

enum class Variant : uint8_t {
    baseline = 0,
    baseline_rb = 1,
    baseline_hab = 2,
    rha = 3,
    rha_lite = 4,
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::baseline_rb: return "baseline-rb";
        case Variant::baseline_hab: return "baseline-hab";
        case Variant::rha: return "rha";
        case Variant::rha_lite: return "rha-lite";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::baseline, Variant::baseline_rb, Variant::baseline_hab, Variant::rha,
                      Variant::rha_lite})
        if (s == variant_name(v)) return v;
    throw ValueError("unknown variant '" + s +
                     "' (expected baseline|baseline-rb|baseline-hab|rha|rha-lite)");
}

inline bool variant_has_residual(Variant v) {
    return v == Variant::baseline_rb || v == Variant::rha || v == Variant::rha_lite;
}
inline bool variant_has_hab(Variant v) {
    return v == Variant::baseline_hab || v == Variant::rha || v == Variant::rha_lite;
}
inline bool variant_separable(Variant v) { return v == Variant::rha_lite; }

struct ModelConfig {
    Variant variant = Variant::rha;
    int base_width = 16;
    int in_channels = 3;
    int classes = 2;

    // Level widths W, 2W, 4W, 8W, 16W for levels 0..4.
    int width(int level) const { return base_width << level; }
};

// Spatial extents must survive four 2× poolings.
inline constexpr int kSpatialMultiple = 16;

template <typename T = float>
class Model {
public:
    ModelConfig cfg;

    blocks::ConvUnit<T> initial;
    std::array<blocks::EncoderBlock<T>, 4> encoders;
    std::optional<std::array<blocks::ResidualBlock<T>, 2>> residuals;
    std::optional<std::array<blocks::HybridAttentionBlock<T>, 5>> habs; // index = level
    std::array<blocks::DecoderStep<T>, 4> decoders;                    // index = target level
    blocks::ConvUnit<T> head_conv;
    blocks::Conv2dLayer<T> classifier; // 1×1 W→classes, conventional in every variant

    bool training = false;
    blocks::ParamMap<T> names;

    // Per-pixel class probabilities, N×classes×H×W summing to 1 over the
    // class axis; channel 1 is the crack probability.
    Tensor<T> forward(const Tensor<T>& x) {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
            throw ShapeError("forward: expected N×" + std::to_string(cfg.in_channels) +
                             "×H×W input, got " + shape_str(x.shape()));
        if (x.dim(2) % kSpatialMultiple != 0 || x.dim(3) % kSpatialMultiple != 0)
            throw ShapeError("forward: spatial extents of " + shape_str(x.shape()) +
                             " must be divisible by " + std::to_string(kSpatialMultiple) +
                             "; pad the input (pad_to_multiple) and crop the prediction back");

        std::array<Tensor<T>, 5> enc;
        enc[0] = initial.forward(x, training);
        for (int k = 1; k <= 4; ++k) enc[static_cast<size_t>(k)] =
            encoders[static_cast<size_t>(k - 1)].forward(enc[static_cast<size_t>(k - 1)], training);

        Tensor<T> bottom = enc[4];
        if (residuals) {
            bottom = (*residuals)[0].forward(bottom, training);
            bottom = (*residuals)[1].forward(bottom, training);
        }

        Tensor<T> skip = habs ? (*habs)[4].forward(enc[4], bottom) : enc[4];
        Tensor<T> merged = ops::concat_channels(skip, bottom);
        for (int k = 3; k >= 0; --k) {
            Tensor<T> up = decoders[static_cast<size_t>(k)].forward(merged, training);
            skip = habs ? (*habs)[static_cast<size_t>(k)].forward(enc[static_cast<size_t>(k)], up)
                        : enc[static_cast<size_t>(k)];
            merged = ops::concat_channels(skip, up);
        }

        auto logits = classifier.forward(head_conv.forward(merged, training));
        return ops::softmax(logits, /*axis=*/1);
    }

    // Inference convenience: no graph is recorded.
    Tensor<T> predict(const Tensor<T>& x) {
        autograd::NoGradGuard ng;
        const bool was_training = training;
        training = false;
        auto out = forward(x);
        training = was_training;
        return out;
    }

    void zero_grads() {
        for (auto& [name, t] : names.params) t.zero_grad();
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : names.params) n += t.size();
        return n;
    }

    // Asserts the depthwise-separable weight saving 9·C_in + C_in·C_out <
    // 9·C_in·C_out on every DS unit in the graph (for C_out > 1) and returns
    // the number of units checked.
    int verify_separable_reduction() const {
        int checked = 0;
        auto check = [&checked](const blocks::DSConvUnit<T>& u) {
            const int c_in = u.depthwise.weight.dim(0);
            const int c_out = u.pointwise.weight.dim(0);
            if (c_out <= 1) return;
            const int64_t ds = u.conv_weight_count();
            const int64_t conventional = static_cast<int64_t>(9) * c_in * c_out;
            if (ds != static_cast<int64_t>(9) * c_in + static_cast<int64_t>(c_in) * c_out ||
                ds >= conventional)
                throw ValueError("depthwise-separable unit " + std::to_string(c_in) + "→" +
                                 std::to_string(c_out) + " does not reduce the weight count");
            ++checked;
        };
        auto check_unit = [&](const blocks::ConvUnit<T>& u) {
            if (const auto* ds = std::get_if<blocks::DSConvUnit<T>>(&u.impl)) check(*ds);
        };
        check_unit(initial);
        for (const auto& e : encoders) {
            check_unit(e.conv1);
            check_unit(e.conv2);
        }
        if (residuals)
            for (const auto& r : *residuals) {
                check(r.unit1);
                check(r.unit2);
            }
        for (const auto& d : decoders) check_unit(d.conv);
        check_unit(head_conv);
        return checked;
    }
};

template <typename T = float>
Model<T> build(const ModelConfig& cfg, uint64_t seed) {
    if (cfg.base_width < 1) throw ValueError("build: base_width must be >= 1");
    Model<T> m;
    m.cfg = cfg;
    std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
    const bool sep = variant_separable(cfg.variant);

    m.initial = blocks::ConvUnit<T>::make(cfg.in_channels, cfg.width(0), sep, rng);
    for (int k = 1; k <= 4; ++k)
        m.encoders[static_cast<size_t>(k - 1)] =
            blocks::EncoderBlock<T>::make(cfg.width(k - 1), cfg.width(k), sep, rng);
    if (variant_has_residual(cfg.variant))
        m.residuals = {blocks::ResidualBlock<T>::make(cfg.width(4), rng),
                       blocks::ResidualBlock<T>::make(cfg.width(4), rng)};
    if (variant_has_hab(cfg.variant)) {
        m.habs.emplace();
        for (int k = 4; k >= 0; --k)
            (*m.habs)[static_cast<size_t>(k)] =
                blocks::HybridAttentionBlock<T>::make(cfg.width(k), rng);
    }
    for (int k = 3; k >= 0; --k)
        m.decoders[static_cast<size_t>(k)] =
            blocks::DecoderStep<T>::make(2 * cfg.width(k + 1), cfg.width(k), sep, rng);
    m.head_conv = blocks::ConvUnit<T>::make(2 * cfg.width(0), cfg.width(0), sep, rng);
    m.classifier = blocks::Conv2dLayer<T>::make(cfg.width(0), cfg.classes, 1, true, rng);

    m.initial.register_into(m.names, "init.conv");
    for (int k = 1; k <= 4; ++k)
        m.encoders[static_cast<size_t>(k - 1)].register_into(m.names, "enc" + std::to_string(k));
    if (m.residuals) {
        (*m.residuals)[0].register_into(m.names, "res1");
        (*m.residuals)[1].register_into(m.names, "res2");
    }
    if (m.habs)
        for (int k = 4; k >= 0; --k)
            (*m.habs)[static_cast<size_t>(k)].register_into(m.names, "hab" + std::to_string(k));
    for (int k = 3; k >= 0; --k)
        m.decoders[static_cast<size_t>(k)].register_into(m.names, "dec" + std::to_string(k) + ".conv");
    m.head_conv.register_into(m.names, "head.conv");
    m.classifier.register_into(m.names, "head.classifier");
    return m;
}

// ---------------------------------------------------------------------------
// Analytic cost accounting.
//
// Conventions (per batch element): a multiply-accumulate is 2 FLOPs; bias
// adds, elementwise add/mul and ReLU are 1 FLOP per element; batch norm in
// its inference form is 2 (scale+shift); sigmoid 4; softmax 5; a 2×2 maxpool
// is 3 comparisons per output; bilinear ×2 is 8 per output; global average
// pooling is 1 per input element.
// ---------------------------------------------------------------------------

namespace flops {

inline int64_t conv(int c_in, int c_out, int k, int64_t hw, bool bias) {
    return 2 * static_cast<int64_t>(k) * k * c_in * c_out * hw +
           (bias ? static_cast<int64_t>(c_out) * hw : 0);
}
inline int64_t conv_unit(int c_in, int c_out, int64_t hw, bool separable) {
    if (!separable) return conv(c_in, c_out, 3, hw, true) + static_cast<int64_t>(c_out) * hw;
    int64_t f = 0;
    f += 2 * 9 * static_cast<int64_t>(c_in) * hw;         // depthwise
    f += 3 * static_cast<int64_t>(c_in) * hw;             // bn + relu
    f += 2 * static_cast<int64_t>(c_in) * c_out * hw;     // pointwise
    f += 3 * static_cast<int64_t>(c_out) * hw;            // bn + relu
    return f;
}
inline int64_t residual(int c, int64_t hw) {
    return 2 * conv_unit(c, c, hw, true) + static_cast<int64_t>(c) * hw;
}
inline int64_t hab(int c, int64_t hw) {
    int64_t f = 0;
    f += static_cast<int64_t>(c) * hw;                     // F_l ⊕ F_h
    f += 3 * (static_cast<int64_t>(c) * hw + c);           // three pools
    f += 4 * (conv(c, c, 1, 1, true) + c);                 // 1×1 convs + relu on 1×1 maps
    f += 2 * c;                                            // M_p ⊗ M_l ⊕ M_h
    f += 5 * c;                                            // channel softmax
    f += static_cast<int64_t>(c) * hw;                     // F_l' = M_c ⊗ F_l
    f += 2 * (conv(c, 1, 1, hw, true) + hw);               // spatial convs + relu
    f += hw;                                               // ⊕
    f += 4 * hw;                                           // sigmoid
    f += static_cast<int64_t>(c) * hw;                     // M_s ⊗ F_l
    return f;
}

} // namespace flops

// Forward cost of one image at the given spatial size, mirroring the wiring
// in Model::forward.
inline int64_t count_flops(const ModelConfig& cfg, int height, int width) {
    if (height % kSpatialMultiple != 0 || width % kSpatialMultiple != 0)
        throw ValueError("count_flops: extents must be divisible by " +
                         std::to_string(kSpatialMultiple));
    const bool sep = variant_separable(cfg.variant);
    int64_t f = 0;
    int64_t hw[5];
    for (int k = 0; k <= 4; ++k)
        hw[k] = (static_cast<int64_t>(height) >> k) * (static_cast<int64_t>(width) >> k);

    f += flops::conv_unit(cfg.in_channels, cfg.width(0), hw[0], sep);
    for (int k = 1; k <= 4; ++k) {
        f += 3 * static_cast<int64_t>(cfg.width(k - 1)) * hw[k]; // maxpool
        f += flops::conv_unit(cfg.width(k - 1), cfg.width(k), hw[k], sep);
        f += flops::conv_unit(cfg.width(k), cfg.width(k), hw[k], sep);
    }
    if (variant_has_residual(cfg.variant)) f += 2 * flops::residual(cfg.width(4), hw[4]);
    if (variant_has_hab(cfg.variant)) f += flops::hab(cfg.width(4), hw[4]);
    for (int k = 3; k >= 0; --k) {
        f += 8 * static_cast<int64_t>(2 * cfg.width(k + 1)) * hw[k]; // bilinear ×2
        f += flops::conv_unit(2 * cfg.width(k + 1), cfg.width(k), hw[k], sep);
        if (variant_has_hab(cfg.variant)) f += flops::hab(cfg.width(k), hw[k]);
    }
    f += flops::conv_unit(2 * cfg.width(0), cfg.width(0), hw[0], sep);
    f += flops::conv(cfg.width(0), cfg.classes, 1, hw[0], true);
    f += 5 * static_cast<int64_t>(cfg.classes) * hw[0]; // class softmax
    return f;
}

} // namespace rhanet
