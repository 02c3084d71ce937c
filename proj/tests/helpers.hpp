#pragma once

// Shared test utilities: seeded tensor generators and the finite-difference
// gradient comparison used across every suite.

#include <random>

#include "rhanet/rhanet.hpp"

namespace testutil {

using rhanet::Shape;
using rhanet::Tensor;

// Uniform values in [lo, hi]; pass ranges away from ReLU kinks and sigmoid
// saturation when checking gradients.
template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937& rng, T lo = T(-1), T hi = T(1)) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<T> dist(lo, hi);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

// Max-norm difference scaled by the oracle's magnitude.
template <typename T>
T rel_error(const std::vector<T>& got, const std::vector<T>& want) {
    T diff = T(0), scale = T(0);
    for (size_t i = 0; i < got.size(); ++i) {
        diff = std::max(diff, std::abs(got[i] - want[i]));
        scale = std::max(scale, std::abs(want[i]));
    }
    return diff / std::max(scale, T(1e-6));
}

// Autodiff gradient of sum(f(x)) w.r.t. x against the central-difference
// oracle; returns the relative error.
template <typename T, typename F>
T check_grad(F&& f, Tensor<T>& x, T h = T(1e-4)) {
    x.set_requires_grad(true);
    x.zero_grad();
    auto loss = rhanet::sum(f(x));
    loss.backward();
    const std::vector<T> ad = x.grad();
    auto fd = rhanet::finite_diff_grad(
        [&](const Tensor<T>& probe) { return rhanet::sum(f(probe)); }, x, h);
    return rel_error(ad, fd.values());
}

// Synthetic crack set: dark images with one bright vertical stripe, the mask
// marking the stripe. Writes images/, masks/ and list.txt under `dir` and
// returns the list path.
inline std::string make_stripe_set(const std::string& dir, int count, int height, int width) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    std::ofstream list(fs::path(dir) / "list.txt");
    for (int i = 0; i < count; ++i) {
        const int stripe = width / (count + 1) * (i + 1);
        rhanet::img::Image im;
        im.width = width;
        im.height = height;
        im.channels = 3;
        im.pixels.assign(static_cast<size_t>(width) * height * 3, 0);
        rhanet::img::Image mk;
        mk.width = width;
        mk.height = height;
        mk.channels = 1;
        mk.pixels.assign(static_cast<size_t>(width) * height, 0);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const uint8_t bg = static_cast<uint8_t>(30 + (x * 7 + y * 3 + i * 11) % 40);
                const bool on = std::abs(x - stripe) <= 1;
                for (int c = 0; c < 3; ++c) im.at(y, x, c) = on ? 230 : bg;
                mk.at(y, x, 0) = on ? 255 : 0;
            }
        const std::string name = "img" + std::to_string(i) + ".png";
        rhanet::img::write_png((fs::path(dir) / "images" / name).string(), im);
        rhanet::img::write_png((fs::path(dir) / "masks" / name).string(), mk);
        list << "images/" << name << "\t" << "masks/" << name << "\n";
    }
    list.close();
    return (fs::path(dir) / "list.txt").string();
}

inline std::string temp_dir(const std::string& tag) {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / ("rhanet_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

} // namespace testutil
