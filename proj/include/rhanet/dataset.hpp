#pragma once

// Dataset ingestion: image/mask loading, deterministic augmentation,
// reflect padding to the network's spatial multiple, and seeded batching.

#include <filesystem>
#include <random>

#include "rhanet/image_io.hpp"

namespace rhanet {
namespace data {

struct Sample {
    Tensor<float> image; // 3×H×W, values in [0,1]
    Tensor<float> mask;  // H×W, strictly {0,1}
    std::string image_path, mask_path;

    int height() const { return image.dim(1); }
    int width() const { return image.dim(2); }
};

// Mask pixels at or above this 8-bit value count as crack.
inline constexpr int kMaskThreshold = 128;

inline Sample load_sample(const std::string& image_path, const std::string& mask_path) {
    const img::Image im = img::read_image(image_path);
    const img::Image mk = img::read_image(mask_path);
    if (im.width != mk.width || im.height != mk.height)
        throw DataError("image " + image_path + " (" + std::to_string(im.width) + "x" +
                        std::to_string(im.height) + ") and mask " + mask_path + " (" +
                        std::to_string(mk.width) + "x" + std::to_string(mk.height) +
                        ") sizes differ");

    Sample s;
    s.image_path = image_path;
    s.mask_path = mask_path;
    const int H = im.height, W = im.width;
    s.image = Tensor<float>(Shape{3, H, W});
    auto& iv = s.image.values();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const uint8_t v = im.channels == 1 ? im.at(y, x, 0) : im.at(y, x, c);
                iv[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<float>(v) / 255.0f;
            }

    s.mask = Tensor<float>(Shape{H, W});
    auto& mv = s.mask.values();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            uint8_t v;
            if (mk.channels == 1) {
                v = mk.at(y, x, 0);
            } else {
                if (mk.at(y, x, 0) != mk.at(y, x, 1) || mk.at(y, x, 1) != mk.at(y, x, 2))
                    throw DataError("mask is not single-channel (colored pixel at " +
                                    std::to_string(x) + "," + std::to_string(y) + "): " + mask_path);
                v = mk.at(y, x, 0);
            }
            mv[static_cast<size_t>(y) * W + x] = v >= kMaskThreshold ? 1.0f : 0.0f;
        }
    return s;
}

// One `image<TAB>mask` pair per line, `#` comments ignored, paths resolved
// against the data root; every referenced file must exist.
struct SplitList {
    std::vector<std::pair<std::string, std::string>> entries;

    size_t size() const { return entries.size(); }
};

inline SplitList load_split_list(const std::string& list_path, const std::string& data_root) {
    std::ifstream f(list_path);
    if (!f) throw DataError("cannot read split list: " + list_path);
    SplitList out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto last = line.find_last_not_of(" \t");
        if (last == std::string::npos) continue;
        line.erase(last + 1);
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(list_path + ":" + std::to_string(lineno) +
                            ": expected image<TAB>mask");
        auto resolve = [&data_root](std::string rel) {
            return data_root.empty() ? rel : (std::filesystem::path(data_root) / rel).string();
        };
        std::string image = resolve(line.substr(0, tab));
        std::string mask = resolve(line.substr(tab + 1));
        if (!std::filesystem::exists(image)) throw DataError("listed image not found: " + image);
        if (!std::filesystem::exists(mask)) throw DataError("listed mask not found: " + mask);
        out.entries.emplace_back(std::move(image), std::move(mask));
    }
    return out;
}

namespace detail {

template <typename F>
void flip_plane(std::vector<float>& v, int planes, int H, int W, F index_map) {
    std::vector<float> tmp(static_cast<size_t>(H) * W);
    for (int p = 0; p < planes; ++p) {
        float* plane = v.data() + static_cast<size_t>(p) * H * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const auto [sy, sx] = index_map(y, x);
                tmp[static_cast<size_t>(y) * W + x] = plane[static_cast<size_t>(sy) * W + sx];
            }
        std::copy(tmp.begin(), tmp.end(), plane);
    }
}

} // namespace detail

struct AugmentDraws {
    bool rot180 = false;
    bool hflip = false;
    bool vflip = false;
    float alpha = 1.0f; // contrast
    float beta = 0.0f;  // brightness
};

inline AugmentDraws draw_augment(uint64_t seed) {
    std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
    std::bernoulli_distribution coin(0.5);
    AugmentDraws d;
    d.rot180 = coin(rng);
    d.hflip = coin(rng);
    d.vflip = coin(rng);
    d.alpha = std::uniform_real_distribution<float>(0.8f, 1.2f)(rng);
    d.beta = std::uniform_real_distribution<float>(-0.1f, 0.1f)(rng);
    return d;
}

// Geometric transforms apply to image and mask; the photometric jitter
// x ← clamp(α·(x−μ)+μ+β, 0, 1) with μ the image mean applies to the image
// only.
inline Sample augment_with(const Sample& s, const AugmentDraws& d) {
    Sample out;
    out.image = s.image.clone();
    out.mask = s.mask.clone();
    out.image_path = s.image_path;
    out.mask_path = s.mask_path;
    const int H = s.height(), W = s.width();

    auto apply_geo = [&](auto map) {
        detail::flip_plane(out.image.values(), 3, H, W, map);
        detail::flip_plane(out.mask.values(), 1, H, W, map);
    };
    if (d.rot180) apply_geo([H, W](int y, int x) { return std::pair(H - 1 - y, W - 1 - x); });
    if (d.hflip) apply_geo([W](int y, int x) { return std::pair(y, W - 1 - x); });
    if (d.vflip) apply_geo([H](int y, int x) { return std::pair(H - 1 - y, x); });

    if (d.alpha != 1.0f || d.beta != 0.0f) {
        auto& iv = out.image.values();
        double mean = 0;
        for (float v : iv) mean += v;
        const float mu = static_cast<float>(mean / static_cast<double>(iv.size()));
        for (auto& v : iv) v = std::clamp(d.alpha * (v - mu) + mu + d.beta, 0.0f, 1.0f);
    }
    return out;
}

// Independent Bernoulli(1/2) draws for the three geometric transforms plus
// uniform contrast/brightness jitter, fully determined by the seed.
inline Sample augment(const Sample& s, uint64_t seed) {
    return augment_with(s, draw_augment(seed));
}

struct PaddedSample {
    Sample sample;
    int orig_height = 0;
    int orig_width = 0;
};

// Reflect-pads right/bottom to the next multiples of m. Predictions are
// cropped back to the recorded size before any metric is computed.
inline PaddedSample pad_to_multiple(const Sample& s, int m = 16) {
    if (m < 1) throw ValueError("pad_to_multiple: multiple must be >= 1");
    const int H = s.height(), W = s.width();
    const int Hp = (H + m - 1) / m * m;
    const int Wp = (W + m - 1) / m * m;
    PaddedSample out;
    out.orig_height = H;
    out.orig_width = W;
    if (Hp == H && Wp == W) {
        out.sample = s;
        return out;
    }
    auto reflect = [](int i, int extent) {
        if (i < extent) return i;
        const int r = 2 * extent - 2 - i;
        return extent > 1 ? std::max(r, 0) : 0;
    };
    out.sample.image_path = s.image_path;
    out.sample.mask_path = s.mask_path;
    out.sample.image = Tensor<float>(Shape{3, Hp, Wp});
    out.sample.mask = Tensor<float>(Shape{Hp, Wp});
    const auto& src_im = s.image.values();
    const auto& src_mk = s.mask.values();
    auto& dst_im = out.sample.image.values();
    auto& dst_mk = out.sample.mask.values();
    for (int y = 0; y < Hp; ++y) {
        const int sy = reflect(y, H);
        for (int x = 0; x < Wp; ++x) {
            const int sx = reflect(x, W);
            for (int c = 0; c < 3; ++c)
                dst_im[(static_cast<size_t>(c) * Hp + y) * Wp + x] =
                    src_im[(static_cast<size_t>(c) * H + sy) * W + sx];
            dst_mk[static_cast<size_t>(y) * Wp + x] = src_mk[static_cast<size_t>(sy) * W + sx];
        }
    }
    return out;
}

// Crops an H_p×W_p probability map back to the original size.
inline Tensor<float> crop_map(const Tensor<float>& map, int height, int width) {
    if (map.rank() != 2) throw ShapeError("crop_map: expected H×W map, got " + shape_str(map.shape()));
    const int Hp = map.dim(0), Wp = map.dim(1);
    if (height > Hp || width > Wp)
        throw ShapeError("crop_map: target exceeds map extent");
    Tensor<float> out(Shape{height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out.values()[static_cast<size_t>(y) * width + x] =
                map.values()[static_cast<size_t>(y) * Wp + x];
    return out;
}

// List-backed dataset; loads (and caches) decoded samples on demand.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(SplitList list) : list_(std::move(list)), cache_(list_.size()) {}

    size_t size() const { return list_.entries.size(); }
    bool empty() const { return list_.entries.empty(); }

    const Sample& get(size_t i) const {
        if (i >= list_.entries.size()) throw ValueError("dataset index out of range");
        if (!cache_[i])
            cache_[i] = std::make_shared<Sample>(
                load_sample(list_.entries[i].first, list_.entries[i].second));
        return *cache_[i];
    }

    const SplitList& split() const { return list_; }

private:
    SplitList list_;
    mutable std::vector<std::shared_ptr<Sample>> cache_;
};

struct Batch {
    Tensor<float> images; // N×3×H×W
    Tensor<float> masks;  // N×H×W
    std::vector<size_t> indices;
};

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    // splitmix64 over the combined word
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e9b5ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937 rng(static_cast<uint32_t>(mix_seed(seed, static_cast<uint64_t>(epoch))));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

// Seeded shuffle each epoch; the final short batch is retained. All samples
// in one batch must share a padded size (use batch size 1 for mixed sizes).
inline std::vector<Batch> make_batches(const Dataset& ds, int batch_size, uint64_t seed, int epoch,
                                       bool augment_flag, int pad_multiple = 16) {
    if (batch_size < 1) throw ValueError("batch size must be >= 1");
    const auto order = epoch_order(ds.size(), seed, epoch);
    std::vector<Batch> out;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        const size_t n = std::min(static_cast<size_t>(batch_size), order.size() - start);
        std::vector<PaddedSample> padded;
        padded.reserve(n);
        for (size_t j = 0; j < n; ++j) {
            const size_t idx = order[start + j];
            Sample s = ds.get(idx);
            if (augment_flag)
                s = augment(s, mix_seed(mix_seed(seed, static_cast<uint64_t>(epoch)), idx));
            padded.push_back(pad_to_multiple(s, pad_multiple));
        }
        const int H = padded[0].sample.height(), W = padded[0].sample.width();
        for (const auto& p : padded)
            if (p.sample.height() != H || p.sample.width() != W)
                throw DataError("mixed padded sizes within a batch (" + std::to_string(W) + "x" +
                                std::to_string(H) + " vs " + std::to_string(p.sample.width()) +
                                "x" + std::to_string(p.sample.height()) +
                                "); use batch size 1 for mixed-size datasets");
        Batch b;
        b.images = Tensor<float>(Shape{static_cast<int>(n), 3, H, W});
        b.masks = Tensor<float>(Shape{static_cast<int>(n), H, W});
        const size_t img_n = static_cast<size_t>(3) * H * W;
        const size_t msk_n = static_cast<size_t>(H) * W;
        for (size_t j = 0; j < n; ++j) {
            std::copy(padded[j].sample.image.values().begin(), padded[j].sample.image.values().end(),
                      b.images.values().begin() + static_cast<int64_t>(j * img_n));
            std::copy(padded[j].sample.mask.values().begin(), padded[j].sample.mask.values().end(),
                      b.masks.values().begin() + static_cast<int64_t>(j * msk_n));
            b.indices.push_back(order[start + j]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

} // namespace data
} // namespace rhanet
