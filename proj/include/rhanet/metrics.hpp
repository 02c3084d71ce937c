#pragma once

// Tolerance-based confusion counting and the evaluation harness: a predicted
// crack pixel counts as matched when it lies within `tol` pixels (Euclidean)
// of any ground-truth crack pixel, and symmetrically for recall.

#include <chrono>
#include <json.hpp>

#include "rhanet/dataset.hpp"
#include "rhanet/model.hpp"

namespace rhanet {
namespace metrics {

inline constexpr const char* kToolVersion = "1.0.0";

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> v; // 0 or 1, row-major

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), v(static_cast<size_t>(h) * w, 0) {}

    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    int64_t count() const {
        int64_t n = 0;
        for (uint8_t b : v) n += b;
        return n;
    }
};

// p ≥ threshold → positive (boundary inclusive).
inline BinaryMask binarize(const Tensor<float>& probs, double threshold = 0.5) {
    if (probs.rank() != 2)
        throw ShapeError("binarize: expected H×W probability map, got " + shape_str(probs.shape()));
    BinaryMask m(probs.dim(0), probs.dim(1));
    const auto& p = probs.values();
    for (size_t i = 0; i < p.size(); ++i) m.v[i] = p[i] >= static_cast<float>(threshold) ? 1 : 0;
    return m;
}

inline BinaryMask mask_from_tensor(const Tensor<float>& t) {
    return binarize(t, 0.5);
}

// Integer offsets (dy,dx) with dy²+dx² ≤ tol².
inline std::vector<std::pair<int, int>> disk_offsets(double tol) {
    if (tol < 0) throw ValueError("tolerance must be non-negative");
    const int r = static_cast<int>(std::floor(tol));
    std::vector<std::pair<int, int>> out;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (static_cast<double>(dy) * dy + static_cast<double>(dx) * dx <= tol * tol)
                out.emplace_back(dy, dx);
    return out;
}

// Binary dilation by the exact Euclidean disk of radius tol.
inline BinaryMask dilate_disk(const BinaryMask& m, double tol) {
    const auto offs = disk_offsets(tol);
    BinaryMask out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            for (const auto& [dy, dx] : offs) {
                const int ny = y + dy, nx = x + dx;
                if (ny >= 0 && ny < m.height && nx >= 0 && nx < m.width) out.at(ny, nx) = 1;
            }
        }
    return out;
}

struct ToleranceConfusion {
    int64_t matched_pred = 0; // predicted positives within tol of any GT positive
    int64_t pred_total = 0;
    int64_t matched_gt = 0; // GT positives within tol of any predicted positive
    int64_t gt_total = 0;
    double tol = 2.0;
};

inline ToleranceConfusion confusion_with_tolerance(const BinaryMask& pred, const BinaryMask& gt,
                                                   double tol = 2.0) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw ShapeError("confusion: prediction " + std::to_string(pred.width) + "x" +
                         std::to_string(pred.height) + " and ground truth " +
                         std::to_string(gt.width) + "x" + std::to_string(gt.height) +
                         " shapes differ");
    ToleranceConfusion c;
    c.tol = tol;
    const BinaryMask gt_dil = dilate_disk(gt, tol);
    const BinaryMask pred_dil = dilate_disk(pred, tol);
    for (size_t i = 0; i < pred.v.size(); ++i) {
        if (pred.v[i]) {
            ++c.pred_total;
            if (gt_dil.v[i]) ++c.matched_pred;
        }
        if (gt.v[i]) {
            ++c.gt_total;
            if (pred_dil.v[i]) ++c.matched_gt;
        }
    }
    return c;
}

struct PrReF1 {
    double pr = 0, re = 0, f1 = 0;
};

// Degenerate denominators: no prediction and no truth count as a perfect
// image; otherwise an empty side scores zero.
inline PrReF1 pr_re_f1(const ToleranceConfusion& c) {
    PrReF1 r;
    if (c.pred_total == 0 && c.gt_total == 0) {
        r.pr = r.re = r.f1 = 1.0;
        return r;
    }
    r.pr = c.pred_total > 0 ? static_cast<double>(c.matched_pred) / static_cast<double>(c.pred_total) : 0.0;
    r.re = c.gt_total > 0 ? static_cast<double>(c.matched_gt) / static_cast<double>(c.gt_total) : 0.0;
    r.f1 = (r.pr + r.re) > 0 ? 2.0 * r.pr * r.re / (r.pr + r.re) : 0.0;
    return r;
}

struct ImageMetrics {
    std::string name;
    double pr = 0, re = 0, f1 = 0;
    double seconds = 0; // pure forward time
};

struct PrCurvePoint {
    double t = 0, pr = 0, re = 0;
};

struct MetricsReport {
    std::string tool_version = kToolVersion;
    double threshold = 0.5;
    double tolerance = 2.0;
    std::vector<ImageMetrics> per_image;
    PrReF1 macro; // mean of per-image metrics: the headline aggregate
    PrReF1 micro; // pooled pixel counts
    std::vector<PrCurvePoint> pr_curve;
    int64_t params = 0;
    int64_t flops = 0;
    double total_seconds = 0;
};

struct EvalOptions {
    double threshold = 0.5;
    double tolerance = 2.0;
    bool with_pr_curve = true;
};

namespace detail {

// Streaming accumulator; per-image probability maps are dropped as soon as
// their confusion counts and curve contributions are recorded.
class ReportBuilder {
public:
    explicit ReportBuilder(const EvalOptions& opts) : opts_(opts) {
        if (opts.with_pr_curve)
            for (int i = 1; i <= 99; ++i)
                curve_acc_.push_back({static_cast<double>(i) / 100.0, 0.0, 0.0});
    }

    void add(const std::string& name, const Tensor<float>& probs, const BinaryMask& gt,
             double forward_seconds) {
        const BinaryMask pred = binarize(probs, opts_.threshold);
        const auto conf = confusion_with_tolerance(pred, gt, opts_.tolerance);
        const auto prf = pr_re_f1(conf);
        report_.per_image.push_back({name, prf.pr, prf.re, prf.f1, forward_seconds});
        pooled_.matched_pred += conf.matched_pred;
        pooled_.pred_total += conf.pred_total;
        pooled_.matched_gt += conf.matched_gt;
        pooled_.gt_total += conf.gt_total;
        if (opts_.with_pr_curve) add_curve(probs, gt);
    }

    MetricsReport finish() {
        const size_t n = report_.per_image.size();
        for (const auto& im : report_.per_image) {
            report_.macro.pr += im.pr;
            report_.macro.re += im.re;
            report_.macro.f1 += im.f1;
        }
        if (n > 0) {
            report_.macro.pr /= static_cast<double>(n);
            report_.macro.re /= static_cast<double>(n);
            report_.macro.f1 /= static_cast<double>(n);
        }
        report_.micro = pr_re_f1(pooled_);
        if (opts_.with_pr_curve && n > 0)
            for (auto& pt : curve_acc_)
                report_.pr_curve.push_back(
                    {pt.t, pt.pr / static_cast<double>(n), pt.re / static_cast<double>(n)});
        report_.threshold = opts_.threshold;
        report_.tolerance = opts_.tolerance;
        return std::move(report_);
    }

private:
    // Equivalent to running confusion_with_tolerance at every threshold: a
    // predicted pixel is matched iff it falls in the dilated ground truth,
    // and a GT pixel is matched iff the max probability over its disk clears
    // the threshold.
    void add_curve(const Tensor<float>& probs, const BinaryMask& gt) {
        const int H = probs.dim(0), W = probs.dim(1);
        const BinaryMask gt_dil = dilate_disk(gt, opts_.tolerance);
        const auto offs = disk_offsets(opts_.tolerance);
        const auto& p = probs.values();
        std::vector<float> gt_best;
        gt_best.reserve(static_cast<size_t>(gt.count()));
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (!gt.at(y, x)) continue;
                float best = 0.0f;
                for (const auto& [dy, dx] : offs) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny >= 0 && ny < H && nx >= 0 && nx < W)
                        best = std::max(best, p[static_cast<size_t>(ny) * W + nx]);
                }
                gt_best.push_back(best);
            }
        for (auto& pt : curve_acc_) {
            const float t = static_cast<float>(pt.t);
            ToleranceConfusion c;
            c.gt_total = static_cast<int64_t>(gt_best.size());
            for (size_t i = 0; i < p.size(); ++i)
                if (p[i] >= t) {
                    ++c.pred_total;
                    if (gt_dil.v[i]) ++c.matched_pred;
                }
            for (float b : gt_best)
                if (b >= t) ++c.matched_gt;
            const auto prf = pr_re_f1(c);
            pt.pr += prf.pr;
            pt.re += prf.re;
        }
    }

    EvalOptions opts_;
    MetricsReport report_;
    ToleranceConfusion pooled_;
    std::vector<PrCurvePoint> curve_acc_;
};

} // namespace detail

// Runs the model over every sample (padding and cropping as needed) and
// aggregates per-image, macro and micro metrics plus the PR curve.
inline MetricsReport evaluate_model(Model<float>& model, const data::Dataset& ds,
                                    const EvalOptions& opts = {}) {
    if (ds.empty()) throw DataError("evaluate: empty split");
    detail::ReportBuilder builder(opts);
    const auto t_total0 = std::chrono::steady_clock::now();
    for (size_t i = 0; i < ds.size(); ++i) {
        const data::Sample& s = ds.get(i);
        const auto padded = data::pad_to_multiple(s, kSpatialMultiple);
        const int Hp = padded.sample.height(), Wp = padded.sample.width();
        Tensor<float> x = ops::reshape(padded.sample.image, Shape{1, 3, Hp, Wp});
        const auto t0 = std::chrono::steady_clock::now();
        Tensor<float> out = model.predict(x);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        Tensor<float> crack = ops::reshape(ops::slice_channels(out, 1, 2), Shape{Hp, Wp});
        Tensor<float> cropped = data::crop_map(crack, s.height(), s.width());
        builder.add(s.image_path, cropped, mask_from_tensor(s.mask), secs);
    }
    MetricsReport r = builder.finish();
    r.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_total0).count();
    r.params = model.param_count();
    return r;
}

// Evaluates a directory of already-predicted masks (named like the listed
// image files) against the split's ground truth.
inline MetricsReport evaluate_mask_dir(const std::string& pred_dir, const data::Dataset& ds,
                                       const EvalOptions& opts = {}) {
    if (ds.empty()) throw DataError("evaluate: empty split");
    detail::ReportBuilder builder(opts);
    const auto t_total0 = std::chrono::steady_clock::now();
    for (size_t i = 0; i < ds.size(); ++i) {
        const data::Sample& s = ds.get(i);
        const std::string name = std::filesystem::path(s.image_path).filename().string();
        std::filesystem::path pred_path = std::filesystem::path(pred_dir) / name;
        if (!std::filesystem::exists(pred_path))
            pred_path.replace_extension(".png");
        if (!std::filesystem::exists(pred_path))
            throw DataError("missing prediction for listed image: " +
                            (std::filesystem::path(pred_dir) / name).string());
        const img::Image pm = img::read_image(pred_path.string());
        if (pm.width != s.width() || pm.height != s.height())
            throw DataError("prediction " + pred_path.string() + " size differs from image");
        Tensor<float> probs(Shape{pm.height, pm.width});
        for (int y = 0; y < pm.height; ++y)
            for (int x = 0; x < pm.width; ++x)
                probs.values()[static_cast<size_t>(y) * pm.width + x] =
                    static_cast<float>(pm.at(y, x, 0)) / 255.0f;
        builder.add(s.image_path, probs, mask_from_tensor(s.mask), 0.0);
    }
    MetricsReport r = builder.finish();
    r.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_total0).count();
    return r;
}

// Fig-style overlay: green = matched predicted positives, red = unmatched
// predicted positives, blue = unmatched GT positives; the rest shows the
// source image (when given) or black.
inline img::Image render_overlay(const BinaryMask& pred, const BinaryMask& gt, double tol,
                                 const img::Image* background = nullptr) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw ShapeError("render_overlay: prediction " + std::to_string(pred.width) + "x" +
                         std::to_string(pred.height) + " and ground truth " +
                         std::to_string(gt.width) + "x" + std::to_string(gt.height) +
                         " shapes differ");
    const BinaryMask gt_dil = dilate_disk(gt, tol);
    const BinaryMask pred_dil = dilate_disk(pred, tol);
    img::Image out;
    out.width = pred.width;
    out.height = pred.height;
    out.channels = 3;
    out.pixels.assign(static_cast<size_t>(out.width) * out.height * 3, 0);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            uint8_t r = 0, g = 0, b = 0;
            if (background && background->width == out.width && background->height == out.height) {
                r = background->channels == 1 ? background->at(y, x, 0) : background->at(y, x, 0);
                g = background->channels == 1 ? background->at(y, x, 0) : background->at(y, x, 1);
                b = background->channels == 1 ? background->at(y, x, 0) : background->at(y, x, 2);
            }
            if (pred.at(y, x)) {
                if (gt_dil.at(y, x)) {
                    r = 0; g = 255; b = 0;
                } else {
                    r = 255; g = 0; b = 0;
                }
            } else if (gt.at(y, x) && !pred_dil.at(y, x)) {
                r = 0; g = 0; b = 255;
            }
            out.at(y, x, 0) = r;
            out.at(y, x, 1) = g;
            out.at(y, x, 2) = b;
        }
    return out;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["tool_version"] = r.tool_version;
    j["threshold"] = r.threshold;
    j["tolerance"] = r.tolerance;
    j["per_image"] = nlohmann::json::array();
    for (const auto& im : r.per_image)
        j["per_image"].push_back(
            {{"name", im.name}, {"pr", im.pr}, {"re", im.re}, {"f1", im.f1}, {"seconds", im.seconds}});
    j["macro"] = {{"pr", r.macro.pr}, {"re", r.macro.re}, {"f1", r.macro.f1}};
    j["micro"] = {{"pr", r.micro.pr}, {"re", r.micro.re}, {"f1", r.micro.f1}};
    j["pr_curve"] = nlohmann::json::array();
    for (const auto& pt : r.pr_curve)
        j["pr_curve"].push_back({{"t", pt.t}, {"pr", pt.pr}, {"re", pt.re}});
    j["params"] = r.params;
    j["flops"] = r.flops;
    j["total_seconds"] = r.total_seconds;
    return j;
}

inline void write_report(const std::string& path, const MetricsReport& r) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open report for writing: " + path);
    f << report_to_json(r).dump(2) << "\n";
}

} // namespace metrics
} // namespace rhanet
