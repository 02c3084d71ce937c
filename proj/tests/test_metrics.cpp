#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace rhanet;
using namespace rhanet::metrics;
using testutil::temp_dir;

namespace {

BinaryMask random_mask(int h, int w, double density, std::mt19937& rng) {
    BinaryMask m(h, w);
    std::bernoulli_distribution on(density);
    for (auto& v : m.v) v = on(rng) ? 1 : 0;
    return m;
}

// O(|P|·|G|) nearest-distance scan, the oracle for the dilation counts.
ToleranceConfusion brute_force_confusion(const BinaryMask& pred, const BinaryMask& gt, double tol) {
    std::vector<std::pair<int, int>> ps, gs;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (pred.at(y, x)) ps.emplace_back(y, x);
            if (gt.at(y, x)) gs.emplace_back(y, x);
        }
    auto matched = [&](const std::vector<std::pair<int, int>>& from,
                       const std::vector<std::pair<int, int>>& to) {
        int64_t n = 0;
        for (const auto& [fy, fx] : from) {
            bool hit = false;
            for (const auto& [ty, tx] : to) {
                const double d2 = static_cast<double>(fy - ty) * (fy - ty) +
                                  static_cast<double>(fx - tx) * (fx - tx);
                if (d2 <= tol * tol) {
                    hit = true;
                    break;
                }
            }
            n += hit ? 1 : 0;
        }
        return n;
    };
    ToleranceConfusion c;
    c.tol = tol;
    c.pred_total = static_cast<int64_t>(ps.size());
    c.gt_total = static_cast<int64_t>(gs.size());
    c.matched_pred = matched(ps, gs);
    c.matched_gt = matched(gs, ps);
    return c;
}

} // namespace

TEST_CASE("binarize") {
    Tensor<float> p(Shape{1, 3}, {0.49f, 0.5f, 0.51f});
    const auto m = binarize(p, 0.5);
    CHECK(m.v == std::vector<uint8_t>{0, 1, 1}); // boundary inclusive

    const auto empty = binarize(Tensor<float>(Shape{2, 2}, 0.0f), 0.5);
    CHECK(empty.count() == 0);

    // monotone: lowering the threshold can only add positives
    std::mt19937 rng(81);
    std::uniform_real_distribution<float> d(0.f, 1.f);
    Tensor<float> probs(Shape{16, 16});
    for (auto& v : probs.values()) v = d(rng);
    const auto hi = binarize(probs, 0.7);
    const auto lo = binarize(probs, 0.3);
    for (size_t i = 0; i < hi.v.size(); ++i)
        if (hi.v[i]) CHECK(lo.v[i]);
}

TEST_CASE("tolerance confusion basics") {
    SECTION("identical nonempty masks match fully") {
        std::mt19937 rng(82);
        const auto m = random_mask(20, 20, 0.2, rng);
        const auto c = confusion_with_tolerance(m, m, 2.0);
        CHECK(c.matched_pred == c.pred_total);
        CHECK(c.matched_gt == c.gt_total);
        CHECK(c.pred_total > 0);
    }
    SECTION("distance 2 matches, sqrt(5) does not") {
        BinaryMask gt(24, 24), pred(24, 24);
        gt.at(10, 10) = 1;
        pred.at(10, 12) = 1;
        auto c = confusion_with_tolerance(pred, gt, 2.0);
        CHECK(c.matched_pred == 1);
        CHECK(c.matched_gt == 1);
        pred.at(10, 12) = 0;
        pred.at(11, 12) = 1; // distance sqrt(5) > 2
        c = confusion_with_tolerance(pred, gt, 2.0);
        CHECK(c.matched_pred == 0);
        CHECK(c.matched_gt == 0);
    }
    SECTION("shape mismatch is rejected") {
        CHECK_THROWS_AS(confusion_with_tolerance(BinaryMask(4, 4), BinaryMask(4, 5), 2.0),
                        ShapeError);
    }
}

TEST_CASE("dilation counts equal the brute-force nearest-distance scan") {
    std::mt19937 rng(83);
    for (int trial = 0; trial < 30; ++trial) {
        const auto pred = random_mask(32, 32, 0.05 + 0.01 * (trial % 5), rng);
        const auto gt = random_mask(32, 32, 0.05, rng);
        for (double tol : {0.0, 1.0, 2.0, 5.0}) {
            const auto fast = confusion_with_tolerance(pred, gt, tol);
            const auto slow = brute_force_confusion(pred, gt, tol);
            CHECK(fast.matched_pred == slow.matched_pred);
            CHECK(fast.matched_gt == slow.matched_gt);
            CHECK(fast.pred_total == slow.pred_total);
            CHECK(fast.gt_total == slow.gt_total);
        }
    }
}

TEST_CASE("confusion properties") {
    std::mt19937 rng(84);
    const auto a = random_mask(24, 24, 0.1, rng);
    const auto b = random_mask(24, 24, 0.1, rng);

    SECTION("tol=0 reduces to exact pixel-wise confusion") {
        const auto c = confusion_with_tolerance(a, b, 0.0);
        int64_t inter = 0;
        for (size_t i = 0; i < a.v.size(); ++i) inter += (a.v[i] && b.v[i]) ? 1 : 0;
        CHECK(c.matched_pred == inter);
        CHECK(c.matched_gt == inter);
    }
    SECTION("matched counts are non-decreasing in tol") {
        int64_t prev_mp = -1, prev_mg = -1;
        for (double tol : {0.0, 1.0, 2.0, 3.0, 5.0}) {
            const auto c = confusion_with_tolerance(a, b, tol);
            CHECK(c.matched_pred >= prev_mp);
            CHECK(c.matched_gt >= prev_mg);
            prev_mp = c.matched_pred;
            prev_mg = c.matched_gt;
        }
    }
    SECTION("swapping pred and gt swaps the count pairs") {
        const auto c1 = confusion_with_tolerance(a, b, 2.0);
        const auto c2 = confusion_with_tolerance(b, a, 2.0);
        CHECK(c1.matched_pred == c2.matched_gt);
        CHECK(c1.pred_total == c2.gt_total);
        CHECK(c1.matched_gt == c2.matched_pred);
        CHECK(c1.gt_total == c2.pred_total);
    }
}

TEST_CASE("precision, recall, F1") {
    SECTION("full match gives (1,1,1)") {
        const auto r = pr_re_f1({10, 10, 7, 7, 2.0});
        CHECK(r.pr == 1.0);
        CHECK(r.re == 1.0);
        CHECK(r.f1 == 1.0);
    }
    SECTION("harmonic mean fixed point and the 2/3 example") {
        const auto r = pr_re_f1({6, 10, 6, 10, 2.0});
        CHECK(r.f1 == Catch::Approx(0.6));
        const auto r2 = pr_re_f1({10, 10, 5, 10, 2.0}); // Pr=1, Re=0.5
        CHECK(r2.f1 == Catch::Approx(2.0 / 3.0));
    }
    SECTION("degenerate denominators") {
        auto r = pr_re_f1({0, 0, 0, 0, 2.0}); // nothing predicted, nothing true
        CHECK((r.pr == 1.0 && r.re == 1.0 && r.f1 == 1.0));
        r = pr_re_f1({0, 0, 0, 5, 2.0}); // empty prediction, nonempty truth
        CHECK(r.pr == 0.0);
        CHECK(r.f1 == 0.0);
        r = pr_re_f1({0, 5, 0, 0, 2.0}); // nonempty prediction, empty truth
        CHECK(r.re == 0.0);
        CHECK(r.f1 == 0.0);
    }
}

namespace {

// Writes a split list plus a prediction directory and returns (data dir,
// prediction dir). Images are flat gray; masks and predictions are crafted
// per test.
struct EvalFixture {
    std::string dir;
    std::string pred_dir;
    std::string list;

    EvalFixture(const std::string& tag, const std::vector<BinaryMask>& gts,
                const std::vector<BinaryMask>& preds)
        : dir(temp_dir(tag)), pred_dir(dir + "/pred") {
        namespace fs = std::filesystem;
        fs::create_directories(dir + "/images");
        fs::create_directories(dir + "/masks");
        fs::create_directories(pred_dir);
        std::ofstream f(dir + "/list.txt");
        for (size_t i = 0; i < gts.size(); ++i) {
            const std::string name = "im" + std::to_string(i) + ".png";
            img::Image image;
            image.width = gts[i].width;
            image.height = gts[i].height;
            image.channels = 3;
            image.pixels.assign(static_cast<size_t>(image.width) * image.height * 3, 90);
            img::write_png(dir + "/images/" + name, image);
            auto mask_png = [&](const BinaryMask& m) {
                img::Image out;
                out.width = m.width;
                out.height = m.height;
                out.channels = 1;
                out.pixels.resize(m.v.size());
                for (size_t j = 0; j < m.v.size(); ++j) out.pixels[j] = m.v[j] ? 255 : 0;
                return out;
            };
            img::write_png(dir + "/masks/" + name, mask_png(gts[i]));
            img::write_png(pred_dir + "/" + name, mask_png(preds[i]));
            f << "images/" << name << "\tmasks/" << name << "\n";
        }
        f.close();
        list = dir + "/list.txt";
    }
};

} // namespace

TEST_CASE("evaluate_mask_dir aggregates per-image metrics") {
    BinaryMask gt1(16, 16), gt2(16, 16), pred2(16, 16);
    gt1.at(4, 4) = 1;
    gt1.at(8, 8) = 1;
    // image 2: Pr = Re = 0.5 -> F1 = 0.5
    gt2.at(2, 2) = 1;
    gt2.at(12, 12) = 1;
    pred2.at(2, 2) = 1;
    pred2.at(7, 7) = 1;
    EvalFixture fx("evalmacro", {gt1, gt2}, {gt1, pred2});

    data::Dataset ds(data::load_split_list(fx.list, fx.dir));
    const auto report = evaluate_mask_dir(fx.pred_dir, ds, {0.5, 2.0, true});
    REQUIRE(report.per_image.size() == 2);
    CHECK(report.per_image[0].f1 == 1.0);
    CHECK(report.per_image[1].f1 == Catch::Approx(0.5));
    CHECK(report.macro.f1 == Catch::Approx(0.75)); // mean of per-image F1
    // pooled counts: matched 3 of 4 on both sides
    CHECK(report.micro.pr == Catch::Approx(0.75));
    CHECK(report.micro.re == Catch::Approx(0.75));

    SECTION("PR curve at threshold 0.5 reproduces the headline Pr/Re") {
        const auto& curve = report.pr_curve;
        REQUIRE(curve.size() == 99);
        const auto mid = curve[49]; // t = 0.50
        CHECK(mid.t == Catch::Approx(0.5));
        CHECK(mid.pr == Catch::Approx(report.macro.pr));
        CHECK(mid.re == Catch::Approx(report.macro.re));
    }
    SECTION("identical predictions give a perfect report") {
        const auto perfect = evaluate_mask_dir(fx.dir + "/masks", ds, {0.5, 2.0, false});
        CHECK(perfect.macro.pr == 1.0);
        CHECK(perfect.macro.re == 1.0);
        CHECK(perfect.macro.f1 == 1.0);
    }
    SECTION("missing prediction is an error") {
        std::filesystem::remove(fx.pred_dir + "/im0.png");
        CHECK_THROWS_WITH(evaluate_mask_dir(fx.pred_dir, ds, {}),
                          Catch::Matchers::ContainsSubstring("im0"));
    }
}

TEST_CASE("macro aggregation is order-invariant") {
    std::mt19937 rng(85);
    BinaryMask g1 = random_mask(12, 12, 0.2, rng), p1 = random_mask(12, 12, 0.2, rng);
    BinaryMask g2 = random_mask(12, 12, 0.3, rng), p2 = random_mask(12, 12, 0.1, rng);
    EvalFixture a("ord_a", {g1, g2}, {p1, p2});
    EvalFixture b("ord_b", {g2, g1}, {p2, p1});
    const auto ra = evaluate_mask_dir(a.pred_dir, data::Dataset(data::load_split_list(a.list, a.dir)),
                                      {0.5, 2.0, false});
    const auto rb = evaluate_mask_dir(b.pred_dir, data::Dataset(data::load_split_list(b.list, b.dir)),
                                      {0.5, 2.0, false});
    CHECK(ra.macro.f1 == Catch::Approx(rb.macro.f1));
}

TEST_CASE("overlay colors mirror the confusion counts") {
    std::mt19937 rng(86);
    SECTION("pred == gt gives green and background only") {
        const auto m = random_mask(16, 16, 0.2, rng);
        const auto overlay = render_overlay(m, m, 2.0);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                if (m.at(y, x)) {
                    CHECK(overlay.at(y, x, 1) == 255);
                    CHECK(overlay.at(y, x, 0) == 0);
                } else {
                    CHECK(overlay.at(y, x, 2) == 0); // no blue anywhere
                }
            }
    }
    SECTION("empty prediction, nonempty truth gives blue only") {
        BinaryMask gt(8, 8);
        gt.at(3, 3) = 1;
        const auto overlay = render_overlay(BinaryMask(8, 8), gt, 2.0);
        CHECK(overlay.at(3, 3, 2) == 255);
        CHECK(overlay.at(3, 3, 1) == 0);
    }
    SECTION("color counts equal the confusion counts on random pairs") {
        for (int trial = 0; trial < 10; ++trial) {
            const auto pred = random_mask(24, 24, 0.15, rng);
            const auto gt = random_mask(24, 24, 0.15, rng);
            const auto c = confusion_with_tolerance(pred, gt, 2.0);
            const auto overlay = render_overlay(pred, gt, 2.0);
            int64_t green = 0, red = 0, blue = 0;
            for (int y = 0; y < 24; ++y)
                for (int x = 0; x < 24; ++x) {
                    const bool g = overlay.at(y, x, 1) == 255 && overlay.at(y, x, 0) == 0;
                    const bool r = overlay.at(y, x, 0) == 255;
                    const bool b = overlay.at(y, x, 2) == 255;
                    green += g ? 1 : 0;
                    red += r ? 1 : 0;
                    blue += b ? 1 : 0;
                }
            CHECK(green == c.matched_pred);
            CHECK(red == c.pred_total - c.matched_pred);
            CHECK(blue == c.gt_total - c.matched_gt);
        }
    }
}

TEST_CASE("report serialization carries the full schema") {
    MetricsReport r;
    r.threshold = 0.5;
    r.tolerance = 2.0;
    r.per_image.push_back({"a.png", 1.0, 0.5, 2.0 / 3.0, 0.01});
    r.macro = {1.0, 0.5, 2.0 / 3.0};
    r.micro = {0.9, 0.6, 0.72};
    r.pr_curve.push_back({0.5, 0.9, 0.8});
    r.params = 42;
    r.flops = 1000;
    const auto j = report_to_json(r);
    CHECK(j["tool_version"] == kToolVersion);
    CHECK(j["per_image"][0]["name"] == "a.png");
    CHECK(j["macro"]["f1"] == Catch::Approx(2.0 / 3.0));
    CHECK(j["pr_curve"][0]["t"] == 0.5);
    CHECK(j["params"] == 42);
    const std::string dir = temp_dir("report");
    write_report(dir + "/report.json", r);
    std::ifstream f(dir + "/report.json");
    nlohmann::json parsed;
    f >> parsed;
    CHECK(parsed["flops"] == 1000);
}
