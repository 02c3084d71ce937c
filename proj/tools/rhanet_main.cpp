// Command-line entry point: train / eval / predict / bench / inspect.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "rhanet/rhanet.hpp"

namespace {

using namespace rhanet;

struct CommonArgs {
    std::string data_root;
    std::string variant = "rha";
    int width = 16;
    uint64_t seed = 0;
    double threshold = 0.5;
    double tolerance = 2.0;
    std::string out = "out";
};

// `key = value` configuration lines become subcommand options. They are
// spliced in ahead of the explicit flags, and every option takes its last
// occurrence, so flags win; unknown keys fail the closed option set.
std::vector<std::string> load_config_tokens(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file: " + path);
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    };
    std::vector<std::string> tokens;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? std::string() : trim(line.substr(0, eq));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected `key = value`");
        if (key == "config")
            throw ConfigError(path + ":" + std::to_string(lineno) + ": nested config files are not supported");
        tokens.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
    }
    return tokens;
}

std::vector<std::string> expand_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    size_t sub_idx = args.size();
    std::string config_path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (sub_idx == args.size() && !args[i].empty() && args[i][0] != '-') {
            sub_idx = i;
        } else if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        }
    }
    if (!config_path.empty() && sub_idx < args.size()) {
        const auto tokens = load_config_tokens(config_path);
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_idx) + 1, tokens.begin(),
                    tokens.end());
    }
    return args;
}

void add_common(CLI::App* cmd, CommonArgs& a, bool data_root_required) {
    cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    static std::string config_sink;
    cmd->add_option("--config", config_sink, "Configuration file (key = value lines)");
    auto* root = cmd->add_option("--data-root", a.data_root, "Directory split-list paths resolve against");
    if (data_root_required) root->required();
    cmd->add_option("--variant", a.variant, "Network variant")
        ->check(CLI::IsMember({"baseline", "baseline-rb", "baseline-hab", "rha", "rha-lite"}));
    cmd->add_option("--width", a.width, "Base channel width W")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", a.seed, "Seed for init/shuffle/augmentation");
    cmd->add_option("--threshold", a.threshold, "Probability threshold")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--tolerance", a.tolerance, "Match tolerance in pixels")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", a.out, "Output directory");
}

ModelConfig model_config(const CommonArgs& a) {
    ModelConfig cfg;
    cfg.variant = parse_variant(a.variant);
    cfg.base_width = a.width;
    return cfg;
}

Model<float> model_from_checkpoint(const std::string& path) {
    const Checkpoint c = load_checkpoint(path);
    Model<float> m = build<float>(c.config, 0);
    apply_checkpoint(c, m);
    return m;
}

Shape parse_chw(const std::string& s) {
    Shape dims;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next = s.find('x', pos);
        if (next == std::string::npos) next = s.size();
        dims.push_back(std::stoi(s.substr(pos, next - pos)));
        pos = next + 1;
    }
    if (dims.size() != 3 || dims[0] != 3)
        throw ConfigError("--shape must be CxHxW with C=3, got '" + s + "'");
    return dims;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonArgs common;
    std::string train_list;
    std::string val_list;
    std::string resume;
    int epochs = 500;
    int batch = 8;
    double lr = 1e-3;
    double omega_p = -1.0; // auto
    int checkpoint_interval = 50;
    bool no_augment = false;
};

int run_train(const TrainArgs& a) {
    data::Dataset train_set(data::load_split_list(a.train_list, a.common.data_root));
    data::Dataset val_set = a.val_list.empty()
                                ? train_set
                                : data::Dataset(data::load_split_list(a.val_list, a.common.data_root));

    train::FitSchedule sched;
    sched.epochs = a.epochs;
    sched.batch_size = a.batch;
    sched.lr = static_cast<float>(a.lr);
    sched.seed = a.common.seed;
    sched.checkpoint_interval = a.checkpoint_interval;
    sched.out_dir = a.common.out;
    sched.loss.omega_p = a.omega_p;
    sched.threshold = a.common.threshold;
    sched.tolerance = a.common.tolerance;
    sched.augment = !a.no_augment;

    Model<float> model;
    Adam<float> opt;
    Adam<float>* opt_ptr = nullptr;
    if (!a.resume.empty()) {
        const Checkpoint c = load_checkpoint(a.resume);
        model = build<float>(c.config, a.common.seed);
        apply_checkpoint(c, model);
        opt = Adam<float>(model.names.params, {sched.lr});
        if (c.has_optimizer) apply_optimizer_state(c, opt);
        opt_ptr = &opt;
        sched.start_epoch = static_cast<int>(c.epoch);
        std::printf("resuming %s W=%d at epoch %u\n", variant_name(c.config.variant),
                    c.config.base_width, c.epoch);
    } else {
        model = build<float>(model_config(a.common), a.common.seed);
    }

    std::printf("training %s W=%d on %zu images (val %zu), %d epochs, batch %d\n",
                variant_name(model.cfg.variant), model.cfg.base_width, train_set.size(),
                val_set.size(), a.epochs, a.batch);
    const auto result = train::fit(model, train_set, val_set, sched, opt_ptr);
    for (const auto& e : result.history)
        std::printf("epoch %4d  train_loss %.6f  val_f1 %.4f\n", e.epoch, e.train_loss, e.val_f1);

    std::filesystem::create_directories(a.common.out);
    train::write_history_csv(a.common.out + "/history.csv", result.history);

    metrics::EvalOptions opts;
    opts.threshold = a.common.threshold;
    opts.tolerance = a.common.tolerance;
    auto report = metrics::evaluate_model(model, val_set, opts);
    const auto& first = val_set.get(0);
    const auto padded = data::pad_to_multiple(first, kSpatialMultiple);
    report.flops = count_flops(model.cfg, padded.sample.height(), padded.sample.width());
    metrics::write_report(a.common.out + "/report.json", report);
    std::printf("done: macro F1 %.4f (report %s/report.json)\n", report.macro.f1,
                a.common.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    CommonArgs common;
    std::string list;
    std::string checkpoint;
    std::string pred_dir;
    bool overlays = false;
};

struct MetricsReportHolder {
    std::optional<Model<float>> model;
};

int run_eval(const EvalArgs& a) {
    if (a.checkpoint.empty() == a.pred_dir.empty())
        throw ConfigError("eval needs exactly one of --checkpoint or --pred-dir");
    data::Dataset ds(data::load_split_list(a.list, a.common.data_root));
    metrics::EvalOptions opts;
    opts.threshold = a.common.threshold;
    opts.tolerance = a.common.tolerance;

    MetricsReportHolder holder; // keeps the model alive for overlays
    metrics::MetricsReport report;
    if (!a.checkpoint.empty()) {
        holder.model = model_from_checkpoint(a.checkpoint);
        report = metrics::evaluate_model(*holder.model, ds, opts);
        const auto padded = data::pad_to_multiple(ds.get(0), kSpatialMultiple);
        report.flops = count_flops(holder.model->cfg, padded.sample.height(), padded.sample.width());
    } else {
        report = metrics::evaluate_mask_dir(a.pred_dir, ds, opts);
    }

    std::filesystem::create_directories(a.common.out);
    metrics::write_report(a.common.out + "/report.json", report);
    if (a.overlays) {
        const std::string dir = a.common.out + "/overlays";
        std::filesystem::create_directories(dir);
        for (size_t i = 0; i < ds.size(); ++i) {
            const auto& s = ds.get(i);
            metrics::BinaryMask pred;
            if (holder.model) {
                const auto padded = data::pad_to_multiple(s, kSpatialMultiple);
                auto x = ops::reshape(padded.sample.image,
                                      Shape{1, 3, padded.sample.height(), padded.sample.width()});
                auto out = holder.model->predict(x);
                auto crack = ops::reshape(ops::slice_channels(out, 1, 2),
                                          Shape{padded.sample.height(), padded.sample.width()});
                pred = metrics::binarize(data::crop_map(crack, s.height(), s.width()),
                                         opts.threshold);
            } else {
                const auto name = std::filesystem::path(s.image_path).filename().string();
                std::filesystem::path pred_path = std::filesystem::path(a.pred_dir) / name;
                if (!std::filesystem::exists(pred_path)) pred_path.replace_extension(".png");
                const img::Image pm = img::read_image(pred_path.string());
                Tensor<float> probs(Shape{pm.height, pm.width});
                for (size_t j = 0; j < probs.values().size(); ++j)
                    probs.values()[j] = static_cast<float>(pm.pixels[j * pm.channels]) / 255.0f;
                pred = metrics::binarize(probs, opts.threshold);
            }
            const img::Image background = img::read_image(s.image_path);
            const auto overlay = metrics::render_overlay(pred, metrics::mask_from_tensor(s.mask),
                                                         opts.tolerance, &background);
            const auto name = std::filesystem::path(s.image_path).stem().string();
            img::write_png(dir + "/" + name + "_overlay.png", overlay);
        }
    }
    std::printf("macro Pr %.4f Re %.4f F1 %.4f | micro F1 %.4f | %zu images\n", report.macro.pr,
                report.macro.re, report.macro.f1, report.micro.f1, report.per_image.size());
    return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    CommonArgs common;
    std::string checkpoint;
    std::string image;
    std::string mask;
};

int run_predict(const PredictArgs& a) {
    Model<float> model = model_from_checkpoint(a.checkpoint);
    const std::string image_path =
        a.common.data_root.empty() ? a.image
                                   : (std::filesystem::path(a.common.data_root) / a.image).string();
    const img::Image raw = img::read_image(image_path);

    data::Sample s;
    s.image_path = image_path;
    s.image = Tensor<float>(Shape{3, raw.height, raw.width});
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            for (int c = 0; c < 3; ++c)
                s.image.values()[(static_cast<size_t>(c) * raw.height + y) * raw.width + x] =
                    static_cast<float>(raw.channels == 1 ? raw.at(y, x, 0) : raw.at(y, x, c)) / 255.0f;
    s.mask = Tensor<float>(Shape{raw.height, raw.width});

    const auto padded = data::pad_to_multiple(s, kSpatialMultiple);
    auto x = ops::reshape(padded.sample.image,
                          Shape{1, 3, padded.sample.height(), padded.sample.width()});
    const auto t0 = std::chrono::steady_clock::now();
    auto out = model.predict(x);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto crack = ops::reshape(ops::slice_channels(out, 1, 2),
                              Shape{padded.sample.height(), padded.sample.width()});
    auto probs = data::crop_map(crack, raw.height, raw.width);
    const auto pred = metrics::binarize(probs, a.common.threshold);

    std::filesystem::create_directories(a.common.out);
    const std::string stem = std::filesystem::path(image_path).stem().string();
    img::Image mask_png;
    mask_png.width = pred.width;
    mask_png.height = pred.height;
    mask_png.channels = 1;
    mask_png.pixels.resize(pred.v.size());
    for (size_t i = 0; i < pred.v.size(); ++i) mask_png.pixels[i] = pred.v[i] ? 255 : 0;
    img::write_png(a.common.out + "/" + stem + "_mask.png", mask_png);

    if (!a.mask.empty()) {
        const std::string mask_path =
            a.common.data_root.empty() ? a.mask
                                       : (std::filesystem::path(a.common.data_root) / a.mask).string();
        const auto full = data::load_sample(image_path, mask_path);
        const auto overlay = metrics::render_overlay(pred, metrics::mask_from_tensor(full.mask),
                                                     a.common.tolerance, &raw);
        img::write_png(a.common.out + "/" + stem + "_overlay.png", overlay);
    } else {
        img::Image overlay = raw.channels == 3 ? raw : [&] {
            img::Image rgb;
            rgb.width = raw.width;
            rgb.height = raw.height;
            rgb.channels = 3;
            rgb.pixels.resize(static_cast<size_t>(raw.width) * raw.height * 3);
            for (size_t i = 0; i < static_cast<size_t>(raw.width) * raw.height; ++i)
                rgb.pixels[i * 3] = rgb.pixels[i * 3 + 1] = rgb.pixels[i * 3 + 2] = raw.pixels[i];
            return rgb;
        }();
        for (int y = 0; y < pred.height; ++y)
            for (int x2 = 0; x2 < pred.width; ++x2)
                if (pred.at(y, x2)) {
                    overlay.at(y, x2, 0) = 0;
                    overlay.at(y, x2, 1) = 255;
                    overlay.at(y, x2, 2) = 0;
                }
        img::write_png(a.common.out + "/" + stem + "_overlay.png", overlay);
    }
    std::printf("%s: %dx%d, %lld crack pixels, forward %.3fs\n", stem.c_str(), pred.width,
                pred.height, static_cast<long long>(pred.count()), secs);
    return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    CommonArgs common;
    std::string checkpoint;
    std::string shape = "3x640x480";
    int iters = 5;
};

int run_bench(const BenchArgs& a) {
    Model<float> model = a.checkpoint.empty() ? build<float>(model_config(a.common), a.common.seed)
                                              : model_from_checkpoint(a.checkpoint);
    const Shape chw = parse_chw(a.shape);
    const int H = chw[1], W = chw[2];
    if (H % kSpatialMultiple != 0 || W % kSpatialMultiple != 0)
        throw ConfigError("--shape extents must be divisible by " + std::to_string(kSpatialMultiple));
    Tensor<float> x(Shape{1, 3, H, W});
    std::mt19937 rng(static_cast<uint32_t>(a.common.seed));
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (auto& v : x.values()) v = dist(rng);

    model.predict(x); // warmup
    std::vector<double> times;
    for (int i = 0; i < a.iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        model.predict(x);
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    double mean = 0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    double var = 0;
    for (double t : times) var += (t - mean) * (t - mean);
    const double stddev = std::sqrt(var / static_cast<double>(times.size()));
    std::printf("%s W=%d at %s: mean %.4fs stddev %.4fs over %d iters (%.2f GFLOP/fwd)\n",
                variant_name(model.cfg.variant), model.cfg.base_width, a.shape.c_str(), mean, stddev,
                a.iters, static_cast<double>(count_flops(model.cfg, H, W)) * 1e-9);
    return 0;
}

// ---------------------------------------------------------------------------

struct InspectArgs {
    CommonArgs common;
    std::string shape = "3x640x480";
};

int run_inspect(const InspectArgs& a) {
    const Shape chw = parse_chw(a.shape);
    const int H = chw[1], W = chw[2];
    std::printf("%-14s %12s %14s   (input %s)\n", "variant", "params", "FLOPs", a.shape.c_str());
    for (Variant v : {Variant::baseline, Variant::baseline_rb, Variant::baseline_hab, Variant::rha,
                      Variant::rha_lite}) {
        ModelConfig cfg;
        cfg.variant = v;
        cfg.base_width = a.common.width;
        const auto m = build<float>(cfg, 0);
        if (v == Variant::rha_lite) m.verify_separable_reduction();
        std::printf("%-14s %12lld %11.3f G\n", variant_name(v),
                    static_cast<long long>(m.param_count()),
                    static_cast<double>(count_flops(cfg, H, W)) * 1e-9);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pavement-crack segmentation toolkit (encoder-decoder with residual blocks and "
                 "hybrid attention)"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a split list");
    add_common(train_cmd, train_args.common, /*data_root_required=*/true);
    train_cmd->add_option("--train-list", train_args.train_list, "Training split list")->required();
    train_cmd->add_option("--val-list", train_args.val_list, "Validation split list");
    train_cmd->add_option("--epochs", train_args.epochs, "Training epochs")->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", train_args.batch, "Batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", train_args.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    train_cmd->add_option("--omega-p", train_args.omega_p,
                          "Positive-class balance factor (non-positive = auto ratio)");
    train_cmd->add_option("--checkpoint-interval", train_args.checkpoint_interval,
                          "Save a checkpoint every N epochs");
    train_cmd->add_flag("--no-augment", train_args.no_augment, "Disable data augmentation");
    train_cmd->add_option("--resume", train_args.resume, "Checkpoint to resume from");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a prediction directory");
    add_common(eval_cmd, eval_args.common, /*data_root_required=*/false);
    eval_cmd->add_option("--list", eval_args.list, "Split list to evaluate")->required();
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint (.rhac)");
    eval_cmd->add_option("--pred-dir", eval_args.pred_dir, "Directory of predicted masks");
    eval_cmd->add_flag("--overlays", eval_args.overlays, "Write per-image overlay PNGs");

    PredictArgs predict_args;
    auto* predict_cmd = app.add_subcommand("predict", "Segment a single image");
    add_common(predict_cmd, predict_args.common, /*data_root_required=*/false);
    predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "Model checkpoint (.rhac)")
        ->required();
    predict_cmd->add_option("--image", predict_args.image, "Input image (PNG or BMP)")->required();
    predict_cmd->add_option("--mask", predict_args.mask, "Ground-truth mask for the overlay");

    BenchArgs bench_args;
    auto* bench_cmd = app.add_subcommand("bench", "Measure forward latency");
    add_common(bench_cmd, bench_args.common, /*data_root_required=*/false);
    bench_cmd->add_option("--checkpoint", bench_args.checkpoint, "Model checkpoint (.rhac)");
    bench_cmd->add_option("--shape", bench_args.shape, "Input shape CxHxW");
    bench_cmd->add_option("--iters", bench_args.iters, "Timed iterations")->check(CLI::PositiveNumber);

    InspectArgs inspect_args;
    auto* inspect_cmd = app.add_subcommand("inspect", "Print params/FLOPs for all variants");
    add_common(inspect_cmd, inspect_args.common, /*data_root_required=*/false);
    inspect_cmd->add_option("--shape", inspect_args.shape, "Input shape CxHxW for FLOPs");

    std::vector<std::string> args;
    try {
        args = expand_args(argc, argv);
    } catch (const rhanet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (train_cmd->parsed()) return run_train(train_args);
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (predict_cmd->parsed()) return run_predict(predict_args);
        if (bench_cmd->parsed()) return run_bench(bench_args);
        if (inspect_cmd->parsed()) return run_inspect(inspect_args);
    } catch (const rhanet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const rhanet::NumericsError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const rhanet::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const rhanet::ValueError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const rhanet::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
