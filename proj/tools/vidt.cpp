// Command-line entry points: train, eval, profile, export-attn, synth-data.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

#include "vidt/model.hpp"
#include "vidt/profiler.hpp"
#include "vidt/train.hpp"

using namespace vidt;

namespace {

using Model = VidtModel<float>;

struct DataArgs {
    std::string coco;
    std::uint64_t synth_seed = 0;
    int synth_count = 0;
    i64 synth_size = 64;
};

Dataset load_data(const DataArgs& a, const char* what) {
    if (!a.coco.empty()) return load_coco_json(a.coco);
    if (a.synth_count > 0) {
        SynthSpec spec;
        spec.image_size = a.synth_size;
        return synth_shapes(a.synth_seed, a.synth_count, spec);
    }
    throw std::runtime_error(std::string("no ") + what +
                             " dataset given (use --coco or --synth-count)");
}

Dataset dataset_from_config(const Config& cfg, bool train_split) {
    const std::string source = cfg.get_str("data", "source", "synth");
    if (source == "synth") {
        SynthSpec spec;
        spec.image_size = cfg.get_int("data", "image_size", 64);
        const auto seed = static_cast<std::uint64_t>(cfg.get_int("data", "synth_seed", 1));
        const int train_n = static_cast<int>(cfg.get_int("data", "synth_train", 500));
        const int val_n = static_cast<int>(cfg.get_int("data", "synth_val", 100));
        // validation continues the index stream after the training images
        if (train_split) return synth_shapes(seed, train_n, spec);
        Dataset all = synth_shapes(seed, train_n + val_n, spec);
        Dataset val;
        val.category_names = all.category_names;
        val.samples.assign(all.samples.begin() + train_n, all.samples.end());
        return val;
    }
    if (source == "coco") {
        const std::string key = train_split ? "coco_train" : "coco_val";
        const std::string path = cfg.get_str("data", key, "");
        if (path.empty()) config_error("data." + key + " is required with source = coco");
        return load_coco_json(path);
    }
    config_error("data.source must be synth or coco");
}

void write_results_json(const std::vector<Detection>& dets, const Dataset& ds,
                        const std::string& path) {
    std::map<int, std::pair<i64, i64>> image_dims;
    for (const auto& s : ds.samples) image_dims[s.id] = {s.image.h, s.image.w};
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dets) {
        const auto [h, w] = image_dims.at(d.image_id);
        const double bw = d.box_cxcywh[2] * w, bh = d.box_cxcywh[3] * h;
        nlohmann::json j = {{"image_id", d.image_id},
                            {"category_id", d.category + 1},
                            {"score", d.score},
                            {"bbox",
                             {d.box_cxcywh[0] * w - bw / 2, d.box_cxcywh[1] * h - bh / 2, bw, bh}}};
        if (d.mask) j["segmentation"] = {{"size", {h, w}}, {"counts", mask_to_rle(*d.mask)}};
        arr.push_back(std::move(j));
    }
    std::ofstream f(path);
    f << arr.dump(1);
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& resume) {
    Config cfg = Config::load(config_path);
    ModelConfig mc = model_config_from(cfg);
    TrainConfig tc = train_config_from(cfg);
    Dataset train = dataset_from_config(cfg, true);
    Dataset val = dataset_from_config(cfg, false);
    std::cout << "train: " << train.samples.size() << " images, val: " << val.samples.size()
              << " images\n";
    Trainer<float> trainer(mc, tc, cfg.canonical_text(), out_dir);
    std::cout << "parameters: " << trainer.model().param_count() << "\n";
    if (!resume.empty()) {
        trainer.load(resume);
        std::cout << "resumed from " << resume << " at epoch " << trainer.epoch() << "\n";
    }
    try {
        while (trainer.epoch() < tc.epochs) {
            auto stats = trainer.run_epoch(train, &val);
            std::cout << "epoch " << trainer.epoch() << ":";
            for (const auto& [k, v] : stats.mean_losses)
                std::cout << " " << k << "=" << std::fixed << std::setprecision(4) << v;
            if (stats.ap50 >= 0)
                std::cout << " | AP50=" << std::setprecision(3) << stats.ap50
                          << " AP=" << stats.ap;
            std::cout << "\n";
        }
    } catch (const TrainingAborted& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    std::cout << "done; checkpoint at " << out_dir << "/checkpoint.bin\n";
    return 0;
}

std::pair<Model, Config> model_from_checkpoint(const std::string& path, int n_drop) {
    Checkpoint<float> ckpt = load_checkpoint<float>(path);
    Config cfg = Config::parse(ckpt.config_text);
    ModelConfig mc = model_config_from(cfg);
    Model model;
    model.init(mc, static_cast<std::uint64_t>(cfg.get_int("train", "seed", 0)));
    ParamSet<float> params;
    model.collect(params);
    restore_params(ckpt, params);
    if (n_drop >= 0) model.set_layer_drop(n_drop);
    return {std::move(model), std::move(cfg)};
}

int cmd_eval(const std::string& ckpt_path, const DataArgs& data, int n_drop,
             const std::string& results_path) {
    auto [model, cfg] = model_from_checkpoint(ckpt_path, n_drop);
    Dataset ds = data.coco.empty() && data.synth_count == 0 ? dataset_from_config(cfg, false)
                                                            : load_data(data, "eval");
    std::vector<Detection> dets;
    std::mt19937_64 rng(0);
    for (const auto& sample : ds.samples) {
        auto out = model.forward(sample.image, false, rng);
        auto d = model.detections(out, sample);
        dets.insert(dets.end(), d.begin(), d.end());
    }
    const ApReport rep = evaluate_detections(dets, dataset_ground_truth(ds),
                                             model.config().neck.num_classes, model.config().uqr);
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "AP@0.5      = " << rep.ap50 << "\n";
    std::cout << "AP@[.5:.95] = " << rep.ap << "\n";
    if (rep.seg_ap50 >= 0) {
        std::cout << "mask AP@0.5      = " << rep.seg_ap50 << "\n";
        std::cout << "mask AP@[.5:.95] = " << rep.seg_ap << "\n";
    }
    if (!results_path.empty()) {
        write_results_json(dets, ds, results_path);
        std::cout << "results written to " << results_path << "\n";
    }
    return 0;
}

int cmd_profile(i64 d, int window, i64 det, const std::vector<i64>& tokens,
                const std::string& table_path) {
    RamBlockShape shape;
    shape.d = d;
    shape.window = window;
    shape.det_tokens = det;
    std::vector<std::pair<i64, i64>> sizes;
    for (i64 p : tokens) {
        const i64 side = static_cast<i64>(std::llround(std::sqrt(double(p))));
        if (side * side != p)
            throw std::invalid_argument("profile: P=" + std::to_string(p) +
                                        " is not a square token count");
        sizes.push_back({side, side});
    }
    const auto points = sweep_patch_tokens(sizes, shape);
    std::ostringstream table;
    table << "attention_type\tstage\tMACs\n";
    std::cout << std::left << std::setw(10) << "P" << std::setw(16) << "RAM MACs"
              << std::setw(18) << "YOLOS MACs" << "\n";
    for (size_t i = 0; i < points.size(); ++i) {
        std::cout << std::left << std::setw(10) << points[i].patch_tokens << std::setw(16)
                  << points[i].ram_macs << std::setw(18) << points[i].yolos_macs << "\n";
        const auto ledger = predict_ram_block(sizes[i].first, sizes[i].second, shape);
        for (const auto& [key, macs] : ledger.entries())
            table << attn_kind_name(key.first) << "\t" << key.second << "\t" << macs << "\n";
    }
    const auto ram_fit = fit_ram_exponent(points);
    const auto yolos_fit = fit_yolos_exponent(points);
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "RAM   log-log slope vs P: " << ram_fit.slope << " +/- "
              << ram_fit.stderr_slope << "\n";
    std::cout << "YOLOS log-log slope vs P: " << yolos_fit.slope << " +/- "
              << yolos_fit.stderr_slope << "\n";
    if (!table_path.empty()) {
        std::ofstream f(table_path);
        f << table.str();
        std::cout << "ledger table written to " << table_path << "\n";
    }
    return 0;
}

int cmd_export_attn(const std::string& ckpt_path, const std::string& image_path,
                    const std::string& out_dir, int stage, int max_tokens) {
    auto [model, cfg] = model_from_checkpoint(ckpt_path, -1);
    if (stage < 1 || stage > 4) throw std::invalid_argument("stage must be 1..4");
    if (!model.config().backbone.cross_attention[static_cast<size_t>(stage - 1)])
        throw std::invalid_argument("stage " + std::to_string(stage) +
                                    " has no cross-attention in this model");
    Image img = read_png(image_path);
    std::mt19937_64 rng(0);
    auto out = model.forward(img, false, rng, /*capture_attention=*/true);
    std::filesystem::create_directories(out_dir);
    int written = 0;
    for (const auto& cap : out.tokens.cross_attention) {
        if (cap.stage != stage - 1) continue;
        const i64 det_count = cap.weights.shape()[0];
        const i64 p = cap.h * cap.w;
        for (i64 tok = 0; tok < std::min<i64>(det_count, max_tokens); ++tok) {
            // PATCH-side attention mass of this DET token, normalized to [0,1]
            std::vector<double> heat(static_cast<size_t>(p));
            double mx = 0.0;
            for (i64 i = 0; i < p; ++i) {
                heat[static_cast<size_t>(i)] = double(cap.weights.at(tok, det_count + i));
                mx = std::max(mx, heat[static_cast<size_t>(i)]);
            }
            std::vector<std::uint8_t> gray(static_cast<size_t>(p));
            for (i64 i = 0; i < p; ++i)
                gray[static_cast<size_t>(i)] = static_cast<std::uint8_t>(
                    std::lround(255.0 * (mx > 0 ? heat[static_cast<size_t>(i)] / mx : 0.0)));
            const std::string name = out_dir + "/stage" + std::to_string(stage) + "_block" +
                                     std::to_string(written) + "_det" + std::to_string(tok) +
                                     ".png";
            write_png_gray(name, gray.data(), cap.h, cap.w);
        }
        ++written;
    }
    std::cout << "wrote heatmaps for " << written << " block(s) to " << out_dir << "\n";
    return 0;
}

int cmd_synth_data(std::uint64_t seed, int count, i64 size, const std::string& out_dir) {
    SynthSpec spec;
    spec.image_size = size;
    Dataset ds = synth_shapes(seed, count, spec);
    write_coco_dataset(ds, out_dir);
    std::cout << "wrote " << count << " images and annotations.json to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vidt: fully transformer-based detector (training, evaluation, profiling)"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/default", resume;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "plain-text config file")->required();
    train->add_option("--out", out_dir, "output directory (checkpoints, metrics, manifest)");
    train->add_option("--resume", resume, "checkpoint to resume from");

    std::string ckpt_path, results_path;
    DataArgs data;
    int n_drop = -1;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (AP@0.5, AP@[.5:.95])");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--coco", data.coco, "COCO-style annotation JSON");
    eval->add_option("--synth-seed", data.synth_seed, "synthetic dataset seed");
    eval->add_option("--synth-count", data.synth_count, "synthetic dataset size");
    eval->add_option("--synth-size", data.synth_size, "synthetic image size");
    eval->add_option("--n-drop", n_drop, "drop this many top decoding layers");
    eval->add_option("--results", results_path, "write detections as COCO results JSON");

    i64 prof_d = 48, prof_det = 100;
    int prof_window = 7;
    std::vector<i64> prof_tokens = {1024, 4096, 16384};
    std::string table_path;
    auto* profile = app.add_subcommand("profile", "attention MAC sweep and scaling exponents");
    profile->add_option("--d", prof_d, "embedding dimension (default 48)");
    profile->add_option("--window", prof_window, "window size (default 7)");
    profile->add_option("--det", prof_det, "number of DET tokens (default 100)");
    profile->add_option("--p", prof_tokens, "PATCH token counts (square numbers)");
    profile->add_option("--table", table_path, "write the per-kernel ledger table here");

    std::string image_path, attn_out = "attn";
    int stage = 4, max_tokens = 3;
    auto* export_attn = app.add_subcommand("export-attn", "per-stage DET attention heatmaps");
    export_attn->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    export_attn->add_option("--image", image_path, "input PNG")->required();
    export_attn->add_option("--out", attn_out, "output directory");
    export_attn->add_option("--stage", stage, "backbone stage (1..4)");
    export_attn->add_option("--tokens", max_tokens, "heatmaps per block");

    std::uint64_t synth_seed = 1;
    int synth_count = 100;
    i64 synth_size = 64;
    std::string synth_out = "synth";
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic shapes dataset");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--count", synth_count, "number of images");
    synth->add_option("--size", synth_size, "image side length");
    synth->add_option("--out", synth_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(config_path, out_dir, resume);
        if (*eval) return cmd_eval(ckpt_path, data, n_drop, results_path);
        if (*profile) return cmd_profile(prof_d, prof_window, prof_det, prof_tokens, table_path);
        if (*export_attn)
            return cmd_export_attn(ckpt_path, image_path, attn_out, stage, max_tokens);
        if (*synth) return cmd_synth_data(synth_seed, synth_count, synth_size, synth_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
