// End-to-end checks of the command-line surface: every subcommand runs
// against real files in a scratch directory.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#ifndef VIDT_CLI_PATH
#error "VIDT_CLI_PATH must point at the built binary"
#endif

namespace {

namespace fs = std::filesystem;

int run(const std::string& args, const std::string& log) {
    const std::string cmd = std::string(VIDT_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cli: synth-data, train, eval, export-attn, profile") {
    const fs::path dir = fs::temp_directory_path() / "vidt_cli_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string log = (dir / "log.txt").string();

    REQUIRE(run("synth-data --seed 3 --count 4 --size 32 --out " + (dir / "data").string(), log) == 0);
    REQUIRE(fs::exists(dir / "data" / "annotations.json"));
    REQUIRE(fs::exists(dir / "data" / "img_0.png"));

    {
        std::ofstream cfg(dir / "train.ini");
        cfg << "[model]\npreset = swin_pico\nwindow = 4\ndet_tokens = 8\nneck_layers = 2\n"
               "neck_heads = 2\nneck_points = 2\nneck_width = 32\nneck_ffn = 64\nclasses = 2\n"
               "[train]\nepochs = 1\nbatch_size = 4\nseed = 5\nthreads = 2\neval_every = 1\n"
               "checkpoint_every = 1\n"
               "[data]\nsource = synth\nsynth_seed = 3\nsynth_train = 8\nsynth_val = 4\n"
               "image_size = 32\n";
    }
    REQUIRE(run("train --config " + (dir / "train.ini").string() + " --out " +
                    (dir / "run").string(),
                log) == 0);
    REQUIRE(fs::exists(dir / "run" / "checkpoint.bin"));
    REQUIRE(fs::exists(dir / "run" / "manifest.txt"));
    const std::string manifest = slurp((dir / "run" / "manifest.txt").string());
    REQUIRE(manifest.find("config_hash") != std::string::npos);
    REQUIRE(manifest.find("seed") != std::string::npos);

    // bad config key fails before any compute
    {
        std::ofstream cfg(dir / "bad.ini");
        cfg << "[model]\npreset = swin_pico\nnot_a_key = 1\n[train]\n[data]\n";
    }
    REQUIRE(run("train --config " + (dir / "bad.ini").string() + " --out " +
                    (dir / "bad_run").string(),
                log) != 0);
    REQUIRE(slurp(log).find("not_a_key") != std::string::npos);

    const std::string ckpt = (dir / "run" / "checkpoint.bin").string();
    REQUIRE(run("eval --checkpoint " + ckpt + " --results " + (dir / "results.json").string(),
                log) == 0);
    REQUIRE(slurp(log).find("AP@0.5") != std::string::npos);
    REQUIRE(fs::exists(dir / "results.json"));

    REQUIRE(run("eval --checkpoint " + ckpt + " --n-drop 1", log) == 0);
    REQUIRE(run("eval --checkpoint " + ckpt + " --n-drop 5", log) != 0);  // only 2 layers

    REQUIRE(run("export-attn --checkpoint " + ckpt + " --image " +
                    (dir / "data" / "img_0.png").string() + " --out " + (dir / "attn").string() +
                    " --stage 4 --tokens 2",
                log) == 0);
    bool any_png = false;
    for (const auto& e : fs::directory_iterator(dir / "attn"))
        any_png = any_png || e.path().extension() == ".png";
    REQUIRE(any_png);
    // stage without cross-attention is an explicit error
    REQUIRE(run("export-attn --checkpoint " + ckpt + " --image " +
                    (dir / "data" / "img_0.png").string() + " --out " + (dir / "attn2").string() +
                    " --stage 2",
                log) != 0);
    REQUIRE(slurp(log).find("no cross-attention") != std::string::npos);

    REQUIRE(run("profile --p 1024 4096 16384 --table " + (dir / "table.tsv").string(), log) == 0);
    const std::string out = slurp(log);
    REQUIRE(out.find("RAM") != std::string::npos);
    REQUIRE(slurp((dir / "table.tsv").string()).find("attention_type\tstage\tMACs") !=
            std::string::npos);

    fs::remove_all(dir);
}
