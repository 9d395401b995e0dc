#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "vfift/eval_io.hpp"
#include "vfift/pipeline.hpp"

using namespace vfift;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / fs::path("vfift_cli_" + std::to_string(::getpid()) + "_" +
                                                    std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const char* name) const { return (path / name).string(); }
};

// Runs the installed tool binary and maps the shell status back to the
// process exit code.
int run_cli(const std::string& args, const std::string& log_path) {
    const std::string cmd = std::string(VFIFT_BIN) + " " + args + " > " + log_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string tiny_config_text() {
    ModelConfig cfg;
    cfg.window = 3;
    cfg.heads = 1;
    cfg.attn_width = 4;
    cfg.feature_channels = 1;
    cfg.encoder_channels = {1, 1, 2, 2};
    cfg.num_scales = 2;
    return cfg.to_text();
}

} // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
    TempDir dir;
    CHECK(run_cli("", dir.file("noargs.log")) == 1);
    CHECK(run_cli("no-such-command", dir.file("badcmd.log")) == 1);
    CHECK(run_cli("train --ckpt-out x --no-such-flag", dir.file("badflag.log")) == 1);
    CHECK(run_cli("interpolate only_one_positional", dir.file("missing.log")) == 1);
    CHECK(run_cli("--help", dir.file("help.log")) == 0);
    CHECK(slurp(dir.file("help.log")).find("interpolate") != std::string::npos);
}

TEST_CASE("train, interpolate and eval round-trip through files") {
    TempDir dir;
    std::ofstream(dir.file("tiny.cfg")) << tiny_config_text();
    const std::string ckpt = dir.file("model.ckpt");
    const std::string losses = dir.file("loss.csv");

    const int train_rc = run_cli("train --data synthetic --motion-kind translate --size 16"
                                 " --steps 3 --lr 1e-3 --seed 1 --config " +
                                     dir.file("tiny.cfg") + " --ckpt-out " + ckpt +
                                     " --loss-csv " + losses,
                                 dir.file("train.log"));
    INFO(slurp(dir.file("train.log")));
    REQUIRE(train_rc == 0);
    CHECK(fs::exists(ckpt));
    REQUIRE(fs::exists(losses));
    {
        std::ifstream in(losses);
        std::string header;
        std::getline(in, header);
        CHECK(header == "step,loss_warp,loss_rec,total");
        int rows = 0;
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) ++rows;
        CHECK(rows == 3);
    }

    // The checkpoint carries the config it was trained with.
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    CHECK(ModelConfig::from_text(loaded.config_text).window == 3);

    // Interpolate between two frames written by the library itself. An
    // off-multiple size exercises the internal padding path.
    Rng rng(8);
    Tensor prev = Tensor::uniform({3, 20, 24}, 0.0, 1.0, rng);
    Tensor next = Tensor::uniform({3, 20, 24}, 0.0, 1.0, rng);
    save_image(prev, dir.file("prev.ppm"));
    save_image(next, dir.file("next.ppm"));
    const std::string out = dir.file("mid.png");
    const int interp_rc = run_cli("interpolate " + dir.file("prev.ppm") + " " +
                                      dir.file("next.ppm") + " --ckpt " + ckpt + " --out " + out,
                                  dir.file("interp.log"));
    INFO(slurp(dir.file("interp.log")));
    REQUIRE(interp_rc == 0);
    Tensor mid = load_image(out);
    CHECK(mid.shape() == Shape{3, 20, 24});

    // Eval over a two-sequence triplet directory.
    const fs::path data = dir.path / "data";
    for (const char* seq : {"s0", "s1"}) {
        fs::create_directories(data / seq);
        Rng r(seq[1]);
        for (int i = 1; i <= 3; ++i)
            save_image(Tensor::uniform({3, 16, 16}, 0.0, 1.0, r),
                       (data / seq / ("im" + std::to_string(i) + ".ppm")).string());
    }
    const std::string results = dir.file("eval.csv");
    const int eval_rc = run_cli("eval --data " + data.string() + " --ckpt " + ckpt + " --out " +
                                    results,
                                dir.file("eval.log"));
    INFO(slurp(dir.file("eval.log")));
    REQUIRE(eval_rc == 0);
    const std::string csv = slurp(results);
    CHECK(csv.find("s0") != std::string::npos);
    CHECK(csv.find("s1") != std::string::npos);
    CHECK(csv.find("psnr") != std::string::npos);

    // Data-level failures exit 2: missing dataset, missing checkpoint.
    CHECK(run_cli("eval --data " + dir.file("nowhere") + " --ckpt " + ckpt,
                  dir.file("baddata.log")) == 2);
    CHECK(run_cli("interpolate " + dir.file("prev.ppm") + " " + dir.file("next.ppm") +
                      " --ckpt " + dir.file("absent.ckpt") + " --out " + out,
                  dir.file("badckpt.log")) == 2);
}

TEST_CASE("gradient verification passes clean and fails corrupted with exit 3") {
    TempDir dir;
    const int ok_rc = run_cli("check-grad --coords 40", dir.file("grad_ok.log"));
    INFO(slurp(dir.file("grad_ok.log")));
    CHECK(ok_rc == 0);
    CHECK(slurp(dir.file("grad_ok.log")).find("PASS") != std::string::npos);

    const int bad_rc = run_cli("check-grad --coords 40 --corrupt-gradient",
                               dir.file("grad_bad.log"));
    INFO(slurp(dir.file("grad_bad.log")));
    CHECK(bad_rc == 3);
    CHECK(slurp(dir.file("grad_bad.log")).find("FAIL") != std::string::npos);
}

TEST_CASE("complexity bench verifies the cost inequalities and writes its table") {
    TempDir dir;
    const std::string csv = dir.file("cost.csv");
    const int rc = run_cli("bench-complexity --out " + csv, dir.file("bench.log"));
    INFO(slurp(dir.file("bench.log")));
    CHECK(rc == 0);
    const std::string log = slurp(dir.file("bench.log"));
    CHECK(log.find("grid points") != std::string::npos);
    REQUIRE(fs::exists(csv));
    CHECK(slurp(csv).find("flow_attn") != std::string::npos);
}
