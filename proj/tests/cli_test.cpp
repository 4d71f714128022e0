// End-to-end checks of the command-line binary: exit codes, file outputs,
// determinism of everything written to disk, and the config-file plumbing.
// Each test shells out to the real executable (path injected by the build).

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path p = fs::temp_directory_path() /
                           ("mmg_cli_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is),
            std::istreambuf_iterator<char>()};
}

RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path capture =
        work_dir() / ("out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string(MMGRAPH_BIN) + " " + args + " > " +
                            capture.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.output = slurp(capture);
    return r;
}

// Small dataset shared by the pipeline tests, generated once.
fs::path dataset_dir() {
    static const fs::path dir = [] {
        const fs::path p = work_dir() / "data";
        const RunResult r =
            run("gen-data --classes 2 --episodes 3 --frames 3 --patches 8 "
                "--objects 1 --dv 8 --dt 8 --seed 5 --out " +
                p.string());
        REQUIRE(r.code == 0);
        return p;
    }();
    return dir;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
    return slurp(a) == slurp(b);
}

} // namespace

TEST_CASE("help never fails and names the shared flags") {
    CHECK(run("--help").code == 0);
    for (const char* cmd : {"gen-data", "train", "eval", "ablate",
                            "export-graph", "grad-check", "inspect"}) {
        const RunResult r = run(std::string(cmd) + " --help");
        CHECK(r.code == 0);
        CHECK(r.output.find("--seed") != std::string::npos);
        CHECK(r.output.find("--config") != std::string::npos);
    }
}

TEST_CASE("usage errors exit with code one") {
    CHECK(run("").code == 1);                    // a subcommand is required
    CHECK(run("frobnicate").code == 1);          // unknown command
    CHECK(run("train --bogus 3").code == 1);     // unknown flag
    CHECK(run("gen-data --classes 2").code == 1);  // missing required --out
    CHECK(run("train --variant nonsense --epochs 1 --lr 0").code == 1);
}

TEST_CASE("missing or broken files exit with code two") {
    CHECK(run("train --data /nonexistent/dataset --epochs 1").code == 2);
    CHECK(run("eval --checkpoint /nonexistent/ckpt").code == 2);
    CHECK(run("inspect --path /nonexistent").code == 2);
    const fs::path junk = work_dir() / "junk";
    fs::create_directories(junk);
    { std::ofstream(junk / "dataset.json") << "{not json"; }
    CHECK(run("inspect --path " + junk.string()).code == 2);
}

TEST_CASE("gen-data is byte-reproducible") {
    const fs::path a = work_dir() / "gen_a";
    const fs::path b = work_dir() / "gen_b";
    const std::string flags =
        "gen-data --classes 2 --episodes 2 --frames 3 --patches 8 "
        "--objects 1 --dv 8 --dt 8 --seed 11 --out ";
    REQUIRE(run(flags + a.string()).code == 0);
    REQUIRE(run(flags + b.string()).code == 0);
    CHECK(same_bytes(a / "dataset.json", b / "dataset.json"));
    for (const char* f : {"manifest.json", "visual.bin", "text.bin"})
        CHECK(same_bytes(a / "episode_00000" / f, b / "episode_00000" / f));
}

TEST_CASE("train, eval, export and inspect chain together") {
    const fs::path data = dataset_dir();
    const fs::path out = work_dir() / "run";
    const RunResult tr =
        run("train --data " + data.string() + " --out " + out.string() +
            " --epochs 2 --warmup 0 --batch 2 --val-fraction 0.34 --quiet");
    REQUIRE(tr.code == 0);
    CHECK(fs::exists(out / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(out / "checkpoint" / "params.bin"));

    SUBCASE("result files parse and carry the run description") {
        const json metrics = json::parse(slurp(out / "metrics.json"));
        CHECK(metrics.contains("accuracy"));
        CHECK(metrics.at("variant") == "full");
        const json history = json::parse(slurp(out / "history.json"));
        REQUIRE(history.size() == 2);
        CHECK(history[0].contains("lr"));
        CHECK(history[0].contains("train_loss"));
    }
    SUBCASE("eval consumes the checkpoint") {
        const fs::path metrics = work_dir() / "eval_metrics.json";
        const RunResult ev =
            run("eval --data " + data.string() + " --checkpoint " +
                (out / "checkpoint").string() + " --metrics " +
                metrics.string());
        CHECK(ev.code == 0);
        CHECK(json::parse(slurp(metrics)).contains("accuracy"));
    }
    SUBCASE("export-graph emits DOT and structured form") {
        const RunResult dot =
            run("export-graph --episode " +
                (data / "episode_00000").string() + " --checkpoint " +
                (out / "checkpoint").string() + " --format dot");
        CHECK(dot.code == 0);
        CHECK(dot.output.find("digraph") != std::string::npos);

        const fs::path gpath = work_dir() / "graph.json";
        const RunResult js =
            run("export-graph --episode " +
                (data / "episode_00000").string() + " --checkpoint " +
                (out / "checkpoint").string() + " --format json --out " +
                gpath.string());
        CHECK(js.code == 0);
        const json graph = json::parse(slurp(gpath));
        CHECK(graph.contains("nodes"));
        CHECK(graph.contains("edges"));

        CHECK(run("export-graph --episode " +
                  (data / "episode_00000").string() + " --checkpoint " +
                  (out / "checkpoint").string() + " --format yaml")
                  .code == 1);
    }
    SUBCASE("inspect prints both manifest flavours") {
        const RunResult ds = run("inspect --path " + data.string());
        CHECK(ds.code == 0);
        CHECK(ds.output.find("episodes") != std::string::npos);
        const RunResult ck =
            run("inspect --path " + (out / "checkpoint").string());
        CHECK(ck.code == 0);
        CHECK(ck.output.find("tensors") != std::string::npos);
    }
    SUBCASE("same flags, same bytes") {
        const fs::path again = work_dir() / "run_again";
        REQUIRE(run("train --data " + data.string() + " --out " +
                    again.string() +
                    " --epochs 2 --warmup 0 --batch 2 --val-fraction 0.34 "
                    "--quiet")
                    .code == 0);
        CHECK(same_bytes(out / "metrics.json", again / "metrics.json"));
        CHECK(same_bytes(out / "history.json", again / "history.json"));
        CHECK(same_bytes(out / "checkpoint" / "params.bin",
                         again / "checkpoint" / "params.bin"));
    }
}

TEST_CASE("a zero rate and a single epoch still produce a result file") {
    const fs::path out = work_dir() / "lr0";
    const RunResult r = run("train --data " + dataset_dir().string() +
                            " --out " + out.string() +
                            " --variant visual_only --epochs 1 --lr 0 "
                            "--val-fraction 0.34 --quiet");
    CHECK(r.code == 0);
    CHECK(fs::exists(out / "metrics.json"));
}

TEST_CASE("config files feed flags, and flags override them") {
    const fs::path cfg = work_dir() / "train.cfg";
    {
        std::ofstream os(cfg);
        os << "epochs=2\nwarmup=0\nbatch=2\nlr=0.0\nvariant=visual_only\n"
           << "val-fraction=0.34\nquiet=true\n"
           << "data=" << dataset_dir().string() << "\n";
    }
    const fs::path out1 = work_dir() / "cfg_run1";
    const RunResult a = run("train --config " + cfg.string() + " --out " +
                            out1.string());
    REQUIRE(a.code == 0);
    CHECK(json::parse(slurp(out1 / "history.json")).size() == 2);
    CHECK(json::parse(slurp(out1 / "metrics.json")).at("variant") ==
          "visual_only");

    const fs::path out2 = work_dir() / "cfg_run2";
    const RunResult b = run("train --config " + cfg.string() +
                            " --epochs 1 --out " + out2.string());
    REQUIRE(b.code == 0);
    CHECK(json::parse(slurp(out2 / "history.json")).size() == 1);
}

TEST_CASE("grad-check reports groups and honours its tolerance") {
    const RunResult ok =
        run("grad-check --seed 1 --dv 6 --dt 6 --classes 2 --layers 1");
    CHECK(ok.code == 0);
    CHECK(ok.output.find("worst:") != std::string::npos);
    CHECK(ok.output.find("gat0.w") != std::string::npos);

    const RunResult fail =
        run("grad-check --seed 1 --dv 6 --dt 6 --classes 2 --layers 1 "
            "--tolerance 1e-18");
    CHECK(fail.code == 3);
    CHECK(fail.output.find("FAIL") != std::string::npos);
}
