// Drives the topocnn executable end to end through the shell.

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "topocnn/checkpoint.hpp"
#include "topocnn/dataset.hpp"
#include "topocnn/pgm.hpp"

using namespace topocnn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(TOPOCNN_CLI_PATH) + " " + args + " 2>/dev/null";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// One small dataset shared by the suite.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("topocnn_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        const auto r = run("-v 0 gen-data --problem cantilever-end --nx 20 --ny 20 --vf-start 0.3 --vf-end 0.6 "
                           "--vf-step 0.1 --rmin 1.5 --out " + (root_ / "data").string());
        ASSERT_EQ(r.code, 0);
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    static fs::path root_;
    static std::string data() { return (root_ / "data").string(); }
    static std::string path(const std::string& name) { return (root_ / name).string(); }
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("train --epochs 1").code, 1);
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("train --help").code, 0);
}

TEST_F(Cli, GenDataWritesLayoutAndResolvedConfig) {
    const fs::path d = root_ / "data";
    for (const char* n : {"vf_3000.pgm", "vf_4000.pgm", "vf_5000.pgm", "vf_6000.pgm"}) {
        EXPECT_TRUE(fs::exists(d / "input_data" / n)) << n;
        EXPECT_TRUE(fs::exists(d / "output_data" / n)) << n;
    }
    EXPECT_TRUE(fs::exists(d / "meta.json"));
    const data::Dataset ds = data::load_dataset(d);
    EXPECT_EQ(ds.samples.size(), 4u);
    EXPECT_EQ(ds.samples.front().provenance, data::Provenance::GeneratedSimp);

    const auto r = run("-v 0 gen-data --nx 20 --ny 20 --vf-start 0.5 --vf-end 0.5 --rmin 1.5 --out " + path("one"));
    ASSERT_EQ(r.code, 0);
    for (const char* key : {"threads=1", "[gen-data]", "problem=\"cantilever-end\"", "nx=20", "vf-step=0.01", "penal=3",
                            "rmin=1.5", "seed=0"}) {
        EXPECT_NE(r.out.find(key), std::string::npos) << key;
    }
    EXPECT_EQ(r.out.find("train."), std::string::npos);
}

TEST_F(Cli, GenDataInvalidRangeExitsOne) {
    EXPECT_EQ(run("-v 0 gen-data --nx 10 --ny 10 --vf-start 0.6 --vf-end 0.5 --out " + path("bad")).code, 1);
    EXPECT_EQ(run("-v 0 gen-data --problem bridge --out " + path("bad")).code, 1);
}

TEST_F(Cli, TrainSmokeRunWritesCheckpointAndLossCsv) {
    const auto r = run("-v 0 train --data " + data() + " --epochs 1 --batch 2 --widths 2,4,8 --checkpoint " + path("a.ptoc"));
    ASSERT_EQ(r.code, 0);
    const Checkpoint ck = load_checkpoint(path("a.ptoc"));
    EXPECT_EQ(ck.model.input_h, 20u);
    EXPECT_TRUE(ck.adam.has_value());
    EXPECT_EQ(ck.adam->step, 2u);
    EXPECT_EQ(slurp(path("a.ptoc.loss.csv")).rfind("epoch,loss\n1,", 0), 0u);
}

TEST_F(Cli, TrainAdaptiveBottleneck) {
    ASSERT_EQ(run("-v 0 train --data " + data() + " --epochs 1 --batch 4 --adaptive-n 16 --widths 2,4,8 --checkpoint " +
                  path("n16.ptoc")).code,
              0);
    const Checkpoint ck = load_checkpoint(path("n16.ptoc"));
    EXPECT_EQ(ck.model.adaptive_n, 16u);
    EXPECT_EQ(ck.model.layers, build_architecture(16, 20, {2, 4, 8}));
}

TEST_F(Cli, TrainMissingDatasetExitsOne) {
    EXPECT_EQ(run("-v 0 train --data " + path("nope") + " --epochs 1 --checkpoint " + path("x.ptoc")).code, 1);
    EXPECT_EQ(run("-v 0 train --data " + data() + " --epochs 1 --widths 2,4 --checkpoint " + path("x.ptoc")).code, 1);
}

TEST_F(Cli, ConfigReplayReproducesCheckpointBytes) {
    const auto first = run("-v 0 train --data " + data() + " --epochs 3 --batch 2 --seed 5 --widths 2,4,8 --checkpoint " +
                           path("r1.ptoc"));
    ASSERT_EQ(first.code, 0);
    std::string cfg = first.out;
    const auto at = cfg.find("r1.ptoc");
    ASSERT_NE(at, std::string::npos);
    cfg.replace(at, 7, "r2.ptoc");
    std::ofstream(path("replay.ini")) << cfg;
    const auto second = run("--config " + path("replay.ini"));
    ASSERT_EQ(second.code, 0);
    EXPECT_EQ(slurp(path("r1.ptoc")), slurp(path("r2.ptoc")));
    EXPECT_EQ(slurp(path("r1.ptoc.loss.csv")), slurp(path("r2.ptoc.loss.csv")));

    // A flag given after the config overrides it.
    const auto third = run("--config " + path("replay.ini") + " train --epochs 1");
    ASSERT_EQ(third.code, 0);
    EXPECT_NE(third.out.find("epochs=1"), std::string::npos);
    EXPECT_NE(slurp(path("r1.ptoc")), slurp(path("r2.ptoc")));
}

TEST_F(Cli, InferFromVolumeFractionAndImage) {
    ASSERT_EQ(run("-v 0 train --data " + data() + " --epochs 1 --batch 4 --widths 2,4,8 --checkpoint " + path("i.ptoc")).code, 0);
    ASSERT_EQ(run("-v 0 infer --checkpoint " + path("i.ptoc") + " --vf 0.25 --out " + path("p.pgm")).code, 0);
    const Image p = read_pgm(path("p.pgm"));
    EXPECT_EQ(p.rows, 20u);
    EXPECT_EQ(p.cols, 20u);
    for (double d : p.density) {
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
    }
    const std::string in = (root_ / "data" / "input_data" / "vf_4000.pgm").string();
    ASSERT_EQ(run("-v 0 infer --checkpoint " + path("i.ptoc") + " --input " + in + " --out " + path("q.pgm")).code, 0);
    EXPECT_EQ(read_pgm(path("q.pgm")).rows, 20u);
}

TEST_F(Cli, InferErrorsExitOne) {
    ASSERT_EQ(run("-v 0 train --data " + data() + " --epochs 1 --batch 4 --widths 2,4,8 --checkpoint " + path("i.ptoc")).code, 0);
    EXPECT_EQ(run("-v 0 infer --checkpoint " + path("missing.ptoc") + " --vf 0.3 --out " + path("z.pgm")).code, 1);
    EXPECT_EQ(run("-v 0 infer --checkpoint " + path("i.ptoc") + " --out " + path("z.pgm")).code, 1);
    EXPECT_EQ(run("-v 0 infer --checkpoint " + path("i.ptoc") + " --vf 0.3 --input a.pgm --out " + path("z.pgm")).code, 1);
}

TEST_F(Cli, EvalTargetsGiveZeroComplianceError) {
    const auto r = run("-v 0 eval --data " + data() + " --use-targets --vf-list 0.3,0.5 --report " + path("e.csv") +
                       " --max-cerr 0 --max-verr 1");
    ASSERT_EQ(r.code, 0);
    std::istringstream csv(slurp(path("e.csv")));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "vf,v_err,c_err,c_opt,c_cnn");
    int rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        std::istringstream row(line);
        std::string vf, verr, cerr;
        std::getline(row, vf, ',');
        std::getline(row, verr, ',');
        std::getline(row, cerr, ',');
        EXPECT_EQ(cerr, "0");
    }
    EXPECT_EQ(rows, 2);
}

TEST_F(Cli, EvalThresholdsGateExitCode) {
    ASSERT_EQ(run("-v 0 train --data " + data() + " --epochs 1 --batch 4 --widths 2,4,8 --checkpoint " + path("ev.ptoc")).code, 0);
    const std::string base = "-v 0 eval --checkpoint " + path("ev.ptoc") + " --data " + data() + " --report " + path("ev.csv");
    EXPECT_EQ(run(base).code, 0);
    EXPECT_EQ(run(base + " --max-verr 0").code, 1);
    std::istringstream csv(slurp(path("ev.csv")));
    int lines = 0;
    for (std::string l; std::getline(csv, l);) ++lines;
    EXPECT_EQ(lines, 5);  // header + every dataset sample
    EXPECT_EQ(run("-v 0 eval --data " + data() + " --report " + path("ev2.csv")).code, 1);  // no checkpoint
}
