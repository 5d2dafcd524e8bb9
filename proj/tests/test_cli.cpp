#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "maskinv/cli.hpp"
#include "maskinv/core.hpp"
#include "maskinv/trainer.hpp"
#include "support.hpp"

using namespace maskinv;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    int n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

void write_pairs(const fs::path& p, int n) {
    std::ofstream out(p);
    for (int i = 0; i < n; ++i) out << "x/" << i << ".png y/" << i << ".png " << (i % 2) << '\n';
}

const char* kTeacherCfg =
    "batch_size = 8\ntotal_iterations = 30\nlr_milestones = [20]\nparadigm = NO_KD\n"
    "lambda_switch_iteration = none\np_mask = 0\nembedding_dim = 16\n";
const char* kStudentCfg =
    "batch_size = 8\ntotal_iterations = 30\nlr_milestones = [20]\nparadigm = HG\n"
    "lambda_switch_iteration = 21\np_mask = 0.5\nembedding_dim = 16\n";

}  // namespace

TEST_CASE("help lists every config key with its default") {
    const Result r = run_cli({"--help"});
    CHECK(r.code == 0);
    for (const auto& k : config_keys()) CHECK(r.out.find(k.key + " = " + k.default_value) != std::string::npos);
    for (const char* cmd : {"train-teacher", "train-student", "mask", "protocol", "evaluate", "report"}) {
        CHECK(r.out.find(cmd) != std::string::npos);
    }
    CHECK(r.out.find("MASKINV_SEED") != std::string::npos);

    const Result sub = run_cli({"train-student", "--help"});
    CHECK(sub.code == 0);
    CHECK(sub.out.find("--paradigm") != std::string::npos);
    CHECK(sub.out.find("--teacher") != std::string::npos);
}

TEST_CASE("bad invocations are usage errors") {
    for (const auto& args : std::vector<std::vector<std::string>>{
             {}, {"frobnicate"}, {"protocol", "--bogus"}, {"report", "--out", "x"}, {"mask", "--data"}}) {
        const Result r = run_cli(args);
        CHECK(r.code == 2);
        CHECK(r.err.rfind("error: usage: ", 0) == 0);
        CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    }
}

TEST_CASE("protocol command enforces fold divisibility") {
    testing::TempDir dir("cli");
    write_pairs(dir / "pairs6001.txt", 6001);
    const Result bad = run_cli({"protocol", "--pairs", (dir / "pairs6001.txt").string(), "--scenario", "both-masked",
                                "--folds", "10", "--out", (dir / "bad").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.rfind("error: protocol: ", 0) == 0);

    write_pairs(dir / "pairs6000.txt", 6000);
    const Result good = run_cli({"protocol", "--pairs", (dir / "pairs6000.txt").string(), "--scenario", "both-masked",
                                 "--folds", "10", "--out", (dir / "good").string()});
    CHECK(good.code == 0);
    CHECK(count_lines(dir / "good" / "protocol.csv") == 6001);
    CHECK(fs::exists(dir / "good" / "config.cfg"));
    CHECK(read_file(dir / "good" / "command.txt").find("--folds 10") != std::string::npos);

    const Result scen = run_cli({"protocol", "--pairs", (dir / "pairs6000.txt").string(), "--scenario", "half",
                                 "--out", (dir / "scen").string()});
    CHECK(scen.code == 1);
    CHECK(scen.err.rfind("error: config: ", 0) == 0);
}

TEST_CASE("environment overrides seed and workers, flags win") {
    testing::TempDir dir("cli");
    write_pairs(dir / "p.txt", 4);
    ::setenv("MASKINV_SEED", "41", 1);
    ::setenv("MASKINV_WORKERS", "2", 1);
    run_cli({"protocol", "--pairs", (dir / "p.txt").string(), "--out", (dir / "env").string()});
    const Config env = load_config(dir / "env" / "config.cfg");
    CHECK(env.training.seed == 41);
    CHECK(env.workers == 2);
    run_cli({"protocol", "--pairs", (dir / "p.txt").string(), "--seed", "5", "--out", (dir / "flag").string()});
    CHECK(load_config(dir / "flag" / "config.cfg").training.seed == 5);
    ::unsetenv("MASKINV_SEED");
    ::unsetenv("MASKINV_WORKERS");
}

TEST_CASE("train, mask, evaluate and report on a toy dataset") {
    testing::TempDir dir("cli");
    std::ofstream(dir / "teacher.cfg") << kTeacherCfg;
    std::ofstream(dir / "student.cfg") << kStudentCfg;

    const Result toy = run_cli({"make-toy", "--identities", "4", "--images", "4", "--pairs", "10", "--out",
                                (dir / "toy").string()});
    REQUIRE(toy.code == 0);
    const fs::path data = dir / "toy" / "images";
    CHECK(fs::exists(data / "id_0003" / "img_0003.png"));
    CHECK(fs::exists(data / "id_0003" / "img_0003.landmarks"));
    CHECK(count_lines(data / "pairs.txt") == 20);

    const Result teacher = run_cli({"train-teacher", "--config", (dir / "teacher.cfg").string(), "--data",
                                    data.string(), "--out", (dir / "teacher").string()});
    REQUIRE_MESSAGE(teacher.code == 0, teacher.err);
    CHECK(fs::exists(dir / "teacher" / "teacher.model"));
    CHECK(fs::exists(dir / "teacher" / "checkpoints" / "loss_log.csv"));

    const Result no_teacher = run_cli({"train-student", "--config", (dir / "student.cfg").string(), "--data",
                                       data.string(), "--out", (dir / "orphan").string()});
    CHECK(no_teacher.code == 1);
    CHECK(no_teacher.err.rfind("error: config: ", 0) == 0);

    const auto student_args = [&](const std::string& cfg, const std::string& out) {
        return std::vector<std::string>{"train-student", "--config", cfg, "--data", data.string(), "--teacher",
                                        (dir / "teacher" / "teacher.model").string(), "--paradigm", "HG", "--out",
                                        out};
    };
    const Result student = run_cli(student_args((dir / "student.cfg").string(), (dir / "student").string()));
    REQUIRE_MESSAGE(student.code == 0, student.err);
    const fs::path ckpts = dir / "student" / "checkpoints";
    CHECK(fs::exists(dir / "student" / "student.model"));
    CHECK(fs::exists(ckpts / "latest.ckpt"));
    CHECK(fs::exists(ckpts / "ckpt_000000021.ckpt"));
    CHECK(fs::exists(ckpts / "ckpt_000000030.ckpt"));
    CHECK(count_lines(ckpts / "loss_log.csv") == 31);
    CHECK(read_file(ckpts / "loss_log.csv").rfind(loss_log_header() + "\n", 0) == 0);
    const Config resolved = load_config(dir / "student" / "config.cfg");
    CHECK(resolved.training.paradigm == Paradigm::HG);
    CHECK(resolved.training.lambda_switch_iteration == 21);

    // The stored config reproduces the run.
    const Result again =
        run_cli(student_args((dir / "student" / "config.cfg").string(), (dir / "student2").string()));
    REQUIRE(again.code == 0);
    CHECK(read_file(dir / "student2" / "checkpoints" / "loss_log.csv") == read_file(ckpts / "loss_log.csv"));
    CHECK(load_model(dir / "student2" / "student.model").checksum() ==
          load_model(dir / "student" / "student.model").checksum());

    const Result eval = run_cli({"evaluate", "--protocol", (data / "pairs.txt").string(), "--scenario",
                                 "masked-vs-nonmasked", "--model", (dir / "student" / "student.model").string(),
                                 "--folds", "2", "--name", "toy-hg", "--out", (dir / "eval").string()});
    REQUIRE_MESSAGE(eval.code == 0, eval.err);
    for (const char* f : {"scores.csv", "report.csv", "report.txt", "det.csv", "config.cfg"}) {
        CHECK(fs::exists(dir / "eval" / f));
    }
    CHECK(count_lines(dir / "eval" / "scores.csv") == 21);
    CHECK(eval.out.find("toy-hg") != std::string::npos);
    CHECK(eval.out.find("FMR1000") != std::string::npos);

    const Result from_ckpt = run_cli({"evaluate", "--protocol", (data / "pairs.txt").string(), "--model",
                                      (ckpts / "latest.ckpt").string(), "--out", (dir / "eval_ckpt").string()});
    CHECK(from_ckpt.code == 0);

    const Result rep = run_cli({"report", "--scores", (dir / "eval" / "scores.csv").string(), "--folds", "2",
                                "--out", (dir / "rep").string()});
    CHECK(rep.code == 0);
    CHECK(fs::exists(dir / "rep" / "report.txt"));

    const Result mask = run_cli({"mask", "--data", data.string(), "--out", (dir / "masked").string()});
    REQUIRE(mask.code == 0);
    CHECK(count_lines(dir / "masked" / "manifest.csv") == 17);
    CHECK(read_file(dir / "masked" / "manifest.csv").rfind("source,output,color,seed\n", 0) == 0);
    CHECK(fs::exists(dir / "masked" / "images" / "id_0002" / "img_0001.png"));
    CHECK(fs::exists(dir / "masked" / "images" / "id_0002" / "img_0001.landmarks"));

    const Result missing = run_cli({"evaluate", "--protocol", (data / "pairs.txt").string(), "--model",
                                    (dir / "nope.model").string(), "--out", (dir / "e2").string()});
    CHECK(missing.code == 2);
}
