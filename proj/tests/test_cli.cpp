#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "padkit/io.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const fs::path& cwd) {
    const fs::path capture = cwd / "stdout.txt";
    const std::string cmd =
        "cd '" + cwd.string() + "' && '" PADKIT_CLI "' " + args + " > '" + capture.string() + "' 2>/dev/null";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(capture);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("schedule-dump writes one row per timestep") {
    TempDir d("padkit_cli_schedule");
    for (const char* kind : {"linear", "cosine"}) {
        CAPTURE(kind);
        REQUIRE(run(std::string("schedule-dump --kind ") + kind + " --T 100 --out s.csv", d.path).code == 0);
        const auto table = padkit::io::read_csv(d.path / "s.csv");
        CHECK(table.rows.size() == 100);
        CHECK(table.header.front() == "t");
    }
}

TEST_CASE("eval ccc of a table against itself is one") {
    TempDir d("padkit_cli_ccc");
    std::ofstream(d.path / "a.csv") << "label,mean_suv,voxel_count\n1,1.5,10\n2,3.25,12\n3,0.75,9\n4,6.0,20\n";
    const Run r = run("eval ccc --pred a.csv --ref a.csv", d.path);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("ccc 1\n") != std::string::npos);
}

TEST_CASE("phantoms are reproducible under a fixed seed") {
    TempDir d("padkit_cli_phantoms");
    REQUIRE(run("phantoms --n 3 --seed 11 --out a", d.path).code == 0);
    REQUIRE(run("phantoms --n 3 --seed 11 --out b", d.path).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(d.path / "a")) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), d.path / "a");
        CAPTURE(rel.string());
        CHECK(slurp(e.path()) == slurp(d.path / "b" / rel));
        ++files;
    }
    CHECK(files == 3 * 7);
    REQUIRE(run("phantoms --n 3 --seed 12 --out c", d.path).code == 0);
    CHECK(slurp(d.path / "a/case_0000/target.bin") != slurp(d.path / "c/case_0000/target.bin"));
}

TEST_CASE("exit codes distinguish usage, validation and runtime errors") {
    TempDir d("padkit_cli_exit");
    CHECK(run("phantoms --n 2 --out a --frobnicate", d.path).code == 1);
    CHECK(run("--help", d.path).code == 0);
    CHECK(run("schedule-dump --kind quadratic --T 10 --out s.csv", d.path).code == 1);
    CHECK(run("schedule-dump --kind linear --T 0 --out s.csv", d.path).code == 1);
    CHECK(run("normalize --in missing --out x", d.path).code == 1);
    std::ofstream(d.path / "bad.json") << "{\"train\": {\"base\": {\"iterations\": \"many\"}}}";
    CHECK(run("phantoms --n 1 --out p --config bad.json", d.path).code == 1);
    fs::create_directories(d.path / "ro");
    std::ofstream(d.path / "ro/blocker") << "x";
    CHECK(run("schedule-dump --kind linear --T 10 --out ro/blocker/s.csv", d.path).code == 2);
}

TEST_CASE("normalize round trips through the inverse") {
    TempDir d("padkit_cli_normalize");
    REQUIRE(run("phantoms --n 1 --seed 3 --out p", d.path).code == 0);
    REQUIRE(run("normalize --in p/case_0000/target --out n", d.path).code == 0);
    REQUIRE(run("normalize --in n --out back --inverse", d.path).code == 0);
    const auto a = padkit::io::read_scalar(d.path / "p/case_0000/target");
    const auto n = padkit::io::read_scalar(d.path / "n");
    const auto b = padkit::io::read_scalar(d.path / "back");
    CHECK(n.unit == padkit::UnitTag::normalized);
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-12);
}
